#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "spectrovit/errors.hpp"

namespace spectrovit {

struct WilcoxonResult {
  double statistic = 0.0;  // min(W+, W-)
  double w_plus = 0.0;
  double p_value = 1.0;    // two-sided
  std::size_t n_effective = 0;
  bool exact = false;
};

enum class WilcoxonMethod { Auto, Exact, Normal };

// Midranks (1-based) of |d|.
inline std::vector<double> midranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && values[idx[j + 1]] == values[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = r;
    i = j + 1;
  }
  return ranks;
}

// Two-sided paired signed-rank test on x - y. Zero differences are dropped.
// Exact null distribution (over all 2^n sign patterns, ties as midranks) for
// n <= 25 under Auto; normal approximation with continuity and tie
// correction otherwise.
inline WilcoxonResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y,
                                           WilcoxonMethod method = WilcoxonMethod::Auto) {
  if (x.size() != y.size()) fail(ErrorKind::Usage, "wilcoxon: samples must be paired (equal lengths)");
  std::vector<double> d;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x[i] - y[i];
    if (!std::isfinite(v)) fail(ErrorKind::Data, "wilcoxon: non-finite value");
    if (v != 0.0) d.push_back(v);
  }
  const std::size_t n = d.size();
  if (n < 5) fail(ErrorKind::Data, "insufficient pairs (" + std::to_string(n) + " non-zero differences, need 5)");
  std::vector<double> mag(n);
  for (std::size_t i = 0; i < n; ++i) mag[i] = std::abs(d[i]);
  const std::vector<double> ranks = midranks(mag);

  WilcoxonResult res;
  res.n_effective = n;
  for (std::size_t i = 0; i < n; ++i)
    if (d[i] > 0.0) res.w_plus += ranks[i];
  const double total = static_cast<double>(n) * static_cast<double>(n + 1) / 2.0;
  res.statistic = std::min(res.w_plus, total - res.w_plus);
  const double mean = total / 2.0;

  res.exact = method == WilcoxonMethod::Exact || (method == WilcoxonMethod::Auto && n <= 25);
  if (res.exact) {
    if (n > 60) fail(ErrorKind::Usage, "wilcoxon: exact distribution limited to 60 pairs");
    // Midranks are multiples of 1/2: count sign patterns by doubled rank sum.
    std::vector<std::size_t> r2(n);
    std::size_t sum2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      r2[i] = static_cast<std::size_t>(std::llround(2.0 * ranks[i]));
      sum2 += r2[i];
    }
    std::vector<double> count(sum2 + 1, 0.0);
    count[0] = 1.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t s = sum2 + 1; s-- > r2[i];) count[s] += count[s - r2[i]];
    const auto w2 = static_cast<std::size_t>(std::llround(2.0 * res.w_plus));
    double lower = 0.0, upper = 0.0;
    for (std::size_t s = 0; s <= sum2; ++s) {
      if (s <= w2) lower += count[s];
      if (s >= w2) upper += count[s];
    }
    const double all = std::ldexp(1.0, static_cast<int>(n));
    res.p_value = std::min(1.0, 2.0 * std::min(lower, upper) / all);
    return res;
  }

  double tie_term = 0.0;
  std::vector<double> sorted(ranks);
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && sorted[j + 1] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  const double nn = static_cast<double>(n);
  const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
  const double dev = std::abs(res.w_plus - mean);
  const double z = dev <= 0.5 ? 0.0 : (dev - 0.5) / std::sqrt(var);
  res.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  return res;
}

struct ErrorStats {
  double abs_error_mean = 0.0;
  double abs_error_std = 0.0;
  double mape_percent = 0.0;
  double cv_percent = 0.0;  // of the values
};

inline double mean_of(std::span<const double> v) {
  if (v.empty()) fail(ErrorKind::Usage, "mean of an empty sequence");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Sample standard deviation (n - 1); 0 for a single value.
inline double std_of(std::span<const double> v) {
  const double m = mean_of(v);
  if (v.size() < 2) return 0.0;
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

inline ErrorStats error_stats(std::span<const double> values, std::span<const double> reference) {
  if (values.size() != reference.size() || values.empty())
    fail(ErrorKind::Usage, "error_stats: values and reference must be non-empty and of equal length");
  std::vector<double> abs_err(values.size()), rel(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (reference[i] == 0.0) fail(ErrorKind::Data, "error_stats: zero reference entry at index " + std::to_string(i));
    abs_err[i] = std::abs(values[i] - reference[i]);
    rel[i] = abs_err[i] / std::abs(reference[i]);
  }
  ErrorStats s;
  s.abs_error_mean = mean_of(abs_err);
  s.abs_error_std = std_of(abs_err);
  s.mape_percent = 100.0 * mean_of(rel);
  const double m = mean_of(values);
  s.cv_percent = m != 0.0 ? 100.0 * std_of(values) / std::abs(m) : 0.0;
  return s;
}

}  // namespace spectrovit
