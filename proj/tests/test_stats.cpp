#include <catch2/catch_amalgamated.hpp>

#include <vector>

#include "oracles.hpp"
#include "spectrovit/rng.hpp"
#include "spectrovit/stats.hpp"

using namespace spectrovit;

namespace {

WilcoxonResult wsr(const std::vector<double>& x, const std::vector<double>& y,
                   WilcoxonMethod m = WilcoxonMethod::Auto) {
  return wilcoxon_signed_rank(std::span<const double>(x), std::span<const double>(y), m);
}

}  // namespace

TEST_CASE("midranks", "[stats]") {
  const std::vector<double> v = {3.0, 1.0, 4.0, 1.0, 5.0};
  CHECK(midranks(v) == std::vector<double>{3.0, 1.5, 4.0, 1.5, 5.0});
}

TEST_CASE("five positive differences: W = 0, p = 1/16", "[stats][wilcoxon]") {
  const auto r = wsr({1, 2, 3, 4, 5}, {0, 0, 0, 0, 0});
  CHECK(r.statistic == 0.0);
  CHECK(r.w_plus == 15.0);
  CHECK(r.p_value == 0.0625);
  CHECK(r.exact);
}

TEST_CASE("exact p-values match exhaustive enumeration at n = 8", "[stats][wilcoxon]") {
  const std::vector<std::vector<double>> xs = {
      {1.5, -0.2, 3.1, 0.7, -1.1, 2.2, 0.4, 1.9},
      {1.0, -1.0, 2.0, -2.0, 3.0, 3.0, -0.5, 4.0},  // ties in |d|
      {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8},
      {0.5, -0.5, 0.5, -0.5, 0.5, 1.5, -2.5, 0.5},
  };
  const std::vector<double> zero(8, 0.0);
  for (const auto& x : xs) {
    const auto r = wsr(x, zero);
    CHECK(r.n_effective == 8);
    CHECK(r.p_value == oracle::wilcoxon_enumerate(x, zero));
  }
  Xoshiro256ss rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> x(8), y(8);
    for (std::size_t i = 0; i < 8; ++i) {
      x[i] = std::round(rng.normal(0.3, 1.0) * 4.0) / 4.0;  // coarse grid to force ties
      y[i] = std::round(rng.normal(0.0, 1.0) * 4.0) / 4.0;
    }
    std::size_t nonzero = 0;
    for (std::size_t i = 0; i < 8; ++i) nonzero += x[i] != y[i];
    if (nonzero < 5) continue;
    CHECK(wsr(x, y).p_value == oracle::wilcoxon_enumerate(x, y));
  }
}

TEST_CASE("exact and normal paths agree at n = 20", "[stats][wilcoxon][property]") {
  Xoshiro256ss rng(6);
  for (int trial = 0; trial < 25; ++trial) {
    std::vector<double> x(20), y(20);
    for (std::size_t i = 0; i < 20; ++i) {
      x[i] = rng.normal(0.2 * (trial % 3), 1.0);
      y[i] = rng.normal();
    }
    const auto e = wsr(x, y, WilcoxonMethod::Exact);
    const auto a = wsr(x, y, WilcoxonMethod::Normal);
    CHECK_FALSE(a.exact);
    CHECK(std::abs(e.p_value - a.p_value) < 0.02);
    CHECK(e.p_value >= 0.0);
    CHECK(e.p_value <= 1.0);
  }
  // Auto switches to the approximation above 25 pairs.
  std::vector<double> x(30), y(30, 0.0);
  for (std::size_t i = 0; i < 30; ++i) x[i] = rng.normal();
  CHECK_FALSE(wsr(x, y).exact);
}

TEST_CASE("large shift is significant, identical samples are rejected", "[stats][wilcoxon]") {
  Xoshiro256ss rng(7);
  std::vector<double> x(20), y(20);
  for (std::size_t i = 0; i < 20; ++i) {
    y[i] = rng.normal();
    x[i] = y[i] + 5.0 + 0.1 * rng.normal();
  }
  CHECK(wsr(x, y).p_value < 0.001);
  CHECK_THROWS_WITH(wsr(y, y), Catch::Matchers::ContainsSubstring("insufficient pairs"));
  CHECK_THROWS_AS(wsr({1, 2, 3}, {0, 0}), Error);
}

TEST_CASE("error statistics", "[stats]") {
  const std::vector<double> ref = {1.0, 2.0, 4.0};
  auto es = error_stats(ref, ref);
  CHECK(es.abs_error_mean == 0.0);
  CHECK(es.abs_error_std == 0.0);
  CHECK(es.mape_percent == 0.0);
  // cv of {1, 2, 4}: mean 7/3, sample sd sqrt(7/3).
  CHECK(es.cv_percent == Catch::Approx(100.0 * std::sqrt(7.0 / 3.0) / (7.0 / 3.0)).epsilon(1e-12));

  std::vector<double> scaled(ref);
  for (auto& v : scaled) v *= 1.1;
  CHECK(error_stats(scaled, ref).mape_percent == Catch::Approx(10.0).epsilon(1e-12));

  // Hand case: errors |1.5-1|, |1-2|, |5-4| = 0.5, 1, 1.
  es = error_stats(std::vector<double>{1.5, 1.0, 5.0}, ref);
  CHECK(es.abs_error_mean == Catch::Approx(2.5 / 3.0).epsilon(1e-14));
  CHECK(es.abs_error_std == Catch::Approx(std::sqrt((1.0 / 9.0 + 1.0 / 36.0 + 1.0 / 36.0) / 2.0)).epsilon(1e-12));
  CHECK(es.mape_percent == Catch::Approx(100.0 * (0.5 + 0.5 + 0.25) / 3.0).epsilon(1e-14));

  CHECK_THROWS_AS(error_stats(std::vector<double>{1.0}, std::vector<double>{0.0}), Error);
  CHECK_THROWS_AS(error_stats(std::vector<double>{1.0, 2.0}, std::vector<double>{1.0}), Error);
}
