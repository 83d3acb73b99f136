#pragma once

// Spectral quality metrics, peak fitting and quantification ratios.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spectrovit/errors.hpp"
#include "spectrovit/signal.hpp"

namespace spectrovit {

struct MetricWindows {
  double mse_lo = 2.5, mse_hi = 4.0;
  double gaba_lo = 2.8, gaba_hi = 3.2;
  double glx_lo = 3.55, glx_hi = 3.9;
  double noise_lo = 10.0, noise_hi = 12.0;
  double gaba_weight = 0.6;
  double glx_weight = 0.4;
  double fwhm_guard_ppm = 0.5;  // how far outside the GABA window a half-height crossing may lie

  void validate(const PpmAxis& axis) const {
    if (std::abs(gaba_weight + glx_weight - 1.0) > 1e-12) fail(ErrorKind::Usage, "shape weights must sum to 1");
    axis.require_window(mse_lo, mse_hi);
    axis.require_window(gaba_lo, gaba_hi);
    axis.require_window(glx_lo, glx_hi);
    axis.require_window(noise_lo, noise_hi);
  }
};

namespace detail {

inline void require_same_axis(const Spectrum& a, const Spectrum& b) {
  if (!(a.axis == b.axis) || a.values.size() != b.values.size())
    fail(ErrorKind::Usage, "spectra are on different ppm axes");
}

inline std::vector<double> min_max(std::span<const double> v, const char* what) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) fail(ErrorKind::Numerical, std::string("degenerate window (") + what + ")");
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - *lo) / range;
  return out;
}

inline double pearson(std::span<const double> a, std::span<const double> b, const char* what) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) fail(ErrorKind::Numerical, std::string("zero variance in the ") + what + " window");
  return sab / std::sqrt(saa * sbb);
}

// Least-squares line over index positions; returns residuals.
inline std::vector<double> detrend(std::span<const double> v) {
  const double n = static_cast<double>(v.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x = static_cast<double>(i);
    sx += x;
    sy += v[i];
    sxx += x * x;
    sxy += x * v[i];
  }
  const double denom = n * sxx - sx * sx;
  const double slope = denom != 0.0 ? (n * sxy - sx * sy) / denom : 0.0;
  const double icpt = (sy - slope * sx) / n;
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) r[i] = v[i] - (icpt + slope * static_cast<double>(i));
  return r;
}

inline double stddev(std::span<const double> v) {
  const double n = static_cast<double>(v.size());
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / (n - 1.0));
}

}  // namespace detail

inline double mse_windowed(const Spectrum& pred, const Spectrum& ref, const MetricWindows& w = {}) {
  detail::require_same_axis(pred, ref);
  const IndexRange r = pred.axis.require_window(w.mse_lo, w.mse_hi);
  const auto a = detail::min_max(pred.view(r), "prediction");
  const auto b = detail::min_max(ref.view(r), "reference");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

// Baseline under the GABA window: line through the mean of the first and the
// last few window points.
inline std::vector<double> gaba_baseline_removed(const Spectrum& spec, const MetricWindows& w) {
  const IndexRange r = spec.axis.require_window(w.gaba_lo, w.gaba_hi);
  const auto v = spec.view(r);
  const std::size_t k = std::max<std::size_t>(1, std::min<std::size_t>(5, v.size() / 4));
  double left = 0.0, right = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    left += v[i];
    right += v[v.size() - 1 - i];
  }
  left /= static_cast<double>(k);
  right /= static_cast<double>(k);
  const double x0 = static_cast<double>(k - 1) / 2.0;
  const double x1 = static_cast<double>(v.size() - 1) - x0;
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double t = x1 > x0 ? (static_cast<double>(i) - x0) / (x1 - x0) : 0.0;
    out[i] = v[i] - (left + t * (right - left));
  }
  return out;
}

inline double noise_std(const Spectrum& spec, const MetricWindows& w = {}) {
  const IndexRange r = spec.axis.require_window(w.noise_lo, w.noise_hi);
  if (r.size() < 3) fail(ErrorKind::Usage, "noise window too small");
  return detail::stddev(detail::detrend(spec.view(r)));
}

inline double snr_gaba(const Spectrum& spec, const MetricWindows& w = {}) {
  const auto peak = gaba_baseline_removed(spec, w);
  const double height = *std::max_element(peak.begin(), peak.end());
  const double sigma = noise_std(spec, w);
  if (!(sigma > 0.0)) fail(ErrorKind::Numerical, "noiseless SNR undefined");
  return height / (2.0 * sigma);
}

inline double fwhm_gaba(const Spectrum& spec, const MetricWindows& w = {}) {
  const IndexRange r = spec.axis.require_window(w.gaba_lo, w.gaba_hi);
  const auto& v = spec.values;
  std::size_t peak = r.begin;
  for (std::size_t i = r.begin; i < r.end; ++i)
    if (v[i] > v[peak]) peak = i;
  const double half = v[peak] / 2.0;
  if (!(v[peak] > 0.0)) fail(ErrorKind::Numerical, "unresolved peak (no positive maximum in the GABA window)");
  const auto guard = static_cast<std::size_t>(std::ceil(w.fwhm_guard_ppm / spec.axis.step_ppm()));
  const std::size_t lo_limit = r.begin > guard ? r.begin - guard : 0;
  const std::size_t hi_limit = std::min(v.size() - 1, r.end - 1 + guard);

  double left = -1.0, right = -1.0;
  for (std::size_t i = peak; i > lo_limit; --i)
    if (v[i - 1] < half) {
      left = static_cast<double>(i - 1) + (half - v[i - 1]) / (v[i] - v[i - 1]);
      break;
    }
  for (std::size_t i = peak; i < hi_limit; ++i)
    if (v[i + 1] < half) {
      right = static_cast<double>(i) + (v[i] - half) / (v[i] - v[i + 1]);
      break;
    }
  if (left < 0.0 || right < 0.0) fail(ErrorKind::Numerical, "unresolved peak (half height not crossed)");
  return (right - left) * spec.axis.step_ppm();
}

inline double shape_score(const Spectrum& pred, const Spectrum& ref, const MetricWindows& w = {}) {
  detail::require_same_axis(pred, ref);
  auto window_r = [&](double lo, double hi, const char* name) {
    const IndexRange r = pred.axis.require_window(lo, hi);
    const auto a = detail::min_max(pred.view(r), name);
    const auto b = detail::min_max(ref.view(r), name);
    return detail::pearson(a, b, name);
  };
  return w.gaba_weight * window_r(w.gaba_lo, w.gaba_hi, "GABA") + w.glx_weight * window_r(w.glx_lo, w.glx_hi, "Glx");
}

// ---------------------------------------------------------------------------
// Levenberg-Marquardt

struct LmOptions {
  std::size_t max_iterations = 200;
  double relative_tolerance = 1e-10;
  double lambda0 = 1e-3;
  double lambda_up = 10.0;
  double lambda_down = 0.1;
  double lambda_max = 1e16;
};

struct LmResult {
  Eigen::VectorXd params;
  double cost = 0.0;  // 0.5 * sum r^2
  std::size_t iterations = 0;
  bool converged = false;
};

// `model(p, r, J)` fills residuals r (n) and Jacobian J (n x k) at p.
template <typename Model>
LmResult levenberg_marquardt(const Model& model, Eigen::VectorXd p, std::size_t n, const LmOptions& opt = {}) {
  const auto k = p.size();
  Eigen::VectorXd r(static_cast<Eigen::Index>(n)), r_new(static_cast<Eigen::Index>(n));
  Eigen::MatrixXd J(static_cast<Eigen::Index>(n), k), J_new(static_cast<Eigen::Index>(n), k);
  model(p, r, J);
  LmResult res;
  res.cost = 0.5 * r.squaredNorm();
  if (!std::isfinite(res.cost)) fail(ErrorKind::Numerical, "fit: non-finite initial cost");
  double lambda = opt.lambda0;
  while (res.iterations < opt.max_iterations) {
    if (res.cost == 0.0) {
      res.converged = true;
      break;
    }
    ++res.iterations;
    const Eigen::MatrixXd A = J.transpose() * J;
    const Eigen::VectorXd g = J.transpose() * r;
    const double dmax = A.diagonal().maxCoeff();
    Eigen::MatrixXd Ad = A;
    for (Eigen::Index i = 0; i < k; ++i) Ad(i, i) += lambda * std::max(A(i, i), 1e-12 * std::max(dmax, 1e-300));
    const Eigen::VectorXd step = Ad.ldlt().solve(-g);
    const Eigen::VectorXd trial = p + step;
    model(trial, r_new, J_new);
    const double cost = 0.5 * r_new.squaredNorm();
    if (std::isfinite(cost) && cost < res.cost) {
      const double rel = (res.cost - cost) / res.cost;
      p = trial;
      r.swap(r_new);
      J.swap(J_new);
      res.cost = cost;
      lambda = std::max(lambda * opt.lambda_down, 1e-20);
      if (rel < opt.relative_tolerance) {
        res.converged = true;
        break;
      }
    } else {
      lambda *= opt.lambda_up;
      if (lambda > opt.lambda_max) {  // no descent left at working precision
        res.converged = true;
        break;
      }
    }
  }
  res.params = p;
  return res;
}

// ---------------------------------------------------------------------------
// Peak fitting

enum class PeakShape { Gaussian, Lorentzian };

struct PeakLayout {
  std::string name;
  double lo_ppm = 0.0, hi_ppm = 0.0;
  PeakShape shape = PeakShape::Gaussian;
  std::vector<double> centers_ppm;  // initial centres; one peak each
  double width_ppm = 0.03;          // initial sigma (Gaussian) or half width (Lorentzian)

  static PeakLayout gaba() { return {"GABA+", 2.8, 3.2, PeakShape::Gaussian, {3.0}, 0.04}; }
  static PeakLayout glx() { return {"Glx", 3.55, 3.9, PeakShape::Gaussian, {3.71, 3.79}, 0.025}; }
  static PeakLayout creatine() { return {"Cr", 2.8, 3.2, PeakShape::Gaussian, {3.02}, 0.03}; }
  static PeakLayout water() { return {"water", 4.2, 5.2, PeakShape::Lorentzian, {4.7}, 0.02}; }
};

struct FittedPeak {
  double center_ppm = 0.0;
  double height = 0.0;
  double width_ppm = 0.0;  // sigma or half width
  double area = 0.0;       // height * sigma * sqrt(2 pi), or pi * height * half width
};

struct PeakFit {
  std::string name;
  PeakShape shape = PeakShape::Gaussian;
  std::vector<FittedPeak> peaks;
  double baseline_offset = 0.0;
  double baseline_slope = 0.0;  // per ppm, about the window centre
  double residual_std = 0.0;
  double model_amplitude = 0.0;  // max of the peak model (baseline excluded) over the window
  double cost = 0.0;
  std::size_t iterations = 0;
  bool degenerate = false;

  double total_area() const {
    double a = 0.0;
    for (const auto& p : peaks) a += p.area;
    return a;
  }
};

namespace detail {

// Parameters per peak: centre, height, log width; then baseline offset, slope.
inline double peak_value(PeakShape shape, double x, double c, double h, double u, double* dc, double* dh, double* du) {
  const double w = std::exp(u);
  const double z = (x - c) / w;
  if (shape == PeakShape::Gaussian) {
    const double e = std::exp(-0.5 * z * z);
    if (dh) {
      *dh = e;
      *dc = h * e * z / w;
      *du = h * e * z * z;
    }
    return h * e;
  }
  const double q = 1.0 / (1.0 + z * z);
  if (dh) {
    *dh = q;
    *dc = h * 2.0 * z * q * q / w;
    *du = h * 2.0 * z * z * q * q;
  }
  return h * q;
}

}  // namespace detail

inline PeakFit fit_peaks(const Spectrum& spec, const PeakLayout& layout, const LmOptions& opt = {}) {
  if (layout.centers_ppm.empty()) fail(ErrorKind::Usage, "peak layout '" + layout.name + "' has no peaks");
  const IndexRange r = spec.axis.window(layout.lo_ppm, layout.hi_ppm);
  const std::size_t np = layout.centers_ppm.size();
  const std::size_t k = 3 * np + 2;
  if (r.size() < k + 1) fail(ErrorKind::Usage, "window for '" + layout.name + "' is too small to fit");
  std::vector<double> x(r.size()), y(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) {
    x[i] = spec.axis.ppm(r.begin + i);
    y[i] = spec.values[r.begin + i];
  }
  const double xmid = 0.5 * (layout.lo_ppm + layout.hi_ppm);

  // Initial guess: baseline through the window edges, heights from the data.
  const double base0 = 0.5 * (y.front() + y.back());
  Eigen::VectorXd p(static_cast<Eigen::Index>(k));
  for (std::size_t j = 0; j < np; ++j) {
    double c = layout.centers_ppm[j];
    if (np == 1) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < y.size(); ++i)
        if (y[i] > y[best]) best = i;
      c = x[best];
    }
    std::size_t nearest = 0;
    for (std::size_t i = 1; i < x.size(); ++i)
      if (std::abs(x[i] - c) < std::abs(x[nearest] - c)) nearest = i;
    p(static_cast<Eigen::Index>(3 * j)) = c;
    p(static_cast<Eigen::Index>(3 * j + 1)) = y[nearest] - base0;
    p(static_cast<Eigen::Index>(3 * j + 2)) = std::log(layout.width_ppm);
  }
  p(static_cast<Eigen::Index>(3 * np)) = base0;
  p(static_cast<Eigen::Index>(3 * np + 1)) = 0.0;

  auto model = [&](const Eigen::VectorXd& q, Eigen::VectorXd& res, Eigen::MatrixXd& J) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      double f = q(static_cast<Eigen::Index>(3 * np)) + q(static_cast<Eigen::Index>(3 * np + 1)) * (x[i] - xmid);
      for (std::size_t j = 0; j < np; ++j) {
        const auto b = static_cast<Eigen::Index>(3 * j);
        double dc, dh, du;
        f += detail::peak_value(layout.shape, x[i], q(b), q(b + 1), q(b + 2), &dc, &dh, &du);
        J(ii, b) = dc;
        J(ii, b + 1) = dh;
        J(ii, b + 2) = du;
      }
      J(ii, static_cast<Eigen::Index>(3 * np)) = 1.0;
      J(ii, static_cast<Eigen::Index>(3 * np + 1)) = x[i] - xmid;
      res(ii) = f - y[i];
    }
  };

  LmResult lm;
  try {
    lm = levenberg_marquardt(model, p, x.size(), opt);
  } catch (const Error& e) {
    fail(e.kind(), "fit '" + layout.name + "': " + e.what());
  }
  if (!lm.converged)
    fail(ErrorKind::Numerical, "fit '" + layout.name + "' did not converge (cost " + std::to_string(lm.cost) +
                                   " after " + std::to_string(lm.iterations) + " iterations)");

  PeakFit fit;
  fit.name = layout.name;
  fit.shape = layout.shape;
  fit.cost = lm.cost;
  fit.iterations = lm.iterations;
  fit.baseline_offset = lm.params(static_cast<Eigen::Index>(3 * np));
  fit.baseline_slope = lm.params(static_cast<Eigen::Index>(3 * np + 1));
  for (std::size_t j = 0; j < np; ++j) {
    FittedPeak pk;
    pk.center_ppm = lm.params(static_cast<Eigen::Index>(3 * j));
    pk.height = lm.params(static_cast<Eigen::Index>(3 * j + 1));
    pk.width_ppm = std::exp(lm.params(static_cast<Eigen::Index>(3 * j + 2)));
    pk.area = layout.shape == PeakShape::Gaussian ? pk.height * pk.width_ppm * std::sqrt(2.0 * std::numbers::pi)
                                                  : std::numbers::pi * pk.height * pk.width_ppm;
    fit.peaks.push_back(pk);
  }
  std::vector<double> resid(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double peak_sum = 0.0;
    for (const auto& pk : fit.peaks)
      peak_sum += detail::peak_value(layout.shape, x[i], pk.center_ppm, pk.height, std::log(pk.width_ppm), nullptr,
                                     nullptr, nullptr);
    fit.model_amplitude = std::max(fit.model_amplitude, peak_sum);
    resid[i] = fit.baseline_offset + fit.baseline_slope * (x[i] - xmid) + peak_sum - y[i];
  }
  fit.residual_std = detail::stddev(resid);
  const double scale = std::max(std::abs(*std::max_element(y.begin(), y.end())), std::abs(*std::min_element(y.begin(), y.end())));
  fit.degenerate = !(fit.model_amplitude > 1e-12 * std::max(scale, 1e-300)) || scale == 0.0;
  return fit;
}

inline double fit_error_percent(const PeakFit& fit) {
  if (fit.degenerate || !(fit.model_amplitude > 0.0))
    fail(ErrorKind::Numerical, "fit '" + fit.name + "' has zero model amplitude");
  return 100.0 * fit.residual_std / fit.model_amplitude;
}

// Metabolite and reference fit errors combined in quadrature.
inline double fit_error(const PeakFit& fit, const PeakFit& ref_fit) {
  return std::hypot(fit_error_percent(fit), fit_error_percent(ref_fit));
}

struct QuantResult {
  double gaba_water = 0.0;
  double gaba_cr = 0.0;
  double glx_water = 0.0;
  double fit_error_gaba_water = 0.0;
  double fit_error_gaba_cr = 0.0;
  double fit_error_glx_water = 0.0;
  PeakFit gaba, glx, cr, water;
};

// Absorption-mode spectrum of the water reference on its own grid.
inline Spectrum water_spectrum(const ComplexFid& water_fid, double center_ppm) {
  water_fid.validate();
  const PpmAxis axis(water_fid.size(), center_ppm, water_fid.sweep_width_hz(), water_fid.transmitter_hz);
  return fid_to_spectrum(water_fid, axis);
}

inline QuantResult quantify(const Spectrum& diff_spec, const Spectrum& off_spec, const ComplexFid& water_fid,
                            double center_ppm = 4.7) {
  QuantResult q;
  q.gaba = fit_peaks(diff_spec, PeakLayout::gaba());
  q.glx = fit_peaks(diff_spec, PeakLayout::glx());
  q.cr = fit_peaks(off_spec, PeakLayout::creatine());
  q.water = fit_peaks(water_spectrum(water_fid, center_ppm), PeakLayout::water());
  const double w = q.water.total_area(), cr = q.cr.total_area();
  if (!(w > 0.0)) fail(ErrorKind::Numerical, "water fit has non-positive area");
  if (!(cr > 0.0)) fail(ErrorKind::Numerical, "Cr fit has non-positive area");
  q.gaba_water = q.gaba.total_area() / w;
  q.gaba_cr = q.gaba.total_area() / cr;
  q.glx_water = q.glx.total_area() / w;
  q.fit_error_gaba_water = fit_error(q.gaba, q.water);
  q.fit_error_gaba_cr = fit_error(q.gaba, q.cr);
  q.fit_error_glx_water = fit_error(q.glx, q.water);
  return q;
}

}  // namespace spectrovit
