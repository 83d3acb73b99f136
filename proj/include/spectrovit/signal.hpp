#pragma once

// Time- and frequency-domain representations shared by every stage:
// complex FIDs, the descending ppm axis, real spectra and the primitive
// operations between them. All arithmetic is double precision.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "spectrovit/errors.hpp"
#include "spectrovit/fft.hpp"

namespace spectrovit {

enum class EditLabel : std::uint8_t { On = 0, Off = 1 };

inline const char* to_string(EditLabel label) { return label == EditLabel::On ? "ON" : "OFF"; }

// One transient.
struct ComplexFid {
  std::vector<cdouble> samples;
  double dwell_time = 5e-4;       // s
  double transmitter_hz = 127.7e6;
  EditLabel edit_label = EditLabel::Off;

  std::size_t size() const { return samples.size(); }
  double sweep_width_hz() const { return 1.0 / dwell_time; }
  double time(std::size_t i) const { return static_cast<double>(i) * dwell_time; }

  void validate() const {
    if (samples.size() < 2) fail(ErrorKind::Data, "FID needs at least 2 samples");
    if (!(dwell_time > 0.0)) fail(ErrorKind::Data, "dwell_time must be > 0");
    if (!(transmitter_hz > 0.0)) fail(ErrorKind::Data, "transmitter_hz must be > 0");
  }
};

// Half-open index range [begin, end).
struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool empty() const { return end <= begin; }
  bool contains(std::size_t i) const { return i >= begin && i < end; }
};

// Chemical-shift axis, index 0 at the highest ppm:
//   ppm[i] = center + (sw/2 - i*sw/(n-1)) / (transmitter_hz * 1e-6)
class PpmAxis {
 public:
  PpmAxis() = default;
  PpmAxis(std::size_t n_points, double center_ppm, double sweep_width_hz, double transmitter_hz)
      : n_points_(n_points), center_ppm_(center_ppm), sweep_width_hz_(sweep_width_hz), transmitter_hz_(transmitter_hz) {
    if (n_points < 2) fail(ErrorKind::Usage, "ppm axis needs at least 2 points");
    if (!(sweep_width_hz > 0.0) || !(transmitter_hz > 0.0))
      fail(ErrorKind::Usage, "ppm axis needs positive sweep width and transmitter frequency");
  }

  // Defaults for a 3T proton acquisition.
  static PpmAxis standard(std::size_t n_points = 2048) { return PpmAxis(n_points, 4.7, 2000.0, 127.7e6); }

  std::size_t size() const { return n_points_; }
  double center_ppm() const { return center_ppm_; }
  double sweep_width_hz() const { return sweep_width_hz_; }
  double transmitter_hz() const { return transmitter_hz_; }
  double hz_per_ppm() const { return transmitter_hz_ * 1e-6; }
  double step_hz() const { return sweep_width_hz_ / static_cast<double>(n_points_ - 1); }
  double step_ppm() const { return step_hz() / hz_per_ppm(); }

  double ppm(std::size_t i) const {
    return center_ppm_ + (sweep_width_hz_ / 2.0 - static_cast<double>(i) * step_hz()) / hz_per_ppm();
  }
  double max_ppm() const { return ppm(0); }
  double min_ppm() const { return ppm(n_points_ - 1); }

  // Offset from the transmitter/center frequency in Hz.
  double ppm_to_hz_offset(double p) const { return (p - center_ppm_) * hz_per_ppm(); }

  // Fractional index of a ppm value (may fall outside [0, n-1]).
  double index_of(double p) const { return (sweep_width_hz_ / 2.0 - ppm_to_hz_offset(p)) / step_hz(); }

  std::size_t nearest_index(double p) const {
    const double idx = std::clamp(std::round(index_of(p)), 0.0, static_cast<double>(n_points_ - 1));
    return static_cast<std::size_t>(idx);
  }

  // Indices whose ppm lies in [lo, hi].
  IndexRange window(double lo_ppm, double hi_ppm) const {
    if (lo_ppm > hi_ppm) std::swap(lo_ppm, hi_ppm);
    const double first = std::ceil(index_of(hi_ppm) - 1e-9);
    const double last = std::floor(index_of(lo_ppm) + 1e-9);
    const double n = static_cast<double>(n_points_);
    const double b = std::clamp(first, 0.0, n);
    const double e = std::clamp(last + 1.0, 0.0, n);
    if (e <= b) return {};
    return {static_cast<std::size_t>(b), static_cast<std::size_t>(e)};
  }

  // Window that must exist; empty windows are an error naming the range.
  IndexRange require_window(double lo_ppm, double hi_ppm) const {
    IndexRange r = window(lo_ppm, hi_ppm);
    if (r.empty())
      fail(ErrorKind::Usage,
           "ppm window " + std::to_string(lo_ppm) + "-" + std::to_string(hi_ppm) + " is empty on this axis");
    return r;
  }

  bool covers(double lo_ppm, double hi_ppm) const {
    return std::min(lo_ppm, hi_ppm) >= min_ppm() && std::max(lo_ppm, hi_ppm) <= max_ppm();
  }

  bool operator==(const PpmAxis&) const = default;

 private:
  std::size_t n_points_ = 2;
  double center_ppm_ = 4.7;
  double sweep_width_hz_ = 2000.0;
  double transmitter_hz_ = 127.7e6;
};

struct Spectrum {
  std::vector<double> values;
  PpmAxis axis;

  std::size_t size() const { return values.size(); }
  std::span<const double> view(IndexRange r) const { return std::span<const double>(values).subspan(r.begin, r.size()); }
};

// Reorders natural DFT output (bin 0 = DC) into descending frequency.
inline std::vector<cdouble> descending_order(std::span<const cdouble> natural) {
  const std::size_t n = natural.size();
  const std::size_t top = (n + 1) / 2 - 1;
  std::vector<cdouble> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = natural[(top + n - k) % n];
  return out;
}

// DFT of the FID zero-padded or truncated to fft_length, reordered so index 0
// is the most positive frequency: out[k] = X[(ceil(N/2) - 1 - k) mod N].
inline std::vector<cdouble> dft(std::span<const cdouble> samples, std::size_t fft_length) {
  if (samples.empty()) fail(ErrorKind::Data, "empty signal");
  if (fft_length == 0) fail(ErrorKind::Usage, "fft_length must be >= 1");
  std::vector<cdouble> buf(fft_length, cdouble{});
  std::copy_n(samples.begin(), std::min(samples.size(), fft_length), buf.begin());
  FftPlan(fft_length).forward(buf, buf);
  return descending_order(buf);
}

inline std::vector<cdouble> dft(const ComplexFid& fid, std::size_t fft_length) { return dft(fid.samples, fft_length); }

// Signed frequency (in bins) of descending-order index k for length n.
inline double descending_bin_frequency(std::size_t k, std::size_t n) {
  return static_cast<double>((n + 1) / 2 - 1) - static_cast<double>(k);
}

inline void check_axis_matches(const ComplexFid& fid, const PpmAxis& axis) {
  const double sw = fid.sweep_width_hz();
  if (std::abs(sw - axis.sweep_width_hz()) > 1e-9 * sw)
    fail(ErrorKind::Data, "axis sweep width " + std::to_string(axis.sweep_width_hz()) +
                              " Hz does not match FID sample rate " + std::to_string(sw) + " Hz");
  if (std::abs(fid.transmitter_hz - axis.transmitter_hz()) > 1e-9 * fid.transmitter_hz)
    fail(ErrorKind::Data, "axis transmitter frequency does not match FID");
}

// Real part of the descending-order DFT, one value per axis point.
inline Spectrum fid_to_spectrum(const ComplexFid& fid, const PpmAxis& axis) {
  check_axis_matches(fid, axis);
  const auto bins = dft(fid, axis.size());
  Spectrum out{std::vector<double>(bins.size()), axis};
  for (std::size_t i = 0; i < bins.size(); ++i) out.values[i] = bins[i].real();
  return out;
}

// Exponential line broadening exp(-pi * lb * t).
inline ComplexFid apodize(ComplexFid fid, double lb_hz) {
  if (lb_hz == 0.0) return fid;
  for (std::size_t i = 0; i < fid.samples.size(); ++i)
    fid.samples[i] *= std::exp(-std::numbers::pi * lb_hz * fid.time(i));
  return fid;
}

// Output j takes input index round_half_even(j*(N_in-1)/(N_out-1)).
inline Spectrum downsample_nearest(const Spectrum& spec, std::size_t target_points) {
  if (target_points < 2) fail(ErrorKind::Usage, "target_points must be >= 2");
  const std::size_t n_in = spec.values.size();
  if (n_in < 2) fail(ErrorKind::Data, "spectrum needs at least 2 points");
  Spectrum out{std::vector<double>(target_points),
               PpmAxis(target_points, spec.axis.center_ppm(), spec.axis.sweep_width_hz(), spec.axis.transmitter_hz())};
  const double ratio = static_cast<double>(n_in - 1) / static_cast<double>(target_points - 1);
  for (std::size_t j = 0; j < target_points; ++j) {
    const auto src = static_cast<std::size_t>(std::nearbyint(static_cast<double>(j) * ratio));
    out.values[j] = spec.values[std::min(src, n_in - 1)];
  }
  return out;
}

inline std::vector<double> normalize_max_abs(std::span<const double> values) {
  double peak = 0.0;
  for (double v : values) peak = std::max(peak, std::abs(v));
  if (!(peak > 0.0) || !std::isfinite(peak)) fail(ErrorKind::Numerical, "degenerate signal");
  std::vector<double> out(values.begin(), values.end());
  for (double& v : out) v /= peak;
  return out;
}

inline Spectrum normalize_max_abs(Spectrum spec) {
  spec.values = normalize_max_abs(std::span<const double>(spec.values));
  return spec;
}

namespace detail {
inline void check_compatible(const ComplexFid& a, const ComplexFid& b) {
  if (a.samples.size() != b.samples.size())
    fail(ErrorKind::Data, "FID length mismatch: " + std::to_string(a.samples.size()) + " vs " +
                              std::to_string(b.samples.size()));
  if (a.dwell_time != b.dwell_time || a.transmitter_hz != b.transmitter_hz)
    fail(ErrorKind::Data, "FID acquisition metadata mismatch");
}
}  // namespace detail

// Pointwise complex mean of a set of same-label transients.
inline ComplexFid mean_fid(std::span<const ComplexFid> transients) {
  if (transients.empty()) fail(ErrorKind::Data, "mean_fid needs at least one transient");
  const ComplexFid& first = transients.front();
  ComplexFid out{std::vector<cdouble>(first.samples.size(), cdouble{}), first.dwell_time, first.transmitter_hz,
                 first.edit_label};
  for (const ComplexFid& t : transients) {
    detail::check_compatible(first, t);
    if (t.edit_label != first.edit_label) fail(ErrorKind::Data, "mixed edit labels in mean_fid");
    for (std::size_t i = 0; i < t.samples.size(); ++i) out.samples[i] += t.samples[i];
  }
  const double inv = 1.0 / static_cast<double>(transients.size());
  for (auto& s : out.samples) s *= inv;
  return out;
}

// OFF minus ON.
inline ComplexFid difference_fid(const ComplexFid& mean_on, const ComplexFid& mean_off) {
  detail::check_compatible(mean_on, mean_off);
  ComplexFid out = mean_off;
  for (std::size_t i = 0; i < out.samples.size(); ++i) out.samples[i] -= mean_on.samples[i];
  return out;
}

}  // namespace spectrovit
