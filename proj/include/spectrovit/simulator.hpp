#pragma once

// Synthetic MEGA-PRESS scans: Lorentzian metabolite lines in paired Edit-ON /
// Edit-OFF transients, the frequency/phase/amplitude corruption model used for
// augmentation, and the sliding-window expansion of a scan into samples.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "spectrovit/errors.hpp"
#include "spectrovit/rng.hpp"
#include "spectrovit/signal.hpp"

namespace spectrovit {

inline constexpr std::size_t kTargetPoints = 2048;
inline constexpr std::size_t kWindowSize = 40;

struct Peak {
  std::string name;
  double center_ppm = 0.0;
  double amplitude = 0.0;  // arbitrary units
  double t2 = 0.1;         // s
  double on_scale = 1.0;
  double off_scale = 1.0;
};

struct MetaboliteBasis {
  std::vector<Peak> peaks;
  double water_amplitude = 2000.0;  // unsuppressed water reference
  double water_t2 = 0.08;
  double water_ppm = 4.7;

  // Layout of a GABA-edited difference spectrum: GABA+ at 3.0 ppm and the Glx
  // doublet near 3.75 ppm edit positive, Cr cancels, NAA edits negative and a
  // small residual water line cancels.
  static MetaboliteBasis standard() {
    MetaboliteBasis b;
    b.peaks = {
        {"GABA", 3.00, 1.0, 0.040, -1.0, 1.0},
        {"Glx_a", 3.71, 0.55, 0.050, -1.0, 1.0},
        {"Glx_b", 3.79, 0.55, 0.050, -1.0, 1.0},
        {"Cr", 3.02, 4.0, 0.150, 1.0, 1.0},
        {"NAA", 2.02, 5.0, 0.250, 1.15, 1.0},
        {"water", 4.70, 2.0, 0.100, 1.0, 1.0},
    };
    return b;
  }

  const Peak* find(const std::string& name) const {
    for (const auto& p : peaks)
      if (p.name == name) return &p;
    return nullptr;
  }

  void validate(const PpmAxis& axis) const {
    if (peaks.empty()) fail(ErrorKind::Usage, "metabolite basis has no peaks");
    for (const auto& p : peaks) {
      if (!(p.t2 > 0.0)) fail(ErrorKind::Usage, "peak " + p.name + ": t2 must be > 0");
      if (p.center_ppm < axis.min_ppm() || p.center_ppm > axis.max_ppm())
        fail(ErrorKind::Usage, "peak " + p.name + " lies outside the ppm axis");
    }
    if (!(water_t2 > 0.0)) fail(ErrorKind::Usage, "water t2 must be > 0");
  }
};

// Corruption levels. amp_* are percent gain deviations, freq_* Hz, phase_* degrees.
struct CorruptionParams {
  double amp_base = 0.0;
  double amp_scan_var = 0.0;
  double freq_base_hz = 0.0;
  double freq_scan_var_hz = 0.0;
  double phase_base_deg = 0.0;
  double phase_scan_var_deg = 0.0;
  std::uint64_t rng_seed = 0;

  // Closed upper bounds of each level, in field order.
  static constexpr std::array<double, 6> kUpper = {5.0, 3.0, 4.0, 3.0, 3.0, 3.0};

  std::array<double, 6> levels() const {
    return {amp_base, amp_scan_var, freq_base_hz, freq_scan_var_hz, phase_base_deg, phase_scan_var_deg};
  }

  bool is_zero() const {
    for (double v : levels())
      if (v != 0.0) return false;
    return true;
  }

  void validate() const {
    static constexpr std::array<const char*, 6> names = {"amp_base",         "amp_scan_var",   "freq_base_hz",
                                                         "freq_scan_var_hz", "phase_base_deg", "phase_scan_var_deg"};
    const auto v = levels();
    for (std::size_t i = 0; i < v.size(); ++i)
      if (!(v[i] >= 0.0 && v[i] <= kUpper[i]))
        fail(ErrorKind::Usage, std::string("corruption ") + names[i] + " outside [0, " +
                                   std::to_string(kUpper[i]) + "]: " + std::to_string(v[i]));
  }

  // Levels drawn uniformly in [0, upper] for every field.
  static CorruptionParams sample_uniform(Xoshiro256ss& rng, const std::array<double, 6>& upper = kUpper) {
    CorruptionParams p;
    p.amp_base = rng.uniform(0.0, upper[0]);
    p.amp_scan_var = rng.uniform(0.0, upper[1]);
    p.freq_base_hz = rng.uniform(0.0, upper[2]);
    p.freq_scan_var_hz = rng.uniform(0.0, upper[3]);
    p.phase_base_deg = rng.uniform(0.0, upper[4]);
    p.phase_scan_var_deg = rng.uniform(0.0, upper[5]);
    p.rng_seed = rng.next();
    return p;
  }

  bool operator==(const CorruptionParams&) const = default;
};

struct ScanRecord {
  std::uint32_t scan_id = 0;
  std::vector<ComplexFid> on_transients;
  std::vector<ComplexFid> off_transients;
  ComplexFid water_reference;
  Spectrum target;  // clean OFF-ON difference, max-abs normalized, 2048 points
  CorruptionParams corruption;

  std::size_t transients_per_subsignal() const { return on_transients.size(); }
};

// Per-transient multiplier gain * exp(i*phi) * exp(i*2*pi*df*t), applied in place.
struct TransientDistortion {
  double gain = 1.0;
  double phase_rad = 0.0;
  double freq_hz = 0.0;

  bool is_identity() const { return gain == 1.0 && phase_rad == 0.0 && freq_hz == 0.0; }

  cdouble factor(double t) const {
    return std::polar(gain, phase_rad + 2.0 * std::numbers::pi * freq_hz * t);
  }
};

// Draws the scan offsets, then one distortion per transient (ON block first,
// then OFF block). Deterministic in params.rng_seed.
inline std::vector<TransientDistortion> draw_distortions(const CorruptionParams& params, std::size_t n_transients) {
  Xoshiro256ss rng(params.rng_seed);
  const double offset_amp = rng.normal(0.0, params.amp_scan_var);
  const double offset_freq = rng.normal(0.0, params.freq_scan_var_hz);
  const double offset_phase = rng.normal(0.0, params.phase_scan_var_deg);
  std::vector<TransientDistortion> out(n_transients);
  for (auto& d : out) {
    d.freq_hz = rng.normal(offset_freq, params.freq_base_hz);
    d.phase_rad = rng.normal(offset_phase, params.phase_base_deg) * std::numbers::pi / 180.0;
    d.gain = 1.0 + rng.normal(offset_amp, params.amp_base) / 100.0;
  }
  return out;
}

inline void distort(ComplexFid& fid, const TransientDistortion& d) {
  if (d.is_identity()) return;
  for (std::size_t i = 0; i < fid.samples.size(); ++i) fid.samples[i] *= d.factor(fid.time(i));
}

inline void validate_scan(const ScanRecord& scan) {
  const std::size_t n = scan.on_transients.size();
  if (n == 0 || scan.off_transients.size() != n)
    fail(ErrorKind::Data, "scan " + std::to_string(scan.scan_id) + ": ON/OFF transient counts differ or are zero");
  const ComplexFid& ref = scan.on_transients.front();
  ref.validate();
  for (const auto* block : {&scan.on_transients, &scan.off_transients})
    for (const auto& t : *block)
      if (t.samples.size() != ref.samples.size() || t.dwell_time != ref.dwell_time ||
          t.transmitter_hz != ref.transmitter_hz)
        fail(ErrorKind::Data, "scan " + std::to_string(scan.scan_id) + ": transients disagree in length or metadata");
}

// Returns a copy with every ON and OFF transient distorted; the target and the
// water reference are untouched.
inline ScanRecord apply_corruption(const ScanRecord& scan, const CorruptionParams& params) {
  params.validate();
  ScanRecord out = scan;
  out.corruption = params;
  if (params.is_zero()) return out;
  const std::size_t n = scan.on_transients.size();
  const auto draws = draw_distortions(params, 2 * n);
  for (std::size_t t = 0; t < n; ++t) {
    distort(out.on_transients[t], draws[t]);
    distort(out.off_transients[t], draws[n + t]);
  }
  return out;
}

// Clean (noise-free) FID of all peaks with the given per-label scale.
inline std::vector<cdouble> basis_fid(const MetaboliteBasis& basis, const PpmAxis& axis, std::size_t n_points,
                                      EditLabel label) {
  std::vector<cdouble> out(n_points, cdouble{});
  const double dwell = 1.0 / axis.sweep_width_hz();
  for (const Peak& p : basis.peaks) {
    const double scale = label == EditLabel::On ? p.on_scale : p.off_scale;
    const double a = scale * p.amplitude;
    if (a == 0.0) continue;
    const double f = axis.ppm_to_hz_offset(p.center_ppm);
    for (std::size_t i = 0; i < n_points; ++i) {
      const double t = static_cast<double>(i) * dwell;
      out[i] += std::polar(a * std::exp(-t / p.t2), 2.0 * std::numbers::pi * f * t);
    }
  }
  return out;
}

// Reference-pipeline spectrum of a FID: line broadening, real spectrum on the
// FID's own grid, nearest-neighbour resampling to 2048 points.
inline Spectrum processed_spectrum(const ComplexFid& fid, double center_ppm, double lb_hz,
                                   std::size_t target_points = kTargetPoints) {
  const PpmAxis axis(fid.size(), center_ppm, fid.sweep_width_hz(), fid.transmitter_hz);
  Spectrum s = fid_to_spectrum(apodize(fid, lb_hz), axis);
  if (s.size() != target_points) s = downsample_nearest(s, target_points);
  return s;
}

struct SynthesisOptions {
  std::size_t n_transients = 160;  // per sub-signal
  double target_lb_hz = 3.0;       // line broadening applied to the target only
};

// `axis` fixes both the FID grid (axis.size() samples at 1/sweep_width) and the
// chemical-shift convention.
inline ScanRecord synthesize_scan(const MetaboliteBasis& basis, const PpmAxis& axis, double noise_std,
                                  std::uint64_t seed, const SynthesisOptions& opts = {}) {
  basis.validate(axis);
  if (!(noise_std >= 0.0)) fail(ErrorKind::Usage, "noise_std must be >= 0");
  if (opts.n_transients == 0) fail(ErrorKind::Usage, "n_transients must be >= 1");

  const std::size_t n = axis.size();
  const double dwell = 1.0 / axis.sweep_width_hz();
  const ComplexFid on_clean{basis_fid(basis, axis, n, EditLabel::On), dwell, axis.transmitter_hz(), EditLabel::On};
  const ComplexFid off_clean{basis_fid(basis, axis, n, EditLabel::Off), dwell, axis.transmitter_hz(), EditLabel::Off};

  Xoshiro256ss rng(seed);
  auto noisy = [&](const ComplexFid& clean) {
    ComplexFid t = clean;
    if (noise_std > 0.0)
      for (auto& s : t.samples) s += cdouble(rng.normal(0.0, noise_std), rng.normal(0.0, noise_std));
    return t;
  };

  ScanRecord scan;
  scan.on_transients.reserve(opts.n_transients);
  scan.off_transients.reserve(opts.n_transients);
  // Paired acquisition order: ON_k then OFF_k.
  for (std::size_t k = 0; k < opts.n_transients; ++k) {
    scan.on_transients.push_back(noisy(on_clean));
    scan.off_transients.push_back(noisy(off_clean));
  }

  ComplexFid water{std::vector<cdouble>(n), dwell, axis.transmitter_hz(), EditLabel::Off};
  const double fw = axis.ppm_to_hz_offset(basis.water_ppm);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * dwell;
    water.samples[i] = std::polar(basis.water_amplitude * std::exp(-t / basis.water_t2), 2.0 * std::numbers::pi * fw * t);
  }
  scan.water_reference = noisy(water);

  scan.target = normalize_max_abs(
      processed_spectrum(difference_fid(on_clean, off_clean), axis.center_ppm(), opts.target_lb_hz));
  return scan;
}

// A 40+40 transient window into a scan. References the scan, which must outlive it.
struct SampleWindow {
  const ScanRecord* scan = nullptr;
  std::size_t offset = 0;
  std::size_t size = kWindowSize;

  std::uint32_t scan_id() const { return scan->scan_id; }
  std::span<const ComplexFid> on_window() const {
    return std::span<const ComplexFid>(scan->on_transients).subspan(offset, size);
  }
  std::span<const ComplexFid> off_window() const {
    return std::span<const ComplexFid>(scan->off_transients).subspan(offset, size);
  }
  const Spectrum& target() const { return scan->target; }
};

// Number of stride-1 window offsets. The default yields N - size (offsets
// 0..N-size-1, 120 for N = 160); include_final_offset adds offset N - size.
struct TransientBlock {
  std::vector<ComplexFid> on;
  std::vector<ComplexFid> off;
};

// Copy of a window's transients with fresh corruption (same draw order as
// apply_corruption).
inline TransientBlock corrupt_window(const SampleWindow& w, const CorruptionParams& params) {
  params.validate();
  TransientBlock b{{w.on_window().begin(), w.on_window().end()}, {w.off_window().begin(), w.off_window().end()}};
  if (params.is_zero()) return b;
  const auto draws = draw_distortions(params, 2 * w.size);
  for (std::size_t t = 0; t < w.size; ++t) {
    distort(b.on[t], draws[t]);
    distort(b.off[t], draws[w.size + t]);
  }
  return b;
}

inline std::size_t window_count(std::size_t n_transients, bool include_final_offset = false,
                                std::size_t size = kWindowSize) {
  if (n_transients < size)
    fail(ErrorKind::Data, "scan has " + std::to_string(n_transients) + " transients per sub-signal, window needs " +
                              std::to_string(size));
  return n_transients - size + (include_final_offset ? 1 : 0);
}

inline std::vector<SampleWindow> sliding_window_samples(const ScanRecord& scan, bool include_final_offset = false,
                                                        std::size_t size = kWindowSize) {
  const std::size_t count = window_count(scan.transients_per_subsignal(), include_final_offset, size);
  std::vector<SampleWindow> out;
  out.reserve(count);
  for (std::size_t offset = 0; offset < count; ++offset) out.push_back({&scan, offset, size});
  return out;
}

}  // namespace spectrovit
