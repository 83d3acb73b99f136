#pragma once

// Spectrogram front-end: mean ON / mean OFF, OFF - ON difference, STFT,
// normalization by the largest complex magnitude, real part, zero padding
// into a fixed 224x224 image.
//
// The default STFT (fft_length 446) has more frequency rows than the image,
// so a contiguous band of rows centred on band_center_ppm is kept. The band
// is recorded in SpectrogramImage::first_row.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spectrovit/dataset.hpp"
#include "spectrovit/errors.hpp"
#include "spectrovit/fft.hpp"
#include "spectrovit/signal.hpp"

namespace spectrovit {

inline constexpr std::size_t kImageSize = 224;

enum class WindowFn { Rect, Hann, Hamming };

inline const char* to_string(WindowFn w) {
  switch (w) {
    case WindowFn::Rect: return "rect";
    case WindowFn::Hann: return "hann";
    case WindowFn::Hamming: return "hamming";
  }
  return "?";
}

inline WindowFn parse_window_fn(const std::string& s) {
  if (s == "rect") return WindowFn::Rect;
  if (s == "hann") return WindowFn::Hann;
  if (s == "hamming") return WindowFn::Hamming;
  fail(ErrorKind::Usage, "unknown window function '" + s + "' (rect|hann|hamming)");
}

// Periodic tapers (the DFT-even convention).
inline std::vector<double> make_window(WindowFn fn, std::size_t n) {
  std::vector<double> w(n, 1.0);
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::size_t i = 0; i < n; ++i) {
    const double c = std::cos(two_pi * static_cast<double>(i) / static_cast<double>(n));
    if (fn == WindowFn::Hann) w[i] = 0.5 - 0.5 * c;
    if (fn == WindowFn::Hamming) w[i] = 0.54 - 0.46 * c;
  }
  return w;
}

struct StftConfig {
  std::size_t window_size = 256;
  std::size_t hop = 10;
  std::size_t fft_length = 446;
  WindowFn window_fn = WindowFn::Hann;
  double reference_ppm = 4.7;    // chemical shift at the transmitter frequency
  double band_center_ppm = 3.0;  // centre of the row band kept in the image

  // Defaults for 2048-point FIDs; 4096-point FIDs use hop 20.
  static StftConfig for_fid_length(std::size_t n_points) {
    StftConfig c;
    if (n_points >= 4096) c.hop = 20;
    return c;
  }

  void validate() const {
    if (window_size == 0 || window_size > fft_length)
      fail(ErrorKind::Usage, "stft window_size must be in [1, fft_length]");
    if (hop == 0) fail(ErrorKind::Usage, "stft hop must be >= 1");
  }

  std::size_t frame_count(std::size_t n_samples) const {
    if (n_samples < window_size)
      fail(ErrorKind::Data, "FID of " + std::to_string(n_samples) + " samples is shorter than the STFT window (" +
                                std::to_string(window_size) + ")");
    return (n_samples - window_size) / hop + 1;
  }

  nlohmann::json to_json() const {
    return {{"window_size", window_size}, {"hop", hop},
            {"fft_length", fft_length},   {"window_fn", to_string(window_fn)},
            {"reference_ppm", reference_ppm}, {"band_center_ppm", band_center_ppm}};
  }
};

// Row-major complex matrix, rows = frequency (descending), cols = frame.
struct ComplexMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<cdouble> data;

  cdouble& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const cdouble& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

struct SpectrogramImage {
  std::vector<float> pixels = std::vector<float>(kImageSize * kImageSize, 0.0f);  // row-major 224x224
  std::size_t rows_frequency = 0;  // valid rows, anchored top-left
  std::size_t cols_time = 0;       // valid columns
  std::size_t first_row = 0;       // STFT row shown in image row 0

  float at(std::size_t r, std::size_t c) const { return pixels[r * kImageSize + c]; }
  float& at(std::size_t r, std::size_t c) { return pixels[r * kImageSize + c]; }
};

// Reusable STFT machinery for one configuration.
class SpectrogramBuilder {
 public:
  explicit SpectrogramBuilder(StftConfig cfg)
      : cfg_(cfg), plan_((cfg.validate(), cfg.fft_length)), window_(make_window(cfg.window_fn, cfg.window_size)) {}

  const StftConfig& config() const { return cfg_; }

  ComplexMatrix stft(const ComplexFid& fid) const {
    const std::size_t frames = cfg_.frame_count(fid.size());
    const std::size_t n = cfg_.fft_length;
    ComplexMatrix m{n, frames, std::vector<cdouble>(n * frames)};
    std::vector<cdouble> buf(n);
    const std::size_t top = (n + 1) / 2 - 1;
    for (std::size_t f = 0; f < frames; ++f) {
      std::fill(buf.begin(), buf.end(), cdouble{});
      const std::size_t start = f * cfg_.hop;
      for (std::size_t i = 0; i < cfg_.window_size; ++i) buf[i] = fid.samples[start + i] * window_[i];
      plan_.forward(buf, buf);
      for (std::size_t k = 0; k < n; ++k) m(k, f) = buf[(top + n - k) % n];
    }
    return m;
  }

  // First STFT row of the kept band for a FID with the given sample rate.
  std::size_t band_first_row(double sweep_width_hz, double transmitter_hz) const {
    const std::size_t n = cfg_.fft_length;
    if (n <= kImageSize) return 0;
    const double hz = (cfg_.band_center_ppm - cfg_.reference_ppm) * transmitter_hz * 1e-6;
    const double bin = hz * static_cast<double>(n) / sweep_width_hz;
    const double row = static_cast<double>((n + 1) / 2 - 1) - bin;
    const double first = std::round(row) - static_cast<double>(kImageSize / 2);
    return static_cast<std::size_t>(std::clamp(first, 0.0, static_cast<double>(n - kImageSize)));
  }

  SpectrogramImage image_from_difference(const ComplexFid& diff) const {
    const ComplexMatrix m = stft(diff);
    SpectrogramImage img;
    img.first_row = band_first_row(diff.sweep_width_hz(), diff.transmitter_hz);
    img.rows_frequency = std::min(kImageSize, m.rows - img.first_row);
    img.cols_time = std::min(kImageSize, m.cols);
    double peak = 0.0;
    for (std::size_t r = 0; r < img.rows_frequency; ++r)
      for (std::size_t c = 0; c < img.cols_time; ++c) peak = std::max(peak, std::abs(m(img.first_row + r, c)));
    if (!(peak > 0.0) || !std::isfinite(peak)) fail(ErrorKind::Numerical, "degenerate spectrogram (zero magnitude)");
    for (std::size_t r = 0; r < img.rows_frequency; ++r)
      for (std::size_t c = 0; c < img.cols_time; ++c)
        img.at(r, c) = static_cast<float>((m(img.first_row + r, c) / peak).real());
    return img;
  }

  SpectrogramImage build(std::span<const ComplexFid> on, std::span<const ComplexFid> off) const {
    return image_from_difference(difference_fid(mean_fid(on), mean_fid(off)));
  }

 private:
  StftConfig cfg_;
  FftPlan plan_;
  std::vector<double> window_;
};

inline ComplexMatrix stft(const ComplexFid& fid, const StftConfig& cfg) { return SpectrogramBuilder(cfg).stft(fid); }

inline SpectrogramImage make_spectrogram(std::span<const ComplexFid> on, std::span<const ComplexFid> off,
                                         const StftConfig& cfg) {
  return SpectrogramBuilder(cfg).build(on, off);
}

// 8-bit PGM, [-1, 1] mapped linearly onto [0, 255].
inline void write_pgm(const std::filesystem::path& path, const SpectrogramImage& img) {
  std::string header = "P5\n" + std::to_string(kImageSize) + " " + std::to_string(kImageSize) + "\n255\n";
  std::vector<char> bytes(header.begin(), header.end());
  for (float p : img.pixels) {
    const double v = std::clamp((static_cast<double>(p) + 1.0) * 127.5, 0.0, 255.0);
    bytes.push_back(static_cast<char>(static_cast<std::uint8_t>(std::lround(v))));
  }
  io::write_file(path, bytes);
}

// Raw little-endian f32 matrix plus `<path>.json` with dims, band and config.
inline void write_raw(const std::filesystem::path& path, const SpectrogramImage& img, const StftConfig& cfg) {
  std::vector<char> bytes;
  for (float p : img.pixels) io::put(bytes, p);
  io::write_file(path, bytes);
  nlohmann::json meta = {{"rows", kImageSize},
                         {"cols", kImageSize},
                         {"dtype", "f32le"},
                         {"valid_rows", img.rows_frequency},
                         {"valid_cols", img.cols_time},
                         {"first_stft_row", img.first_row},
                         {"stft", cfg.to_json()}};
  io::write_text(path.string() + ".json", meta.dump(2) + "\n");
}

}  // namespace spectrovit
