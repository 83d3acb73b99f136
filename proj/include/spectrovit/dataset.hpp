#pragma once

// Synthetic datasets and the MRSD1 binary container.
//
// MRSD1 layout, little-endian throughout:
//   header:
//     char[4]  magic "MRSD"
//     u32      version (1)
//     u32      n_scans
//     u32      n_transients_per_subsignal
//     u32      n_fid_points
//     u32      n_target_points
//     f64      dwell_time
//     f64      transmitter_hz
//     f64      center_ppm
//     u32      rng name length, then that many bytes ("xoshiro256ss")
//     u64      seed
//   per scan:
//     u32      scan_id
//     u8       split (0 train, 1 validation, 2 test)
//     f64 x 6  corruption levels (amp base/scan var, freq base/scan var, phase base/scan var)
//     u64      corruption rng seed
//     f64 x 2 x n_fid_points x n_transients   ON block, transient by transient, re/im interleaved
//     f64 x 2 x n_fid_points x n_transients   OFF block
//     f64 x 2 x n_fid_points                  unsuppressed water reference
//     f64 x n_target_points                    target spectrum

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "spectrovit/errors.hpp"
#include "spectrovit/rng.hpp"
#include "spectrovit/signal.hpp"
#include "spectrovit/simulator.hpp"

namespace spectrovit {

enum class Split : std::uint8_t { Train = 0, Validation = 1, Test = 2 };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
  }
  return "?";
}

struct SplitCounts {
  std::size_t train = 0;
  std::size_t validation = 0;
  std::size_t test = 0;
};

// Weights need not be normalized: (0.6, 0.2, 0.2) and (84, 24, 36) both work.
inline SplitCounts split_counts(std::size_t n_scans, std::array<double, 3> weights) {
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) fail(ErrorKind::Usage, "split weights must be >= 0");
    total += w;
  }
  if (!(total > 0.0)) fail(ErrorKind::Usage, "split weights sum to zero");
  const double n = static_cast<double>(n_scans);
  SplitCounts c;
  c.train = static_cast<std::size_t>(std::llround(n * weights[0] / total));
  c.validation = static_cast<std::size_t>(std::llround(n * weights[1] / total));
  c.train = std::min(c.train, n_scans);
  c.validation = std::min(c.validation, n_scans - c.train);
  c.test = n_scans - c.train - c.validation;
  return c;
}

struct SimulationConfig {
  PpmAxis axis = PpmAxis::standard(2048);  // also the FID grid
  MetaboliteBasis basis = MetaboliteBasis::standard();
  std::size_t n_transients = 160;
  double noise_std = 2.5;
  double target_lb_hz = 3.0;
  // Per-scan multiplicative jitter of peak amplitudes and T2 (uniform +-fraction).
  double amplitude_variability = 0.2;
  double t2_variability = 0.15;
  // Fixed corruption baked into every stored scan (rng seed derived per scan).
  CorruptionParams acquisition_corruption{};
};

struct Dataset {
  std::uint32_t version = 1;
  std::size_t n_transients = 0;
  std::size_t n_fid_points = 0;
  std::size_t n_target_points = kTargetPoints;
  double dwell_time = 0.0;
  double transmitter_hz = 0.0;
  double center_ppm = 4.7;
  std::string rng_name{Xoshiro256ss::name};
  std::uint64_t seed = 0;
  std::vector<ScanRecord> scans;
  std::vector<Split> splits;  // parallel to scans

  PpmAxis fid_axis() const { return PpmAxis(n_fid_points, center_ppm, 1.0 / dwell_time, transmitter_hz); }
  PpmAxis target_axis() const { return PpmAxis(n_target_points, center_ppm, 1.0 / dwell_time, transmitter_hz); }

  std::vector<const ScanRecord*> scans_in(Split s) const {
    std::vector<const ScanRecord*> out;
    for (std::size_t i = 0; i < scans.size(); ++i)
      if (splits[i] == s) out.push_back(&scans[i]);
    return out;
  }

  const ScanRecord& scan_by_id(std::uint32_t id) const {
    for (const auto& s : scans)
      if (s.scan_id == id) return s;
    fail(ErrorKind::Data, "scan " + std::to_string(id) + " not found in dataset");
  }
};

// Scan-level variation of the basis: every peak amplitude and T2, and the water
// amplitude, get an independent uniform factor.
inline MetaboliteBasis jitter_basis(const MetaboliteBasis& basis, double amp_frac, double t2_frac, Xoshiro256ss& rng) {
  MetaboliteBasis b = basis;
  for (auto& p : b.peaks) {
    p.amplitude *= 1.0 + rng.uniform(-amp_frac, amp_frac);
    p.t2 *= 1.0 + rng.uniform(-t2_frac, t2_frac);
  }
  b.water_amplitude *= 1.0 + rng.uniform(-amp_frac, amp_frac);
  return b;
}

// Scan i is generated from derive_seed(seed, i) alone, so any subset or order
// of scans reproduces the same bytes.
inline ScanRecord simulate_scan(const SimulationConfig& cfg, std::uint64_t seed, std::uint32_t scan_index) {
  const std::uint64_t scan_seed = derive_seed(seed, scan_index);
  Xoshiro256ss rng(scan_seed);
  const MetaboliteBasis basis = jitter_basis(cfg.basis, cfg.amplitude_variability, cfg.t2_variability, rng);
  ScanRecord scan = synthesize_scan(basis, cfg.axis, cfg.noise_std, rng.next(), {cfg.n_transients, cfg.target_lb_hz});
  scan.scan_id = scan_index;
  CorruptionParams corruption = cfg.acquisition_corruption;
  corruption.rng_seed = rng.next();
  return apply_corruption(scan, corruption);
}

inline Dataset simulate_dataset(const SimulationConfig& cfg, std::size_t n_scans, std::array<double, 3> split_weights,
                                std::uint64_t seed) {
  if (n_scans == 0) fail(ErrorKind::Usage, "n_scans must be >= 1");
  const SplitCounts counts = split_counts(n_scans, split_weights);
  Dataset ds;
  ds.n_transients = cfg.n_transients;
  ds.n_fid_points = cfg.axis.size();
  ds.dwell_time = 1.0 / cfg.axis.sweep_width_hz();
  ds.transmitter_hz = cfg.axis.transmitter_hz();
  ds.center_ppm = cfg.axis.center_ppm();
  ds.seed = seed;
  ds.scans.reserve(n_scans);
  for (std::size_t i = 0; i < n_scans; ++i) {
    ds.scans.push_back(simulate_scan(cfg, seed, static_cast<std::uint32_t>(i)));
    ds.splits.push_back(i < counts.train                      ? Split::Train
                        : i < counts.train + counts.validation ? Split::Validation
                                                               : Split::Test);
  }
  return ds;
}

namespace io {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put(std::vector<char>& buf, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  buf.insert(buf.end(), bytes.begin(), bytes.end());
}

inline void put_complex_block(std::vector<char>& buf, const std::vector<cdouble>& samples) {
  for (const auto& s : samples) {
    put(buf, s.real());
    put(buf, s.imag());
  }
}

// Bounds-checked little-endian reader over an in-memory file.
class Reader {
 public:
  Reader(std::vector<char> data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > data_.size())
      fail(ErrorKind::Data, path_ + ": truncated file (need " + std::to_string(sizeof(T)) + " bytes at offset " +
                                std::to_string(pos_) + ")");
    std::array<char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), data_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, bytes.data(), sizeof(T));
    return v;
  }

  std::string get_string(std::size_t n) {
    if (pos_ + n > data_.size()) fail(ErrorKind::Data, path_ + ": truncated file");
    std::string s(data_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }
  const std::string& path() const { return path_; }

 private:
  std::vector<char> data_;
  std::string path_;
  std::size_t pos_ = 0;
};

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Data, path.string() + ": cannot open for reading");
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Data, path.string() + ": cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::Data, path.string() + ": write failed");
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::vector<char>(text.begin(), text.end()));
}

}  // namespace io

inline std::vector<char> encode_header(const Dataset& ds) {
  std::vector<char> buf;
  buf.insert(buf.end(), {'M', 'R', 'S', 'D'});
  io::put<std::uint32_t>(buf, ds.version);
  io::put<std::uint32_t>(buf, static_cast<std::uint32_t>(ds.scans.size()));
  io::put<std::uint32_t>(buf, static_cast<std::uint32_t>(ds.n_transients));
  io::put<std::uint32_t>(buf, static_cast<std::uint32_t>(ds.n_fid_points));
  io::put<std::uint32_t>(buf, static_cast<std::uint32_t>(ds.n_target_points));
  io::put(buf, ds.dwell_time);
  io::put(buf, ds.transmitter_hz);
  io::put(buf, ds.center_ppm);
  io::put<std::uint32_t>(buf, static_cast<std::uint32_t>(ds.rng_name.size()));
  buf.insert(buf.end(), ds.rng_name.begin(), ds.rng_name.end());
  io::put<std::uint64_t>(buf, ds.seed);
  return buf;
}

inline std::vector<char> encode_scan(const Dataset& ds, std::size_t i) {
  const ScanRecord& s = ds.scans[i];
  if (s.on_transients.size() != ds.n_transients || s.off_transients.size() != ds.n_transients ||
      s.target.size() != ds.n_target_points || s.water_reference.size() != ds.n_fid_points)
    fail(ErrorKind::Data, "scan " + std::to_string(s.scan_id) + " does not match dataset header dimensions");
  std::vector<char> buf;
  io::put<std::uint32_t>(buf, s.scan_id);
  io::put<std::uint8_t>(buf, static_cast<std::uint8_t>(ds.splits[i]));
  for (double v : s.corruption.levels()) io::put(buf, v);
  io::put<std::uint64_t>(buf, s.corruption.rng_seed);
  for (const auto& t : s.on_transients) {
    if (t.size() != ds.n_fid_points) fail(ErrorKind::Data, "transient length does not match dataset header");
    io::put_complex_block(buf, t.samples);
  }
  for (const auto& t : s.off_transients) {
    if (t.size() != ds.n_fid_points) fail(ErrorKind::Data, "transient length does not match dataset header");
    io::put_complex_block(buf, t.samples);
  }
  io::put_complex_block(buf, s.water_reference.samples);
  for (double v : s.target.values) io::put(buf, v);
  return buf;
}

inline std::vector<char> encode_dataset(const Dataset& ds) {
  std::vector<char> buf = encode_header(ds);
  for (std::size_t i = 0; i < ds.scans.size(); ++i) {
    const auto chunk = encode_scan(ds, i);
    buf.insert(buf.end(), chunk.begin(), chunk.end());
  }
  return buf;
}

// Streams scan by scan so peak memory stays near one scan beyond the dataset.
inline void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
  if (ds.splits.size() != ds.scans.size()) fail(ErrorKind::Data, "dataset split list does not match scan list");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Data, path.string() + ": cannot open for writing");
  auto emit = [&](const std::vector<char>& bytes) {
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::Data, path.string() + ": write failed");
  };
  emit(encode_header(ds));
  for (std::size_t i = 0; i < ds.scans.size(); ++i) emit(encode_scan(ds, i));
}

inline Dataset decode_dataset(std::vector<char> bytes, const std::string& path) {
  io::Reader r(std::move(bytes), path);
  if (r.get_string(4) != "MRSD") fail(ErrorKind::Data, path + ": not an MRSD dataset (bad magic)");
  Dataset ds;
  ds.version = r.get<std::uint32_t>();
  if (ds.version != 1) fail(ErrorKind::Data, path + ": unsupported MRSD version " + std::to_string(ds.version));
  const auto n_scans = r.get<std::uint32_t>();
  ds.n_transients = r.get<std::uint32_t>();
  ds.n_fid_points = r.get<std::uint32_t>();
  ds.n_target_points = r.get<std::uint32_t>();
  ds.dwell_time = r.get<double>();
  ds.transmitter_hz = r.get<double>();
  ds.center_ppm = r.get<double>();
  ds.rng_name = r.get_string(r.get<std::uint32_t>());
  ds.seed = r.get<std::uint64_t>();
  if (ds.n_fid_points < 2 || ds.n_target_points < 2 || !(ds.dwell_time > 0.0) || !(ds.transmitter_hz > 0.0))
    fail(ErrorKind::Data, path + ": invalid header");

  const std::size_t per_scan = 4 + 1 + 6 * 8 + 8 + (2 * ds.n_transients + 1) * ds.n_fid_points * 16 +
                               ds.n_target_points * 8;
  if (r.remaining() != per_scan * n_scans)
    fail(ErrorKind::Data, path + ": payload size " + std::to_string(r.remaining()) + " does not match header (" +
                              std::to_string(per_scan * n_scans) + " expected)");

  const PpmAxis target_axis = ds.target_axis();
  auto read_fid = [&](EditLabel label) {
    ComplexFid f{std::vector<cdouble>(ds.n_fid_points), ds.dwell_time, ds.transmitter_hz, label};
    for (auto& s : f.samples) {
      const double re = r.get<double>();
      const double im = r.get<double>();
      s = {re, im};
    }
    return f;
  };
  ds.scans.resize(n_scans);
  ds.splits.resize(n_scans);
  for (std::uint32_t i = 0; i < n_scans; ++i) {
    ScanRecord& s = ds.scans[i];
    s.scan_id = r.get<std::uint32_t>();
    const auto split = r.get<std::uint8_t>();
    if (split > 2) fail(ErrorKind::Data, path + ": bad split tag for scan " + std::to_string(s.scan_id));
    ds.splits[i] = static_cast<Split>(split);
    s.corruption.amp_base = r.get<double>();
    s.corruption.amp_scan_var = r.get<double>();
    s.corruption.freq_base_hz = r.get<double>();
    s.corruption.freq_scan_var_hz = r.get<double>();
    s.corruption.phase_base_deg = r.get<double>();
    s.corruption.phase_scan_var_deg = r.get<double>();
    s.corruption.rng_seed = r.get<std::uint64_t>();
    s.on_transients.reserve(ds.n_transients);
    s.off_transients.reserve(ds.n_transients);
    for (std::size_t t = 0; t < ds.n_transients; ++t) s.on_transients.push_back(read_fid(EditLabel::On));
    for (std::size_t t = 0; t < ds.n_transients; ++t) s.off_transients.push_back(read_fid(EditLabel::Off));
    s.water_reference = read_fid(EditLabel::Off);
    s.target = Spectrum{std::vector<double>(ds.n_target_points), target_axis};
    for (auto& v : s.target.values) v = r.get<double>();
  }
  return ds;
}

inline Dataset read_dataset(const std::filesystem::path& path) {
  return decode_dataset(io::read_file(path), path.string());
}

}  // namespace spectrovit
