#pragma once

// Single INI-style configuration for every CLI verb. Keys are `section.key`;
// unknown keys are rejected. to_ini() writes the fully resolved values and is
// echoed into output headers.

#include <array>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "spectrovit/dataset.hpp"
#include "spectrovit/errors.hpp"
#include "spectrovit/metrics.hpp"
#include "spectrovit/spectrogram.hpp"
#include "spectrovit/vit/config.hpp"

namespace spectrovit {

inline constexpr const char* kConfigEnvVar = "SPECTROVIT_CONFIG";

struct PipelineConfig {
  std::uint64_t seed = 7;

  // axis (also the FID grid of simulated scans)
  std::size_t axis_points = 2048;
  double center_ppm = 4.7;
  double sweep_width_hz = 2000.0;
  double transmitter_hz = 127.7e6;

  // simulation
  std::size_t n_scans = 80;
  std::array<double, 3> split = {64.0, 0.0, 16.0};
  std::size_t n_transients = 160;
  double noise_std = 2.5;
  double target_lb_hz = 3.0;
  double amplitude_variability = 0.2;
  double t2_variability = 0.15;
  CorruptionParams corruption{3.0, 0.0, 2.0, 0.0, 2.0, 0.0, 0};

  StftConfig stft;

  std::string preset = "desk";
  vit::ModelConfig model = vit::ModelConfig::desk();
  vit::TrainConfig train = vit::TrainConfig::desk();

  MetricWindows windows;

  // conventional pipelines and model-output scaling
  double lb_hz = 3.0;
  double rescale_lo_ppm = 1.8;
  double rescale_hi_ppm = 4.2;

  std::filesystem::path dataset_path = "dataset.mrsd";
  std::filesystem::path params_path = "model.vitp";
  std::filesystem::path output_dir = "out";

  PpmAxis axis() const { return PpmAxis(axis_points, center_ppm, sweep_width_hz, transmitter_hz); }

  SimulationConfig simulation() const {
    SimulationConfig s;
    s.axis = axis();
    s.n_transients = n_transients;
    s.noise_std = noise_std;
    s.target_lb_hz = target_lb_hz;
    s.amplitude_variability = amplitude_variability;
    s.t2_variability = t2_variability;
    s.acquisition_corruption = corruption;
    return s;
  }

  // Seeds flow from the single top-level seed.
  vit::TrainConfig train_config() const {
    vit::TrainConfig t = train;
    t.seed = seed;
    return t;
  }

  void apply_preset(const std::string& name) {
    if (name == "desk") {
      model = vit::ModelConfig::desk();
      train = vit::TrainConfig::desk();
    } else if (name == "paper") {
      model = vit::ModelConfig::paper();
      train = vit::TrainConfig::paper();
    } else if (name == "tiny") {
      // Smoke-test size; keeps the 224 input so the spectrogram front-end is unchanged.
      model = vit::ModelConfig::desk();
      model.embed_dim = 16;
      model.depth = 1;
      model.n_heads = 2;
      train = vit::TrainConfig::desk();
      train.epochs = 1;
      train.samples_per_epoch = 32;
      train.val_windows_per_scan = 1;
    } else {
      fail(ErrorKind::Usage, "unknown preset '" + name + "' (expected desk, paper or tiny)");
    }
    preset = name;
  }

  void validate() const {
    const PpmAxis a = axis();
    for (auto [lo, hi] : {std::pair{windows.mse_lo, windows.mse_hi}, std::pair{windows.gaba_lo, windows.gaba_hi},
                          std::pair{windows.glx_lo, windows.glx_hi}, std::pair{windows.noise_lo, windows.noise_hi},
                          std::pair{rescale_lo_ppm, rescale_hi_ppm}})
      if (!a.covers(lo, hi))
        fail(ErrorKind::Usage, "axis [" + std::to_string(a.min_ppm()) + ", " + std::to_string(a.max_ppm()) +
                                   "] ppm does not cover window " + std::to_string(lo) + "-" + std::to_string(hi));
    windows.validate(a);
    if (!(rescale_hi_ppm > rescale_lo_ppm)) fail(ErrorKind::Usage, "pipeline rescale window is empty");
    if (!(lb_hz >= 0.0)) fail(ErrorKind::Usage, "pipeline.lb_hz must be >= 0");
    if (n_transients < 4 * kWindowSize)
      fail(ErrorKind::Usage, "simulation.n_transients must be >= " + std::to_string(4 * kWindowSize));
    corruption.validate();
    stft.validate();
    model.validate();
    if (model.image_size != kImageSize) fail(ErrorKind::Usage, "model.image_size must be 224");
    train.validate();
  }

  std::string to_ini() const;
  static PipelineConfig from_ptree(const boost::property_tree::ptree& tree,
                                   const std::optional<std::string>& preset_override = std::nullopt);
  static PipelineConfig load(const std::filesystem::path& path,
                             const std::optional<std::string>& preset_override = std::nullopt);
  // Explicit path, else $SPECTROVIT_CONFIG, else built-in defaults.
  static PipelineConfig resolve(const std::optional<std::filesystem::path>& path,
                                const std::optional<std::string>& preset_override = std::nullopt);
};

namespace cfgio {

inline std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}
inline std::string fmt(std::size_t v) { return std::to_string(v); }
inline std::string fmt(std::uint64_t v, int) { return std::to_string(v); }
inline std::string fmt(bool v) { return v ? "true" : "false"; }

[[noreturn]] inline void bad(const std::string& key, const std::string& value) {
  fail(ErrorKind::Usage, "config key '" + key + "': invalid value '" + value + "'");
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  T v{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) bad(key, raw);
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  bad(key, raw);
}

template <std::size_t N>
std::array<double, N> parse_list(const std::string& key, const std::string& raw) {
  std::array<double, N> out{};
  std::stringstream ss(raw);
  std::string item;
  std::size_t i = 0;
  while (std::getline(ss, item, ',')) {
    if (i == N) bad(key, raw);
    out[i++] = parse_number<double>(key, item);
  }
  if (i != N) bad(key, raw);
  return out;
}

template <std::size_t N>
std::string fmt_list(const std::array<double, N>& a) {
  std::string out;
  for (std::size_t i = 0; i < N; ++i) out += (i ? "," : "") + fmt(a[i]);
  return out;
}

struct Field {
  std::string key;  // section.name
  std::function<std::string(const PipelineConfig&)> get;
  std::function<void(PipelineConfig&, const std::string&)> set;
};

template <typename Ref>
Field dbl(std::string key, Ref ref) {
  return {key, [ref](const PipelineConfig& c) { return fmt(ref(const_cast<PipelineConfig&>(c))); },
          [ref, key](PipelineConfig& c, const std::string& v) { ref(c) = parse_number<double>(key, v); }};
}
template <typename Ref>
Field count(std::string key, Ref ref) {
  return {key, [ref](const PipelineConfig& c) { return fmt(ref(const_cast<PipelineConfig&>(c))); },
          [ref, key](PipelineConfig& c, const std::string& v) { ref(c) = parse_number<std::size_t>(key, v); }};
}
template <typename Ref>
Field flag(std::string key, Ref ref) {
  return {key, [ref](const PipelineConfig& c) { return fmt(static_cast<bool>(ref(const_cast<PipelineConfig&>(c)))); },
          [ref, key](PipelineConfig& c, const std::string& v) { ref(c) = parse_bool(key, v); }};
}
template <typename Ref>
Field path(std::string key, Ref ref) {
  return {key, [ref](const PipelineConfig& c) { return ref(const_cast<PipelineConfig&>(c)).string(); },
          [ref](PipelineConfig& c, const std::string& v) { ref(c) = trim(v); }};
}

// Every configurable key, in echo order. general.preset is handled separately
// because it must be applied before the other keys.
inline const std::vector<Field>& fields() {
  using C = PipelineConfig;
  static const std::vector<Field> all = {
      {"general.seed", [](const C& c) { return fmt(c.seed, 0); },
       [](C& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("general.seed", v); }},
      count("axis.points", [](C& c) -> auto& { return c.axis_points; }),
      dbl("axis.center_ppm", [](C& c) -> auto& { return c.center_ppm; }),
      dbl("axis.sweep_width_hz", [](C& c) -> auto& { return c.sweep_width_hz; }),
      dbl("axis.transmitter_hz", [](C& c) -> auto& { return c.transmitter_hz; }),
      count("simulation.scans", [](C& c) -> auto& { return c.n_scans; }),
      {"simulation.split", [](const C& c) { return fmt_list(c.split); },
       [](C& c, const std::string& v) { c.split = parse_list<3>("simulation.split", v); }},
      count("simulation.transients", [](C& c) -> auto& { return c.n_transients; }),
      dbl("simulation.noise_std", [](C& c) -> auto& { return c.noise_std; }),
      dbl("simulation.target_lb_hz", [](C& c) -> auto& { return c.target_lb_hz; }),
      dbl("simulation.amplitude_variability", [](C& c) -> auto& { return c.amplitude_variability; }),
      dbl("simulation.t2_variability", [](C& c) -> auto& { return c.t2_variability; }),
      dbl("simulation.amp_base", [](C& c) -> auto& { return c.corruption.amp_base; }),
      dbl("simulation.amp_scan_var", [](C& c) -> auto& { return c.corruption.amp_scan_var; }),
      dbl("simulation.freq_base_hz", [](C& c) -> auto& { return c.corruption.freq_base_hz; }),
      dbl("simulation.freq_scan_var_hz", [](C& c) -> auto& { return c.corruption.freq_scan_var_hz; }),
      dbl("simulation.phase_base_deg", [](C& c) -> auto& { return c.corruption.phase_base_deg; }),
      dbl("simulation.phase_scan_var_deg", [](C& c) -> auto& { return c.corruption.phase_scan_var_deg; }),
      count("stft.window_size", [](C& c) -> auto& { return c.stft.window_size; }),
      count("stft.hop", [](C& c) -> auto& { return c.stft.hop; }),
      count("stft.fft_length", [](C& c) -> auto& { return c.stft.fft_length; }),
      {"stft.window_fn", [](const C& c) { return std::string(to_string(c.stft.window_fn)); },
       [](C& c, const std::string& v) { c.stft.window_fn = parse_window_fn(trim(v)); }},
      dbl("stft.reference_ppm", [](C& c) -> auto& { return c.stft.reference_ppm; }),
      dbl("stft.band_center_ppm", [](C& c) -> auto& { return c.stft.band_center_ppm; }),
      count("model.image_size", [](C& c) -> auto& { return c.model.image_size; }),
      count("model.patch_size", [](C& c) -> auto& { return c.model.patch_size; }),
      count("model.embed_dim", [](C& c) -> auto& { return c.model.embed_dim; }),
      count("model.depth", [](C& c) -> auto& { return c.model.depth; }),
      count("model.n_heads", [](C& c) -> auto& { return c.model.n_heads; }),
      count("model.mlp_ratio", [](C& c) -> auto& { return c.model.mlp_ratio; }),
      count("train.batch_size", [](C& c) -> auto& { return c.train.batch_size; }),
      dbl("train.learning_rate", [](C& c) -> auto& { return c.train.learning_rate; }),
      dbl("train.beta1", [](C& c) -> auto& { return c.train.beta1; }),
      dbl("train.beta2", [](C& c) -> auto& { return c.train.beta2; }),
      dbl("train.epsilon", [](C& c) -> auto& { return c.train.epsilon; }),
      count("train.epochs", [](C& c) -> auto& { return c.train.epochs; }),
      flag("train.augment", [](C& c) -> auto& { return c.train.augment; }),
      {"train.corruption_upper", [](const C& c) { return fmt_list(c.train.corruption_upper); },
       [](C& c, const std::string& v) { c.train.corruption_upper = parse_list<6>("train.corruption_upper", v); }},
      count("train.samples_per_epoch", [](C& c) -> auto& { return c.train.samples_per_epoch; }),
      count("train.val_windows_per_scan", [](C& c) -> auto& { return c.train.val_windows_per_scan; }),
      flag("train.include_final_offset", [](C& c) -> auto& { return c.train.include_final_offset; }),
      dbl("train.grad_clip_norm", [](C& c) -> auto& { return c.train.grad_clip_norm; }),
      dbl("metrics.mse_lo_ppm", [](C& c) -> auto& { return c.windows.mse_lo; }),
      dbl("metrics.mse_hi_ppm", [](C& c) -> auto& { return c.windows.mse_hi; }),
      dbl("metrics.gaba_lo_ppm", [](C& c) -> auto& { return c.windows.gaba_lo; }),
      dbl("metrics.gaba_hi_ppm", [](C& c) -> auto& { return c.windows.gaba_hi; }),
      dbl("metrics.glx_lo_ppm", [](C& c) -> auto& { return c.windows.glx_lo; }),
      dbl("metrics.glx_hi_ppm", [](C& c) -> auto& { return c.windows.glx_hi; }),
      dbl("metrics.noise_lo_ppm", [](C& c) -> auto& { return c.windows.noise_lo; }),
      dbl("metrics.noise_hi_ppm", [](C& c) -> auto& { return c.windows.noise_hi; }),
      dbl("metrics.gaba_weight", [](C& c) -> auto& { return c.windows.gaba_weight; }),
      dbl("metrics.glx_weight", [](C& c) -> auto& { return c.windows.glx_weight; }),
      dbl("pipeline.lb_hz", [](C& c) -> auto& { return c.lb_hz; }),
      dbl("pipeline.rescale_lo_ppm", [](C& c) -> auto& { return c.rescale_lo_ppm; }),
      dbl("pipeline.rescale_hi_ppm", [](C& c) -> auto& { return c.rescale_hi_ppm; }),
      path("paths.dataset", [](C& c) -> auto& { return c.dataset_path; }),
      path("paths.params", [](C& c) -> auto& { return c.params_path; }),
      path("paths.output_dir", [](C& c) -> auto& { return c.output_dir; }),
  };
  return all;
}

}  // namespace cfgio

inline std::string PipelineConfig::to_ini() const {
  std::string out, section;
  auto emit = [&](const std::string& key, const std::string& value) {
    const auto dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      out += (out.empty() ? "[" : "\n[") + sec + "]\n";
      section = sec;
    }
    out += key.substr(dot + 1) + " = " + value + "\n";
  };
  const auto& fs = cfgio::fields();
  emit(fs[0].key, fs[0].get(*this));
  emit("general.preset", preset);
  for (std::size_t i = 1; i < fs.size(); ++i) emit(fs[i].key, fs[i].get(*this));
  return out;
}

inline PipelineConfig PipelineConfig::from_ptree(const boost::property_tree::ptree& tree,
                                                 const std::optional<std::string>& preset_override) {
  PipelineConfig c;
  c.apply_preset(preset_override ? *preset_override : tree.get<std::string>("general.preset", "desk"));
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      fail(ErrorKind::Usage, "config key '" + section + "' is outside any section");
    for (const auto& [name, value] : body) {
      const std::string key = section + "." + name;
      if (key == "general.preset") continue;
      const auto& fs = cfgio::fields();
      const auto it = std::find_if(fs.begin(), fs.end(), [&](const cfgio::Field& f) { return f.key == key; });
      if (it == fs.end()) fail(ErrorKind::Usage, "unknown config key '" + key + "'");
      it->set(c, value.data());
    }
  }
  c.validate();
  return c;
}

inline PipelineConfig PipelineConfig::load(const std::filesystem::path& path,
                                           const std::optional<std::string>& preset_override) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    fail(ErrorKind::Usage, "cannot read config " + path.string() + ": " + e.message() + " (line " +
                               std::to_string(e.line()) + ")");
  }
  return from_ptree(tree, preset_override);
}

inline PipelineConfig PipelineConfig::resolve(const std::optional<std::filesystem::path>& path,
                                              const std::optional<std::string>& preset_override) {
  if (path) return load(*path, preset_override);
  if (const char* env = std::getenv(kConfigEnvVar); env && *env) return load(env, preset_override);
  return from_ptree({}, preset_override);
}

// Config echo as comment lines for CSV headers.
inline std::string commented(const std::string& text) {
  std::string out;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) out += line.empty() ? "#\n" : "# " + line + "\n";
  return out;
}

}  // namespace spectrovit
