#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spectrovit/errors.hpp"
#include "spectrovit/signal.hpp"
#include "spectrovit/simulator.hpp"

namespace spectrovit::vit {

struct ModelConfig {
  std::size_t image_size = 224;
  std::size_t patch_size = 32;
  std::size_t channels = 3;  // the one-channel spectrogram is replicated
  std::size_t embed_dim = 768;
  std::size_t depth = 12;
  std::size_t n_heads = 12;
  std::size_t mlp_ratio = 4;
  std::array<std::size_t, 3> head_dims = {512, 1024, 2048};
  double layer_norm_eps = 1e-6;

  // ViT-B/32 encoder.
  static ModelConfig paper() { return {}; }

  static ModelConfig desk() {
    ModelConfig c;
    c.embed_dim = 64;
    c.depth = 2;
    c.n_heads = 4;
    return c;
  }

  // Gradient-check size.
  static ModelConfig tiny() {
    ModelConfig c;
    c.image_size = 64;
    c.embed_dim = 16;
    c.depth = 1;
    c.n_heads = 2;
    return c;
  }

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t n_patches() const { return grid() * grid(); }
  std::size_t n_tokens() const { return n_patches() + 1; }
  std::size_t patch_dim() const { return channels * patch_size * patch_size; }
  std::size_t head_dim() const { return embed_dim / n_heads; }
  std::size_t mlp_dim() const { return embed_dim * mlp_ratio; }
  std::size_t output_points() const { return head_dims[2]; }

  void validate() const {
    if (patch_size == 0 || image_size % patch_size != 0)
      fail(ErrorKind::Usage, "image_size must be divisible by patch_size");
    if (n_heads == 0 || embed_dim % n_heads != 0) fail(ErrorKind::Usage, "embed_dim must be divisible by n_heads");
    if (embed_dim == 0 || depth == 0 || mlp_ratio == 0 || channels == 0)
      fail(ErrorKind::Usage, "model dimensions must be positive");
    if (head_dims[2] != kTargetPoints) fail(ErrorKind::Usage, "reconstruction head must output 2048 points");
    if (head_dims[0] == 0 || head_dims[1] == 0) fail(ErrorKind::Usage, "head dimensions must be positive");
  }

  bool operator==(const ModelConfig&) const = default;

  nlohmann::json to_json() const {
    return {{"image_size", image_size}, {"patch_size", patch_size}, {"channels", channels},
            {"embed_dim", embed_dim},   {"depth", depth},           {"n_heads", n_heads},
            {"mlp_ratio", mlp_ratio},   {"head_dims", head_dims},   {"layer_norm_eps", layer_norm_eps},
            {"param_dtype", "f32"}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    try {
      c.image_size = j.at("image_size");
      c.patch_size = j.at("patch_size");
      c.channels = j.at("channels");
      c.embed_dim = j.at("embed_dim");
      c.depth = j.at("depth");
      c.n_heads = j.at("n_heads");
      c.mlp_ratio = j.at("mlp_ratio");
      c.head_dims = j.at("head_dims");
      c.layer_norm_eps = j.at("layer_norm_eps");
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Data, std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
  }
};

// Weighted windowed MAE: (global + 3 * Glx + 6 * GABA) / 10.
struct LossSpec {
  double global_weight = 1.0;
  double glx_lo_ppm = 3.55;
  double glx_hi_ppm = 3.95;
  double glx_weight = 3.0;
  double gaba_lo_ppm = 2.8;
  double gaba_hi_ppm = 3.2;
  double gaba_weight = 6.0;
  double divisor = 10.0;
};

struct TrainConfig {
  std::size_t batch_size = 100;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t epochs = 50;
  std::uint64_t seed = 0;
  // Corruption levels are drawn uniformly in [0, upper] per sample.
  std::array<double, 6> corruption_upper = CorruptionParams::kUpper;
  bool augment = true;
  // 0 = every sliding window each epoch; otherwise a fresh random subset of
  // this many windows per epoch.
  std::size_t samples_per_epoch = 0;
  // Zero-corruption validation windows per scan, evenly spaced over offsets.
  std::size_t val_windows_per_scan = 8;
  bool include_final_offset = false;
  double grad_clip_norm = 0.0;  // 0 disables

  // Optimizer settings as published.
  static TrainConfig paper() { return {}; }

  // Budgeted for a single CPU core.
  static TrainConfig desk() {
    TrainConfig t;
    t.batch_size = 16;
    t.learning_rate = 5e-4;
    t.epochs = 12;
    t.samples_per_epoch = 1536;
    t.val_windows_per_scan = 4;
    // The dataset already carries acquisition corruption; extra per-sample
    // corruption at this model size washes the input out.
    t.augment = false;
    return t;
  }

  void validate() const {
    if (batch_size == 0) fail(ErrorKind::Usage, "batch_size must be >= 1");
    if (!(learning_rate > 0.0)) fail(ErrorKind::Usage, "learning_rate must be > 0");
    if (epochs == 0) fail(ErrorKind::Usage, "epochs must be >= 1");
    for (std::size_t i = 0; i < corruption_upper.size(); ++i)
      if (!(corruption_upper[i] >= 0.0 && corruption_upper[i] <= CorruptionParams::kUpper[i]))
        fail(ErrorKind::Usage, "corruption upper bound outside the allowed range");
  }

  nlohmann::json to_json() const {
    return {{"batch_size", batch_size},
            {"learning_rate", learning_rate},
            {"optimizer", "adam"},
            {"beta1", beta1},
            {"beta2", beta2},
            {"epsilon", epsilon},
            {"epochs", epochs},
            {"seed", seed},
            {"augment", augment},
            {"corruption_upper", corruption_upper},
            {"samples_per_epoch", samples_per_epoch},
            {"val_windows_per_scan", val_windows_per_scan},
            {"grad_clip_norm", grad_clip_norm}};
  }
};

}  // namespace spectrovit::vit
