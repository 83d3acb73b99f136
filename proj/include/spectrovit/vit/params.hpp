#pragma once

// Flat parameter buffer with a named manifest.
//
// Manifest order (also the serialization order):
//   patch_embed.weight [C*P*P, D]   patch_embed.bias [D]
//   cls_token [D]                   pos_embed [T, D]
//   blocks.i.norm1.{weight,bias} [D]
//   blocks.i.attn.qkv.weight [D, 3D]  blocks.i.attn.qkv.bias [3D]
//   blocks.i.attn.proj.weight [D, D]  blocks.i.attn.proj.bias [D]
//   blocks.i.norm2.{weight,bias} [D]
//   blocks.i.mlp.fc1.weight [D, H]  blocks.i.mlp.fc1.bias [H]
//   blocks.i.mlp.fc2.weight [H, D]  blocks.i.mlp.fc2.bias [D]
//   norm.{weight,bias} [D]
//   head.fc1.weight [D, 512] ... head.fc3.weight [1024, 2048], with biases
// Linear weights are stored [in, out] row-major. Patch vectors are
// flattened channel-major, then row, then column.
//
// In memory every tensor starts on a 64-byte boundary of an aligned buffer;
// Eigen's vectorized reductions peel by address, so this keeps results
// independent of where the allocator puts the buffer.
//
// VITP1 file: 8-byte magic "VITP1\0\0\0", u64 manifest length, manifest
// JSON, then the f32 little-endian payload, tensors packed back to back in
// manifest order ("offset" in the manifest is the packed element offset).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "spectrovit/dataset.hpp"
#include "spectrovit/errors.hpp"
#include "spectrovit/rng.hpp"
#include "spectrovit/vit/config.hpp"

namespace spectrovit::vit {

struct TensorInfo {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;       // in the aligned in-memory buffer
  std::size_t file_offset = 0;  // in the packed VITP1 payload
  std::size_t count = 0;
  bool is_weight_matrix = false;  // initialized with truncated normal
};

struct BlockLayout {
  std::size_t ln1_w, ln1_b, qkv_w, qkv_b, proj_w, proj_b, ln2_w, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;
};

struct Layout {
  std::size_t patch_w, patch_b, cls, pos;
  std::vector<BlockLayout> blocks;
  std::size_t norm_w, norm_b;
  std::size_t head_w[3], head_b[3];
  std::vector<TensorInfo> tensors;
  std::size_t total = 0;         // buffer length including alignment padding
  std::size_t packed_total = 0;  // sum of tensor sizes

  explicit Layout(const ModelConfig& cfg) {
    cfg.validate();
    const std::size_t d = cfg.embed_dim;
    auto add = [&](std::string name, std::vector<std::size_t> shape, bool weight = false) {
      std::size_t n = 1;
      for (auto s : shape) n *= s;
      constexpr std::size_t align = 64;
      const std::size_t per = std::max<std::size_t>(1, align / sizeof(double));
      total = (total + per - 1) / per * per;
      tensors.push_back({std::move(name), std::move(shape), total, packed_total, n, weight});
      total += n;
      packed_total += n;
      return tensors.back().offset;
    };
    patch_w = add("patch_embed.weight", {cfg.patch_dim(), d}, true);
    patch_b = add("patch_embed.bias", {d});
    cls = add("cls_token", {d});
    pos = add("pos_embed", {cfg.n_tokens(), d}, true);
    for (std::size_t i = 0; i < cfg.depth; ++i) {
      const std::string p = "blocks." + std::to_string(i) + ".";
      BlockLayout b{};
      b.ln1_w = add(p + "norm1.weight", {d});
      b.ln1_b = add(p + "norm1.bias", {d});
      b.qkv_w = add(p + "attn.qkv.weight", {d, 3 * d}, true);
      b.qkv_b = add(p + "attn.qkv.bias", {3 * d});
      b.proj_w = add(p + "attn.proj.weight", {d, d}, true);
      b.proj_b = add(p + "attn.proj.bias", {d});
      b.ln2_w = add(p + "norm2.weight", {d});
      b.ln2_b = add(p + "norm2.bias", {d});
      b.fc1_w = add(p + "mlp.fc1.weight", {d, cfg.mlp_dim()}, true);
      b.fc1_b = add(p + "mlp.fc1.bias", {cfg.mlp_dim()});
      b.fc2_w = add(p + "mlp.fc2.weight", {cfg.mlp_dim(), d}, true);
      b.fc2_b = add(p + "mlp.fc2.bias", {d});
      blocks.push_back(b);
    }
    norm_w = add("norm.weight", {d});
    norm_b = add("norm.bias", {d});
    std::size_t in = d;
    for (int k = 0; k < 3; ++k) {
      const std::string p = "head.fc" + std::to_string(k + 1) + ".";
      head_w[k] = add(p + "weight", {in, cfg.head_dims[k]}, true);
      head_b[k] = add(p + "bias", {cfg.head_dims[k]});
      in = cfg.head_dims[k];
    }
  }
};

template <typename S>
using AlignedVector = std::vector<S, Eigen::aligned_allocator<S>>;

template <typename S>
struct ModelParamsT {
  ModelConfig config;
  Layout layout;
  AlignedVector<S> data;  // padding entries stay zero
  std::uint64_t optimizer_step = 0;

  explicit ModelParamsT(const ModelConfig& cfg) : config(cfg), layout(cfg), data(layout.total, S(0)) {}

  S* ptr(std::size_t offset) { return data.data() + offset; }
  const S* ptr(std::size_t offset) const { return data.data() + offset; }

  const TensorInfo& tensor(const std::string& name) const {
    for (const auto& t : layout.tensors)
      if (t.name == name) return t;
    fail(ErrorKind::Usage, "no tensor named '" + name + "'");
  }
  std::span<S> view(const TensorInfo& t) { return std::span<S>(data).subspan(t.offset, t.count); }
  std::span<const S> view(const TensorInfo& t) const { return std::span<const S>(data).subspan(t.offset, t.count); }

  template <typename T>
  ModelParamsT<T> cast() const {
    ModelParamsT<T> out(config);
    std::transform(data.begin(), data.end(), out.data.begin(), [](S v) { return static_cast<T>(v); });
    out.optimizer_step = optimizer_step;
    return out;
  }

  void require_finite() const {
    for (const auto& t : layout.tensors)
      for (S v : view(t))
        if (!std::isfinite(static_cast<double>(v))) fail(ErrorKind::Numerical, "tensor '" + t.name + "' is not finite");
  }
};

using ModelParams = ModelParamsT<float>;

// Truncated normal (resampled beyond 2 sd), std 0.02, for weight matrices and
// positional embeddings; zeros for biases and the class token; ones for
// layer-norm scales.
template <typename S>
ModelParamsT<S> init_params(const ModelConfig& cfg, std::uint64_t seed, double std_dev = 0.02) {
  ModelParamsT<S> p(cfg);
  Xoshiro256ss rng(seed);
  for (const auto& t : p.layout.tensors) {
    auto v = p.view(t);
    const bool ln_scale = t.name.ends_with("norm1.weight") || t.name.ends_with("norm2.weight") || t.name == "norm.weight";
    if (t.is_weight_matrix) {
      for (auto& x : v) {
        double z;
        do z = rng.normal(); while (std::abs(z) > 2.0);
        x = static_cast<S>(z * std_dev);
      }
    } else if (ln_scale) {
      std::fill(v.begin(), v.end(), S(1));
    }
  }
  return p;
}

inline constexpr char kParamMagic[8] = {'V', 'I', 'T', 'P', '1', 0, 0, 0};

inline nlohmann::json manifest_json(const ModelParams& p) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& t : p.layout.tensors)
    tensors.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", t.file_offset}, {"count", t.count}});
  return {{"format", "VITP1"},
          {"dtype", "f32le"},
          {"config", p.config.to_json()},
          {"tensors", tensors},
          {"payload_bytes", p.layout.packed_total * sizeof(float)},
          {"optimizer_step", p.optimizer_step}};
}

inline void export_params(const std::filesystem::path& path, const ModelParams& p) {
  const std::string manifest = manifest_json(p).dump();
  std::vector<char> bytes(kParamMagic, kParamMagic + 8);
  io::put<std::uint64_t>(bytes, manifest.size());
  bytes.insert(bytes.end(), manifest.begin(), manifest.end());
  bytes.reserve(bytes.size() + p.layout.packed_total * sizeof(float));
  for (const auto& t : p.layout.tensors)
    for (float v : p.view(t)) io::put(bytes, v);
  io::write_file(path, bytes);
}

namespace detail {

inline std::string shape_str(const std::vector<std::size_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? ", " : "") + std::to_string(s[i]);
  return out + "]";
}

}  // namespace detail

// Reads a VITP1 file. With `expected`, every tensor must match the layout of
// that configuration. Nothing is returned unless the whole file validates.
inline ModelParams import_params(const std::filesystem::path& path, const ModelConfig* expected = nullptr) {
  io::Reader r(io::read_file(path), path.string());
  if (r.get_string(8) != std::string(kParamMagic, 8)) fail(ErrorKind::Data, path.string() + ": not a VITP1 file");
  const auto len = r.get<std::uint64_t>();
  if (len > r.remaining()) fail(ErrorKind::Data, path.string() + ": truncated manifest");
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(r.get_string(len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Data, path.string() + ": bad manifest: " + e.what());
  }
  const ModelConfig file_cfg = ModelConfig::from_json(m.at("config"));
  const ModelConfig cfg = expected ? *expected : file_cfg;
  ModelParams p(cfg);
  const auto& tensors = m.at("tensors");
  if (tensors.size() != p.layout.tensors.size())
    fail(ErrorKind::Data, path.string() + ": expected " + std::to_string(p.layout.tensors.size()) +
                              " tensors, found " + std::to_string(tensors.size()));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& want = p.layout.tensors[i];
    const std::string name = tensors[i].at("name");
    const auto shape = tensors[i].at("shape").get<std::vector<std::size_t>>();
    if (name != want.name)
      fail(ErrorKind::Data, path.string() + ": tensor " + std::to_string(i) + " expected '" + want.name +
                                "', found '" + name + "'");
    if (shape != want.shape || tensors[i].at("offset").get<std::size_t>() != want.file_offset)
      fail(ErrorKind::Data, path.string() + ": tensor '" + name + "' expected shape " + detail::shape_str(want.shape) +
                                ", found " + detail::shape_str(shape));
  }
  const std::size_t payload = p.layout.packed_total * sizeof(float);
  if (r.remaining() != payload)
    fail(ErrorKind::Data, path.string() + ": " + (r.remaining() < payload ? "truncated" : "oversized") +
                              " payload (expected " + std::to_string(payload) + " bytes, found " +
                              std::to_string(r.remaining()) + ")");
  for (const auto& t : p.layout.tensors)
    for (auto& v : p.view(t)) v = r.get<float>();
  p.optimizer_step = m.value("optimizer_step", std::uint64_t{0});
  p.require_finite();
  return p;
}

}  // namespace spectrovit::vit
