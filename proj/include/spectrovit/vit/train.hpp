#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spectrovit/dataset.hpp"
#include "spectrovit/errors.hpp"
#include "spectrovit/rng.hpp"
#include "spectrovit/simulator.hpp"
#include "spectrovit/spectrogram.hpp"
#include "spectrovit/vit/adam.hpp"
#include "spectrovit/vit/config.hpp"
#include "spectrovit/vit/loss.hpp"
#include "spectrovit/vit/model.hpp"
#include "spectrovit/vit/params.hpp"

namespace spectrovit::vit {

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double wall_seconds = 0.0;
  std::size_t steps = 0;
};

// Wall time stays out of the CSV so repeated runs give identical bytes.
inline std::string loss_log_csv(const std::vector<EpochLog>& log) {
  std::string out = "epoch,steps,train_loss,val_loss\n";
  char line[128];
  for (const auto& e : log) {
    std::snprintf(line, sizeof line, "%zu,%zu,%.9g,%.9g\n", e.epoch, e.steps, e.train_loss, e.val_loss);
    out += line;
  }
  return out;
}

// Spectrogram of a window after corruption, as a flat 224x224 float image.
inline void window_image(const SpectrogramBuilder& builder, const SampleWindow& w, const CorruptionParams& c,
                         std::span<float> out) {
  const TransientBlock b = corrupt_window(w, c);
  const SpectrogramImage img = builder.build(b.on, b.off);
  std::copy(img.pixels.begin(), img.pixels.end(), out.begin());
}

class Trainer {
 public:
  Trainer(const ModelConfig& model_cfg, const TrainConfig& cfg, const StftConfig& stft, const Dataset& data,
          std::optional<ModelParams> initial = std::nullopt)
      : cfg_(cfg),
        builder_(stft),
        loss_(LossSpec{}, data.target_axis()),
        params_(initial ? std::move(*initial) : init_params<float>(model_cfg, derive_seed(cfg.seed, 0x1417))) {
    cfg.validate();
    if (params_.config != model_cfg) fail(ErrorKind::Usage, "initial parameters do not match the model config");
    if (model_cfg.image_size != kImageSize)
      fail(ErrorKind::Usage, "training needs image_size " + std::to_string(kImageSize));
    for (const ScanRecord* s : data.scans_in(Split::Train))
      for (const SampleWindow& w : sliding_window_samples(*s, cfg.include_final_offset)) train_.push_back(w);
    if (train_.empty()) fail(ErrorKind::Data, "dataset has no training scans");

    // Validation: zero-corruption windows of the validation split, or of the
    // training scans when that split is empty.
    auto val_scans = data.scans_in(Split::Validation);
    val_from_train_ = val_scans.empty();
    if (val_from_train_) val_scans = data.scans_in(Split::Train);
    for (const ScanRecord* s : val_scans) {
      const std::size_t count = window_count(s->transients_per_subsignal(), cfg.include_final_offset);
      const std::size_t m = std::min(std::max<std::size_t>(cfg.val_windows_per_scan, 1), count);
      for (std::size_t k = 0; k < m; ++k) {
        const std::size_t off = m == 1 ? 0 : k * (count - 1) / (m - 1);
        val_.push_back({s, off, kWindowSize});
      }
    }
    const std::size_t px = kImageSize * kImageSize;
    val_images_.resize(val_.size() * px);
    for (std::size_t i = 0; i < val_.size(); ++i)
      window_image(builder_, val_[i], CorruptionParams{}, std::span<float>(val_images_).subspan(i * px, px));
  }

  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }
  std::size_t train_samples() const { return train_.size(); }
  std::size_t samples_per_epoch() const {
    return cfg_.samples_per_epoch ? std::min(cfg_.samples_per_epoch, train_.size()) : train_.size();
  }
  bool validation_from_train() const { return val_from_train_; }

  double validation_loss() const {
    const std::size_t px = kImageSize * kImageSize;
    double total = 0.0;
    const std::size_t chunk = 16;
    for (std::size_t i = 0; i < val_.size(); i += chunk) {
      const std::size_t n = std::min(chunk, val_.size() - i);
      const Mat<float> out = forward(params_, std::span<const float>(val_images_).subspan(i * px, n * px));
      for (std::size_t b = 0; b < n; ++b) total += sample_loss(out, b, val_[i + b]);
    }
    return total / static_cast<double>(val_.size());
  }

  // One pass: shuffle, draw per-sample corruption, batch, Adam step per batch.
  EpochLog run_epoch(std::size_t epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(train_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Xoshiro256ss shuffle_rng(derive_seed(cfg_.seed, 2 * epoch + 1));
    shuffle(order, shuffle_rng);
    order.resize(samples_per_epoch());

    const std::uint64_t corruption_seed = derive_seed(cfg_.seed, 2 * epoch + 2);
    const std::size_t px = kImageSize * kImageSize, B = cfg_.batch_size;
    const AdamConfig adam{cfg_.learning_rate, cfg_.beta1, cfg_.beta2, cfg_.epsilon};
    AlignedVector<float> images;
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += B) {
      const std::size_t n = std::min(B, order.size() - start);
      images.assign(n * px, 0.0f);
      for (std::size_t b = 0; b < n; ++b) {
        CorruptionParams c;
        if (cfg_.augment) {
          Xoshiro256ss rng(derive_seed(corruption_seed, start + b));
          c = CorruptionParams::sample_uniform(rng, cfg_.corruption_upper);
        }
        window_image(builder_, train_[order[start + b]], c, std::span<float>(images).subspan(b * px, px));
      }
      Trace<float> trace;
      const Mat<float> out = forward(params_, images, &trace);
      Mat<float> d_out(out.rows(), out.cols());
      double batch_loss = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const auto& target = train_[order[start + b]].target().values;
        const auto row = std::span<const float>(out.data() + b * out.cols(), static_cast<std::size_t>(out.cols()));
        batch_loss += loss_(row, std::span<const double>(target));
        loss_.gradient(row, std::span<const double>(target),
                       std::span<float>(d_out.data() + b * d_out.cols(), static_cast<std::size_t>(d_out.cols())),
                       1.0 / static_cast<double>(n));
      }
      if (!std::isfinite(batch_loss))
        fail(ErrorKind::Numerical, "diverged: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                       std::to_string(steps + 1));
      AlignedVector<float> grads = backward(params_, trace, d_out);
      clip(grads);
      try {
        adam_step(std::span<float>(params_.data), std::span<const float>(grads), adam_, adam);
      } catch (const Error& e) {
        fail(e.kind(), std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(steps + 1));
      }
      ++params_.optimizer_step;
      ++steps;
      loss_sum += batch_loss;
    }
    EpochLog log;
    log.epoch = epoch;
    log.steps = steps;
    log.train_loss = loss_sum / static_cast<double>(order.size());
    log.val_loss = validation_loss();
    log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return log;
  }

 private:
  double sample_loss(const Mat<float>& out, std::size_t b, const SampleWindow& w) const {
    const auto row = std::span<const float>(out.data() + b * out.cols(), static_cast<std::size_t>(out.cols()));
    return loss_(row, std::span<const double>(w.target().values));
  }

  void clip(AlignedVector<float>& g) const {
    if (!(cfg_.grad_clip_norm > 0.0)) return;
    double sq = 0.0;
    for (float v : g) sq += static_cast<double>(v) * v;
    const double norm = std::sqrt(sq);
    if (norm > cfg_.grad_clip_norm) {
      const float s = static_cast<float>(cfg_.grad_clip_norm / norm);
      for (float& v : g) v *= s;
    }
  }

  TrainConfig cfg_;
  SpectrogramBuilder builder_;
  WeightedMae loss_;
  ModelParams params_;
  AdamState<float> adam_;
  std::vector<SampleWindow> train_;
  std::vector<SampleWindow> val_;
  std::vector<float> val_images_;
  bool val_from_train_ = false;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochLog> log;
  double initial_val_loss = 0.0;
};

// Trains for cfg.epochs epochs numbered from first_epoch (which also keys the
// shuffle and corruption streams). `on_epoch` sees each log row as it is produced.
inline TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg, const Dataset& data,
                         const StftConfig& stft = StftConfig{}, std::optional<ModelParams> initial = std::nullopt,
                         const std::function<void(const EpochLog&)>& on_epoch = {}, std::size_t first_epoch = 1) {
  Trainer trainer(model_cfg, cfg, stft, data, std::move(initial));
  TrainResult result{trainer.params(), {}, trainer.validation_loss()};
  double elapsed = 0.0;
  for (std::size_t e = first_epoch; e < first_epoch + cfg.epochs; ++e) {
    EpochLog log = trainer.run_epoch(e);
    elapsed += log.wall_seconds;
    log.wall_seconds = elapsed;
    if (on_epoch) on_epoch(log);
    result.log.push_back(log);
  }
  result.params = trainer.params();
  return result;
}

}  // namespace spectrovit::vit
