#pragma once

// Central finite-difference check of the ViT gradients (double precision).

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "spectrovit/rng.hpp"
#include "spectrovit/signal.hpp"
#include "spectrovit/vit.hpp"

namespace oracle {

struct GradCheckResult {
  std::size_t tensors_checked = 0;
  std::size_t entries_checked = 0;
  double worst_ratio = 0.0;  // max |a - n| / (1e-4 * max(|a|, |n|) + 1e-6); pass iff <= 1
  std::string worst_tensor;
};

// Random parameters on a scale where every branch carries signal, a random
// image and target, then analytic vs central differences on a sample of
// entries of every tensor.
inline GradCheckResult gradient_check(std::uint64_t seed, std::size_t entries_per_tensor = 8, double h = 1e-5) {
  using namespace spectrovit;
  using namespace spectrovit::vit;
  const ModelConfig cfg = ModelConfig::tiny();
  ModelParamsT<double> p(cfg);
  Xoshiro256ss rng(seed);
  for (const auto& t : p.layout.tensors) {
    const bool scale = t.name.ends_with("norm1.weight") || t.name.ends_with("norm2.weight") || t.name == "norm.weight";
    for (auto& v : p.view(t)) v = (scale ? 1.0 : 0.0) + rng.normal(0.0, t.is_weight_matrix ? 0.15 : 0.1);
  }
  std::vector<float> image(cfg.image_size * cfg.image_size);
  for (auto& v : image) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  std::vector<double> target(kTargetPoints);
  for (auto& v : target) v = rng.normal(0.0, 1.0);
  const WeightedMae loss(LossSpec{}, PpmAxis::standard());

  auto eval = [&](const ModelParamsT<double>& q) {
    const Mat<double> out = forward(q, image);
    return loss(std::span<const double>(out.data(), kTargetPoints), std::span<const double>(target));
  };

  Trace<double> trace;
  const Mat<double> out = forward(p, image, &trace);
  Mat<double> d_out(1, static_cast<Eigen::Index>(kTargetPoints));
  loss.gradient(std::span<const double>(out.data(), kTargetPoints), std::span<const double>(target),
                std::span<double>(d_out.data(), kTargetPoints));
  const auto grads = backward(p, trace, d_out);

  GradCheckResult r;
  for (const auto& t : p.layout.tensors) {
    ++r.tensors_checked;
    const std::size_t m = std::min(entries_per_tensor, t.count);
    for (std::size_t k = 0; k < m; ++k) {
      const std::size_t idx = t.offset + (m == t.count ? k : rng.below(t.count));
      ModelParamsT<double> q = p;
      q.data[idx] = p.data[idx] + h;
      const double up = eval(q);
      q.data[idx] = p.data[idx] - h;
      const double down = eval(q);
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = grads[idx];
      const double ratio =
          std::abs(analytic - numeric) / (1e-4 * std::max(std::abs(analytic), std::abs(numeric)) + 1e-6);
      ++r.entries_checked;
      if (ratio > r.worst_ratio) {
        r.worst_ratio = ratio;
        r.worst_tensor = t.name;
      }
    }
  }
  return r;
}

}  // namespace oracle
