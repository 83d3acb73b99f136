#pragma once

#include <cmath>
#include <span>
#include <string>

#include "spectrovit/errors.hpp"
#include "spectrovit/signal.hpp"
#include "spectrovit/vit/config.hpp"

namespace spectrovit::vit {

class WeightedMae {
 public:
  WeightedMae(const LossSpec& spec, const PpmAxis& axis)
      : spec_(spec),
        n_(axis.size()),
        glx_(axis.require_window(spec.glx_lo_ppm, spec.glx_hi_ppm)),
        gaba_(axis.require_window(spec.gaba_lo_ppm, spec.gaba_hi_ppm)) {
    if (!(spec.divisor > 0.0)) fail(ErrorKind::Usage, "loss divisor must be positive");
  }

  const LossSpec& spec() const { return spec_; }
  IndexRange glx_window() const { return glx_; }
  IndexRange gaba_window() const { return gaba_; }

  template <typename P, typename Q>
  double operator()(std::span<const P> pred, std::span<const Q> target) const {
    check(pred.size(), target.size());
    auto mae = [&](IndexRange r) {
      double s = 0.0;
      for (std::size_t i = r.begin; i < r.end; ++i)
        s += std::abs(static_cast<double>(pred[i]) - static_cast<double>(target[i]));
      return s / static_cast<double>(r.size());
    };
    return (spec_.global_weight * mae({0, n_}) + spec_.glx_weight * mae(glx_) + spec_.gaba_weight * mae(gaba_)) /
           spec_.divisor;
  }

  // Writes scale * d loss / d pred into `grad` (subgradient 0 where pred == target).
  template <typename P, typename Q, typename G>
  void gradient(std::span<const P> pred, std::span<const Q> target, std::span<G> grad, double scale = 1.0) const {
    check(pred.size(), target.size());
    if (grad.size() != n_) fail(ErrorKind::Usage, "loss gradient buffer has the wrong length");
    const double wg = scale * spec_.global_weight / (spec_.divisor * static_cast<double>(n_));
    const double wx = scale * spec_.glx_weight / (spec_.divisor * static_cast<double>(glx_.size()));
    const double wa = scale * spec_.gaba_weight / (spec_.divisor * static_cast<double>(gaba_.size()));
    for (std::size_t i = 0; i < n_; ++i) {
      const double diff = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
      const double sign = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
      double w = wg;
      if (i >= glx_.begin && i < glx_.end) w += wx;
      if (i >= gaba_.begin && i < gaba_.end) w += wa;
      grad[i] = static_cast<G>(sign * w);
    }
  }

 private:
  void check(std::size_t a, std::size_t b) const {
    if (a != n_ || b != n_)
      fail(ErrorKind::Usage, "loss inputs must both have " + std::to_string(n_) + " points (got " + std::to_string(a) +
                                 " and " + std::to_string(b) + ")");
  }

  LossSpec spec_;
  std::size_t n_;
  IndexRange glx_;
  IndexRange gaba_;
};

}  // namespace spectrovit::vit
