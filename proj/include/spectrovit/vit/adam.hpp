#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "spectrovit/errors.hpp"

namespace spectrovit::vit {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename S>
struct AdamState {
  std::vector<S> m;
  std::vector<S> v;
  std::uint64_t step = 0;
};

template <typename S>
void adam_step(std::span<S> params, std::span<const S> grads, AdamState<S>& st, const AdamConfig& cfg) {
  if (grads.size() != params.size()) fail(ErrorKind::Usage, "adam: gradient and parameter sizes differ");
  for (S g : grads)
    if (!std::isfinite(static_cast<double>(g))) fail(ErrorKind::Numerical, "diverged: non-finite gradient");
  if (st.m.size() != params.size()) {
    st.m.assign(params.size(), S(0));
    st.v.assign(params.size(), S(0));
  }
  ++st.step;
  const double t = static_cast<double>(st.step);
  const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
  const S c1 = static_cast<S>(1.0 / (1.0 - std::pow(cfg.beta1, t)));
  const S c2 = static_cast<S>(1.0 / (1.0 - std::pow(cfg.beta2, t)));
  const S lr = static_cast<S>(cfg.learning_rate), eps = static_cast<S>(cfg.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const S g = grads[i];
    st.m[i] = b1 * st.m[i] + (S(1) - b1) * g;
    st.v[i] = b2 * st.v[i] + (S(1) - b2) * g * g;
    params[i] -= lr * (st.m[i] * c1) / (std::sqrt(st.v[i] * c2) + eps);
  }
}

}  // namespace spectrovit::vit
