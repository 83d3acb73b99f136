#pragma once

// Vision Transformer regressor: patch projection, class token, positional
// embeddings, pre-norm encoder blocks (multi-head self-attention and a GELU
// MLP, each with a residual), final layer norm on the class token, then a
// 512 -> 1024 -> 2048 head with ReLU on the hidden layers.
//
// forward() and backward() work on a batch. The input spectrogram has one
// channel replicated C times, so the patch projection uses the summed
// channel slices of the weight; the result is the same linear map.

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "spectrovit/errors.hpp"
#include "spectrovit/vit/config.hpp"
#include "spectrovit/vit/params.hpp"

namespace spectrovit::vit {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

// C-channel patch vectors of one image, patch index = grid_row * grid + grid_col.
inline std::vector<std::vector<float>> patchify(std::span<const float> img, const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t n = cfg.image_size, ps = cfg.patch_size, g = cfg.grid();
  if (img.size() != n * n)
    fail(ErrorKind::Usage, "image has " + std::to_string(img.size()) + " pixels, expected " + std::to_string(n * n));
  std::vector<std::vector<float>> out(g * g, std::vector<float>(cfg.patch_dim()));
  for (std::size_t gy = 0; gy < g; ++gy)
    for (std::size_t gx = 0; gx < g; ++gx) {
      auto& v = out[gy * g + gx];
      for (std::size_t c = 0; c < cfg.channels; ++c)
        for (std::size_t y = 0; y < ps; ++y)
          for (std::size_t x = 0; x < ps; ++x) v[(c * ps + y) * ps + x] = img[(gy * ps + y) * n + gx * ps + x];
    }
  return out;
}

// Inverse of patchify for channel `channel`.
inline std::vector<float> unpatchify(const std::vector<std::vector<float>>& patches, const ModelConfig& cfg,
                                     std::size_t channel = 0) {
  const std::size_t n = cfg.image_size, ps = cfg.patch_size, g = cfg.grid();
  if (patches.size() != g * g) fail(ErrorKind::Usage, "wrong patch count");
  std::vector<float> img(n * n);
  for (std::size_t p = 0; p < patches.size(); ++p) {
    if (patches[p].size() != cfg.patch_dim()) fail(ErrorKind::Usage, "wrong patch length");
    const std::size_t gy = p / g, gx = p % g;
    for (std::size_t y = 0; y < ps; ++y)
      for (std::size_t x = 0; x < ps; ++x)
        img[(gy * ps + y) * n + gx * ps + x] = patches[p][(channel * ps + y) * ps + x];
  }
  return img;
}

template <typename S>
struct LnCache {
  Mat<S> xhat;
  std::vector<S> rstd;
};

template <typename S>
struct BlockTrace {
  Mat<S> x_in;
  LnCache<S> ln1;
  Mat<S> h1, qkv;
  std::vector<Mat<S>> attn;  // softmax probabilities, one T x T matrix per (sample, head)
  Mat<S> o, x_mid;
  LnCache<S> ln2;
  Mat<S> h2, u, g;
};

template <typename S>
struct Trace {
  std::size_t batch = 0;
  Mat<S> patches;  // single-channel patch rows, B * n_patches x P*P
  std::vector<BlockTrace<S>> blocks;
  LnCache<S> lnf;
  Mat<S> cls_norm;
  Mat<S> z1, a1, z2, a2;
  bool valid = false;
};

namespace detail {

template <typename S>
Eigen::Map<const Mat<S>> cmat(const ModelParamsT<S>& p, std::size_t off, std::size_t r, std::size_t c) {
  return Eigen::Map<const Mat<S>>(p.ptr(off), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

template <typename S>
Eigen::Map<const RowVec<S>> cvec(const ModelParamsT<S>& p, std::size_t off, std::size_t n) {
  return Eigen::Map<const RowVec<S>>(p.ptr(off), static_cast<Eigen::Index>(n));
}

template <typename S>
Eigen::Map<Mat<S>> gmat(AlignedVector<S>& g, std::size_t off, std::size_t r, std::size_t c) {
  return Eigen::Map<Mat<S>>(g.data() + off, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

template <typename S>
Eigen::Map<RowVec<S>> gvec(AlignedVector<S>& g, std::size_t off, std::size_t n) {
  return Eigen::Map<RowVec<S>>(g.data() + off, static_cast<Eigen::Index>(n));
}

template <typename S>
Mat<S> layer_norm(const Mat<S>& x, const ModelParamsT<S>& p, std::size_t w, std::size_t b, LnCache<S>* cache) {
  const Eigen::Index rows = x.rows(), d = x.cols();
  const double eps = p.config.layer_norm_eps;
  Mat<S> xhat(rows, d);
  std::vector<S> rstd(static_cast<std::size_t>(rows));
  for (Eigen::Index r = 0; r < rows; ++r) {
    const S mean = x.row(r).mean();
    const S var = (x.row(r).array() - mean).square().mean();
    const S rs = S(1) / std::sqrt(var + static_cast<S>(eps));
    rstd[static_cast<std::size_t>(r)] = rs;
    xhat.row(r) = (x.row(r).array() - mean) * rs;
  }
  Mat<S> y = (xhat.array().rowwise() * cvec(p, w, static_cast<std::size_t>(d)).array()).matrix();
  y.rowwise() += cvec(p, b, static_cast<std::size_t>(d));
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

template <typename S>
Mat<S> layer_norm_backward(const Mat<S>& dy, const LnCache<S>& c, const ModelParamsT<S>& p, std::size_t w,
                           std::size_t b, AlignedVector<S>& grads) {
  const std::size_t d = static_cast<std::size_t>(dy.cols());
  gvec(grads, w, d) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  gvec(grads, b, d) += dy.colwise().sum();
  const Mat<S> dxhat = (dy.array().rowwise() * cvec(p, w, d).array()).matrix();
  Mat<S> dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const S m1 = dxhat.row(r).mean();
    const S m2 = (dxhat.row(r).array() * c.xhat.row(r).array()).mean();
    dx.row(r) = (dxhat.row(r).array() - m1 - c.xhat.row(r).array() * m2) * c.rstd[static_cast<std::size_t>(r)];
  }
  return dx;
}

template <typename S>
S gelu(S u) {
  return S(0.5) * u * (S(1) + std::erf(u * static_cast<S>(std::numbers::sqrt2 / 2.0)));
}

template <typename S>
S gelu_grad(S u) {
  const S cdf = S(0.5) * (S(1) + std::erf(u * static_cast<S>(std::numbers::sqrt2 / 2.0)));
  const S pdf = std::exp(S(-0.5) * u * u) * static_cast<S>(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  return cdf + u * pdf;
}

template <typename S>
Mat<S> linear(const Mat<S>& x, const ModelParamsT<S>& p, std::size_t w, std::size_t b, std::size_t in,
              std::size_t out) {
  Mat<S> y = x * cmat(p, w, in, out);
  y.rowwise() += cvec(p, b, out);
  return y;
}

// dW += x^T dy, db += colsum(dy); returns dy W^T.
template <typename S>
Mat<S> linear_backward(const Mat<S>& x, const Mat<S>& dy, const ModelParamsT<S>& p, std::size_t w, std::size_t b,
                       std::size_t in, std::size_t out, AlignedVector<S>& grads, bool need_dx = true) {
  gmat(grads, w, in, out).noalias() += x.transpose() * dy;
  gvec(grads, b, out) += dy.colwise().sum();
  if (!need_dx) return {};
  return dy * cmat(p, w, in, out).transpose();
}

}  // namespace detail

// Runs a batch of images (B * image_size^2 floats). Returns B x 2048.
template <typename S>
Mat<S> forward(const ModelParamsT<S>& p, std::span<const float> images, Trace<S>* trace = nullptr) {
  using namespace detail;
  const ModelConfig& cfg = p.config;
  const Layout& L = p.layout;
  const std::size_t px = cfg.image_size * cfg.image_size;
  if (images.empty() || images.size() % px != 0)
    fail(ErrorKind::Usage, "input of " + std::to_string(images.size()) + " values is not a whole number of " +
                               std::to_string(cfg.image_size) + "x" + std::to_string(cfg.image_size) + " images");
  if (p.data.size() != L.total) fail(ErrorKind::Usage, "parameter buffer does not match the model layout");
  const std::size_t B = images.size() / px, np = cfg.n_patches(), T = cfg.n_tokens(), D = cfg.embed_dim;
  const std::size_t H = cfg.n_heads, dh = cfg.head_dim(), pp = cfg.patch_size * cfg.patch_size, g = cfg.grid();
  const std::size_t ps = cfg.patch_size, n = cfg.image_size;
  const auto Ti = static_cast<Eigen::Index>(T), Di = static_cast<Eigen::Index>(D);
  const auto dhi = static_cast<Eigen::Index>(dh);

  Mat<S> patches(static_cast<Eigen::Index>(B * np), static_cast<Eigen::Index>(pp));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t q = 0; q < np; ++q) {
      const std::size_t gy = q / g, gx = q % g;
      for (std::size_t y = 0; y < ps; ++y)
        for (std::size_t x = 0; x < ps; ++x)
          patches(static_cast<Eigen::Index>(b * np + q), static_cast<Eigen::Index>(y * ps + x)) =
              static_cast<S>(images[b * px + (gy * ps + y) * n + gx * ps + x]);
    }

  Mat<S> w_sum = Mat<S>::Zero(static_cast<Eigen::Index>(pp), Di);
  for (std::size_t c = 0; c < cfg.channels; ++c) w_sum += cmat(p, L.patch_w + c * pp * D, pp, D);
  Mat<S> emb = patches * w_sum;
  emb.rowwise() += cvec(p, L.patch_b, D);

  const auto pos = cmat(p, L.pos, T, D);
  Mat<S> x(static_cast<Eigen::Index>(B * T), Di);
  for (std::size_t b = 0; b < B; ++b) {
    const auto r0 = static_cast<Eigen::Index>(b * T);
    x.row(r0) = cvec(p, L.cls, D) + pos.row(0);
    x.block(r0 + 1, 0, Ti - 1, Di) = emb.block(static_cast<Eigen::Index>(b * np), 0, Ti - 1, Di) + pos.bottomRows(Ti - 1);
  }

  if (trace) {
    *trace = Trace<S>{};
    trace->batch = B;
    trace->patches = std::move(patches);
  }

  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    const BlockLayout& bl = L.blocks[i];
    BlockTrace<S> bt;
    LnCache<S> ln1, ln2;
    Mat<S> h1 = layer_norm(x, p, bl.ln1_w, bl.ln1_b, trace ? &ln1 : nullptr);
    Mat<S> qkv = linear(h1, p, bl.qkv_w, bl.qkv_b, D, 3 * D);
    Mat<S> o(x.rows(), Di);
    if (trace) bt.attn.resize(B * H);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t h = 0; h < H; ++h) {
        const auto r0 = static_cast<Eigen::Index>(b * T), c0 = static_cast<Eigen::Index>(h * dh);
        const auto Q = qkv.block(r0, c0, Ti, dhi);
        const auto K = qkv.block(r0, Di + c0, Ti, dhi);
        const auto V = qkv.block(r0, 2 * Di + c0, Ti, dhi);
        Mat<S> a = (Q * K.transpose()) * scale;
        for (Eigen::Index r = 0; r < Ti; ++r) {
          const S mx = a.row(r).maxCoeff();
          a.row(r) = (a.row(r).array() - mx).exp();
          a.row(r) /= a.row(r).sum();
        }
        o.block(r0, c0, Ti, dhi).noalias() = a * V;
        if (trace) bt.attn[b * H + h] = std::move(a);
      }
    Mat<S> x_mid = x + linear(o, p, bl.proj_w, bl.proj_b, D, D);
    Mat<S> h2 = layer_norm(x_mid, p, bl.ln2_w, bl.ln2_b, trace ? &ln2 : nullptr);
    Mat<S> u = linear(h2, p, bl.fc1_w, bl.fc1_b, D, cfg.mlp_dim());
    Mat<S> gact = u.unaryExpr([](S v) { return gelu(v); });
    Mat<S> x_out = x_mid + linear(gact, p, bl.fc2_w, bl.fc2_b, cfg.mlp_dim(), D);
    if (trace) {
      bt.x_in = std::move(x);
      bt.ln1 = std::move(ln1);
      bt.h1 = std::move(h1);
      bt.qkv = std::move(qkv);
      bt.o = std::move(o);
      bt.x_mid = std::move(x_mid);
      bt.ln2 = std::move(ln2);
      bt.h2 = std::move(h2);
      bt.u = std::move(u);
      bt.g = std::move(gact);
      trace->blocks.push_back(std::move(bt));
    }
    x = std::move(x_out);
  }

  Mat<S> cls(static_cast<Eigen::Index>(B), Di);
  for (std::size_t b = 0; b < B; ++b) cls.row(static_cast<Eigen::Index>(b)) = x.row(static_cast<Eigen::Index>(b * T));
  LnCache<S> lnf;
  Mat<S> cls_norm = layer_norm(cls, p, L.norm_w, L.norm_b, trace ? &lnf : nullptr);
  const auto& hd = cfg.head_dims;
  Mat<S> z1 = linear(cls_norm, p, L.head_w[0], L.head_b[0], D, hd[0]);
  Mat<S> a1 = z1.cwiseMax(S(0));
  Mat<S> z2 = linear(a1, p, L.head_w[1], L.head_b[1], hd[0], hd[1]);
  Mat<S> a2 = z2.cwiseMax(S(0));
  Mat<S> out = linear(a2, p, L.head_w[2], L.head_b[2], hd[1], hd[2]);
  if (trace) {
    trace->lnf = std::move(lnf);
    trace->cls_norm = std::move(cls_norm);
    trace->z1 = std::move(z1);
    trace->a1 = std::move(a1);
    trace->z2 = std::move(z2);
    trace->a2 = std::move(a2);
    trace->valid = true;
  }
  return out;
}

// Reverse-mode gradients of sum(d_out .* forward_output) for every tensor,
// in the parameter buffer layout.
template <typename S>
AlignedVector<S> backward(const ModelParamsT<S>& p, const Trace<S>& t, const Mat<S>& d_out) {
  using namespace detail;
  if (!t.valid) fail(ErrorKind::Usage, "backward needs the trace of a forward pass");
  const ModelConfig& cfg = p.config;
  const Layout& L = p.layout;
  const std::size_t B = t.batch, np = cfg.n_patches(), T = cfg.n_tokens(), D = cfg.embed_dim;
  const std::size_t H = cfg.n_heads, dh = cfg.head_dim(), pp = cfg.patch_size * cfg.patch_size;
  const auto Ti = static_cast<Eigen::Index>(T), Di = static_cast<Eigen::Index>(D);
  const auto dhi = static_cast<Eigen::Index>(dh);
  const auto& hd = cfg.head_dims;
  if (static_cast<std::size_t>(d_out.rows()) != B || static_cast<std::size_t>(d_out.cols()) != hd[2])
    fail(ErrorKind::Usage, "output gradient shape does not match the traced batch");
  if (t.blocks.size() != cfg.depth) fail(ErrorKind::Usage, "trace does not match the model depth");

  AlignedVector<S> grads(L.total, S(0));

  Mat<S> d = linear_backward(t.a2, d_out, p, L.head_w[2], L.head_b[2], hd[1], hd[2], grads);
  d = (t.z2.array() > S(0)).select(d, S(0));
  d = linear_backward(t.a1, d, p, L.head_w[1], L.head_b[1], hd[0], hd[1], grads);
  d = (t.z1.array() > S(0)).select(d, S(0));
  d = linear_backward(t.cls_norm, d, p, L.head_w[0], L.head_b[0], D, hd[0], grads);
  const Mat<S> dcls = layer_norm_backward(d, t.lnf, p, L.norm_w, L.norm_b, grads);

  Mat<S> dx = Mat<S>::Zero(static_cast<Eigen::Index>(B * T), Di);
  for (std::size_t b = 0; b < B; ++b) dx.row(static_cast<Eigen::Index>(b * T)) = dcls.row(static_cast<Eigen::Index>(b));

  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  for (std::size_t i = cfg.depth; i-- > 0;) {
    const BlockLayout& bl = L.blocks[i];
    const BlockTrace<S>& bt = t.blocks[i];

    Mat<S> dg = linear_backward(bt.g, dx, p, bl.fc2_w, bl.fc2_b, cfg.mlp_dim(), D, grads);
    Mat<S> du = dg.array() * bt.u.unaryExpr([](S v) { return gelu_grad(v); }).array();
    Mat<S> dh2 = linear_backward(bt.h2, du, p, bl.fc1_w, bl.fc1_b, D, cfg.mlp_dim(), grads);
    dx += layer_norm_backward(dh2, bt.ln2, p, bl.ln2_w, bl.ln2_b, grads);

    Mat<S> d_o = linear_backward(bt.o, dx, p, bl.proj_w, bl.proj_b, D, D, grads);
    Mat<S> dqkv(dx.rows(), 3 * Di);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t h = 0; h < H; ++h) {
        const auto r0 = static_cast<Eigen::Index>(b * T), c0 = static_cast<Eigen::Index>(h * dh);
        const Mat<S>& a = bt.attn[b * H + h];
        const auto Q = bt.qkv.block(r0, c0, Ti, dhi);
        const auto K = bt.qkv.block(r0, Di + c0, Ti, dhi);
        const auto V = bt.qkv.block(r0, 2 * Di + c0, Ti, dhi);
        const auto dO = d_o.block(r0, c0, Ti, dhi);
        const Mat<S> da = dO * V.transpose();
        dqkv.block(r0, 2 * Di + c0, Ti, dhi).noalias() = a.transpose() * dO;
        Mat<S> ds = a.array() * (da.array().colwise() - (da.array() * a.array()).rowwise().sum());
        ds *= scale;
        dqkv.block(r0, c0, Ti, dhi).noalias() = ds * K;
        dqkv.block(r0, Di + c0, Ti, dhi).noalias() = ds.transpose() * Q;
      }
    Mat<S> dh1 = linear_backward(bt.h1, dqkv, p, bl.qkv_w, bl.qkv_b, D, 3 * D, grads);
    dx += layer_norm_backward(dh1, bt.ln1, p, bl.ln1_w, bl.ln1_b, grads);
  }

  auto gcls = gvec(grads, L.cls, D);
  auto gpos = gmat(grads, L.pos, T, D);
  Mat<S> demb(static_cast<Eigen::Index>(B * np), Di);
  for (std::size_t b = 0; b < B; ++b) {
    const auto r0 = static_cast<Eigen::Index>(b * T);
    gcls += dx.row(r0);
    gpos += dx.block(r0, 0, Ti, Di);
    demb.block(static_cast<Eigen::Index>(b * np), 0, Ti - 1, Di) = dx.block(r0 + 1, 0, Ti - 1, Di);
  }
  gvec(grads, L.patch_b, D) += demb.colwise().sum();
  const Mat<S> dw = t.patches.transpose() * demb;
  for (std::size_t c = 0; c < cfg.channels; ++c) gmat(grads, L.patch_w + c * pp * D, pp, D) += dw;
  return grads;
}

// Single-image convenience wrapper.
inline std::vector<float> predict(const ModelParams& p, std::span<const float> image) {
  const Mat<float> out = forward(p, image);
  return std::vector<float>(out.data(), out.data() + out.size());
}

}  // namespace spectrovit::vit
