#pragma once

// Face embedding CNN and its identity head.
//
// Each stage is a stride-2 3x3 lead convolution followed by residual units
// x + relu(conv(relu(conv(x)))). The last feature map is flattened into FC-1,
// whose output is the embedding. FC-2 (no bias) scores identities and is
// trained with an angular-margin softmax.

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "kinform/dataset.hpp"
#include "kinform/ops.hpp"
#include "kinform/rng.hpp"

namespace kinform {

struct BackboneConfig {
  std::string variant = "tiny";
  std::size_t input_side = 16;
  std::vector<std::size_t> widths = {8, 16};
  std::vector<std::size_t> units = {1, 1};
  std::size_t embedding_dim = 16;
  std::size_t identities = 8;
  /// Length of vector inputs when there are no conv stages.
  std::size_t input_dim = 0;

  static BackboneConfig paper_shaped() {
    return {"paper-shaped", 108, {64, 128, 256, 512}, {1, 2, 4, 1}, 512, 10676, 0};
  }
  static BackboneConfig tiny(std::size_t identities = 8, std::size_t side = 16, std::size_t dim = 16) {
    return {"tiny", side, {8, 16}, {1, 1}, dim, identities, 0};
  }
  /// FC-1 and FC-2 only, over precomputed input vectors.
  static BackboneConfig projection(std::size_t input_dim, std::size_t dim, std::size_t identities) {
    return {"projection", 0, {}, {}, dim, identities, input_dim};
  }

  bool is_projection() const { return widths.empty(); }

  void validate() const {
    if (widths.size() != units.size()) throw ConfigError("backbone: widths and units differ in length");
    if (is_projection()) {
      if (input_dim == 0) throw ConfigError("backbone: projection needs a positive input_dim");
      if (embedding_dim == 0 || identities < 2) throw ConfigError("backbone: need d > 0 and at least 2 identities");
      return;
    }
    for (std::size_t w : widths)
      if (w == 0) throw ConfigError("backbone: zero stage width");
    if (input_side < 2) throw ConfigError("backbone: input side too small");
    if (embedding_dim == 0 || identities < 2) throw ConfigError("backbone: need d > 0 and at least 2 identities");
  }

  /// Spatial side after stage `s` (0-based).
  std::size_t side_after(std::size_t stage) const {
    std::size_t side = input_side;
    for (std::size_t s = 0; s <= stage; ++s) side = (side + 2 - 3) / 2 + 1;
    return side;
  }

  std::size_t flat_features() const {
    if (is_projection()) return input_dim;
    const std::size_t side = side_after(widths.size() - 1);
    return widths.back() * side * side;
  }
};

struct ResidualUnit {
  Tensor w1, b1, w2, b2;
};

struct BackboneStage {
  Tensor lead_w, lead_b;
  std::vector<ResidualUnit> units;
};

/// One parameter set shared by both siamese branches.
struct BackboneParams {
  BackboneConfig cfg;
  std::vector<BackboneStage> stages;
  Tensor fc1_w, fc1_b;  // [d, flat], [d]
  Tensor fc2_w;         // [identities, d]

  /// Every trainable tensor, in a fixed order. FC-2 comes last.
  std::vector<NamedTensor> named() const {
    std::vector<NamedTensor> out;
    for (std::size_t s = 0; s < stages.size(); ++s) {
      const std::string p = "backbone.conv" + std::to_string(s + 1);
      out.push_back({p + ".lead.w", stages[s].lead_w});
      out.push_back({p + ".lead.b", stages[s].lead_b});
      for (std::size_t u = 0; u < stages[s].units.size(); ++u) {
        const std::string q = p + ".unit" + std::to_string(u + 1);
        const auto& r = stages[s].units[u];
        out.push_back({q + ".w1", r.w1});
        out.push_back({q + ".b1", r.b1});
        out.push_back({q + ".w2", r.w2});
        out.push_back({q + ".b2", r.b2});
      }
    }
    out.push_back({"backbone.fc1.w", fc1_w});
    out.push_back({"backbone.fc1.b", fc1_b});
    out.push_back({"backbone.fc2.w", fc2_w});
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : named()) n += t.tensor.numel();
    return n;
  }
};

namespace detail {

inline Tensor kaiming_conv(Rng& rng, std::size_t co, std::size_t ci) {
  const double std_dev = std::sqrt(2.0 / static_cast<double>(ci * 9));
  std::vector<Real> v(co * ci * 9);
  for (auto& x : v) x = static_cast<Real>(std_dev * normal(rng));
  return Tensor({co, ci, 3, 3}, std::move(v), true);
}

inline Tensor small_uniform(Rng& rng, Shape shape, double bound) {
  std::vector<Real> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<Real>(uniform(rng, -bound, bound));
  return Tensor(std::move(shape), std::move(v), true);
}

}  // namespace detail

inline BackboneParams init_backbone(const BackboneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  BackboneParams p;
  p.cfg = cfg;
  Rng rng = make_rng(seed, "backbone-init");
  std::size_t in = 3;
  for (std::size_t s = 0; s < cfg.widths.size(); ++s) {
    const std::size_t c = cfg.widths[s];
    BackboneStage st;
    st.lead_w = detail::kaiming_conv(rng, c, in);
    st.lead_b = Tensor::zeros({c}, true);
    for (std::size_t u = 0; u < cfg.units[s]; ++u) {
      // The second conv of each unit starts small so units begin near identity.
      ResidualUnit r{detail::kaiming_conv(rng, c, c), Tensor::zeros({c}, true), detail::kaiming_conv(rng, c, c),
                     Tensor::zeros({c}, true)};
      for (auto& v : r.w2.data()) v *= Real(0.1);
      st.units.push_back(std::move(r));
    }
    p.stages.push_back(std::move(st));
    in = c;
  }
  const std::size_t flat = cfg.flat_features();
  p.fc1_w = detail::small_uniform(rng, {cfg.embedding_dim, flat}, std::sqrt(3.0 / static_cast<double>(flat)));
  p.fc1_b = Tensor::zeros({cfg.embedding_dim}, true);
  p.fc2_w = detail::small_uniform(rng, {cfg.identities, cfg.embedding_dim},
                                  1.0 / std::sqrt(static_cast<double>(cfg.embedding_dim)));
  return p;
}

/// All parameters zero.
inline BackboneParams zero_backbone(const BackboneConfig& cfg) {
  BackboneParams p = init_backbone(cfg, 0);
  for (auto& t : p.named()) std::fill(t.tensor.data().begin(), t.tensor.data().end(), Real(0));
  return p;
}

/// Interleaved 8-bit RGB -> [3, H, W], scaled as (p - 127.5) / 128.
inline Tensor image_tensor(const PixelImage& img) {
  const std::size_t H = img.height, W = img.width;
  std::vector<Real> v(3 * H * W);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        v[(c * H + y) * W + x] = (static_cast<Real>(img.pixels[(y * W + x) * 3 + c]) - Real(127.5)) / Real(128);
  return Tensor({3, H, W}, std::move(v));
}

struct TraceRow {
  std::string layer;
  Shape shape;
};
using ShapeTrace = std::vector<TraceRow>;

inline std::string stage_name(std::size_t s) { return "Conv" + std::to_string(s + 1) + ".x"; }

/// Embedding of an image tensor [3, side, side]. Appends stage outputs to
/// `trace` when given.
inline Tensor embed(const Tensor& x, const BackboneParams& p, ShapeTrace* trace = nullptr) {
  if (p.cfg.is_projection()) {
    if (x.numel() != p.cfg.input_dim) {
      throw ShapeError("embed: expected an input vector of length " + std::to_string(p.cfg.input_dim) + ", got " +
                       shape_str(x.shape()));
    }
    if (trace) trace->push_back({"input", x.shape()});
    Tensor e = linear(x, p.fc1_w, p.fc1_b);
    if (trace) trace->push_back({"FC-1", e.shape()});
    return e;
  }
  const std::size_t side = p.cfg.input_side;
  if (x.rank() != 3 || x.dim(0) != 3 || x.dim(1) != side || x.dim(2) != side) {
    throw ShapeError("embed: expected input [3, " + std::to_string(side) + ", " + std::to_string(side) + "], got " +
                     shape_str(x.shape()));
  }
  if (trace) trace->push_back({"input", x.shape()});
  Tensor h = x;
  for (std::size_t s = 0; s < p.stages.size(); ++s) {
    const auto& st = p.stages[s];
    h = relu(conv2d(h, st.lead_w, st.lead_b, 2, 1));
    for (const auto& u : st.units) {
      Tensor t = relu(conv2d(h, u.w1, u.b1, 1, 1));
      t = relu(conv2d(t, u.w2, u.b2, 1, 1));
      h = add(h, t);
    }
    if (trace) trace->push_back({stage_name(s), h.shape()});
  }
  Tensor e = linear(reshape(h, {h.numel()}), p.fc1_w, p.fc1_b);
  if (trace) trace->push_back({"FC-1", e.shape()});
  return e;
}

inline Tensor embed(const PixelImage& img, const BackboneParams& p, ShapeTrace* trace = nullptr) {
  if (img.width != p.cfg.input_side || img.height != p.cfg.input_side) {
    throw ShapeError("embed: image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                     ", backbone expects " + std::to_string(p.cfg.input_side) + "x" +
                     std::to_string(p.cfg.input_side));
  }
  return embed(image_tensor(img), p, trace);
}

/// Plain FC-2 scores.
inline Tensor identity_logits(const Tensor& embedding, const BackboneParams& p) {
  if (embedding.numel() != p.cfg.embedding_dim) {
    throw ShapeError("identity_logits: embedding has " + std::to_string(embedding.numel()) +
                     " values, FC-2 expects " + std::to_string(p.cfg.embedding_dim));
  }
  return linear(embedding, p.fc2_w);
}

/// Layer-by-layer shapes without running the network.
inline ShapeTrace backbone_shape_trace(const BackboneConfig& cfg) {
  ShapeTrace t;
  if (cfg.is_projection()) {
    t.push_back({"input", {cfg.input_dim}});
  } else {
    t.push_back({"input", {3, cfg.input_side, cfg.input_side}});
  }
  for (std::size_t s = 0; s < cfg.widths.size(); ++s) {
    const std::size_t side = cfg.side_after(s);
    t.push_back({stage_name(s), {cfg.widths[s], side, side}});
  }
  t.push_back({"FC-1", {cfg.embedding_dim}});
  t.push_back({"FC-2", {cfg.identities}});
  return t;
}

// ---------------------------------------------------------------------------
// Angular-margin softmax

struct MarginConfig {
  int m = 4;
  double lambda = 5.0;
};

namespace detail {

/// Chebyshev T_m(c) and U_{m-1}(c).
inline std::pair<double, double> chebyshev(int m, double c) {
  double t0 = 1, t1 = c;
  double u0 = 1, u1 = 2 * c;
  if (m == 0) return {1.0, 0.0};
  for (int n = 1; n < m; ++n) {
    const double t2 = 2 * c * t1 - t0;
    t0 = t1;
    t1 = t2;
    if (n < m - 1) {
      const double u2 = 2 * c * u1 - u0;
      u0 = u1;
      u1 = u2;
    }
  }
  return {t1, m == 1 ? 1.0 : u1};
}

}  // namespace detail

/// Margin-modified logits. Rows u_j = w_j / |w_j|; non-target logits are
/// u_j . x. The target logit is |x| * g(cos theta) with
/// g = (lambda c + psi(c)) / (1 + lambda), psi = (-1)^k cos(m theta) - 2k,
/// k = floor(m theta / pi).
inline Tensor margin_logits(const Tensor& x, const Tensor& weight, std::size_t label, const MarginConfig& mc) {
  detail::require(weight.rank() == 2 && weight.dim(1) == x.numel(), "margin_logits",
                  "weight must be [K, " + std::to_string(x.numel()) + "], got " + shape_str(weight.shape()));
  const std::size_t K = weight.dim(0), d = x.numel();
  if (label >= K) {
    throw ShapeError("margin_logits: identity label " + std::to_string(label) + " out of range for " +
                     std::to_string(K) + " identities");
  }
  if (mc.m < 1) throw ConfigError("margin_logits: margin m must be >= 1");
  if (!(mc.lambda >= 0)) throw ConfigError("margin_logits: lambda must be non-negative");

  const Real* X = x.data().data();
  const Real* W = weight.data().data();
  double r2 = 0;
  for (std::size_t i = 0; i < d; ++i) r2 += double(X[i]) * X[i];
  const double r = std::sqrt(r2);
  std::vector<double> norms(K), dots(K);
  std::vector<Real> z(K);
  for (std::size_t j = 0; j < K; ++j) {
    double n2 = 0, dot = 0;
    for (std::size_t i = 0; i < d; ++i) {
      n2 += double(W[j * d + i]) * W[j * d + i];
      dot += double(W[j * d + i]) * X[i];
    }
    norms[j] = std::sqrt(n2);
    dots[j] = norms[j] > 0 ? dot / norms[j] : 0.0;  // u_j . x
    z[j] = static_cast<Real>(dots[j]);
  }
  // Target: degenerate when either vector vanishes; fall back to the plain logit.
  const bool live = r > 1e-12 && norms[label] > 0;
  double c = 0, g = 0, gp = 0;
  if (live) {
    c = std::clamp(dots[label] / r, -1.0, 1.0);
    const double theta = std::acos(c);
    int k = static_cast<int>(std::floor(mc.m * theta / std::numbers::pi));
    k = std::clamp(k, 0, mc.m - 1);
    detail::probe_branch(0x100 + static_cast<std::uint64_t>(k));
    const auto [tm, um1] = detail::chebyshev(mc.m, c);
    const double sign = (k % 2 == 0) ? 1.0 : -1.0;
    const double psi = sign * tm - 2.0 * k;
    const double dpsi = sign * mc.m * um1;
    g = (mc.lambda * c + psi) / (1.0 + mc.lambda);
    gp = (mc.lambda + dpsi) / (1.0 + mc.lambda);
    z[label] = static_cast<Real>(r * g);
  }
  Tensor y = detail::make({K}, std::move(z), "margin_logits");
  auto xn = x.node_ptr(), wn = weight.node_ptr(), yn = y.node_ptr();
  detail::record({&x, &weight}, y, [xn, wn, yn, K, d, label, norms, dots, r, c, g, gp, live] {
    const Real* G = yn->grad.data();
    const Real* Xv = xn->data.data();
    const Real* Wv = wn->data.data();
    Real* gx = detail::grad_of(xn);
    Real* gw = detail::grad_of(wn);
    for (std::size_t j = 0; j < K; ++j) {
      const double gj = G[j];
      if (gj == 0 || norms[j] == 0) continue;
      const double inv = 1.0 / norms[j];
      if (j == label && live) {
        // dz/dx = g x^ + g' (u - c x^);  dz/dw = g' (x - (u.x) u) / |w|
        for (std::size_t i = 0; i < d; ++i) {
          const double u = Wv[j * d + i] * inv;
          const double xh = Xv[i] / r;
          if (gx) gx[i] += static_cast<Real>(gj * (g * xh + gp * (u - c * xh)));
          if (gw) gw[j * d + i] += static_cast<Real>(gj * gp * (Xv[i] - dots[j] * u) * inv);
        }
      } else {
        for (std::size_t i = 0; i < d; ++i) {
          const double u = Wv[j * d + i] * inv;
          if (gx) gx[i] += static_cast<Real>(gj * u);
          if (gw) gw[j * d + i] += static_cast<Real>(gj * (Xv[i] - dots[j] * u) * inv);
        }
      }
    }
  });
  return y;
}

/// Cross-entropy over margin logits.
inline Tensor sphere_loss(const Tensor& embedding, std::size_t label, const Tensor& fc2_w, const MarginConfig& mc) {
  return cross_entropy(margin_logits(embedding, fc2_w, label, mc), label);
}

inline Tensor sphere_loss(const Tensor& embedding, std::size_t label, const BackboneParams& p,
                          const MarginConfig& mc) {
  return sphere_loss(embedding, label, p.fc2_w, mc);
}

/// Geometric annealing from `hi` at step 0 to `lo` at the last step.
inline double anneal_lambda(std::size_t step, std::size_t steps, double hi = 1500.0, double lo = 5.0) {
  if (steps <= 1) return lo;
  const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(steps - 1));
  return hi * std::pow(lo / hi, t);
}

}  // namespace kinform
