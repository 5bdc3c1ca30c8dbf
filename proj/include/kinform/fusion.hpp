#pragma once

// Per-class verification head.
//
//   weighting   a' = a .* w_phi, b' = b .* w_psi   (one shared w when tied)
//   fusion      [d, 2] map -> 1x1 conv to C, ReLU -> 8 x (1x1 conv C->C, ReLU)
//               -> concat(input mix, last hidden) [d, 2C] -> 1x1 conv to 1, ReLU
//               -> mean over d -> + score bias -> sigmoid
//
// Order-symmetric heads mix a' + b' through a single-column kernel, which is
// the two-column kernel with equal columns; swapping the inputs is then a
// bit-exact no-op.

#include <string>
#include <vector>

#include "kinform/dataset.hpp"
#include "kinform/ops.hpp"
#include "kinform/rng.hpp"

namespace kinform {

enum class TieMode { Tied, Untied, None };
enum class WeightingMode { PerClass, Symmetric, None };
enum class FusionKind { Conv, Concat, None };

inline std::string_view tie_mode_name(TieMode t) {
  switch (t) {
    case TieMode::Tied: return "tied";
    case TieMode::Untied: return "untied";
    case TieMode::None: return "none";
  }
  return "?";
}

inline std::string_view weighting_name(WeightingMode w) {
  switch (w) {
    case WeightingMode::PerClass: return "per-class";
    case WeightingMode::Symmetric: return "symmetric";
    case WeightingMode::None: return "none";
  }
  return "?";
}

inline WeightingMode parse_weighting(std::string_view s) {
  if (s == "per-class") return WeightingMode::PerClass;
  if (s == "symmetric") return WeightingMode::Symmetric;
  if (s == "none") return WeightingMode::None;
  throw ConfigError("unknown weighting '" + std::string(s) + "' (per-class | symmetric | none)");
}

inline std::string_view fusion_name(FusionKind f) {
  switch (f) {
    case FusionKind::Conv: return "conv";
    case FusionKind::Concat: return "concat";
    case FusionKind::None: return "none";
  }
  return "?";
}

inline FusionKind parse_fusion(std::string_view s) {
  if (s == "conv") return FusionKind::Conv;
  if (s == "concat") return FusionKind::Concat;
  if (s == "none") return FusionKind::None;
  throw ConfigError("unknown fusion '" + std::string(s) + "' (conv | concat | none)");
}

/// Tied for gender-symmetric classes, untied otherwise.
inline TieMode default_tie_mode(KinshipClass c) { return is_symmetric(c) ? TieMode::Tied : TieMode::Untied; }

inline TieMode tie_mode_for(KinshipClass c, WeightingMode w) {
  switch (w) {
    case WeightingMode::PerClass: return default_tie_mode(c);
    case WeightingMode::Symmetric: return TieMode::Tied;
    case WeightingMode::None: return TieMode::None;
  }
  return TieMode::None;
}

struct FusionConfig {
  std::size_t d = 16;
  std::size_t channels = 16;
  std::size_t hidden_layers = 8;
  FusionKind kind = FusionKind::Conv;

  static FusionConfig paper_shaped() { return {512, 512, 8, FusionKind::Conv}; }
};

struct HeadParams {
  KinshipClass cls = KinshipClass::BB;
  TieMode tie = TieMode::Tied;
  bool order_symmetric = true;
  FusionKind kind = FusionKind::Conv;
  Tensor w_phi, w_psi;  // same handle when tied; undefined for TieMode::None
  // Conv fusion
  Tensor mix_w, mix_b;  // [C, 2] or [C, 1] when order-symmetric; [C]
  std::vector<Tensor> hidden_w, hidden_b;
  Tensor out_w, out_b;  // [1, 2C], [1]
  // Concat fusion
  Tensor fc_w, fc_b;  // [1, 2d], [1]
  Tensor score_bias;  // [1]

  std::size_t dim() const {
    if (w_phi.defined()) return w_phi.numel();
    return kind == FusionKind::Concat ? fc_w.dim(1) / 2 : 0;
  }

  /// Trainable tensors in a fixed order; a tied weight appears once.
  std::vector<NamedTensor> named() const {
    std::vector<NamedTensor> out;
    const std::string p = "head." + std::string(class_tag(cls)) + ".";
    if (tie == TieMode::Tied) {
      out.push_back({p + "w", w_phi});
    } else if (tie == TieMode::Untied) {
      out.push_back({p + "w_phi", w_phi});
      out.push_back({p + "w_psi", w_psi});
    }
    if (kind == FusionKind::Conv) {
      out.push_back({p + "mix.w", mix_w});
      out.push_back({p + "mix.b", mix_b});
      for (std::size_t i = 0; i < hidden_w.size(); ++i) {
        out.push_back({p + "conv" + std::to_string(i + 1) + ".w", hidden_w[i]});
        out.push_back({p + "conv" + std::to_string(i + 1) + ".b", hidden_b[i]});
      }
      out.push_back({p + "conv" + std::to_string(hidden_w.size() + 1) + ".w", out_w});
      out.push_back({p + "conv" + std::to_string(hidden_w.size() + 1) + ".b", out_b});
    } else if (kind == FusionKind::Concat) {
      out.push_back({p + "fc.w", fc_w});
      out.push_back({p + "fc.b", fc_b});
    }
    out.push_back({p + "score_bias", score_bias});
    return out;
  }

  /// Parameters of the fusion stage alone (weighting vectors and score bias
  /// excluded).
  std::size_t fusion_parameter_count() const {
    std::size_t n = 0;
    if (kind == FusionKind::Conv) {
      n += mix_w.numel() + mix_b.numel() + out_w.numel() + out_b.numel();
      for (std::size_t i = 0; i < hidden_w.size(); ++i) n += hidden_w[i].numel() + hidden_b[i].numel();
    } else if (kind == FusionKind::Concat) {
      n += fc_w.numel() + fc_b.numel();
    }
    return n;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : named()) n += t.tensor.numel();
    return n;
  }
};

inline HeadParams init_head(KinshipClass cls, TieMode tie, const FusionConfig& cfg, std::uint64_t seed) {
  if (cfg.d == 0 || cfg.channels == 0) throw ConfigError("fusion: d and channels must be positive");
  if (cfg.kind == FusionKind::None) throw ConfigError("fusion: no head to build for fusion=none");
  HeadParams h;
  h.cls = cls;
  h.tie = tie;
  h.order_symmetric = tie == TieMode::Tied;
  h.kind = cfg.kind;
  Rng rng = make_rng(seed, "head-init", static_cast<std::uint64_t>(cls));
  auto uniform_tensor = [&](Shape shape, double bound) {
    std::vector<Real> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<Real>(uniform(rng, -bound, bound));
    return Tensor(std::move(shape), std::move(v), true);
  };
  if (tie != TieMode::None) {
    h.w_phi = Tensor::ones({cfg.d}, true);
    h.w_psi = tie == TieMode::Tied ? h.w_phi : Tensor::ones({cfg.d}, true);
  }
  const std::size_t C = cfg.channels;
  if (cfg.kind == FusionKind::Conv) {
    const std::size_t in = h.order_symmetric ? 1 : 2;
    h.mix_w = uniform_tensor({C, in}, std::sqrt(6.0 / in));
    h.mix_b = Tensor::zeros({C}, true);
    for (std::size_t i = 0; i < cfg.hidden_layers; ++i) {
      h.hidden_w.push_back(uniform_tensor({C, C}, std::sqrt(6.0 / C)));
      h.hidden_b.push_back(Tensor::zeros({C}, true));
    }
    // Non-negative so the output ReLU starts active on the non-negative features.
    h.out_w = uniform_tensor({1, 2 * C}, std::sqrt(6.0 / (2 * C)));
    for (auto& v : h.out_w.data()) v = std::abs(v);
    h.out_b = Tensor::zeros({1}, true);
  } else {
    h.fc_w = uniform_tensor({1, 2 * cfg.d}, 1.0 / std::sqrt(2.0 * cfg.d));
    h.fc_b = Tensor::zeros({1}, true);
  }
  h.score_bias = Tensor::zeros({1}, true);
  return h;
}

inline HeadParams init_head(KinshipClass cls, const FusionConfig& cfg, std::uint64_t seed) {
  return init_head(cls, default_tie_mode(cls), cfg, seed);
}

/// Sets every parameter of `h` to zero (weighting vectors included).
inline void zero_head(HeadParams& h) {
  for (auto& t : h.named()) std::fill(t.tensor.data().begin(), t.tensor.data().end(), Real(0));
}

struct WeightedPair {
  Tensor a, b;
};

inline WeightedPair apply_weighting(const Tensor& phi, const Tensor& psi, const HeadParams& h) {
  if (phi.numel() != psi.numel()) {
    throw ShapeError("apply_weighting: embeddings differ in length (" + std::to_string(phi.numel()) + " vs " +
                     std::to_string(psi.numel()) + ")");
  }
  if (h.tie == TieMode::None) return {phi, psi};
  if (phi.numel() != h.w_phi.numel()) {
    throw ShapeError("apply_weighting: embedding length " + std::to_string(phi.numel()) + ", head expects " +
                     std::to_string(h.w_phi.numel()));
  }
  return {mul(phi, h.w_phi), mul(psi, h.w_psi)};
}

struct FusionTraceRow {
  std::string layer;
  Shape input;
  std::string activation;
  Shape output;
};
using FusionTrace = std::vector<FusionTraceRow>;

/// Verification probability for a weighted pair, shape [1].
inline Tensor fuse_score(const WeightedPair& x, const HeadParams& h, FusionTrace* trace = nullptr) {
  const std::size_t d = x.a.numel();
  if (x.b.numel() != d) throw ShapeError("fuse_score: pair lengths differ");
  Tensor logit;
  if (h.kind == FusionKind::Concat) {
    if (h.fc_w.dim(1) != 2 * d) throw ShapeError("fuse_score: concat head expects d = " + std::to_string(h.dim()));
    Tensor cat = reshape(concat_channels(reshape(x.a, {1, d}), reshape(x.b, {1, d})), {2 * d});
    logit = linear(cat, h.fc_w, h.fc_b);
    if (trace) trace->push_back({"FC", {2 * d}, "", {1}});
  } else if (h.kind == FusionKind::Conv) {
    Tensor h0;
    if (h.order_symmetric) {
      h0 = relu(conv1d_k1(reshape(add(x.a, x.b), {d, 1}), h.mix_w, h.mix_b));
      if (trace) trace->push_back({"Input", {d, 2}, "Relu", h0.shape()});
    } else {
      h0 = relu(conv1d_k1(stack_channels(x.a, x.b), h.mix_w, h.mix_b));
      if (trace) trace->push_back({"Input", {d, 2}, "Relu", h0.shape()});
    }
    Tensor t = h0;
    for (std::size_t i = 0; i < h.hidden_w.size(); ++i) {
      const Shape in = t.shape();
      t = relu(conv1d_k1(t, h.hidden_w[i], h.hidden_b[i]));
      if (trace) trace->push_back({"1D Conv" + std::to_string(i + 1), in, "Relu", t.shape()});
    }
    Tensor cat = concat_channels(h0, t);
    Tensor o = relu(conv1d_k1(cat, h.out_w, h.out_b));
    if (trace) trace->push_back({"1D Conv" + std::to_string(h.hidden_w.size() + 1), cat.shape(), "Relu", o.shape()});
    logit = avgpool_length(o);
    if (trace) trace->push_back({"AvgPool", o.shape(), "", logit.shape()});
  } else {
    throw ConfigError("fuse_score: head has no fusion stage");
  }
  Tensor p = sigmoid(add(logit, h.score_bias));
  if (trace) trace->push_back({"Score", {1}, "Sigmoid", p.shape()});
  return p;
}

/// Score of an embedding pair. The head sees unit-length embeddings: the
/// angular-margin loss grows feature norms freely during training.
inline Tensor head_score(const Tensor& phi, const Tensor& psi, const HeadParams& h) {
  return fuse_score(apply_weighting(l2_normalize(phi), l2_normalize(psi), h), h);
}

/// Layer rows of a conv head without running it.
inline FusionTrace fusion_shape_trace(const FusionConfig& cfg) {
  FusionTrace t;
  const std::size_t d = cfg.d, C = cfg.channels;
  t.push_back({"Input", {d, 2}, "Relu", {d, C}});
  for (std::size_t i = 0; i < cfg.hidden_layers; ++i) t.push_back({"1D Conv" + std::to_string(i + 1), {d, C}, "Relu", {d, C}});
  t.push_back({"1D Conv" + std::to_string(cfg.hidden_layers + 1), {d, 2 * C}, "Relu", {d, 1}});
  t.push_back({"AvgPool", {d, 1}, "", {1}});
  t.push_back({"Score", {1}, "Sigmoid", {1}});
  return t;
}

/// Cosine similarity of two embeddings, shape [1]; used by the
/// embedding-only baseline.
inline Real cosine_similarity(std::span<const Real> a, std::span<const Real> b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += double(a[i]) * b[i];
    na += double(a[i]) * a[i];
    nb += double(b[i]) * b[i];
  }
  if (na == 0 || nb == 0) return 0;
  return static_cast<Real>(dot / std::sqrt(na * nb));
}

}  // namespace kinform
