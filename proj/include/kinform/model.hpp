#pragma once

// Backbone plus per-class verification heads, and the joint loss
//   total = L_sphere(phi) + L_sphere(psi) + alpha^2 * sum_k mask_k * BCE_k
// averaged over the batch.

#include <cmath>
#include <string>
#include <vector>

#include "kinform/backbone.hpp"
#include "kinform/config.hpp"
#include "kinform/fusion.hpp"

namespace kinform {

/// One backbone and the heads it feeds.
struct Model {
  BackboneParams backbone;
  std::vector<HeadParams> heads;  // empty when fusion = none

  const HeadParams* head(KinshipClass c) const {
    for (const auto& h : heads)
      if (h.cls == c) return &h;
    return nullptr;
  }

  std::vector<NamedTensor> named(const std::string& prefix = "") const {
    std::vector<NamedTensor> out;
    for (auto& t : backbone.named()) out.push_back({prefix + t.name, t.tensor});
    for (const auto& h : heads)
      for (auto& t : h.named()) out.push_back({prefix + t.name, t.tensor});
    return out;
  }
};

/// Everything evaluation needs: one shared model (multi-task) or one model per
/// class (single-task), plus the decision thresholds.
struct System {
  std::vector<KinshipClass> classes;
  std::vector<Model> models;
  bool multitask = true;
  FusionKind fusion = FusionKind::Conv;
  /// Per class, in `classes` order. Probability threshold for heads, cosine
  /// threshold when fusion = none.
  std::vector<double> thresholds;

  bool serves(KinshipClass c) const {
    for (KinshipClass k : classes)
      if (k == c) return true;
    return false;
  }

  std::size_t class_slot(KinshipClass c) const {
    for (std::size_t i = 0; i < classes.size(); ++i)
      if (classes[i] == c) return i;
    throw ConfigError("no verification head for class " + std::string(class_tag(c)));
  }

  const Model& model_for(KinshipClass c) const { return models[multitask ? 0 : class_slot(c)]; }
  Model& model_for(KinshipClass c) { return models[multitask ? 0 : class_slot(c)]; }

  double threshold(KinshipClass c) const { return thresholds.at(class_slot(c)); }

  std::vector<NamedTensor> named() const {
    if (multitask) return models.at(0).named();
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < models.size(); ++i) {
      auto part = models[i].named("task." + std::string(class_tag(classes[i])) + ".");
      out.insert(out.end(), part.begin(), part.end());
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : named()) n += t.tensor.numel();
    return n;
  }
};

/// Training-fold members mapped to contiguous identity labels.
struct IdentityMap {
  std::vector<long> label;  // per dataset member; -1 outside the training families
  std::size_t count = 0;
};

inline IdentityMap identity_map(const Dataset& ds, const std::vector<std::size_t>& families) {
  IdentityMap m;
  m.label.assign(ds.members.size(), -1);
  for (std::size_t f : families)
    for (std::size_t mem : ds.families.at(f).members) m.label[mem] = static_cast<long>(m.count++);
  return m;
}

/// Input length of the projection backbone, or 0 for pixel datasets.
inline std::size_t embedding_input_dim(const Dataset& ds) {
  for (const auto& img : ds.images)
    if (img.embedding) return img.embedding->size();
  return 0;
}

inline BackboneConfig backbone_config_for(const TrainConfig& cfg, std::size_t identities, std::size_t input_dim) {
  const std::size_t ids = std::max<std::size_t>(identities, 2);
  if (cfg.input == InputMode::Embedding) {
    if (input_dim == 0) throw ConfigError("model.input = embedding needs a dataset of embedding vectors");
    return BackboneConfig::projection(input_dim, cfg.embedding_dim, ids);
  }
  return cfg.backbone_config(ids);
}

inline System build_system(const TrainConfig& cfg, std::size_t identities, std::size_t input_dim, std::uint64_t seed) {
  System s;
  s.classes = cfg.classes;
  s.multitask = cfg.multitask;
  s.fusion = cfg.fusion;
  s.thresholds.assign(s.classes.size(), cfg.fusion == FusionKind::None ? 0.0 : cfg.threshold);
  const BackboneConfig bcfg = backbone_config_for(cfg, identities, input_dim);
  const FusionConfig fcfg = cfg.fusion_config();
  auto make_model = [&](const std::vector<KinshipClass>& classes, std::uint64_t model_seed) {
    Model m;
    m.backbone = init_backbone(bcfg, derive_seed(model_seed, "backbone"));
    if (cfg.fusion != FusionKind::None) {
      for (KinshipClass c : classes) {
        m.heads.push_back(init_head(c, tie_mode_for(c, cfg.weighting), fcfg,
                                    derive_seed(model_seed, "head", head_index(c))));
      }
    }
    return m;
  };
  if (cfg.multitask) {
    s.models.push_back(make_model(s.classes, seed));
  } else {
    for (KinshipClass c : s.classes) s.models.push_back(make_model({c}, derive_seed(seed, "task", head_index(c))));
  }
  return s;
}

/// Kronecker-delta multiplier over `classes` selecting the head of `c`.
inline std::vector<double> route_mask(KinshipClass c, const std::vector<KinshipClass>& classes) {
  std::vector<double> mask(classes.size(), 0.0);
  for (std::size_t i = 0; i < classes.size(); ++i)
    if (classes[i] == c) {
      mask[i] = 1.0;
      return mask;
    }
  throw ConfigError("class " + std::string(class_tag(c)) + " has no verification head" +
                    (is_grandparent_class(c) ? " (grandparent heads are disabled)" : ""));
}

inline std::vector<double> route_mask(KinshipClass c) {
  return route_mask(c, {kTrainedClasses.begin(), kTrainedClasses.end()});
}

/// Model input for one image record.
inline Tensor input_tensor(const ImageRecord& rec) {
  if (rec.pixels) return image_tensor(*rec.pixels);
  return Tensor::vector(*rec.embedding);
}

/// One training pair with prepared inputs. Identity labels are -1 when
/// unknown (restricted protocol).
struct TrainSample {
  Tensor a, b;
  KinshipClass cls = KinshipClass::BB;
  Real label = 0;
  long id_a = -1, id_b = -1;
};

struct LossBreakdown {
  Tensor loss;  // on the active tape
  double total = 0;
  double sphere_phi = 0;
  double sphere_psi = 0;
  std::vector<double> bce;  // per system class; masked, batch-normalized

  double bce_sum() const {
    double s = 0;
    for (double v : bce) s += v;
    return s;
  }
};

struct LossOptions {
  double alpha = 1.0;
  bool sphere = true;
  MarginConfig margin;
  /// Divisor of the summed per-sample losses; 0 means the batch size.
  std::size_t normalizer = 0;
};

inline LossOptions loss_options(const TrainConfig& cfg, double lambda) {
  LossOptions o;
  o.alpha = cfg.alpha;
  o.sphere = cfg.uses_sphere();
  o.margin = {cfg.margin, lambda};
  return o;
}

inline LossBreakdown total_loss(const std::vector<TrainSample>& batch, const System& sys, const LossOptions& opt) {
  if (batch.empty()) throw ShapeError("total_loss: empty batch");
  const Real inv = Real(1) / static_cast<Real>(opt.normalizer ? opt.normalizer : batch.size());
  const Real a2 = static_cast<Real>(opt.alpha * opt.alpha);
  const bool use_heads = sys.fusion != FusionKind::None;
  LossBreakdown out;
  out.bce.assign(sys.classes.size(), 0.0);
  Tensor acc;
  for (const auto& s : batch) {
    const auto mask = route_mask(s.cls, sys.classes);
    const Model& model = sys.model_for(s.cls);
    const Tensor ea = embed(s.a, model.backbone);
    const Tensor eb = embed(s.b, model.backbone);
    Tensor term;
    if (opt.sphere) {
      if (s.id_a < 0 || s.id_b < 0) throw ConfigError("total_loss: sphere terms need identity labels on every sample");
      const Tensor la = sphere_loss(ea, static_cast<std::size_t>(s.id_a), model.backbone, opt.margin);
      const Tensor lb = sphere_loss(eb, static_cast<std::size_t>(s.id_b), model.backbone, opt.margin);
      out.sphere_phi += la.item();
      out.sphere_psi += lb.item();
      term = add(la, lb);
    }
    if (use_heads) {
      for (std::size_t k = 0; k < mask.size(); ++k) {
        if (mask[k] == 0.0) continue;
        const HeadParams* h = model.head(sys.classes[k]);
        const Tensor l = bce(head_score(ea, eb, *h), s.label);
        out.bce[k] += l.item();
        const Tensor w = scale(l, a2 * static_cast<Real>(mask[k]));
        term = term.defined() ? add(term, w) : w;
      }
    }
    if (!term.defined()) throw ConfigError("total_loss: no loss terms (restricted protocol with fusion = none)");
    acc = acc.defined() ? add(acc, term) : term;
  }
  out.loss = scale(acc, inv);
  out.total = out.loss.item();
  out.sphere_phi *= inv;
  out.sphere_psi *= inv;
  for (auto& v : out.bce) v *= inv;
  return out;
}

}  // namespace kinform
