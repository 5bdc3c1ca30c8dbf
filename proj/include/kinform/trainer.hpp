#pragma once

// Training loop: per-epoch pair sampling, SGD with momentum and weight decay,
// plateau-triggered learning-rate drops, margin annealing, checkpoints and
// the metrics log.
//
// Checkpoint ("KCHK", little-endian):
//   magic[4] | u32 version | str config_text | str config_digest
//   | u64 identities | u64 input_dim | u64 epoch | f64 lr | u64 last_drop
//   | u32 diverged | str rng_state | history | thresholds
//   | u64 n | n x (str name, KTNS tensor)        parameters
//   | u64 n | n x (str name, KTNS tensor)        momentum buffers

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "kinform/augment.hpp"
#include "kinform/model.hpp"
#include "kinform/sampler.hpp"
#include "kinform/serialize.hpp"

namespace kinform {

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double lr = 0;
  double lambda = 0;
  double total = 0;
  double sphere_phi = 0;
  double sphere_psi = 0;
  std::vector<double> bce;  // per system class
  std::size_t steps = 0;
  std::size_t samples = 0;
};

struct TrainState {
  System system;
  std::vector<Tensor> velocity;  // aligned with system.named()
  std::size_t epoch = 0;         // completed epochs
  double lr = 0;
  std::size_t last_drop = 0;  // value of `epoch` at the last lr drop
  std::vector<EpochRecord> history;
  std::string rng_state;
  std::size_t identities = 0;
  std::size_t input_dim = 0;
  std::string config_digest;
  bool diverged = false;
  std::string message;
};

// ---------------------------------------------------------------------------
// Epoch sampling

/// Swaps the two sides of a pair.
inline PairSample swapped(PairSample p) {
  std::swap(p.image_a, p.image_b);
  std::swap(p.family_a, p.family_b);
  std::swap(p.member_a, p.member_b);
  return p;
}

/// Round-robin merge: one item from each list in turn until all run out.
inline std::vector<PairSample> interleave(const std::vector<std::vector<PairSample>>& lists) {
  std::vector<PairSample> out;
  std::size_t longest = 0;
  for (const auto& l : lists) longest = std::max(longest, l.size());
  for (std::size_t i = 0; i < longest; ++i)
    for (const auto& l : lists)
      if (i < l.size()) out.push_back(l[i]);
  return out;
}

/// Symmetric classes go to a random side; asymmetric ones keep role order.
inline void randomize_sides(std::vector<PairSample>& pairs, std::uint64_t seed) {
  Rng rng = make_rng(seed, "sides");
  for (auto& p : pairs)
    if (is_symmetric(p.cls) && uniform01(rng) < 0.5) p = swapped(p);
}

/// Positives from the class plan plus as many negatives, per class, shuffled
/// and interleaved across classes. Classes that cannot be sampled in
/// `families` are left out.
inline std::vector<PairSample> epoch_pairs(const Dataset& ds, const std::vector<std::size_t>& families,
                                           const TrainConfig& cfg, std::uint64_t seed) {
  const SamplerKind kind = cfg.protocol == Protocol::Restricted ? SamplerKind::Uniform : cfg.sampler;
  std::vector<std::vector<PairSample>> lists;
  for (KinshipClass c : cfg.classes) {
    const std::uint64_t idx = head_index(c);
    std::size_t available = 0;
    for (std::size_t f : families) available += ds.pair_count(f, c);
    if (available == 0) continue;
    EpochPlan plan = build_plan(kind, ds, c, derive_seed(seed, "plan", idx), families);
    std::vector<PairSample> v = plan.pairs;
    try {
      auto neg = sample_negatives(plan.pairs, ds, derive_seed(seed, "negatives", idx), families);
      v.insert(v.end(), neg.begin(), neg.end());
    } catch (const DatasetError&) {
      continue;
    }
    Rng rng = make_rng(seed, "order", idx);
    shuffle(v, rng);
    lists.push_back(std::move(v));
  }
  auto out = interleave(lists);
  randomize_sides(out, seed);
  return out;
}

/// A fixed pair list (restricted protocol), shuffled per epoch.
inline std::vector<PairSample> epoch_pairs(const std::vector<PairSample>& given, std::uint64_t seed) {
  std::vector<PairSample> out = given;
  Rng rng = make_rng(seed, "order");
  shuffle(out, rng);
  randomize_sides(out, seed);
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

inline std::vector<Tensor> zero_velocity(const System& sys) {
  std::vector<Tensor> v;
  for (const auto& p : sys.named()) v.push_back(Tensor::zeros(p.tensor.shape()));
  return v;
}

inline void zero_grads(const std::vector<NamedTensor>& params) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

/// v = mu v + (g + wd w); w -= lr v
inline void sgd_step(const std::vector<NamedTensor>& params, std::vector<Tensor>& velocity, double lr, double momentum,
                     double weight_decay) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor w = params[i].tensor;
    auto g = w.grad();
    auto wd = w.data();
    auto v = velocity[i].data();
    for (std::size_t j = 0; j < wd.size(); ++j) {
      v[j] = static_cast<Real>(momentum) * v[j] + g[j] + static_cast<Real>(weight_decay) * wd[j];
      wd[j] -= static_cast<Real>(lr) * v[j];
    }
  }
}

/// Applies the plateau rule after an epoch has been appended to history.
inline void plateau_update(TrainState& st, const TrainConfig& cfg) {
  const std::size_t e = st.history.size();
  const std::size_t w = cfg.plateau_window;
  // Windows that overlap the annealing phase see the margin, not the fit, change.
  const std::size_t start = std::max(st.last_drop, cfg.uses_sphere() ? cfg.anneal_epochs : std::size_t{0});
  if (e < start + w + 1 || st.lr <= cfg.lr_min) return;
  const double prev = st.history[e - 1 - w].total;
  const double cur = st.history[e - 1].total;
  const double rel = (prev - cur) / std::max(std::abs(prev), 1e-300);
  if (rel < cfg.plateau_threshold) {
    st.lr = std::max(st.lr / 10.0, cfg.lr_min);
    st.last_drop = e;
  }
}

// ---------------------------------------------------------------------------
// Training

inline TrainState init_training(const Dataset& ds, const std::vector<std::size_t>& families, const TrainConfig& cfg) {
  cfg.validate();
  TrainState st;
  const IdentityMap ids = identity_map(ds, families);
  st.identities = ids.count;
  st.input_dim = cfg.input == InputMode::Embedding ? embedding_input_dim(ds) : 0;
  if (cfg.input == InputMode::Pixels) {
    for (const auto& img : ds.images) {
      if (!img.pixels) throw ConfigError("model.input = pixels but the dataset holds embedding vectors");
      if (img.pixels->width != cfg.input_side || img.pixels->height != cfg.input_side) {
        throw ConfigError("image " + img.path + " is " + std::to_string(img.pixels->width) + "x" +
                          std::to_string(img.pixels->height) + " but model.input_side is " +
                          std::to_string(cfg.input_side));
      }
    }
  } else {
    for (const auto& img : ds.images)
      if (!img.embedding || img.embedding->size() != st.input_dim) {
        throw ConfigError("model.input = embedding needs equal-length embedding vectors for every image");
      }
  }
  if (cfg.uses_sphere() && ids.count < 2) {
    throw ConfigError("unrestricted training needs at least two identities in the training families");
  }
  st.system = build_system(cfg, st.identities, st.input_dim, derive_seed(cfg.seed, "init"));
  st.velocity = zero_velocity(st.system);
  st.lr = cfg.lr;
  st.rng_state = rng_state(make_rng(cfg.seed, "train"));
  st.config_digest = config_digest(cfg);
  return st;
}

/// Data-dependent start for each head's score offset: minus the mean
/// pre-offset logit over up to `per_class` of the given pairs, so scores
/// start centred at 0.5.
inline void init_score_offsets(System& sys, const Dataset& ds, const std::vector<PairSample>& pairs,
                               std::size_t per_class = 64) {
  if (sys.fusion == FusionKind::None) return;
  NoGradScope no_grad;
  for (KinshipClass c : sys.classes) {
    HeadParams* h = nullptr;
    for (auto& hp : sys.model_for(c).heads)
      if (hp.cls == c) h = &hp;
    const Real saved = h->score_bias.data()[0];
    h->score_bias.data()[0] = 0;
    double sum = 0;
    std::size_t n = 0;
    for (const auto& p : pairs) {
      if (p.cls != c || n == per_class) continue;
      const auto& bb = sys.model_for(c).backbone;
      const Real prob = head_score(embed(input_tensor(ds.images[p.image_a]), bb),
                                   embed(input_tensor(ds.images[p.image_b]), bb), *h)
                            .item();
      const double q = std::clamp(static_cast<double>(prob), 1e-12, 1 - 1e-12);
      sum += std::log(q / (1 - q));
      ++n;
    }
    h->score_bias.data()[0] = n ? static_cast<Real>(-sum / static_cast<double>(n)) : saved;
  }
}

struct TrainOptions {
  /// Stop after this many more epochs (0: run to cfg.epochs).
  std::size_t max_epochs = 0;
  /// Restricted protocol: train on these pairs instead of sampling.
  const std::vector<PairSample>* given_pairs = nullptr;
  std::function<void(const EpochRecord&)> on_epoch;
};

namespace detail {

inline std::vector<std::vector<Real>> snapshot(const std::vector<NamedTensor>& params) {
  std::vector<std::vector<Real>> out;
  for (const auto& p : params) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

inline void restore(const std::vector<NamedTensor>& params, const std::vector<std::vector<Real>>& values) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    std::copy(values[i].begin(), values[i].end(), t.data().begin());
  }
}

}  // namespace detail

/// Runs epochs until cfg.epochs (or opt.max_epochs more). On a non-finite loss
/// the state rolls back to the end of the last completed epoch and
/// `diverged` is set.
inline void train_epochs(TrainState& st, const Dataset& ds, const std::vector<std::size_t>& families,
                         const TrainConfig& cfg, const TrainOptions& opt = {}) {
  cfg.validate();
  if (st.config_digest != config_digest(cfg)) throw ConfigError("training state was built for a different config");
  const IdentityMap ids = identity_map(ds, families);
  if (ids.count != st.identities) throw ConfigError("training families do not match the training state");
  const auto params = st.system.named();
  const AugmentConfig aug{cfg.gamma_min, cfg.gamma_max};
  const bool augment_on = cfg.augment && cfg.input == InputMode::Pixels;
  const std::size_t stop = opt.max_epochs ? std::min(cfg.epochs, st.epoch + opt.max_epochs) : cfg.epochs;

  while (st.epoch < stop && !st.diverged) {
    Rng run_rng;
    set_rng_state(run_rng, st.rng_state);
    const std::uint64_t epoch_seed = run_rng();
    const auto pairs = opt.given_pairs ? epoch_pairs(*opt.given_pairs, epoch_seed)
                                       : epoch_pairs(ds, families, cfg, epoch_seed);
    if (pairs.empty()) throw DatasetError("no trainable pairs in the training families");
    if (st.epoch == 0) init_score_offsets(st.system, ds, pairs);
    const double lambda = anneal_lambda(st.epoch, cfg.anneal_epochs, cfg.lambda_max, cfg.lambda_min);
    const LossOptions lopt = loss_options(cfg, lambda);

    const auto saved = detail::snapshot(params);
    std::vector<std::vector<Real>> saved_velocity;
    for (const auto& v : st.velocity) saved_velocity.emplace_back(v.data().begin(), v.data().end());

    EpochRecord rec;
    rec.epoch = st.epoch + 1;
    rec.lr = st.lr;
    rec.lambda = lambda;
    rec.bce.assign(st.system.classes.size(), 0.0);
    try {
      for (std::size_t start = 0; start < pairs.size(); start += cfg.batch_size) {
        const std::size_t end = std::min(pairs.size(), start + cfg.batch_size);
        std::vector<TrainSample> batch;
        for (std::size_t i = start; i < end; ++i) {
          const PairSample& p = pairs[i];
          TrainSample s;
          if (augment_on) {
            Rng arng = make_rng(epoch_seed, "augment", i);
            s.a = image_tensor(augment(*ds.images[p.image_a].pixels, arng, aug));
            s.b = image_tensor(augment(*ds.images[p.image_b].pixels, arng, aug));
          } else {
            s.a = input_tensor(ds.images[p.image_a]);
            s.b = input_tensor(ds.images[p.image_b]);
          }
          s.cls = p.cls;
          s.label = p.positive ? 1 : 0;
          if (p.member_a != kUnknown) s.id_a = ids.label[p.member_a];
          if (p.member_b != kUnknown) s.id_b = ids.label[p.member_b];
          batch.push_back(std::move(s));
        }
        zero_grads(params);
        Tape tape;
        LossBreakdown lb;
        {
          TapeScope scope(tape);
          lb = total_loss(batch, st.system, lopt);
        }
        if (!std::isfinite(lb.total)) throw NumericError("non-finite loss");
        tape.backward(lb.loss);
        sgd_step(params, st.velocity, st.lr, cfg.momentum, cfg.weight_decay);
        for (const auto& p : params)
          for (Real v : p.tensor.data())
            if (!std::isfinite(v)) throw NumericError("non-finite parameter after update");
        const double n = static_cast<double>(batch.size());
        rec.total += lb.total * n;
        rec.sphere_phi += lb.sphere_phi * n;
        rec.sphere_psi += lb.sphere_psi * n;
        for (std::size_t k = 0; k < rec.bce.size(); ++k) rec.bce[k] += lb.bce[k] * n;
        rec.samples += batch.size();
        ++rec.steps;
      }
    } catch (const NumericError& e) {
      detail::restore(params, saved);
      for (std::size_t i = 0; i < st.velocity.size(); ++i) {
        std::copy(saved_velocity[i].begin(), saved_velocity[i].end(), st.velocity[i].data().begin());
      }
      st.diverged = true;
      st.message = "training diverged in epoch " + std::to_string(st.epoch + 1) + ": " + e.what();
      return;
    }
    const double inv = 1.0 / static_cast<double>(rec.samples);
    rec.total *= inv;
    rec.sphere_phi *= inv;
    rec.sphere_psi *= inv;
    for (auto& v : rec.bce) v *= inv;
    st.history.push_back(rec);
    ++st.epoch;
    st.rng_state = rng_state(run_rng);
    plateau_update(st, cfg);
    if (opt.on_epoch) opt.on_epoch(rec);
  }
}

inline TrainState train(const Dataset& ds, const std::vector<std::size_t>& families, const TrainConfig& cfg,
                        const TrainOptions& opt = {}) {
  TrainState st = init_training(ds, families, cfg);
  train_epochs(st, ds, families, cfg, opt);
  return st;
}

// ---------------------------------------------------------------------------
// Metrics log

inline std::string metrics_csv(const TrainState& st) {
  std::ostringstream os;
  os << "epoch,lr,total,sphere_phi,sphere_psi";
  for (KinshipClass c : kTrainedClasses) os << ",bce_" << class_tag(c);
  os << '\n';
  for (const auto& r : st.history) {
    os << r.epoch << ',' << detail::format_double(r.lr) << ',' << detail::format_double(r.total) << ','
       << detail::format_double(r.sphere_phi) << ',' << detail::format_double(r.sphere_psi);
    for (KinshipClass c : kTrainedClasses) {
      os << ',';
      if (st.system.serves(c)) os << detail::format_double(r.bce[st.system.class_slot(c)]);
    }
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr char kCheckpointMagic[4] = {'K', 'C', 'H', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_checkpoint(std::ostream& os, const TrainState& st, const TrainConfig& cfg) {
  using namespace binary;
  os.write(kCheckpointMagic, 4);
  write_le<std::uint32_t>(os, kCheckpointVersion);
  write_string(os, config_text(cfg));
  write_string(os, st.config_digest);
  write_le<std::uint64_t>(os, st.identities);
  write_le<std::uint64_t>(os, st.input_dim);
  write_le<std::uint64_t>(os, st.epoch);
  write_le<double>(os, st.lr);
  write_le<std::uint64_t>(os, st.last_drop);
  write_le<std::uint32_t>(os, st.diverged ? 1 : 0);
  write_string(os, st.rng_state);
  write_le<std::uint64_t>(os, st.history.size());
  for (const auto& r : st.history) {
    write_le<std::uint64_t>(os, r.epoch);
    for (double v : {r.lr, r.lambda, r.total, r.sphere_phi, r.sphere_psi}) write_le<double>(os, v);
    write_le<std::uint64_t>(os, r.steps);
    write_le<std::uint64_t>(os, r.samples);
    write_le<std::uint64_t>(os, r.bce.size());
    for (double v : r.bce) write_le<double>(os, v);
  }
  write_le<std::uint64_t>(os, st.system.thresholds.size());
  for (double v : st.system.thresholds) write_le<double>(os, v);
  const auto params = st.system.named();
  write_le<std::uint64_t>(os, params.size());
  for (const auto& p : params) {
    write_string(os, p.name);
    write_tensor(os, p.tensor);
  }
  write_le<std::uint64_t>(os, st.velocity.size());
  for (std::size_t i = 0; i < st.velocity.size(); ++i) {
    write_string(os, params[i].name);
    write_tensor(os, st.velocity[i]);
  }
}

inline void save_checkpoint(const std::filesystem::path& path, const TrainState& st, const TrainConfig& cfg) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  write_checkpoint(os, st, cfg);
  if (!os) throw IoError("failed writing checkpoint " + path.string());
}

struct Checkpoint {
  TrainConfig config;
  TrainState state;
};

inline Checkpoint read_checkpoint(std::istream& is) {
  using namespace binary;
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw IoError("not a checkpoint (bad magic)");
  const auto version = read_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  ck.config = parse_config(read_string(is), "<checkpoint>");
  TrainState& st = ck.state;
  st.config_digest = read_string(is);
  if (st.config_digest != config_digest(ck.config)) throw IoError("checkpoint config digest mismatch");
  st.identities = read_le<std::uint64_t>(is);
  st.input_dim = read_le<std::uint64_t>(is);
  st.epoch = read_le<std::uint64_t>(is);
  st.lr = read_le<double>(is);
  st.last_drop = read_le<std::uint64_t>(is);
  st.diverged = read_le<std::uint32_t>(is) != 0;
  st.rng_state = read_string(is);
  const auto nh = read_le<std::uint64_t>(is);
  if (nh > (1u << 20)) throw IoError("checkpoint history too long");
  for (std::uint64_t i = 0; i < nh; ++i) {
    EpochRecord r;
    r.epoch = read_le<std::uint64_t>(is);
    r.lr = read_le<double>(is);
    r.lambda = read_le<double>(is);
    r.total = read_le<double>(is);
    r.sphere_phi = read_le<double>(is);
    r.sphere_psi = read_le<double>(is);
    r.steps = read_le<std::uint64_t>(is);
    r.samples = read_le<std::uint64_t>(is);
    const auto nb = read_le<std::uint64_t>(is);
    if (nb > kAllClasses.size()) throw IoError("checkpoint history row is malformed");
    for (std::uint64_t k = 0; k < nb; ++k) r.bce.push_back(read_le<double>(is));
    st.history.push_back(std::move(r));
  }
  st.system = build_system(ck.config, st.identities, st.input_dim, 0);
  const auto nt = read_le<std::uint64_t>(is);
  if (nt != st.system.thresholds.size()) throw IoError("checkpoint threshold count mismatch");
  for (auto& t : st.system.thresholds) t = read_le<double>(is);

  const auto params = st.system.named();
  auto read_table = [&](const char* what, auto&& sink) {
    const auto n = read_le<std::uint64_t>(is);
    if (n != params.size()) throw IoError(std::string("checkpoint ") + what + " count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      const std::string name = read_string(is);
      if (name != params[i].name) throw IoError("checkpoint " + std::string(what) + " '" + name + "' out of order");
      Tensor t = read_tensor(is);
      if (t.shape() != params[i].tensor.shape()) {
        throw IoError("checkpoint tensor '" + name + "' has shape " + shape_str(t.shape()) + ", expected " +
                      shape_str(params[i].tensor.shape()));
      }
      sink(i, t);
    }
  };
  read_table("parameter", [&](std::size_t i, const Tensor& t) {
    Tensor p = params[i].tensor;
    std::copy(t.data().begin(), t.data().end(), p.data().begin());
  });
  read_table("momentum", [&](std::size_t, const Tensor& t) { st.velocity.push_back(t); });
  return ck;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint " + path.string());
  return read_checkpoint(is);
}

inline std::string checkpoint_bytes(const TrainState& st, const TrainConfig& cfg) {
  std::ostringstream os(std::ios::binary);
  write_checkpoint(os, st, cfg);
  return os.str();
}

}  // namespace kinform
