#pragma once

// End-to-end finite-difference check of the full model: backbone, the routed
// head, sphere and BCE terms together.

#include <cstdio>
#include <iomanip>
#include <map>
#include <sstream>

#include "kinform/gradcheck.hpp"
#include "kinform/model.hpp"

namespace kinform {

struct SystemCheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  std::size_t max_elements = 3;  // per tensor
  std::size_t batch = 2;
  std::size_t identities = 8;
  /// Relative-error denominator floor. Central differences of an O(1) loss
  /// carry ~1e-10 of roundoff, so gradients below this compare absolutely.
  double abs_floor = 1e-5;
};

/// One random batch of the class picked by `seed`; parameters of the model
/// serving it (backbone plus that class's head). Other heads receive exactly
/// zero gradient and are covered by the routing tests.
inline GradCheckReport system_grad_check(const TrainConfig& cfg, std::uint64_t seed,
                                         const SystemCheckOptions& opt = {}) {
  cfg.validate();
  if (cfg.fusion == FusionKind::None && !cfg.uses_sphere()) throw ConfigError("gradcheck: config has no loss terms");
  Rng rng = make_rng(seed, "system-check");
  const KinshipClass cls = cfg.classes[uniform_index(rng, cfg.classes.size())];
  const std::size_t input_dim = cfg.input == InputMode::Embedding ? cfg.synthetic.latent_dim : 0;
  const System sys = build_system(cfg, opt.identities, input_dim, derive_seed(seed, "system"));
  auto random_input = [&] {
    if (cfg.input == InputMode::Embedding) {
      std::vector<Real> v(input_dim);
      for (auto& x : v) x = static_cast<Real>(normal(rng));
      return Tensor({input_dim}, std::move(v));
    }
    const std::size_t s = cfg.input_side;
    std::vector<Real> v(3 * s * s);
    for (auto& x : v) x = static_cast<Real>(uniform01(rng));
    return Tensor({3, s, s}, std::move(v));
  };
  std::vector<TrainSample> batch;
  for (std::size_t i = 0; i < opt.batch; ++i) {
    TrainSample s;
    s.a = random_input();
    s.b = random_input();
    s.cls = cls;
    s.label = static_cast<Real>((i + 1) % 2);
    s.id_a = static_cast<long>(uniform_index(rng, opt.identities));
    s.id_b = static_cast<long>(uniform_index(rng, opt.identities));
    batch.push_back(std::move(s));
  }
  // Log-uniform lambda across the annealing range.
  const double lambda =
      std::exp(uniform(rng, std::log(cfg.lambda_min), std::log(cfg.lambda_max)));
  const LossOptions lopt = loss_options(cfg, lambda);

  const Model& model = sys.model_for(cls);
  std::vector<NamedTensor> params = model.backbone.named();
  if (const HeadParams* h = model.head(cls))
    for (auto& t : h->named()) params.push_back(t);
  GradCheckOptions gopt;
  gopt.max_elements = opt.max_elements;
  gopt.seed = seed;
  gopt.abs_floor = opt.abs_floor;
  return grad_check([&] { return total_loss(batch, sys, lopt).loss; }, params, opt.eps, opt.tol, gopt);
}

/// Worst case per parameter name over several reports.
inline GradCheckReport merge_grad_checks(const std::vector<GradCheckReport>& reports) {
  GradCheckReport out;
  std::map<std::string, std::size_t> slot;
  for (const auto& r : reports) {
    out.eps = r.eps;
    out.tol = r.tol;
    for (const auto& p : r.params) {
      auto [it, inserted] = slot.emplace(p.name, out.params.size());
      if (inserted) {
        out.params.push_back(p);
        continue;
      }
      auto& q = out.params[it->second];
      q.max_rel_error = std::max(q.max_rel_error, p.max_rel_error);
      q.max_abs_error = std::max(q.max_abs_error, p.max_abs_error);
      q.checked += p.checked;
      q.skipped_kinks += p.skipped_kinks;
      q.passed = q.passed && p.passed;
    }
  }
  return out;
}

inline std::string grad_check_table(const GradCheckReport& r) {
  std::size_t w = 9;
  for (const auto& p : r.params) w = std::max(w, p.name.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(w)) << "parameter" << std::right << std::setw(9) << "checked"
     << std::setw(7) << "kinks" << std::setw(14) << "max_rel_err" << "  status\n";
  for (const auto& p : r.params) {
    char err[32];
    std::snprintf(err, sizeof err, "%.3e", p.max_rel_error);
    os << std::left << std::setw(static_cast<int>(w)) << p.name << std::right << std::setw(9) << p.checked
       << std::setw(7) << p.skipped_kinks << std::setw(14) << err << "  " << (p.passed ? "ok" : "FAIL") << '\n';
  }
  char worst[32];
  std::snprintf(worst, sizeof worst, "%.3e", r.max_rel_error());
  os << "max relative error " << worst << " (tolerance " << r.tol << ", eps " << r.eps << "): "
     << (r.passed() ? "pass" : "FAIL") << '\n';
  return os.str();
}

}  // namespace kinform
