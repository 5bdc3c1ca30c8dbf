#pragma once

// Central-difference verification of tape gradients.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "kinform/ops.hpp"
#include "kinform/rng.hpp"

namespace kinform {

struct ParamGradCheck {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  /// Elements whose stencil crossed a ReLU/clamp/margin branch boundary,
  /// where finite differences do not estimate the derivative.
  std::size_t skipped_kinks = 0;
  bool passed = true;
};

struct GradCheckReport {
  double eps = 0.0;
  double tol = 0.0;
  std::vector<ParamGradCheck> params;

  double max_rel_error() const {
    double m = 0.0;
    for (const auto& p : params) m = std::max(m, p.max_rel_error);
    return m;
  }
  bool passed() const {
    return std::all_of(params.begin(), params.end(), [](const auto& p) { return p.passed; });
  }
};

struct GradCheckOptions {
  /// Denominator floor: rel = |a - n| / max(|a|, |n|, floor).
  double abs_floor = 1e-6;
  /// Check at most this many elements per tensor (0 = all); chosen by seed.
  std::size_t max_elements = 0;
  std::uint64_t seed = 0;
};

namespace detail {

struct ProbedValue {
  Real value;
  std::uint64_t branches;
};

inline ProbedValue probed_eval(const std::function<Tensor()>& f) {
  NoGradScope no_grad;
  BranchProbe probe;
  BranchProbe* previous = active_probe_slot();
  active_probe_slot() = &probe;
  Tensor out;
  try {
    out = f();
  } catch (...) {
    active_probe_slot() = previous;
    throw;
  }
  active_probe_slot() = previous;
  if (out.numel() != 1) throw ShapeError("grad_check: function must return a scalar");
  return {out[0], probe.value()};
}

}  // namespace detail

/// Compares tape gradients of the scalar function `f` with respect to
/// `params` against central differences with step `eps`.
inline GradCheckReport grad_check(const std::function<Tensor()>& f,
                                  const std::vector<NamedTensor>& params, double eps,
                                  double tol, const GradCheckOptions& options = {}) {
  if (!(eps > 0.0 && eps <= 1e-2)) {
    throw CheckInvalidError("grad_check: eps must lie in (0, 1e-2], got " + std::to_string(eps));
  }
  const auto base = detail::probed_eval(f);
  const auto again = detail::probed_eval(f);
  if (std::memcmp(&base.value, &again.value, sizeof(Real)) != 0 || base.branches != again.branches) {
    throw CheckInvalidError("grad_check: function is not deterministic at the base point");
  }

  std::vector<std::vector<Real>> analytic;
  {
    for (const auto& p : params) p.tensor.node_ptr()->requires_grad = true;
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = f();
    for (const auto& p : params) p.tensor.node_ptr()->grad.assign(p.tensor.numel(), Real(0));
    tape.backward(loss);
    for (const auto& p : params) analytic.emplace_back(p.tensor.grad().begin(), p.tensor.grad().end());
  }

  GradCheckReport report;
  report.eps = eps;
  report.tol = tol;
  Rng rng(derive_seed(options.seed, "grad_check"));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor t = params[pi].tensor;
    std::vector<std::size_t> idx(t.numel());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (options.max_elements != 0 && idx.size() > options.max_elements) {
      shuffle(idx, rng);
      idx.resize(options.max_elements);
      std::sort(idx.begin(), idx.end());
    }
    ParamGradCheck row;
    row.name = params[pi].name;
    for (std::size_t i : idx) {
      const Real saved = t[i];
      t[i] = saved + static_cast<Real>(eps);
      const auto plus = detail::probed_eval(f);
      t[i] = saved - static_cast<Real>(eps);
      const auto minus = detail::probed_eval(f);
      t[i] = saved;
      if (plus.branches != base.branches || minus.branches != base.branches) {
        ++row.skipped_kinks;
        continue;
      }
      const double numeric = (static_cast<double>(plus.value) - minus.value) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), options.abs_floor});
      row.max_abs_error = std::max(row.max_abs_error, abs_err);
      row.max_rel_error = std::max(row.max_rel_error, rel);
      ++row.checked;
    }
    row.passed = row.max_rel_error < tol;
    report.params.push_back(row);
  }
  return report;
}

}  // namespace kinform
