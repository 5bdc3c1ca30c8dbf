// Acceptance run: one PASS/FAIL line per criterion, exit 1 if any fails.
// Usage: kinform_acceptance [criterion numbers...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kinform/checks.hpp"
#include "kinform/eval.hpp"

using namespace kinform;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

/// Collects failed expectations; the first few become the detail line.
class Checker {
 public:
  void expect(bool ok, const std::string& what) {
    if (ok) return;
    ++failures_;
    if (failures_ <= 3) notes_ += (notes_.empty() ? "" : "; ") + what;
  }
  Outcome result(const std::string& summary) const {
    if (!failures_) return {true, summary};
    return {false, summary + " | " + std::to_string(failures_) + " failed: " + notes_};
  }

 private:
  std::size_t failures_ = 0;
  std::string notes_;
};

std::string fmt(double v, int decimals = 4) { return format_fixed(v, decimals); }

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true) {
  std::vector<Real> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<Real>(uniform(rng, -1.0, 1.0));
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Tensor normal_vector(Rng& rng, std::size_t n) {
  std::vector<Real> v(n);
  for (auto& x : v) x = static_cast<Real>(normal(rng));
  return Tensor({n}, std::move(v));
}

Tensor random_image(Rng& rng, std::size_t side) {
  std::vector<Real> v(3 * side * side);
  for (auto& x : v) x = static_cast<Real>(uniform01(rng));
  return Tensor({3, side, side}, std::move(v));
}

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.numel() == b.numel() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(Real)) == 0;
}

bool all_zero(std::span<const Real> g) {
  return std::all_of(g.begin(), g.end(), [](Real v) { return v == 0; });
}

double population_std(const std::vector<double>& v) {
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

Tensor project(const Tensor& y, const Tensor& direction) { return sum(mul(y, direction)); }

nlohmann::json load_fixture(const std::string& name) {
  std::ifstream in(std::string(KINFORM_FIXTURE_DIR) + "/" + name);
  if (!in) throw IoError("missing fixture " + name);
  return nlohmann::json::parse(in);
}

/// Small embedding-mode setup shared by the training-based contracts.
TrainConfig small_embedding_config() {
  TrainConfig cfg;
  cfg.input = InputMode::Embedding;
  cfg.synthetic.mode = ImageMode::Embedding;
  cfg.synthetic.n_families = 20;
  cfg.synthetic.latent_dim = 8;
  cfg.embedding_dim = 8;
  cfg.fusion_channels = 8;
  cfg.epochs = 3;
  cfg.augment = false;
  cfg.seed = 11;
  return cfg;
}

std::vector<std::size_t> first_families(std::size_t n) {
  std::vector<std::size_t> f(n);
  for (std::size_t i = 0; i < n; ++i) f[i] = i;
  return f;
}

LossBreakdown backward(const System& sys, const std::vector<TrainSample>& batch, const LossOptions& opt) {
  zero_grads(sys.named());
  Tape tape;
  LossBreakdown lb;
  {
    TapeScope scope(tape);
    lb = total_loss(batch, sys, opt);
  }
  tape.backward(lb.loss);
  return lb;
}

// ---------------------------------------------------------------------------
// 1. Gradients

using OpCase = std::function<std::pair<std::function<Tensor()>, std::vector<NamedTensor>>(Rng&)>;

std::vector<std::pair<std::string, OpCase>> op_cases() {
  std::vector<std::pair<std::string, OpCase>> cases;
  auto with = [](std::function<Tensor()> f, std::vector<NamedTensor> p) { return std::make_pair(f, p); };
  cases.push_back({"matmul", [=](Rng& r) {
    Tensor a = random_tensor({3, 4}, r), b = random_tensor({4, 2}, r), d = random_tensor({3, 2}, r, false);
    return with([=] { return project(matmul(a, b), d); }, {{"a", a}, {"b", b}});
  }});
  cases.push_back({"linear", [=](Rng& r) {
    Tensor x = random_tensor({5}, r), w = random_tensor({3, 5}, r), b = random_tensor({3}, r),
           d = random_tensor({3}, r, false);
    return with([=] { return project(linear(x, w, b), d); }, {{"x", x}, {"w", w}, {"b", b}});
  }});
  for (std::size_t stride : {1u, 2u}) {
    cases.push_back({"conv2d_s" + std::to_string(stride), [=](Rng& r) {
      Tensor x = random_tensor({2, 5, 5}, r), w = random_tensor({3, 2, 3, 3}, r), b = random_tensor({3}, r);
      const std::size_t o = (5 + 2 - 3) / stride + 1;
      Tensor d = random_tensor({3, o, o}, r, false);
      return with([=] { return project(conv2d(x, w, b, stride, 1), d); }, {{"x", x}, {"w", w}, {"b", b}});
    }});
  }
  cases.push_back({"conv1d_k1", [=](Rng& r) {
    Tensor x = random_tensor({6, 2}, r), w = random_tensor({4, 2}, r), b = random_tensor({4}, r),
           d = random_tensor({6, 4}, r, false);
    return with([=] { return project(conv1d_k1(x, w, b), d); }, {{"x", x}, {"w", w}, {"b", b}});
  }});
  cases.push_back({"elementwise", [=](Rng& r) {
    Tensor a = random_tensor({4}, r), b = random_tensor({4}, r), d = random_tensor({4}, r, false);
    return with([=] { return project(sub(add(mul(a, b), scale(a, 0.7)), b), d); }, {{"a", a}, {"b", b}});
  }});
  cases.push_back({"l2_normalize", [=](Rng& r) {
    Tensor x = random_tensor({6}, r), d = random_tensor({6}, r, false);
    return with([=] { return project(l2_normalize(x), d); }, {{"x", x}});
  }});
  cases.push_back({"relu", [=](Rng& r) {
    Tensor x = random_tensor({8}, r), d = random_tensor({8}, r, false);
    return with([=] { return project(relu(x), d); }, {{"x", x}});
  }});
  cases.push_back({"sigmoid", [=](Rng& r) {
    Tensor x = random_tensor({6}, r), d = random_tensor({6}, r, false);
    return with([=] { return project(sigmoid(x), d); }, {{"x", x}});
  }});
  cases.push_back({"softmax", [=](Rng& r) {
    Tensor x = random_tensor({2, 5}, r), d = random_tensor({2, 5}, r, false);
    return with([=] { return project(softmax(x), d); }, {{"x", x}});
  }});
  cases.push_back({"avgpool_length", [=](Rng& r) {
    Tensor x = random_tensor({7, 3}, r), d = random_tensor({3}, r, false);
    return with([=] { return project(avgpool_length(x), d); }, {{"x", x}});
  }});
  cases.push_back({"stack_concat", [=](Rng& r) {
    Tensor a = random_tensor({4}, r), b = random_tensor({4}, r), d = random_tensor({4, 4}, r, false);
    return with([=] {
      return project(concat_channels(stack_channels(a, b), stack_channels(b, a)), d);
    }, {{"a", a}, {"b", b}});
  }});
  cases.push_back({"bce", [=](Rng& r) {
    Tensor z = random_tensor({1}, r);
    const Real label = uniform01(r) < 0.5 ? 0 : 1;
    return with([=] { return bce(sigmoid(z), label); }, {{"z", z}});
  }});
  cases.push_back({"cross_entropy", [=](Rng& r) {
    Tensor z = random_tensor({5}, r);
    const std::size_t label = uniform_index(r, 5);
    return with([=] { return cross_entropy(z, label); }, {{"z", z}});
  }});
  cases.push_back({"sphere", [=](Rng& r) {
    Tensor x = random_tensor({6}, r), w = random_tensor({5, 6}, r);
    const std::size_t label = uniform_index(r, 5);
    const MarginConfig mc{1 + static_cast<int>(uniform_index(r, 4)), std::exp(uniform(r, std::log(5.0), std::log(1500.0)))};
    return with([=] { return sphere_loss(x, label, w, mc); }, {{"x", x}, {"w", w}});
  }});
  return cases;
}

Outcome gradients() {
  constexpr std::size_t kSeeds = 100;
  constexpr double kEps = 1e-5, kTol = 1e-4;
  Checker check;
  std::vector<GradCheckReport> op_reports;
  const auto cases = op_cases();
  for (const auto& [name, make_case] : cases) {
    for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
      Rng rng(derive_seed(seed, name));
      auto [f, params] = make_case(rng);
      GradCheckReport r = grad_check(f, params, kEps, kTol);
      for (auto& p : r.params) p.name = name + "." + p.name;
      check.expect(r.passed(), name + " seed " + std::to_string(seed) + " rel " + sci(r.max_rel_error()));
      op_reports.push_back(std::move(r));
    }
  }
  const GradCheckReport ops = merge_grad_checks(op_reports);

  const TrainConfig tiny;  // pixel input, full multi-task model
  SystemCheckOptions sopt;
  sopt.eps = kEps;
  sopt.tol = kTol;
  std::vector<GradCheckReport> sys_reports;
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    GradCheckReport r = system_grad_check(tiny, derive_seed(42, "acceptance-gradcheck", seed), sopt);
    check.expect(r.passed(), "model seed " + std::to_string(seed) + " rel " + sci(r.max_rel_error()));
    sys_reports.push_back(std::move(r));
  }
  const GradCheckReport sys = merge_grad_checks(sys_reports);
  return check.result(std::to_string(cases.size()) + " ops x " + std::to_string(kSeeds) + " seeds max rel " +
                      sci(ops.max_rel_error()) + "; tiny model x " + std::to_string(kSeeds) + " seeds max rel " +
                      sci(sys.max_rel_error()) + " (tol " + sci(kTol) + ", eps " + sci(kEps) + ")");
}

// ---------------------------------------------------------------------------
// 2. Loss routing

Outcome routing() {
  Checker check;
  std::size_t batches = 0;
  for (bool multitask : {true, false}) {
    TrainConfig cfg;
    cfg.multitask = multitask;
    const System sys = build_system(cfg, 8, 0, derive_seed(7, "routing", multitask));
    Rng rng = make_rng(7, "routing-batch", multitask);
    auto sample = [&](KinshipClass c, std::size_t i) {
      TrainSample s;
      s.a = random_image(rng, cfg.input_side);
      s.b = random_image(rng, cfg.input_side);
      s.cls = c;
      s.label = static_cast<Real>(i % 2);
      s.id_a = static_cast<long>(uniform_index(rng, 8));
      s.id_b = static_cast<long>(uniform_index(rng, 8));
      return s;
    };
    const LossOptions lopt = loss_options(cfg, 20.0);
    for (KinshipClass c : cfg.classes) {
      std::vector<TrainSample> batch;
      for (std::size_t i = 0; i < 3; ++i) batch.push_back(sample(c, i));
      backward(sys, batch, lopt);
      ++batches;
      const Model& target = sys.model_for(c);
      std::vector<NamedTensor> live = target.backbone.named();
      for (const auto& t : target.head(c)->named()) live.push_back(t);
      bool head_moved = false;
      for (const auto& t : sys.named()) {
        const bool is_live = std::any_of(live.begin(), live.end(),
                                         [&](const NamedTensor& l) { return l.tensor.same_storage(t.tensor); });
        if (!is_live) {
          check.expect(all_zero(t.tensor.grad()),
                       std::string(class_tag(c)) + " batch leaked into " + t.name);
        }
      }
      for (const auto& t : target.head(c)->named()) head_moved = head_moved || !all_zero(t.tensor.grad());
      check.expect(head_moved, std::string(class_tag(c)) + " head got no gradient");
    }

    // Mixed batches: total = phi + psi + alpha^2 * sum of per-class BCE.
    for (double alpha : {0.0, 0.5, 1.0, 2.0, 3.7}) {
      auto opt = loss_options(cfg, 20.0);
      opt.alpha = alpha;
      std::vector<TrainSample> batch;
      for (std::size_t i = 0; i < 2 * cfg.classes.size(); ++i) batch.push_back(sample(cfg.classes[i % cfg.classes.size()], i));
      NoGradScope no_grad;
      const LossBreakdown lb = total_loss(batch, sys, opt);
      double bce_sum = 0;
      for (double b : lb.bce) bce_sum += b;
      const double parts = lb.sphere_phi + lb.sphere_psi + alpha * alpha * bce_sum;
      check.expect(std::abs(lb.total - parts) <= 1e-12 * std::abs(lb.total),
                   "additivity alpha " + fmt(alpha, 1) + " off by " + sci(std::abs(lb.total - parts)));
      check.expect(lb.loss.item() == lb.total || std::abs(lb.loss.item() - lb.total) <= 1e-12 * std::abs(lb.total),
                   "loss tensor differs from total");
    }
  }
  return check.result(std::to_string(batches) + " pure-class batches (multi-task and single-task): non-target "
                      "gradients exactly zero; breakdown additive to 1e-12 relative");
}

// ---------------------------------------------------------------------------
// 3. Symmetry

void randomize(HeadParams& h, std::uint64_t seed) {
  Rng rng = make_rng(seed, "randomize-head");
  for (auto& t : h.named())
    for (auto& v : t.tensor.data()) v = static_cast<Real>(0.5 * normal(rng));
}

Outcome symmetry() {
  Checker check;
  FusionConfig fc;
  std::size_t pairs = 0;
  std::vector<KinshipClass> tied, untied;
  for (KinshipClass c : kTrainedClasses) (default_tie_mode(c) == TieMode::Tied ? tied : untied).push_back(c);
  check.expect(!tied.empty() && !untied.empty(), "need both tie modes");
  for (std::size_t i = 0; i < 1000; ++i) {
    const KinshipClass c = tied[i % tied.size()];
    auto h = init_head(c, fc, 3);
    randomize(h, i);
    Rng rng = make_rng(i, "symmetry-pair");
    Tensor a = normal_vector(rng, fc.d), b = normal_vector(rng, fc.d);
    check.expect(same_bits(head_score(a, b, h), head_score(b, a, h)),
                 std::string(class_tag(c)) + " pair " + std::to_string(i) + " not bit-exact");
    check.expect(same_bits(fuse_score(apply_weighting(a, b, h), h), fuse_score(apply_weighting(b, a, h), h)),
                 std::string(class_tag(c)) + " fuse_score pair " + std::to_string(i) + " not bit-exact");
    ++pairs;
  }

  std::size_t sensitive = 0;
  for (KinshipClass c : untied) {
    // Some draws leave the final ReLU dead (constant score), so use several.
    auto h = init_head(c, fc, 5);
    Rng rng = make_rng(7, "untied-pair", static_cast<std::uint64_t>(c));
    int differing = 0;
    for (int i = 0; i < 200; ++i) {
      if (i % 20 == 0) randomize(h, derive_seed(6, "untied", static_cast<std::uint64_t>(i)));
      Tensor a = normal_vector(rng, fc.d), b = normal_vector(rng, fc.d);
      if (head_score(a, b, h).item() != head_score(b, a, h).item()) ++differing;
    }
    check.expect(differing > 0, std::string(class_tag(c)) + " untied head is order-invariant");
    sensitive += differing > 0;
  }

  TrainConfig cfg = small_embedding_config();
  cfg.batch_size = 4;
  cfg.epochs = 100;
  const Dataset ds = generate_synthetic(cfg.synthetic, cfg.seed);
  const auto fams = first_families(16);
  TrainState st = init_training(ds, fams, cfg);
  TrainOptions one;
  one.max_epochs = 1;
  std::size_t steps = 0;
  while (steps < 100) {
    train_epochs(st, ds, fams, cfg, one);
    steps += st.history.back().steps;
  }
  std::size_t tied_heads = 0;
  for (const auto& h : st.system.models[0].heads) {
    if (h.tie != TieMode::Tied) continue;
    ++tied_heads;
    check.expect(same_bits(h.w_phi, h.w_psi), std::string(class_tag(h.cls)) + " tied buffers diverged");
    const bool moved = std::any_of(h.w_phi.data().begin(), h.w_phi.data().end(), [](Real v) { return v != 1; });
    check.expect(moved, std::string(class_tag(h.cls)) + " tied weighting never trained");
  }
  return check.result(std::to_string(pairs) + " tied pairs bit-exact; " + std::to_string(tied_heads) +
                      " tied heads identical after " + std::to_string(steps) + " steps; " +
                      std::to_string(sensitive) + "/" + std::to_string(untied.size()) + " untied heads order-sensitive");
}

// ---------------------------------------------------------------------------
// 4. Adaptive sampler

Outcome sampler() {
  Checker check;
  SyntheticConfig sc;
  sc.n_families = 300;
  sc.imbalance = ImbalanceProfile::RfiwLike;
  const Dataset ds = generate_synthetic(sc, 42);
  std::string spreads;
  std::size_t wraps = 0;
  for (KinshipClass c : kTrainedClasses) {
    const auto counts = family_pair_counts(ds, c);
    const EpochPlan plan = build_plan(SamplerKind::Adaptive, ds, c, 42);
    std::vector<std::size_t> nonzero;
    for (std::size_t n : counts)
      if (n) nonzero.push_back(n);
    std::sort(nonzero.begin(), nonzero.end());
    const std::size_t median = nonzero[(nonzero.size() - 1) / 2];
    check.expect(plan.cap == median, std::string(class_tag(c)) + " cap " + std::to_string(plan.cap) +
                                         " != median " + std::to_string(median));
    const double raw_std = population_std({counts.begin(), counts.end()});
    const double drawn_std = population_std({plan.drawn.begin(), plan.drawn.end()});
    check.expect(drawn_std < raw_std, std::string(class_tag(c)) + " drawn std " + fmt(drawn_std, 2) +
                                          " not below raw " + fmt(raw_std, 2));
    for (std::size_t f = 0; f < counts.size(); ++f) {
      check.expect(plan.drawn[f] <= median, std::string(class_tag(c)) + " family " + std::to_string(f) + " over cap");
    }
    spreads += std::string(spreads.empty() ? "" : " ") + class_tag(c).data() + " " + fmt(raw_std, 1) + "->" +
               fmt(drawn_std, 1);

    if (!detail::uses_cyclic_buffers(c)) continue;
    std::map<std::size_t, std::vector<std::size_t>> emitted;
    for (const auto& p : plan.pairs) {
      emitted[p.member_a].push_back(p.image_a);
      emitted[p.member_b].push_back(p.image_b);
    }
    for (const auto& [m, seq] : emitted) {
      const auto& images = ds.members[m].images;
      const std::set<std::size_t> all(images.begin(), images.end());
      for (std::size_t start = 0; start < seq.size(); start += images.size()) {
        const std::size_t end = std::min(seq.size(), start + images.size());
        const std::set<std::size_t> window(seq.begin() + start, seq.begin() + end);
        const bool full = end - start == images.size();
        check.expect(window.size() == end - start && (!full || window == all),
                     std::string(class_tag(c)) + " member " + std::to_string(m) + " repeats within a wrap");
        wraps += full;
      }
    }
  }
  return check.result("std raw->drawn " + spreads + "; drawn <= median cap; " + std::to_string(wraps) +
                      " full buffer wraps each emit every image once");
}

// ---------------------------------------------------------------------------
// 5. Learnability

Outcome learnability() {
  Checker check;
  const auto ref = load_fixture("acceptance_reference.json").at("learnability");
  TrainConfig cfg;
  cfg.augment = false;
  cfg.seed = ref.at("seed").get<std::uint64_t>();
  cfg.epochs = ref.at("epochs").get<std::size_t>();
  const std::size_t fold = ref.at("fold").get<std::size_t>();
  const Dataset ds = generate_synthetic(cfg.synthetic, cfg.seed);
  const FoldResult r = run_fold(ds, config_split(ds, cfg), fold, cfg);
  check.expect(!r.state.diverged, "training diverged");
  std::string classes;
  for (KinshipClass c : cfg.classes) {
    const ClassResult* cr = r.test.find(c);
    if (!cr || cr->total == 0) {
      check.expect(false, std::string(class_tag(c)) + " has no test pairs");
      continue;
    }
    const double lb = wilson_lower(cr->correct, cr->total);
    check.expect(lb > 0.5, std::string(class_tag(c)) + " Wilson lower bound " + fmt(lb, 3));
    classes += std::string(classes.empty() ? "" : " ") + class_tag(c).data() + " " + fmt(lb, 3);
  }
  const double avg = r.test.average();
  const double expected = ref.at("test_average").get<double>(), tol = ref.at("tolerance").get<double>();
  check.expect(std::abs(avg - expected) <= tol,
               "average " + fmt(avg) + " outside " + fmt(expected) + " +/- " + fmt(tol, 2));
  return check.result("average " + fmt(avg) + " (reference " + fmt(expected) + " +/- " + fmt(tol, 2) +
                      "); Wilson lower bounds " + classes);
}

// ---------------------------------------------------------------------------
// 6. Ablation directionality

Outcome ablation() {
  Checker check;
  TrainConfig cfg;  // the learnability setup: pixel tiny model, seed 42
  cfg.augment = false;
  const Dataset ds = generate_synthetic(cfg.synthetic, cfg.seed);
  std::vector<AblationArm> arms;
  for (const char* name : {"full", "embedding-only", "uniform-sampling", "single-task", "fusion-by-concat"})
    arms.push_back(ablation_arm(name));
  StudyOptions opt;
  opt.folds = {0};
  const auto results = run_ablation(ds, cfg, arms, opt);
  auto avg = [&](std::size_t i) { return 100.0 * results[i].test.average(); };
  auto gap = [&](std::size_t i) { return 100.0 * (results[i].train.average() - results[i].test.average()); };
  constexpr double kTie = 0.5;  // percentage points
  for (std::size_t i = 1; i <= 3; ++i) {
    check.expect(avg(0) >= avg(i) - kTie, "full " + fmt(avg(0), 2) + " < " + arms[i].name + " " + fmt(avg(i), 2));
  }
  check.expect(gap(4) >= gap(0), "concat gap " + fmt(gap(4), 2) + " < full gap " + fmt(gap(0), 2));
  std::string summary;
  for (std::size_t i = 0; i < arms.size(); ++i) {
    summary += std::string(i ? "; " : "") + arms[i].name + " " + fmt(avg(i), 2) + " (gap " + fmt(gap(i), 2) + ")";
  }
  return check.result(summary);
}

// ---------------------------------------------------------------------------
// 7. Determinism and persistence

Outcome determinism() {
  Checker check;
  TrainConfig cfg = small_embedding_config();
  cfg.epochs = 4;
  const Dataset ds = generate_synthetic(cfg.synthetic, cfg.seed);
  const FoldSplit split = config_split(ds, cfg);
  const auto fams = split.train_families(0);
  const auto a = train(ds, fams, cfg);
  const auto b = train(ds, fams, cfg);
  check.expect(checkpoint_bytes(a, cfg) == checkpoint_bytes(b, cfg), "reruns give different checkpoints");
  check.expect(metrics_csv(a) == metrics_csv(b), "reruns give different metrics");
  const auto pairs = make_eval_pairs(ds, split.test_families(0), derive_seed(cfg.seed, "test", 0));
  const EvalReport ra = eval_report("Evaluation", "run", evaluate(a.system, ds, pairs), cfg, "0");
  const EvalReport rb = eval_report("Evaluation", "run", evaluate(b.system, ds, pairs), cfg, "0");
  check.expect(report_text(ra) == report_text(rb) && report_csv(ra) == report_csv(rb) &&
                   report_json(ra).dump() == report_json(rb).dump(),
               "reruns give different reports");

  // Two epochs, save, reload, two more against four straight.
  TrainOptions two;
  two.max_epochs = 2;
  TrainState first = init_training(ds, fams, cfg);
  train_epochs(first, ds, fams, cfg, two);
  std::stringstream buf;
  write_checkpoint(buf, first, cfg);
  Checkpoint loaded = read_checkpoint(buf);
  check.expect(checkpoint_bytes(loaded.state, loaded.config) == checkpoint_bytes(first, cfg),
               "checkpoint round trip changed bytes");
  train_epochs(loaded.state, ds, fams, loaded.config, two);
  check.expect(loaded.state.epoch == 4, "resumed run stopped at epoch " + std::to_string(loaded.state.epoch));
  check.expect(checkpoint_bytes(loaded.state, cfg) == checkpoint_bytes(a, cfg), "resumed training diverges from straight");
  return check.result("reruns byte-identical (checkpoint " + std::to_string(checkpoint_bytes(a, cfg).size()) +
                      " bytes, text/csv/json reports); save at epoch 2 + reload + 2 epochs == 4 straight epochs");
}

// ---------------------------------------------------------------------------
// 8. Shapes

Outcome shapes() {
  Checker check;
  NoGradScope no_grad;
  const BackboneParams p = init_backbone(BackboneConfig::paper_shaped(), 1);
  Rng rng = make_rng(1, "shape-image");
  ShapeTrace trace;
  const Tensor e = embed(random_image(rng, 108), p, &trace);
  const Tensor logits = identity_logits(e, p);
  const ShapeTrace expected = {{"input", {3, 108, 108}},   {"Conv1.x", {64, 54, 54}}, {"Conv2.x", {128, 27, 27}},
                               {"Conv3.x", {256, 14, 14}}, {"Conv4.x", {512, 7, 7}},  {"FC-1", {512}}};
  check.expect(trace.size() >= expected.size(), "backbone trace too short");
  for (std::size_t i = 0; i < std::min(trace.size(), expected.size()); ++i) {
    check.expect(trace[i].layer == expected[i].layer && trace[i].shape == expected[i].shape,
                 "backbone row " + trace[i].layer + " " + shape_str(trace[i].shape));
  }
  check.expect(logits.shape() == Shape{10676}, "FC-2 gives " + shape_str(logits.shape()));

  // Layer, input, activation, output.
  const FusionConfig fc = FusionConfig::paper_shaped();
  const HeadParams h = init_head(KinshipClass::FD, fc, 1);
  FusionTrace ft;
  fuse_score(apply_weighting(normal_vector(rng, 512), normal_vector(rng, 512), h), h, &ft);
  FusionTrace table = {{"Input", {512, 2}, "Relu", {512, 512}}};
  for (int i = 1; i <= 8; ++i) table.push_back({"1D Conv" + std::to_string(i), {512, 512}, "Relu", {512, 512}});
  table.push_back({"1D Conv9", {512, 1024}, "Relu", {512, 1}});
  check.expect(ft.size() == table.size() + 2, "fusion trace has " + std::to_string(ft.size()) + " rows");
  for (std::size_t i = 0; i < std::min(ft.size(), table.size()); ++i) {
    check.expect(ft[i].layer == table[i].layer && ft[i].input == table[i].input &&
                     ft[i].activation == table[i].activation && ft[i].output == table[i].output,
                 "fusion row " + ft[i].layer + " " + shape_str(ft[i].input) + " -> " + shape_str(ft[i].output));
  }
  if (ft.size() == table.size() + 2) {
    const auto& pool = ft[table.size()];
    check.expect(pool.layer == "AvgPool" && pool.input == Shape{512, 1} && pool.output == Shape{1},
                 "row after Conv9 is not the length pooling");
    check.expect(ft.back().layer == "Score" && ft.back().activation == "Sigmoid", "last row is not the score");
  }
  return check.result("backbone 3x108x108 -> ... -> FC-1 512 -> FC-2 10676; fusion Input 512x2 -> 8 x (512x512) -> "
                      "Conv9 512x1024 -> 512x1, then pooling and sigmoid");
}

// ---------------------------------------------------------------------------
// 9. Report fidelity

Outcome report() {
  Checker check;
  std::ifstream in(std::string(KINFORM_FIXTURE_DIR) + "/table5_comparison.json");
  const EvalReport rep = report_from_json(nlohmann::ordered_json::parse(in));
  const std::vector<std::string> order = {"B-B", "S-S", "SIBS", "F-D", "F-S", "M-D", "M-S"};
  std::vector<std::string> names;
  for (KinshipClass c : rep.columns) names.emplace_back(class_label(c));
  check.expect(names == order, "column order differs");
  const ReportRow* ours = nullptr;
  for (const auto& r : rep.rows)
    if (r.label == "Ours") ours = &r;
  check.expect(ours != nullptr, "no Ours row");
  const std::string want = "85.9 86.3 78.0 77.4 74.9 76.9 75.6 | 79.6";
  const std::string got = ours ? format_row_values(*ours, rep.decimals) : "";
  check.expect(got == want, "rendered \"" + got + "\"");
  const std::string text = report_text(rep);
  check.expect(text.find("Ours    85.9  86.3  78.0  77.4  74.9  76.9  75.6 |  79.6") != std::string::npos,
               "text table row differs");
  return check.result("Ours renders \"" + got + "\"");
}

struct Criterion {
  int id;
  std::string name;
  Outcome (*run)();
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all = {
      {1, "gradient-correctness", gradients},   {2, "loss-routing", routing},
      {3, "symmetry-contracts", symmetry},      {4, "adaptive-sampler", sampler},
      {5, "learnability", learnability},        {6, "ablation-directionality", ablation},
      {7, "determinism-persistence", determinism}, {8, "shape-fidelity", shapes},
      {9, "report-fidelity", report},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << " (" << fmt(secs, 1)
              << " s): " << o.detail << std::endl;
  }
  return failed ? 1 : 0;
}
