#pragma once

// Family-disjoint folds, balanced evaluation pairs, per-class accuracy,
// accuracy tables (text / CSV / JSON), the ablation runner and the alpha sweep.

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "kinform/trainer.hpp"

namespace kinform {

// ---------------------------------------------------------------------------
// Folds

struct FoldSplit {
  std::size_t k = 5;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::size_t>> folds;  // family indices, ascending

  const std::vector<std::size_t>& test_families(std::size_t fold) const { return folds.at(fold); }

  std::vector<std::size_t> train_families(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < folds.size(); ++i)
      if (i != fold) out.insert(out.end(), folds[i].begin(), folds[i].end());
    std::sort(out.begin(), out.end());
    return out;
  }

  std::string bytes() const {
    std::string s = std::to_string(k) + ";" + std::to_string(seed);
    for (const auto& f : folds) {
      s += "|";
      for (std::size_t x : f) s += std::to_string(x) + ",";
    }
    return s;
  }

  std::string digest() const { return hex64(fnv1a64(bytes())); }
};

/// Shuffles the families and deals them round-robin into k folds.
inline FoldSplit make_folds(const Dataset& ds, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("make_folds: need at least 2 folds");
  if (ds.families.size() < k) {
    throw DatasetError("make_folds: " + std::to_string(ds.families.size()) + " families cannot fill " +
                       std::to_string(k) + " folds");
  }
  auto order = ds.all_family_indices();
  Rng rng = make_rng(seed, "folds");
  shuffle(order, rng);
  FoldSplit split;
  split.k = k;
  split.seed = seed;
  split.folds.resize(k);
  for (std::size_t i = 0; i < order.size(); ++i) split.folds[i % k].push_back(order[i]);
  for (auto& f : split.folds) std::sort(f.begin(), f.end());
  return split;
}

/// The split every command uses for a config.
inline FoldSplit config_split(const Dataset& ds, const TrainConfig& cfg) {
  return make_folds(ds, cfg.folds, derive_seed(cfg.seed, "folds"));
}

// ---------------------------------------------------------------------------
// Evaluation pairs and scores

/// Balanced pairs over `families` for every trained class that can be
/// sampled there: the adaptive plan's positives plus one negative each.
inline std::vector<PairSample> make_eval_pairs(const Dataset& ds, const std::vector<std::size_t>& families,
                                               std::uint64_t seed) {
  std::vector<PairSample> out;
  for (KinshipClass c : kTrainedClasses) {
    const std::uint64_t idx = head_index(c);
    std::size_t available = 0;
    for (std::size_t f : families) available += ds.pair_count(f, c);
    if (available == 0) continue;
    EpochPlan plan = build_plan(SamplerKind::Adaptive, ds, c, derive_seed(seed, "eval-plan", idx), families);
    std::vector<PairSample> neg;
    try {
      neg = sample_negatives(plan.pairs, ds, derive_seed(seed, "eval-negatives", idx), families);
    } catch (const DatasetError&) {
      continue;
    }
    out.insert(out.end(), plan.pairs.begin(), plan.pairs.end());
    out.insert(out.end(), neg.begin(), neg.end());
  }
  return out;
}

/// Score per pair: head probability, or cosine similarity when fusion = none.
/// NaN for pairs whose class has no head.
inline std::vector<double> score_pairs(const System& sys, const Dataset& ds, const std::vector<PairSample>& pairs) {
  NoGradScope no_grad;
  std::vector<std::vector<std::optional<Tensor>>> cache(sys.models.size(),
                                                        std::vector<std::optional<Tensor>>(ds.images.size()));
  auto embedding = [&](std::size_t model, std::size_t image) -> const Tensor& {
    auto& slot = cache[model][image];
    if (!slot) slot = embed(input_tensor(ds.images[image]), sys.models[model].backbone);
    return *slot;
  };
  std::vector<double> scores;
  scores.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (!sys.serves(p.cls)) {
      scores.push_back(std::nan(""));
      continue;
    }
    const std::size_t m = sys.multitask ? 0 : sys.class_slot(p.cls);
    const Tensor& a = embedding(m, p.image_a);
    const Tensor& b = embedding(m, p.image_b);
    if (sys.fusion == FusionKind::None) {
      scores.push_back(cosine_similarity(a.data(), b.data()));
    } else {
      scores.push_back(head_score(a, b, *sys.models[m].head(p.cls)).item());
    }
  }
  return scores;
}

struct ClassResult {
  KinshipClass cls = KinshipClass::BB;
  std::size_t correct = 0;
  std::size_t total = 0;
  bool skipped = false;  // pairs present but no head

  double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

struct EvalResult {
  std::vector<ClassResult> classes;  // canonical order, classes with pairs only

  const ClassResult* find(KinshipClass c) const {
    for (const auto& r : classes)
      if (r.cls == c) return &r;
    return nullptr;
  }

  /// Unweighted mean over evaluated classes.
  double average() const {
    double s = 0;
    std::size_t n = 0;
    for (const auto& r : classes)
      if (!r.skipped && r.total) {
        s += r.accuracy();
        ++n;
      }
    return n ? s / static_cast<double>(n) : 0.0;
  }

  std::vector<KinshipClass> skipped() const {
    std::vector<KinshipClass> out;
    for (const auto& r : classes)
      if (r.skipped) out.push_back(r.cls);
    return out;
  }
};

/// Positive iff score >= threshold(cls). NaN scores mark skipped classes.
inline EvalResult accuracy_from_scores(const std::vector<PairSample>& pairs, const std::vector<double>& scores,
                                       const std::function<double(KinshipClass)>& threshold) {
  if (pairs.size() != scores.size()) throw ShapeError("accuracy_from_scores: pair and score counts differ");
  std::map<KinshipClass, ClassResult> by;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto& r = by[pairs[i].cls];
    r.cls = pairs[i].cls;
    if (std::isnan(scores[i])) {
      r.skipped = true;
      continue;
    }
    ++r.total;
    if ((scores[i] >= threshold(pairs[i].cls)) == pairs[i].positive) ++r.correct;
  }
  EvalResult out;
  for (KinshipClass c : kAllClasses) {
    auto it = by.find(c);
    if (it != by.end()) out.classes.push_back(it->second);
  }
  return out;
}

inline EvalResult evaluate(const System& sys, const Dataset& ds, const std::vector<PairSample>& pairs) {
  const auto scores = score_pairs(sys, ds, pairs);
  return accuracy_from_scores(pairs, scores, [&](KinshipClass c) { return sys.threshold(c); });
}

/// Accuracy-maximizing threshold: midpoints between sorted distinct scores.
inline double best_threshold(const std::vector<double>& scores, const std::vector<bool>& positive) {
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::size_t positives = 0;
  for (bool p : positive) positives += p;
  // Threshold below everything: all predicted positive.
  std::size_t correct = positives, best = positives;
  double best_t = order.empty() ? 0.0 : scores[order.front()] - 1.0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    correct += positive[order[i]] ? std::size_t(0) : std::size_t(1);
    correct -= positive[order[i]] ? std::size_t(1) : std::size_t(0);
    const bool boundary = i + 1 == order.size() || scores[order[i + 1]] > scores[order[i]];
    if (boundary && correct > best) {
      best = correct;
      best_t = i + 1 == order.size() ? scores[order[i]] + 1.0 : 0.5 * (scores[order[i]] + scores[order[i + 1]]);
    }
  }
  return best_t;
}

/// Cosine thresholds for fusion = none, chosen on pairs from the training families.
inline void calibrate_thresholds(System& sys, const Dataset& ds, const std::vector<std::size_t>& families,
                                 std::uint64_t seed) {
  if (sys.fusion != FusionKind::None) return;
  const auto pairs = make_eval_pairs(ds, families, derive_seed(seed, "calibration"));
  const auto scores = score_pairs(sys, ds, pairs);
  for (std::size_t k = 0; k < sys.classes.size(); ++k) {
    std::vector<double> s;
    std::vector<bool> pos;
    for (std::size_t i = 0; i < pairs.size(); ++i)
      if (pairs[i].cls == sys.classes[k]) {
        s.push_back(scores[i]);
        pos.push_back(pairs[i].positive);
      }
    sys.thresholds[k] = s.empty() ? 0.0 : best_threshold(s, pos);
  }
}

/// Training followed by threshold calibration.
inline TrainState fit(const Dataset& ds, const std::vector<std::size_t>& families, const TrainConfig& cfg,
                      const TrainOptions& opt = {}) {
  TrainState st = train(ds, families, cfg, opt);
  calibrate_thresholds(st.system, ds, families, cfg.seed);
  return st;
}

/// Lower end of the Wilson score interval.
inline double wilson_lower(std::size_t correct, std::size_t total, double z = 1.959963984540054) {
  if (total == 0) return 0.0;
  const double n = static_cast<double>(total);
  const double p = static_cast<double>(correct) / n;
  const double z2 = z * z;
  const double centre = p + z2 / (2 * n);
  const double half = z * std::sqrt(p * (1 - p) / n + z2 / (4 * n * n));
  return (centre - half) / (1 + z2 / n);
}

// ---------------------------------------------------------------------------
// Reports

inline const std::vector<KinshipClass>& table5_columns() {
  static const std::vector<KinshipClass> c = {kTrainedClasses.begin(), kTrainedClasses.end()};
  return c;
}

inline const std::vector<KinshipClass>& table7_columns() {
  static const std::vector<KinshipClass> c = {KinshipClass::BB, KinshipClass::SS, KinshipClass::SIBS,
                                              KinshipClass::FS, KinshipClass::FD, KinshipClass::MS,
                                              KinshipClass::MD};
  return c;
}

struct ReportRow {
  std::string label;
  std::vector<std::optional<double>> values;  // percent, one per column
  std::optional<double> average;              // percent
  std::vector<std::optional<double>> extras;  // one per EvalReport::extra_columns
  bool comparison = false;                    // quoted, not measured
};

struct EvalReport {
  std::string title;
  std::vector<KinshipClass> columns = table5_columns();
  std::vector<std::string> extra_columns;
  std::vector<ReportRow> rows;
  std::vector<std::pair<std::string, std::string>> meta;  // digest, seed, protocol, fold, ...
  int decimals = 1;
};

/// Measured row: class accuracies in column order and their unweighted mean.
/// Classes without results print as "-"; skipped classes as "skip".
inline ReportRow measured_row(const std::string& label, const EvalResult& r, const std::vector<KinshipClass>& columns) {
  ReportRow row;
  row.label = label;
  double sum = 0;
  std::size_t n = 0;
  for (KinshipClass c : columns) {
    const ClassResult* cr = r.find(c);
    if (cr && !cr->skipped && cr->total) {
      row.values.push_back(100.0 * cr->accuracy());
      sum += 100.0 * cr->accuracy();
      ++n;
    } else {
      row.values.push_back(std::nullopt);
    }
  }
  if (n) row.average = sum / static_cast<double>(n);
  return row;
}

inline std::string format_fixed(double v, int decimals) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(decimals) << v;
  return os.str();
}

/// "v1 v2 ... v7 | avg"
inline std::string format_row_values(const ReportRow& row, int decimals) {
  std::string s;
  for (std::size_t i = 0; i < row.values.size(); ++i) {
    if (i) s += ' ';
    s += row.values[i] ? format_fixed(*row.values[i], decimals) : "-";
  }
  s += " | ";
  s += row.average ? format_fixed(*row.average, decimals) : "-";
  return s;
}

inline std::string report_text(const EvalReport& rep) {
  std::size_t label_w = 6;
  for (const auto& r : rep.rows) label_w = std::max(label_w, r.label.size());
  const std::size_t cell_w = static_cast<std::size_t>(std::max(5, rep.decimals + 4));
  auto pad_left = [](const std::string& s, std::size_t w) { return std::string(w > s.size() ? w - s.size() : 0, ' ') + s; };
  auto pad_right = [](const std::string& s, std::size_t w) { return s + std::string(w > s.size() ? w - s.size() : 0, ' '); };
  auto cell = [&](const std::optional<double>& v) { return v ? format_fixed(*v, rep.decimals) : std::string("-"); };
  std::ostringstream os;
  if (!rep.title.empty()) os << rep.title << '\n';
  for (const auto& [k, v] : rep.meta) os << "# " << k << ": " << v << '\n';
  os << pad_right("", label_w);
  for (KinshipClass c : rep.columns) os << ' ' << pad_left(std::string(class_label(c)), cell_w);
  os << " |" << pad_left("Avg.", cell_w + 1);
  for (const auto& e : rep.extra_columns) os << ' ' << pad_left(e, std::max(cell_w, e.size()));
  os << '\n';
  for (const auto& r : rep.rows) {
    os << pad_right(r.label, label_w);
    for (const auto& v : r.values) os << ' ' << pad_left(cell(v), cell_w);
    os << " |" << pad_left(cell(r.average), cell_w + 1);
    for (std::size_t i = 0; i < rep.extra_columns.size(); ++i) {
      const auto v = i < r.extras.size() ? r.extras[i] : std::nullopt;
      os << ' ' << pad_left(cell(v), std::max(cell_w, rep.extra_columns[i].size()));
    }
    if (r.comparison) os << "  (quoted)";
    os << '\n';
  }
  return os.str();
}

inline std::string report_csv(const EvalReport& rep) {
  std::ostringstream os;
  for (const auto& [k, v] : rep.meta) os << "# " << k << "=" << v << '\n';
  os << "row";
  for (KinshipClass c : rep.columns) os << ',' << class_label(c);
  os << ",average";
  for (const auto& e : rep.extra_columns) os << ',' << e;
  os << ",kind\n";
  auto cell = [&](const std::optional<double>& v) { return v ? format_fixed(*v, rep.decimals + 2) : std::string(); };
  for (const auto& r : rep.rows) {
    os << r.label;
    for (const auto& v : r.values) os << ',' << cell(v);
    os << ',' << cell(r.average);
    for (std::size_t i = 0; i < rep.extra_columns.size(); ++i) os << ',' << cell(i < r.extras.size() ? r.extras[i] : std::nullopt);
    os << ',' << (r.comparison ? "quoted" : "measured") << '\n';
  }
  return os.str();
}

inline nlohmann::ordered_json report_json(const EvalReport& rep) {
  nlohmann::ordered_json j;
  j["title"] = rep.title;
  j["decimals"] = rep.decimals;
  for (const auto& [k, v] : rep.meta) j["meta"][k] = v;
  j["columns"] = nlohmann::ordered_json::array();
  for (KinshipClass c : rep.columns) j["columns"].push_back(std::string(class_label(c)));
  j["extra_columns"] = rep.extra_columns;
  j["rows"] = nlohmann::ordered_json::array();
  auto value = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
  for (const auto& r : rep.rows) {
    nlohmann::ordered_json row;
    row["label"] = r.label;
    row["kind"] = r.comparison ? "quoted" : "measured";
    for (std::size_t i = 0; i < rep.columns.size(); ++i) {
      row["accuracy"][std::string(class_label(rep.columns[i]))] = value(i < r.values.size() ? r.values[i] : std::nullopt);
    }
    row["average"] = value(r.average);
    for (std::size_t i = 0; i < rep.extra_columns.size(); ++i) {
      row[rep.extra_columns[i]] = value(i < r.extras.size() ? r.extras[i] : std::nullopt);
    }
    j["rows"].push_back(row);
  }
  return j;
}

/// Inverse of report_json. Missing optional fields take their defaults.
inline EvalReport report_from_json(const nlohmann::ordered_json& j) {
  EvalReport rep;
  try {
    rep.title = j.value("title", std::string());
    if (j.contains("meta"))
      for (const auto& [k, v] : j["meta"].items()) rep.meta.push_back({k, v.get<std::string>()});
    rep.columns.clear();
    for (const auto& c : j.at("columns")) rep.columns.push_back(parse_class(c.get<std::string>()));
    if (j.contains("extra_columns")) rep.extra_columns = j["extra_columns"].get<std::vector<std::string>>();
    rep.decimals = j.value("decimals", 1);
    auto value = [](const nlohmann::ordered_json& v) -> std::optional<double> {
      if (v.is_null()) return std::nullopt;
      return v.get<double>();
    };
    for (const auto& r : j.at("rows")) {
      ReportRow row;
      row.label = r.at("label").get<std::string>();
      row.comparison = r.value("kind", std::string("measured")) == "quoted";
      for (KinshipClass c : rep.columns) row.values.push_back(value(r.at("accuracy").at(std::string(class_label(c)))));
      row.average = value(r.at("average"));
      for (const auto& e : rep.extra_columns) row.extras.push_back(r.contains(e) ? value(r[e]) : std::nullopt);
      rep.rows.push_back(std::move(row));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed report JSON: ") + e.what());
  }
  return rep;
}

/// Report for one evaluation, with provenance.
inline EvalReport eval_report(const std::string& title, const std::string& label, const EvalResult& r,
                              const TrainConfig& cfg, const std::string& fold) {
  EvalReport rep;
  rep.title = title;
  rep.rows.push_back(measured_row(label, r, rep.columns));
  rep.meta = {{"config_digest", config_digest(cfg)},
              {"seed", std::to_string(cfg.seed)},
              {"protocol", std::string(protocol_name(cfg.protocol))},
              {"fold", fold},
              {"threshold", cfg.fusion == FusionKind::None ? "calibrated cosine" : detail::format_double(cfg.threshold)}};
  std::string skipped;
  for (KinshipClass c : r.skipped()) skipped += (skipped.empty() ? "" : ",") + std::string(class_tag(c));
  if (!skipped.empty()) rep.meta.push_back({"skipped", skipped});
  return rep;
}

// ---------------------------------------------------------------------------
// Fold runs

struct FoldResult {
  std::size_t fold = 0;
  EvalResult test;
  EvalResult train;
  TrainState state;
};

/// KINFORM_THREADS, else the hardware concurrency; at least 1.
inline std::size_t thread_budget() {
  if (const char* env = std::getenv("KINFORM_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs `jobs` on up to `threads` workers; results keep job order.
template <class Result>
std::vector<Result> run_parallel(std::size_t jobs, std::size_t threads, const std::function<Result(std::size_t)>& job) {
  std::vector<std::optional<Result>> slots(jobs);
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs; i = next++) {
      try {
        slots[i] = job(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const std::size_t n = std::min(std::max<std::size_t>(threads, 1), std::max<std::size_t>(jobs, 1));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  std::vector<Result> out;
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

struct FoldOptions {
  bool train_accuracy = false;
  std::function<void(std::size_t fold, const EpochRecord&)> on_epoch;
};

inline FoldResult run_fold(const Dataset& ds, const FoldSplit& split, std::size_t fold, const TrainConfig& cfg,
                           const FoldOptions& opt = {}) {
  FoldResult r;
  r.fold = fold;
  const auto train_fams = split.train_families(fold);
  TrainOptions topt;
  if (opt.on_epoch) topt.on_epoch = [&](const EpochRecord& e) { opt.on_epoch(fold, e); };
  r.state = fit(ds, train_fams, cfg, topt);
  r.test = evaluate(r.state.system, ds, make_eval_pairs(ds, split.test_families(fold), derive_seed(cfg.seed, "test", fold)));
  if (opt.train_accuracy) {
    r.train = evaluate(r.state.system, ds, make_eval_pairs(ds, train_fams, derive_seed(cfg.seed, "train-eval", fold)));
  }
  return r;
}

/// Sums correct/total per class over folds.
inline EvalResult pool_results(const std::vector<const EvalResult*>& parts) {
  std::map<KinshipClass, ClassResult> by;
  for (const EvalResult* p : parts)
    for (const auto& c : p->classes) {
      auto& r = by[c.cls];
      r.cls = c.cls;
      r.correct += c.correct;
      r.total += c.total;
      r.skipped = r.skipped || c.skipped;
    }
  EvalResult out;
  for (KinshipClass c : kAllClasses)
    if (by.count(c)) out.classes.push_back(by[c]);
  return out;
}

// ---------------------------------------------------------------------------
// Ablation

struct AblationArm {
  std::string name;
  std::string key;  // empty for the full model
  std::string value;
};

inline const std::vector<AblationArm>& ablation_arms() {
  static const std::vector<AblationArm> arms = {
      {"fusion-by-concat", "model.fusion", "concat"},
      {"embedding-only", "model.fusion", "none"},
      {"uniform-sampling", "run.sampler", "uniform"},
      {"single-task", "train.multitask", "false"},
      {"no-normalization", "model.weighting", "none"},
      {"symmetric-normalization", "model.weighting", "symmetric"},
      {"full", "", ""},
  };
  return arms;
}

inline const AblationArm& ablation_arm(const std::string& name) {
  for (const auto& a : ablation_arms())
    if (a.name == name) return a;
  throw ConfigError("unknown ablation arm '" + name + "'");
}

inline TrainConfig arm_config(const TrainConfig& base, const AblationArm& arm) {
  TrainConfig cfg = base;
  if (!arm.key.empty()) set_config_value(cfg, arm.key, arm.value);
  const auto diff = config_diff(base, cfg);
  if (!arm.key.empty() && diff != std::vector<std::string>{arm.key}) {
    throw ConfigError("ablation arm '" + arm.name + "' does not change " + arm.key + " relative to the base config");
  }
  cfg.validate();
  return cfg;
}

struct ArmResult {
  AblationArm arm;
  TrainConfig config;
  std::string split_digest;
  EvalResult test;
  EvalResult train;
};

struct StudyOptions {
  std::vector<std::size_t> folds;  // empty: all folds
  std::size_t threads = 0;         // 0: thread_budget()
  std::function<void(const std::string& run, std::size_t fold, const EpochRecord&)> on_epoch;
};

/// Trains every (variant, fold) job on shared folds and pools the folds.
inline std::vector<ArmResult> run_variants(const Dataset& ds, const std::vector<AblationArm>& arms,
                                           const std::vector<TrainConfig>& configs, const FoldSplit& split,
                                           const StudyOptions& opt) {
  std::vector<std::size_t> folds = opt.folds;
  if (folds.empty())
    for (std::size_t i = 0; i < split.k; ++i) folds.push_back(i);
  for (std::size_t f : folds)
    if (f >= split.k) throw ConfigError("fold " + std::to_string(f) + " out of range");
  const std::size_t jobs = configs.size() * folds.size();
  auto results = run_parallel<FoldResult>(jobs, opt.threads ? opt.threads : thread_budget(), [&](std::size_t j) {
    const std::size_t v = j / folds.size(), f = folds[j % folds.size()];
    FoldOptions fo;
    fo.train_accuracy = true;
    if (opt.on_epoch) fo.on_epoch = [&, v](std::size_t fold, const EpochRecord& e) { opt.on_epoch(arms[v].name, fold, e); };
    return run_fold(ds, split, f, configs[v], fo);
  });
  std::vector<ArmResult> out;
  for (std::size_t v = 0; v < configs.size(); ++v) {
    std::vector<const EvalResult*> test, train;
    for (std::size_t i = 0; i < folds.size(); ++i) {
      test.push_back(&results[v * folds.size() + i].test);
      train.push_back(&results[v * folds.size() + i].train);
    }
    out.push_back({arms[v], configs[v], split.digest(), pool_results(test), pool_results(train)});
  }
  return out;
}

inline std::vector<ArmResult> run_ablation(const Dataset& ds, const TrainConfig& base,
                                           const std::vector<AblationArm>& arms, const StudyOptions& opt = {}) {
  std::vector<TrainConfig> configs;
  for (const auto& a : arms) configs.push_back(arm_config(base, a));
  const FoldSplit split = config_split(ds, base);
  return run_variants(ds, arms, configs, split, opt);
}

inline EvalReport ablation_report(const std::vector<ArmResult>& results, const TrainConfig& base) {
  EvalReport rep;
  rep.title = "Ablation (accuracy %)";
  rep.columns = table7_columns();
  rep.decimals = 2;
  rep.extra_columns = {"train", "gap"};
  for (const auto& r : results) {
    ReportRow row = measured_row(r.arm.name, r.test, rep.columns);
    const double train_avg = 100.0 * r.train.average();
    row.extras = {train_avg, train_avg - (row.average ? *row.average : 0.0)};
    rep.rows.push_back(row);
  }
  rep.meta = {{"config_digest", config_digest(base)},
              {"seed", std::to_string(base.seed)},
              {"protocol", std::string(protocol_name(base.protocol))},
              {"split_digest", results.empty() ? "" : results.front().split_digest}};
  return rep;
}

inline std::vector<ArmResult> alpha_sweep(const Dataset& ds, const TrainConfig& base, const std::vector<double>& alphas,
                                          const StudyOptions& opt = {}) {
  if (base.protocol != Protocol::Unrestricted) throw ConfigError("alpha sweep needs the unrestricted protocol");
  std::vector<AblationArm> arms;
  std::vector<TrainConfig> configs;
  for (double a : alphas) {
    TrainConfig cfg = base;
    cfg.alpha = a;
    cfg.validate();
    arms.push_back({"alpha=" + detail::format_double(a), "train.alpha", detail::format_double(a)});
    configs.push_back(cfg);
  }
  const FoldSplit split = config_split(ds, base);
  return run_variants(ds, arms, configs, split, opt);
}

/// Max minus min average accuracy (percent) across runs.
inline double accuracy_spread(const std::vector<ArmResult>& results) {
  if (results.empty()) return 0.0;
  double lo = 1e300, hi = -1e300;
  for (const auto& r : results) {
    lo = std::min(lo, 100.0 * r.test.average());
    hi = std::max(hi, 100.0 * r.test.average());
  }
  return hi - lo;
}

inline EvalReport sweep_report(const std::vector<ArmResult>& results, const TrainConfig& base) {
  EvalReport rep = ablation_report(results, base);
  rep.title = "Alpha sweep (accuracy %)";
  rep.columns = table5_columns();
  rep.rows.clear();
  for (const auto& r : results) rep.rows.push_back(measured_row(r.arm.name, r.test, rep.columns));
  rep.extra_columns.clear();
  rep.meta.push_back({"spread", format_fixed(accuracy_spread(results), 2)});
  return rep;
}

}  // namespace kinform
