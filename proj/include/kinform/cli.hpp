#pragma once

// Command-line front end: argument parsing, config resolution, run manifests
// and one function per subcommand. tools/kinform_cli.cpp only calls run().

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "kinform/checks.hpp"
#include "kinform/eval.hpp"
#include "kinform/io.hpp"
#include "kinform/synthetic.hpp"

namespace kinform::cli {

namespace fs = std::filesystem;

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,  // internal error, or a check that did not pass
  kUsage = 2,    // unknown flag or malformed arguments
  kIo = 3,       // unreadable or unwritable path, malformed data file
  kConfig = 4,   // config validation failure
  kDiverged = 5  // training produced non-finite values
};

struct Options {
  std::string command;
  // shared
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string protocol;
  std::string sampler;
  std::string out_dir = "kinform-out";
  bool out_given = false;
  std::vector<std::string> sets;
  std::string data_dir;
  // gen-data
  std::optional<std::size_t> families;
  std::string profile;
  std::string mode;
  // train / evaluate
  std::string pairs_path;
  std::string checkpoint_path;
  std::optional<std::size_t> fold;
  // ablate / alpha-sweep
  std::vector<std::string> arms;
  std::vector<std::size_t> folds;
  std::vector<double> alphas = {0.5, 1.0, 2.0};
  // gradcheck
  std::size_t seeds = 10;
  double eps = 1e-5;
  double tol = 1e-4;
  std::size_t elements = 3;
  // export-report
  std::string input_path;
  std::string format = "text";
};

/// Builds the parser; `opt` receives the parsed values.
inline std::unique_ptr<CLI::App> make_app(Options& opt) {
  auto app = std::make_unique<CLI::App>("Kinship verification: data, training, evaluation and ablations.", "kinform");
  app->require_subcommand(1);
  app->fallthrough();
  app->add_option("--config", opt.config_path, "INI config file; flags below override it");
  app->add_option("--seed", opt.seed, "run seed; every module seed derives from it");
  app->add_option("--protocol", opt.protocol, "evaluation protocol")->check(CLI::IsMember({"restricted", "unrestricted"}));
  app->add_option("--sampler", opt.sampler, "pair sampler")->check(CLI::IsMember({"adaptive", "uniform"}));
  app->add_option("-o,--out", opt.out_dir, "output directory for artifacts and manifest.json (default: kinform-out)");
  app->add_option("--set", opt.sets, "override one config key, e.g. --set train.epochs=5 (repeatable)");

  auto data_option = [&](CLI::App* sub) {
    sub->add_option("--data", opt.data_dir,
                     "dataset directory holding families.tsv (default: synthetic data from the config)");
  };
  auto folds_option = [&](CLI::App* sub) {
    sub->add_option("--folds", opt.folds, "fold ids to run (default: all)")->delimiter(',');
  };

  auto* gen = app->add_subcommand("gen-data", "generate a synthetic dataset into --out");
  gen->add_option("--families", opt.families, "number of families");
  gen->add_option("--profile", opt.profile, "images-per-family profile")->check(CLI::IsMember({"uniform", "rfiw-like"}));
  gen->add_option("--mode", opt.mode, "image payload")->check(CLI::IsMember({"pixels", "embedding"}));

  auto* stats = app->add_subcommand("stats", "per-fold images per family and member, raw and after adaptive sampling");
  stats->add_option("data", opt.data_dir, "dataset directory (default: synthetic data from the config)");

  auto* train_cmd = app->add_subcommand("train", "train on the training folds; writes checkpoint.kchk and metrics.csv");
  data_option(train_cmd);
  train_cmd->add_option("--pairs", opt.pairs_path, "pair list to train on (restricted protocol)");
  train_cmd->add_option("--fold", opt.fold, "held-out fold (default: eval.test_fold)");

  auto* eval_cmd = app->add_subcommand("evaluate", "score the held-out fold with a checkpoint; writes report.{txt,csv,json}");
  eval_cmd->add_option("--checkpoint", opt.checkpoint_path, "checkpoint from train")->required();
  data_option(eval_cmd);
  eval_cmd->add_option("--pairs", opt.pairs_path, "pair list to evaluate instead of the fold's pairs");
  eval_cmd->add_option("--fold", opt.fold, "held-out fold (default: the checkpoint's eval.test_fold)");

  auto* ablate = app->add_subcommand("ablate", "train every ablation arm on shared folds; writes ablation.{txt,csv,json}");
  data_option(ablate);
  ablate->add_option("--arms", opt.arms, "arm names (default: all seven)")->delimiter(',');
  folds_option(ablate);

  auto* sweep = app->add_subcommand("alpha-sweep", "one training per alpha on shared folds; writes alpha_sweep.{txt,csv,json}");
  data_option(sweep);
  sweep->add_option("--alphas", opt.alphas, "alpha values (default: 0.5,1,2)")->delimiter(',');
  folds_option(sweep);

  auto* gc = app->add_subcommand("gradcheck", "finite-difference check of the full model against tape gradients");
  gc->add_option("--seeds", opt.seeds, "number of random seeds (default: 10)")->check(CLI::PositiveNumber);
  gc->add_option("--eps", opt.eps, "central-difference step (default: 1e-5)");
  gc->add_option("--tol", opt.tol, "maximum relative error (default: 1e-4)");
  gc->add_option("--elements", opt.elements, "elements checked per tensor and seed, 0 for all (default: 3)");

  auto* exp = app->add_subcommand("export-report", "render a report JSON as text, CSV or JSON");
  exp->add_option("--input", opt.input_path, "report JSON")->required();
  exp->add_option("--format", opt.format, "output format (default: text)")->check(CLI::IsMember({"text", "csv", "json"}));

  for (auto* sub : app->get_subcommands({})) sub->callback([&opt, sub] { opt.command = sub->get_name(); });
  return app;
}

/// (subcommand, flag) for every option the parser accepts; "" for top-level flags.
inline std::vector<std::pair<std::string, std::string>> flag_registry() {
  Options opt;
  auto app = make_app(opt);
  std::vector<std::pair<std::string, std::string>> out;
  auto collect = [&](const CLI::App* a, const std::string& sub) {
    for (const CLI::Option* o : a->get_options()) {
      if (o->get_name() == "--help") continue;
      out.push_back({sub, o->get_name()});
    }
  };
  collect(app.get(), "");
  for (const CLI::App* sub : app->get_subcommands({})) collect(sub, sub->get_name());
  return out;
}

inline std::string help_text(const std::string& sub = "") {
  Options opt;
  auto app = make_app(opt);
  if (sub.empty()) return app->help();
  return app->get_subcommand(sub)->help();
}

// ---------------------------------------------------------------------------
// Shared plumbing

inline TrainConfig resolve_config(const Options& opt) {
  TrainConfig cfg = opt.config_path.empty() ? TrainConfig{} : load_config(opt.config_path);
  for (const auto& kv : opt.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, io::trim(kv.substr(0, eq)), io::trim(kv.substr(eq + 1)));
  }
  if (opt.seed) cfg.seed = *opt.seed;
  if (!opt.protocol.empty()) cfg.protocol = parse_protocol(opt.protocol);
  if (!opt.sampler.empty()) cfg.sampler = parse_sampler(opt.sampler);
  if (opt.fold) cfg.test_fold = *opt.fold;
  cfg.validate();
  return cfg;
}

/// Content hash of a dataset: tree, roles and every image payload.
inline std::string dataset_digest(const Dataset& ds) {
  std::ostringstream os;
  for (const auto& f : ds.families) {
    os << 'F' << f.id;
    for (std::size_t m : f.members) {
      const Member& mem = ds.members[m];
      os << 'M' << mem.id << role_tag(mem.role);
      for (std::size_t i : mem.images) os << 'I' << i;
    }
  }
  for (const auto& img : ds.images) {
    if (img.pixels) {
      os << 'P' << img.pixels->width << 'x' << img.pixels->height;
      os.write(reinterpret_cast<const char*>(img.pixels->pixels.data()),
               static_cast<std::streamsize>(img.pixels->pixels.size()));
    } else if (img.embedding) {
      os << 'E';
      for (Real v : *img.embedding) os.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
  }
  return hex64(fnv1a64(os.str()));
}

inline Dataset load_dataset(const Options& opt, const TrainConfig& cfg) {
  if (!opt.data_dir.empty()) return io::load_family_tree(fs::path(opt.data_dir) / "families.tsv");
  SyntheticConfig sc = cfg.synthetic;
  if (cfg.input == InputMode::Embedding) sc.mode = ImageMode::Embedding;
  return generate_synthetic(sc, cfg.seed);
}

inline std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// manifest.json: written before work starts, completed when it ends.
class RunManifest {
 public:
  RunManifest(const Options& opt, const TrainConfig* cfg) : dir_(opt.out_dir) {
    j_["command"] = opt.command;
    j_["status"] = "running";
    if (cfg) {
      j_["seed"] = cfg->seed;
      j_["config_digest"] = config_digest(*cfg);
      j_["config"] = config_text(*cfg);
    }
    j_["inputs"] = nlohmann::ordered_json::object();
    j_["outputs"] = nlohmann::ordered_json::array();
    j_["started_at"] = utc_now();
  }

  void input(const std::string& name, const std::string& digest) { j_["inputs"][name] = digest; }

  /// Registers `name` under the output directory and returns its path.
  fs::path output(const std::string& name) {
    j_["outputs"].push_back(name);
    return dir_ / name;
  }

  void begin() {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create output directory " + dir_.string() + ": " + ec.message());
    write();
  }

  void finish(const std::string& status) {
    j_["status"] = status;
    j_["finished_at"] = utc_now();
    write();
  }

 private:
  void write() const {
    std::ofstream os(dir_ / "manifest.json");
    if (!os) throw IoError("cannot write " + (dir_ / "manifest.json").string());
    os << j_.dump(2) << '\n';
  }

  fs::path dir_;
  nlohmann::ordered_json j_;
};

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os) throw IoError("failed writing " + path.string());
}

inline void write_report(RunManifest& m, const std::string& stem, const EvalReport& rep) {
  write_text(m.output(stem + ".txt"), report_text(rep));
  write_text(m.output(stem + ".csv"), report_csv(rep));
  write_text(m.output(stem + ".json"), report_json(rep).dump(2) + "\n");
}

inline void log_epoch(std::ostream& out, const std::string& run, std::size_t fold, const EpochRecord& e) {
  out << run << (run.empty() ? "" : " ") << "fold " << fold << " epoch " << e.epoch << " lr " << e.lr << " loss "
      << e.total << std::endl;
}

// ---------------------------------------------------------------------------
// Subcommands

inline int cmd_gen_data(const Options& opt, std::ostream& out) {
  TrainConfig cfg = resolve_config(opt);
  if (opt.families) cfg.synthetic.n_families = *opt.families;
  if (!opt.profile.empty()) cfg.synthetic.imbalance = parse_profile(opt.profile);
  if (!opt.mode.empty()) {
    cfg.synthetic.mode = opt.mode == "pixels" ? ImageMode::Pixels : ImageMode::Embedding;
    cfg.input = opt.mode == "pixels" ? InputMode::Pixels : InputMode::Embedding;
  }
  cfg.validate();
  RunManifest m(opt, &cfg);
  m.begin();
  const Dataset ds = generate_synthetic(cfg.synthetic, cfg.seed);
  io::write_family_tree(ds, opt.out_dir);
  m.output("families.tsv");
  m.output("images/");
  write_text(m.output("config.ini"), config_text(cfg));
  m.input("dataset", dataset_digest(ds));
  m.finish("ok");
  out << "wrote " << ds.families.size() << " families, " << ds.members.size() << " members, " << ds.images.size()
      << " images to " << opt.out_dir << '\n';
  return kOk;
}

/// Raw and adaptively sampled balance per fold, over each fold's training families.
inline std::vector<BalanceSection> balance_sections(const Dataset& ds, const TrainConfig& cfg) {
  const FoldSplit split = config_split(ds, cfg);
  BalanceSection raw{"raw", {}}, balanced{"balanced", {}};
  for (std::size_t k = 0; k < split.k; ++k) {
    const auto fams = split.train_families(k);
    raw.rows.push_back({std::to_string(k + 1), balance_stats(ds, fams)});
    std::vector<EpochPlan> plans;
    for (KinshipClass c : cfg.classes) {
      std::size_t available = 0;
      for (std::size_t f : fams) available += ds.pair_count(f, c);
      if (available == 0) continue;
      plans.push_back(build_plan(SamplerKind::Adaptive, ds, c, derive_seed(cfg.seed, "stats", k * 16 + head_index(c)), fams));
    }
    balanced.rows.push_back({std::to_string(k + 1), balance_stats(ds, plans, fams)});
  }
  return {raw, balanced};
}

inline int cmd_stats(const Options& opt, std::ostream& out) {
  const TrainConfig cfg = resolve_config(opt);
  const Dataset ds = load_dataset(opt, cfg);
  const auto sections = balance_sections(ds, cfg);
  const std::string text = balance_report_text(sections);
  if (opt.out_given) {
    RunManifest m(opt, &cfg);
    m.input("dataset", dataset_digest(ds));
    m.begin();
    write_text(m.output("stats.txt"), text);
    write_text(m.output("stats.csv"), balance_report_csv(sections));
    m.finish("ok");
  }
  out << text;
  return kOk;
}

inline int cmd_train(const Options& opt, std::ostream& out, std::ostream& err) {
  const TrainConfig cfg = resolve_config(opt);
  RunManifest m(opt, &cfg);
  TrainOptions topt;
  topt.on_epoch = [&](const EpochRecord& e) { log_epoch(out, "", cfg.test_fold, e); };
  Dataset ds;
  std::vector<std::size_t> fams;
  std::optional<io::PairList> given;
  if (!opt.pairs_path.empty()) {
    if (cfg.protocol != Protocol::Restricted) throw ConfigError("--pairs trains on a pair list and needs --protocol restricted");
    given = io::load_pair_list(opt.pairs_path);
    ds = given->images;
    topt.given_pairs = &given->pairs;
    m.input("pairs", dataset_digest(ds));
  } else {
    ds = load_dataset(opt, cfg);
    fams = config_split(ds, cfg).train_families(cfg.test_fold);
    m.input("dataset", dataset_digest(ds));
  }
  m.begin();
  write_text(m.output("config.ini"), config_text(cfg));
  TrainState st = fit(ds, fams, cfg, topt);
  save_checkpoint(m.output("checkpoint.kchk"), st, cfg);
  write_text(m.output("metrics.csv"), metrics_csv(st));
  if (st.diverged) {
    m.finish("diverged");
    err << "kinform: " << st.message << " (checkpoint holds the last finite state)\n";
    return kDiverged;
  }
  m.finish("ok");
  out << "trained " << st.epoch << " epochs, " << st.system.parameter_count() << " parameters\n";
  return kOk;
}

inline Checkpoint load_checkpoint_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint " + path);
  return read_checkpoint(is);
}

inline int cmd_evaluate(const Options& opt, std::ostream& out) {
  Checkpoint ck = load_checkpoint_file(opt.checkpoint_path);
  TrainConfig cfg = ck.config;
  if (opt.fold) cfg.test_fold = *opt.fold;
  cfg.validate();
  RunManifest m(opt, &cfg);
  {
    std::ifstream is(opt.checkpoint_path, std::ios::binary);
    std::ostringstream bytes;
    bytes << is.rdbuf();
    m.input("checkpoint", hex64(fnv1a64(bytes.str())));
  }
  Dataset ds;
  std::vector<PairSample> pairs;
  std::string fold_label;
  if (!opt.pairs_path.empty()) {
    auto list = io::load_pair_list(opt.pairs_path);
    ds = std::move(list.images);
    pairs = std::move(list.pairs);
    fold_label = "pairs:" + fs::path(opt.pairs_path).filename().string();
    m.input("pairs", dataset_digest(ds));
  } else {
    ds = load_dataset(opt, cfg);
    const FoldSplit split = config_split(ds, cfg);
    pairs = make_eval_pairs(ds, split.test_families(cfg.test_fold), derive_seed(cfg.seed, "test", cfg.test_fold));
    fold_label = std::to_string(cfg.test_fold);
    m.input("dataset", dataset_digest(ds));
  }
  m.begin();
  const EvalResult r = evaluate(ck.state.system, ds, pairs);
  const EvalReport rep = eval_report("Kinship verification accuracy (%)", "measured", r, cfg, fold_label);
  write_report(m, "report", rep);
  m.finish("ok");
  out << report_text(rep);
  return kOk;
}

inline StudyOptions study_options(const Options& opt, std::ostream& out) {
  StudyOptions s;
  s.folds = opt.folds;
  s.on_epoch = [&out](const std::string& run, std::size_t fold, const EpochRecord& e) {
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    log_epoch(out, run, fold, e);
  };
  return s;
}

inline int cmd_ablate(const Options& opt, std::ostream& out) {
  const TrainConfig cfg = resolve_config(opt);
  std::vector<AblationArm> arms;
  if (opt.arms.empty()) {
    arms = ablation_arms();
  } else {
    for (const auto& name : opt.arms) arms.push_back(ablation_arm(name));
  }
  for (const auto& a : arms) arm_config(cfg, a);  // reject conflicts before any training
  const Dataset ds = load_dataset(opt, cfg);
  RunManifest m(opt, &cfg);
  m.input("dataset", dataset_digest(ds));
  m.begin();
  const auto results = run_ablation(ds, cfg, arms, study_options(opt, out));
  const EvalReport rep = ablation_report(results, cfg);
  write_report(m, "ablation", rep);
  m.finish("ok");
  out << report_text(rep);
  return kOk;
}

inline int cmd_alpha_sweep(const Options& opt, std::ostream& out) {
  const TrainConfig cfg = resolve_config(opt);
  if (cfg.protocol != Protocol::Unrestricted) throw ConfigError("alpha sweep needs the unrestricted protocol");
  const Dataset ds = load_dataset(opt, cfg);
  RunManifest m(opt, &cfg);
  m.input("dataset", dataset_digest(ds));
  m.begin();
  const auto results = alpha_sweep(ds, cfg, opt.alphas, study_options(opt, out));
  const EvalReport rep = sweep_report(results, cfg);
  write_report(m, "alpha_sweep", rep);
  m.finish("ok");
  out << report_text(rep);
  return kOk;
}

inline int cmd_gradcheck(const Options& opt, std::ostream& out) {
  const TrainConfig cfg = resolve_config(opt);
  SystemCheckOptions sopt;
  sopt.eps = opt.eps;
  sopt.tol = opt.tol;
  sopt.max_elements = opt.elements;
  std::vector<GradCheckReport> reports;
  for (std::size_t s = 0; s < opt.seeds; ++s) reports.push_back(system_grad_check(cfg, derive_seed(cfg.seed, "gradcheck", s), sopt));
  const GradCheckReport merged = merge_grad_checks(reports);
  const std::string table = grad_check_table(merged);
  if (opt.out_given) {
    RunManifest m(opt, &cfg);
    m.begin();
    write_text(m.output("gradcheck.txt"), table);
    m.finish(merged.passed() ? "ok" : "failed");
  }
  out << table;
  return merged.passed() ? kOk : kFailure;
}

inline int cmd_export_report(const Options& opt, std::ostream& out) {
  std::ifstream is(opt.input_path);
  if (!is) throw IoError("cannot read " + opt.input_path);
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(opt.input_path + ": " + e.what());
  }
  const EvalReport rep = report_from_json(j);
  std::string rendered;
  if (opt.format == "csv") {
    rendered = report_csv(rep);
  } else if (opt.format == "json") {
    rendered = report_json(rep).dump(2) + "\n";
  } else {
    rendered = report_text(rep);
  }
  if (opt.out_given) {
    RunManifest m(opt, nullptr);
    m.input("report", hex64(fnv1a64(j.dump())));
    m.begin();
    write_text(m.output(opt.format == "text" ? "report.txt" : "report." + opt.format), rendered);
    m.finish("ok");
  }
  out << rendered;
  return kOk;
}

inline int dispatch(const Options& opt, std::ostream& out, std::ostream& err) {
  if (opt.command == "gen-data") return cmd_gen_data(opt, out);
  if (opt.command == "stats") return cmd_stats(opt, out);
  if (opt.command == "train") return cmd_train(opt, out, err);
  if (opt.command == "evaluate") return cmd_evaluate(opt, out);
  if (opt.command == "ablate") return cmd_ablate(opt, out);
  if (opt.command == "alpha-sweep") return cmd_alpha_sweep(opt, out);
  if (opt.command == "gradcheck") return cmd_gradcheck(opt, out);
  if (opt.command == "export-report") return cmd_export_report(opt, out);
  throw ConfigError("no subcommand");
}

/// Parses and runs; returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  Options opt;
  auto app = make_app(opt);
  try {
    app->parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app->exit(e, out, err);  // --help
    err << "kinform: " << e.what() << "\nRun 'kinform --help' for usage.\n";
    return kUsage;
  }
  opt.out_given = app->get_option("--out")->count() > 0;
  try {
    return dispatch(opt, out, err);
  } catch (const ConfigError& e) {
    err << "kinform: config error: " << e.what() << '\n';
    return kConfig;
  } catch (const IoError& e) {
    err << "kinform: i/o error: " << e.what() << '\n';
    return kIo;
  } catch (const DatasetError& e) {
    err << "kinform: data error: " << e.what() << '\n';
    return kIo;
  } catch (const NumericError& e) {
    err << "kinform: numeric error: " << e.what() << '\n';
    return kDiverged;
  } catch (const std::exception& e) {
    err << "kinform: error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace kinform::cli
