#pragma once

// Run configuration. Every field is addressable as `section.key` through one
// registry, which drives the file parser, command-line overrides, the
// canonical text form and the config digest.
//
// File format:
//   # comment
//   [train]
//   epochs = 30
//   classes = [BB, SS, FD]

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "kinform/backbone.hpp"
#include "kinform/dataset.hpp"
#include "kinform/fusion.hpp"
#include "kinform/io.hpp"
#include "kinform/sampler.hpp"
#include "kinform/synthetic.hpp"

namespace kinform {

enum class Protocol { Restricted, Unrestricted };
enum class InputMode { Pixels, Embedding };

inline std::string_view protocol_name(Protocol p) {
  return p == Protocol::Restricted ? "restricted" : "unrestricted";
}

inline Protocol parse_protocol(std::string_view s) {
  if (s == "restricted") return Protocol::Restricted;
  if (s == "unrestricted") return Protocol::Unrestricted;
  throw ConfigError("unknown protocol '" + std::string(s) + "' (restricted | unrestricted)");
}

inline std::string_view input_mode_name(InputMode m) { return m == InputMode::Pixels ? "pixels" : "embedding"; }

inline InputMode parse_input_mode(std::string_view s) {
  if (s == "pixels") return InputMode::Pixels;
  if (s == "embedding") return InputMode::Embedding;
  throw ConfigError("unknown input mode '" + std::string(s) + "' (pixels | embedding)");
}

struct TrainConfig {
  // [run]
  std::uint64_t seed = 42;
  Protocol protocol = Protocol::Unrestricted;
  SamplerKind sampler = SamplerKind::Adaptive;

  // [train]
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double alpha = 1.0;
  double lr = 1e-3;
  double lr_min = 1e-5;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t plateau_window = 3;
  double plateau_threshold = 1e-3;
  bool multitask = true;
  std::vector<KinshipClass> classes = {kTrainedClasses.begin(), kTrainedClasses.end()};
  int margin = 4;
  double lambda_max = 1500.0;
  double lambda_min = 5.0;
  std::size_t anneal_epochs = 10;
  bool augment = true;
  double gamma_min = 0.75;
  double gamma_max = 1.33;

  // [model]
  InputMode input = InputMode::Pixels;
  std::size_t input_side = 16;
  std::vector<std::size_t> widths = {8, 16};
  std::vector<std::size_t> units = {1, 1};
  std::size_t embedding_dim = 16;
  std::size_t fusion_channels = 16;
  std::size_t fusion_layers = 8;
  FusionKind fusion = FusionKind::Conv;
  WeightingMode weighting = WeightingMode::PerClass;

  // [eval]
  std::size_t folds = 5;
  std::size_t test_fold = 0;
  double threshold = 0.5;

  // [synthetic]
  SyntheticConfig synthetic = default_synthetic();

  static SyntheticConfig default_synthetic() {
    SyntheticConfig s;
    s.mode = ImageMode::Pixels;
    return s;
  }

  /// Throws ConfigError on an inconsistent configuration.
  void validate() const {
    if (protocol == Protocol::Restricted && sampler == SamplerKind::Adaptive) {
      throw ConfigError(
          "the restricted protocol provides no identities, so the adaptive sampler cannot be applied; "
          "use --sampler uniform");
    }
    if (protocol == Protocol::Restricted && fusion == FusionKind::None) {
      throw ConfigError("fusion = none relies on identity (sphere) training, which the restricted protocol disables");
    }
    if (epochs == 0 || batch_size == 0) throw ConfigError("train.epochs and train.batch_size must be positive");
    if (!(alpha >= 0)) throw ConfigError("train.alpha must be non-negative");
    if (!(lr > 0 && lr_min > 0 && lr_min <= lr)) throw ConfigError("need 0 < train.lr_min <= train.lr");
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError("train.momentum must lie in [0, 1)");
    if (!(weight_decay >= 0)) throw ConfigError("train.weight_decay must be non-negative");
    if (anneal_epochs == 0) throw ConfigError("train.anneal_epochs must be positive");
    if (plateau_window == 0) throw ConfigError("train.plateau_window must be positive");
    if (classes.empty()) throw ConfigError("train.classes is empty");
    for (std::size_t i = 0; i < classes.size(); ++i)
      for (std::size_t j = i + 1; j < classes.size(); ++j)
        if (classes[i] == classes[j]) throw ConfigError("train.classes lists " + std::string(class_tag(classes[i])) + " twice");
    if (margin < 1) throw ConfigError("train.margin must be >= 1");
    if (!(5.0 <= lambda_min && lambda_min <= lambda_max && lambda_max <= 1500.0)) {
      throw ConfigError("need 5 <= train.lambda_min <= train.lambda_max <= 1500");
    }
    if (!(0 < gamma_min && gamma_min <= gamma_max)) throw ConfigError("need 0 < train.gamma_min <= train.gamma_max");
    if (embedding_dim == 0 || fusion_channels == 0) throw ConfigError("model dimensions must be positive");
    if (input == InputMode::Pixels) backbone_config(2).validate();
    if (folds < 2) throw ConfigError("eval.folds must be at least 2");
    if (test_fold >= folds) throw ConfigError("eval.test_fold must be below eval.folds");
    if (!(threshold > 0 && threshold < 1)) throw ConfigError("eval.threshold must lie in (0, 1)");
    synthetic.validate();
  }

  BackboneConfig backbone_config(std::size_t identities) const {
    BackboneConfig b;
    b.variant = "configured";
    b.input_side = input_side;
    b.widths = widths;
    b.units = units;
    b.embedding_dim = embedding_dim;
    b.identities = identities;
    return b;
  }

  FusionConfig fusion_config() const { return {embedding_dim, fusion_channels, fusion_layers, fusion}; }

  bool uses_sphere() const { return protocol == Protocol::Unrestricted; }
};

// ---------------------------------------------------------------------------
// Field registry

struct ConfigField {
  std::string key;
  std::string description;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);  // shortest round-trip form
  return std::string(buf, r.ptr);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* b = text.data();
  const char* e = b + text.size();
  const auto r = std::from_chars(b, e, v);
  if (r.ec != std::errc() || r.ptr != e) throw ConfigError(key + ": cannot parse '" + text + "' as a number");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

inline std::vector<std::string> parse_list(const std::string& key, const std::string& text) {
  std::string t = io::trim(text);
  if (t.size() < 2 || t.front() != '[' || t.back() != ']') throw ConfigError(key + ": expected a list like [a, b]");
  t = t.substr(1, t.size() - 2);
  std::vector<std::string> out;
  if (io::trim(t).empty()) return out;
  for (const auto& item : io::split(t, ',')) out.push_back(io::trim(item));
  return out;
}

template <class T, class Fn>
std::string join_list(const std::vector<T>& v, Fn&& fmt) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt(v[i]);
  return s + "]";
}

}  // namespace detail

inline const std::vector<ConfigField>& config_fields() {
  using C = TrainConfig;
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    auto size_field = [&](std::string key, std::string desc, std::size_t C::*m) {
      f.push_back({key, desc, [m](const C& c) { return std::to_string(c.*m); },
                   [m, key](C& c, const std::string& v) { c.*m = detail::parse_number<std::size_t>(key, v); }});
    };
    auto real_field = [&](std::string key, std::string desc, double C::*m) {
      f.push_back({key, desc, [m](const C& c) { return detail::format_double(c.*m); },
                   [m, key](C& c, const std::string& v) { c.*m = detail::parse_number<double>(key, v); }});
    };
    auto bool_field = [&](std::string key, std::string desc, bool C::*m) {
      f.push_back({key, desc, [m](const C& c) { return std::string(c.*m ? "true" : "false"); },
                   [m, key](C& c, const std::string& v) { c.*m = detail::parse_bool(key, v); }});
    };
    auto size_list_field = [&](std::string key, std::string desc, std::vector<std::size_t> C::*m) {
      f.push_back({key, desc,
                   [m](const C& c) { return detail::join_list(c.*m, [](std::size_t v) { return std::to_string(v); }); },
                   [m, key](C& c, const std::string& v) {
                     std::vector<std::size_t> out;
                     for (const auto& s : detail::parse_list(key, v)) out.push_back(detail::parse_number<std::size_t>(key, s));
                     c.*m = out;
                   }});
    };

    f.push_back({"run.seed", "run seed; every component seed is derived from it",
                 [](const C& c) { return std::to_string(c.seed); },
                 [](C& c, const std::string& v) { c.seed = detail::parse_number<std::uint64_t>("run.seed", v); }});
    f.push_back({"run.protocol", "restricted (given pairs only) or unrestricted (identities and roles)",
                 [](const C& c) { return std::string(protocol_name(c.protocol)); },
                 [](C& c, const std::string& v) { c.protocol = parse_protocol(v); }});
    f.push_back({"run.sampler", "pair sampler: adaptive (median family cap) or uniform",
                 [](const C& c) { return std::string(sampler_name(c.sampler)); },
                 [](C& c, const std::string& v) { c.sampler = parse_sampler(v); }});

    size_field("train.epochs", "training epochs", &C::epochs);
    size_field("train.batch_size", "pairs per optimizer step", &C::batch_size);
    real_field("train.alpha", "weight of the verification losses (enters squared)", &C::alpha);
    real_field("train.lr", "initial learning rate", &C::lr);
    real_field("train.lr_min", "learning-rate floor for plateau drops", &C::lr_min);
    real_field("train.momentum", "SGD momentum", &C::momentum);
    real_field("train.weight_decay", "L2 weight decay", &C::weight_decay);
    size_field("train.plateau_window", "epochs compared by the plateau test", &C::plateau_window);
    real_field("train.plateau_threshold", "relative loss improvement below which lr drops by 10", &C::plateau_threshold);
    bool_field("train.multitask", "one shared backbone for all classes (false: one model per class)", &C::multitask);
    f.push_back({"train.classes", "kinship classes with verification heads",
                 [](const C& c) {
                   return detail::join_list(c.classes, [](KinshipClass k) { return std::string(class_tag(k)); });
                 },
                 [](C& c, const std::string& v) {
                   std::vector<KinshipClass> out;
                   for (const auto& s : detail::parse_list("train.classes", v)) {
                     try {
                       out.push_back(parse_class(s));
                     } catch (const DatasetError& e) {
                       throw ConfigError(std::string("train.classes: ") + e.what());
                     }
                   }
                   c.classes = out;
                 }});
    f.push_back({"train.margin", "angular margin m of the sphere loss",
                 [](const C& c) { return std::to_string(c.margin); },
                 [](C& c, const std::string& v) { c.margin = detail::parse_number<int>("train.margin", v); }});
    real_field("train.lambda_max", "sphere-loss annealing start", &C::lambda_max);
    real_field("train.lambda_min", "sphere-loss annealing end", &C::lambda_min);
    size_field("train.anneal_epochs", "epochs over which lambda falls from lambda_max to lambda_min", &C::anneal_epochs);
    bool_field("train.augment", "pixel augmentation (gamma, scale, flip, jitter)", &C::augment);
    real_field("train.gamma_min", "lower gamma bound for augmentation", &C::gamma_min);
    real_field("train.gamma_max", "upper gamma bound for augmentation", &C::gamma_max);

    f.push_back({"model.input", "pixels (CNN backbone) or embedding (vectors through FC-1 only)",
                 [](const C& c) { return std::string(input_mode_name(c.input)); },
                 [](C& c, const std::string& v) { c.input = parse_input_mode(v); }});
    size_field("model.input_side", "input image side in pixels", &C::input_side);
    size_list_field("model.widths", "channel width of each backbone stage", &C::widths);
    size_list_field("model.units", "residual units per backbone stage", &C::units);
    size_field("model.embedding_dim", "embedding dimension d", &C::embedding_dim);
    size_field("model.fusion_channels", "fusion channels C", &C::fusion_channels);
    size_field("model.fusion_layers", "hidden 1x1 convolutions in the fusion head", &C::fusion_layers);
    f.push_back({"model.fusion", "conv (1x1 cascade), concat (single FC) or none (cosine of embeddings)",
                 [](const C& c) { return std::string(fusion_name(c.fusion)); },
                 [](C& c, const std::string& v) { c.fusion = parse_fusion(v); }});
    f.push_back({"model.weighting", "per-class (tied for symmetric classes), symmetric (tied everywhere) or none",
                 [](const C& c) { return std::string(weighting_name(c.weighting)); },
                 [](C& c, const std::string& v) { c.weighting = parse_weighting(v); }});

    size_field("eval.folds", "cross-validation folds", &C::folds);
    size_field("eval.test_fold", "fold held out by train and evaluate", &C::test_fold);
    real_field("eval.threshold", "decision threshold on the verification probability", &C::threshold);

    auto syn_size = [&](std::string key, std::string desc, std::size_t SyntheticConfig::*m) {
      f.push_back({key, desc, [m](const C& c) { return std::to_string(c.synthetic.*m); },
                   [m, key](C& c, const std::string& v) { c.synthetic.*m = detail::parse_number<std::size_t>(key, v); }});
    };
    auto syn_real = [&](std::string key, std::string desc, double SyntheticConfig::*m) {
      f.push_back({key, desc, [m](const C& c) { return detail::format_double(c.synthetic.*m); },
                   [m, key](C& c, const std::string& v) { c.synthetic.*m = detail::parse_number<double>(key, v); }});
    };
    syn_size("synthetic.families", "number of generated families", &SyntheticConfig::n_families);
    syn_size("synthetic.latent_dim", "latent dimension of the generator", &SyntheticConfig::latent_dim);
    syn_real("synthetic.sigma_kin", "member noise around the family latent", &SyntheticConfig::sigma_kin);
    syn_real("synthetic.sigma_pop", "spread of family latents", &SyntheticConfig::sigma_pop);
    syn_real("synthetic.sigma_obs", "per-image observation noise", &SyntheticConfig::sigma_obs);
    syn_real("synthetic.role_offset", "scale of the per-role latent offset", &SyntheticConfig::role_offset);
    f.push_back({"synthetic.profile", "images-per-family profile: uniform or rfiw-like",
                 [](const C& c) { return std::string(profile_name(c.synthetic.imbalance)); },
                 [](C& c, const std::string& v) { c.synthetic.imbalance = parse_profile(v); }});
    f.push_back({"synthetic.images_per_member", "images per member as [min, max]",
                 [](const C& c) {
                   return "[" + std::to_string(c.synthetic.images_per_member.min) + ", " +
                          std::to_string(c.synthetic.images_per_member.max) + "]";
                 },
                 [](C& c, const std::string& v) {
                   auto items = detail::parse_list("synthetic.images_per_member", v);
                   if (items.size() != 2) throw ConfigError("synthetic.images_per_member: expected [min, max]");
                   c.synthetic.images_per_member = {detail::parse_number<int>("synthetic.images_per_member", items[0]),
                                                    detail::parse_number<int>("synthetic.images_per_member", items[1])};
                 }});
    f.push_back({"synthetic.mode", "pixels (rendered crops) or embedding (latent vectors)",
                 [](const C& c) { return std::string(c.synthetic.mode == ImageMode::Pixels ? "pixels" : "embedding"); },
                 [](C& c, const std::string& v) {
                   if (v == "pixels") c.synthetic.mode = ImageMode::Pixels;
                   else if (v == "embedding") c.synthetic.mode = ImageMode::Embedding;
                   else throw ConfigError("synthetic.mode: expected pixels or embedding, got '" + v + "'");
                 }});
    syn_size("synthetic.image_side", "rendered image side in pixels", &SyntheticConfig::image_side);
    return f;
  }();
  return fields;
}

inline const ConfigField& config_field(const std::string& key) {
  for (const auto& f : config_fields())
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

/// Applies `key = value` (value unquoted).
inline void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
  config_field(key).set(cfg, value);
}

/// Parses the text form, starting from `base`.
inline TrainConfig parse_config(const std::string& text, const std::string& origin = "<config>",
                                TrainConfig base = {}) {
  std::istringstream is(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    std::string t = io::trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (t.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    if (t.front() == '[' && t.back() == ']' && t.find('=') == std::string::npos) {
      section = io::trim(t.substr(1, t.size() - 2));
      continue;
    }
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    std::string key = io::trim(t.substr(0, eq));
    std::string value = io::trim(t.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (!section.empty() && key.find('.') == std::string::npos) key = section + "." + key;
    try {
      set_config_value(base, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return base;
}

inline TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {}) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), path.string(), std::move(base));
}

/// Canonical text form: one `key = value` line per field, grouped by section.
inline std::string config_text(const TrainConfig& cfg) {
  std::string out, section;
  for (const auto& f : config_fields()) {
    const std::string sec = f.key.substr(0, f.key.find('.'));
    if (sec != section) {
      out += (out.empty() ? "" : "\n") + std::string("[") + sec + "]\n";
      section = sec;
    }
    out += f.key.substr(f.key.find('.') + 1) + " = " + f.get(cfg) + "\n";
  }
  return out;
}

inline std::map<std::string, std::string> config_map(const TrainConfig& cfg) {
  std::map<std::string, std::string> m;
  for (const auto& f : config_fields()) m[f.key] = f.get(cfg);
  return m;
}

/// Keys whose values differ between `a` and `b`.
inline std::vector<std::string> config_diff(const TrainConfig& a, const TrainConfig& b) {
  std::vector<std::string> out;
  for (const auto& f : config_fields())
    if (f.get(a) != f.get(b)) out.push_back(f.key);
  return out;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string config_digest(const TrainConfig& cfg) { return hex64(fnv1a64(config_text(cfg))); }

}  // namespace kinform
