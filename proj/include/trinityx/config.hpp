// Run configuration: one JSON object, every key optional except the data
// source ("corpus" path or "synth" block). Unknown keys are rejected.
#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "trinityx/error.hpp"
#include "trinityx/expert_bank.hpp"
#include "trinityx/judge.hpp"
#include "trinityx/model.hpp"
#include "trinityx/training.hpp"

namespace trinityx {

struct SynthSpec {
  std::uint64_t seed = 42;
  std::size_t per_dimension = 200;
  std::size_t classes = 3;
};

struct RunConfig {
  std::uint64_t seed = 42;
  std::optional<std::string> corpus;
  std::optional<SynthSpec> synth;
  std::string output_dir = "out";
  ModelDims dims;
  double tau = 0.7;
  double dropout = 0.1;
  std::size_t top_k = 0;
  std::size_t ece_bins = 10;
  TrainConfig train;
  JudgeConfig judge;

  void validate() const {
    if (!corpus && !synth) throw ConfigError("missing key \"corpus\" (or a \"synth\" block)");
    if (corpus && synth) throw ConfigError("keys \"corpus\" and \"synth\" are mutually exclusive");
    if (synth && (synth->per_dimension < 1 || synth->classes < 1))
      throw ConfigError("synth.per_dimension and synth.classes must be >= 1");
    if (dims.d_feat < 1 || dims.d_model < 1 || dims.hidden < 1 || dims.rank < 1 || dims.n_classes < 1)
      throw ConfigError("dimensions must be >= 1");
    if (synth && dims.n_classes < synth->classes) throw ConfigError("n_classes is smaller than synth.classes");
    if (dims.n_experts != dimension_names().size())
      throw ConfigError("n_experts must equal the number of alignment dimensions (" +
                        std::to_string(dimension_names().size()) + ")");
    if (dims.rank > std::min(dims.d_model, dims.hidden)) throw ConfigError("rank must be <= min(d_model, hidden)");
    if (!(tau > 0)) throw ConfigError("tau must be > 0");
    if (!(dropout >= 0 && dropout < 1)) throw ConfigError("dropout must be in [0, 1)");
    if (top_k > dims.n_experts) throw ConfigError("top_k must be <= n_experts");
    if (ece_bins < 1) throw ConfigError("ece_bins must be >= 1");
    if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
    train.validate();
  }
};

namespace detail {

template <typename E>
struct EnumNames;

template <>
struct EnumNames<EntropySign> {
  static constexpr std::pair<EntropySign, const char*> values[] = {{EntropySign::paper, "paper"},
                                                                   {EntropySign::prose, "prose"}};
};
template <>
struct EnumNames<GatingKind> {
  static constexpr std::pair<GatingKind, const char*> values[] = {{GatingKind::supervised, "supervised"},
                                                                  {GatingKind::load_balance, "load_balance"}};
};
template <>
struct EnumNames<GammaMode> {
  static constexpr std::pair<GammaMode, const char*> values[] = {{GammaMode::inverse_loss, "inverse_loss"},
                                                                 {GammaMode::similarity, "similarity"}};
};
template <>
struct EnumNames<ReferenceMode> {
  static constexpr std::pair<ReferenceMode, const char*> values[] = {{ReferenceMode::centroid, "centroid"},
                                                                     {ReferenceMode::index, "index"}};
};

template <typename E>
std::string enum_name(E v) {
  for (const auto& [e, name] : EnumNames<E>::values)
    if (e == v) return name;
  return "?";
}

template <typename E>
E parse_enum(const nlohmann::json& j, const std::string& key) {
  if (!j.is_string()) throw ConfigError("key \"" + key + "\" must be a string");
  const auto s = j.get<std::string>();
  std::string valid;
  for (const auto& [e, name] : EnumNames<E>::values) {
    if (s == name) return e;
    valid += (valid.empty() ? "" : ", ") + std::string(name);
  }
  throw ConfigError("key \"" + key + "\": unknown value \"" + s + "\" (valid: " + valid + ")");
}

/// Reads `key` from `obj` into `out` when present, with type checking.
template <typename T>
void read_key(const nlohmann::json& obj, const std::string& key, T& out) {
  if (!obj.contains(key)) return;
  const auto& v = obj.at(key);
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ConfigError("key \"" + key + "\" must be a boolean");
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_unsigned()) throw ConfigError("key \"" + key + "\" must be a non-negative integer");
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw ConfigError("key \"" + key + "\" must be a number");
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw ConfigError("key \"" + key + "\" must be a string");
  }
  out = v.get<T>();
}

inline void reject_unknown(const nlohmann::json& obj, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [k, _] : obj.items())
    if (!known.count(k)) throw ConfigError("unknown key \"" + k + "\"" + (where.empty() ? "" : " in " + where));
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  using detail::read_key;
  detail::reject_unknown(j,
                         {"seed", "corpus", "synth", "output_dir", "d_feat", "d_model", "hidden", "rank", "n_experts",
                          "n_classes", "tau", "dropout", "top_k", "ece_bins", "lambda1", "lambda2", "gating_coeff",
                          "learning_rate", "epochs", "batch_size", "renormalize_alpha", "enable_gl", "enable_rl",
                          "entropy_sign", "gating_kind", "expert_epochs", "backbone_epochs", "backbone_lr",
                          "gamma_mode", "gamma_scale", "gamma_ema", "reference_mode", "reference_index",
                          "train_expert_base", "judge"},
                         "");
  RunConfig c;
  read_key(j, "seed", c.seed);
  if (j.contains("corpus") && !j.at("corpus").is_null()) {
    std::string path;
    read_key(j, "corpus", path);
    c.corpus = path;
  }
  if (j.contains("synth") && !j.at("synth").is_null()) {
    const auto& s = j.at("synth");
    if (!s.is_object()) throw ConfigError("key \"synth\" must be an object");
    detail::reject_unknown(s, {"seed", "per_dimension", "classes"}, "synth");
    SynthSpec spec;
    read_key(s, "seed", spec.seed);
    read_key(s, "per_dimension", spec.per_dimension);
    read_key(s, "classes", spec.classes);
    c.synth = spec;
    c.dims.n_classes = spec.classes;
  }
  read_key(j, "output_dir", c.output_dir);
  read_key(j, "d_feat", c.dims.d_feat);
  read_key(j, "d_model", c.dims.d_model);
  read_key(j, "hidden", c.dims.hidden);
  read_key(j, "rank", c.dims.rank);
  read_key(j, "n_experts", c.dims.n_experts);
  read_key(j, "n_classes", c.dims.n_classes);
  read_key(j, "tau", c.tau);
  read_key(j, "dropout", c.dropout);
  read_key(j, "top_k", c.top_k);
  read_key(j, "ece_bins", c.ece_bins);
  auto& l = c.train.loss;
  read_key(j, "lambda1", l.lambda1);
  read_key(j, "lambda2", l.lambda2);
  read_key(j, "gating_coeff", l.gating_coeff);
  read_key(j, "learning_rate", l.learning_rate);
  read_key(j, "epochs", l.epochs);
  read_key(j, "batch_size", l.batch_size);
  read_key(j, "renormalize_alpha", l.renormalize_alpha);
  read_key(j, "enable_gl", l.enable_gl);
  read_key(j, "enable_rl", l.enable_rl);
  if (j.contains("entropy_sign")) l.entropy_sign = detail::parse_enum<EntropySign>(j.at("entropy_sign"), "entropy_sign");
  if (j.contains("gating_kind")) l.gating_kind = detail::parse_enum<GatingKind>(j.at("gating_kind"), "gating_kind");
  read_key(j, "expert_epochs", c.train.expert_epochs);
  read_key(j, "backbone_epochs", c.train.backbone_epochs);
  read_key(j, "backbone_lr", c.train.backbone_lr);
  if (j.contains("gamma_mode")) c.train.gamma_mode = detail::parse_enum<GammaMode>(j.at("gamma_mode"), "gamma_mode");
  read_key(j, "gamma_scale", c.train.gamma_scale);
  read_key(j, "gamma_ema", c.train.gamma_ema);
  if (j.contains("reference_mode"))
    c.train.reference_mode = detail::parse_enum<ReferenceMode>(j.at("reference_mode"), "reference_mode");
  read_key(j, "reference_index", c.train.reference_index);
  read_key(j, "train_expert_base", c.train.train_expert_base);
  if (j.contains("judge")) {
    const auto& jj = j.at("judge");
    if (!jj.is_object()) throw ConfigError("key \"judge\" must be an object");
    detail::reject_unknown(jj, {"unsafe_keywords", "min_informative_tokens", "harmless_expert"}, "judge");
    if (jj.contains("unsafe_keywords")) {
      if (!jj.at("unsafe_keywords").is_array()) throw ConfigError("judge.unsafe_keywords must be an array");
      try {
        c.judge.unsafe_keywords = jj.at("unsafe_keywords").get<std::vector<std::string>>();
      } catch (const nlohmann::json::exception&) {
        throw ConfigError("judge.unsafe_keywords must be an array of strings");
      }
    }
    read_key(jj, "min_informative_tokens", c.judge.min_informative_tokens);
    read_key(jj, "harmless_expert", c.judge.harmless_expert);
  }
  c.validate();
  return c;
}

/// Every key with its effective value.
inline nlohmann::json to_json(const RunConfig& c) {
  const auto& l = c.train.loss;
  nlohmann::json j = {
      {"seed", c.seed},
      {"corpus", c.corpus ? nlohmann::json(*c.corpus) : nlohmann::json(nullptr)},
      {"synth", c.synth ? nlohmann::json{{"seed", c.synth->seed},
                                         {"per_dimension", c.synth->per_dimension},
                                         {"classes", c.synth->classes}}
                        : nlohmann::json(nullptr)},
      {"output_dir", c.output_dir},
      {"d_feat", c.dims.d_feat},
      {"d_model", c.dims.d_model},
      {"hidden", c.dims.hidden},
      {"rank", c.dims.rank},
      {"n_experts", c.dims.n_experts},
      {"n_classes", c.dims.n_classes},
      {"tau", c.tau},
      {"dropout", c.dropout},
      {"top_k", c.top_k},
      {"ece_bins", c.ece_bins},
      {"lambda1", l.lambda1},
      {"lambda2", l.lambda2},
      {"gating_coeff", l.gating_coeff},
      {"learning_rate", l.learning_rate},
      {"epochs", l.epochs},
      {"batch_size", l.batch_size},
      {"renormalize_alpha", l.renormalize_alpha},
      {"enable_gl", l.enable_gl},
      {"enable_rl", l.enable_rl},
      {"entropy_sign", detail::enum_name(l.entropy_sign)},
      {"gating_kind", detail::enum_name(l.gating_kind)},
      {"expert_epochs", c.train.expert_epochs},
      {"backbone_epochs", c.train.backbone_epochs},
      {"backbone_lr", c.train.backbone_lr},
      {"gamma_mode", detail::enum_name(c.train.gamma_mode)},
      {"gamma_scale", c.train.gamma_scale},
      {"gamma_ema", c.train.gamma_ema},
      {"reference_mode", detail::enum_name(c.train.reference_mode)},
      {"reference_index", c.train.reference_index},
      {"train_expert_base", c.train.train_expert_base},
      {"judge", c.judge.to_json()},
  };
  return j;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_run_config(j);
}

}  // namespace trinityx
