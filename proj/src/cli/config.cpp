#include "deepap/cli/config.h"

#include <concepts>
#include <fstream>
#include <regex>
#include <set>

#include "deepap/cli/manifest.h"
#include "deepap/errors.h"

namespace deepap::cli {

using nlohmann::json;

namespace {

void expect_object(const json& j, const std::string& where, const std::set<std::string>& known) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

std::string key_path(const std::string& where, const std::string& key) {
  return where.empty() ? key : where + "." + key;
}

template <std::unsigned_integral T>
void read(const json& j, const std::string& where, const char* key, T& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_number_unsigned()) throw ConfigError(key_path(where, key) + ": expected a non-negative integer");
  out = v.get<T>();
}

void read(const json& j, const std::string& where, const char* key, double& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_number()) throw ConfigError(key_path(where, key) + ": expected a number");
  out = v.get<double>();
}

void read(const json& j, const std::string& where, const char* key, bool& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_boolean()) throw ConfigError(key_path(where, key) + ": expected true or false");
  out = v.get<bool>();
}

void read(const json& j, const std::string& where, const char* key, std::string& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_string()) throw ConfigError(key_path(where, key) + ": expected a string");
  out = v.get<std::string>();
}

void read(const json& j, const std::string& where, const char* key, std::vector<std::size_t>& out) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  const auto bad = [&] { return ConfigError(key_path(where, key) + ": expected a list of non-negative integers"); };
  if (!v.is_array()) throw bad();
  out.clear();
  for (const auto& e : v) {
    if (!e.is_number_unsigned()) throw bad();
    out.push_back(e.get<std::size_t>());
  }
}

// ---- training settings ----------------------------------------------------

json train_to_json(const train::TrainConfig& t) {
  return {{"learning_rate", t.learning_rate}, {"beta1", t.beta1},
          {"beta2", t.beta2},                 {"epsilon", t.epsilon},
          {"batch_size", t.batch_size},       {"max_epochs", t.max_epochs},
          {"patience", t.patience},           {"dropout", t.dropout_rate},
          {"clip_threshold", t.clip_threshold}, {"normalization", models::to_string(t.normalization)},
          {"bn_momentum", t.bn_momentum},     {"restore_best", t.restore_best}};
}

train::TrainConfig train_from_json(const json& j, const std::string& where, train::TrainConfig t) {
  expect_object(j, where,
                {"learning_rate", "beta1", "beta2", "epsilon", "batch_size", "max_epochs", "patience", "dropout",
                 "clip_threshold", "normalization", "bn_momentum", "restore_best"});
  read(j, where, "learning_rate", t.learning_rate);
  read(j, where, "beta1", t.beta1);
  read(j, where, "beta2", t.beta2);
  read(j, where, "epsilon", t.epsilon);
  read(j, where, "batch_size", t.batch_size);
  read(j, where, "max_epochs", t.max_epochs);
  read(j, where, "patience", t.patience);
  read(j, where, "dropout", t.dropout_rate);
  read(j, where, "clip_threshold", t.clip_threshold);
  read(j, where, "bn_momentum", t.bn_momentum);
  read(j, where, "restore_best", t.restore_best);
  if (j.contains("normalization")) {
    std::string s;
    read(j, where, "normalization", s);
    t.normalization = models::parse_normalization(s);
  }
  try {
    t.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return t;
}

// ---- model sizes ----------------------------------------------------------

json hyper_to_json(const models::Hyper& h) {
  return {{"hidden", h.hidden},
          {"residual_width", h.residual_width},
          {"residual_blocks", h.residual_blocks},
          {"state_size", h.state_size},
          {"channels", h.channels},
          {"kernel", h.kernel},
          {"pool", h.pool},
          {"model_width", h.model_width},
          {"heads", h.heads},
          {"layers", h.layers},
          {"ff_width", h.ff_width},
          {"ols_intercept", h.ols_intercept},
          {"lstm_tanh_output", h.lstm_tanh_output}};
}

models::Hyper hyper_from_json(const json& j, const std::string& where, models::Hyper h) {
  expect_object(j, where,
                {"hidden", "residual_width", "residual_blocks", "state_size", "channels", "kernel", "pool",
                 "model_width", "heads", "layers", "ff_width", "ols_intercept", "lstm_tanh_output"});
  read(j, where, "hidden", h.hidden);
  read(j, where, "residual_width", h.residual_width);
  read(j, where, "residual_blocks", h.residual_blocks);
  read(j, where, "state_size", h.state_size);
  read(j, where, "channels", h.channels);
  read(j, where, "kernel", h.kernel);
  read(j, where, "pool", h.pool);
  read(j, where, "model_width", h.model_width);
  read(j, where, "heads", h.heads);
  read(j, where, "layers", h.layers);
  read(j, where, "ff_width", h.ff_width);
  read(j, where, "ols_intercept", h.ols_intercept);
  read(j, where, "lstm_tanh_output", h.lstm_tanh_output);
  return h;
}

// ---- simulation and split -------------------------------------------------

json dgp_to_json(const sim::DgpSpec& d) {
  return {{"n_assets", d.n_assets},
          {"n_months", d.n_months},
          {"n_chars", d.n_chars},
          {"n_macro", d.n_macro},
          {"model", sim::to_string(d.model)},
          {"noise_scale", d.noise_scale},
          {"persistence", d.persistence},
          {"char_persistence", d.char_persistence},
          {"target_r2", d.target_r2}};
}

sim::DgpSpec dgp_from_json(const json& j) {
  const std::string where = "simulate";
  expect_object(j, where,
                {"n_assets", "n_months", "n_chars", "n_macro", "model", "noise_scale", "persistence",
                 "char_persistence", "target_r2"});
  sim::DgpSpec d;
  read(j, where, "n_assets", d.n_assets);
  read(j, where, "n_months", d.n_months);
  read(j, where, "n_chars", d.n_chars);
  read(j, where, "n_macro", d.n_macro);
  if (j.contains("model")) {
    std::string s;
    read(j, where, "model", s);
    d.model = sim::parse_dgp_model(s);
  }
  read(j, where, "noise_scale", d.noise_scale);
  read(j, where, "persistence", d.persistence);
  read(j, where, "char_persistence", d.char_persistence);
  read(j, where, "target_r2", d.target_r2);
  try {
    d.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return d;
}

json split_to_json(const data::SplitSpec& s) {
  if (s.dates) {
    const auto& d = *s.dates;
    return {{"dates",
             {{"train_first", data::format_month(d.train_first)},
              {"train_last", data::format_month(d.train_last)},
              {"validation_first", data::format_month(d.validation_first)},
              {"validation_last", data::format_month(d.validation_last)},
              {"test_first", data::format_month(d.test_first)},
              {"test_last", data::format_month(d.test_last)}}}};
  }
  return {{"train_fraction", s.train_fraction},
          {"validation_fraction", s.validation_fraction},
          {"test_fraction", s.test_fraction}};
}

data::SplitSpec split_from_json(const json& j) {
  const std::string where = "split";
  expect_object(j, where, {"train_fraction", "validation_fraction", "test_fraction", "dates"});
  data::SplitSpec s;
  if (j.contains("dates")) {
    if (j.contains("train_fraction") || j.contains("validation_fraction") || j.contains("test_fraction")) {
      throw ConfigError("split: give either fractions or dates, not both");
    }
    const auto& d = j.at("dates");
    const std::string dw = "split.dates";
    expect_object(d, dw,
                  {"train_first", "train_last", "validation_first", "validation_last", "test_first", "test_last"});
    auto month = [&](const char* key) {
      if (!d.contains(key)) throw ConfigError(dw + ": missing '" + key + "'");
      std::string text;
      read(d, dw, key, text);
      try {
        return data::parse_month(text);
      } catch (const DataError& e) {
        throw ConfigError(key_path(dw, key) + ": " + e.what());
      }
    };
    s.dates = data::SplitSpec::Dates{month("train_first"),      month("train_last"), month("validation_first"),
                                     month("validation_last"), month("test_first"), month("test_last")};
    return s;
  }
  read(j, where, "train_fraction", s.train_fraction);
  read(j, where, "validation_fraction", s.validation_fraction);
  read(j, where, "test_fraction", s.test_fraction);
  for (double f : {s.train_fraction, s.validation_fraction, s.test_fraction}) {
    if (!(f > 0.0 && f < 1.0)) throw ConfigError("split: fractions must lie in (0, 1)");
  }
  if (std::abs(s.train_fraction + s.validation_fraction + s.test_fraction - 1.0) > 1e-9) {
    throw ConfigError("split: fractions must sum to 1");
  }
  return s;
}

train::TrainConfig default_train() {
  train::TrainConfig t;
  t.learning_rate = 2e-3;
  t.batch_size = 128;
  t.max_epochs = 20;
  t.patience = 4;
  t.dropout_rate = 0.1;
  return t;
}

ModelSpec model_from_json(const json& j, std::size_t index, const train::TrainConfig& base) {
  const std::string where = "models[" + std::to_string(index) + "]";
  expect_object(j, where, {"arch", "name", "hyper", "train"});
  if (!j.contains("arch")) throw ConfigError(where + ": missing 'arch'");
  std::string arch;
  read(j, where, "arch", arch);
  ModelSpec m;
  try {
    m.arch = models::parse_arch(arch);
  } catch (const std::exception& e) {
    throw ConfigError(where + ".arch: " + e.what());
  }
  m.name = models::to_string(m.arch);
  read(j, where, "name", m.name);
  static const std::regex safe("[A-Za-z0-9_-]+");
  if (!std::regex_match(m.name, safe)) {
    throw ConfigError(where + ".name: '" + m.name + "' must use letters, digits, '_' or '-'");
  }
  m.hyper = models::default_hyper(m.arch, 0);
  if (j.contains("hyper")) m.hyper = hyper_from_json(j.at("hyper"), where + ".hyper", m.hyper);
  m.train = j.contains("train") ? train_from_json(j.at("train"), where + ".train", base) : base;
  return m;
}

}  // namespace

RunConfig default_config() {
  RunConfig c;
  c.train = default_train();
  ModelSpec ols{"OLS", models::Arch::OLS, models::default_hyper(models::Arch::OLS, 0), c.train};
  ModelSpec mlp{"MLP", models::Arch::MLP, models::default_hyper(models::Arch::MLP, 0), c.train};
  mlp.hyper.hidden = {32, 16};
  c.models = {ols, mlp};
  return c;
}

json RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  json d = json::object();
  if (panel) d["panel"] = panel->string();
  if (macro) d["macro"] = macro->string();
  if (schema) d["schema"] = schema->string();
  j["data"] = d;
  j["simulate"] = dgp_to_json(dgp);
  j["split"] = split_to_json(split);
  j["window"] = window;
  j["train"] = train_to_json(train);
  j["models"] = json::array();
  for (const auto& m : models) {
    j["models"].push_back({{"name", m.name},
                           {"arch", models::to_string(m.arch)},
                           {"hyper", hyper_to_json(m.hyper)},
                           {"train", train_to_json(m.train)}});
  }
  j["evaluate"] = {{"dm_lag", dm_lag}, {"dm_critical", dm_critical}};
  return j;
}

std::string RunConfig::digest() const { return sha256_hex(to_json().dump()); }

RunConfig parse_config(const json& j, const std::filesystem::path& base_dir) {
  expect_object(j, "config", {"seed", "data", "simulate", "split", "window", "train", "models", "evaluate"});
  RunConfig c = default_config();
  read(j, "", "seed", c.seed);
  if (j.contains("data")) {
    const auto& d = j.at("data");
    expect_object(d, "data", {"panel", "macro", "schema"});
    auto path = [&](const char* key) -> std::optional<std::filesystem::path> {
      if (!d.contains(key)) return std::nullopt;
      std::string s;
      read(d, "data", key, s);
      std::filesystem::path p(s);
      return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    };
    c.panel = path("panel");
    c.macro = path("macro");
    c.schema = path("schema");
    if (!c.panel && (c.macro || c.schema)) throw ConfigError("data: 'macro' and 'schema' need 'panel'");
  }
  if (j.contains("simulate")) c.dgp = dgp_from_json(j.at("simulate"));
  if (j.contains("split")) c.split = split_from_json(j.at("split"));
  read(j, "", "window", c.window);
  if (c.window < 1) throw ConfigError("window must be >= 1");
  if (j.contains("train")) c.train = train_from_json(j.at("train"), "train", c.train);
  if (j.contains("models")) {
    const auto& ms = j.at("models");
    if (!ms.is_array() || ms.empty()) throw ConfigError("models: expected a non-empty list");
    c.models.clear();
    std::set<std::string> names;
    for (std::size_t i = 0; i < ms.size(); ++i) {
      c.models.push_back(model_from_json(ms[i], i, c.train));
      if (!names.insert(c.models.back().name).second) {
        throw ConfigError("models: duplicate name '" + c.models.back().name + "'");
      }
      if (c.models.back().name == "Oracle") throw ConfigError("models: 'Oracle' is reserved");
    }
  } else {
    for (auto& m : c.models) m.train = c.train;
  }
  if (j.contains("evaluate")) {
    const auto& e = j.at("evaluate");
    expect_object(e, "evaluate", {"dm_lag", "dm_critical"});
    read(e, "evaluate", "dm_lag", c.dm_lag);
    read(e, "evaluate", "dm_critical", c.dm_critical);
    if (!(c.dm_critical > 0.0)) throw ConfigError("evaluate.dm_critical must be positive");
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return parse_config(j, std::filesystem::absolute(path).parent_path());
}

}  // namespace deepap::cli
