#pragma once

// Merged run configuration for the command-line tool: model, training,
// corpus generation, threshold tables and range policy.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <json.hpp>

#include "numlesa/corpus.hpp"
#include "numlesa/criticality.hpp"
#include "numlesa/errors.hpp"
#include "numlesa/label_space.hpp"
#include "numlesa/model.hpp"

namespace numlesa {

inline constexpr const char* kConfigEnvVar = "NUMLESA_CONFIG";

inline nlohmann::json gen_spec_json(const GenSpec& g) {
  return {{"note_count", g.note_count},
          {"class_frequency", g.class_frequency},
          {"mean_tokens_per_note", g.mean_tokens_per_note},
          {"abbreviation_rate", g.abbreviation_rate},
          {"typo_rate", g.typo_rate},
          {"template_pool", g.template_pool},
          {"seed", g.seed}};
}

inline GenSpec gen_spec_from_json(const nlohmann::json& j, GenSpec g = GenSpec()) {
  try {
    g.note_count = j.value("note_count", g.note_count);
    g.class_frequency = j.value("class_frequency", g.class_frequency);
    g.mean_tokens_per_note = j.value("mean_tokens_per_note", g.mean_tokens_per_note);
    g.abbreviation_rate = j.value("abbreviation_rate", g.abbreviation_rate);
    g.typo_rate = j.value("typo_rate", g.typo_rate);
    g.template_pool = j.value("template_pool", g.template_pool);
    g.seed = j.value("seed", g.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("corpus config: ") + e.what());
  }
  return g;
}

// Desk-scale model defaults used by the tool and the acceptance run.
inline ModelConfig desk_model_config() {
  ModelConfig m;
  m.init_std = 0.2;
  return m;
}

inline TrainConfig desk_train_config() {
  TrainConfig t;
  t.learning_rate = 3e-3;
  t.batch_size = 8;
  t.patience = 10;
  return t;
}

struct RunConfig {
  ModelConfig model = desk_model_config();
  TrainConfig train = desk_train_config();
  GenSpec corpus;
  bool blinded = true;
  std::string thresholds_path;  // empty: built-in tables
  std::string keywords_path;    // empty: built-in keyword table
  RangePolicy range_policy = RangePolicy::Any;
  std::uint64_t split_seed = 1;

  void validate() const {
    ModelConfig m = model;  // vocab size is only known after the vocabulary is built
    m.vocab_size = std::max<std::size_t>(m.vocab_size, 3);
    m.validate();
    train.validate();
    corpus.validate();
    for (const auto* p : {&thresholds_path, &keywords_path})
      if (!p->empty() && !std::filesystem::exists(*p))
        throw ConfigError("file not found: " + *p);
  }

  ThresholdTables tables() const {
    return thresholds_path.empty() ? ThresholdTables{} : ThresholdTables::load(thresholds_path);
  }

  KeywordTable keywords() const {
    if (keywords_path.empty()) return KeywordTable::defaults();
    std::ifstream in(keywords_path);
    if (!in) throw ConfigError("cannot open " + keywords_path);
    try {
      return KeywordTable::from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(keywords_path + ": " + e.what());
    }
  }

  nlohmann::json to_json() const {
    auto m = model.to_json();
    m.erase("vocab_size");
    m.erase("label_rows");
    return {{"model", m},
            {"train", train.to_json()},
            {"corpus", gen_spec_json(corpus)},
            {"blinded", blinded},
            {"thresholds", thresholds_path},
            {"keywords", keywords_path},
            {"range_policy", to_string(range_policy)},
            {"split_seed", split_seed}};
  }

  static RunConfig from_json(const nlohmann::json& j) { return from_json(j, RunConfig()); }

  static RunConfig from_json(const nlohmann::json& j, RunConfig c) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    try {
      if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"), c.model);
      if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"), c.train);
      if (j.contains("corpus")) c.corpus = gen_spec_from_json(j.at("corpus"), c.corpus);
      c.blinded = j.value("blinded", c.blinded);
      c.thresholds_path = j.value("thresholds", c.thresholds_path);
      c.keywords_path = j.value("keywords", c.keywords_path);
      c.split_seed = j.value("split_seed", c.split_seed);
      if (j.contains("range_policy")) {
        const auto name = j.at("range_policy").get<std::string>();
        auto p = parse_range_policy(name);
        if (!p) throw ConfigError("unknown range policy '" + name + "'");
        c.range_policy = *p;
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
  }

  static RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }

  // Explicit path first, then the environment variable, then defaults.
  static RunConfig resolve(const std::optional<std::string>& path) {
    if (path) return load(*path);
    if (const char* env = std::getenv(kConfigEnvVar); env && *env) return load(env);
    return RunConfig();
  }
};

}  // namespace numlesa
