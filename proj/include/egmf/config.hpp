// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "egmf/ablation.hpp"
#include "egmf/checkpoint.hpp"
#include "egmf/data.hpp"
#include "egmf/enhancer.hpp"
#include "egmf/errors.hpp"
#include "egmf/lora.hpp"
#include "egmf/model.hpp"
#include "egmf/ops.hpp"
#include "egmf/toy_lm.hpp"
#include "egmf/training.hpp"

namespace egmf {

// One JSON document describing a full run: architecture, data, training.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string preset = "desk";
  ModelConfig model;
  ToyLmConfig lm;
  LoraConfig lora;
  TrainConfig train;
  PretrainConfig pretrain;
  SyntheticSpec data;
  std::vector<Ablation> arms = standard_arms();

  static RunConfig desk() { return RunConfig{}; }

  static RunConfig paper() {
    RunConfig c;
    c.preset = "paper";
    c.model = ModelConfig::paper();
    return c;
  }

  // Cross-section consistency; throws ConfigError.
  void validate() const {
    model.validate();
    lm.validate();
    if (lora.rank == 0) throw ConfigError("lora.rank must be positive");
    train.validate();
    pretrain.validate();
    data.validate();
    if (data.task != train.task) throw ConfigError("data.task and the training task disagree");
    for (const Ablation& a : arms) a.validate();
  }

  // Synthetic data spec with dims taken from the architecture sections.
  SyntheticSpec data_spec() const {
    SyntheticSpec s = data;
    s.d_a = model.d_a;
    s.d_v = model.d_v;
    s.vocab_size = lm.vocab_size;
    s.seed = Rng(seed).fork(streams::kData).next_u64();
    return s;
  }

  TrainConfig train_config() const {
    TrainConfig t = train;
    t.seed = seed;
    t.task = data.task;
    return t;
  }

  nlohmann::ordered_json lm_json() const {
    return {{"vocab_size", lm.vocab_size}, {"d_emb", lm.d_emb},         {"n_layers", lm.n_layers},
            {"n_heads", lm.n_heads},       {"max_seq_len", lm.max_seq_len}, {"n_tokens", lm.n_tokens},
            {"ffn_mult", lm.ffn_mult}};
  }

  nlohmann::ordered_json model_json() const {
    nlohmann::ordered_json experts = nlohmann::ordered_json::array();
    for (const ExpertConfig& e : model.experts) {
      experts.push_back({{"ratio", e.ratio}, {"activation", std::string(activation_name(e.activation))}});
    }
    return {{"d_a", model.d_a},   {"d_v", model.d_v},         {"d_av", model.d_av},    {"d_h", model.d_h},
            {"n_heads", model.n_heads}, {"dropout", model.dropout}, {"experts", experts}};
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["seed"] = seed;
    j["preset"] = preset;
    j["model"] = model_json();
    j["lm"] = lm_json();
    j["lora"] = {{"rank", lora.rank}, {"alpha", lora.alpha}};
    j["train"] = {{"lr", train.lr},
                  {"batch_size", train.batch_size},
                  {"max_epochs", train.max_epochs},
                  {"max_steps", train.max_steps},
                  {"ablation", train.ablation.flags()}};
    j["pretrain"] = {{"lr", pretrain.lr}, {"batch_size", pretrain.batch_size}, {"epochs", pretrain.epochs}};
    nlohmann::ordered_json d;
    d["name"] = data.name;
    d["language"] = data.language;
    d["task"] = std::string(task_name(data.task));
    d["n_classes"] = data.n_classes;
    d["score_range"] = {data.score_lo, data.score_hi};
    d["n_train"] = data.n_samples[0];
    d["n_valid"] = data.n_samples[1];
    d["n_test"] = data.n_samples[2];
    d["s_t"] = data.s_t;
    d["s_a"] = data.s_a;
    d["s_v"] = data.s_v;
    d["sigma"] = data.sigma;
    d["keywords_per_class"] = data.keywords_per_class;
    d["text_len"] = {data.text_min, data.text_max};
    d["frames"] = {data.frames_min, data.frames_max};
    d["lm_corpus_lines"] = data.lm_corpus_lines;
    j["data"] = d;
    nlohmann::ordered_json arms_j = nlohmann::ordered_json::array();
    for (const Ablation& a : arms) arms_j.push_back(a.flags());
    j["arms"] = arms_j;
    return j;
  }

  // Identity of the frozen LM's architecture.
  std::string lm_hash() const { return fnv1a_hex(lm_json().dump()); }

  // Identity of everything that shapes the trained model's parameters and
  // its prompt; training hyperparameters are excluded.
  std::string model_hash() const {
    nlohmann::ordered_json j;
    j["model"] = model_json();
    j["lm"] = lm_json();
    j["lora"] = {{"rank", lora.rank}, {"alpha", lora.alpha}};
    j["task"] = std::string(task_name(data.task));
    if (data.task == Task::Classification) j["n_classes"] = data.n_classes;
    else j["score_range"] = {data.score_lo, data.score_hi};
    return fnv1a_hex(j.dump());
  }

  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::string& section, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  std::set<std::string> known(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw ConfigError("config section '" + section + "' has unknown key '" + k + "'");
  }
}

template <typename T>
void read_if(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline std::vector<std::string> string_list(const nlohmann::json& j) {
  if (!j.is_array()) throw ConfigError("ablation flags must be a list of strings");
  return j.get<std::vector<std::string>>();
}

}  // namespace detail

inline RunConfig RunConfig::from_json(const nlohmann::json& j) {
  using detail::read_if;
  RunConfig c;
  try {
    detail::reject_unknown(j, "<root>", {"seed", "preset", "model", "lm", "lora", "train", "pretrain", "data", "arms"});
    const std::string preset = j.value("preset", std::string("desk"));
    if (preset == "desk") c = desk();
    else if (preset == "paper") c = paper();
    else throw ConfigError("unknown preset '" + preset + "' (expected desk or paper)");
    read_if(j, "seed", c.seed);

    if (j.contains("model")) {
      const auto& m = j["model"];
      detail::reject_unknown(m, "model", {"d_a", "d_v", "d_av", "d_h", "n_heads", "dropout", "experts"});
      read_if(m, "d_a", c.model.d_a);
      read_if(m, "d_v", c.model.d_v);
      read_if(m, "d_av", c.model.d_av);
      read_if(m, "d_h", c.model.d_h);
      read_if(m, "n_heads", c.model.n_heads);
      read_if(m, "dropout", c.model.dropout);
      if (m.contains("experts")) {
        const auto& e = m["experts"];
        if (!e.is_array() || e.size() != kNumExperts) throw ConfigError("model.experts must list exactly three experts");
        for (std::size_t k = 0; k < kNumExperts; ++k) {
          detail::reject_unknown(e[k], "model.experts", {"ratio", "activation"});
          read_if(e[k], "ratio", c.model.experts[k].ratio);
          if (e[k].contains("activation")) c.model.experts[k].activation = parse_activation(e[k]["activation"].get<std::string>());
        }
      }
    }
    if (j.contains("lm")) {
      const auto& m = j["lm"];
      detail::reject_unknown(m, "lm", {"vocab_size", "d_emb", "n_layers", "n_heads", "max_seq_len", "n_tokens", "ffn_mult"});
      read_if(m, "vocab_size", c.lm.vocab_size);
      read_if(m, "d_emb", c.lm.d_emb);
      read_if(m, "n_layers", c.lm.n_layers);
      read_if(m, "n_heads", c.lm.n_heads);
      read_if(m, "max_seq_len", c.lm.max_seq_len);
      read_if(m, "n_tokens", c.lm.n_tokens);
      read_if(m, "ffn_mult", c.lm.ffn_mult);
    }
    if (j.contains("lora")) {
      const auto& m = j["lora"];
      detail::reject_unknown(m, "lora", {"rank", "alpha"});
      read_if(m, "rank", c.lora.rank);
      read_if(m, "alpha", c.lora.alpha);
    }
    if (j.contains("train")) {
      const auto& m = j["train"];
      detail::reject_unknown(m, "train", {"lr", "batch_size", "max_epochs", "max_steps", "ablation"});
      read_if(m, "lr", c.train.lr);
      read_if(m, "batch_size", c.train.batch_size);
      read_if(m, "max_epochs", c.train.max_epochs);
      read_if(m, "max_steps", c.train.max_steps);
      if (m.contains("ablation")) c.train.ablation = Ablation::parse(detail::string_list(m["ablation"]));
    }
    if (j.contains("pretrain")) {
      const auto& m = j["pretrain"];
      detail::reject_unknown(m, "pretrain", {"lr", "batch_size", "epochs"});
      read_if(m, "lr", c.pretrain.lr);
      read_if(m, "batch_size", c.pretrain.batch_size);
      read_if(m, "epochs", c.pretrain.epochs);
    }
    if (j.contains("data")) {
      const auto& m = j["data"];
      detail::reject_unknown(m, "data",
                             {"name", "language", "task", "n_classes", "score_range", "n_train", "n_valid", "n_test", "s_t",
                              "s_a", "s_v", "sigma", "keywords_per_class", "text_len", "frames", "lm_corpus_lines"});
      read_if(m, "name", c.data.name);
      read_if(m, "language", c.data.language);
      if (m.contains("task")) c.data.task = parse_task(m["task"].get<std::string>());
      read_if(m, "n_classes", c.data.n_classes);
      if (m.contains("score_range")) {
        const auto r = m["score_range"].get<std::vector<double>>();
        if (r.size() != 2) throw ConfigError("data.score_range must be [lo, hi]");
        c.data.score_lo = r[0];
        c.data.score_hi = r[1];
      }
      read_if(m, "n_train", c.data.n_samples[0]);
      read_if(m, "n_valid", c.data.n_samples[1]);
      read_if(m, "n_test", c.data.n_samples[2]);
      read_if(m, "s_t", c.data.s_t);
      read_if(m, "s_a", c.data.s_a);
      read_if(m, "s_v", c.data.s_v);
      read_if(m, "sigma", c.data.sigma);
      read_if(m, "keywords_per_class", c.data.keywords_per_class);
      read_if(m, "lm_corpus_lines", c.data.lm_corpus_lines);
      if (m.contains("text_len")) {
        const auto r = m["text_len"].get<std::vector<std::size_t>>();
        if (r.size() != 2) throw ConfigError("data.text_len must be [min, max]");
        c.data.text_min = r[0];
        c.data.text_max = r[1];
      }
      if (m.contains("frames")) {
        const auto r = m["frames"].get<std::vector<std::size_t>>();
        if (r.size() != 2) throw ConfigError("data.frames must be [min, max]");
        c.data.frames_min = r[0];
        c.data.frames_max = r[1];
      }
    }
    c.train.task = c.data.task;
    if (j.contains("arms")) {
      if (!j["arms"].is_array()) throw ConfigError("arms must be a list of flag lists");
      c.arms.clear();
      for (const auto& a : j["arms"]) c.arms.push_back(Ablation::parse(detail::string_list(a)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

}  // namespace egmf
