// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>

#include "egmf/checkpoint.hpp"
#include "egmf/config.hpp"
#include "egmf/data.hpp"
#include "egmf/model.hpp"
#include "egmf/toy_lm.hpp"
#include "egmf/training.hpp"

namespace egmf {

// Glue shared by the CLI and the end-to-end tests: everything a run needs
// is derived from the config seed and the dataset directory.

inline void check_manifest(const RunConfig& cfg, const DatasetManifest& m) {
  if (m.task != cfg.data.task) throw ConfigError("dataset task disagrees with the config");
  if (m.d_a != cfg.model.d_a || m.d_v != cfg.model.d_v) throw ConfigError("dataset feature dims disagree with model.d_a/d_v");
  if (m.vocab_size != cfg.lm.vocab_size) throw ConfigError("dataset vocab_size disagrees with lm.vocab_size");
  if (m.task == Task::Classification && m.n_classes != cfg.data.n_classes) {
    throw ConfigError("dataset n_classes disagrees with the config");
  }
  if (m.task == Task::Regression && (m.score_lo != cfg.data.score_lo || m.score_hi != cfg.data.score_hi)) {
    throw ConfigError("dataset score range disagrees with the config");
  }
}

inline ToyLM fresh_lm(const RunConfig& cfg) {
  Rng rng = Rng(cfg.seed).fork(streams::kLmInit);
  return ToyLM(cfg.lm, rng);
}

inline TaskPrompt task_prompt(const RunConfig& cfg, const DatasetManifest& m, const Vocabulary& vocab) {
  return TaskPrompt::build(m.prompt_template(), vocab, cfg.data.task, cfg.data.n_classes, cfg.data.score_lo,
                           cfg.data.score_hi);
}

// Builds the model around a copy of the pretrained LM.
inline EgmfModel fresh_model(const RunConfig& cfg, const ToyLM& pretrained, const DatasetManifest& m) {
  Vocabulary vocab = m.vocabulary();
  TaskPrompt prompt = task_prompt(cfg, m, vocab);
  Rng rng = Rng(cfg.seed).fork(streams::kModelInit);
  return EgmfModel(cfg.model, pretrained.clone(), cfg.lora, std::move(vocab), std::move(prompt), rng);
}

inline void save_lm(const std::filesystem::path& path, const RunConfig& cfg, const ToyLM& lm) {
  save_checkpoint(path, {"lm", cfg.seed, cfg.lm_hash(), {}}, lm.store().all());
}

inline ToyLM load_lm(const std::filesystem::path& path, const RunConfig& cfg) {
  ToyLM lm = fresh_lm(cfg);
  load_checkpoint(path, lm.store().all(), "lm", cfg.lm_hash());
  return lm;
}

inline void save_model(const std::filesystem::path& path, const RunConfig& cfg, const EgmfModel& model) {
  nlohmann::ordered_json extra;
  extra["ablation"] = model.ablation().flags();
  save_checkpoint(path, {"model", cfg.seed, cfg.model_hash(), extra}, model.parameters());
}

// Restores every parameter and the ablation the model was trained under.
inline EgmfModel load_model(const std::filesystem::path& path, const RunConfig& cfg, const DatasetManifest& m) {
  ToyLM lm = fresh_lm(cfg);
  EgmfModel model = fresh_model(cfg, lm, m);
  CheckpointHeader h = load_checkpoint(path, model.parameters(), "model", cfg.model_hash());
  std::vector<std::string> flags;
  if (h.extra.contains("ablation")) flags = h.extra["ablation"].get<std::vector<std::string>>();
  model.set_ablation(Ablation::parse(flags));
  return model;
}

}  // namespace egmf
