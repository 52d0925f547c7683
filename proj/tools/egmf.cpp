// SPDX-License-Identifier: Apache-2.0
//
// egmf: generate-data | pretrain-lm | train | eval | ablate | inspect
//
// Exit codes: 0 success, 1 usage error, 2 data or configuration error.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "egmf/egmf.hpp"

namespace fs = std::filesystem;
using namespace egmf;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "egmf-run";
};

RunConfig load_config(const Globals& g) {
  RunConfig cfg = RunConfig::load(g.config);
  if (g.seed) cfg.seed = *g.seed;
  return cfg;
}

fs::path data_dir(const Globals& g) { return fs::path(g.out) / "data"; }

DatasetManifest open_dataset(const Globals& g, const RunConfig& cfg) {
  DatasetManifest m = DatasetManifest::load(data_dir(g) / "manifest.json");
  check_manifest(cfg, m);
  return m;
}

void write_json(const fs::path& p, const nlohmann::ordered_json& j) { write_text_file(p, j.dump(2) + "\n"); }

int cmd_generate(const Globals& g) {
  const RunConfig cfg = load_config(g);
  const DatasetManifest m = generate_synthetic(cfg.data_spec(), data_dir(g));
  std::cerr << "wrote " << m.split_sizes[0] << "/" << m.split_sizes[1] << "/" << m.split_sizes[2]
            << " train/valid/test records to " << data_dir(g).string() << "\n";
  return 0;
}

int cmd_pretrain(const Globals& g) {
  const RunConfig cfg = load_config(g);
  const DatasetManifest m = open_dataset(g, cfg);
  const Vocabulary vocab = m.vocabulary();
  const auto corpus = load_lm_corpus(m.dir / m.lm_corpus_file, vocab);
  ToyLM lm = fresh_lm(cfg);
  const std::vector<double> losses = pretrain_lm(lm, corpus, cfg.pretrain, cfg.seed);
  for (std::size_t e = 0; e < losses.size(); ++e) std::fprintf(stderr, "pretrain epoch %zu loss %.6f\n", e + 1, losses[e]);
  save_lm(fs::path(g.out) / "lm.ckpt", cfg, lm);
  return 0;
}

int cmd_train(const Globals& g, const std::string& lm_path) {
  const RunConfig cfg = load_config(g);
  const DatasetManifest m = open_dataset(g, cfg);
  const ToyLM lm = load_lm(lm_path.empty() ? fs::path(g.out) / "lm.ckpt" : fs::path(lm_path), cfg);
  EgmfModel model = fresh_model(cfg, lm, m);
  const auto train_set = load_split(m, "train");
  const TrainLog log = train(model, train_set, cfg.train_config(), [](std::size_t step, double loss) {
    if (step % 10 == 0) std::fprintf(stderr, "step %zu loss %.6f\n", step, loss);
  });
  save_model(fs::path(g.out) / "model.ckpt", cfg, model);
  nlohmann::ordered_json j;
  j["steps"] = log.steps;
  j["step_loss"] = log.step_loss;
  j["epoch_loss"] = log.epoch_loss;
  write_json(fs::path(g.out) / "train_log.json", j);
  return 0;
}

int cmd_eval(const Globals& g, const std::string& ckpt, const std::string& split) {
  const RunConfig cfg = load_config(g);
  const DatasetManifest m = open_dataset(g, cfg);
  const EgmfModel model = load_model(ckpt.empty() ? fs::path(g.out) / "model.ckpt" : fs::path(ckpt), cfg, m);
  const MetricReport report = evaluate(model, load_split(m, split));
  nlohmann::ordered_json j;
  j["split"] = split;
  j["ablation"] = model.ablation().name();
  j["metrics"] = report.to_json();
  write_json(fs::path(g.out) / "metrics.json", j);
  std::cout << report.to_table();
  return 0;
}

int cmd_ablate(const Globals& g, const std::string& lm_path, const std::string& split) {
  const RunConfig cfg = load_config(g);
  const DatasetManifest m = open_dataset(g, cfg);
  const ToyLM lm = load_lm(lm_path.empty() ? fs::path(g.out) / "lm.ckpt" : fs::path(lm_path), cfg);
  const auto train_set = load_split(m, "train");
  const auto eval_set = load_split(m, split);
  const auto results = run_ablation([&] { return fresh_model(cfg, lm, m); }, train_set, eval_set, cfg.train_config(), cfg.arms);
  write_text_file(fs::path(g.out) / "ablation.csv", ablation_csv(results));
  write_json(fs::path(g.out) / "ablation.json", ablation_json(results));
  std::cout << ablation_csv(results);
  return 0;
}

nlohmann::ordered_json tensor_json(const Tensor& t) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (std::size_t r = 0; r < t.rows(); ++r) {
    auto s = t.row_span(r);
    rows.push_back(std::vector<double>(s.begin(), s.end()));
  }
  return rows;
}

int cmd_inspect(const Globals& g, const std::string& ckpt, const std::string& split, std::size_t index, bool attention) {
  const RunConfig cfg = load_config(g);
  const DatasetManifest m = open_dataset(g, cfg);
  const EgmfModel model = load_model(ckpt.empty() ? fs::path(g.out) / "model.ckpt" : fs::path(ckpt), cfg, m);
  const auto data = load_split(m, split);
  if (index >= data.size()) throw DataError("index " + std::to_string(index) + " is outside the split");
  const UtteranceFeatures& u = data[index];

  Tape t(false);
  const ForwardPass fp = model.forward(t, u);
  nlohmann::ordered_json j;
  j["split"] = split;
  j["index"] = index;
  j["ablation"] = model.ablation().name();
  j["text"] = model.vocab().decode(u.text);
  const GateOutput& gate = fp.enhanced.gate;
  j["gate"] = {{"w", gate.w}, {"alpha", gate.alpha}, {"beta", gate.beta}};
  nlohmann::ordered_json norms = nlohmann::ordered_json::array();
  for (const Tensor& e : fp.enhanced.expert_outputs) {
    if (e.empty()) {
      norms.push_back(nullptr);
      continue;
    }
    double s = 0.0;
    for (double v : e.data()) s += v * v;
    norms.push_back(std::sqrt(s));
  }
  j["expert_output_norm"] = norms;
  if (model.task() == Task::Classification) {
    j["gold"] = u.label();
    j["predicted"] = model.predict_label(u);
  } else {
    const ScoreDecode d = model.predict_score(u);
    j["gold"] = u.score();
    j["generated"] = d.text;
    j["predicted"] = d.value;
    j["parse_failure"] = d.parse_failure;
    j["clamped"] = d.clamped;
  }
  if (attention) {
    nlohmann::ordered_json cross = nlohmann::ordered_json::array(), self = nlohmann::ordered_json::array();
    for (const Tensor& w : fp.fused.cross_weights) cross.push_back(tensor_json(w));
    for (const Tensor& w : fp.fused.self_weights) self.push_back(tensor_json(w));
    j["cross_attention"] = cross;
    j["self_attention"] = self;
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Expert-guided multimodal fusion with a toy language model"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "run configuration (JSON)")->required();
  app.add_option("--seed", g.seed, "override the config seed");
  app.add_option("--out", g.out, "run directory")->capture_default_str();

  auto* gen = app.add_subcommand("generate-data", "write the synthetic dataset and LM corpus to <out>/data");
  auto* pre = app.add_subcommand("pretrain-lm", "pretrain the toy LM on the corpus; writes <out>/lm.ckpt");
  std::string lm_path;
  auto* trn = app.add_subcommand("train", "train the fusion model and adapters; writes <out>/model.ckpt");
  trn->add_option("--lm", lm_path, "pretrained LM checkpoint (default <out>/lm.ckpt)");
  std::string ckpt, split = "test";
  auto* evl = app.add_subcommand("eval", "evaluate a checkpoint; writes <out>/metrics.json");
  evl->add_option("--checkpoint", ckpt, "model checkpoint (default <out>/model.ckpt)");
  evl->add_option("--split", split, "train, valid or test");
  auto* abl = app.add_subcommand("ablate", "train and evaluate every ablation arm; writes <out>/ablation.csv");
  abl->add_option("--lm", lm_path, "pretrained LM checkpoint (default <out>/lm.ckpt)");
  abl->add_option("--split", split, "evaluation split");
  std::size_t index = 0;
  bool attention = false;
  auto* ins = app.add_subcommand("inspect", "dump gate diagnostics for one utterance as JSON");
  ins->add_option("--checkpoint", ckpt, "model checkpoint (default <out>/model.ckpt)");
  ins->add_option("--split", split, "split to read from");
  ins->add_option("--index", index, "record index within the split");
  ins->add_flag("--attention", attention, "include attention maps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    fs::create_directories(g.out);
    if (*gen) return cmd_generate(g);
    if (*pre) return cmd_pretrain(g);
    if (*trn) return cmd_train(g, lm_path);
    if (*evl) return cmd_eval(g, ckpt, split);
    if (*abl) return cmd_ablate(g, lm_path, split);
    if (*ins) return cmd_inspect(g, ckpt, split, index, attention);
  } catch (const egmf::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
