// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <unordered_map>
#include <vector>

#include "egmf/autograd.hpp"
#include "egmf/errors.hpp"
#include "egmf/metrics.hpp"
#include "egmf/model.hpp"
#include "egmf/ops.hpp"
#include "egmf/rng.hpp"
#include "egmf/toy_lm.hpp"
#include "egmf/vocab.hpp"

namespace egmf {

// RNG stream ids derived from the run seed.
namespace streams {
inline constexpr std::uint64_t kData = 1;
inline constexpr std::uint64_t kLmInit = 2;
inline constexpr std::uint64_t kPretrainShuffle = 3;
inline constexpr std::uint64_t kModelInit = 4;
inline constexpr std::uint64_t kTrainShuffle = 6;
}  // namespace streams

// ---------------------------------------------------------------------------
// Losses

// Cross-entropy over the full vocabulary at the final position.
inline Var loss_classification(Var final_logits, TokenId gold) {
  const std::size_t target[1] = {gold};
  return cross_entropy(slice_rows(final_logits, final_logits.rows() - 1, 1), target);
}

// Teacher-forcing targets for a gold score: its characters then <eos>.
inline std::vector<TokenId> regression_targets(const Vocabulary& vocab, double score, double lo, double hi) {
  if (!std::isfinite(score) || score < lo || score > hi) {
    throw DataError("gold score " + std::to_string(score) + " lies outside [" + std::to_string(lo) + ", " +
                    std::to_string(hi) + "]");
  }
  std::vector<TokenId> ids = score_to_tokens(vocab, score);
  ids.push_back(vocab.eos());
  return ids;
}

// Mean token-level cross-entropy; row i of logits predicts targets[i].
inline Var loss_regression(Var logits, std::span<const TokenId> targets) { return cross_entropy(logits, targets); }

// Differentiable loss of one utterance under the model's current ablation.
inline Var sample_loss(const EgmfModel& model, Tape& t, const UtteranceFeatures& u) {
  ForwardPass fp = model.forward(t, u);
  if (model.task() == Task::Classification) {
    if (!u.has_label()) throw DataError("classification sample without an integer label");
    const auto& labels = model.prompt().label_tokens;
    if (u.label() >= labels.size()) throw DataError("label " + std::to_string(u.label()) + " has no label token");
    return loss_classification(model.final_logits(t, fp), labels[u.label()]);
  }
  if (u.has_label()) throw DataError("regression sample with an integer label");
  const auto& p = model.prompt();
  const std::vector<TokenId> targets = regression_targets(model.vocab(), u.score(), p.score_lo, p.score_hi);
  return loss_regression(model.continuation_logits(t, fp, targets), targets);
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update of a scalar; step counts from 1.
inline void adam_update(double& param, double grad, double& m, double& v, std::size_t step, const AdamConfig& c) {
  m = c.beta1 * m + (1.0 - c.beta1) * grad;
  v = c.beta2 * v + (1.0 - c.beta2) * grad * grad;
  const double m_hat = m / (1.0 - std::pow(c.beta1, static_cast<double>(step)));
  const double v_hat = v / (1.0 - std::pow(c.beta2, static_cast<double>(step)));
  param -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
}

// Adam over a parameter list. Frozen parameters and parameters without a
// gradient are skipped and keep their moment state untouched.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }

  void step(const std::vector<Parameter*>& params) {
    for (Parameter* p : params) {
      if (p->frozen || !p->tensor.grad) continue;
      const std::vector<double>& g = *p->tensor.grad;
      Slot& s = state_[p];
      if (s.m.empty()) {
        s.m.assign(g.size(), 0.0);
        s.v.assign(g.size(), 0.0);
      }
      ++s.t;
      auto w = p->tensor.data();
      for (std::size_t i = 0; i < g.size(); ++i) adam_update(w[i], g[i], s.m[i], s.v[i], s.t, cfg_);
    }
  }

 private:
  struct Slot {
    std::vector<double> m, v;
    std::size_t t = 0;
  };
  AdamConfig cfg_;
  std::unordered_map<const Parameter*, Slot> state_;
};

// ---------------------------------------------------------------------------
// EGMF training

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 30;
  std::size_t max_steps = 0;  // 0 = no cap beyond max_epochs
  std::uint64_t seed = 0;
  Task task = Task::Classification;
  Ablation ablation;

  void validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be positive");
    if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (max_epochs == 0) throw ConfigError("train.max_epochs must be positive");
    ablation.validate();
  }
};

struct TrainLog {
  std::size_t steps = 0;
  std::vector<double> step_loss;
  std::vector<double> epoch_loss;  // mean batch loss per epoch
};

using StepCallback = std::function<void(std::size_t step, double loss)>;

// Mini-batch Adam on the mean per-sample loss. One tape per batch; the
// epoch order comes from a seeded shuffle so runs are reproducible.
inline TrainLog train(EgmfModel& model, const std::vector<UtteranceFeatures>& data, const TrainConfig& cfg,
                      const StepCallback& on_step = {}) {
  cfg.validate();
  if (cfg.task != model.task()) throw ConfigError("train.task disagrees with the model's task");
  if (data.empty()) throw DataError("training split is empty");
  model.set_ablation(cfg.ablation);
  model.zero_grad();
  Adam opt(AdamConfig{cfg.lr});
  Rng shuffle = Rng(cfg.seed).fork(streams::kTrainShuffle);
  std::vector<std::size_t> order(data.size());
  const std::vector<Parameter*> params = model.parameters();
  TrainLog log;
  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle.shuffle(std::span<std::size_t>(order));
    double epoch_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      if (cfg.max_steps && log.steps >= cfg.max_steps) break;
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      Tape t;
      Var total;
      for (std::size_t i = start; i < end; ++i) {
        Var l = sample_loss(model, t, data[order[i]]);
        total = total.valid() ? add(total, l) : l;
      }
      Var loss = scale(total, 1.0 / static_cast<double>(end - start));
      t.backward(loss);
      opt.step(params);
      model.zero_grad();
      ++log.steps;
      log.step_loss.push_back(loss.value()[0]);
      epoch_sum += loss.value()[0];
      ++batches;
      if (on_step) on_step(log.steps, loss.value()[0]);
    }
    if (batches) log.epoch_loss.push_back(epoch_sum / static_cast<double>(batches));
    if (cfg.max_steps && log.steps >= cfg.max_steps) break;
  }
  return log;
}

// ---------------------------------------------------------------------------
// Toy LM pretraining

struct PretrainConfig {
  double lr = 3e-3;
  std::size_t batch_size = 16;
  std::size_t epochs = 6;

  void validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("pretrain.lr must be positive");
    if (batch_size == 0) throw ConfigError("pretrain.batch_size must be positive");
  }
};

// Next-token cross-entropy over every position of every corpus line.
inline Var lm_line_loss(const ToyLM& lm, Tape& t, std::span<const TokenId> line) {
  if (line.size() < 2) throw DataError("lm corpus line needs at least two tokens");
  Var logits = lm.forward(t, lm.embed(t, line.first(line.size() - 1)));
  return cross_entropy(logits, line.subspan(1));
}

inline std::vector<double> pretrain_lm(ToyLM& lm, const std::vector<std::vector<TokenId>>& corpus,
                                       const PretrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (corpus.empty()) throw DataError("lm corpus is empty");
  Adam opt(AdamConfig{cfg.lr});
  Rng shuffle = Rng(seed).fork(streams::kPretrainShuffle);
  std::vector<std::size_t> order(corpus.size());
  const std::vector<Parameter*> params = lm.store().all();
  for (Parameter* p : params) p->zero_grad();
  std::vector<double> epoch_loss;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle.shuffle(std::span<std::size_t>(order));
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      Tape t;
      Var total;
      for (std::size_t i = start; i < end; ++i) {
        Var l = lm_line_loss(lm, t, corpus[order[i]]);
        total = total.valid() ? add(total, l) : l;
      }
      Var loss = scale(total, 1.0 / static_cast<double>(end - start));
      t.backward(loss);
      opt.step(params);
      for (Parameter* p : params) p->zero_grad();
      sum += loss.value()[0];
      ++batches;
    }
    epoch_loss.push_back(sum / static_cast<double>(batches));
  }
  return epoch_loss;
}

// ---------------------------------------------------------------------------
// Evaluation

struct Predictions {
  std::vector<std::size_t> labels, gold_labels;
  std::vector<double> scores, gold_scores;
  ScoreStats score_stats;
};

inline Predictions predict(const EgmfModel& model, const std::vector<UtteranceFeatures>& data) {
  Predictions p;
  for (const auto& u : data) {
    if (model.task() == Task::Classification) {
      p.labels.push_back(model.predict_label(u));
      p.gold_labels.push_back(u.label());
    } else {
      p.scores.push_back(model.predict_score(u, &p.score_stats).value);
      p.gold_scores.push_back(u.score());
    }
  }
  return p;
}

inline MetricReport evaluate(const EgmfModel& model, const std::vector<UtteranceFeatures>& data) {
  if (data.empty()) throw DataError("cannot evaluate an empty split");
  const Predictions p = predict(model, data);
  if (model.task() == Task::Classification) {
    return classification_report(p.labels, p.gold_labels, model.prompt().label_tokens.size());
  }
  return regression_report(p.scores, p.gold_scores, model.prompt().score_lo, model.prompt().score_hi,
                           p.score_stats.parse_failures);
}

}  // namespace egmf
