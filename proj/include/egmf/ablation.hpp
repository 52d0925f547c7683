// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "egmf/metrics.hpp"
#include "egmf/model.hpp"
#include "egmf/training.hpp"

namespace egmf {

// The arms of the standard ablation sweep, full model first.
inline std::vector<Ablation> standard_arms() {
  std::vector<Ablation> arms;
  for (const char* f : {"", "drop_text", "drop_audio", "drop_visual", "drop_expert_1", "drop_expert_2", "drop_expert_3",
                        "no_lora"}) {
    arms.push_back(*f ? Ablation::parse({f}) : Ablation{});
  }
  return arms;
}

struct ArmResult {
  Ablation arm;
  MetricReport report;
  std::vector<std::pair<std::string, double>> delta;  // arm minus full, per scalar metric
  TrainLog log;
  std::vector<double> mean_alpha;  // mean gate weights over the eval split, active experts only
};

// Builds a fresh model for each arm. Every call must start from the same
// seed so that arms differ only by their ablation.
using ModelFactory = std::function<EgmfModel()>;

namespace detail {

inline std::vector<double> mean_gate_alpha(const EgmfModel& model, const std::vector<UtteranceFeatures>& data) {
  std::vector<double> sum;
  for (const auto& u : data) {
    Tape t(false);
    ForwardPass fp = model.forward(t, u);
    const Tensor& a = fp.enhanced.alpha.value();
    if (sum.empty()) sum.assign(a.size(), 0.0);
    for (std::size_t j = 0; j < a.size(); ++j) sum[j] += a[j];
  }
  for (double& s : sum) s /= static_cast<double>(data.size());
  return sum;
}

}  // namespace detail

// Trains and evaluates every arm from the same seed. The full model is
// always run first and serves as the delta reference; an empty arm in the
// list is treated as that reference.
inline std::vector<ArmResult> run_ablation(const ModelFactory& make_model, const std::vector<UtteranceFeatures>& train_set,
                                           const std::vector<UtteranceFeatures>& eval_set, const TrainConfig& base,
                                           const std::vector<Ablation>& arms) {
  for (const Ablation& a : arms) a.validate();
  std::vector<Ablation> plan{Ablation{}};
  for (const Ablation& a : arms) {
    if (!a.empty()) plan.push_back(a);
  }
  std::vector<ArmResult> out;
  for (const Ablation& a : plan) {
    EgmfModel model = make_model();
    TrainConfig cfg = base;
    cfg.ablation = a;
    ArmResult r;
    r.arm = a;
    r.log = train(model, train_set, cfg);
    r.report = evaluate(model, eval_set);
    r.mean_alpha = detail::mean_gate_alpha(model, eval_set);
    out.push_back(std::move(r));
  }
  const auto full = out.front().report.scalars();
  for (ArmResult& r : out) {
    for (const auto& [k, v] : r.report.scalars()) {
      for (const auto& [fk, fv] : full) {
        if (fk == k) r.delta.emplace_back(k, v - fv);
      }
    }
  }
  return out;
}

inline std::string ablation_csv(const std::vector<ArmResult>& results) {
  std::ostringstream os;
  os << "arm,metric,value,delta\n" << std::setprecision(17);
  for (const ArmResult& r : results) {
    const auto scalars = r.report.scalars();
    for (std::size_t i = 0; i < scalars.size(); ++i) {
      os << r.arm.name() << ',' << scalars[i].first << ',' << scalars[i].second << ',' << r.delta.at(i).second << '\n';
    }
  }
  return os.str();
}

inline nlohmann::ordered_json ablation_json(const std::vector<ArmResult>& results) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const ArmResult& r : results) {
    nlohmann::ordered_json j;
    j["arm"] = r.arm.name();
    j["flags"] = r.arm.flags();
    j["metrics"] = r.report.to_json();
    nlohmann::ordered_json d;
    for (const auto& [k, v] : r.delta) d[k] = v;
    j["delta"] = d;
    j["mean_alpha"] = r.mean_alpha;
    j["train_steps"] = r.log.steps;
    j["final_train_loss"] = r.log.step_loss.empty() ? 0.0 : r.log.step_loss.back();
    arr.push_back(j);
  }
  return arr;
}

}  // namespace egmf
