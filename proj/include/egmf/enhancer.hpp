// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "egmf/autograd.hpp"
#include "egmf/errors.hpp"
#include "egmf/nn.hpp"
#include "egmf/ops.hpp"

namespace egmf {

inline constexpr std::size_t kNumExperts = 3;

struct ExpertConfig {
  std::size_t ratio;      // bottleneck width is d_h / ratio
  Activation activation;
};

// Fine-grained (1:8, Mish), semantic (1:4, GELU), global (1:2, Swish).
inline constexpr std::array<ExpertConfig, kNumExperts> kDefaultExperts{{
    {8, Activation::Mish},
    {4, Activation::GELU},
    {2, Activation::Swish},
}};

// Bottleneck MLP without an internal skip path.
class Expert {
 public:
  Expert() = default;
  Expert(ParameterStore& store, const std::string& name, std::size_t d_h, ExpertConfig cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.ratio == 0 || d_h % cfg.ratio != 0) {
      throw ConfigError(name + ": d_h " + std::to_string(d_h) + " is not divisible by bottleneck ratio " +
                        std::to_string(cfg.ratio));
    }
    down_ = Linear(store, name + ".down", d_h, d_h / cfg.ratio, rng);
    up_ = Linear(store, name + ".up", d_h / cfg.ratio, d_h, rng);
  }

  Var forward(Tape& t, Var x) const { return up_(t, activation(down_(t, x), cfg_.activation)); }

  std::size_t bottleneck_dim() const { return down_.out_features(); }
  const ExpertConfig& config() const { return cfg_; }

 private:
  ExpertConfig cfg_{};
  Linear down_, up_;
};

struct GateOutput {
  std::array<double, kNumExperts> w{};      // feature-driven weights, each in (0, 1)
  std::array<double, kNumExperts> alpha{};  // mixing weights on the simplex; 0 for dropped experts
  double beta = 0.0;                        // residual coefficient in (0, 1)
};

struct EnhancedRepresentation {
  Var enhanced;  // 1 x d_h
  Var alpha;     // 1 x n_active, differentiable
  GateOutput gate;
  std::array<Tensor, kNumExperts> expert_outputs;  // empty tensor for dropped experts
};

// Test-rig overrides and ablations for enhance().
struct EnhanceOptions {
  std::array<bool, kNumExperts> active{true, true, true};
  std::optional<std::array<double, kNumExperts>> forced_logits;
  std::optional<std::array<double, kNumExperts>> forced_alpha;
  std::optional<double> forced_beta;
};

// Three experts mixed by a two-stage gate plus a gated residual:
//   enhanced = sum_k alpha_k E_k(f) + beta f
// Stage one maps f to sigmoid([w_1, w_2, w_3, beta]); stage two maps
// concat(f, w) through a GELU MLP to softmax logits alpha.
class Enhancer {
 public:
  Enhancer() = default;
  Enhancer(ParameterStore& store, const std::string& name, std::size_t d_h,
           const std::array<ExpertConfig, kNumExperts>& experts, Rng& rng)
      : d_h_(d_h) {
    if (d_h % 8 != 0) throw ConfigError(name + ": d_h must be divisible by 8, got " + std::to_string(d_h));
    for (std::size_t k = 0; k < kNumExperts; ++k) {
      experts_[k] = Expert(store, name + ".expert" + std::to_string(k + 1), d_h, experts[k], rng);
    }
    gate1_ = Linear(store, name + ".gate1", d_h, kNumExperts + 1, rng);
    gate2_hidden_ = Linear(store, name + ".gate2.fc1", d_h + kNumExperts, d_h / 2, rng);
    gate2_out_ = Linear(store, name + ".gate2.fc2", d_h / 2, kNumExperts, rng);
  }

  std::size_t d_h() const { return d_h_; }
  const Expert& expert(std::size_t k) const { return experts_.at(k - 1); }

  // k is 1-based.
  Var expert_forward(Tape& t, std::size_t k, Var fused) const {
    if (k < 1 || k > kNumExperts) throw ConfigError("expert index must be 1, 2 or 3, got " + std::to_string(k));
    return experts_[k - 1].forward(t, fused);
  }

  struct Stage1 {
    Var w;     // 1 x 3
    Var beta;  // 1 x 1
  };

  Stage1 gate_stage1(Tape& t, Var fused) const {
    Var s = activation(gate1_(t, fused), Activation::Sigmoid);
    return {slice_cols(s, 0, kNumExperts), slice_cols(s, kNumExperts, 1)};
  }

  Var gate_logits(Tape& t, Var fused, Var w) const {
    return gate2_out_(t, activation(gate2_hidden_(t, concat_cols({fused, w})), Activation::GELU));
  }

  // Softmax over the logits of the active experts only.
  Var gate_stage2(Tape& t, Var fused, Var w, const std::array<bool, kNumExperts>& active = {true, true, true}) const {
    return softmax(select_cols(gate_logits(t, fused, w), active_indices(active)), 1);
  }

  EnhancedRepresentation enhance(Tape& t, Var fused, const EnhanceOptions& opt = {}) const {
    const std::vector<std::size_t> idx = active_indices(opt.active);
    EnhancedRepresentation out;

    Stage1 s1 = gate_stage1(t, fused);
    Var beta = opt.forced_beta ? t.constant(Tensor({1, 1}, *opt.forced_beta)) : s1.beta;

    Var alpha;
    if (opt.forced_alpha) {
      std::vector<double> a;
      for (std::size_t k : idx) a.push_back((*opt.forced_alpha)[k]);
      alpha = t.constant(Tensor::row(std::move(a)));
    } else {
      Var logits = opt.forced_logits ? t.constant(Tensor::row({(*opt.forced_logits).begin(), (*opt.forced_logits).end()}))
                                     : gate_logits(t, fused, s1.w);
      alpha = softmax(select_cols(logits, idx), 1);
    }

    Var mix;
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const std::size_t k = idx[j];
      Var e = experts_[k].forward(t, fused);
      out.expert_outputs[k] = e.value().clone_values();
      Var term = scale_by(e, slice_cols(alpha, j, 1));
      mix = mix.valid() ? add(mix, term) : term;
    }
    out.enhanced = add(mix, scale_by(fused, beta));
    out.alpha = alpha;

    for (std::size_t k = 0; k < kNumExperts; ++k) out.gate.w[k] = s1.w.value()[k];
    for (std::size_t j = 0; j < idx.size(); ++j) out.gate.alpha[idx[j]] = alpha.value()[j];
    out.gate.beta = beta.value()[0];
    return out;
  }

  static std::vector<std::size_t> active_indices(const std::array<bool, kNumExperts>& active) {
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < kNumExperts; ++k) {
      if (active[k]) idx.push_back(k);
    }
    if (idx.empty()) throw ConfigError("at least one expert must remain active");
    return idx;
  }

 private:
  std::size_t d_h_ = 0;
  std::array<Expert, kNumExperts> experts_;
  Linear gate1_;
  Linear gate2_hidden_, gate2_out_;
};

}  // namespace egmf
