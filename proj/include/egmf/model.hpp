// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "egmf/autograd.hpp"
#include "egmf/encoders.hpp"
#include "egmf/enhancer.hpp"
#include "egmf/errors.hpp"
#include "egmf/fusion.hpp"
#include "egmf/lora.hpp"
#include "egmf/ops.hpp"
#include "egmf/toy_lm.hpp"
#include "egmf/vocab.hpp"

namespace egmf {

struct ModelConfig {
  std::size_t d_a = 16;
  std::size_t d_v = 16;
  std::size_t d_av = 64;
  std::size_t d_h = 64;
  std::size_t n_heads = 4;
  std::array<ExpertConfig, kNumExperts> experts = kDefaultExperts;
  double dropout = 0.0;

  static ModelConfig desk() { return {}; }

  static ModelConfig paper() {
    ModelConfig c;
    c.d_av = 256;
    c.d_h = 512;
    return c;
  }

  void validate() const {
    if (d_a == 0 || d_v == 0 || d_av == 0) throw ConfigError("model feature dims must be positive");
    if (d_h == 0 || d_h % 8 != 0) throw ConfigError("model.d_h must be a positive multiple of 8");
    if (n_heads == 0 || d_h % n_heads != 0) throw ConfigError("model.d_h must be divisible by model.n_heads");
    // Reserved; dropout is not applied at this scale.
    if (dropout != 0.0) throw ConfigError("model.dropout is reserved and must be 0");
  }
};

// One ablation arm. Modality drops zero the encoder output; expert drops
// remove the expert and renormalize the gate over the rest; no_lora keeps
// the adapters frozen at zero.
struct Ablation {
  bool drop_text = false;
  bool drop_audio = false;
  bool drop_visual = false;
  std::array<bool, kNumExperts> drop_expert{};
  bool no_lora = false;

  static Ablation parse(const std::vector<std::string>& flags) {
    Ablation a;
    for (const auto& f : flags) {
      if (f == "drop_text") a.drop_text = true;
      else if (f == "drop_audio") a.drop_audio = true;
      else if (f == "drop_visual") a.drop_visual = true;
      else if (f == "drop_expert_1") a.drop_expert[0] = true;
      else if (f == "drop_expert_2") a.drop_expert[1] = true;
      else if (f == "drop_expert_3") a.drop_expert[2] = true;
      else if (f == "no_lora") a.no_lora = true;
      else throw ConfigError("unknown ablation flag: " + f);
    }
    a.validate();
    return a;
  }

  std::vector<std::string> flags() const {
    std::vector<std::string> out;
    if (drop_text) out.emplace_back("drop_text");
    if (drop_audio) out.emplace_back("drop_audio");
    if (drop_visual) out.emplace_back("drop_visual");
    for (std::size_t k = 0; k < kNumExperts; ++k)
      if (drop_expert[k]) out.push_back("drop_expert_" + std::to_string(k + 1));
    if (no_lora) out.emplace_back("no_lora");
    return out;
  }

  std::string name() const {
    const auto f = flags();
    if (f.empty()) return "full";
    std::string s;
    for (std::size_t i = 0; i < f.size(); ++i) s += (i ? "+" : "") + f[i];
    return s;
  }

  bool empty() const { return flags().empty(); }

  void validate() const {
    if (drop_text && drop_audio && drop_visual) {
      throw ConfigError("ablation '" + name() + "' drops all three modalities; at least one must remain");
    }
    if (drop_expert[0] && drop_expert[1] && drop_expert[2]) {
      throw ConfigError("ablation '" + name() + "' drops every expert; at least one must remain");
    }
  }

  std::array<bool, kNumExperts> active_experts() const {
    return {!drop_expert[0], !drop_expert[1], !drop_expert[2]};
  }
};

// Everything computed for one utterance up to the wrapped LM input.
struct ForwardPass {
  ModalityEmbeddings embeddings;
  FusedRepresentation fused;
  EnhancedRepresentation enhanced;
  Var pseudo;
  WrappedInput wrapped;
};

// Encoders -> cross-modal fusion -> expert enhancer -> pseudo tokens ->
// LoRA-adapted frozen LM.
class EgmfModel {
 public:
  EgmfModel(const ModelConfig& cfg, ToyLM lm, const LoraConfig& lora_cfg, Vocabulary vocab, TaskPrompt prompt, Rng& rng)
      : cfg_(cfg), lm_(std::move(lm)), vocab_(std::move(vocab)), prompt_(std::move(prompt)) {
    cfg_.validate();
    if (vocab_.size() != lm_.config().vocab_size) {
      throw ConfigError("vocabulary has " + std::to_string(vocab_.size()) + " tokens but lm.vocab_size is " +
                        std::to_string(lm_.config().vocab_size));
    }
    lm_.freeze();
    audio_ = AudioVisualEncoder(store_, "encoder.audio", cfg.d_a, cfg.d_av, rng);
    visual_ = AudioVisualEncoder(store_, "encoder.visual", cfg.d_v, cfg.d_av, rng);
    FusionConfig fc;
    fc.d_text = lm_.config().d_emb;
    fc.d_av = cfg.d_av;
    fc.d_h = cfg.d_h;
    fc.n_heads = cfg.n_heads;
    fusion_ = FusionBlock(store_, "fusion", fc, rng);
    enhancer_ = Enhancer(store_, "enhancer", cfg.d_h, cfg.experts, rng);
    pseudo_proj_ = Linear(store_, "pseudo.proj", cfg.d_h, lm_.config().d_emb, rng);
    lora_ = lm_.make_lora(lora_cfg, rng);
  }

  EgmfModel(EgmfModel&&) noexcept = default;

  const ModelConfig& config() const { return cfg_; }
  Task task() const { return prompt_.task; }
  const TaskPrompt& prompt() const { return prompt_; }
  const Vocabulary& vocab() const { return vocab_; }
  ToyLM& lm() { return lm_; }
  const ToyLM& lm() const { return lm_; }
  LoraSet& lora() { return lora_; }
  const LoraSet& lora() const { return lora_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }
  const FusionBlock& fusion() const { return fusion_; }
  const Enhancer& enhancer() const { return enhancer_; }
  const AudioVisualEncoder& audio_encoder() const { return audio_; }
  const AudioVisualEncoder& visual_encoder() const { return visual_; }
  const Linear& pseudo_projection() const { return pseudo_proj_; }

  const Ablation& ablation() const { return ablation_; }
  void set_ablation(const Ablation& a) {
    a.validate();
    ablation_ = a;
    lora_.store().set_frozen(a.no_lora);
  }

  // Fusion-side parameters, then the LM, then the adapters.
  std::vector<Parameter*> parameters() const {
    std::vector<Parameter*> out = store_.all();
    for (Parameter* p : lm_.store().all()) out.push_back(p);
    for (Parameter* p : lora_.store().all()) out.push_back(p);
    return out;
  }

  void zero_grad() {
    for (Parameter* p : parameters()) p->zero_grad();
  }

  ModalityEmbeddings encode(Tape& t, const UtteranceFeatures& u) const {
    ModalityEmbeddings e;
    e.text = ablation_.drop_text ? t.constant(Tensor({u.text.size(), lm_.config().d_emb}))
                                 : embed_text(t, lm_.embedding(), u.text);
    e.audio = ablation_.drop_audio ? t.constant(Tensor({1, cfg_.d_av})) : audio_.forward(t, u.audio);
    e.visual = ablation_.drop_visual ? t.constant(Tensor({1, cfg_.d_av})) : visual_.forward(t, u.visual);
    return e;
  }

  ForwardPass forward(Tape& t, const UtteranceFeatures& u, const EnhanceOptions* rig = nullptr) const {
    if (u.text.empty() || u.audio.empty() || u.visual.empty()) {
      throw DimensionError("utterance needs at least one text token, audio row and visual row");
    }
    ForwardPass fp;
    fp.embeddings = encode(t, u);
    fp.fused = fusion_.forward(t, fp.embeddings);
    EnhanceOptions opt = rig ? *rig : EnhanceOptions{};
    opt.active = ablation_.active_experts();
    fp.enhanced = enhancer_.enhance(t, fp.fused.fused, opt);
    fp.pseudo = make_pseudo_tokens(t, pseudo_proj_, fp.enhanced.enhanced, lm_.config().n_tokens);
    fp.wrapped = wrap_input(t, lm_, fp.pseudo, prompt_);
    return fp;
  }

  const LoraSet* active_lora() const { return ablation_.no_lora ? nullptr : &lora_; }

  Var final_logits(Tape& t, const ForwardPass& fp) const {
    return lm_.final_logits(t, fp.wrapped.embeddings, active_lora());
  }

  // Teacher-forced logits for a target token sequence appended after the
  // wrapped input: row i predicts targets[i].
  Var continuation_logits(Tape& t, const ForwardPass& fp, std::span<const TokenId> targets) const {
    const std::size_t w = fp.wrapped.length();
    Var seq = fp.wrapped.embeddings;
    if (targets.size() > 1) seq = concat_rows({seq, lm_.embed(t, targets.first(targets.size() - 1))});
    Var h = lm_.hidden_states(t, seq, active_lora());
    return lm_.logits_from_hidden(t, slice_rows(h, w - 1, targets.size()));
  }

  std::size_t predict_label(const UtteranceFeatures& u) const {
    Tape t(false);
    ForwardPass fp = forward(t, u);
    return egmf::predict_label(final_logits(t, fp).value(), prompt_.label_tokens);
  }

  ScoreDecode predict_score(const UtteranceFeatures& u, ScoreStats* stats = nullptr) const {
    Tensor wrapped;
    {
      Tape t(false);
      wrapped = forward(t, u).wrapped.embeddings.value().clone_values();
    }
    auto next = [&](std::span<const TokenId> generated) {
      Tape t(false);
      Var seq = t.constant(wrapped.clone_values());
      if (!generated.empty()) seq = concat_rows({seq, lm_.embed(t, generated)});
      return lm_.final_logits(t, seq, active_lora()).value().clone_values();
    };
    return decode_score(next, vocab_, prompt_.score_lo, prompt_.score_hi, stats);
  }

 private:
  ModelConfig cfg_;
  ToyLM lm_;
  Vocabulary vocab_;
  TaskPrompt prompt_;
  ParameterStore store_;
  AudioVisualEncoder audio_, visual_;
  FusionBlock fusion_;
  Enhancer enhancer_;
  Linear pseudo_proj_;
  LoraSet lora_;
  Ablation ablation_;
};

}  // namespace egmf
