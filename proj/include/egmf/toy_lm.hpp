// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "egmf/attention.hpp"
#include "egmf/autograd.hpp"
#include "egmf/encoders.hpp"
#include "egmf/errors.hpp"
#include "egmf/lora.hpp"
#include "egmf/nn.hpp"
#include "egmf/ops.hpp"
#include "egmf/vocab.hpp"

namespace egmf {

struct ToyLmConfig {
  std::size_t vocab_size = 512;
  std::size_t d_emb = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t max_seq_len = 128;
  std::size_t n_tokens = 4;  // pseudo-token repeat count
  std::size_t ffn_mult = 4;

  void validate() const {
    if (n_heads == 0 || d_emb % n_heads != 0) {
      throw ConfigError("lm.d_emb " + std::to_string(d_emb) + " must be divisible by lm.n_heads " + std::to_string(n_heads));
    }
    if (n_tokens == 0) throw ConfigError("lm.n_tokens must be at least 1");
    if (n_layers == 0) throw ConfigError("lm.n_layers must be at least 1");
    if (max_seq_len == 0) throw ConfigError("lm.max_seq_len must be positive");
  }
};

// Sinusoidal position table, rows 0..length-1.
inline Tensor sinusoidal_positions(std::size_t length, std::size_t width) {
  Tensor pe({length, width});
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < width; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(width));
      pe.at(pos, i) = std::sin(static_cast<double>(pos) * freq);
      if (i + 1 < width) pe.at(pos, i + 1) = std::cos(static_cast<double>(pos) * freq);
    }
  }
  return pe;
}

struct Segments {
  std::size_t prefix = 0;
  std::size_t pseudo = 0;
  std::size_t suffix = 0;
  std::size_t task = 0;

  std::size_t pseudo_begin() const { return prefix; }
  std::size_t total() const { return prefix + pseudo + suffix + task; }
};

// [prefix; pseudo; suffix; task] in embedding space.
struct WrappedInput {
  Var embeddings;
  Segments segments;

  std::size_t length() const { return segments.total(); }
};

// Small decoder-only transformer: sinusoidal positions, Pre-LN blocks with
// causal self attention, final LayerNorm, output head tied to the embedding
// table. LoRA adapters, when given, act on the query and value projections.
class ToyLM {
 public:
  ToyLM(const ToyLmConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    embedding_ = &store_.add("lm.embedding", init_parameter({cfg.vocab_size, cfg.d_emb}, InitScheme::XavierUniform, rng));
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      const std::string p = layer_prefix(l);
      Block b;
      b.ln1 = LayerNorm(store_, p + ".ln1", cfg.d_emb);
      b.attn = MultiHeadAttention(store_, p + ".attn", cfg.d_emb, cfg.n_heads, rng);
      b.ln2 = LayerNorm(store_, p + ".ln2", cfg.d_emb);
      b.up = Linear(store_, p + ".ffn.up", cfg.d_emb, cfg.ffn_mult * cfg.d_emb, rng);
      b.down = Linear(store_, p + ".ffn.down", cfg.ffn_mult * cfg.d_emb, cfg.d_emb, rng);
      blocks_.push_back(std::move(b));
    }
    final_norm_ = LayerNorm(store_, "lm.ln_f", cfg.d_emb);
  }

  ToyLM(ToyLM&&) noexcept = default;
  ToyLM& operator=(ToyLM&&) noexcept = default;

  const ToyLmConfig& config() const { return cfg_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }
  Parameter& embedding() const { return *embedding_; }

  void freeze() { store_.set_frozen(true); }

  static std::string query_target(std::size_t layer) { return layer_prefix(layer) + ".attn.q.weight"; }
  static std::string value_target(std::size_t layer) { return layer_prefix(layer) + ".attn.v.weight"; }

  // Adapters for the query and value projection of every layer.
  LoraSet make_lora(const LoraConfig& lc, Rng& rng) const {
    LoraSet set(lc);
    for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
      set.add(query_target(l), cfg_.d_emb, cfg_.d_emb, rng);
      set.add(value_target(l), cfg_.d_emb, cfg_.d_emb, rng);
    }
    return set;
  }

  Var embed(Tape& t, std::span<const TokenId> ids) const { return embed_text(t, *embedding_, ids); }

  // Final-normalized hidden states, L x d_emb.
  Var hidden_states(Tape& t, Var inputs, const LoraSet* lora = nullptr) const {
    const std::size_t len = inputs.rows();
    if (len == 0 || inputs.cols() != cfg_.d_emb) {
      throw DimensionError("lm: input " + shape_string(inputs.shape()) + " does not have width " + std::to_string(cfg_.d_emb));
    }
    if (len > cfg_.max_seq_len) {
      throw SequenceLengthError("lm: sequence length " + std::to_string(len) + " exceeds max_seq_len " +
                                std::to_string(cfg_.max_seq_len));
    }
    Var x = add(inputs, t.constant(sinusoidal_positions(len, cfg_.d_emb)));
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      const Block& b = blocks_[l];
      AttentionAdapters ad;
      if (lora) {
        ad.query = lora->find(query_target(l));
        ad.value = lora->find(value_target(l));
      }
      Var h = b.ln1(t, x);
      x = add(x, b.attn.forward(t, h, h, /*causal=*/true, ad).out);
      Var f = b.down(t, activation(b.up(t, b.ln2(t, x)), Activation::GELU));
      x = add(x, f);
    }
    return final_norm_(t, x);
  }

  Var logits_from_hidden(Tape& t, Var hidden) const { return linear(hidden, t.parameter(*embedding_)); }

  // Logits for every position, L x vocab_size.
  Var forward(Tape& t, Var inputs, const LoraSet* lora = nullptr) const {
    return logits_from_hidden(t, hidden_states(t, inputs, lora));
  }

  Var forward(Tape& t, const WrappedInput& in, const LoraSet* lora = nullptr) const {
    return forward(t, in.embeddings, lora);
  }

  // Logits of the last position only, 1 x vocab_size.
  Var final_logits(Tape& t, Var inputs, const LoraSet* lora = nullptr) const {
    Var h = hidden_states(t, inputs, lora);
    return logits_from_hidden(t, slice_rows(h, h.rows() - 1, 1));
  }

  // Copy of the weights with no gradient state.
  ToyLM clone() const {
    Rng scratch(0);
    ToyLM out(cfg_, scratch);
    for (Parameter* p : store_.all()) {
      Parameter& q = out.store_.at(p->name);
      q.tensor = p->tensor.clone_values();
      q.tensor.requires_grad = true;
      q.frozen = p->frozen;
    }
    return out;
  }

 private:
  struct Block {
    LayerNorm ln1;
    MultiHeadAttention attn;
    LayerNorm ln2;
    Linear up, down;
  };

  static std::string layer_prefix(std::size_t l) { return "lm.layer" + std::to_string(l); }

  ToyLmConfig cfg_;
  ParameterStore store_;
  Parameter* embedding_ = nullptr;
  std::vector<Block> blocks_;
  LayerNorm final_norm_;
};

// Standalone model whose adapted weights are W + (alpha / r) B A. It is used
// without adapters.
inline ToyLM merge_adapters(const ToyLM& base, const LoraSet& adapters) {
  ToyLM merged = base.clone();
  for (const LoraAdapter& ad : adapters.adapters()) {
    Parameter& w = merged.store().at(ad.target);
    const bool frozen = w.frozen;
    w.tensor = merged_weight(w.tensor, ad.a->tensor, ad.b->tensor, ad.scale());
    w.tensor.requires_grad = true;
    w.frozen = frozen;
  }
  return merged;
}

// n_tokens identical copies of the projected enhanced vector.
inline Var make_pseudo_tokens(Tape& t, const Linear& projection, Var enhanced, std::size_t n_tokens) {
  return repeat_rows(projection(t, enhanced), n_tokens);
}

inline WrappedInput wrap_input(Tape& t, const ToyLM& lm, Var pseudo, const TaskPrompt& prompt) {
  WrappedInput w;
  w.segments = {prompt.prefix.size(), pseudo.rows(), prompt.suffix.size(), prompt.instruction.size()};
  if (w.segments.total() > lm.config().max_seq_len) {
    throw SequenceLengthError("wrapped input of length " + std::to_string(w.segments.total()) + " exceeds max_seq_len " +
                              std::to_string(lm.config().max_seq_len));
  }
  std::vector<Var> parts;
  if (!prompt.prefix.empty()) parts.push_back(lm.embed(t, prompt.prefix));
  parts.push_back(pseudo);
  if (!prompt.suffix.empty()) parts.push_back(lm.embed(t, prompt.suffix));
  if (!prompt.instruction.empty()) parts.push_back(lm.embed(t, prompt.instruction));
  w.embeddings = parts.size() == 1 ? parts.front() : concat_rows(parts);
  return w;
}

// Argmax over the label tokens of a 1 x V logits row; ties go to the lowest
// label index.
inline std::size_t predict_label(const Tensor& final_logits, std::span<const TokenId> label_tokens) {
  if (label_tokens.empty()) throw ConfigError("predict_label: no label tokens");
  const std::size_t last = final_logits.rows() - 1;
  std::size_t best = 0;
  double best_v = final_logits.at(last, label_tokens[0]);
  for (std::size_t k = 1; k < label_tokens.size(); ++k) {
    const double v = final_logits.at(last, label_tokens[k]);
    if (v > best_v) {
      best_v = v;
      best = k;
    }
  }
  return best;
}

struct ScoreDecode {
  std::string text;
  double value = 0.0;
  bool parse_failure = false;
  bool clamped = false;
};

struct ScoreStats {
  std::size_t decoded = 0;
  std::size_t parse_failures = 0;
  std::size_t clamps = 0;

  void record(const ScoreDecode& d) {
    ++decoded;
    parse_failures += d.parse_failure ? 1 : 0;
    clamps += d.clamped ? 1 : 0;
  }
};

// Parses generated text into a score: unparseable -> 0.0 with the failure
// flag, out-of-range -> clamped with the clamp flag.
inline ScoreDecode interpret_score(std::string text, double lo, double hi, ScoreStats* stats = nullptr) {
  ScoreDecode d;
  d.text = std::move(text);
  if (auto v = parse_score(d.text)) {
    d.value = *v;
    if (d.value < lo || d.value > hi) {
      d.value = std::clamp(d.value, lo, hi);
      d.clamped = true;
    }
  } else {
    d.value = 0.0;
    d.parse_failure = true;
  }
  if (stats) stats->record(d);
  return d;
}

inline constexpr std::size_t kMaxScoreTokens = 5;

// Greedy decoding restricted to score characters and <eos>. next_logits
// receives the tokens generated so far and returns logits whose last row
// predicts the next token.
inline ScoreDecode decode_score(const std::function<Tensor(std::span<const TokenId>)>& next_logits,
                                const Vocabulary& vocab, double lo, double hi, ScoreStats* stats = nullptr,
                                std::size_t max_tokens = kMaxScoreTokens) {
  std::vector<TokenId> allowed = vocab.score_tokens();
  allowed.push_back(vocab.eos());
  std::vector<TokenId> generated;
  std::string text;
  for (std::size_t step = 0; step < max_tokens; ++step) {
    const Tensor logits = next_logits(generated);
    const std::size_t last = logits.rows() - 1;
    TokenId best = allowed.front();
    double best_v = logits.at(last, best);
    for (TokenId id : allowed) {
      if (logits.at(last, id) > best_v) {
        best_v = logits.at(last, id);
        best = id;
      }
    }
    if (best == vocab.eos()) break;
    generated.push_back(best);
    text += vocab.token(best);
  }
  return interpret_score(std::move(text), lo, hi, stats);
}

}  // namespace egmf
