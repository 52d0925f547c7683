// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "egmf/autograd.hpp"
#include "egmf/errors.hpp"
#include "egmf/nn.hpp"
#include "egmf/ops.hpp"

namespace egmf {

using TokenId = std::size_t;

// Emotion label index for classification, sentiment score for regression.
using Target = std::variant<std::size_t, double>;

struct UtteranceFeatures {
  std::vector<TokenId> text;
  Tensor audio;   // L_a x d_a
  Tensor visual;  // L_v x d_v
  Target target = std::size_t{0};

  bool has_label() const { return std::holds_alternative<std::size_t>(target); }
  std::size_t label() const { return std::get<std::size_t>(target); }
  double score() const { return std::get<double>(target); }
};

struct ModalityEmbeddings {
  Var text;    // L_t x d_emb
  Var audio;   // 1 x d_av
  Var visual;  // 1 x d_av
};

// Temporal mean pooling followed by a two-layer GELU MLP, d_in -> d_av -> d_av.
class AudioVisualEncoder {
 public:
  AudioVisualEncoder() = default;
  AudioVisualEncoder(ParameterStore& store, const std::string& name, std::size_t d_in, std::size_t d_av, Rng& rng)
      : name_(name), d_in_(d_in), d_av_(d_av) {
    hidden_ = Linear(store, name + ".fc1", d_in, d_av, rng);
    out_ = Linear(store, name + ".fc2", d_av, d_av, rng);
  }

  Var forward(Tape& t, Var seq) const {
    if (seq.cols() != d_in_) {
      throw ConfigError(name_ + ": feature width " + std::to_string(seq.cols()) + " does not match configured input dim " +
                        std::to_string(d_in_));
    }
    Var pooled = mean_rows(seq);
    return mlp(t, pooled);
  }

  Var forward(Tape& t, const Tensor& seq) const { return forward(t, t.constant(seq.clone_values())); }

  // The MLP alone, applied to an already pooled row.
  Var mlp(Tape& t, Var row) const { return out_(t, activation(hidden_(t, row), Activation::GELU)); }

  std::size_t input_dim() const { return d_in_; }
  std::size_t output_dim() const { return d_av_; }

 private:
  std::string name_;
  std::size_t d_in_ = 0;
  std::size_t d_av_ = 0;
  Linear hidden_, out_;
};

// Rows of the language model's embedding table for the given tokens.
inline Var embed_text(Tape& t, Parameter& embedding_table, std::span<const TokenId> ids) {
  if (ids.empty()) throw DimensionError("embed_text: empty token sequence");
  return gather_rows(t.parameter(embedding_table), ids);
}

}  // namespace egmf
