// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "egmf/autograd.hpp"
#include "egmf/errors.hpp"
#include "egmf/lora.hpp"
#include "egmf/nn.hpp"
#include "egmf/ops.hpp"

namespace egmf {

struct AttentionAdapters {
  const LoraAdapter* query = nullptr;
  const LoraAdapter* value = nullptr;
};

struct AttentionResult {
  Var out;
  std::vector<Tensor> weights;  // one [L_q x L_kv] matrix per head
};

// Scaled dot-product attention over n_heads equal slices of d_model.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore& store, const std::string& name, std::size_t d_model, std::size_t n_heads, Rng& rng)
      : d_model_(d_model), n_heads_(n_heads) {
    if (n_heads == 0 || d_model % n_heads != 0) {
      throw ConfigError(name + ": d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                        std::to_string(n_heads));
    }
    q_ = Linear(store, name + ".q", d_model, d_model, rng);
    k_ = Linear(store, name + ".k", d_model, d_model, rng);
    v_ = Linear(store, name + ".v", d_model, d_model, rng);
    o_ = Linear(store, name + ".o", d_model, d_model, rng);
  }

  AttentionResult forward(Tape& t, Var query, Var key_value, bool causal = false,
                          const AttentionAdapters& adapters = {}) const {
    if (query.cols() != d_model_ || key_value.cols() != d_model_) {
      throw DimensionError("attention: inputs " + shape_string(query.shape()) + ", " + shape_string(key_value.shape()) +
                           " do not have width " + std::to_string(d_model_));
    }
    if (causal && query.rows() != key_value.rows()) throw DimensionError("attention: causal mask needs square scores");
    Var q = q_(t, query);
    Var k = k_(t, key_value);
    Var v = v_(t, key_value);
    if (adapters.query) q = add(q, adapters.query->delta(t, query));
    if (adapters.value) v = add(v, adapters.value->delta(t, key_value));

    const std::size_t dk = head_dim();
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
    AttentionResult result;
    std::vector<Var> heads;
    heads.reserve(n_heads_);
    for (std::size_t h = 0; h < n_heads_; ++h) {
      Var qh = slice_cols(q, h * dk, dk);
      Var kh = slice_cols(k, h * dk, dk);
      Var vh = slice_cols(v, h * dk, dk);
      Var scores = scale(linear(qh, kh), inv_sqrt);
      Var p = causal ? causal_softmax(scores) : softmax(scores, 1);
      result.weights.push_back(p.value().clone_values());
      heads.push_back(matmul(p, vh));
    }
    result.out = o_(t, concat_cols(heads));
    return result;
  }

  std::size_t d_model() const { return d_model_; }
  std::size_t n_heads() const { return n_heads_; }
  std::size_t head_dim() const { return d_model_ / n_heads_; }

  const Linear& query_proj() const { return q_; }
  const Linear& key_proj() const { return k_; }
  const Linear& value_proj() const { return v_; }
  const Linear& out_proj() const { return o_; }

 private:
  std::size_t d_model_ = 0;
  std::size_t n_heads_ = 0;
  Linear q_, k_, v_, o_;
};

}  // namespace egmf
