// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>

#include "egmf/autograd.hpp"
#include "egmf/ops.hpp"
#include "egmf/rng.hpp"
#include "egmf/tensor.hpp"

namespace egmf {

// Affine map y = x W^T + b with W stored [out x in].
class Linear {
 public:
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         bool with_bias = true)
      : in_(in), out_(out) {
    weight_ = &store.add(name + ".weight", init_parameter({out, in}, InitScheme::XavierUniform, rng));
    if (with_bias) bias_ = &store.add(name + ".bias", Tensor({1, out}));
  }

  Var operator()(Tape& t, Var x) const {
    if (bias_) return linear(x, t.parameter(*weight_), t.parameter(*bias_));
    return linear(x, t.parameter(*weight_));
  }

  Parameter& weight() const { return *weight_; }
  Parameter* bias() const { return bias_; }
  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }

 private:
  Parameter* weight_ = nullptr;
  Parameter* bias_ = nullptr;
  std::size_t in_ = 0;
  std::size_t out_ = 0;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, std::size_t width) {
    gain_ = &store.add(name + ".gain", Tensor({1, width}, 1.0));
    shift_ = &store.add(name + ".shift", Tensor({1, width}));
  }

  Var operator()(Tape& t, Var x) const { return layer_norm(x, t.parameter(*gain_), t.parameter(*shift_)); }

 private:
  Parameter* gain_ = nullptr;
  Parameter* shift_ = nullptr;
};

}  // namespace egmf
