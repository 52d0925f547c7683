// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "egmf/autograd.hpp"
#include "egmf/ops.hpp"
#include "egmf/rng.hpp"
#include "egmf/tensor.hpp"

namespace egmf {

struct LoraConfig {
  std::size_t rank = 8;
  double alpha = 16.0;
};

// Low-rank update for a frozen weight W [out x in]: the adapted layer uses
// W + (alpha / rank) * B A with A [rank x in] and B [out x rank].
struct LoraAdapter {
  std::string target;
  Parameter* a = nullptr;
  Parameter* b = nullptr;
  std::size_t rank = 0;
  double alpha = 0.0;

  double scale() const { return alpha / static_cast<double>(rank); }

  // (alpha / rank) * x A^T B^T, the term added to x W^T.
  Var delta(Tape& t, Var x) const { return egmf::scale(linear(linear(x, t.parameter(*a)), t.parameter(*b)), scale()); }
};

// W + scale * B A, accumulated in the same order as matmul.
inline Tensor merged_weight(const Tensor& w, const Tensor& a, const Tensor& b, double scale) {
  Tensor ba = matmul_values(b, a);
  if (ba.shape() != w.shape()) {
    throw DimensionError("merged_weight: B*A " + shape_string(ba.shape()) + " does not match W " +
                         shape_string(w.shape()));
  }
  Tensor out = w.clone_values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += scale * ba[i];
  return out;
}

// The trainable adapters of one model, keyed by the weight they adapt.
class LoraSet {
 public:
  LoraSet() = default;
  explicit LoraSet(LoraConfig config) : config_(config) {}
  LoraSet(LoraSet&&) noexcept = default;
  LoraSet& operator=(LoraSet&&) noexcept = default;

  const LoraConfig& config() const { return config_; }

  // B starts at zero so the adapted forward equals the frozen one.
  const LoraAdapter& add(const std::string& target, std::size_t out, std::size_t in, Rng& rng) {
    if (config_.rank == 0) throw ConfigError("LoRA rank must be positive");
    LoraAdapter ad;
    ad.target = target;
    ad.rank = config_.rank;
    ad.alpha = config_.alpha;
    ad.a = &store_.add("lora." + target + ".A", init_parameter({config_.rank, in}, InitScheme::XavierUniform, rng));
    ad.b = &store_.add("lora." + target + ".B", Tensor({out, config_.rank}));
    adapters_.push_back(ad);
    return adapters_.back();
  }

  const LoraAdapter* find(std::string_view target) const {
    for (const auto& ad : adapters_) {
      if (ad.target == target) return &ad;
    }
    return nullptr;
  }

  const std::vector<LoraAdapter>& adapters() const { return adapters_; }
  bool empty() const { return adapters_.empty(); }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }

 private:
  LoraConfig config_;
  ParameterStore store_;
  std::vector<LoraAdapter> adapters_;
};

}  // namespace egmf
