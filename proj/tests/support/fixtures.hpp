// SPDX-License-Identifier: Apache-2.0
//
// Small models and utterances shared by the test binaries.
#pragma once

#include <cstddef>
#include <vector>

#include "egmf/egmf.hpp"
#include "support/oracles.hpp"

namespace fixture {

inline egmf::ToyLmConfig tiny_lm_config() {
  egmf::ToyLmConfig c;
  c.vocab_size = 64;
  c.d_emb = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.max_seq_len = 32;
  c.n_tokens = 4;
  c.ffn_mult = 2;
  return c;
}

inline egmf::ModelConfig tiny_model_config() {
  egmf::ModelConfig c;
  c.d_a = 4;
  c.d_v = 4;
  c.d_av = 8;
  c.d_h = 16;
  c.n_heads = 2;
  return c;
}

inline egmf::ToyLM tiny_lm(std::uint64_t seed) {
  egmf::Rng r(seed);
  return egmf::ToyLM(tiny_lm_config(), r);
}

inline egmf::EgmfModel tiny_model(std::uint64_t seed, egmf::Task task = egmf::Task::Classification,
                                  std::size_t n_classes = 7, double lo = -3.0, double hi = 3.0) {
  egmf::Rng r(seed);
  egmf::ToyLM lm(tiny_lm_config(), r);
  egmf::Vocabulary vocab = egmf::Vocabulary::standard(64);
  egmf::TaskPrompt prompt = egmf::TaskPrompt::build(egmf::PromptTemplate::standard(), vocab, task, n_classes, lo, hi);
  return egmf::EgmfModel(tiny_model_config(), std::move(lm), egmf::LoraConfig{}, std::move(vocab), std::move(prompt), r);
}

inline egmf::UtteranceFeatures utterance(egmf::Rng& rng, std::size_t n_text, egmf::Target target = std::size_t{0}) {
  const egmf::Vocabulary vocab = egmf::Vocabulary::standard(64);
  const auto words = vocab.word_tokens();
  egmf::UtteranceFeatures u;
  for (std::size_t i = 0; i < n_text; ++i) u.text.push_back(words[rng.below(words.size())]);
  u.audio = oracle::random_tensor(rng, {3, 4});
  u.visual = oracle::random_tensor(rng, {2, 4});
  u.target = target;
  return u;
}

// Gives every adapter a random nonzero B so LoRA actually changes the output.
inline void randomize_lora(egmf::LoraSet& set, std::uint64_t seed, double scale = 0.2) {
  egmf::Rng r(seed);
  for (const auto& ad : set.adapters()) ad.b->tensor = oracle::random_tensor(r, ad.b->tensor.shape(), scale);
}

}  // namespace fixture
