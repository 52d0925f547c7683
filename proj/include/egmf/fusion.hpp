// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "egmf/attention.hpp"
#include "egmf/autograd.hpp"
#include "egmf/encoders.hpp"
#include "egmf/errors.hpp"
#include "egmf/nn.hpp"
#include "egmf/ops.hpp"

namespace egmf {

struct FusionConfig {
  std::size_t d_text = 64;  // LM embedding width
  std::size_t d_av = 64;
  std::size_t d_h = 64;
  std::size_t n_heads = 4;
  std::size_t ffn_mult = 4;
};

struct ProjectedStreams {
  Var text;          // L_t x d_h
  Var audio;         // 1 x d_h
  Var visual;        // 1 x d_h
  Var audio_visual;  // 2 x d_h, rows [audio; visual]
};

struct FusedRepresentation {
  Var fused;                           // 1 x d_h
  std::vector<Tensor> cross_weights;   // per head, L_t x 2
  std::vector<Tensor> self_weights;    // per head, L_t x L_t
};

// Text-queries-audio/visual cross attention, then self attention, then a
// position-wise FFN; each sub-block is residual + post-LayerNorm. The result
// is mean pooled over text positions.
class FusionBlock {
 public:
  FusionBlock() = default;
  FusionBlock(ParameterStore& store, const std::string& name, const FusionConfig& cfg, Rng& rng) : cfg_(cfg) {
    proj_text_ = Linear(store, name + ".proj_t", cfg.d_text, cfg.d_h, rng);
    proj_audio_ = Linear(store, name + ".proj_a", cfg.d_av, cfg.d_h, rng);
    proj_visual_ = Linear(store, name + ".proj_v", cfg.d_av, cfg.d_h, rng);
    cross_ = MultiHeadAttention(store, name + ".cross_attn", cfg.d_h, cfg.n_heads, rng);
    cross_norm_ = LayerNorm(store, name + ".cross_norm", cfg.d_h);
    self_ = MultiHeadAttention(store, name + ".self_attn", cfg.d_h, cfg.n_heads, rng);
    self_norm_ = LayerNorm(store, name + ".self_norm", cfg.d_h);
    ffn_up_ = Linear(store, name + ".ffn.up", cfg.d_h, cfg.ffn_mult * cfg.d_h, rng);
    ffn_down_ = Linear(store, name + ".ffn.down", cfg.ffn_mult * cfg.d_h, cfg.d_h, rng);
    ffn_norm_ = LayerNorm(store, name + ".ffn_norm", cfg.d_h);
  }

  const FusionConfig& config() const { return cfg_; }

  ProjectedStreams project(Tape& t, const ModalityEmbeddings& emb) const {
    ProjectedStreams s;
    s.text = proj_text_(t, emb.text);
    s.audio = proj_audio_(t, emb.audio);
    s.visual = proj_visual_(t, emb.visual);
    s.audio_visual = concat_rows({s.audio, s.visual});
    return s;
  }

  Var cross_attention(Tape& t, Var text, Var audio_visual, std::vector<Tensor>* weights = nullptr) const {
    AttentionResult r = cross_.forward(t, text, audio_visual);
    if (weights) *weights = std::move(r.weights);
    return cross_norm_(t, add(r.out, text));
  }

  Var self_attention(Tape& t, Var z_cross, std::vector<Tensor>* weights = nullptr) const {
    AttentionResult r = self_.forward(t, z_cross, z_cross);
    if (weights) *weights = std::move(r.weights);
    return self_norm_(t, add(r.out, z_cross));
  }

  Var ffn_pool(Tape& t, Var z_self) const {
    Var h = ffn_down_(t, activation(ffn_up_(t, z_self), Activation::GELU));
    return mean_rows(ffn_norm_(t, add(h, z_self)));
  }

  FusedRepresentation forward(Tape& t, const ModalityEmbeddings& emb) const {
    FusedRepresentation out;
    ProjectedStreams s = project(t, emb);
    Var z_cross = cross_attention(t, s.text, s.audio_visual, &out.cross_weights);
    Var z_self = self_attention(t, z_cross, &out.self_weights);
    out.fused = ffn_pool(t, z_self);
    if (out.fused.cols() != cfg_.d_h) throw DimensionError("fusion: output width does not match d_h");
    return out;
  }

  const MultiHeadAttention& cross_attention_layer() const { return cross_; }
  const MultiHeadAttention& self_attention_layer() const { return self_; }

 private:
  FusionConfig cfg_;
  Linear proj_text_, proj_audio_, proj_visual_;
  MultiHeadAttention cross_;
  LayerNorm cross_norm_;
  MultiHeadAttention self_;
  LayerNorm self_norm_;
  Linear ffn_up_, ffn_down_;
  LayerNorm ffn_norm_;
};

}  // namespace egmf
