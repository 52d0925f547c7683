// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "egmf/egmf.hpp"
#include "support/oracles.hpp"

using namespace egmf;

namespace {

struct Rig {
  Rng rng;
  ParameterStore store;
  Enhancer enh;
  std::size_t d_h;

  explicit Rig(std::uint64_t seed, std::size_t d = 16) : rng(seed), d_h(d) {
    enh = Enhancer(store, "enh", d, kDefaultExperts, rng);
  }

  Tensor input(double scale = 1.0) { return oracle::random_tensor(rng, {1, d_h}, scale); }
};

// Bottleneck oracle: affine, activation, affine.
Tensor expert_oracle(const ParameterStore& s, std::size_t k, const Tensor& f, Activation act) {
  const std::string n = "enh.expert" + std::to_string(k);
  Tensor h = oracle::affine(f, s.at(n + ".down.weight").tensor, &s.at(n + ".down.bias").tensor);
  for (double& v : h.data()) {
    switch (act) {
      case Activation::Mish: v = oracle::mish(v); break;
      case Activation::GELU: v = oracle::gelu(v); break;
      case Activation::Swish: v = oracle::swish(v); break;
      default: ADD_FAILURE();
    }
  }
  return oracle::affine(h, s.at(n + ".up.weight").tensor, &s.at(n + ".up.bias").tensor);
}

}  // namespace

TEST(Expert, BottleneckWidths) {
  for (std::size_t d : {8u, 16u, 32u}) {
    Rig rig(1, d);
    EXPECT_EQ(rig.enh.expert(1).bottleneck_dim(), d / 8);
    EXPECT_EQ(rig.enh.expert(2).bottleneck_dim(), d / 4);
    EXPECT_EQ(rig.enh.expert(3).bottleneck_dim(), d / 2);
    EXPECT_EQ(rig.enh.expert(1).config().activation, Activation::Mish);
    EXPECT_EQ(rig.enh.expert(2).config().activation, Activation::GELU);
    EXPECT_EQ(rig.enh.expert(3).config().activation, Activation::Swish);
  }
}

TEST(Expert, MatchesBottleneckOracle) {
  Rig rig(2);
  for (auto& p : rig.store.all()) {
    if (p->name.find(".bias") != std::string::npos) p->tensor = oracle::random_tensor(rig.rng, p->tensor.shape(), 0.1);
  }
  const Tensor f = rig.input();
  const Activation acts[] = {Activation::Mish, Activation::GELU, Activation::Swish};
  for (std::size_t k = 1; k <= 3; ++k) {
    Tape t(false);
    Tensor got = rig.enh.expert_forward(t, k, t.constant(f.clone_values())).value().clone_values();
    EXPECT_LT(max_abs_diff(got, expert_oracle(rig.store, k, f, acts[k - 1])), 1e-12) << "expert " << k;
  }
}

TEST(Expert, IndexOutOfRangeIsConfigError) {
  Rig rig(3);
  Tape t(false);
  EXPECT_THROW(rig.enh.expert_forward(t, 0, t.constant(rig.input())), ConfigError);
  EXPECT_THROW(rig.enh.expert_forward(t, 4, t.constant(rig.input())), ConfigError);
}

TEST(Enhancer, WidthNotDivisibleByEightIsConfigError) {
  Rng r(1);
  ParameterStore s;
  EXPECT_THROW(Enhancer(s, "enh", 12, kDefaultExperts, r), ConfigError);
}

TEST(Enhancer, ZeroInputGivesHalfGates) {
  Rig rig(4);
  Tape t(false);
  EnhancedRepresentation r = rig.enh.enhance(t, t.constant(Tensor({1, 16})));
  for (double w : r.gate.w) EXPECT_EQ(w, 0.5);
  EXPECT_EQ(r.gate.beta, 0.5);
}

TEST(Enhancer, GateRangesAndSimplex) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rig rig(seed);
    Tape t(false);
    EnhancedRepresentation r = rig.enh.enhance(t, t.constant(rig.input(5.0)));
    double sum = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_GT(r.gate.w[k], 0.0);
      EXPECT_LT(r.gate.w[k], 1.0);
      EXPECT_GE(r.gate.alpha[k], 0.0);
      sum += r.gate.alpha[k];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    EXPECT_GT(r.gate.beta, 0.0);
    EXPECT_LT(r.gate.beta, 1.0);
  }
}

TEST(Enhancer, ForcedLogitsGiveSoftmax) {
  Rig rig(5);
  Tape t(false);
  EnhanceOptions o;
  o.forced_logits = std::array<double, 3>{0.0, 0.0, 0.0};
  EnhancedRepresentation r = rig.enh.enhance(t, t.constant(rig.input()), o);
  for (double a : r.gate.alpha) EXPECT_NEAR(a, 1.0 / 3.0, 1e-15);

  o.forced_logits = std::array<double, 3>{std::log(1.0), std::log(2.0), std::log(3.0)};
  r = rig.enh.enhance(t, t.constant(rig.input()), o);
  EXPECT_NEAR(r.gate.alpha[0], 1.0 / 6.0, 1e-15);
  EXPECT_NEAR(r.gate.alpha[1], 2.0 / 6.0, 1e-15);
  EXPECT_NEAR(r.gate.alpha[2], 3.0 / 6.0, 1e-15);

  o.forced_logits = std::array<double, 3>{1000.0, 0.0, -1000.0};
  r = rig.enh.enhance(t, t.constant(rig.input()), o);
  EXPECT_EQ(r.gate.alpha[0], 1.0);
  EXPECT_TRUE(std::isfinite(r.enhanced.value()[0]));
}

TEST(Enhancer, OneHotAlphaSelectsExpert) {
  Rig rig(6);
  const Tensor f = rig.input();
  for (std::size_t k = 0; k < 3; ++k) {
    Tape t(false);
    EnhanceOptions o;
    std::array<double, 3> a{};
    a[k] = 1.0;
    o.forced_alpha = a;
    o.forced_beta = 0.0;
    EnhancedRepresentation r = rig.enh.enhance(t, t.constant(f.clone_values()), o);
    Tensor got = r.enhanced.value().clone_values();
    Tensor want = rig.enh.expert_forward(t, k + 1, t.constant(f.clone_values())).value().clone_values();
    EXPECT_EQ(max_abs_diff(got, want), 0.0);
  }
}

TEST(Enhancer, ZeroAlphaUnitBetaIsIdentity) {
  Rig rig(7);
  const Tensor f = rig.input();
  Tape t(false);
  EnhanceOptions o;
  o.forced_alpha = std::array<double, 3>{0.0, 0.0, 0.0};
  o.forced_beta = 1.0;
  EXPECT_EQ(max_abs_diff(rig.enh.enhance(t, t.constant(f.clone_values()), o).enhanced.value(), f), 0.0);
}

TEST(Enhancer, OutputIsMixturePlusGatedResidual) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rig rig(seed);
    const Tensor f = rig.input();
    Tape t(false);
    EnhancedRepresentation r = rig.enh.enhance(t, t.constant(f.clone_values()));
    for (std::size_t j = 0; j < 16; ++j) {
      double want = r.gate.beta * f[j];
      for (std::size_t k = 0; k < 3; ++k) want += r.gate.alpha[k] * r.expert_outputs[k][j];
      EXPECT_NEAR(r.enhanced.value()[j], want, 1e-12);
    }
  }
}

TEST(Enhancer, WithoutResidualStaysInExpertHull) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rig rig(seed);
    Tape t(false);
    EnhanceOptions o;
    o.forced_beta = 0.0;
    EnhancedRepresentation r = rig.enh.enhance(t, t.constant(rig.input(3.0)), o);
    for (std::size_t j = 0; j < 16; ++j) {
      double lo = 1e300, hi = -1e300;
      for (const Tensor& e : r.expert_outputs) {
        lo = std::min(lo, e[j]);
        hi = std::max(hi, e[j]);
      }
      EXPECT_GE(r.enhanced.value()[j], lo - 1e-12);
      EXPECT_LE(r.enhanced.value()[j], hi + 1e-12);
    }
  }
}

TEST(Enhancer, DroppedExpertRenormalizesRemainingAlpha) {
  Rig rig(8);
  const Tensor f = rig.input(2.0);
  Tape t(false);
  EnhancedRepresentation full = rig.enh.enhance(t, t.constant(f.clone_values()));
  EnhanceOptions o;
  o.active = {true, false, true};
  EnhancedRepresentation part = rig.enh.enhance(t, t.constant(f.clone_values()), o);
  EXPECT_EQ(part.gate.alpha[1], 0.0);
  EXPECT_TRUE(part.expert_outputs[1].empty());
  EXPECT_EQ(part.alpha.cols(), 2u);
  const double norm = full.gate.alpha[0] + full.gate.alpha[2];
  EXPECT_NEAR(part.gate.alpha[0], full.gate.alpha[0] / norm, 1e-12);
  EXPECT_NEAR(part.gate.alpha[2], full.gate.alpha[2] / norm, 1e-12);
}

TEST(Enhancer, DroppingEveryExpertIsConfigError) {
  Rig rig(9);
  Tape t(false);
  EnhanceOptions o;
  o.active = {false, false, false};
  EXPECT_THROW(rig.enh.enhance(t, t.constant(rig.input()), o), ConfigError);
}

TEST(Enhancer, GradientReachesEveryExpertAndGate) {
  Rig rig(10);
  Tape t;
  EnhancedRepresentation r = rig.enh.enhance(t, t.input(rig.input()));
  t.backward(oracle::probe(r.enhanced, 10));
  for (Parameter* p : rig.store.all()) {
    if (p->name.find(".weight") == std::string::npos) continue;
    ASSERT_TRUE(p->tensor.grad) << p->name;
    double norm = 0.0;
    for (double g : *p->tensor.grad) norm += g * g;
    EXPECT_GT(norm, 0.0) << p->name;
  }
}

TEST(Enhancer, GradientCheck) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rig rig(seed);
    for (auto& p : rig.store.all()) {
      if (p->name.find(".bias") != std::string::npos) p->tensor = oracle::random_tensor(rig.rng, p->tensor.shape(), 0.1);
    }
    auto g = oracle::gradcheck(
        {rig.input()}, [&](Tape& t, const std::vector<Var>& in) { return oracle::probe(rig.enh.enhance(t, in[0]).enhanced, seed); },
        rig.store.all(), 8, seed);
    EXPECT_LT(g.max_rel_err, 1e-4) << g.worst;
  }
}

TEST(Enhancer, GradientCheckWithDroppedExpert) {
  Rig rig(11);
  EnhanceOptions o;
  o.active = {true, true, false};
  auto g = oracle::gradcheck(
      {rig.input()}, [&](Tape& t, const std::vector<Var>& in) { return oracle::probe(rig.enh.enhance(t, in[0], o).enhanced, 11); },
      rig.store.all(), 8, 11);
  EXPECT_LT(g.max_rel_err, 1e-4) << g.worst;
}
