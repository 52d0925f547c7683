// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "egmf/egmf.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace egmf;

namespace {

double neg_log_softmax(const std::vector<double>& row, std::size_t k) {
  long double m = *std::max_element(row.begin(), row.end()), z = 0.0L;
  for (double v : row) z += std::exp(static_cast<long double>(v) - m);
  return static_cast<double>(-(static_cast<long double>(row[k]) - m - std::log(z)));
}

double eval_scalar(Var v) { return v.value()[0]; }

}  // namespace

// ---------------------------------------------------------------------------
// Losses

TEST(Loss, ClassificationUniformIsLogV) {
  Tape t(false);
  EXPECT_NEAR(eval_scalar(loss_classification(t.constant(Tensor({1, 512})), 17)), std::log(512.0), 1e-12);
}

TEST(Loss, ClassificationConfidentGoesToZero) {
  Tensor l({1, 512});
  l[17] = 1000.0;
  Tape t(false);
  EXPECT_LT(eval_scalar(loss_classification(t.constant(l), 17)), 1e-300);
}

TEST(Loss, ClassificationMatchesOracleOnLastRow) {
  Rng r(1);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor l = oracle::random_tensor(r, {3, 40}, 3.0);
    const std::size_t gold = r.below(40);
    auto last = l.row_span(2);
    Tape t(false);
    EXPECT_NEAR(eval_scalar(loss_classification(t.constant(l.clone_values()), gold)),
                neg_log_softmax({last.begin(), last.end()}, gold), 1e-12);
  }
}

TEST(Loss, RegressionTargetsAreScoreCharsThenEos) {
  const Vocabulary v = Vocabulary::standard(64);
  const auto ids = regression_targets(v, -1.5, -3.0, 3.0);
  ASSERT_EQ(ids.size(), 5u);
  EXPECT_EQ(v.decode(ids, ""), "-1.5<eos>");
  EXPECT_THROW(regression_targets(v, 3.1, -3.0, 3.0), DataError);
  EXPECT_THROW(regression_targets(v, std::nan(""), -3.0, 3.0), DataError);
}

TEST(Loss, RegressionUniformAndPerfect) {
  const std::vector<TokenId> targets{5, 9, 2};
  Tape t(false);
  EXPECT_NEAR(eval_scalar(loss_regression(t.constant(Tensor({3, 64})), targets)), std::log(64.0), 1e-12);
  Tensor perfect({3, 64});
  for (std::size_t i = 0; i < 3; ++i) perfect.at(i, targets[i]) = 1000.0;
  EXPECT_LT(eval_scalar(loss_regression(t.constant(perfect), targets)), 1e-300);
}

TEST(Loss, RegressionIsMeanOfPerPositionCe) {
  Rng r(2);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor l = oracle::random_tensor(r, {4, 30}, 2.0);
    std::vector<TokenId> targets;
    double want = 0.0;
    for (std::size_t i = 0; i < 4; ++i) {
      targets.push_back(r.below(30));
      auto row = l.row_span(i);
      want += neg_log_softmax({row.begin(), row.end()}, targets.back()) / 4.0;
    }
    Tape t(false);
    EXPECT_NEAR(eval_scalar(loss_regression(t.constant(l), targets)), want, 1e-12);
  }
}

TEST(Loss, SampleLossRejectsMismatchedTargets) {
  EgmfModel cls = fixture::tiny_model(1);
  EgmfModel reg = fixture::tiny_model(1, Task::Regression);
  Rng r(1);
  Tape t(false);
  EXPECT_THROW(sample_loss(cls, t, fixture::utterance(r, 3, 0.5)), DataError);
  EXPECT_THROW(sample_loss(cls, t, fixture::utterance(r, 3, std::size_t{7})), DataError);
  EXPECT_THROW(sample_loss(reg, t, fixture::utterance(r, 3, std::size_t{1})), DataError);
  EXPECT_THROW(sample_loss(reg, t, fixture::utterance(r, 3, 4.0)), DataError);
}

// ---------------------------------------------------------------------------
// Full pipeline gradients

namespace {

std::vector<Parameter*> trainable(const EgmfModel& m) {
  std::vector<Parameter*> out;
  for (Parameter* p : m.parameters())
    if (!p->frozen) out.push_back(p);
  return out;
}

}  // namespace

class PipelineGrad : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(PipelineGrad, ClassificationLoss) {
  const std::uint64_t seed = GetParam();
  EgmfModel m = fixture::tiny_model(seed);
  fixture::randomize_lora(m.lora(), seed);
  Rng r(seed);
  const auto u = fixture::utterance(r, 1 + seed % 4, std::size_t{seed % 7});
  auto g = oracle::gradcheck({}, [&](Tape& t, const std::vector<Var>&) { return sample_loss(m, t, u); }, trainable(m), 2,
                             seed);
  EXPECT_LT(g.max_rel_err, 1e-4) << g.worst;
  EXPECT_GT(g.checked, 100u);
}

TEST_P(PipelineGrad, RegressionLoss) {
  const std::uint64_t seed = GetParam();
  EgmfModel m = fixture::tiny_model(seed, Task::Regression);
  fixture::randomize_lora(m.lora(), seed);
  Rng r(seed);
  const auto u = fixture::utterance(r, 2, std::round(r.uniform(-3.0, 3.0) * 10.0) / 10.0);
  auto g = oracle::gradcheck({}, [&](Tape& t, const std::vector<Var>&) { return sample_loss(m, t, u); }, trainable(m), 2,
                             seed + 1);
  EXPECT_LT(g.max_rel_err, 1e-4) << g.worst;
}

INSTANTIATE_TEST_SUITE_P(Seeds, PipelineGrad, ::testing::Range<std::uint64_t>(0, 20));

// ---------------------------------------------------------------------------
// Adam

TEST(Adam, ZeroGradientLeavesParameter) {
  double p = 0.7, m = 0.0, v = 0.0;
  adam_update(p, 0.0, m, v, 1, {});
  EXPECT_EQ(p, 0.7);
}

TEST(Adam, ScalarHandTrace) {
  const AdamConfig c{0.1, 0.9, 0.999, 1e-8};
  double p = 1.0, m = 0.0, v = 0.0;
  adam_update(p, 2.0, m, v, 1, c);
  // m_hat = g and v_hat = g^2 on the first step, so the move is lr * g / (|g| + eps).
  EXPECT_NEAR(p, 1.0 - 0.1 * 2.0 / (2.0 + 1e-8), 1e-15);
  const double p1 = p;
  adam_update(p, -1.0, m, v, 2, c);
  const double m2 = 0.9 * 0.2 + 0.1 * -1.0;
  const double v2 = 0.999 * 0.004 + 0.001 * 1.0;
  const double m_hat = m2 / (1.0 - 0.81), v_hat = v2 / (1.0 - 0.999 * 0.999);
  EXPECT_NEAR(p, p1 - 0.1 * m_hat / (std::sqrt(v_hat) + 1e-8), 1e-14);
}

TEST(Adam, SkipsFrozenAndGradlessParameters) {
  ParameterStore s;
  Parameter& a = s.add("a", Tensor({1, 2}, 1.0));
  Parameter& b = s.add("b", Tensor({1, 2}, 1.0), true);
  Parameter& c = s.add("c", Tensor({1, 2}, 1.0));
  a.tensor.grad = std::vector<double>{1.0, -1.0};
  b.tensor.grad = std::vector<double>{1.0, -1.0};
  Adam opt(AdamConfig{0.5});
  opt.step(s.all());
  EXPECT_NEAR(a.tensor[0], 0.5, 1e-7);
  EXPECT_NEAR(a.tensor[1], 1.5, 1e-7);
  EXPECT_EQ(b.tensor[0], 1.0);
  EXPECT_EQ(c.tensor[0], 1.0);
}

// ---------------------------------------------------------------------------
// Metrics

TEST(Metrics, PerfectPredictions) {
  const std::vector<std::size_t> x{0, 3, 3, 1, 6};
  EXPECT_EQ(accuracy(x, x), 1.0);
  EXPECT_EQ(weighted_f1(x, x, 7), 1.0);
  const std::vector<double> s{-2.0, 0.4, 1.0, 2.5};
  const SentimentMetrics m = sentiment_metrics(s, s, -3.0, 3.0);
  EXPECT_EQ(m.acc2, 1.0);
  EXPECT_EQ(m.mae, 0.0);
  EXPECT_NEAR(m.pearson, 1.0, 1e-15);
}

TEST(Metrics, HandTracedWeightedF1) {
  const std::vector<std::size_t> golds{0, 0, 1}, preds{0, 1, 1};
  const F1Scores f = f1_scores(preds, golds, 2);
  EXPECT_NEAR(f.per_class[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(f.per_class[1], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(f.weighted, 2.0 / 3.0, 1e-15);
}

TEST(Metrics, SingleClassPredictionsMatchConfusionOracle) {
  std::vector<std::size_t> golds, preds;
  for (std::size_t i = 0; i < 70; ++i) {
    golds.push_back(i % 7);
    preds.push_back(4);
  }
  // Only class 4 scores: P = 1/7, R = 1, F1 = 1/4, weight 1/7.
  EXPECT_NEAR(weighted_f1(preds, golds, 7), 0.25 / 7.0, 1e-15);
  EXPECT_NEAR(weighted_f1(preds, golds, 7), oracle::weighted_f1(preds, golds, 7), 1e-15);
}

TEST(Metrics, HandTracedAcc7AndMae) {
  const std::vector<double> golds{-2.4, 0.6, 3.0}, preds{-2.0, 1.0, 2.2};
  EXPECT_EQ(seven_bin(-2.4), -2);
  EXPECT_EQ(seven_bin(0.6), 1);
  EXPECT_EQ(seven_bin(2.2), 2);
  EXPECT_EQ(seven_bin(2.5), 2);
  EXPECT_EQ(seven_bin(-1.5), -2);
  EXPECT_EQ(seven_bin(-7.0), -3);
  const SentimentMetrics m = sentiment_metrics(preds, golds, -3.0, 3.0);
  ASSERT_TRUE(m.acc7);
  EXPECT_NEAR(*m.acc7, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(m.mae, 1.6 / 3.0, 1e-12);
}

TEST(Metrics, Acc7OnlyForSevenPointRange) {
  const std::vector<double> g{-0.5, 0.5}, p{-0.4, 0.2};
  EXPECT_FALSE(sentiment_metrics(p, g, -1.0, 1.0).acc7);
  MetricReport r = regression_report(p, g, -1.0, 1.0, 0);
  EXPECT_TRUE(r.to_json()["acc7"].is_null());
  EXPECT_FALSE(r.to_json()["mae"].is_null());
}

TEST(Metrics, Acc2ConventionsAroundZero) {
  const std::vector<double> golds{0.0, 0.0, 1.0, -1.0}, preds{0.0, -0.5, 0.4, 0.2};
  const SentimentMetrics m = sentiment_metrics(preds, golds, -3.0, 3.0);
  EXPECT_EQ(m.acc2, 0.5);         // only the two nonzero golds count
  EXPECT_EQ(m.acc2_weak, 0.5);    // zero gold agrees with a zero pred, not with -0.5
}

TEST(Metrics, AntiCorrelationAndZeroVariance) {
  const std::vector<double> g{-1.0, 0.5, 2.0, 0.1};
  std::vector<double> neg;
  for (double v : g) neg.push_back(-v);
  EXPECT_NEAR(pearson(neg, g), -1.0, 1e-15);
  const std::vector<double> flat{0.3, 0.3, 0.3, 0.3};
  EXPECT_EQ(pearson(flat, g), 0.0);
}

TEST(Metrics, PearsonAffineInvariance) {
  Rng r(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> p, g, q;
    const double a = std::exp(r.uniform(-3.0, 3.0)), b = r.uniform(-10.0, 10.0);
    for (int i = 0; i < 20; ++i) {
      p.push_back(r.normal());
      g.push_back(r.normal());
      q.push_back(a * p.back() + b);
    }
    EXPECT_NEAR(pearson(q, g), pearson(p, g), 1e-12);
  }
}

TEST(Metrics, MaeShiftsByExactlyC) {
  Rng r(4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> g, p, shifted;
    const double c = r.uniform(0.0, 2.0);
    for (int i = 0; i < 15; ++i) {
      g.push_back(r.uniform(-3.0, 3.0));
      p.push_back(g.back() + r.uniform(0.0, 1.0));
      shifted.push_back(p.back() + c);
    }
    EXPECT_NEAR(mean_absolute_error(shifted, g) - mean_absolute_error(p, g), c, 1e-12);
  }
}

TEST(Metrics, ContractErrors) {
  const std::vector<std::size_t> a{1, 2}, b{1};
  EXPECT_THROW(accuracy(a, b), DimensionError);
  EXPECT_THROW(weighted_f1(std::vector<std::size_t>{}, std::vector<std::size_t>{}, 3), DimensionError);
  EXPECT_THROW(mean_absolute_error(std::vector<double>{}, std::vector<double>{}), DimensionError);
}

TEST(Metrics, RandomSetsAgreeWithOracles) {
  Rng r(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + r.below(60), k = 2 + r.below(7);
    std::vector<std::size_t> pl, gl;
    std::vector<double> ps, gs;
    for (std::size_t i = 0; i < n; ++i) {
      pl.push_back(r.below(k));
      gl.push_back(r.below(k));
      gs.push_back(std::round(r.uniform(-3.0, 3.0) * 10.0) / 10.0);
      ps.push_back(r.uniform(-3.5, 3.5));
    }
    EXPECT_NEAR(weighted_f1(pl, gl, k), oracle::weighted_f1(pl, gl, k), 1e-12);
    std::size_t hits = 0;
    long double abs_sum = 0.0L;
    std::size_t nz = 0, hit2 = 0, hit7 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      hits += pl[i] == gl[i];
      abs_sum += std::abs(static_cast<long double>(ps[i]) - gs[i]);
      if (gs[i] != 0.0) {
        ++nz;
        hit2 += (ps[i] > 0) == (gs[i] > 0);
      }
      auto bin = [](double v) {
        v = std::min(3.0, std::max(-3.0, v));
        const double f = std::floor(v), frac = v - f;
        if (frac != 0.5) return frac < 0.5 ? f : f + 1.0;
        return std::fmod(f, 2.0) == 0.0 ? f : f + 1.0;
      };
      hit7 += bin(ps[i]) == bin(gs[i]);
    }
    EXPECT_EQ(accuracy(pl, gl), static_cast<double>(hits) / n);
    const SentimentMetrics m = sentiment_metrics(ps, gs, -3.0, 3.0);
    EXPECT_NEAR(m.mae, static_cast<double>(abs_sum / n), 1e-12);
    EXPECT_EQ(m.acc2, nz ? static_cast<double>(hit2) / nz : 0.0);
    EXPECT_EQ(*m.acc7, static_cast<double>(hit7) / n);
    if (n >= 2) {
      EXPECT_NEAR(m.pearson, oracle::pearson(ps, gs), 1e-12);
    }
  }
}

TEST(Metrics, ReportScalarsAndTable) {
  const std::vector<std::size_t> p{0, 1, 1}, g{0, 0, 1};
  MetricReport c = classification_report(p, g, 2);
  auto s = c.scalars();
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].first, "accuracy");
  EXPECT_EQ(s[1].first, "weighted_f1");
  EXPECT_NE(c.to_table().find("weighted_f1"), std::string::npos);
  EXPECT_TRUE(c.to_json()["mae"].is_null());

  MetricReport r = regression_report(std::vector<double>{0.0, 1.0}, std::vector<double>{0.5, 1.0}, -3.0, 3.0, 1);
  EXPECT_EQ(r.parse_failure_rate, 0.5);
  EXPECT_EQ(r.scalars().back().first, "parse_failure_rate");
}

// ---------------------------------------------------------------------------
// Training loop

namespace {

std::vector<UtteranceFeatures> toy_set(std::uint64_t seed, std::size_t n, Task task = Task::Classification) {
  Rng r(seed);
  std::vector<UtteranceFeatures> out;
  for (std::size_t i = 0; i < n; ++i) {
    Target target = task == Task::Classification ? Target{std::size_t{i % 3}}
                                                 : Target{std::round(r.uniform(-3.0, 3.0) * 10.0) / 10.0};
    out.push_back(fixture::utterance(r, 3, target));
  }
  return out;
}

TrainConfig quick(std::size_t steps, Task task = Task::Classification) {
  TrainConfig c;
  c.lr = 5e-3;
  c.batch_size = 4;
  c.max_epochs = 100;
  c.max_steps = steps;
  c.seed = 7;
  c.task = task;
  return c;
}

bool same_parameters(const EgmfModel& a, const EgmfModel& b) {
  const auto pa = a.parameters(), pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (!bit_identical(pa[i]->tensor, pb[i]->tensor)) return false;
  return true;
}

}  // namespace

TEST(Train, LossDecreases) {
  EgmfModel m = fixture::tiny_model(1, Task::Classification, 3);
  const TrainLog log = train(m, toy_set(1, 12), quick(30));
  EXPECT_EQ(log.steps, 30u);
  const double first = std::accumulate(log.step_loss.begin(), log.step_loss.begin() + 3, 0.0);
  const double last = std::accumulate(log.step_loss.end() - 3, log.step_loss.end(), 0.0);
  EXPECT_LT(last, first);
}

TEST(Train, RegressionLossDecreases) {
  EgmfModel m = fixture::tiny_model(2, Task::Regression);
  const TrainLog log = train(m, toy_set(2, 8, Task::Regression), quick(20, Task::Regression));
  EXPECT_LT(log.step_loss.back(), log.step_loss.front());
}

TEST(Train, FrozenLmStaysBitIdentical) {
  EgmfModel m = fixture::tiny_model(3, Task::Classification, 3);
  const ToyLM before = m.lm().clone();
  train(m, toy_set(3, 8), quick(15));
  for (Parameter* p : before.store().all()) EXPECT_TRUE(bit_identical(p->tensor, m.lm().store().at(p->name).tensor));
  bool moved = false;
  for (const auto& ad : m.lora().adapters())
    for (double v : ad.b->tensor.data()) moved |= v != 0.0;
  EXPECT_TRUE(moved);
}

TEST(Train, NoLoraKeepsAdaptersAtZero) {
  EgmfModel m = fixture::tiny_model(4, Task::Classification, 3);
  TrainConfig c = quick(5);
  c.ablation = Ablation::parse({"no_lora"});
  train(m, toy_set(4, 8), c);
  for (const auto& ad : m.lora().adapters())
    for (double v : ad.b->tensor.data()) EXPECT_EQ(v, 0.0);
}

TEST(Train, SameSeedIsBitIdentical) {
  EgmfModel a = fixture::tiny_model(5, Task::Classification, 3);
  EgmfModel b = fixture::tiny_model(5, Task::Classification, 3);
  const auto data = toy_set(5, 10);
  const TrainLog la = train(a, data, quick(8));
  const TrainLog lb = train(b, data, quick(8));
  EXPECT_EQ(la.step_loss, lb.step_loss);
  EXPECT_TRUE(same_parameters(a, b));
}

TEST(Train, Errors) {
  EgmfModel m = fixture::tiny_model(6, Task::Classification, 3);
  EXPECT_THROW(train(m, {}, quick(1)), DataError);
  EXPECT_THROW(train(m, toy_set(6, 2), quick(1, Task::Regression)), ConfigError);
  TrainConfig c = quick(1);
  c.batch_size = 0;
  EXPECT_THROW(train(m, toy_set(6, 2), c), ConfigError);
  EXPECT_THROW(evaluate(m, {}), DataError);
}

TEST(Train, EvaluateReportsRates) {
  EgmfModel m = fixture::tiny_model(7, Task::Classification, 3);
  const MetricReport r = evaluate(m, toy_set(7, 9));
  EXPECT_EQ(r.n_samples, 9u);
  EXPECT_GE(*r.accuracy, 0.0);
  EXPECT_LE(*r.accuracy, 1.0);
  EXPECT_EQ(r.per_class_f1.size(), 3u);
  EgmfModel g = fixture::tiny_model(7, Task::Regression);
  const MetricReport q = evaluate(g, toy_set(7, 4, Task::Regression));
  EXPECT_GE(*q.mae, 0.0);
  EXPECT_GE(q.parse_failure_rate, 0.0);
  EXPECT_LE(q.parse_failure_rate, 1.0);
  EXPECT_GE(*q.pearson, -1.0);
  EXPECT_LE(*q.pearson, 1.0);
}

TEST(Pretrain, LossDecreases) {
  ToyLM lm = fixture::tiny_lm(8);
  const Vocabulary v = Vocabulary::standard(64);
  std::vector<std::vector<TokenId>> corpus;
  for (int i = 0; i < 16; ++i) corpus.push_back(v.encode("<bos> w1 w2 w3 emotion : joy <eos>"));
  PretrainConfig c;
  c.batch_size = 4;
  c.epochs = 12;
  const auto losses = pretrain_lm(lm, corpus, c, 1);
  ASSERT_EQ(losses.size(), 12u);
  EXPECT_LT(losses.back(), 0.5 * losses.front());
  EXPECT_THROW(pretrain_lm(lm, {}, c, 1), DataError);
  EXPECT_THROW(pretrain_lm(lm, {{1}}, c, 1), DataError);
}

// ---------------------------------------------------------------------------
// Ablation harness

TEST(Ablation, StandardArms) {
  const auto arms = standard_arms();
  ASSERT_EQ(arms.size(), 8u);
  EXPECT_EQ(arms[0].name(), "full");
  EXPECT_EQ(arms[7].name(), "no_lora");
}

TEST(Ablation, HarnessRunsFullFirstAndReportsDeltas) {
  const auto train_set = toy_set(9, 6), eval_set = toy_set(10, 6);
  auto factory = [] { return fixture::tiny_model(9, Task::Classification, 3); };
  const auto res = run_ablation(factory, train_set, eval_set, quick(3),
                                {Ablation{}, Ablation::parse({"drop_expert_1"}), Ablation::parse({"drop_audio"})});
  ASSERT_EQ(res.size(), 3u);
  EXPECT_EQ(res[0].arm.name(), "full");
  for (const auto& [k, d] : res[0].delta) EXPECT_EQ(d, 0.0) << k;
  ASSERT_EQ(res[1].mean_alpha.size(), 2u);
  EXPECT_NEAR(res[1].mean_alpha[0] + res[1].mean_alpha[1], 1.0, 1e-12);
  EXPECT_EQ(res[0].mean_alpha.size(), 3u);

  // An empty arm is the full model: same seed, bit-identical result.
  EgmfModel m = factory();
  train(m, train_set, quick(3));
  const MetricReport again = evaluate(m, eval_set);
  EXPECT_EQ(again.scalars(), res[0].report.scalars());

  const std::string csv = ablation_csv(res);
  EXPECT_EQ(csv.rfind("arm,metric,value,delta\n", 0), 0u);
  EXPECT_NE(csv.find("drop_expert_1,weighted_f1,"), std::string::npos);
  EXPECT_EQ(ablation_json(res).size(), 3u);
}

TEST(Ablation, AllModalitiesDroppedIsConfigError) {
  Ablation a;
  a.drop_text = a.drop_audio = a.drop_visual = true;
  auto factory = [] { return fixture::tiny_model(9, Task::Classification, 3); };
  EXPECT_THROW(run_ablation(factory, toy_set(1, 2), toy_set(2, 2), quick(1), {a}), ConfigError);
}
