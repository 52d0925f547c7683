// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "egmf/errors.hpp"
#include "egmf/vocab.hpp"

namespace egmf {

inline void require_paired(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw DimensionError(std::string(what) + ": predictions and golds differ in length");
  if (a == 0) throw DimensionError(std::string(what) + ": empty input");
}

inline double accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> golds) {
  require_paired(preds.size(), golds.size(), "accuracy");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == golds[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(preds.size());
}

struct F1Scores {
  double weighted = 0.0;
  std::vector<double> per_class;
};

// Per-class F1 averaged with gold-support weights. A class with no gold
// support carries weight 0; F1 is 0 whenever precision + recall is 0.
inline F1Scores f1_scores(std::span<const std::size_t> preds, std::span<const std::size_t> golds, std::size_t n_classes) {
  require_paired(preds.size(), golds.size(), "weighted_f1");
  std::vector<std::size_t> tp(n_classes), pred_count(n_classes), gold_count(n_classes);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] >= n_classes || golds[i] >= n_classes) throw DimensionError("weighted_f1: label out of range");
    ++pred_count[preds[i]];
    ++gold_count[golds[i]];
    if (preds[i] == golds[i]) ++tp[preds[i]];
  }
  F1Scores out;
  out.per_class.assign(n_classes, 0.0);
  const double n = static_cast<double>(preds.size());
  for (std::size_t c = 0; c < n_classes; ++c) {
    // F1 = 2 tp / (|pred_c| + |gold_c|)
    const std::size_t denom = pred_count[c] + gold_count[c];
    out.per_class[c] = denom ? 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom) : 0.0;
    out.weighted += out.per_class[c] * static_cast<double>(gold_count[c]) / n;
  }
  return out;
}

inline double weighted_f1(std::span<const std::size_t> preds, std::span<const std::size_t> golds, std::size_t n_classes) {
  return f1_scores(preds, golds, n_classes).weighted;
}

inline double mean_absolute_error(std::span<const double> preds, std::span<const double> golds) {
  require_paired(preds.size(), golds.size(), "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) s += std::abs(preds[i] - golds[i]);
  return s / static_cast<double>(preds.size());
}

// Sample correlation; 0 when either side has zero variance.
inline double pearson(std::span<const double> x, std::span<const double> y) {
  require_paired(x.size(), y.size(), "pearson");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

struct SentimentMetrics {
  double acc2 = 0.0;       // sign agreement over non-zero golds
  double acc2_weak = 0.0;  // every sample; zero counts as non-negative
  std::optional<double> acc7;
  double mae = 0.0;
  double pearson = 0.0;
};

inline bool is_seven_bin_range(double lo, double hi) { return lo == -3.0 && hi == 3.0; }

// Seven integer bins over [-3, 3]; halves round to even, as numpy's round does.
inline int seven_bin(double v) { return static_cast<int>(std::nearbyint(std::clamp(v, -3.0, 3.0))); }

inline SentimentMetrics sentiment_metrics(std::span<const double> preds, std::span<const double> golds, double lo,
                                          double hi) {
  require_paired(preds.size(), golds.size(), "sentiment_metrics");
  SentimentMetrics m;
  std::size_t nonzero = 0, hit2 = 0, hit_weak = 0, hit7 = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (golds[i] != 0.0) {
      ++nonzero;
      hit2 += (preds[i] > 0.0) == (golds[i] > 0.0) ? 1 : 0;
    }
    hit_weak += (preds[i] >= 0.0) == (golds[i] >= 0.0) ? 1 : 0;
    hit7 += seven_bin(preds[i]) == seven_bin(golds[i]) ? 1 : 0;
  }
  const double n = static_cast<double>(preds.size());
  m.acc2 = nonzero ? static_cast<double>(hit2) / static_cast<double>(nonzero) : 0.0;
  m.acc2_weak = static_cast<double>(hit_weak) / n;
  if (is_seven_bin_range(lo, hi)) m.acc7 = static_cast<double>(hit7) / n;
  m.mae = mean_absolute_error(preds, golds);
  m.pearson = preds.size() >= 2 ? pearson(preds, golds) : 0.0;
  return m;
}

struct MetricReport {
  Task task = Task::Classification;
  std::size_t n_samples = 0;
  std::optional<double> accuracy;
  std::optional<double> weighted_f1;
  std::vector<double> per_class_f1;
  std::optional<double> acc2;
  std::optional<double> acc2_weak;
  std::optional<double> acc7;
  std::optional<double> mae;
  std::optional<double> pearson;
  double parse_failure_rate = 0.0;

  // (name, value) for every metric that applies to the task.
  std::vector<std::pair<std::string, double>> scalars() const {
    std::vector<std::pair<std::string, double>> out;
    auto put = [&](const char* k, const std::optional<double>& v) {
      if (v) out.emplace_back(k, *v);
    };
    put("accuracy", accuracy);
    put("weighted_f1", weighted_f1);
    put("acc2", acc2);
    put("acc2_weak", acc2_weak);
    put("acc7", acc7);
    put("mae", mae);
    put("pearson", pearson);
    if (task == Task::Regression) out.emplace_back("parse_failure_rate", parse_failure_rate);
    return out;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["task"] = std::string(task_name(task));
    j["n_samples"] = n_samples;
    auto put = [&](const char* k, const std::optional<double>& v) { j[k] = v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr); };
    put("accuracy", accuracy);
    put("weighted_f1", weighted_f1);
    j["per_class_f1"] = per_class_f1;
    put("acc2", acc2);
    put("acc2_weak", acc2_weak);
    put("acc7", acc7);
    put("mae", mae);
    put("pearson", pearson);
    j["parse_failure_rate"] = parse_failure_rate;
    return j;
  }

  std::string to_table() const {
    std::ostringstream os;
    os << std::left << std::setw(20) << "metric" << std::right << std::setw(12) << "value" << '\n';
    os << std::left << std::setw(20) << "n_samples" << std::right << std::setw(12) << n_samples << '\n';
    os << std::fixed << std::setprecision(4);
    for (const auto& [k, v] : scalars()) os << std::left << std::setw(20) << k << std::right << std::setw(12) << v << '\n';
    for (std::size_t c = 0; c < per_class_f1.size(); ++c) {
      os << std::left << std::setw(20) << ("f1[" + std::to_string(c) + "]") << std::right << std::setw(12)
         << per_class_f1[c] << '\n';
    }
    return os.str();
  }
};

inline MetricReport classification_report(std::span<const std::size_t> preds, std::span<const std::size_t> golds,
                                          std::size_t n_classes) {
  MetricReport r;
  r.task = Task::Classification;
  r.n_samples = preds.size();
  r.accuracy = accuracy(preds, golds);
  F1Scores f1 = f1_scores(preds, golds, n_classes);
  r.weighted_f1 = f1.weighted;
  r.per_class_f1 = std::move(f1.per_class);
  return r;
}

inline MetricReport regression_report(std::span<const double> preds, std::span<const double> golds, double lo, double hi,
                                      std::size_t parse_failures) {
  MetricReport r;
  r.task = Task::Regression;
  r.n_samples = preds.size();
  SentimentMetrics s = sentiment_metrics(preds, golds, lo, hi);
  r.acc2 = s.acc2;
  r.acc2_weak = s.acc2_weak;
  r.acc7 = s.acc7;
  r.mae = s.mae;
  r.pearson = s.pearson;
  r.parse_failure_rate = static_cast<double>(parse_failures) / static_cast<double>(preds.size());
  return r;
}

}  // namespace egmf
