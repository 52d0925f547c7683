// SPDX-License-Identifier: Apache-2.0
//
// Independent reference implementations used by the tests. Nothing here
// calls into the code under test except to read parameter values.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "egmf/egmf.hpp"

namespace oracle {

using egmf::Tensor;

inline Tensor random_tensor(egmf::Rng& rng, egmf::Shape shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

// Naive triple loop, k innermost and ascending.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  Tensor c({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a.at(i, k) * b.at(k, j);
      c.at(i, j) = s;
    }
  return c;
}

// x W^T + b through explicit loops.
inline Tensor affine(const Tensor& x, const Tensor& w, const Tensor* b) {
  Tensor y({x.rows(), w.rows()});
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t o = 0; o < w.rows(); ++o) {
      double s = 0.0;
      for (std::size_t k = 0; k < x.cols(); ++k) s += x.at(i, k) * w.at(o, k);
      y.at(i, o) = s + (b ? (*b)[o] : 0.0);
    }
  return y;
}

inline Tensor affine(const Tensor& x, const egmf::Linear& l) {
  return affine(x, l.weight().tensor, l.bias() ? &l.bias()->tensor : nullptr);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }
inline double swish(double x) { return x * sigmoid(x); }
inline double mish(double x) { return x * std::tanh(std::log1p(std::exp(x))); }

inline std::vector<double> softmax(std::vector<double> x) {
  long double m = *std::max_element(x.begin(), x.end());
  long double z = 0.0L;
  for (double v : x) z += std::exp(static_cast<long double>(v) - m);
  for (double& v : x) v = static_cast<double>(std::exp(static_cast<long double>(v) - m) / z);
  return x;
}

struct AttentionOracle {
  Tensor out;
  std::vector<Tensor> weights;
};

// Per-head double loop over (query row, key row) with explicit dot
// products; optional causal mask.
inline AttentionOracle attention(const egmf::MultiHeadAttention& mha, const Tensor& query, const Tensor& kv,
                                 bool causal = false) {
  const Tensor q = affine(query, mha.query_proj());
  const Tensor k = affine(kv, mha.key_proj());
  const Tensor v = affine(kv, mha.value_proj());
  const std::size_t H = mha.n_heads(), dk = mha.head_dim(), Lq = query.rows(), Lk = kv.rows();
  Tensor concat({Lq, H * dk});
  AttentionOracle r;
  for (std::size_t h = 0; h < H; ++h) {
    Tensor w({Lq, Lk});
    for (std::size_t i = 0; i < Lq; ++i) {
      std::vector<double> scores;
      const std::size_t limit = causal ? i + 1 : Lk;
      for (std::size_t j = 0; j < limit; ++j) {
        double s = 0.0;
        for (std::size_t d = 0; d < dk; ++d) s += q.at(i, h * dk + d) * k.at(j, h * dk + d);
        scores.push_back(s / std::sqrt(static_cast<double>(dk)));
      }
      const std::vector<double> p = softmax(scores);
      for (std::size_t j = 0; j < limit; ++j) w.at(i, j) = p[j];
      for (std::size_t d = 0; d < dk; ++d) {
        double acc = 0.0;
        for (std::size_t j = 0; j < limit; ++j) acc += p[j] * v.at(j, h * dk + d);
        concat.at(i, h * dk + d) = acc;
      }
    }
    r.weights.push_back(std::move(w));
  }
  r.out = affine(concat, mha.out_proj());
  return r;
}

// Weighted F1 from a confusion matrix with precision and recall computed
// separately.
inline double weighted_f1(const std::vector<std::size_t>& pred, const std::vector<std::size_t>& gold, std::size_t n) {
  std::vector<std::vector<std::size_t>> cm(n, std::vector<std::size_t>(n, 0));
  for (std::size_t i = 0; i < pred.size(); ++i) ++cm[gold[i]][pred[i]];
  double total = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t tp = cm[c][c], col = 0, row = 0;
    for (std::size_t k = 0; k < n; ++k) {
      col += cm[k][c];
      row += cm[c][k];
    }
    const double p = col ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
    const double r = row ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
    const double f1 = (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    total += f1 * static_cast<double>(row);
  }
  return total / static_cast<double>(pred.size());
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  long double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sx += x[i];
    sy += y[i];
  }
  const long double mx = sx / n, my = sy / n;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return static_cast<double>(sxy / std::sqrt(sxx * syy));
}

// ---------------------------------------------------------------------------
// Central finite differences

struct GradCheck {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  std::string worst;
};

// Relative error with a small absolute floor so that entries whose true
// gradient is ~0 do not divide by noise.
inline double rel_err(double a, double b, double floor = 1e-4) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

using LossBuilder = std::function<egmf::Var(egmf::Tape&, const std::vector<egmf::Var>&)>;

// Checks d loss / d inputs and d loss / d params. max_per_tensor > 0 checks
// a random subset of elements per tensor.
inline GradCheck gradcheck(const std::vector<Tensor>& inputs, const LossBuilder& build,
                           const std::vector<egmf::Parameter*>& params = {}, std::size_t max_per_tensor = 0,
                           std::uint64_t seed = 1, double h = 1e-5) {
  for (auto* p : params) p->zero_grad();
  std::vector<std::vector<double>> analytic_in;
  {
    egmf::Tape t;
    std::vector<egmf::Var> leaves;
    for (const auto& x : inputs) leaves.push_back(t.input(x.clone_values()));
    egmf::Var loss = build(t, leaves);
    t.backward(loss);
    for (const auto& l : leaves) {
      const auto* g = t.grad(l);
      analytic_in.push_back(g ? *g : std::vector<double>(l.size(), 0.0));
    }
  }
  std::vector<std::vector<double>> analytic_p;
  for (auto* p : params) {
    analytic_p.push_back(p->tensor.grad ? *p->tensor.grad : std::vector<double>(p->tensor.size(), 0.0));
    p->zero_grad();
  }

  std::vector<Tensor> work;
  for (const auto& x : inputs) work.push_back(x.clone_values());
  auto eval = [&] {
    egmf::Tape t(false);
    std::vector<egmf::Var> leaves;
    for (const auto& x : work) leaves.push_back(t.constant(x.clone_values()));
    return build(t, leaves).value()[0];
  };

  egmf::Rng pick(seed);
  GradCheck r;
  auto check_buffer = [&](std::span<double> values, const std::vector<double>& analytic, const std::string& label) {
    std::vector<std::size_t> idx(values.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (max_per_tensor && idx.size() > max_per_tensor) {
      pick.shuffle(std::span<std::size_t>(idx));
      idx.resize(max_per_tensor);
    }
    for (std::size_t i : idx) {
      const double orig = values[i];
      values[i] = orig + h;
      const double fp = eval();
      values[i] = orig - h;
      const double fm = eval();
      values[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double e = rel_err(analytic[i], numeric);
      ++r.checked;
      if (e > r.max_rel_err) {
        r.max_rel_err = e;
        r.worst = label + "[" + std::to_string(i) + "] analytic=" + std::to_string(analytic[i]) +
                  " numeric=" + std::to_string(numeric);
      }
    }
  };
  for (std::size_t k = 0; k < work.size(); ++k) check_buffer(work[k].data(), analytic_in[k], "input" + std::to_string(k));
  for (std::size_t k = 0; k < params.size(); ++k) check_buffer(params[k]->tensor.data(), analytic_p[k], params[k]->name);
  return r;
}

// sum(out * R) for a fixed random R; turns any output into a scalar with a
// non-degenerate gradient.
inline egmf::Var probe(egmf::Var out, std::uint64_t seed) {
  egmf::Rng rng(seed ^ 0x5eedULL);
  Tensor r = random_tensor(rng, out.shape());
  return egmf::sum(egmf::mul(out, out.tape().constant(std::move(r))));
}

}  // namespace oracle
