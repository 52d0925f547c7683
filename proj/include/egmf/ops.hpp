// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "egmf/autograd.hpp"
#include "egmf/errors.hpp"
#include "egmf/tensor.hpp"

// Differentiable operations on Tape values. All reductions run left to right
// in index order so results are bit-reproducible.
namespace egmf {

namespace detail {

inline void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

inline void require_matrix(std::string_view op, const Tensor& a) {
  if (a.rank() > 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul_values(const Tensor& a, const Tensor& b) {
  detail::require_matrix("matmul", a);
  detail::require_matrix("matmul", b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  Tensor c({m, n});
  // i-k-j order: each c[i][j] still receives its products in ascending k.
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = &c[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const double* bp = &b[p * n];
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
  return c;
}

inline Tensor transpose_values(const Tensor& a) {
  detail::require_matrix("transpose", a);
  const std::size_t r = a.rows(), c = a.cols();
  Tensor t({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) t[j * r + i] = a[i * c + j];
  return t;
}

// a [m x k] * b [k x n]
inline Var matmul(Var a, Var b) {
  Tensor out = matmul_values(a.value(), b.value());
  return a.tape().record("matmul", std::move(out), {a, b}, [a, b](Tape& t, std::span<const double> g) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
    if (auto ga = t.grad_buffer(a); !ga.empty()) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * bv[p * n + j];
          ga[i * k + p] += s;
        }
    }
    if (auto gb = t.grad_buffer(b); !gb.empty()) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
    }
  });
}

inline Var transpose(Var a) {
  Tensor out = transpose_values(a.value());
  return a.tape().record("transpose", std::move(out), {a}, [a](Tape& t, std::span<const double> g) {
    auto ga = t.grad_buffer(a);
    if (ga.empty()) return;
    const std::size_t r = t.value(a).rows(), c = t.value(a).cols();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
  });
}

// x [n x in] times weight [out x in] transposed, plus an optional bias row.
inline Var linear(Var x, Var weight, std::optional<Var> bias = std::nullopt) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  detail::require_matrix("linear", xv);
  const std::size_t n = xv.rows(), in = xv.cols(), out = wv.rows();
  if (wv.cols() != in) {
    throw DimensionError("linear: input " + shape_string(xv.shape()) + " does not match weight " +
                         shape_string(wv.shape()));
  }
  if (bias && bias->size() != out) {
    throw DimensionError("linear: bias " + shape_string(bias->shape()) + " does not match weight " +
                         shape_string(wv.shape()));
  }
  Tensor y({n, out});
  const Tensor* bv = bias ? &bias->value() : nullptr;
  for (std::size_t i = 0; i < n; ++i) {
    const double* xi = &xv[i * in];
    for (std::size_t o = 0; o < out; ++o) {
      const double* wo = &wv[o * in];
      double s = 0.0;
      for (std::size_t k = 0; k < in; ++k) s += xi[k] * wo[k];
      y[i * out + o] = bv ? s + (*bv)[o] : s;
    }
  }
  std::vector<Var> inputs{x, weight};
  if (bias) inputs.push_back(*bias);
  return x.tape().record("linear", std::move(y), inputs, [x, weight, bias](Tape& t, std::span<const double> g) {
    const Tensor& xv = t.value(x);
    const Tensor& wv = t.value(weight);
    const std::size_t n = xv.rows(), in = xv.cols(), out = wv.rows();
    if (auto gx = t.grad_buffer(x); !gx.empty()) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < out; ++o) {
          const double gio = g[i * out + o];
          const double* wo = &wv[o * in];
          for (std::size_t k = 0; k < in; ++k) gx[i * in + k] += gio * wo[k];
        }
    }
    if (auto gw = t.grad_buffer(weight); !gw.empty()) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t o = 0; o < out; ++o) {
          const double gio = g[i * out + o];
          const double* xi = &xv[i * in];
          for (std::size_t k = 0; k < in; ++k) gw[o * in + k] += gio * xi[k];
        }
    }
    if (bias) {
      if (auto gb = t.grad_buffer(*bias); !gb.empty()) {
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t o = 0; o < out; ++o) gb[o] += g[i * out + o];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Var add(Var a, Var b) {
  detail::require_same_shape("add", a.value(), b.value());
  Tensor out = a.value().clone_values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return a.tape().record("add", std::move(out), {a, b}, [a, b](Tape& t, std::span<const double> g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value().clone_values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return a.tape().record("sub", std::move(out), {a, b}, [a, b](Tape& t, std::span<const double> g) {
    t.accumulate(a, g);
    if (auto gb = t.grad_buffer(b); !gb.empty())
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
  });
}

// Adds a 1 x c row to every row of a.
inline Var add_row(Var a, Var row) {
  const std::size_t c = a.cols();
  if (row.size() != c) {
    throw DimensionError("add_row: row " + shape_string(row.shape()) + " does not broadcast over " +
                         shape_string(a.shape()));
  }
  Tensor out = a.value().clone_values();
  const std::size_t r = out.rows();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += row.value()[j];
  return a.tape().record("add_row", std::move(out), {a, row}, [a, row, r, c](Tape& t, std::span<const double> g) {
    t.accumulate(a, g);
    if (auto gr = t.grad_buffer(row); !gr.empty())
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gr[j] += g[i * c + j];
  });
}

inline Var mul(Var a, Var b) {
  detail::require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value().clone_values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape().record("mul", std::move(out), {a, b}, [a, b](Tape& t, std::span<const double> g) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    if (auto ga = t.grad_buffer(a); !ga.empty())
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    if (auto gb = t.grad_buffer(b); !gb.empty())
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
  });
}

inline Var scale(Var a, double factor) {
  Tensor out = a.value().clone_values();
  for (double& v : out.data()) v *= factor;
  return a.tape().record("scale", std::move(out), {a}, [a, factor](Tape& t, std::span<const double> g) {
    if (auto ga = t.grad_buffer(a); !ga.empty())
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
  });
}

// Multiplies every element of a by the single value held in s.
inline Var scale_by(Var a, Var s) {
  if (s.size() != 1) throw DimensionError("scale_by: factor must hold one value, got " + shape_string(s.shape()));
  const double k = s.value()[0];
  Tensor out = a.value().clone_values();
  for (double& v : out.data()) v *= k;
  return a.tape().record("scale_by", std::move(out), {a, s}, [a, s](Tape& t, std::span<const double> g) {
    const double k = t.value(s)[0];
    const Tensor& av = t.value(a);
    if (auto ga = t.grad_buffer(a); !ga.empty())
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * k;
    if (auto gs = t.grad_buffer(s); !gs.empty()) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
      gs[0] += acc;
    }
  });
}

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape().record("sum", Tensor({1}, std::vector<double>{s}), {a}, [a](Tape& t, std::span<const double> g) {
    if (auto ga = t.grad_buffer(a); !ga.empty())
      for (double& v : ga) v += g[0];
  });
}

// Mean over rows: [r x c] -> [1 x c].
inline Var mean_rows(Var a) {
  const std::size_t r = a.rows(), c = a.cols();
  Tensor out({1, c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += a.value()[i * c + j];
  for (double& v : out.data()) v /= static_cast<double>(r);
  return a.tape().record("mean_rows", std::move(out), {a}, [a, r, c](Tape& t, std::span<const double> g) {
    if (auto ga = t.grad_buffer(a); !ga.empty()) {
      const double inv = 1.0 / static_cast<double>(r);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j] * inv;
    }
  });
}

// ---------------------------------------------------------------------------
// Activations

enum class Activation { Mish, GELU, Swish, ReLU, Sigmoid, Tanh };

inline std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::Mish: return "mish";
    case Activation::GELU: return "gelu";
    case Activation::Swish: return "swish";
    case Activation::ReLU: return "relu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Tanh: return "tanh";
  }
  return "?";
}

inline Activation parse_activation(std::string_view name) {
  std::string s(name);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  if (s == "mish") return Activation::Mish;
  if (s == "gelu") return Activation::GELU;
  if (s == "swish" || s == "silu") return Activation::Swish;
  if (s == "relu") return Activation::ReLU;
  if (s == "sigmoid") return Activation::Sigmoid;
  if (s == "tanh") return Activation::Tanh;
  throw ConfigError("unknown activation kind: " + std::string(name));
}

namespace detail {

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double normal_cdf(double x) { return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)); }

inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

}  // namespace detail

inline double activate(Activation kind, double x) {
  switch (kind) {
    case Activation::Mish: return x * std::tanh(detail::softplus(x));
    case Activation::GELU: return x * detail::normal_cdf(x);
    case Activation::Swish: return x * detail::sigmoid(x);
    case Activation::ReLU: return x > 0 ? x : 0.0;
    case Activation::Sigmoid: return detail::sigmoid(x);
    case Activation::Tanh: return std::tanh(x);
  }
  return x;
}

inline double activate_derivative(Activation kind, double x) {
  switch (kind) {
    case Activation::Mish: {
      const double tsp = std::tanh(detail::softplus(x));
      return tsp + x * (1.0 - tsp * tsp) * detail::sigmoid(x);
    }
    case Activation::GELU: return detail::normal_cdf(x) + x * detail::normal_pdf(x);
    case Activation::Swish: {
      const double s = detail::sigmoid(x);
      return s + x * s * (1.0 - s);
    }
    case Activation::ReLU: return x > 0 ? 1.0 : 0.0;
    case Activation::Sigmoid: {
      const double s = detail::sigmoid(x);
      return s * (1.0 - s);
    }
    case Activation::Tanh: {
      const double th = std::tanh(x);
      return 1.0 - th * th;
    }
  }
  return 1.0;
}

inline Var activation(Var a, Activation kind) {
  Tensor out = a.value().clone_values();
  for (double& v : out.data()) v = activate(kind, v);
  return a.tape().record(activation_name(kind), std::move(out), {a}, [a, kind](Tape& t, std::span<const double> g) {
    auto ga = t.grad_buffer(a);
    if (ga.empty()) return;
    const Tensor& av = t.value(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * activate_derivative(kind, av[i]);
  });
}

// ---------------------------------------------------------------------------
// Softmax family

inline Tensor softmax_values(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for shape " + shape_string(x.shape()));
  }
  require_finite(x, "softmax");
  const auto& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t n = s[axis];
  Tensor y(s);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double m = x[base];
      for (std::size_t k = 1; k < n; ++k) m = std::max(m, x[base + k * inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const double e = std::exp(x[base + k * inner] - m);
        y[base + k * inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < n; ++k) y[base + k * inner] /= z;
    }
  return y;
}

inline Var softmax(Var x, std::size_t axis) {
  Tensor y = softmax_values(x.value(), axis);
  const std::size_t out_id = x.tape().node_count();
  return x.tape().record("softmax", std::move(y), {x}, [x, axis, out_id](Tape& t, std::span<const double> g) {
    auto gx = t.grad_buffer(x);
    if (gx.empty()) return;
    const Tensor& y = t.value(out_id);
    const auto& s = y.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
    for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
    const std::size_t n = s[axis];
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < n; ++k) dot += g[base + k * inner] * y[base + k * inner];
        for (std::size_t k = 0; k < n; ++k) {
          const std::size_t idx = base + k * inner;
          gx[idx] += y[idx] * (g[idx] - dot);
        }
      }
  });
}

// Row softmax over a square score matrix where row i only sees columns <= i.
// Masked entries are exactly zero.
inline Tensor causal_softmax_values(const Tensor& x) {
  detail::require_matrix("causal_softmax", x);
  const std::size_t r = x.rows(), c = x.cols();
  Tensor y({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t visible = std::min(c, i + 1);
    double m = x[i * c];
    for (std::size_t j = 1; j < visible; ++j) m = std::max(m, x[i * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < visible; ++j) {
      const double e = std::exp(x[i * c + j] - m);
      y[i * c + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < visible; ++j) y[i * c + j] /= z;
  }
  return y;
}

inline Var causal_softmax(Var x) {
  Tensor y = causal_softmax_values(x.value());
  const std::size_t out_id = x.tape().node_count();
  return x.tape().record("causal_softmax", std::move(y), {x}, [x, out_id](Tape& t, std::span<const double> g) {
    auto gx = t.grad_buffer(x);
    if (gx.empty()) return;
    const Tensor& y = t.value(out_id);
    const std::size_t r = y.rows(), c = y.cols();
    for (std::size_t i = 0; i < r; ++i) {
      const std::size_t visible = std::min(c, i + 1);
      double dot = 0.0;
      for (std::size_t j = 0; j < visible; ++j) dot += g[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < visible; ++j) gx[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
    }
  });
}

// Mean token cross-entropy of logits [n x V] against one target id per row.
inline Var cross_entropy(Var logits, std::span<const std::size_t> targets) {
  const Tensor& lv = logits.value();
  const std::size_t n = lv.rows(), v = lv.cols();
  if (targets.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(n) +
                         " rows");
  }
  std::vector<std::size_t> tgt(targets.begin(), targets.end());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (tgt[i] >= v) throw DimensionError("cross_entropy: target id out of range");
    const double* row = &lv[i * v];
    double m = row[0];
    for (std::size_t j = 1; j < v; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - m);
    total += (m + std::log(z)) - row[tgt[i]];
  }
  total /= static_cast<double>(n);
  return logits.tape().record("cross_entropy", Tensor({1}, std::vector<double>{total}), {logits},
                              [logits, tgt](Tape& t, std::span<const double> g) {
                                auto gl = t.grad_buffer(logits);
                                if (gl.empty()) return;
                                const Tensor& lv = t.value(logits);
                                const std::size_t n = lv.rows(), v = lv.cols();
                                const double k = g[0] / static_cast<double>(n);
                                for (std::size_t i = 0; i < n; ++i) {
                                  const double* row = &lv[i * v];
                                  double m = row[0];
                                  for (std::size_t j = 1; j < v; ++j) m = std::max(m, row[j]);
                                  double z = 0.0;
                                  for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - m);
                                  for (std::size_t j = 0; j < v; ++j) {
                                    const double p = std::exp(row[j] - m) / z;
                                    gl[i * v + j] += k * (p - (j == tgt[i] ? 1.0 : 0.0));
                                  }
                                }
                              });
}

// ---------------------------------------------------------------------------
// Normalization

// Per-row layer normalization with learned gain and shift (both 1 x c).
inline Var layer_norm(Var x, Var gain, Var shift, double eps = 1e-5) {
  const Tensor& xv = x.value();
  const std::size_t r = xv.rows(), c = xv.cols();
  if (gain.size() != c || shift.size() != c) {
    throw DimensionError("layer_norm: gain/shift do not match feature width " + std::to_string(c));
  }
  Tensor y({r, c});
  std::vector<double> inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += xv[i * c + j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = xv[i * c + j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      y[i * c + j] = (xv[i * c + j] - mean) * inv_std[i] * gain.value()[j] + shift.value()[j];
    }
  }
  return x.tape().record(
      "layer_norm", std::move(y), {x, gain, shift}, [x, gain, shift, inv_std, r, c](Tape& t, std::span<const double> g) {
        const Tensor& xv = t.value(x);
        const Tensor& gv = t.value(gain);
        auto gx = t.grad_buffer(x);
        auto gg = t.grad_buffer(gain);
        auto gs = t.grad_buffer(shift);
        std::vector<double> xhat(c), dxhat(c);
        for (std::size_t i = 0; i < r; ++i) {
          double mean = 0.0;
          for (std::size_t j = 0; j < c; ++j) mean += xv[i * c + j];
          mean /= static_cast<double>(c);
          double sum_d = 0.0, sum_dx = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            xhat[j] = (xv[i * c + j] - mean) * inv_std[i];
            dxhat[j] = g[i * c + j] * gv[j];
            sum_d += dxhat[j];
            sum_dx += dxhat[j] * xhat[j];
            if (!gg.empty()) gg[j] += g[i * c + j] * xhat[j];
            if (!gs.empty()) gs[j] += g[i * c + j];
          }
          if (gx.empty()) continue;
          const double inv_c = 1.0 / static_cast<double>(c);
          for (std::size_t j = 0; j < c; ++j) {
            gx[i * c + j] += inv_std[i] * (dxhat[j] - sum_d * inv_c - xhat[j] * sum_dx * inv_c);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Structural

inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
  const std::size_t c = parts.front().cols();
  std::size_t r = 0;
  for (const Var& p : parts) {
    if (p.cols() != c) {
      throw DimensionError("concat_rows: width mismatch " + shape_string(parts.front().shape()) + " vs " +
                           shape_string(p.shape()));
    }
    r += p.rows();
  }
  std::vector<double> data;
  data.reserve(r * c);
  for (const Var& p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  std::vector<Var> ins(parts.begin(), parts.end());
  return parts.front().tape().record("concat_rows", Tensor::matrix(r, c, std::move(data)), parts,
                                     [ins](Tape& t, std::span<const double> g) {
                                       std::size_t off = 0;
                                       for (const Var& p : ins) {
                                         const std::size_t n = t.value(p).size();
                                         t.accumulate(p, g.subspan(off, n));
                                         off += n;
                                       }
                                     });
}

inline Var concat_rows(std::initializer_list<Var> parts) {
  return concat_rows(std::span<const Var>(parts.begin(), parts.size()));
}

inline Var slice_rows(Var a, std::size_t start, std::size_t count) {
  const std::size_t c = a.cols();
  if (count == 0 || start + count > a.rows()) {
    throw DimensionError("slice_rows: rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") out of range for " + shape_string(a.shape()));
  }
  const auto src = a.value().data().subspan(start * c, count * c);
  Tensor out = Tensor::matrix(count, c, std::vector<double>(src.begin(), src.end()));
  return a.tape().record("slice_rows", std::move(out), {a}, [a, start, c](Tape& t, std::span<const double> g) {
    if (auto ga = t.grad_buffer(a); !ga.empty())
      for (std::size_t i = 0; i < g.size(); ++i) ga[start * c + i] += g[i];
  });
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  const std::size_t r = parts.front().rows();
  std::size_t c = 0;
  for (const Var& p : parts) {
    if (p.rows() != r) {
      throw DimensionError("concat_cols: row count mismatch " + shape_string(parts.front().shape()) + " vs " +
                           shape_string(p.shape()));
    }
    c += p.cols();
  }
  Tensor out({r, c});
  std::size_t off = 0;
  for (const Var& p : parts) {
    const std::size_t pc = p.cols();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < pc; ++j) out[i * c + off + j] = p.value()[i * pc + j];
    off += pc;
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return parts.front().tape().record("concat_cols", std::move(out), parts, [ins, r, c](Tape& t, std::span<const double> g) {
    std::size_t off = 0;
    for (const Var& p : ins) {
      const std::size_t pc = t.value(p).cols();
      if (auto gp = t.grad_buffer(p); !gp.empty())
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < pc; ++j) gp[i * pc + j] += g[i * c + off + j];
      off += pc;
    }
  });
}

inline Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

// Columns at the given indices, in the given order.
inline Var select_cols(Var a, std::vector<std::size_t> indices) {
  const std::size_t r = a.rows(), c = a.cols(), n = indices.size();
  if (n == 0) throw DimensionError("select_cols: empty selection");
  for (std::size_t idx : indices) {
    if (idx >= c) throw DimensionError("select_cols: column " + std::to_string(idx) + " out of range for " + shape_string(a.shape()));
  }
  Tensor out({r, n});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a.value()[i * c + indices[j]];
  return a.tape().record("select_cols", std::move(out), {a}, [a, indices = std::move(indices), r, c](Tape& t, std::span<const double> g) {
    auto ga = t.grad_buffer(a);
    if (ga.empty()) return;
    const std::size_t n = indices.size();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < n; ++j) ga[i * c + indices[j]] += g[i * n + j];
  });
}

inline Var slice_cols(Var a, std::size_t start, std::size_t count) {
  if (count == 0 || start + count > a.cols()) {
    throw DimensionError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") out of range for " + shape_string(a.shape()));
  }
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), start);
  return select_cols(a, std::move(idx));
}

// Stacks n exact copies of a single row.
inline Var repeat_rows(Var row, std::size_t n) {
  if (row.rows() != 1) throw DimensionError("repeat_rows: expected one row, got " + shape_string(row.shape()));
  if (n == 0) throw DimensionError("repeat_rows: repeat count must be positive");
  const std::size_t c = row.cols();
  std::vector<double> data;
  data.reserve(n * c);
  for (std::size_t i = 0; i < n; ++i) data.insert(data.end(), row.value().data().begin(), row.value().data().end());
  return row.tape().record("repeat_rows", Tensor::matrix(n, c, std::move(data)), {row},
                           [row, n, c](Tape& t, std::span<const double> g) {
                             if (auto gr = t.grad_buffer(row); !gr.empty())
                               for (std::size_t i = 0; i < n; ++i)
                                 for (std::size_t j = 0; j < c; ++j) gr[j] += g[i * c + j];
                           });
}

// Row lookup: out[i] = table[ids[i]].
inline Var gather_rows(Var table, std::span<const std::size_t> ids) {
  const std::size_t v = table.rows(), c = table.cols();
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  if (idx.empty()) throw DimensionError("gather_rows: empty id list");
  Tensor out({idx.size(), c});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= v) {
      throw VocabularyError("token id " + std::to_string(idx[i]) + " outside vocabulary of size " + std::to_string(v));
    }
    std::copy_n(&table.value()[idx[i] * c], c, &out[i * c]);
  }
  return table.tape().record("gather_rows", std::move(out), {table}, [table, idx, c](Tape& t, std::span<const double> g) {
    auto gt = t.grad_buffer(table);
    if (gt.empty()) return;
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) gt[idx[i] * c + j] += g[i * c + j];
  });
}

}  // namespace egmf
