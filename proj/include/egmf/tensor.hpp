// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "egmf/errors.hpp"
#include "egmf/rng.hpp"

namespace egmf {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

// Dense row-major array of doubles. Rank-1 tensors behave as a single row
// wherever an operation wants a matrix.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    check_shape();
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (shape_size(shape_) != data_.size()) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
    return Tensor({rows, cols}, std::move(data));
  }

  static Tensor row(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({1, n}, std::move(values));
  }

  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged rows in Tensor::from_rows");
      data.insert(data.end(), row.begin(), row.end());
    }
    return matrix(r, c, std::move(data));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }
  std::size_t rows() const noexcept { return cols() ? data_.size() / cols() : 0; }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  const double& operator[](std::size_t i) const noexcept { return data_[i]; }
  double& operator[](std::size_t i) noexcept { return data_[i]; }

  double at(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }
  double& at(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }

  std::span<const double> row_span(std::size_t r) const noexcept {
    return std::span<const double>(data_).subspan(r * cols(), cols());
  }
  std::span<double> row_span(std::size_t r) noexcept {
    return std::span<double>(data_).subspan(r * cols(), cols());
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

  // Shape and values only; no gradient state.
  Tensor clone_values() const { return Tensor(shape_, data_); }

  bool requires_grad = false;
  std::optional<std::vector<double>> grad;

 private:
  void check_shape() const {
    if (shape_.empty()) throw DimensionError("tensor shape must be non-empty");
    for (std::size_t d : shape_) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape_));
    }
  }

  Shape shape_;
  std::vector<double> data_;
};

// Same shape and the same bit pattern in every element.
inline bool bit_identical(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i])) return false;
  }
  return true;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_abs_diff shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline void require_finite(const Tensor& t, std::string_view what) {
  if (!t.all_finite()) throw NonFiniteError(std::string(what) + ": non-finite value in tensor " + shape_string(t.shape()));
}

enum class InitScheme { XavierUniform, Zeros, Ones };

// Weight matrices are stored [fan_out x fan_in].
inline Tensor init_parameter(const Shape& shape, InitScheme scheme, Rng& rng) {
  Tensor t(shape);
  switch (scheme) {
    case InitScheme::Zeros:
      break;
    case InitScheme::Ones:
      std::fill(t.data().begin(), t.data().end(), 1.0);
      break;
    case InitScheme::XavierUniform: {
      const double fan_out = static_cast<double>(shape.front());
      const double fan_in = static_cast<double>(shape.size() > 1 ? shape_size(shape) / shape.front() : shape.front());
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      for (double& v : t.data()) v = rng.uniform(-bound, bound);
      break;
    }
  }
  return t;
}

struct Parameter {
  std::string name;
  Tensor tensor;
  bool frozen = false;

  void zero_grad() { tensor.grad.reset(); }
};

// Owns a model's parameters. Addresses stay stable for the store's lifetime,
// so layers keep raw Parameter pointers.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;

  Parameter& add(std::string name, Tensor value, bool frozen = false) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    value.requires_grad = true;
    auto p = std::make_unique<Parameter>(Parameter{name, std::move(value), frozen});
    index_.emplace(std::move(name), params_.size());
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter* find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? nullptr : params_[it->second].get();
  }

  Parameter& at(std::string_view name) const {
    Parameter* p = find(name);
    if (!p) throw ConfigError("no parameter named " + std::string(name));
    return *p;
  }

  std::size_t size() const noexcept { return params_.size(); }

  std::vector<Parameter*> all() const {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.get());
    return out;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  void set_frozen(bool frozen) {
    for (auto& p : params_) p->frozen = frozen;
  }

  std::size_t scalar_count(bool trainable_only = false) const {
    std::size_t n = 0;
    for (const auto& p : params_) {
      if (!trainable_only || !p->frozen) n += p->tensor.size();
    }
    return n;
  }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace egmf
