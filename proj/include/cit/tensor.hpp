#pragma once

/// \file tensor.hpp
/// Dense row-major matrices, a counter-based RNG, fully connected layers with
/// hand-derived gradients, Adam, and a central finite-difference checker.
///
/// Convention: vectors are 1 x n row matrices and layers compute x W + b.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cit/error.hpp"

namespace cit {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(rows, cols));
    }
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("ragged matrix initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix row_vector(std::span<const double> values) {
    return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
  }

  static std::string shape_string(std::size_t rows, std::size_t cols) {
    return std::to_string(rows) + "x" + std::to_string(cols);
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  std::string shape() const { return shape_string(rows_, cols_); }
  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Rng
// ---------------------------------------------------------------------------

/// SplitMix64 evaluated at seed + counter * golden-gamma. Each draw is a pure
/// function of (seed, counter), so streams are identical on every platform and
/// child streams can be derived without touching the parent.
class Rng {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {}

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() { return mix(seed_ + (++counter_) * kGamma); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller; consumes exactly two draws.
  double normal() {
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

  /// Unbiased integer in [0, n) by rejection.
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) throw InputError("uniform_index: empty range");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  /// Independent child stream keyed by `stream` (seed xor mixed stream id).
  Rng derive(std::uint64_t stream) const { return Rng(seed_ ^ mix(stream + kGamma)); }

  friend bool operator==(const Rng&, const Rng&) = default;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

// ---------------------------------------------------------------------------
// Basic ops
// ---------------------------------------------------------------------------

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: cannot multiply " + a.shape() + " by " + b.shape());
  }
  Matrix c(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* out = c.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* brow = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) out[j] += aik * brow[j];
    }
  }
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

/// a^T b without materializing the transpose.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: cannot multiply transpose of " + a.shape() + " by " + b.shape());
  }
  Matrix c(a.cols(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* brow = b.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      double* out = c.row(k).data();
      for (std::size_t j = 0; j < n; ++j) out[j] += aik * brow[j];
    }
  }
  return c;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("dot: length " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Dense layer
// ---------------------------------------------------------------------------

enum class Activation { identity, relu, sigmoid };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
  }
  return "?";
}

/// Everything dense_backward needs besides the weights.
struct DenseCache {
  Matrix input;
  Matrix pre_activation;
  Matrix output;
  Activation activation = Activation::identity;
};

struct DenseGrads {
  Matrix grad_x;
  Matrix grad_w;
  Matrix grad_b;
};

/// y = act(x W + b) for every row of x. `x` may hold a batch of rows.
inline DenseCache dense_forward(Matrix x, const Matrix& w, const Matrix& b, Activation activation) {
  if (x.cols() != w.rows()) {
    throw ShapeError("dense_forward: input " + x.shape() + " incompatible with weight " + w.shape());
  }
  if (b.rows() != 1 || b.cols() != w.cols()) {
    throw ShapeError("dense_forward: bias " + b.shape() + " incompatible with weight " + w.shape());
  }
  DenseCache cache;
  cache.activation = activation;
  cache.pre_activation = matmul(x, w);
  for (std::size_t i = 0; i < cache.pre_activation.rows(); ++i) {
    auto r = cache.pre_activation.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += b[j];
  }
  cache.output = cache.pre_activation;
  switch (activation) {
    case Activation::identity: break;
    case Activation::relu:
      for (auto& v : cache.output.values()) v = v > 0.0 ? v : 0.0;
      break;
    case Activation::sigmoid:
      for (auto& v : cache.output.values()) v = sigmoid(v);
      break;
  }
  cache.input = std::move(x);
  return cache;
}

/// Gradients of a dense layer given dL/dy. `w` must be the weight used in the
/// matching dense_forward call.
inline DenseGrads dense_backward(const DenseCache& cache, const Matrix& w, const Matrix& upstream) {
  if (!upstream.same_shape(cache.output)) {
    throw ShapeError("dense_backward: upstream " + upstream.shape() + " does not match cached output " +
                     cache.output.shape());
  }
  if (w.rows() != cache.input.cols() || w.cols() != cache.output.cols()) {
    throw ShapeError("dense_backward: weight " + w.shape() + " does not match cache");
  }
  Matrix dz = upstream;
  switch (cache.activation) {
    case Activation::identity: break;
    case Activation::relu:
      for (std::size_t i = 0; i < dz.size(); ++i)
        if (cache.pre_activation[i] <= 0.0) dz[i] = 0.0;
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < dz.size(); ++i) {
        const double s = cache.output[i];
        dz[i] *= s * (1.0 - s);
      }
      break;
  }
  DenseGrads g;
  g.grad_w = matmul_tn(cache.input, dz);
  g.grad_b = Matrix(1, dz.cols());
  for (std::size_t i = 0; i < dz.rows(); ++i) {
    const auto r = dz.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) g.grad_b[j] += r[j];
  }
  g.grad_x = matmul(dz, transpose(w));
  return g;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
  std::uint64_t step = 0;
  Matrix first_moment;
  Matrix second_moment;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_param(const Matrix& param, double lr) {
    AdamState s;
    s.first_moment = Matrix(param.rows(), param.cols());
    s.second_moment = Matrix(param.rows(), param.cols());
    s.lr = lr;
    return s;
  }
};

/// One bias-corrected Adam update of `param` in place.
inline void adam_step(Matrix& param, const Matrix& grad, AdamState& state, std::string_view name = "param") {
  if (!param.same_shape(grad)) {
    throw ShapeError("adam_step(" + std::string(name) + "): param " + param.shape() + " vs grad " + grad.shape());
  }
  if (!state.first_moment.same_shape(param) || !state.second_moment.same_shape(param)) {
    throw ShapeError("adam_step(" + std::string(name) + "): optimizer state does not match param " + param.shape());
  }
  if (!grad.all_finite()) {
    throw NumericError("adam_step: non-finite gradient for parameter '" + std::string(name) + "'");
  }
  ++state.step;
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g * g;
    const double m_hat = m / c1;
    const double v_hat = v / c2;
    param[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

/// Max over coordinates of |central difference - analytic| / max(1, |analytic|).
/// `f` is evaluated on perturbed copies of `params`; the original is untouched.
template <typename F>
double finite_diff_check(F&& f, const std::vector<Matrix>& params, const std::vector<Matrix>& analytic,
                         double h = 1e-6) {
  if (!(h > 0.0)) throw InputError("finite_diff_check: step must be positive");
  if (params.size() != analytic.size()) throw ShapeError("finite_diff_check: parameter/gradient count mismatch");
  std::vector<Matrix> work = params;
  double worst = 0.0;
  for (std::size_t p = 0; p < work.size(); ++p) {
    if (!work[p].same_shape(analytic[p])) {
      throw ShapeError("finite_diff_check: param " + work[p].shape() + " vs gradient " + analytic[p].shape());
    }
    for (std::size_t i = 0; i < work[p].size(); ++i) {
      const double orig = work[p][i];
      work[p][i] = orig + h;
      const double up = f(std::as_const(work));
      work[p][i] = orig - h;
      const double down = f(std::as_const(work));
      work[p][i] = orig;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("finite_diff_check: objective is not finite at a perturbed point");
      }
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[p][i];
      worst = std::max(worst, std::abs(numeric - a) / std::max(1.0, std::abs(a)));
    }
  }
  return worst;
}

template <typename F>
double finite_diff_check(F&& f, const Matrix& params, const Matrix& analytic, double h = 1e-6) {
  return finite_diff_check([&](const std::vector<Matrix>& p) { return f(p[0]); }, std::vector<Matrix>{params},
                           std::vector<Matrix>{analytic}, h);
}

}  // namespace cit
