#pragma once

// Dense row-major matrices, stable softmax, a counter-based RNG and the
// central-difference Jacobian used as the derivative oracle everywhere.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ellip/errors.hpp"

namespace ellip {

using Vector = std::vector<double>;

inline bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    if (!std::isfinite(fill)) throw ParameterError("Matrix: non-finite fill value");
  }

  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("Matrix: " + std::to_string(data_.size()) + " values for a " +
                       std::to_string(rows_) + "x" + std::to_string(cols_) + " matrix");
    }
    if (!all_finite(data_)) throw ParameterError("Matrix: non-finite entry");
  }

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ShapeError("Matrix::from_rows: ragged rows");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Matrix(r, c, std::move(data));
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix row_vector(std::span<const double> v) {
    return Matrix(1, v.size(), std::vector<double>(v.begin(), v.end()));
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  Vector col(std::size_t c) const {
    Vector out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
    return out;
  }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + shape_str(a) + " times " + shape_str(b));
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto o = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto br = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) o[j] += aik * br[j];
    }
  }
  return out;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

/// Softmax of one row in place; row-max subtraction keeps exp() in range.
inline void softmax_inplace(std::span<double> z) {
  if (z.empty()) return;
  const double mx = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (double& x : z) {
    x = std::exp(x - mx);
    total += x;
  }
  for (double& x : z) x /= total;
}

inline Matrix softmax_rows(Matrix z) {
  for (std::size_t r = 0; r < z.rows(); ++r) softmax_inplace(z.row(r));
  return z;
}

inline Vector softmax(std::span<const double> z) {
  Vector out(z.begin(), z.end());
  softmax_inplace(out);
  return out;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double norm1(std::span<const double> a) {
  double s = 0.0;
  for (double x : a) s += std::abs(x);
  return s;
}

inline double max_abs(std::span<const double> a) {
  double m = 0.0;
  for (double x : a) m = std::max(m, std::abs(x));
  return m;
}

inline Vector subtract(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("subtract: length mismatch");
  Vector out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return out;
}

/// Counter-based generator: output n is a pure function of (seed, n).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), key_(mix(seed ^ 0x6a09e667f3bcc909ULL)) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() {
    ++counter_;
    return mix(key_ + counter_ * kGolden);
  }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (one draw per call, no cached spare).
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw ParameterError("Rng::below: n must be positive");
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// Independent generator for a labelled sub-stream.
  Rng child(std::uint64_t stream) const { return Rng(mix(key_ ^ mix(stream + kGolden))); }

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Matrix m(rows, cols);
  for (double& x : m.data()) x = rng.uniform(lo, hi);
  return m;
}

using VectorFunction = std::function<Vector(std::span<const double>)>;

/// Central-difference Jacobian (rows = outputs, cols = inputs). With
/// `scale_by_magnitude` the step for coordinate i is h * (1 + |x_i|).
inline Matrix finite_diff_jacobian(const VectorFunction& f, std::span<const double> x, double h,
                                   bool scale_by_magnitude = true) {
  if (!(h > 0.0)) throw ParameterError("finite_diff_jacobian: h must be positive");
  Vector probe(x.begin(), x.end());
  Matrix jac;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double step = scale_by_magnitude ? h * (1.0 + std::abs(x[i])) : h;
    probe[i] = x[i] + step;
    const Vector fp = f(probe);
    probe[i] = x[i] - step;
    const Vector fm = f(probe);
    probe[i] = x[i];
    if (fp.size() != fm.size()) throw EvaluationError("finite_diff_jacobian: output size changed");
    if (!all_finite(fp) || !all_finite(fm)) {
      throw EvaluationError("finite_diff_jacobian: non-finite function value");
    }
    if (i == 0) jac = Matrix(fp.size(), x.size());
    if (fp.size() != jac.rows()) throw EvaluationError("finite_diff_jacobian: output size changed");
    // Divide by the realised step, not the nominal one.
    const double span = (x[i] + step) - (x[i] - step);
    for (std::size_t r = 0; r < fp.size(); ++r) jac(r, i) = (fp[r] - fm[r]) / span;
  }
  return jac;
}

}  // namespace ellip
