#pragma once

// Estimators of coordinate-wise variability E_mu ||J_f(k) e_i||_1: the cheap
// over-layers difference estimator used inside attention, the centred
// difference estimator (consistent as n grows), and a brute-force Monte Carlo
// oracle built on finite-difference Jacobians.

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>

#include "ellip/errors.hpp"
#include "ellip/numerics.hpp"

namespace ellip {

enum class EstimatorKind { overlayers, consistent, oracle };

inline std::string_view to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::overlayers: return "overlayers";
    case EstimatorKind::consistent: return "consistent";
    case EstimatorKind::oracle: return "oracle";
  }
  return "?";
}

struct VariabilityEstimate {
  Vector raw;  // unscaled, >= 0
  EstimatorKind estimator = EstimatorKind::overlayers;
  double delta_or_t = 1.0;
};

/// Draws a point from the key marginal mu.
using PointSampler = std::function<Vector(Rng&)>;

inline PointSampler uniform_box(std::size_t dim, double lo, double hi) {
  return [=](Rng& rng) {
    Vector x(dim);
    for (double& v : x) v = rng.uniform(lo, hi);
    return x;
  };
}

inline Matrix sample_points(const PointSampler& sampler, std::size_t n, Rng& rng) {
  Matrix out;
  for (std::size_t r = 0; r < n; ++r) {
    Vector x = sampler(rng);
    if (r == 0) out = Matrix(n, x.size());
    std::copy(x.begin(), x.end(), out.row(r).begin());
  }
  return out;
}

/// (1/(2b)) * integral_{-b}^{b} |cos x| dx.
inline double mean_abs_cos(double b) {
  const double pi = std::numbers::pi;
  const double periods = std::floor(b / pi);
  const double r = b - periods * pi;
  const double tail = r <= pi / 2 ? std::sin(r) : 2.0 - std::sin(r);
  return (2.0 * periods + tail) / b;
}

/// (1/(2b)) * integral_{-b}^{b} |sin x| dx.
inline double mean_abs_sin(double b) {
  const double pi = std::numbers::pi;
  const double periods = std::floor(b / pi);
  const double r = b - periods * pi;
  return (2.0 * periods + 1.0 - std::cos(r)) / b;
}

/// A ground-truth regression function from a fixed catalog. Entries that know
/// their coordinate-wise variability under Uniform[-b, b]^D, or a bound G_i on
/// the norm of Jacobian column i, expose it.
struct SyntheticFunction {
  std::string name;
  std::size_t dim = 0;
  std::size_t out_dim = 0;
  std::function<Vector(std::span<const double>)> eval;
  std::function<Vector(double half_width)> variability_on_box;  // may be empty
  std::optional<Vector> gradient_bounds;

  Vector operator()(std::span<const double> x) const {
    if (x.size() != dim) throw ShapeError("SyntheticFunction " + name + ": input length");
    return eval(x);
  }

  VectorFunction as_function() const {
    return [self = *this](std::span<const double> x) { return self(x); };
  }

  /// f(x) = A x with A of shape out_dim x dim.
  static SyntheticFunction linear(Matrix a) {
    SyntheticFunction f;
    f.name = "linear";
    f.dim = a.cols();
    f.out_dim = a.rows();
    Vector var(a.cols(), 0.0), g(a.cols(), 0.0);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      for (std::size_t r = 0; r < a.rows(); ++r) var[i] += std::abs(a(r, i));
      g[i] = norm2(a.col(i));
    }
    f.eval = [a](std::span<const double> x) {
      Vector y(a.rows(), 0.0);
      for (std::size_t r = 0; r < a.rows(); ++r) y[r] = dot(a.row(r), x);
      return y;
    };
    f.variability_on_box = [var](double) { return var; };
    f.gradient_bounds = g;
    return f;
  }

  /// f_i(x) = a_i sin(x_i): separable, output dimension D.
  static SyntheticFunction separable_sinusoid(Vector amplitudes) {
    SyntheticFunction f;
    f.name = "separable_sinusoid";
    f.dim = f.out_dim = amplitudes.size();
    f.eval = [amplitudes](std::span<const double> x) {
      Vector y(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = amplitudes[i] * std::sin(x[i]);
      return y;
    };
    f.variability_on_box = [amplitudes](double b) {
      Vector v(amplitudes.size());
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::abs(amplitudes[i]) * mean_abs_cos(b);
      return v;
    };
    Vector g(amplitudes.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = std::abs(amplitudes[i]);
    f.gradient_bounds = g;
    return f;
  }

  /// Scalar f(x) = sum_{c in active} sin(x_c); coordinates outside `active` are inert.
  static SyntheticFunction sparse_coordinate(std::size_t dim, std::vector<std::size_t> active) {
    for (std::size_t c : active)
      if (c >= dim) throw ParameterError("sparse_coordinate: active coordinate out of range");
    SyntheticFunction f;
    f.name = "sparse_coordinate";
    f.dim = dim;
    f.out_dim = 1;
    f.eval = [active](std::span<const double> x) {
      double s = 0.0;
      for (std::size_t c : active) s += std::sin(x[c]);
      return Vector{s};
    };
    Vector g(dim, 0.0);
    for (std::size_t c : active) g[c] = 1.0;
    f.variability_on_box = [g](double b) {
      Vector v = g;
      for (double& x : v) x *= mean_abs_cos(b);
      return v;
    };
    f.gradient_bounds = g;
    return f;
  }

  /// Two-piece step along `coord`: `low` where x_coord < threshold, `high` otherwise.
  static SyntheticFunction piecewise_constant(std::size_t dim, std::size_t coord,
                                              double threshold, Vector low, Vector high) {
    if (low.size() != high.size()) throw ShapeError("piecewise_constant: piece widths differ");
    if (coord >= dim) throw ParameterError("piecewise_constant: coordinate out of range");
    SyntheticFunction f;
    f.name = "piecewise_constant";
    f.dim = dim;
    f.out_dim = low.size();
    f.eval = [=](std::span<const double> x) { return x[coord] < threshold ? low : high; };
    return f;
  }

  static SyntheticFunction constant(std::size_t dim, Vector value) {
    SyntheticFunction f;
    f.name = "constant";
    f.dim = dim;
    f.out_dim = value.size();
    f.eval = [value](std::span<const double>) { return value; };
    f.variability_on_box = [dim](double) { return Vector(dim, 0.0); };
    f.gradient_bounds = Vector(dim, 0.0);
    return f;
  }
};

/// raw_i = (1/N) sum_n |v_curr[n,i] - v_prev[n,i]| / delta. Rows of a batch are
/// simply more samples. Pure function of values: nothing here is differentiated.
inline VariabilityEstimate estimate_overlayers(const Matrix& v_curr, const Matrix& v_prev,
                                               double delta) {
  if (!v_curr.same_shape(v_prev)) {
    throw ShapeError("estimate_overlayers: " + shape_str(v_curr) + " vs " + shape_str(v_prev));
  }
  if (!(delta > 0.0)) throw ParameterError("estimate_overlayers: delta must be positive");
  Vector raw(v_curr.cols(), 0.0);
  for (std::size_t n = 0; n < v_curr.rows(); ++n) {
    auto a = v_curr.row(n);
    auto b = v_prev.row(n);
    for (std::size_t i = 0; i < raw.size(); ++i) raw[i] += std::abs(a[i] - b[i]);
  }
  if (v_curr.rows() > 0) {
    const double scale = 1.0 / (static_cast<double>(v_curr.rows()) * delta);
    for (double& x : raw) x *= scale;
  }
  return {std::move(raw), EstimatorKind::overlayers, delta};
}

/// raw_i = mean over samples of ||f(x + t e_i) - f(x - t e_i)||_1 / (2t).
/// Exactly 2D evaluations of f per sample point.
inline VariabilityEstimate estimate_consistent(const VectorFunction& f, const Matrix& samples,
                                               double t) {
  if (!(t > 0.0)) throw ParameterError("estimate_consistent: t must be positive");
  const std::size_t d = samples.cols();
  Vector raw(d, 0.0);
  Vector probe(d);
  for (std::size_t n = 0; n < samples.rows(); ++n) {
    auto x = samples.row(n);
    std::copy(x.begin(), x.end(), probe.begin());
    for (std::size_t i = 0; i < d; ++i) {
      probe[i] = x[i] + t;
      const Vector fp = f(probe);
      probe[i] = x[i] - t;
      const Vector fm = f(probe);
      probe[i] = x[i];
      if (fp.size() != fm.size()) throw EvaluationError("estimate_consistent: output size changed");
      if (!all_finite(fp) || !all_finite(fm)) {
        throw EvaluationError("estimate_consistent: non-finite function value");
      }
      double l1 = 0.0;
      for (std::size_t r = 0; r < fp.size(); ++r) l1 += std::abs(fp[r] - fm[r]);
      raw[i] += l1;
    }
  }
  if (samples.rows() > 0) {
    const double scale = 1.0 / (2.0 * t * static_cast<double>(samples.rows()));
    for (double& x : raw) x *= scale;
  }
  return {std::move(raw), EstimatorKind::consistent, t};
}

inline constexpr std::size_t kOracleSamples = 200;
inline constexpr double kOracleStep = 1e-5;

/// Monte Carlo of E ||J_f(k) e_i||_1 with central-difference Jacobians.
inline VariabilityEstimate oracle_variability(const VectorFunction& f, const PointSampler& mu,
                                              std::size_t n_mc, Rng& rng,
                                              double h = kOracleStep) {
  if (n_mc == 0) throw ParameterError("oracle_variability: n_mc must be positive");
  Vector raw;
  for (std::size_t s = 0; s < n_mc; ++s) {
    const Vector k = mu(rng);
    const Matrix jac = finite_diff_jacobian(f, k, h);
    if (raw.empty()) raw.assign(jac.cols(), 0.0);
    for (std::size_t i = 0; i < jac.cols(); ++i) raw[i] += norm1(jac.col(i));
  }
  for (double& x : raw) x /= static_cast<double>(n_mc);
  return {std::move(raw), EstimatorKind::oracle, h};
}

/// Keys and noisy values at two consecutive "layers" of the regression model
/// v = f(k) + eps, with per-coordinate key moves of mean magnitude delta.
struct LayerPair {
  Matrix keys_prev, keys_next;
  Matrix values_prev, values_next;  // noisy
  Matrix clean_prev, clean_next;    // f(k) without noise
};

struct LayerPairConfig {
  std::size_t n = 1000;
  double delta = 0.05;      // mean |k_next - k_prev| per coordinate
  double jitter = 0.1;      // relative half-width of the move-magnitude distribution
  double noise_std = 0.01;  // std of the Gaussian value noise
};

inline LayerPair simulate_layer_pair(const SyntheticFunction& f, const PointSampler& mu,
                                     const LayerPairConfig& cfg, Rng& rng) {
  LayerPair p;
  p.keys_prev = sample_points(mu, cfg.n, rng);
  p.keys_next = p.keys_prev;
  for (double& k : p.keys_next.data()) {
    const double magnitude = cfg.delta * (1.0 + cfg.jitter * rng.uniform(-1.0, 1.0));
    k += rng.bernoulli(0.5) ? magnitude : -magnitude;
  }
  p.clean_prev = Matrix(cfg.n, f.out_dim);
  p.clean_next = Matrix(cfg.n, f.out_dim);
  p.values_prev = Matrix(cfg.n, f.out_dim);
  p.values_next = Matrix(cfg.n, f.out_dim);
  for (std::size_t r = 0; r < cfg.n; ++r) {
    const Vector a = f(p.keys_prev.row(r));
    const Vector b = f(p.keys_next.row(r));
    for (std::size_t c = 0; c < f.out_dim; ++c) {
      p.clean_prev(r, c) = a[c];
      p.clean_next(r, c) = b[c];
      p.values_prev(r, c) = a[c] + cfg.noise_std * rng.normal();
      p.values_next(r, c) = b[c] + cfg.noise_std * rng.normal();
    }
  }
  return p;
}

}  // namespace ellip
