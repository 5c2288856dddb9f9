#pragma once

// Diagonal Mahalanobis metric, its scaling modes, the key-dependent kappa
// coefficients that bound the sensitivity of the Mahalanobis softmax, and the
// resulting robustness bound.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "ellip/errors.hpp"
#include "ellip/numerics.hpp"

namespace ellip {

enum class ScalingMode { maxscale, meanscale, unscaled, identity, random };

inline constexpr double kDefaultFloor = 1e-6;

inline std::string_view to_string(ScalingMode m) {
  switch (m) {
    case ScalingMode::maxscale: return "maxscale";
    case ScalingMode::meanscale: return "meanscale";
    case ScalingMode::unscaled: return "unscaled";
    case ScalingMode::identity: return "identity";
    case ScalingMode::random: return "random";
  }
  return "?";
}

inline std::optional<ScalingMode> parse_scaling_mode(std::string_view s) {
  for (auto m : {ScalingMode::maxscale, ScalingMode::meanscale, ScalingMode::unscaled,
                 ScalingMode::identity, ScalingMode::random}) {
    if (to_string(m) == s) return m;
  }
  return std::nullopt;
}

/// M = diag(m). Entries are always >= floor > 0, so M is positive definite.
struct EllipticalWeights {
  Vector m;
  ScalingMode mode = ScalingMode::identity;
  double floor = kDefaultFloor;

  static EllipticalWeights identity(std::size_t dim) {
    return {Vector(dim, 1.0), ScalingMode::identity, kDefaultFloor};
  }

  std::size_t dim() const { return m.size(); }
};

inline double mahalanobis_distance(std::span<const double> q, std::span<const double> k,
                                   const EllipticalWeights& w) {
  if (q.size() != k.size() || q.size() != w.m.size()) {
    throw ShapeError("mahalanobis_distance: length mismatch");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double d = q[i] - k[i];
    s += w.m[i] * d * d;
  }
  return std::sqrt(s);
}

namespace detail {
inline EllipticalWeights clamp_floor(Vector m, ScalingMode mode, double floor) {
  for (double& x : m) x = std::max(x, floor);
  return {std::move(m), mode, floor};
}
}  // namespace detail

/// Turns raw variability estimates into metric weights. An all-zero input
/// yields identity weights whatever the mode; meanscale is not clipped above.
inline EllipticalWeights apply_scaling(std::span<const double> raw, ScalingMode mode,
                                       double floor, Rng* rng) {
  if (!(floor > 0.0)) throw ParameterError("apply_scaling: floor must be positive");
  for (double x : raw) {
    if (!(x >= 0.0) || !std::isfinite(x)) {
      throw ParameterError("apply_scaling: raw entries must be finite and nonnegative");
    }
  }
  const bool all_zero = std::all_of(raw.begin(), raw.end(), [](double x) { return x == 0.0; });
  if (all_zero || mode == ScalingMode::identity) {
    return {Vector(raw.size(), 1.0), mode, floor};
  }
  Vector m(raw.begin(), raw.end());
  switch (mode) {
    case ScalingMode::maxscale: {
      const double mx = *std::max_element(m.begin(), m.end());
      for (double& x : m) x /= mx;
      break;
    }
    case ScalingMode::meanscale: {
      double mean = 0.0;
      for (double x : m) mean += x;
      mean /= static_cast<double>(m.size());
      for (double& x : m) x /= mean;
      break;
    }
    case ScalingMode::unscaled:
      break;
    case ScalingMode::random: {
      if (rng == nullptr) throw ParameterError("apply_scaling: random mode needs an Rng");
      for (double& x : m) x = rng->uniform();
      const double mx = *std::max_element(m.begin(), m.end());
      if (mx > 0.0)
        for (double& x : m) x /= mx;
      break;
    }
    case ScalingMode::identity:
      break;
  }
  return detail::clamp_floor(std::move(m), mode, floor);
}

inline EllipticalWeights apply_scaling(std::span<const double> raw, ScalingMode mode,
                                       double floor = kDefaultFloor) {
  return apply_scaling(raw, mode, floor, nullptr);
}

inline EllipticalWeights apply_scaling(std::span<const double> raw, ScalingMode mode,
                                       double floor, Rng& rng) {
  return apply_scaling(raw, mode, floor, &rng);
}

/// kappa(i, j) for input dimension i and key j, stored D x N.
struct KappaMatrix {
  Matrix entries;

  double operator()(std::size_t i, std::size_t j) const { return entries(i, j); }
  std::size_t dims() const { return entries.rows(); }
  std::size_t keys() const { return entries.cols(); }
};

namespace detail {
// `drop_last` exists only as a fault-injection hook for negative controls: an
// off-by-one loop bound that leaves the last key out of the off-diagonal sum.
inline KappaMatrix compute_kappa_impl(const Matrix& keys, bool drop_last) {
  const std::size_t n = keys.rows();
  const std::size_t d = keys.cols();
  const std::size_t end = drop_last && n > 0 ? n - 1 : n;
  Matrix kappa(d, n);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double off = 0.0;
      for (std::size_t s = 0; s < end; ++s)
        if (s != j) off += std::abs(keys(s, i));
      kappa(i, j) = std::abs(keys(j, i)) / 4.0 + off;
    }
  }
  return {std::move(kappa)};
}
}  // namespace detail

/// kappa_ij = |k_j^i| / 4 + sum_{s != j} |k_s^i| for keys given as N x D rows.
inline KappaMatrix compute_kappa(const Matrix& keys) { return detail::compute_kappa_impl(keys, false); }

/// sum_j sqrt(tr(K_j^2 M^2)) * ||v_j||: a Lipschitz constant in the query for
/// the unit-temperature Mahalanobis-softmax estimator sum_j MaSA_j(q) v_j.
inline double robustness_bound(const Matrix& keys, const Matrix& values,
                               const EllipticalWeights& w) {
  if (keys.rows() != values.rows()) throw ShapeError("robustness_bound: key/value count mismatch");
  if (keys.cols() != w.dim()) throw ShapeError("robustness_bound: key width != metric dimension");
  const KappaMatrix kappa = compute_kappa(keys);
  double bound = 0.0;
  for (std::size_t j = 0; j < keys.rows(); ++j) {
    double tr = 0.0;
    for (std::size_t i = 0; i < keys.cols(); ++i) {
      const double km = kappa(i, j) * w.m[i];
      tr += km * km;
    }
    bound += std::sqrt(tr) * norm2(values.row(j));
  }
  return bound;
}

}  // namespace ellip
