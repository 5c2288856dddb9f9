#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "ellip/errors.hpp"

namespace ellip::stats {

inline double mean(std::span<const double> xs) {
  if (xs.empty()) throw ParameterError("mean of an empty sample");
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

/// Unbiased sample standard deviation.
inline double stddev(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

inline double standard_error(std::span<const double> xs) {
  return stddev(xs) / std::sqrt(static_cast<double>(xs.size()));
}

/// One-sided paired t-test of H1: mean(a - b) > 0. Returns the p-value.
inline double paired_t_test_greater(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw ParameterError("paired_t_test: need >= 2 pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double se = standard_error(d);
  const double m = mean(d);
  if (se == 0.0) return m > 0.0 ? 0.0 : 1.0;
  const boost::math::students_t dist(static_cast<double>(d.size() - 1));
  return boost::math::cdf(boost::math::complement(dist, m / se));
}

/// Kendall tau-b rank correlation.
inline double kendall_tau(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("kendall_tau: length mismatch");
  double concordant = 0.0, discordant = 0.0, ties_x = 0.0, ties_y = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const double dx = x[i] - x[j];
      const double dy = y[i] - y[j];
      if (dx == 0.0 && dy == 0.0) continue;
      if (dx == 0.0) {
        ties_x += 1.0;
      } else if (dy == 0.0) {
        ties_y += 1.0;
      } else if ((dx > 0) == (dy > 0)) {
        concordant += 1.0;
      } else {
        discordant += 1.0;
      }
    }
  }
  const double denom = std::sqrt((concordant + discordant + ties_x) * (concordant + discordant + ties_y));
  return denom == 0.0 ? 0.0 : (concordant - discordant) / denom;
}

/// Least-squares slope of log(y) against log(x).
inline double loglog_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw ParameterError("loglog_slope: need >= 2 points");
  std::vector<double> lx(x.size()), ly(y.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw ParameterError("loglog_slope: nonpositive value");
    lx[i] = std::log(x[i]);
    ly[i] = std::log(y[i]);
  }
  const double mx = mean(lx), my = mean(ly);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  return sxy / sxx;
}

}  // namespace ellip::stats
