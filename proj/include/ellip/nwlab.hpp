#pragma once

// Nadaraya-Watson regression with Euclidean and diagonal-Mahalanobis Gaussian
// kernels, plus the seeded experiments comparing the two.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ellip/errors.hpp"
#include "ellip/estimators.hpp"
#include "ellip/metric.hpp"
#include "ellip/numerics.hpp"
#include "ellip/stats.hpp"

namespace ellip {

/// Samples (k_j, v_j) with v = f(k) + eps, eps ~ N(0, noise_std^2 I).
struct NWDataset {
  Matrix keys;
  Matrix values;
  double noise_std = 0.0;
  SyntheticFunction truth;

  std::size_t size() const { return keys.rows(); }
};

inline NWDataset sample_dataset(const SyntheticFunction& truth, const PointSampler& mu,
                                std::size_t n, double noise_std, Rng& rng) {
  if (noise_std < 0.0) throw ParameterError("sample_dataset: noise_std must be >= 0");
  NWDataset data{sample_points(mu, n, rng), Matrix(n, truth.out_dim), noise_std, truth};
  for (std::size_t r = 0; r < n; ++r) {
    const Vector y = truth(data.keys.row(r));
    for (std::size_t c = 0; c < y.size(); ++c)
      data.values(r, c) = y[c] + (noise_std > 0.0 ? noise_std * rng.normal() : 0.0);
  }
  return data;
}

namespace detail {
/// Kernel-weighted average over rows [0, n) of keys/values, skipping row `skip`.
inline Vector nw_average(std::span<const double> query, const Matrix& keys, const Matrix& values,
                         double bandwidth, std::span<const double> m,
                         const std::vector<std::size_t>* rows = nullptr) {
  const std::size_t count = rows ? rows->size() : keys.rows();
  if (count == 0) throw ParameterError("nw_estimate: empty dataset");
  if (!(bandwidth > 0.0)) throw ParameterError("nw_estimate: bandwidth must be positive");
  if (query.size() != keys.cols() || m.size() != keys.cols()) {
    throw ShapeError("nw_estimate: query/metric dimension mismatch");
  }
  const double inv_two_var = 1.0 / (2.0 * bandwidth * bandwidth);
  std::vector<double> logw(count);
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < count; ++s) {
    auto k = keys.row(rows ? (*rows)[s] : s);
    double d2 = 0.0;
    for (std::size_t i = 0; i < k.size(); ++i) {
      const double diff = query[i] - k[i];
      d2 += m[i] * diff * diff;
    }
    logw[s] = -d2 * inv_two_var;
    best = std::max(best, logw[s]);
  }
  Vector out(values.cols(), 0.0);
  double total = 0.0;
  for (std::size_t s = 0; s < count; ++s) {
    const double w = std::exp(logw[s] - best);
    if (w == 0.0) continue;
    total += w;
    auto v = values.row(rows ? (*rows)[s] : s);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += w * v[c];
  }
  for (double& x : out) x /= total;
  return out;
}
}  // namespace detail

/// sum_j v_j exp(-d(q,k_j)^2 / 2 sigma^2) / sum_j exp(-d(q,k_j)^2 / 2 sigma^2),
/// sigma = bandwidth, d the metric of `w` (identity weights give Euclidean NW).
inline Vector nw_estimate(std::span<const double> query, const NWDataset& data, double bandwidth,
                          const EllipticalWeights& w) {
  return detail::nw_average(query, data.keys, data.values, bandwidth, w.m);
}

inline std::vector<double> default_bandwidth_grid() {
  // 12 log-spaced points from 0.05 to 2
  std::vector<double> grid;
  const double lo = std::log(0.05), hi = std::log(2.0);
  for (int i = 0; i < 12; ++i) grid.push_back(std::exp(lo + (hi - lo) * i / 11.0));
  return grid;
}

/// K-fold cross-validated bandwidth (contiguous folds; samples are i.i.d.).
/// Ties go to the smaller bandwidth.
inline double select_bandwidth_cv(const NWDataset& data, const EllipticalWeights& w,
                                  const std::vector<double>& grid, std::size_t folds = 5) {
  const std::size_t n = data.size();
  if (n < folds || folds < 2) throw ParameterError("select_bandwidth_cv: too few samples");
  double best_bw = grid.front();
  double best_err = std::numeric_limits<double>::infinity();
  for (double bw : grid) {
    double err = 0.0;
    for (std::size_t f = 0; f < folds; ++f) {
      const std::size_t lo = f * n / folds, hi = (f + 1) * n / folds;
      std::vector<std::size_t> train;
      train.reserve(n - (hi - lo));
      for (std::size_t r = 0; r < n; ++r)
        if (r < lo || r >= hi) train.push_back(r);
      for (std::size_t r = lo; r < hi; ++r) {
        const Vector pred = detail::nw_average(data.keys.row(r), data.keys, data.values, bw, w.m,
                                               &train);
        for (std::size_t c = 0; c < pred.size(); ++c) {
          const double e = pred[c] - data.values(r, c);
          err += e * e;
        }
      }
    }
    if (err < best_err) {
      best_err = err;
      best_bw = bw;
    }
  }
  return best_bw;
}

/// Mean over queries of ||f_hat(q) - f(q)||^2.
inline double nw_mse(const NWDataset& data, const Matrix& queries, double bandwidth,
                     const EllipticalWeights& w) {
  double total = 0.0;
  for (std::size_t r = 0; r < queries.rows(); ++r) {
    const Vector pred = nw_estimate(queries.row(r), data, bandwidth, w);
    const Vector truth = data.truth(queries.row(r));
    for (std::size_t c = 0; c < pred.size(); ++c) total += (pred[c] - truth[c]) * (pred[c] - truth[c]);
  }
  return total / static_cast<double>(queries.rows());
}

struct MSEReport {
  std::string estimator;
  double bandwidth = 0.0;  // seed mean of the selected bandwidth
  std::size_t n = 0;
  double mse = 0.0;        // seed mean
  std::size_t seeds = 0;
  double standard_error = 0.0;
};

enum class WeightSource { oracle, consistent };

inline std::string_view to_string(WeightSource s) {
  return s == WeightSource::oracle ? "oracle" : "consistent";
}

struct SparseMseConfig {
  std::size_t dim = 5;
  std::vector<std::size_t> active{0};  // coordinates the truth depends on
  std::size_t n = 500;
  std::size_t n_test = 500;
  double noise_std = 0.3;
  double box = 3.0;  // keys and queries ~ Uniform[-box, box]^dim
  std::size_t seeds = 20;
  std::uint64_t seed = 1;
  WeightSource weights = WeightSource::oracle;
  double consistent_t = 0.5;  // step of the centred-difference estimator on the pilot fit
  std::size_t oracle_samples = kOracleSamples;
  std::size_t folds = 5;
  std::vector<double> grid = default_bandwidth_grid();
};

struct SparseMseSeed {
  double mse_euclidean = 0.0, mse_elliptical = 0.0;
  double bw_euclidean = 0.0, bw_elliptical = 0.0;
  Vector metric;
};

struct SparseMseResult {
  MSEReport euclidean, elliptical;
  std::vector<SparseMseSeed> per_seed;
  double p_value = 1.0;  // one-sided paired test of mse_euclidean > mse_elliptical

  bool elliptical_better() const { return elliptical.mse < euclidean.mse && p_value < 0.05; }
  /// |mse gap| in units of sqrt(se_e^2 + se_u^2).
  double gap_in_pooled_se() const {
    const double pooled = std::sqrt(euclidean.standard_error * euclidean.standard_error +
                                    elliptical.standard_error * elliptical.standard_error);
    const double gap = std::abs(euclidean.mse - elliptical.mse);
    return pooled > 0.0 ? gap / pooled : (gap == 0.0 ? 0.0 : std::numeric_limits<double>::infinity());
  }
};

inline SparseMseSeed run_sparse_mse_seed(const SparseMseConfig& cfg, const SyntheticFunction& truth,
                                         std::uint64_t seed) {
  Rng rng(seed);
  const PointSampler mu = uniform_box(cfg.dim, -cfg.box, cfg.box);
  Rng data_rng = rng.child(1), query_rng = rng.child(2), oracle_rng = rng.child(3);
  const NWDataset data = sample_dataset(truth, mu, cfg.n, cfg.noise_std, data_rng);
  const Matrix queries = sample_points(mu, cfg.n_test, query_rng);

  const EllipticalWeights euclid = EllipticalWeights::identity(cfg.dim);
  SparseMseSeed out;
  out.bw_euclidean = select_bandwidth_cv(data, euclid, cfg.grid, cfg.folds);
  out.mse_euclidean = nw_mse(data, queries, out.bw_euclidean, euclid);

  VariabilityEstimate est;
  if (cfg.weights == WeightSource::oracle) {
    est = oracle_variability(truth.as_function(), mu, cfg.oracle_samples, oracle_rng);
  } else {
    const double bw = out.bw_euclidean;
    const VectorFunction pilot = [&data, bw, &euclid](std::span<const double> x) {
      return nw_estimate(x, data, bw, euclid);
    };
    est = estimate_consistent(pilot, data.keys, cfg.consistent_t);
  }
  const EllipticalWeights ell = apply_scaling(est.raw, ScalingMode::maxscale);
  out.metric = ell.m;
  out.bw_elliptical = select_bandwidth_cv(data, ell, cfg.grid, cfg.folds);
  out.mse_elliptical = nw_mse(data, queries, out.bw_elliptical, ell);
  return out;
}

inline SparseMseResult summarize_sparse_mse(const SparseMseConfig& cfg,
                                            std::vector<SparseMseSeed> per_seed) {
  std::vector<double> eu, el, beu, bel;
  for (const auto& s : per_seed) {
    eu.push_back(s.mse_euclidean);
    el.push_back(s.mse_elliptical);
    beu.push_back(s.bw_euclidean);
    bel.push_back(s.bw_elliptical);
  }
  SparseMseResult r;
  r.euclidean = {"euclidean", stats::mean(beu), cfg.n, stats::mean(eu), eu.size(),
                 stats::standard_error(eu)};
  r.elliptical = {"elliptical", stats::mean(bel), cfg.n, stats::mean(el), el.size(),
                  stats::standard_error(el)};
  r.p_value = eu.size() >= 2 ? stats::paired_t_test_greater(eu, el) : 1.0;
  r.per_seed = std::move(per_seed);
  return r;
}

/// Euclidean vs elliptical NW on a coordinate-sparse truth, across seeds.
/// `truth` defaults to sum of sin over cfg.active.
inline SparseMseResult run_sparse_mse_experiment(const SparseMseConfig& cfg,
                                                 const SyntheticFunction* truth = nullptr) {
  if (cfg.seeds == 0) throw ParameterError("run_sparse_mse_experiment: seeds must be positive");
  const SyntheticFunction f =
      truth ? *truth : SyntheticFunction::sparse_coordinate(cfg.dim, cfg.active);
  std::vector<SparseMseSeed> per_seed;
  for (std::size_t s = 0; s < cfg.seeds; ++s) per_seed.push_back(run_sparse_mse_seed(cfg, f, cfg.seed + s));
  return summarize_sparse_mse(cfg, std::move(per_seed));
}

// ---------------------------------------------------------------------------

enum class NwKernel { elliptical, euclidean };

inline std::string_view to_string(NwKernel k) {
  return k == NwKernel::elliptical ? "elliptical" : "euclidean";
}

struct EdgeConfig {
  std::size_t n = 200;
  double noise_std = 0.5;
  double bandwidth = 0.1;
  double box = 1.0;           // keys ~ Uniform[-box, box]^2
  double query_offset = 0.1;  // q1 = (-offset, 0), q2 = (+offset, 0)
  Vector low{1.0, 0.0};       // f on x1 < 0
  Vector high{0.0, 1.0};      // f on x1 >= 0
  double consistent_t = 0.1;  // metric from the centred-difference estimator on the truth
  std::size_t metric_samples = 2000;
  std::size_t seeds = 20;
  std::uint64_t seed = 1;
  std::array<NwKernel, 2> estimators{NwKernel::elliptical, NwKernel::euclidean};
};

struct EdgeEstimatorReport {
  std::string estimator;
  std::vector<double> per_seed;  // ||h2/|h2| - h1/|h1|||
  double mean = 0.0;
};

struct EdgeReport {
  EdgeEstimatorReport first, second;  // in EdgeConfig::estimators order
  Vector metric;
  double target_distance = 0.0;  // distance between the normalised pieces

  const EdgeEstimatorReport& get(NwKernel k) const {
    return first.estimator == to_string(k) ? first : second;
  }
};

inline Vector normalized(Vector v) {
  const double n = norm2(v);
  if (n > 0.0)
    for (double& x : v) x /= n;
  return v;
}

/// Distance between the normalised NW estimates at two queries straddling the
/// edge of a two-piece constant function whose second coordinate is inert.
inline EdgeReport run_edge_preservation_experiment(const EdgeConfig& cfg) {
  if (cfg.seeds == 0) throw ParameterError("run_edge_preservation_experiment: seeds must be positive");
  const Vector low = normalized(cfg.low), high = normalized(cfg.high);
  const SyntheticFunction truth = SyntheticFunction::piecewise_constant(2, 0, 0.0, low, high);
  const PointSampler mu = uniform_box(2, -cfg.box, cfg.box);

  Rng metric_rng = Rng(cfg.seed).child(99);
  const Matrix probe = sample_points(mu, cfg.metric_samples, metric_rng);
  const VariabilityEstimate est = estimate_consistent(truth.as_function(), probe, cfg.consistent_t);
  const EllipticalWeights ell = apply_scaling(est.raw, ScalingMode::maxscale);
  const EllipticalWeights euc = EllipticalWeights::identity(2);

  const Vector q1{-cfg.query_offset, 0.0}, q2{cfg.query_offset, 0.0};
  EdgeReport report;
  report.metric = ell.m;
  report.target_distance = norm2(subtract(high, low));
  report.first.estimator = to_string(cfg.estimators[0]);
  report.second.estimator = to_string(cfg.estimators[1]);
  for (std::size_t s = 0; s < cfg.seeds; ++s) {
    Rng rng = Rng(cfg.seed + s).child(1);
    const NWDataset data = sample_dataset(truth, mu, cfg.n, cfg.noise_std, rng);
    for (std::size_t e = 0; e < 2; ++e) {
      const EllipticalWeights& w = cfg.estimators[e] == NwKernel::elliptical ? ell : euc;
      const Vector h1 = normalized(nw_estimate(q1, data, cfg.bandwidth, w));
      const Vector h2 = normalized(nw_estimate(q2, data, cfg.bandwidth, w));
      (e == 0 ? report.first : report.second).per_seed.push_back(norm2(subtract(h2, h1)));
    }
  }
  report.first.mean = stats::mean(report.first.per_seed);
  report.second.mean = stats::mean(report.second.per_seed);
  return report;
}

// ---------------------------------------------------------------------------

/// Checks ||f(q) - f(k)|| <= (sum_i G_i / sqrt(m_i)) d(q, k) over random pairs in
/// [-box, box]^D. Returns max over pairs of (ratio - bound); <= 0 means it held.
/// Coincident pairs contribute 0 - bound.
inline double check_lipschitz_transfer(const SyntheticFunction& f, const EllipticalWeights& w,
                                       std::size_t n_pairs, Rng& rng, double box = 3.0) {
  if (!f.gradient_bounds) throw ParameterError("check_lipschitz_transfer: no gradient bounds for " + f.name);
  const Vector& g = *f.gradient_bounds;
  if (g.size() != w.dim() || f.dim != w.dim()) throw ShapeError("check_lipschitz_transfer: dimension");
  double bound = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) bound += g[i] / std::sqrt(w.m[i]);
  const PointSampler mu = uniform_box(f.dim, -box, box);
  double worst = -bound;
  for (std::size_t p = 0; p < n_pairs; ++p) {
    const Vector q = mu(rng), k = mu(rng);
    const double d = mahalanobis_distance(q, k, w);
    if (d == 0.0) continue;
    const double ratio = norm2(subtract(f(q), f(k))) / d;
    worst = std::max(worst, ratio - bound);
  }
  return worst;
}

}  // namespace ellip
