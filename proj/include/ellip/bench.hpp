#pragma once

// Fidelity experiments for the variability estimators: ranking agreement of the
// over-layers estimate with the oracle, the value-noise bias bound, and the
// convergence rate of the centred-difference estimator.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "ellip/estimators.hpp"
#include "ellip/numerics.hpp"
#include "ellip/stats.hpp"

namespace ellip::bench {

struct OrderingConfig {
  std::size_t dim = 6;
  double box = 3.0;
  LayerPairConfig layer{1000, 0.05, 0.1, 0.01};
  std::size_t oracle_samples = kOracleSamples;
};

/// Minimum tau over 20 calibration seeds (1000..1019) minus 0.05.
inline constexpr double kOrderingTauThreshold = 0.55;

struct OrderingResult {
  Vector amplitudes;
  Vector overlayers, oracle;
  double kendall_tau = 0.0;
};

/// Separable sinusoid with seeded amplitudes in [0.2, 2]; Kendall tau between
/// the over-layers estimate and the oracle.
inline OrderingResult ordering_fidelity(const OrderingConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  Rng amp_rng = rng.child(1), layer_rng = rng.child(2), oracle_rng = rng.child(3);
  OrderingResult r;
  r.amplitudes.resize(cfg.dim);
  for (double& a : r.amplitudes) a = amp_rng.uniform(0.2, 2.0);
  const SyntheticFunction f = SyntheticFunction::separable_sinusoid(r.amplitudes);
  const PointSampler mu = uniform_box(cfg.dim, -cfg.box, cfg.box);
  const LayerPair pair = simulate_layer_pair(f, mu, cfg.layer, layer_rng);
  r.overlayers = estimate_overlayers(pair.values_next, pair.values_prev, cfg.layer.delta).raw;
  r.oracle = oracle_variability(f.as_function(), mu, cfg.oracle_samples, oracle_rng).raw;
  r.kendall_tau = stats::kendall_tau(r.overlayers, r.oracle);
  return r;
}

struct NoiseBiasResult {
  double sigma = 0.0;
  std::size_t n = 0;
  Vector gap;          // |m_i - E|delta f_i||
  double bound = 0.0;  // (2 / sqrt(pi)) sigma
  double slack = 0.0;  // 3 sigma / sqrt(n) Monte Carlo allowance
  double max_excess() const {
    double worst = -bound - slack;
    for (double g : gap) worst = std::max(worst, g - bound - slack);
    return worst;
  }
};

/// Over-layers estimate (delta = 1) from noisy values against the same
/// statistic on the noise-free values.
inline NoiseBiasResult noise_bias(double sigma, std::size_t n, std::uint64_t seed,
                                    std::size_t dim = 4) {
  Rng rng(seed);
  Vector amps(dim);
  for (std::size_t i = 0; i < dim; ++i) amps[i] = 0.5 + 0.5 * static_cast<double>(i);
  const SyntheticFunction f = SyntheticFunction::separable_sinusoid(amps);
  const LayerPair pair = simulate_layer_pair(f, uniform_box(dim, -3.0, 3.0), {n, 0.05, 0.1, sigma}, rng);
  const Vector noisy = estimate_overlayers(pair.values_next, pair.values_prev, 1.0).raw;
  const Vector clean = estimate_overlayers(pair.clean_next, pair.clean_prev, 1.0).raw;
  NoiseBiasResult r;
  r.sigma = sigma;
  r.n = n;
  for (std::size_t i = 0; i < dim; ++i) r.gap.push_back(std::abs(noisy[i] - clean[i]));
  r.bound = 2.0 / std::sqrt(std::numbers::pi) * sigma;
  r.slack = 3.0 * sigma / std::sqrt(static_cast<double>(n));
  return r;
}

/// f(x) = (sin x1, cos x2, 0) on Uniform[-pi, pi]^3; analytic variability (2/pi, 2/pi, 0).
inline SyntheticFunction rate_function() {
  SyntheticFunction f;
  f.name = "sin_cos_zero";
  f.dim = f.out_dim = 3;
  f.eval = [](std::span<const double> x) { return Vector{std::sin(x[0]), std::cos(x[1]), 0.0}; };
  f.variability_on_box = [](double) {
    const double v = 2.0 / std::numbers::pi;
    return Vector{v, v, 0.0};
  };
  return f;
}

struct RatePoint {
  std::size_t n = 0;
  double mean_error = 0.0;  // mean over repetitions of sum_i |estimate_i - truth_i|
};

struct RateResult {
  std::vector<RatePoint> points;
  double slope = 0.0;
};

inline RateResult consistency_rate(const std::vector<std::size_t>& ns, std::size_t reps, double t,
                                   std::uint64_t seed) {
  const SyntheticFunction f = rate_function();
  const Vector truth = f.variability_on_box(std::numbers::pi);
  const PointSampler mu = uniform_box(3, -std::numbers::pi, std::numbers::pi);
  const VectorFunction fn = f.as_function();
  RateResult r;
  std::vector<double> xs, ys;
  for (std::size_t n : ns) {
    double total = 0.0;
    for (std::size_t k = 0; k < reps; ++k) {
      Rng rng = Rng(seed).child(n).child(k);
      const VariabilityEstimate est = estimate_consistent(fn, sample_points(mu, n, rng), t);
      for (std::size_t i = 0; i < 3; ++i) total += std::abs(est.raw[i] - truth[i]);
    }
    r.points.push_back({n, total / static_cast<double>(reps)});
    xs.push_back(static_cast<double>(n));
    ys.push_back(r.points.back().mean_error);
  }
  r.slope = stats::loglog_slope(xs, ys);
  return r;
}

}  // namespace ellip::bench
