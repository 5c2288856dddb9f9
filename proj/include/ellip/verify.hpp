#pragma once

// Property suites run by `ellip verify` and the acceptance tests. Each suite
// reports its worst observed slack: for bound checks this is max(lhs - rhs),
// for tolerance checks max(error - tolerance). Non-positive means pass.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "ellip/attention.hpp"
#include "ellip/estimators.hpp"
#include "ellip/metric.hpp"
#include "ellip/nwlab.hpp"
#include "ellip/numerics.hpp"

namespace ellip::verify {

struct SuiteResult {
  std::string name;
  std::size_t checks = 0;
  std::size_t failures = 0;
  double max_slack = -std::numeric_limits<double>::infinity();

  bool passed() const { return failures == 0 && checks > 0; }

  void record(double slack) {
    ++checks;
    if (slack > 0.0 || std::isnan(slack)) ++failures;
    if (std::isnan(slack) || slack > max_slack) max_slack = slack;
  }
};

struct VerifyConfig {
  std::uint64_t seed = 20240601;
  std::size_t instances = 1000;        // Jacobian / kappa bound / stochasticity
  std::size_t bound_instances = 100;   // robustness bound
  std::size_t perturbations = 1000;    // per robustness instance
  std::size_t lipschitz_pairs = 10000;
  bool kappa_fault = false;            // negative control: off-by-one kappa
};

/// Random MaSA instance: N <= 8 keys in [-2, 2]^D, D <= 6, maxscaled random metric.
struct MasaInstance {
  Vector q;
  Matrix keys, values;
  EllipticalWeights w;
};

inline MasaInstance random_masa_instance(Rng& rng, std::size_t max_n = 8, std::size_t max_d = 6) {
  const std::size_t n = 1 + rng.below(max_n);
  const std::size_t d = 1 + rng.below(max_d);
  MasaInstance inst;
  inst.keys = random_matrix(n, d, rng, -2.0, 2.0);
  inst.values = random_matrix(n, 1 + rng.below(4), rng, -2.0, 2.0);
  inst.q.resize(d);
  for (double& x : inst.q) x = rng.uniform(-2.0, 2.0);
  Vector raw(d);
  for (double& x : raw) x = rng.uniform();
  inst.w = apply_scaling(raw, ScalingMode::maxscale);
  return inst;
}

/// Analytic MaSA Jacobian against central differences, relative 1e-6.
inline SuiteResult jacobian_suite(const VerifyConfig& cfg) {
  SuiteResult r{"masa_jacobian"};
  Rng rng = Rng(cfg.seed).child(1);
  for (std::size_t n = 0; n < cfg.instances; ++n) {
    const MasaInstance inst = random_masa_instance(rng);
    const Matrix analytic = masa_jacobian(inst.q, inst.keys, inst.w);
    const Matrix numeric = finite_diff_jacobian(
        [&](std::span<const double> x) { return masa(x, inst.keys, inst.w); }, inst.q, 1e-5);
    const double tol = 1e-6 * std::max(1.0, max_abs(analytic.data()));
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i)
      worst = std::max(worst, std::abs(analytic.data()[i] - numeric.data()[i]));
    r.record(worst - tol);
  }
  return r;
}

/// Entrywise |J_ji| <= kappa_ij m_i on random instances plus near-tight ones
/// (two keys, one at the origin, query at the origin).
inline SuiteResult kappa_bound_suite(const VerifyConfig& cfg) {
  SuiteResult r{"kappa_bound"};
  auto check = [&](const Vector& q, const Matrix& keys, const EllipticalWeights& w) {
    const Matrix jac = masa_jacobian(q, keys, w);
    const KappaMatrix kappa = detail::compute_kappa_impl(keys, cfg.kappa_fault);
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < keys.rows(); ++j)
      for (std::size_t i = 0; i < keys.cols(); ++i)
        worst = std::max(worst, std::abs(jac(j, i)) - kappa(i, j) * w.m[i]);
    r.record(worst);
  };
  Rng rng = Rng(cfg.seed).child(2);
  for (std::size_t n = 0; n < cfg.instances; ++n) {
    const MasaInstance inst = random_masa_instance(rng);
    check(inst.q, inst.keys, inst.w);
  }
  for (int n = 0; n < 20; ++n) {
    const double a = rng.uniform(0.5, 2.0);
    check(Vector{0.0}, Matrix(2, 1, Vector{0.0, a}), EllipticalWeights::identity(1));
  }
  return r;
}

/// ||h(q + eps) - h(q)|| <= robustness_bound * ||eps|| at unit temperature.
inline SuiteResult robustness_suite(const VerifyConfig& cfg) {
  SuiteResult r{"robustness_bound"};
  Rng rng = Rng(cfg.seed).child(3);
  for (std::size_t n = 0; n < cfg.bound_instances; ++n) {
    const MasaInstance inst = random_masa_instance(rng);
    const double bound = robustness_bound(inst.keys, inst.values, inst.w);
    const Vector h0 = masa_estimate(inst.q, inst.keys, inst.values, inst.w);
    Vector qe(inst.q.size()), dir(inst.q.size());
    for (std::size_t p = 0; p < cfg.perturbations; ++p) {
      for (double& x : dir) x = rng.normal();
      const double scale = std::exp(rng.uniform(std::log(1e-3), 0.0)) / norm2(dir);
      for (std::size_t i = 0; i < qe.size(); ++i) qe[i] = inst.q[i] + scale * dir[i];
      const double eps = norm2(subtract(qe, inst.q));
      const double change = norm2(subtract(masa_estimate(qe, inst.keys, inst.values, inst.w), h0));
      r.record(change - bound * eps);
    }
  }
  return r;
}

/// Attention rows sum to 1 and lie in [0, 1] for standard and elliptical kernels.
inline SuiteResult stochasticity_suite(const VerifyConfig& cfg) {
  SuiteResult r{"row_stochastic"};
  Rng rng = Rng(cfg.seed).child(4);
  for (std::size_t n = 0; n < cfg.instances; ++n) {
    const std::size_t N = 1 + rng.below(8), D = 1 + rng.below(6);
    const Matrix q = random_matrix(N, D, rng, -3, 3), k = random_matrix(N, D, rng, -3, 3);
    const Matrix v = random_matrix(N, D, rng), vp = random_matrix(N, D, rng);
    const bool causal = rng.bernoulli(0.5);
    const AttentionOutput a = standard_attention(q, k, v, AttentionConfig::standard(D, causal));
    const AttentionOutput b =
        elliptical_attention(q, k, v, vp, AttentionConfig::elliptical(D, ScalingMode::maxscale, causal), 1.0);
    double worst = -1.0;
    for (const Matrix* attn : {&a.attn, &b.attn}) {
      for (std::size_t t = 0; t < N; ++t) {
        double s = 0.0;
        for (std::size_t j = 0; j < N; ++j) {
          const double p = (*attn)(t, j);
          if (p < 0.0 || p > 1.0 || (causal && j > t && p != 0.0)) worst = std::max(worst, 1.0);
          s += p;
        }
        worst = std::max(worst, std::abs(s - 1.0) - 1e-9);
      }
    }
    r.record(worst);
  }
  return r;
}

/// Identity weights reproduce standard attention bit for bit (slack 0 on equality, 1 otherwise).
inline SuiteResult identity_reduction_suite(const VerifyConfig& cfg) {
  SuiteResult r{"identity_reduction"};
  Rng rng = Rng(cfg.seed).child(5);
  for (std::size_t n = 0; n < 200; ++n) {
    const std::size_t N = 1 + rng.below(8), D = 1 + rng.below(6);
    const Matrix q = random_matrix(N, D, rng, -3, 3), k = random_matrix(N, D, rng, -3, 3);
    const Matrix v = random_matrix(N, D, rng), vp = random_matrix(N, D, rng);
    const bool causal = rng.bernoulli(0.5);
    const AttentionOutput a = standard_attention(q, k, v, AttentionConfig::standard(D, causal));
    const AttentionOutput b =
        elliptical_attention(q, k, v, vp, AttentionConfig::elliptical(D, ScalingMode::identity, causal), 1.0);
    r.record(a.attn == b.attn && a.h == b.h ? -1.0 : 1.0);
  }
  return r;
}

/// With keys of unit M-norm, Mahalanobis-softmax weights at temperature s^2 equal
/// normalised Gaussian kernel weights exp(-d^2 / 2 s^2), within 1e-9. Identity M
/// covers the Euclidean NW / attention equivalence.
inline SuiteResult kernel_equivalence_suite(const VerifyConfig& cfg) {
  SuiteResult r{"kernel_equivalence"};
  Rng rng = Rng(cfg.seed).child(6);
  for (std::size_t n = 0; n < cfg.instances; ++n) {
    const std::size_t N = 1 + rng.below(8), D = 1 + rng.below(6);
    Vector raw(D);
    for (double& x : raw) x = rng.uniform();
    const EllipticalWeights w = n % 2 == 0 ? EllipticalWeights::identity(D) : apply_scaling(raw, ScalingMode::maxscale);
    Matrix keys = random_matrix(N, D, rng, -2, 2);
    for (std::size_t j = 0; j < N; ++j) {
      auto row = keys.row(j);
      const double len = mahalanobis_distance(row, Vector(D, 0.0), w);
      for (double& x : row) x /= len;
    }
    const Matrix values = random_matrix(N, 2, rng);
    Matrix q(1, D);
    for (double& x : q.data()) x = rng.uniform(-2, 2);
    const double sigma = rng.uniform(0.3, 2.0);
    AttentionConfig ac = AttentionConfig::standard(D);
    ac.temperature = sigma * sigma;
    ac.weights = w;
    const AttentionOutput att = fixed_metric_attention(q, keys, values, ac);
    const NWDataset data{keys, values, 0.0, SyntheticFunction::constant(D, Vector{0.0, 0.0})};
    const Vector nw = nw_estimate(q.row(0), data, sigma, w);
    double worst = 0.0;
    for (std::size_t c = 0; c < nw.size(); ++c) worst = std::max(worst, std::abs(nw[c] - att.h(0, c)));
    r.record(worst - 1e-9);
  }
  return r;
}

/// Centred differences recover sum_j |A_ji| on linear maps to 1e-10.
inline SuiteResult consistent_linear_suite(const VerifyConfig& cfg) {
  SuiteResult r{"consistent_linear"};
  Rng rng = Rng(cfg.seed).child(7);
  for (std::size_t n = 0; n < 100; ++n) {
    const std::size_t D = 1 + rng.below(6), Dv = 1 + rng.below(4);
    const SyntheticFunction f = SyntheticFunction::linear(random_matrix(Dv, D, rng, -2, 2));
    const Matrix pts = random_matrix(20, D, rng, -3, 3);
    const double t = std::exp(rng.uniform(std::log(1e-3), std::log(1.0)));
    const VariabilityEstimate est = estimate_consistent(f.as_function(), pts, t);
    const Vector truth = f.variability_on_box(3.0);
    double worst = 0.0;
    for (std::size_t i = 0; i < D; ++i) worst = std::max(worst, std::abs(est.raw[i] - truth[i]));
    r.record(worst - 1e-10);
  }
  return r;
}

/// ||f(q) - f(k)|| <= (sum_i G_i / sqrt(m_i)) d(q, k) for catalog functions with known G.
inline SuiteResult lipschitz_suite(const VerifyConfig& cfg) {
  SuiteResult r{"lipschitz_transfer"};
  Rng rng = Rng(cfg.seed).child(8);
  const std::vector<SyntheticFunction> fs{
      SyntheticFunction::separable_sinusoid({1.0, 0.0}),
      SyntheticFunction::separable_sinusoid({2.0, 0.5, 1.0}),
      SyntheticFunction::linear(Matrix::from_rows({{1.0, -2.0, 0.5}, {0.0, 3.0, 1.0}})),
  };
  for (const SyntheticFunction& f : fs) {
    for (int k = 0; k < 3; ++k) {
      Vector raw(f.dim);
      for (double& x : raw) x = rng.uniform();
      const EllipticalWeights w = apply_scaling(raw, ScalingMode::maxscale);
      r.record(check_lipschitz_transfer(f, w, cfg.lipschitz_pairs / 9 + 1, rng, 3.0));
    }
  }
  return r;
}

/// Causal rows are unchanged when the sequence is extended.
inline SuiteResult causal_suite(const VerifyConfig& cfg) {
  SuiteResult r{"causal_prefix"};
  Rng rng = Rng(cfg.seed).child(9);
  for (std::size_t n = 0; n < 200; ++n) {
    const std::size_t N = 2 + rng.below(7), D = 1 + rng.below(6);
    const Matrix q = random_matrix(N, D, rng), k = random_matrix(N, D, rng);
    const Matrix v = random_matrix(N, D, rng), vp = random_matrix(N, D, rng);
    const std::size_t cut = 1 + rng.below(N - 1);
    auto prefix = [cut](const Matrix& m) {
      Matrix out(cut, m.cols());
      for (std::size_t t = 0; t < cut; ++t)
        for (std::size_t c = 0; c < m.cols(); ++c) out(t, c) = m(t, c);
      return out;
    };
    const AttentionConfig ac = AttentionConfig::elliptical(D, ScalingMode::maxscale, true);
    const AttentionOutput full = elliptical_attention(q, k, v, vp, ac, 1.0);
    const AttentionOutput part = elliptical_attention(prefix(q), prefix(k), prefix(v), prefix(vp), ac, 1.0);
    double worst = -1.0;
    for (std::size_t t = 0; t < cut; ++t)
      for (std::size_t c = 0; c < D; ++c)
        if (full.h(t, c) != part.h(t, c)) worst = 1.0;
    r.record(worst);
  }
  return r;
}

inline std::vector<SuiteResult> run_all(const VerifyConfig& cfg) {
  return {jacobian_suite(cfg),        kappa_bound_suite(cfg),          robustness_suite(cfg),
          stochasticity_suite(cfg),   identity_reduction_suite(cfg), kernel_equivalence_suite(cfg),
          consistent_linear_suite(cfg), lipschitz_suite(cfg),     causal_suite(cfg)};
}

}  // namespace ellip::verify
