#pragma once

// Attention kernels. Standard attention is softmax(Q K^T / tau) V; elliptical
// attention replaces the dot product with q^T M k, where M = diag(m) is
// estimated from the current and previous layer's values. Both share one
// kernel so identity weights reproduce standard attention bit for bit.

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ellip/autograd.hpp"
#include "ellip/csv.hpp"
#include "ellip/estimators.hpp"
#include "ellip/metric.hpp"
#include "ellip/numerics.hpp"

namespace ellip {

struct AttentionConfig {
  std::size_t head_dim = 0;
  double temperature = 1.0;
  bool causal = false;
  EllipticalWeights weights;  // metric for standard/fixed use; mode+floor for elliptical

  /// temperature sqrt(D), identity weights.
  static AttentionConfig standard(std::size_t head_dim, bool causal = false) {
    return {head_dim, std::sqrt(static_cast<double>(head_dim)), causal,
            EllipticalWeights::identity(head_dim)};
  }

  static AttentionConfig elliptical(std::size_t head_dim, ScalingMode mode, bool causal = false,
                                    double floor = kDefaultFloor) {
    AttentionConfig c = standard(head_dim, causal);
    c.weights.mode = mode;
    c.weights.floor = floor;
    return c;
  }

  void validate() const {
    if (!(temperature > 0.0)) throw ParameterError("AttentionConfig: temperature must be positive");
    if (weights.dim() != head_dim) throw ShapeError("AttentionConfig: weights length != head_dim");
  }
};

struct AttentionOutput {
  Matrix h;       // N x D_v
  Matrix attn;    // N x N, rows sum to 1
  Matrix metric;  // diagonal of M used by each query row (N x D)
};

namespace detail {

inline void check_qkv(const Matrix& q, const Matrix& k, const Matrix& v) {
  if (q.cols() != k.cols()) throw ShapeError("attention: query/key width mismatch");
  if (k.rows() != v.rows()) throw ShapeError("attention: key/value count mismatch");
  if (q.rows() == 0 || k.rows() == 0) throw ShapeError("attention: empty input");
}

/// Row t of the output uses metric row t (or row 0 when metric has one row).
/// Masked logits are set to -inf before the softmax.
inline AttentionOutput attend(const Matrix& q, const Matrix& k, const Matrix& v,
                              const Matrix& metric, double temperature, bool causal) {
  check_qkv(q, k, v);
  if (causal && q.rows() != k.rows()) throw ShapeError("attention: causal needs N queries = N keys");
  const std::size_t n = q.rows();
  const std::size_t nk = k.rows();
  const std::size_t d = q.cols();
  const double inv_temp = 1.0 / temperature;
  AttentionOutput out{Matrix(n, v.cols()), Matrix(n, nk), Matrix(n, d)};
  Vector scaled(d);
  for (std::size_t t = 0; t < n; ++t) {
    auto m = metric.row(metric.rows() == 1 ? 0 : t);
    std::copy(m.begin(), m.end(), out.metric.row(t).begin());
    auto qt = q.row(t);
    for (std::size_t i = 0; i < d; ++i) scaled[i] = qt[i] * m[i];
    auto logits = out.attn.row(t);
    for (std::size_t j = 0; j < nk; ++j) {
      if (causal && j > t) {
        logits[j] = -std::numeric_limits<double>::infinity();
        continue;
      }
      double s = 0.0;
      auto kj = k.row(j);
      for (std::size_t i = 0; i < d; ++i) s += scaled[i] * kj[i];
      logits[j] = s * inv_temp;
    }
    softmax_inplace(logits);
    auto ht = out.h.row(t);
    for (std::size_t j = 0; j < nk; ++j) {
      const double p = logits[j];
      if (p == 0.0) continue;
      auto vj = v.row(j);
      for (std::size_t c = 0; c < ht.size(); ++c) ht[c] += p * vj[c];
    }
  }
  return out;
}

inline Matrix metric_rows(const EllipticalWeights& w) { return Matrix::row_vector(w.m); }

}  // namespace detail

/// h_i = sum_j softmax_j(q_i^T k_j / tau) v_j.
inline AttentionOutput standard_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                                          const AttentionConfig& cfg) {
  cfg.validate();
  for (double x : cfg.weights.m)
    if (x != 1.0) throw ParameterError("standard_attention: weights must be identity");
  if (q.cols() != cfg.head_dim) throw ShapeError("standard_attention: query width != head_dim");
  return detail::attend(q, k, v, detail::metric_rows(cfg.weights), cfg.temperature, cfg.causal);
}

/// softmax(q^T M k_j / tau) with a fixed metric (no estimation).
inline AttentionOutput fixed_metric_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                                              const AttentionConfig& cfg) {
  cfg.validate();
  if (q.cols() != cfg.head_dim) throw ShapeError("attention: query width != head_dim");
  return detail::attend(q, k, v, detail::metric_rows(cfg.weights), cfg.temperature, cfg.causal);
}

/// Mahalanobis softmax at unit temperature: component j is
/// exp(q^T M k_j) / sum_s exp(q^T M k_s).
inline Vector masa(std::span<const double> q, const Matrix& keys, const EllipticalWeights& w) {
  if (q.size() != keys.cols() || w.dim() != q.size()) throw ShapeError("masa: dimension mismatch");
  Vector logits(keys.rows());
  for (std::size_t j = 0; j < keys.rows(); ++j) {
    double s = 0.0;
    auto kj = keys.row(j);
    for (std::size_t i = 0; i < q.size(); ++i) s += q[i] * w.m[i] * kj[i];
    logits[j] = s;
  }
  softmax_inplace(logits);
  return logits;
}

/// Analytic N x D Jacobian: J(j, i) = m_i (k_j^i - sum_s k_s^i p_s) p_j.
inline Matrix masa_jacobian(std::span<const double> q, const Matrix& keys,
                            const EllipticalWeights& w) {
  const Vector p = masa(q, keys, w);
  const std::size_t n = keys.rows();
  const std::size_t d = keys.cols();
  Vector kbar(d, 0.0);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t i = 0; i < d; ++i) kbar[i] += keys(s, i) * p[s];
  Matrix jac(n, d);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < d; ++i) jac(j, i) = w.m[i] * (keys(j, i) - kbar[i]) * p[j];
  return jac;
}

/// Unit-temperature estimator sum_j MaSA_j(q) v_j, the map the robustness bound controls.
inline Vector masa_estimate(std::span<const double> q, const Matrix& keys, const Matrix& values,
                            const EllipticalWeights& w) {
  if (keys.rows() != values.rows()) throw ShapeError("masa_estimate: key/value count mismatch");
  const Vector p = masa(q, keys, w);
  Vector h(values.cols(), 0.0);
  for (std::size_t j = 0; j < keys.rows(); ++j)
    for (std::size_t c = 0; c < h.size(); ++c) h[c] += p[j] * values(j, c);
  return h;
}

/// Metric diagonal per query row from the over-layers estimate. Non-causal: one
/// metric from all rows. Causal: row t only sees rows 0..t.
inline Matrix estimate_row_metrics(const Matrix& v, const Matrix& v_prev, double delta,
                                   ScalingMode mode, double floor, bool causal, Rng* rng) {
  if (!v.same_shape(v_prev)) throw ShapeError("elliptical metric: value shapes differ");
  if (!(delta > 0.0)) throw ParameterError("elliptical metric: delta must be positive");
  const std::size_t d = v.cols();
  if (!causal) {
    const VariabilityEstimate est = estimate_overlayers(v, v_prev, delta);
    return Matrix::row_vector(apply_scaling(est.raw, mode, floor, rng).m);
  }
  // A single draw per call keeps random mode causal as well.
  Vector random_draw;
  if (mode == ScalingMode::random) {
    if (rng == nullptr) throw ParameterError("elliptical metric: random mode needs an Rng");
    random_draw = apply_scaling(Vector(d, 1.0), mode, floor, rng).m;
  }
  Matrix out(v.rows(), d);
  Vector cumulative(d, 0.0), raw(d);
  for (std::size_t t = 0; t < v.rows(); ++t) {
    for (std::size_t i = 0; i < d; ++i) cumulative[i] += std::abs(v(t, i) - v_prev(t, i));
    const double scale = 1.0 / (static_cast<double>(t + 1) * delta);
    bool all_zero = true;
    for (std::size_t i = 0; i < d; ++i) {
      raw[i] = cumulative[i] * scale;
      all_zero = all_zero && raw[i] == 0.0;
    }
    const Vector m = mode == ScalingMode::random && !all_zero
                         ? random_draw
                         : apply_scaling(raw, mode == ScalingMode::random ? ScalingMode::identity
                                                                          : mode,
                                         floor)
                               .m;
    std::copy(m.begin(), m.end(), out.row(t).begin());
  }
  return out;
}

/// softmax(Q M K^T / tau) V with M estimated from (v, v_prev). The metric is
/// computed from values only and is a constant as far as gradients go.
inline AttentionOutput elliptical_attention(const Matrix& q, const Matrix& k, const Matrix& v,
                                            const Matrix& v_prev, const AttentionConfig& cfg,
                                            double delta, Rng* rng = nullptr) {
  cfg.validate();
  detail::check_qkv(q, k, v);
  if (q.cols() != cfg.head_dim) throw ShapeError("elliptical_attention: query width != head_dim");
  const Matrix metric = estimate_row_metrics(v, v_prev, delta, cfg.weights.mode, cfg.weights.floor,
                                             cfg.causal, rng);
  return detail::attend(q, k, v, metric, cfg.temperature, cfg.causal);
}

/// Per-row min-max scaling to [0, 1]; a constant row becomes all zeros.
inline Matrix minmax_scale_rows(Matrix a) {
  for (std::size_t r = 0; r < a.rows(); ++r) {
    auto row = a.row(r);
    if (row.empty()) continue;
    const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
    const double mn = *lo, range = *hi - *lo;
    for (double& x : row) x = range > 0.0 ? (x - mn) / range : 0.0;
  }
  return a;
}

/// Attention matrix as CSV, one row per query.
inline std::string heatmap_csv(const Matrix& attn, bool minmax_scaled) {
  std::vector<std::string> header{"query"};
  for (std::size_t j = 0; j < attn.cols(); ++j) header.push_back("k" + std::to_string(j));
  csv::Table table(header);
  const Matrix shown = minmax_scaled ? minmax_scale_rows(attn) : attn;
  for (std::size_t r = 0; r < shown.rows(); ++r) {
    std::vector<std::string> row{std::to_string(r)};
    for (double x : shown.row(r)) row.push_back(csv::fmt(x));
    table.add_row(std::move(row));
  }
  std::string prefix = minmax_scaled
                           ? "# attention rows min-max scaled to [0,1]; constant rows written as 0\n"
                           : "";
  return prefix + table.str();
}

// ---------------------------------------------------------------------------
// Differentiable multi-head attention for the tape.

struct AttentionPlan {
  std::size_t batch = 1;
  std::size_t seq_len = 1;
  std::size_t heads = 1;
  std::size_t head_dim = 1;
  bool causal = true;
  double temperature = 1.0;
  /// One seq_len x head_dim metric per (batch, head), index b * heads + h.
  /// Empty means the identity metric.
  std::vector<Matrix> metrics;
};

struct MultiHeadResult {
  ad::Var out;                // (batch*seq_len) x (heads*head_dim)
  std::vector<Matrix> probs;  // per (batch, head), seq_len x seq_len
};

/// Inputs are (batch*seq_len) x (heads*head_dim) with head h in columns
/// [h*D, (h+1)*D). Gradients flow to q, k, v; metrics are constants.
inline MultiHeadResult multihead_attention(ad::Tape& tape, ad::Var q, ad::Var k, ad::Var v,
                                           AttentionPlan plan) {
  const Matrix& qv = tape.value(q);
  const Matrix& kv = tape.value(k);
  const Matrix& vv = tape.value(v);
  const std::size_t B = plan.batch, T = plan.seq_len, H = plan.heads, D = plan.head_dim;
  const std::size_t width = H * D;
  if (qv.rows() != B * T || qv.cols() != width || !qv.same_shape(kv) || !qv.same_shape(vv)) {
    throw ShapeError("multihead_attention: input shapes do not match the plan");
  }
  if (!plan.metrics.empty()) {
    if (plan.metrics.size() != B * H) throw ShapeError("multihead_attention: metric count");
    for (const Matrix& m : plan.metrics)
      if (m.rows() != T || m.cols() != D) throw ShapeError("multihead_attention: metric shape");
  }
  const double inv_temp = 1.0 / plan.temperature;
  Matrix out(B * T, width);
  std::vector<Matrix> probs(B * H, Matrix(T, T));
  Vector scaled(D);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < H; ++h) {
      const Matrix* metric = plan.metrics.empty() ? nullptr : &plan.metrics[b * H + h];
      Matrix& p = probs[b * H + h];
      const std::size_t c0 = h * D;
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t rt = b * T + t;
        for (std::size_t i = 0; i < D; ++i)
          scaled[i] = metric ? qv(rt, c0 + i) * (*metric)(t, i) : qv(rt, c0 + i);
        auto logits = p.row(t);
        for (std::size_t j = 0; j < T; ++j) {
          if (plan.causal && j > t) {
            logits[j] = -std::numeric_limits<double>::infinity();
            continue;
          }
          const std::size_t rj = b * T + j;
          double s = 0.0;
          for (std::size_t i = 0; i < D; ++i) s += scaled[i] * kv(rj, c0 + i);
          logits[j] = s * inv_temp;
        }
        softmax_inplace(logits);
        for (std::size_t j = 0; j < T; ++j) {
          const double pj = logits[j];
          if (pj == 0.0) continue;
          const std::size_t rj = b * T + j;
          for (std::size_t i = 0; i < D; ++i) out(rt, c0 + i) += pj * vv(rj, c0 + i);
        }
      }
    }
  }
  MultiHeadResult result{ad::Var{}, probs};
  result.out = tape.record(
      std::move(out),
      [q, k, v, plan = std::move(plan), probs = std::move(probs)](ad::Tape& tp, const Matrix& g) {
        const Matrix& qv = tp.value(q);
        const Matrix& kv = tp.value(k);
        const Matrix& vv = tp.value(v);
        const std::size_t B = plan.batch, T = plan.seq_len, H = plan.heads, D = plan.head_dim;
        const double inv_temp = 1.0 / plan.temperature;
        Matrix gq(qv.rows(), qv.cols()), gk(kv.rows(), kv.cols()), gv(vv.rows(), vv.cols());
        Vector dp(T), ds(T), acc(D);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t h = 0; h < H; ++h) {
            const Matrix* metric = plan.metrics.empty() ? nullptr : &plan.metrics[b * H + h];
            const Matrix& p = probs[b * H + h];
            const std::size_t c0 = h * D;
            for (std::size_t t = 0; t < T; ++t) {
              const std::size_t rt = b * T + t;
              const std::size_t jmax = plan.causal ? t + 1 : T;
              double weighted = 0.0;
              for (std::size_t j = 0; j < jmax; ++j) {
                const std::size_t rj = b * T + j;
                const double pj = p(t, j);
                double s = 0.0;
                for (std::size_t i = 0; i < D; ++i) {
                  s += g(rt, c0 + i) * vv(rj, c0 + i);
                  gv(rj, c0 + i) += pj * g(rt, c0 + i);
                }
                dp[j] = s;
                weighted += s * pj;
              }
              std::fill(acc.begin(), acc.end(), 0.0);
              for (std::size_t j = 0; j < jmax; ++j) {
                const std::size_t rj = b * T + j;
                ds[j] = p(t, j) * (dp[j] - weighted) * inv_temp;
                for (std::size_t i = 0; i < D; ++i) {
                  acc[i] += ds[j] * kv(rj, c0 + i);
                  const double qm = metric ? qv(rt, c0 + i) * (*metric)(t, i) : qv(rt, c0 + i);
                  gk(rj, c0 + i) += ds[j] * qm;
                }
              }
              for (std::size_t i = 0; i < D; ++i)
                gq(rt, c0 + i) += metric ? acc[i] * (*metric)(t, i) : acc[i];
            }
          }
        }
        tp.accumulate(q, gq);
        tp.accumulate(k, gk);
        tp.accumulate(v, gv);
      },
      tape.requires_grad(q) || tape.requires_grad(k) || tape.requires_grad(v));
  return result;
}

}  // namespace ellip
