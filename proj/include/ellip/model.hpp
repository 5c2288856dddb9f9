#pragma once

// Toy decoder-only transformer (pre-LN, GELU feedforward, causal attention) with
// elliptical attention from the second layer on, Adam training, token
// corruption and representation diagnostics.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ellip/attention.hpp"
#include "ellip/autograd.hpp"
#include "ellip/csv.hpp"
#include "ellip/errors.hpp"
#include "ellip/metric.hpp"
#include "ellip/numerics.hpp"

namespace ellip {

struct ModelConfig {
  std::size_t layers = 4;
  std::size_t heads = 2;
  std::size_t head_dim = 16;
  std::size_t embed = 32;
  std::size_t ff = 64;
  std::size_t vocab = 17;
  std::size_t context = 64;
  bool elliptical = false;
  ScalingMode mode = ScalingMode::maxscale;
  double delta = 1.0;
  double floor = kDefaultFloor;
  std::uint64_t seed = 0;
  // optimisation
  std::size_t batch = 8;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double init_std = 0.02;

  void validate() const {
    if (layers == 0 || heads == 0 || head_dim == 0 || vocab == 0 || context == 0 || ff == 0) {
      throw ParameterError("ModelConfig: sizes must be positive");
    }
    if (embed != heads * head_dim) throw ParameterError("ModelConfig: embed must equal heads*head_dim");
    if (elliptical && layers < 2) throw ParameterError("ModelConfig: elliptical needs at least 2 layers");
    if (!(delta > 0.0)) throw ParameterError("ModelConfig: delta must be positive");
    if (!(floor > 0.0)) throw ParameterError("ModelConfig: floor must be positive");
    if (batch == 0) throw ParameterError("ModelConfig: batch must be positive");
    if (!(lr > 0.0)) throw ParameterError("ModelConfig: lr must be positive");
  }
};

// ---------------------------------------------------------------------------
// Parameters

struct Params {
  std::vector<std::string> names;
  std::vector<Matrix> tensors;

  std::size_t count() const { return tensors.size(); }
};

namespace param {
inline constexpr std::size_t kTokEmb = 0, kPosEmb = 1, kFirstLayer = 2, kPerLayer = 13;
// offsets within a layer block
inline constexpr std::size_t kLn1G = 0, kLn1B = 1, kWq = 2, kWk = 3, kWv = 4, kWo = 5, kBo = 6,
                             kLn2G = 7, kLn2B = 8, kW1 = 9, kB1 = 10, kW2 = 11, kB2 = 12;
inline std::size_t layer(std::size_t l, std::size_t off) { return kFirstLayer + l * kPerLayer + off; }
inline std::size_t final_base(std::size_t layers) { return kFirstLayer + layers * kPerLayer; }
}  // namespace param

inline Params init_params(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng = Rng(cfg.seed).child(0x1417);
  Params p;
  auto normal = [&](const std::string& name, std::size_t r, std::size_t c) {
    Matrix m(r, c);
    for (double& x : m.data()) x = cfg.init_std * rng.normal();
    p.names.push_back(name);
    p.tensors.push_back(std::move(m));
  };
  auto fill = [&](const std::string& name, std::size_t r, std::size_t c, double v) {
    p.names.push_back(name);
    p.tensors.emplace_back(r, c, v);
  };
  const std::size_t E = cfg.embed;
  normal("tok_emb", cfg.vocab, E);
  normal("pos_emb", cfg.context, E);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    fill(pre + "ln1_g", 1, E, 1.0);
    fill(pre + "ln1_b", 1, E, 0.0);
    normal(pre + "wq", E, E);
    normal(pre + "wk", E, E);
    normal(pre + "wv", E, E);
    normal(pre + "wo", E, E);
    fill(pre + "bo", 1, E, 0.0);
    fill(pre + "ln2_g", 1, E, 1.0);
    fill(pre + "ln2_b", 1, E, 0.0);
    normal(pre + "w1", E, cfg.ff);
    fill(pre + "b1", 1, cfg.ff, 0.0);
    normal(pre + "w2", cfg.ff, E);
    fill(pre + "b2", 1, E, 0.0);
  }
  fill("lnf_g", 1, E, 1.0);
  fill("lnf_b", 1, E, 0.0);
  normal("w_out", E, cfg.vocab);
  fill("b_out", 1, cfg.vocab, 0.0);
  return p;
}

// ---------------------------------------------------------------------------
// Forward pass

/// Per-layer record. `prev_values` is the previous layer's value projection
/// (what the over-layers estimator compares against); empty on layer 0.
struct AttentionLayerState {
  std::size_t layer = 0;
  Matrix queries, keys, values;  // (B*T) x E, heads side by side
  Matrix prev_values;
  std::vector<Matrix> metrics;  // per (batch, head), T x D; empty for standard layers
  std::vector<Matrix> probs;    // per (batch, head), T x T
  Matrix hidden;                // residual stream after the block
};

struct ForwardOptions {
  /// Replace estimated metrics with these (per layer, per (batch, head)).
  const std::vector<std::vector<Matrix>>* frozen_metrics = nullptr;
  /// Route each layer's v_prev through its own tape leaf before it reaches the estimator.
  bool prev_value_leaves = false;
  /// Sub-stream for random scaling mode.
  std::uint64_t rng_stream = 0;
};

struct ForwardResult {
  ad::Var logits;  // (B*T) x vocab
  std::vector<ad::Var> param_vars;
  std::vector<ad::Var> prev_value_vars;  // one per layer >= 1 when requested
  std::vector<AttentionLayerState> layers;
  std::size_t batch = 0, seq_len = 0;
};

inline void check_tokens(const std::vector<std::vector<std::size_t>>& batch, const ModelConfig& cfg) {
  if (batch.empty()) throw InputError("forward: empty batch");
  const std::size_t T = batch.front().size();
  if (T == 0) throw InputError("forward: empty sequence");
  if (T > cfg.context) throw InputError("forward: sequence longer than the context");
  for (const auto& seq : batch) {
    if (seq.size() != T) throw InputError("forward: ragged batch");
    for (std::size_t id : seq)
      if (id >= cfg.vocab) throw InputError("forward: token id " + std::to_string(id) + " out of range");
  }
}

/// Per-(batch, head) T x D blocks of a (B*T) x (H*D) matrix.
inline Matrix head_block(const Matrix& m, std::size_t b, std::size_t h, std::size_t T, std::size_t D) {
  Matrix out(T, D);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < D; ++i) out(t, i) = m(b * T + t, h * D + i);
  return out;
}

inline ForwardResult forward(ad::Tape& tape, const Params& params, const ModelConfig& cfg,
                             const std::vector<std::vector<std::size_t>>& batch,
                             const ForwardOptions& opt = {}) {
  cfg.validate();
  check_tokens(batch, cfg);
  const std::size_t B = batch.size(), T = batch.front().size(), H = cfg.heads, D = cfg.head_dim;
  ForwardResult res;
  res.batch = B;
  res.seq_len = T;
  for (const Matrix& m : params.tensors) res.param_vars.push_back(tape.leaf(m));
  auto P = [&](std::size_t idx) { return res.param_vars[idx]; };

  std::vector<std::size_t> ids, pos;
  for (const auto& seq : batch)
    for (std::size_t t = 0; t < T; ++t) {
      ids.push_back(seq[t]);
      pos.push_back(t);
    }
  ad::Var x = ad::add(tape, ad::gather_rows(tape, P(param::kTokEmb), ids),
                      ad::gather_rows(tape, P(param::kPosEmb), pos));

  const double temperature = std::sqrt(static_cast<double>(D));
  Matrix prev_values;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    using namespace param;
    AttentionLayerState st;
    st.layer = l;
    ad::Var a = ad::layer_norm(tape, x, P(layer(l, kLn1G)), P(layer(l, kLn1B)));
    ad::Var q = ad::matmul(tape, a, P(layer(l, kWq)));
    ad::Var k = ad::matmul(tape, a, P(layer(l, kWk)));
    ad::Var v = ad::matmul(tape, a, P(layer(l, kWv)));

    AttentionPlan plan{B, T, H, D, true, temperature, {}};
    if (cfg.elliptical && l >= 1) {
      if (opt.frozen_metrics) {
        plan.metrics = opt.frozen_metrics->at(l);
      } else {
        // The estimator only ever sees plain numbers: no tape edge into M.
        const Matrix* vp = &prev_values;
        if (opt.prev_value_leaves) {
          res.prev_value_vars.push_back(tape.leaf(prev_values));
          vp = &tape.value(res.prev_value_vars.back());
        }
        const Matrix vp_copy = *vp;
        Rng rng = Rng(cfg.seed).child(0xe11f).child(opt.rng_stream).child(l);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t h = 0; h < H; ++h) {
            plan.metrics.push_back(estimate_row_metrics(head_block(tape.value(v), b, h, T, D),
                                                        head_block(vp_copy, b, h, T, D), cfg.delta,
                                                        cfg.mode, cfg.floor, true, &rng));
          }
        }
      }
    }
    st.metrics = plan.metrics;
    MultiHeadResult att = multihead_attention(tape, q, k, v, std::move(plan));
    ad::Var proj = ad::add_row(tape, ad::matmul(tape, att.out, P(layer(l, kWo))), P(layer(l, kBo)));
    x = ad::add(tape, x, proj);
    ad::Var bnorm = ad::layer_norm(tape, x, P(layer(l, kLn2G)), P(layer(l, kLn2B)));
    ad::Var hid = ad::gelu(tape, ad::add_row(tape, ad::matmul(tape, bnorm, P(layer(l, kW1))), P(layer(l, kB1))));
    ad::Var ffo = ad::add_row(tape, ad::matmul(tape, hid, P(layer(l, kW2))), P(layer(l, kB2)));
    x = ad::add(tape, x, ffo);

    st.queries = tape.value(q);
    st.keys = tape.value(k);
    st.values = tape.value(v);
    st.prev_values = prev_values;
    st.probs = std::move(att.probs);
    st.hidden = tape.value(x);
    prev_values = tape.value(v);
    res.layers.push_back(std::move(st));
  }
  const std::size_t fb = param::final_base(cfg.layers);
  ad::Var f = ad::layer_norm(tape, x, P(fb), P(fb + 1));
  res.logits = ad::add_row(tape, ad::matmul(tape, f, P(fb + 2)), P(fb + 3));
  return res;
}

/// Single-sequence convenience wrapper: logits T x vocab.
inline Matrix forward_logits(const Params& params, const ModelConfig& cfg,
                             const std::vector<std::size_t>& tokens) {
  ad::Tape tape;
  const ForwardResult r = forward(tape, params, cfg, {tokens});
  return tape.value(r.logits);
}

// ---------------------------------------------------------------------------
// Data

using Tokens = std::vector<std::size_t>;

/// Order-2 Markov text over `symbols` ids; each context has three candidate
/// successors with seeded probabilities.
inline Tokens markov_corpus(std::size_t length, std::size_t symbols, std::uint64_t seed) {
  if (symbols < 2) throw ParameterError("markov_corpus: need at least 2 symbols");
  Rng rng = Rng(seed).child(0xc0de);
  const std::size_t contexts = symbols * symbols;
  std::vector<std::array<std::size_t, 3>> next(contexts);
  std::vector<std::array<double, 3>> cdf(contexts);
  for (std::size_t c = 0; c < contexts; ++c) {
    double w[3], total = 0.0;
    for (int j = 0; j < 3; ++j) {
      next[c][j] = rng.below(symbols);
      w[j] = 0.2 + rng.uniform();
      total += w[j];
    }
    double acc = 0.0;
    for (int j = 0; j < 3; ++j) cdf[c][j] = (acc += w[j] / total);
  }
  Tokens out;
  out.reserve(length);
  std::size_t a = rng.below(symbols), b = rng.below(symbols);
  for (std::size_t n = 0; n < length; ++n) {
    const std::size_t c = a * symbols + b;
    const double u = rng.uniform();
    std::size_t j = 0;
    while (j < 2 && u >= cdf[c][j]) ++j;
    out.push_back(next[c][j]);
    a = b;
    b = next[c][j];
  }
  return out;
}

inline Tokens alternating_corpus(std::size_t length) {
  Tokens out(length);
  for (std::size_t i = 0; i < length; ++i) out[i] = i % 2;
  return out;
}

/// Bytes of a UTF-8 file as token ids (vocabulary 256).
inline Tokens byte_corpus(const std::filesystem::path& path) {
  const std::string text = csv::read_file(path);
  return Tokens(text.begin(), text.end());
}

/// Each position independently becomes `generic_id` with probability `rate`.
inline Tokens corrupt_tokens(const Tokens& tokens, double rate, std::size_t generic_id, Rng& rng) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw ParameterError("corrupt_tokens: rate must be in [0, 1]");
  Tokens out = tokens;
  for (std::size_t& t : out)
    if (rng.bernoulli(rate)) t = generic_id;
  return out;
}

struct Batch {
  std::vector<Tokens> inputs, targets;
};

/// Random windows of length T+1 drawn from `corpus`.
inline Batch sample_batch(const Tokens& corpus, std::size_t batch, std::size_t T, Rng& rng) {
  if (corpus.size() < T + 1) throw ParameterError("sample_batch: corpus shorter than a window");
  Batch out;
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t start = rng.below(corpus.size() - T);
    out.inputs.emplace_back(corpus.begin() + start, corpus.begin() + start + T);
    out.targets.emplace_back(corpus.begin() + start + 1, corpus.begin() + start + T + 1);
  }
  return out;
}

/// Consecutive non-overlapping windows, at most `max_windows`.
inline Batch eval_windows(const Tokens& corpus, std::size_t T, std::size_t max_windows) {
  Batch out;
  for (std::size_t s = 0; s + T + 1 <= corpus.size() && out.inputs.size() < max_windows; s += T) {
    out.inputs.emplace_back(corpus.begin() + s, corpus.begin() + s + T);
    out.targets.emplace_back(corpus.begin() + s + 1, corpus.begin() + s + T + 1);
  }
  if (out.inputs.empty()) throw ParameterError("eval_windows: corpus shorter than a window");
  return out;
}

inline std::vector<std::size_t> flatten(const std::vector<Tokens>& rows) {
  std::vector<std::size_t> out;
  for (const auto& r : rows) out.insert(out.end(), r.begin(), r.end());
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct AdamState {
  std::vector<Matrix> m, v;
  std::size_t step = 0;
};

struct TrainState {
  ModelConfig cfg;
  Params params;
  AdamState adam;
};

inline TrainState init_train_state(const ModelConfig& cfg) {
  TrainState s{cfg, init_params(cfg), {}};
  for (const Matrix& p : s.params.tensors) {
    s.adam.m.emplace_back(p.rows(), p.cols());
    s.adam.v.emplace_back(p.rows(), p.cols());
  }
  return s;
}

/// Mean next-token cross-entropy of `batch`.
inline double batch_loss(const Params& params, const ModelConfig& cfg, const Batch& batch,
                         std::uint64_t rng_stream = 0) {
  ad::Tape tape;
  ForwardOptions opt;
  opt.rng_stream = rng_stream;
  const ForwardResult r = forward(tape, params, cfg, batch.inputs, opt);
  const ad::Var loss = ad::softmax_cross_entropy(tape, r.logits, flatten(batch.targets));
  return tape.value(loss)(0, 0);
}

inline double perplexity(const Params& params, const ModelConfig& cfg, const Batch& batch) {
  return std::exp(batch_loss(params, cfg, batch));
}

/// Batch for optimisation step `step`: a pure function of (seed, step).
inline Batch training_batch(const Tokens& corpus, const ModelConfig& cfg, std::size_t step) {
  Rng rng = Rng(cfg.seed).child(0xba7c).child(step);
  return sample_batch(corpus, cfg.batch, cfg.context, rng);
}

/// Runs `steps` Adam updates starting at state.adam.step. `on_step(step, loss)`
/// sees the loss of each batch before its update.
inline void train(TrainState& state, const Tokens& corpus, std::size_t steps,
                  const std::function<void(std::size_t, double)>& on_step = {}) {
  const ModelConfig& cfg = state.cfg;
  cfg.validate();
  if (steps == 0) return;
  if (corpus.size() < 10 * cfg.context) throw ParameterError("train: corpus shorter than 10 contexts");
  for (std::size_t id : corpus)
    if (id >= cfg.vocab) throw InputError("train: corpus token out of range");
  for (std::size_t n = 0; n < steps; ++n) {
    const std::size_t step = state.adam.step;
    const Batch batch = training_batch(corpus, cfg, step);
    ad::Tape tape;
    ForwardOptions opt;
    opt.rng_stream = step;
    ForwardResult r;
    try {
      r = forward(tape, state.params, cfg, batch.inputs, opt);
    } catch (const ParameterError& e) {
      // inputs were validated above, so this is overflow inside the metric estimate
      throw TrainingError(std::string("training diverged: ") + e.what(), step);
    }
    const ad::Var loss = ad::softmax_cross_entropy(tape, r.logits, flatten(batch.targets));
    const double lv = tape.value(loss)(0, 0);
    if (!std::isfinite(lv)) throw TrainingError("training diverged (non-finite loss)", step);
    if (on_step) on_step(step, lv);
    tape.backward(loss);

    state.adam.step = step + 1;
    const double t = static_cast<double>(state.adam.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t), c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < state.params.count(); ++i) {
      const Matrix g = tape.grad(r.param_vars[i]);
      auto p = state.params.tensors[i].data();
      auto m = state.adam.m[i].data();
      auto v = state.adam.v[i].data();
      auto gd = g.data();
      for (std::size_t j = 0; j < p.size(); ++j) {
        if (!std::isfinite(gd[j])) throw TrainingError("training diverged (non-finite gradient)", step);
        m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gd[j];
        v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gd[j] * gd[j];
        p[j] -= cfg.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg.adam_eps);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Diagnostics

struct DiagnosticsReport {
  std::vector<double> cosine_similarity;  // per layer
  std::vector<double> head_distance;      // per layer
  double perplexity_clean = 0.0;
  double perplexity_corrupted = 0.0;
  std::vector<double> epsilons;
  std::vector<std::vector<double>> robustness;  // [layer][epsilon]
};

/// Mean pairwise cosine similarity between the rows of `reps`.
inline double mean_pairwise_cosine(const Matrix& reps) {
  const std::size_t n = reps.rows();
  if (n < 2) throw ParameterError("mean_pairwise_cosine: need at least 2 rows");
  std::vector<double> norms(n);
  for (std::size_t r = 0; r < n; ++r) norms[r] = norm2(reps.row(r));
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      const double denom = norms[a] * norms[b];
      total += denom > 0.0 ? std::clamp(dot(reps.row(a), reps.row(b)) / denom, -1.0, 1.0) : 0.0;
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

/// Mean pairwise Euclidean distance between flattened attention matrices.
inline double mean_pairwise_head_distance(const std::vector<Matrix>& heads) {
  if (heads.size() < 2) return 0.0;
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < heads.size(); ++a) {
    for (std::size_t b = a + 1; b < heads.size(); ++b) {
      total += norm2(subtract(heads[a].data(), heads[b].data()));
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

struct DiagnoseConfig {
  std::vector<double> epsilons{0.01, 0.1, 1.0};
  std::size_t perturbations = 8;  // Gaussian draws per scale
  double corruption_rate = 0.025;
  std::size_t generic_id = 0;     // usually the reserved last vocabulary id
  std::size_t max_windows = 16;
};

/// Attention output of one layer (all heads) for given queries, metric held fixed.
inline Matrix layer_attention_output(const AttentionLayerState& st, const Matrix& queries,
                                     std::size_t b, const ModelConfig& cfg, std::size_t T) {
  const std::size_t H = cfg.heads, D = cfg.head_dim;
  const double temperature = std::sqrt(static_cast<double>(D));
  Matrix out(T, H * D);
  for (std::size_t h = 0; h < H; ++h) {
    const Matrix metric = st.metrics.empty() ? Matrix(1, D, 1.0) : st.metrics[b * H + h];
    const AttentionOutput o = detail::attend(head_block(queries, 0, h, T, D),
                                             head_block(st.keys, b, h, T, D),
                                             head_block(st.values, b, h, T, D), metric, temperature, true);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t i = 0; i < D; ++i) out(t, h * D + i) = o.h(t, i);
  }
  return out;
}

inline DiagnosticsReport diagnose(const Params& params, const ModelConfig& cfg, const Tokens& eval,
                                  const DiagnoseConfig& dc, Rng& rng) {
  if (eval.size() < 2) throw ParameterError("diagnose: need at least 2 eval tokens");
  const std::size_t T = std::min(cfg.context, eval.size() - 1);
  const Batch windows = eval_windows(eval, T, dc.max_windows);
  const std::size_t B = windows.inputs.size();

  DiagnosticsReport rep;
  rep.epsilons = dc.epsilons;
  ad::Tape tape;
  const ForwardResult fr = forward(tape, params, cfg, windows.inputs);
  const ad::Var loss = ad::softmax_cross_entropy(tape, fr.logits, flatten(windows.targets));
  rep.perplexity_clean = std::exp(tape.value(loss)(0, 0));

  Rng corrupt_rng = rng.child(1);
  Batch corrupted = windows;
  for (auto& seq : corrupted.inputs) seq = corrupt_tokens(seq, dc.corruption_rate, dc.generic_id, corrupt_rng);
  rep.perplexity_corrupted = perplexity(params, cfg, corrupted);

  Rng noise_rng = rng.child(2);
  for (const AttentionLayerState& st : fr.layers) {
    double cos_total = 0.0, dist_total = 0.0;
    std::vector<double> robust(dc.epsilons.size(), 0.0);
    for (std::size_t b = 0; b < B; ++b) {
      Matrix reps(T, cfg.embed);
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < cfg.embed; ++c) reps(t, c) = st.hidden(b * T + t, c);
      cos_total += T >= 2 ? mean_pairwise_cosine(reps) : 1.0;
      std::vector<Matrix> heads(st.probs.begin() + b * cfg.heads, st.probs.begin() + (b + 1) * cfg.heads);
      dist_total += mean_pairwise_head_distance(heads);

      Matrix q(T, cfg.embed);
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t c = 0; c < cfg.embed; ++c) q(t, c) = st.queries(b * T + t, c);
      const Matrix clean = layer_attention_output(st, q, b, cfg, T);
      for (std::size_t e = 0; e < dc.epsilons.size(); ++e) {
        double acc = 0.0;
        for (std::size_t n = 0; n < dc.perturbations; ++n) {
          Matrix qp = q;
          double enorm2 = 0.0;
          for (double& x : qp.data()) {
            const double eps = dc.epsilons[e] * noise_rng.normal();
            x += eps;
            enorm2 += eps * eps;
          }
          const Matrix pert = layer_attention_output(st, qp, b, cfg, T);
          acc += norm2(subtract(pert.data(), clean.data())) / std::sqrt(enorm2);
        }
        robust[e] += acc / static_cast<double>(dc.perturbations);
      }
    }
    rep.cosine_similarity.push_back(cos_total / static_cast<double>(B));
    rep.head_distance.push_back(dist_total / static_cast<double>(B));
    for (double& r : robust) r /= static_cast<double>(B);
    rep.robustness.push_back(std::move(robust));
  }
  return rep;
}

/// Columns metric,layer,value with exactly one row per layer for each metric.
inline std::string diagnostics_csv(const DiagnosticsReport& rep) {
  csv::Table t({"metric", "layer", "value"});
  const std::size_t L = rep.cosine_similarity.size();
  for (std::size_t l = 0; l < L; ++l) t.add(std::string("cosine_similarity"), l + 1, rep.cosine_similarity[l]);
  for (std::size_t l = 0; l < L; ++l) t.add(std::string("head_distance"), l + 1, rep.head_distance[l]);
  for (std::size_t e = 0; e < rep.epsilons.size(); ++e) {
    const std::string name = "robustness_eps_" + csv::fmt(rep.epsilons[e]);
    for (std::size_t l = 0; l < L; ++l) t.add(name, l + 1, rep.robustness[l][e]);
  }
  return t.str();
}

// ---------------------------------------------------------------------------
// Checkpoints: text container, hex-float tensors so a reload is exact.

namespace detail {
inline std::string hex(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%a", x);
  return buf;
}

inline void write_tensor(std::ostringstream& os, const std::string& kind, const std::string& name,
                         const Matrix& m) {
  os << kind << ' ' << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (std::size_t i = 0; i < m.size(); ++i) os << (i ? " " : "") << hex(m.data()[i]);
  os << '\n';
}

inline Matrix read_tensor(std::istream& in, const std::string& kind, const std::string& name) {
  std::string k, n;
  std::size_t r = 0, c = 0;
  if (!(in >> k >> n >> r >> c) || k != kind || n != name) {
    throw FileError("checkpoint: expected " + kind + " " + name);
  }
  std::vector<double> data(r * c);
  for (double& x : data) {
    std::string tok;
    if (!(in >> tok)) throw FileError("checkpoint: truncated tensor " + name);
    x = std::strtod(tok.c_str(), nullptr);
  }
  return Matrix(r, c, std::move(data));
}
}  // namespace detail

/// `config_echo` is stored verbatim (one `key = value` per line).
inline std::string checkpoint_text(const TrainState& s, const std::string& config_echo) {
  std::ostringstream os;
  std::size_t lines = 0;
  for (char ch : config_echo) lines += ch == '\n';
  os << "ellip-checkpoint 1\n";
  os << "config " << lines << '\n' << config_echo;
  os << "step " << s.adam.step << '\n';
  os << "tensors " << s.params.count() << '\n';
  for (std::size_t i = 0; i < s.params.count(); ++i) {
    detail::write_tensor(os, "param", s.params.names[i], s.params.tensors[i]);
    detail::write_tensor(os, "adam_m", s.params.names[i], s.adam.m[i]);
    detail::write_tensor(os, "adam_v", s.params.names[i], s.adam.v[i]);
  }
  return os.str();
}

struct LoadedCheckpoint {
  std::string config_echo;
  std::size_t step = 0;
  Params params;
  AdamState adam;
};

inline LoadedCheckpoint parse_checkpoint(const std::string& text) {
  std::istringstream in(text);
  std::string magic, word;
  int version = 0;
  if (!(in >> magic >> version) || magic != "ellip-checkpoint" || version != 1) {
    throw FileError("checkpoint: bad header");
  }
  LoadedCheckpoint ck;
  std::size_t lines = 0;
  if (!(in >> word >> lines) || word != "config") throw FileError("checkpoint: missing config block");
  std::string line;
  std::getline(in, line);
  for (std::size_t i = 0; i < lines; ++i) {
    if (!std::getline(in, line)) throw FileError("checkpoint: truncated config block");
    ck.config_echo += line + "\n";
  }
  std::size_t count = 0;
  if (!(in >> word >> ck.step) || word != "step") throw FileError("checkpoint: missing step");
  if (!(in >> word >> count) || word != "tensors") throw FileError("checkpoint: missing tensors");
  for (std::size_t i = 0; i < count; ++i) {
    std::string kind, name;
    const auto pos = in.tellg();
    if (!(in >> kind >> name)) throw FileError("checkpoint: truncated");
    in.seekg(pos);
    ck.params.names.push_back(name);
    ck.params.tensors.push_back(detail::read_tensor(in, "param", name));
    ck.adam.m.push_back(detail::read_tensor(in, "adam_m", name));
    ck.adam.v.push_back(detail::read_tensor(in, "adam_v", name));
  }
  ck.adam.step = ck.step;
  return ck;
}

/// Restores parameters and optimiser state into a state built from the same config.
inline void restore(TrainState& s, const LoadedCheckpoint& ck) {
  if (ck.params.count() != s.params.count()) throw FileError("checkpoint: tensor count mismatch");
  for (std::size_t i = 0; i < ck.params.count(); ++i) {
    if (ck.params.names[i] != s.params.names[i] || !ck.params.tensors[i].same_shape(s.params.tensors[i])) {
      throw FileError("checkpoint: tensor " + ck.params.names[i] + " does not match the config");
    }
  }
  s.params = ck.params;
  s.adam = ck.adam;
}

}  // namespace ellip
