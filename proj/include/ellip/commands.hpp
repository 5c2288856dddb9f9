#pragma once

// Subcommand implementations behind the `ellip` executable. Each command is a
// pure function of its RunConfig and writes its outputs plus a config echo
// (config.txt) into the output directory.

#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "ellip/attention.hpp"
#include "ellip/bench.hpp"
#include "ellip/config.hpp"
#include "ellip/csv.hpp"
#include "ellip/model.hpp"
#include "ellip/nwlab.hpp"
#include "ellip/verify.hpp"

namespace ellip::cli {

namespace fs = std::filesystem;

struct CommandContext {
  fs::path out_dir;
  std::size_t jobs = 1;
  std::ostream* log = &std::cout;
};

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Results must be written
/// into per-index slots, so the outcome does not depend on scheduling.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(jobs);
  for (std::size_t w = 0; w < std::min(jobs, n); ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += jobs) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline void write_echo(const CommandContext& ctx, const RunConfig& cfg) {
  csv::write_file(ctx.out_dir / "config.txt", cfg.echo());
}

inline std::size_t as_size(const RunConfig& c, const std::string& key) {
  return static_cast<std::size_t>(c.get_uint(key));
}

inline std::vector<std::size_t> as_sizes(const RunConfig& c, const std::string& key) {
  std::vector<std::size_t> out;
  for (double x : c.get_doubles(key)) {
    if (x < 0 || x != std::floor(x)) throw UsageError("config key '" + key + "' needs integers", key);
    out.push_back(static_cast<std::size_t>(x));
  }
  return out;
}

inline std::string pass_fail(bool ok) { return ok ? "PASS" : "FAIL"; }

// ---------------------------------------------------------------------------
// nw-sparse

inline std::vector<KeySpec> nw_sparse_schema() {
  return {{"seed", "1", "first seed; seed s uses seed + s"},
          {"seeds", "20", "number of seeds"},
          {"n", "500", "training sample size"},
          {"n_test", "500", "held-out queries per seed"},
          {"dim", "5", "input dimension"},
          {"active", "0", "coordinates the truth depends on (comma list)"},
          {"noise_std", "0.3", "value noise std"},
          {"box", "3", "inputs ~ Uniform[-box, box]^dim"},
          {"weights", "oracle", "metric source: oracle | consistent"},
          {"consistent_t", "0.5", "step for the consistent estimator on the pilot fit"},
          {"folds", "5", "cross-validation folds"}};
}

inline SparseMseConfig sparse_config(const RunConfig& c) {
  SparseMseConfig s;
  s.seed = c.get_uint("seed");
  s.seeds = as_size(c, "seeds");
  s.n = as_size(c, "n");
  s.n_test = as_size(c, "n_test");
  s.dim = as_size(c, "dim");
  s.active = as_sizes(c, "active");
  s.noise_std = c.get_double("noise_std");
  s.box = c.get_double("box");
  const std::string& w = c.get("weights");
  if (w == "oracle") {
    s.weights = WeightSource::oracle;
  } else if (w == "consistent") {
    s.weights = WeightSource::consistent;
  } else {
    throw UsageError("config key 'weights' must be oracle or consistent", "weights");
  }
  s.consistent_t = c.get_double("consistent_t");
  s.folds = as_size(c, "folds");
  if (s.seeds < 2) throw UsageError("config key 'seeds' must be at least 2", "seeds");
  for (std::size_t a : s.active)
    if (a >= s.dim) throw UsageError("config key 'active' has a coordinate >= dim", "active");
  return s;
}

inline int cmd_nw_sparse(const RunConfig& c, const CommandContext& ctx) {
  const SparseMseConfig cfg = sparse_config(c);
  const SyntheticFunction truth = SyntheticFunction::sparse_coordinate(cfg.dim, cfg.active);
  std::vector<SparseMseSeed> per_seed(cfg.seeds);
  parallel_for(cfg.seeds, ctx.jobs, [&](std::size_t s) { per_seed[s] = run_sparse_mse_seed(cfg, truth, cfg.seed + s); });
  const SparseMseResult r = summarize_sparse_mse(cfg, per_seed);

  csv::Table t({"experiment", "estimator", "seed", "n", "bandwidth", "metric", "value"});
  for (std::size_t s = 0; s < cfg.seeds; ++s) {
    const auto& ps = r.per_seed[s];
    const std::string seed = std::to_string(cfg.seed + s);
    t.add(std::string("nw_sparse"), std::string("euclidean"), seed, cfg.n, ps.bw_euclidean, std::string("mse"), ps.mse_euclidean);
    t.add(std::string("nw_sparse"), std::string("elliptical"), seed, cfg.n, ps.bw_elliptical, std::string("mse"), ps.mse_elliptical);
  }
  for (const MSEReport* rep : {&r.euclidean, &r.elliptical}) {
    t.add(std::string("nw_sparse"), rep->estimator, std::string("all"), rep->n, rep->bandwidth, std::string("mse_mean"), rep->mse);
    t.add(std::string("nw_sparse"), rep->estimator, std::string("all"), rep->n, rep->bandwidth, std::string("mse_se"), rep->standard_error);
  }
  t.add(std::string("nw_sparse"), std::string("paired"), std::string("all"), cfg.n, 0.0, std::string("p_value"), r.p_value);
  csv::write_file(ctx.out_dir / "nw_sparse.csv", t.str());

  const bool ok = r.elliptical_better();
  char line[256];
  std::snprintf(line, sizeof line, "%s elliptical_mse_below_euclidean euclidean=%.6g elliptical=%.6g p=%.3g\n",
                pass_fail(ok).c_str(), r.euclidean.mse, r.elliptical.mse, r.p_value);
  csv::write_file(ctx.out_dir / "summary.txt", line);
  write_echo(ctx, c);
  *ctx.log << line;
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------
// edge-preserve

inline std::vector<KeySpec> edge_schema() {
  return {{"seed", "1", "first seed"},
          {"seeds", "20", "number of seeds"},
          {"n", "200", "sample size"},
          {"noise_std", "0.5", "value noise std"},
          {"bandwidth", "0.1", "kernel bandwidth"},
          {"query_offset", "0.1", "queries at (-offset, 0) and (offset, 0)"},
          {"consistent_t", "0.1", "step of the consistent estimator on the truth"},
          {"estimators", "elliptical,euclidean", "report order"}};
}

inline int cmd_edge_preserve(const RunConfig& c, const CommandContext& ctx) {
  EdgeConfig cfg;
  cfg.seed = c.get_uint("seed");
  cfg.seeds = as_size(c, "seeds");
  cfg.n = as_size(c, "n");
  cfg.noise_std = c.get_double("noise_std");
  cfg.bandwidth = c.get_double("bandwidth");
  cfg.query_offset = c.get_double("query_offset");
  cfg.consistent_t = c.get_double("consistent_t");
  const std::string& order = c.get("estimators");
  if (order == "elliptical,euclidean") {
    cfg.estimators = {NwKernel::elliptical, NwKernel::euclidean};
  } else if (order == "euclidean,elliptical") {
    cfg.estimators = {NwKernel::euclidean, NwKernel::elliptical};
  } else {
    throw UsageError("config key 'estimators' must list elliptical and euclidean", "estimators");
  }
  if (cfg.seeds == 0) throw UsageError("config key 'seeds' must be positive", "seeds");
  const EdgeReport r = run_edge_preservation_experiment(cfg);

  csv::Table t({"experiment", "estimator", "seed", "n", "bandwidth", "metric", "value"});
  for (const EdgeEstimatorReport* e : {&r.first, &r.second}) {
    for (std::size_t s = 0; s < e->per_seed.size(); ++s)
      t.add(std::string("edge_preserve"), e->estimator, std::to_string(cfg.seed + s), cfg.n, cfg.bandwidth,
            std::string("distance"), e->per_seed[s]);
    t.add(std::string("edge_preserve"), e->estimator, std::string("all"), cfg.n, cfg.bandwidth,
          std::string("distance_mean"), e->mean);
  }
  csv::write_file(ctx.out_dir / "edge_preserve.csv", t.str());

  const double ell = r.get(NwKernel::elliptical).mean, euc = r.get(NwKernel::euclidean).mean;
  const bool ok = ell >= euc;
  char line[256];
  std::snprintf(line, sizeof line, "%s elliptical_distance_at_least_euclidean elliptical=%.6g euclidean=%.6g target=%.6g\n",
                pass_fail(ok).c_str(), ell, euc, r.target_distance);
  csv::write_file(ctx.out_dir / "summary.txt", line);
  write_echo(ctx, c);
  *ctx.log << line;
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------
// estimator-bench

inline std::vector<KeySpec> estimator_bench_schema() {
  return {{"seed", "1", "first seed"},
          {"seeds", "20", "seeds for the ordering experiment"},
          {"dim", "6", "dimension of the separable catalog function"},
          {"n", "1000", "layer-pair sample size"},
          {"delta", "0.05", "mean per-coordinate key move between layers"},
          {"noise_std", "0.01", "value noise std for the ordering experiment"},
          {"tau_threshold", "0.55", "minimum acceptable Kendall tau"},
          {"noise_sigmas", "0.01,0.1", "noise levels for the bias bound"},
          {"noise_n", "10000", "samples for the bias bound"},
          {"rate_ns", "100,1000,10000,100000", "sample sizes for the rate fit"},
          {"rate_reps", "20", "repetitions per sample size"},
          {"rate_t", "0.01", "consistent estimator step"}};
}

inline int cmd_estimator_bench(const RunConfig& c, const CommandContext& ctx) {
  const std::uint64_t seed = c.get_uint("seed");
  const std::size_t seeds = as_size(c, "seeds");
  bench::OrderingConfig oc;
  oc.dim = as_size(c, "dim");
  oc.layer.n = as_size(c, "n");
  oc.layer.delta = c.get_double("delta");
  oc.layer.noise_std = c.get_double("noise_std");
  const double threshold = c.get_double("tau_threshold");
  if (oc.dim < 2) throw UsageError("config key 'dim' must be at least 2", "dim");

  csv::Table t({"experiment", "estimator", "seed", "n", "parameter", "metric", "value"});
  std::vector<bench::OrderingResult> ord(seeds);
  parallel_for(seeds, ctx.jobs, [&](std::size_t s) { ord[s] = bench::ordering_fidelity(oc, seed + s); });
  double min_tau = 1.0;
  for (std::size_t s = 0; s < seeds; ++s) {
    t.add(std::string("ordering"), std::string("overlayers"), std::to_string(seed + s), oc.layer.n,
          oc.layer.delta, std::string("kendall_tau"), ord[s].kendall_tau);
    min_tau = std::min(min_tau, ord[s].kendall_tau);
  }
  const bool ordering_ok = seeds > 0 && min_tau >= threshold;

  bool noise_ok = true;
  double noise_excess = -1e300;
  for (double sigma : c.get_doubles("noise_sigmas")) {
    const bench::NoiseBiasResult nl = bench::noise_bias(sigma, as_size(c, "noise_n"), seed);
    for (std::size_t i = 0; i < nl.gap.size(); ++i)
      t.add(std::string("noise_bias"), std::string("overlayers"), std::to_string(seed), nl.n, sigma,
            std::string("gap_dim") + std::to_string(i), nl.gap[i]);
    t.add(std::string("noise_bias"), std::string("overlayers"), std::to_string(seed), nl.n, sigma,
          std::string("bound"), nl.bound);
    noise_excess = std::max(noise_excess, nl.max_excess());
    noise_ok = noise_ok && nl.max_excess() <= 0.0;
  }

  const bench::RateResult rr =
      bench::consistency_rate(as_sizes(c, "rate_ns"), as_size(c, "rate_reps"), c.get_double("rate_t"), seed);
  for (const auto& p : rr.points)
    t.add(std::string("rate"), std::string("consistent"), std::to_string(seed), p.n, c.get_double("rate_t"),
          std::string("mean_abs_error"), p.mean_error);
  t.add(std::string("rate"), std::string("consistent"), std::to_string(seed), std::string(""),
        c.get_double("rate_t"), std::string("loglog_slope"), rr.slope);
  const bool rate_ok = std::abs(rr.slope + 0.5) <= 0.2;
  csv::write_file(ctx.out_dir / "estimator_bench.csv", t.str());

  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%s ordering_fidelity min_tau=%.4g threshold=%.4g\n"
                "%s noise_bias max_excess=%.4g\n"
                "%s consistency_rate slope=%.4g\n",
                pass_fail(ordering_ok).c_str(), min_tau, threshold, pass_fail(noise_ok).c_str(), noise_excess,
                pass_fail(rate_ok).c_str(), rr.slope);
  csv::write_file(ctx.out_dir / "summary.txt", buf);
  write_echo(ctx, c);
  *ctx.log << buf;
  return ordering_ok && noise_ok && rate_ok ? 0 : 1;
}

// ---------------------------------------------------------------------------
// train-lm / diagnose

inline std::vector<KeySpec> model_keys() {
  return {{"seed", "1", "model and batch seed"},
          {"layers", "4", ""},
          {"heads", "2", ""},
          {"head_dim", "16", ""},
          {"embed", "32", "must equal heads * head_dim"},
          {"ff", "64", "feedforward width"},
          {"context", "64", "context length"},
          {"elliptical", "false", "elliptical attention from layer 2 on"},
          {"mode", "maxscale", "maxscale | meanscale | unscaled | identity | random"},
          {"delta", "1", "over-layers estimator step"},
          {"batch", "8", "sequences per step"},
          {"lr", "0.0003", "Adam learning rate"},
          {"corpus", "markov", "markov | alternating | path to a UTF-8 file"},
          {"corpus_length", "50000", "generated corpus length"},
          {"symbols", "16", "markov alphabet size (vocabulary adds one generic id)"},
          {"corpus_seed", "1", "markov generator seed"}};
}

inline std::vector<KeySpec> train_schema() {
  auto keys = model_keys();
  keys.insert(keys.end(), {{"steps", "600", "total optimisation steps"},
                           {"resume", "", "checkpoint to continue from"},
                           {"eval_windows", "32", "held-out windows for perplexity"},
                           {"corrupt", "false", "also report corrupted-input perplexity"},
                           {"corrupt_rate", "0.025", "generic-token swap rate"}});
  return keys;
}

inline std::vector<KeySpec> diagnose_schema() {
  return {{"checkpoint", "", "checkpoint written by train-lm"},
          {"seed", "1", "perturbation and corruption seed"},
          {"epsilons", "0.01,0.1,1", "query perturbation scales"},
          {"perturbations", "8", "Gaussian draws per scale"},
          {"corrupt_rate", "0.025", "generic-token swap rate"},
          {"max_windows", "16", "held-out windows"},
          {"heatmap_window", "0", "held-out window used for heatmaps"}};
}

struct CorpusSplit {
  Tokens train, eval;
  std::size_t vocab = 0;
  std::size_t generic_id = 0;
};

/// Last 10% of the corpus is held out. The generic token is an extra id.
inline CorpusSplit load_corpus(const RunConfig& c) {
  const std::string& kind = c.get("corpus");
  Tokens all;
  std::size_t symbols = 0;
  if (kind == "markov") {
    symbols = as_size(c, "symbols");
    if (symbols < 2) throw UsageError("config key 'symbols' must be at least 2", "symbols");
    all = markov_corpus(as_size(c, "corpus_length"), symbols, c.get_uint("corpus_seed"));
  } else if (kind == "alternating") {
    symbols = 2;
    all = alternating_corpus(as_size(c, "corpus_length"));
  } else {
    try {
      all = byte_corpus(kind);
    } catch (const FileError& e) {
      throw UsageError(std::string("config key 'corpus': ") + e.what(), "corpus");
    }
    symbols = 256;
  }
  CorpusSplit s;
  const std::size_t cut = all.size() - all.size() / 10;
  s.train.assign(all.begin(), all.begin() + cut);
  s.eval.assign(all.begin() + cut, all.end());
  s.vocab = symbols + 1;
  s.generic_id = symbols;
  return s;
}

inline ModelConfig model_config(const RunConfig& c, std::size_t vocab) {
  ModelConfig m;
  m.seed = c.get_uint("seed");
  m.layers = as_size(c, "layers");
  m.heads = as_size(c, "heads");
  m.head_dim = as_size(c, "head_dim");
  m.embed = as_size(c, "embed");
  m.ff = as_size(c, "ff");
  m.context = as_size(c, "context");
  m.elliptical = c.get_bool("elliptical");
  const auto mode = parse_scaling_mode(c.get("mode"));
  if (!mode) throw UsageError("config key 'mode' is not a scaling mode", "mode");
  m.mode = *mode;
  m.delta = c.get_double("delta");
  m.batch = as_size(c, "batch");
  m.lr = c.get_double("lr");
  m.vocab = vocab;
  try {
    m.validate();
  } catch (const ParameterError& e) {
    throw UsageError(e.what(), "");
  }
  return m;
}

inline double eval_perplexity(const Params& p, const ModelConfig& m, const Tokens& eval,
                              std::size_t windows, const Tokens* corrupted = nullptr) {
  const Batch clean = eval_windows(eval, m.context, windows);
  if (!corrupted) return perplexity(p, m, clean);
  Batch b = eval_windows(*corrupted, m.context, windows);
  b.targets = clean.targets;  // corruption hits inputs only
  return perplexity(p, m, b);
}

inline int cmd_train_lm(const RunConfig& c, const CommandContext& ctx) {
  const CorpusSplit corpus = load_corpus(c);
  const ModelConfig m = model_config(c, corpus.vocab);
  const std::size_t steps = as_size(c, "steps");
  TrainState state = init_train_state(m);

  const std::string& resume = c.get("resume");
  if (!resume.empty()) {
    std::string text;
    try {
      text = csv::read_file(resume);
    } catch (const FileError& e) {
      throw UsageError(std::string("config key 'resume': ") + e.what(), "resume");
    }
    const LoadedCheckpoint ck = parse_checkpoint(text);
    RunConfig prev("train-lm", train_schema());
    prev.load_text(ck.config_echo, resume);
    for (const KeySpec& k : model_keys()) {
      if (prev.get(k.key) != c.get(k.key)) {
        throw UsageError("resume: checkpoint was trained with " + k.key + " = " + prev.get(k.key), k.key);
      }
    }
    restore(state, ck);
    if (state.adam.step > steps) throw UsageError("resume: checkpoint is past 'steps'", "steps");
  }

  csv::Table loss({"step", "loss"});
  train(state, corpus.train, steps - state.adam.step, [&](std::size_t s, double l) { loss.add(s, l); });
  csv::write_file(ctx.out_dir / "loss.csv", loss.str());
  csv::write_file(ctx.out_dir / "checkpoint.txt", checkpoint_text(state, c.echo()));

  const std::size_t windows = as_size(c, "eval_windows");
  const double clean = eval_perplexity(state.params, m, corpus.eval, windows);
  std::string corrupted_cell;
  if (c.get_bool("corrupt")) {
    Rng rng = Rng(m.seed).child(0xbad);
    const Tokens corrupted = corrupt_tokens(corpus.eval, c.get_double("corrupt_rate"), corpus.generic_id, rng);
    corrupted_cell = csv::fmt(eval_perplexity(state.params, m, corpus.eval, windows, &corrupted));
  }
  csv::Table ev({"step", "perplexity_clean", "perplexity_corrupted"});
  ev.add(state.adam.step, clean, corrupted_cell);
  csv::write_file(ctx.out_dir / "eval.csv", ev.str());
  write_echo(ctx, c);
  *ctx.log << "trained to step " << state.adam.step << ", held-out perplexity " << csv::fmt(clean) << "\n";
  return 0;
}

inline int cmd_diagnose(const RunConfig& c, const CommandContext& ctx) {
  const std::string& path = c.get("checkpoint");
  if (path.empty()) throw UsageError("config key 'checkpoint' is required", "checkpoint");
  const LoadedCheckpoint ck = parse_checkpoint(csv::read_file(path));  // FileError if missing
  RunConfig tc("train-lm", train_schema());
  tc.load_text(ck.config_echo, path);
  const CorpusSplit corpus = load_corpus(tc);
  const ModelConfig m = model_config(tc, corpus.vocab);
  TrainState state = init_train_state(m);
  restore(state, ck);

  DiagnoseConfig dc;
  dc.epsilons = c.get_doubles("epsilons");
  dc.perturbations = as_size(c, "perturbations");
  dc.corruption_rate = c.get_double("corrupt_rate");
  dc.generic_id = corpus.generic_id;
  dc.max_windows = as_size(c, "max_windows");
  Rng rng(c.get_uint("seed"));
  const DiagnosticsReport rep = diagnose(state.params, m, corpus.eval, dc, rng);
  csv::write_file(ctx.out_dir / "diagnostics.csv", diagnostics_csv(rep));
  csv::Table summary({"metric", "value"});
  summary.add(std::string("perplexity_clean"), rep.perplexity_clean);
  summary.add(std::string("perplexity_corrupted"), rep.perplexity_corrupted);
  csv::write_file(ctx.out_dir / "perplexity.csv", summary.str());

  // heatmaps of one held-out window
  const std::size_t T = std::min(m.context, corpus.eval.size() - 1);
  const Batch windows = eval_windows(corpus.eval, T, dc.max_windows);
  const std::size_t w = as_size(c, "heatmap_window");
  if (w >= windows.inputs.size()) throw UsageError("config key 'heatmap_window' is out of range", "heatmap_window");
  ad::Tape tape;
  const ForwardResult fr = forward(tape, state.params, m, {windows.inputs[w]});
  for (const AttentionLayerState& st : fr.layers) {
    for (std::size_t h = 0; h < m.heads; ++h) {
      const std::string name = "heatmap_layer" + std::to_string(st.layer + 1) + "_head" + std::to_string(h + 1) + ".csv";
      csv::write_file(ctx.out_dir / name, heatmap_csv(st.probs[h], true));
    }
  }
  write_echo(ctx, c);
  *ctx.log << "final-layer cosine similarity " << csv::fmt(rep.cosine_similarity.back())
           << ", perplexity clean " << csv::fmt(rep.perplexity_clean) << " corrupted "
           << csv::fmt(rep.perplexity_corrupted) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// verify

inline std::vector<KeySpec> verify_schema() {
  return {{"seed", "20240601", "suite seed"},
          {"instances", "1000", "random instances for Jacobian, bound and stochasticity suites"},
          {"bound_instances", "100", "instances for the robustness bound"},
          {"perturbations", "1000", "perturbations per robustness instance"},
          {"lipschitz_pairs", "10000", "random pairs for the Lipschitz transfer check"},
          {"kappa_fault", "false", "test hook: inject an off-by-one into kappa"}};
}

inline int cmd_verify(const RunConfig& c, const CommandContext& ctx) {
  verify::VerifyConfig vc;
  vc.seed = c.get_uint("seed");
  vc.instances = as_size(c, "instances");
  vc.bound_instances = as_size(c, "bound_instances");
  vc.perturbations = as_size(c, "perturbations");
  vc.lipschitz_pairs = as_size(c, "lipschitz_pairs");
  vc.kappa_fault = c.get_bool("kappa_fault");
  const auto results = verify::run_all(vc);
  csv::Table t({"suite", "checks", "failures", "max_slack", "status"});
  std::size_t failed = 0;
  for (const auto& r : results) {
    t.add(r.name, r.checks, r.failures, r.max_slack, pass_fail(r.passed()));
    char line[200];
    std::snprintf(line, sizeof line, "%s %-20s checks=%zu failures=%zu max_slack=%.3g\n", pass_fail(r.passed()).c_str(),
                  r.name.c_str(), r.checks, r.failures, r.max_slack);
    *ctx.log << line;
    failed += !r.passed();
  }
  csv::write_file(ctx.out_dir / "verify.csv", t.str());
  write_echo(ctx, c);
  *ctx.log << (failed == 0 ? "all suites passed\n" : std::to_string(failed) + " suite(s) failed\n");
  return failed == 0 ? 0 : 1;
}

// ---------------------------------------------------------------------------

struct Command {
  std::string name;
  std::string help;
  std::function<std::vector<KeySpec>()> schema;
  std::function<int(const RunConfig&, const CommandContext&)> run;
};

inline const std::vector<Command>& commands() {
  static const std::vector<Command> all{
      {"nw-sparse", "Euclidean vs elliptical NW regression on a coordinate-sparse truth", nw_sparse_schema, cmd_nw_sparse},
      {"edge-preserve", "estimate distance across the edge of a piecewise-constant truth", edge_schema, cmd_edge_preserve},
      {"estimator-bench", "fidelity of the variability estimators", estimator_bench_schema, cmd_estimator_bench},
      {"train-lm", "train the toy language model", train_schema, cmd_train_lm},
      {"diagnose", "collapse, head redundancy, robustness and heatmaps for a checkpoint", diagnose_schema, cmd_diagnose},
      {"verify", "Jacobian, bound and equivalence property suites", verify_schema, cmd_verify},
  };
  return all;
}

inline const Command& find_command(const std::string& name) {
  for (const auto& c : commands())
    if (c.name == name) return c;
  throw UsageError("unknown subcommand " + name, name);
}

/// Output directory: explicit path, else $ELLIP_OUT_ROOT/<command>, else ./ellip_out/<command>.
inline fs::path resolve_out_dir(const std::string& explicit_dir, const std::string& command) {
  if (!explicit_dir.empty()) return explicit_dir;
  const char* root = std::getenv("ELLIP_OUT_ROOT");
  return fs::path(root && *root ? root : "ellip_out") / command;
}

/// Builds the RunConfig (config file first, then key=value overrides) and runs it.
inline int run_command(const std::string& name, const std::string& config_file,
                       const std::vector<std::string>& overrides, const CommandContext& ctx) {
  const Command& cmd = find_command(name);
  RunConfig cfg(cmd.name, cmd.schema());
  if (!config_file.empty()) cfg.load_file(config_file);
  for (const auto& o : overrides) cfg.set_pair(o);
  fs::create_directories(ctx.out_dir);
  return cmd.run(cfg, ctx);
}

}  // namespace ellip::cli
