#include <gtest/gtest.h>

#include <cmath>

#include "ellip/nwlab.hpp"

using namespace ellip;

namespace {

NWDataset dataset(Matrix keys, Matrix values) {
  return {std::move(keys), std::move(values), 0.0, SyntheticFunction::constant(1, {0.0})};
}

}  // namespace

TEST(NwEstimate, SinglePointReturnsItsValue) {
  const NWDataset d = dataset(Matrix::from_rows({{0.3, -1}}), Matrix::from_rows({{4.5, -2}}));
  for (double bw : {1e-3, 0.5, 10.0}) {
    const Vector h = nw_estimate(Vector{9, 9}, d, bw, EllipticalWeights::identity(2));
    EXPECT_EQ(h, (Vector{4.5, -2}));
  }
}

TEST(NwEstimate, EquidistantQueryGivesMidpoint) {
  const NWDataset d = dataset(Matrix::from_rows({{-1, 0}, {1, 0}}), Matrix::from_rows({{2}, {6}}));
  EXPECT_DOUBLE_EQ(nw_estimate(Vector{0, 3}, d, 0.7, EllipticalWeights::identity(2))[0], 4.0);
  // With m = (1, 1/4), both (0, 2) and (1, 0) sit at distance 1 from the origin.
  const NWDataset e = dataset(Matrix::from_rows({{0, 2}, {1, 0}}), Matrix::from_rows({{2}, {6}}));
  const EllipticalWeights w{{1.0, 0.25}, ScalingMode::unscaled, kDefaultFloor};
  EXPECT_DOUBLE_EQ(nw_estimate(Vector{0, 0}, e, 0.4, w)[0], 4.0);
}

TEST(NwEstimate, Errors) {
  const NWDataset empty = dataset(Matrix(0, 2), Matrix(0, 1));
  EXPECT_THROW(nw_estimate(Vector{0, 0}, empty, 1.0, EllipticalWeights::identity(2)), ParameterError);
  const NWDataset d = dataset(Matrix::from_rows({{0, 0}}), Matrix::from_rows({{1}}));
  EXPECT_THROW(nw_estimate(Vector{0, 0}, d, 0.0, EllipticalWeights::identity(2)), ParameterError);
  EXPECT_THROW(nw_estimate(Vector{0}, d, 1.0, EllipticalWeights::identity(2)), ShapeError);
}

TEST(NwEstimate, FarQueryStaysFinite) {
  const NWDataset d = dataset(Matrix::from_rows({{0}, {1}}), Matrix::from_rows({{1}, {3}}));
  const Vector h = nw_estimate(Vector{1e3}, d, 1e-3, EllipticalWeights::identity(1));
  EXPECT_EQ(h[0], 3.0);
}

TEST(NwEstimate, IsAttentionWithSquaredDistanceLogits) {
  Rng rng(1);
  const Matrix keys = random_matrix(6, 3, rng), values = random_matrix(6, 2, rng);
  const EllipticalWeights w{{1.0, 0.3, 0.6}, ScalingMode::unscaled, kDefaultFloor};
  const Vector q{0.1, -0.2, 0.4};
  Vector logits(6);
  for (std::size_t j = 0; j < 6; ++j) {
    const double d = mahalanobis_distance(q, keys.row(j), w);
    logits[j] = -d * d / (2.0 * 0.5 * 0.5);
  }
  const Vector p = softmax(logits);
  const Vector h = nw_estimate(q, dataset(keys, values), 0.5, w);
  for (std::size_t c = 0; c < 2; ++c) {
    double ref = 0.0;
    for (std::size_t j = 0; j < 6; ++j) ref += p[j] * values(j, c);
    EXPECT_NEAR(h[c], ref, 1e-14);
  }
}

TEST(BandwidthCv, GridAndSelection) {
  const auto grid = default_bandwidth_grid();
  ASSERT_EQ(grid.size(), 12u);
  EXPECT_NEAR(grid.front(), 0.05, 1e-15);
  EXPECT_NEAR(grid.back(), 2.0, 1e-14);
  Rng rng(2);
  const auto f = SyntheticFunction::sparse_coordinate(1, {0});
  const NWDataset d = sample_dataset(f, uniform_box(1, -3, 3), 300, 0.1, rng);
  const double bw = select_bandwidth_cv(d, EllipticalWeights::identity(1), grid, 5);
  EXPECT_GT(bw, grid.front());
  EXPECT_LT(bw, grid.back());
}

TEST(SparseMse, ConstantTruthNoNoiseIsExact) {
  SparseMseConfig cfg;
  cfg.noise_std = 0.0;
  cfg.seeds = 2;
  cfg.n = 100;
  cfg.n_test = 50;
  cfg.oracle_samples = 10;
  const auto f = SyntheticFunction::constant(cfg.dim, {1.25});
  const auto r = run_sparse_mse_experiment(cfg, &f);
  EXPECT_NEAR(r.euclidean.mse, 0.0, 1e-28);
  EXPECT_NEAR(r.elliptical.mse, 0.0, 1e-28);
}

TEST(SparseMse, EllipticalWinsOnSparseTruth) {
  const auto r = run_sparse_mse_experiment(SparseMseConfig{});
  EXPECT_LT(r.elliptical.mse, r.euclidean.mse);
  EXPECT_LT(r.p_value, 0.05);
  EXPECT_TRUE(r.elliptical_better());
}

TEST(SparseMse, EqualVariabilityNullGapSmall) {
  SparseMseConfig cfg;
  cfg.active = {0, 1, 2, 3, 4};
  EXPECT_LT(run_sparse_mse_experiment(cfg).gap_in_pooled_se(), 2.0);
}

TEST(SparseMse, ConsistentWeightsRunDeterministically) {
  SparseMseConfig cfg;
  cfg.weights = WeightSource::consistent;
  cfg.seeds = 2;
  cfg.n = 200;
  cfg.n_test = 100;
  const auto a = run_sparse_mse_experiment(cfg), b = run_sparse_mse_experiment(cfg);
  EXPECT_EQ(a.elliptical.mse, b.elliptical.mse);
  EXPECT_EQ(a.per_seed[1].metric, b.per_seed[1].metric);
}

TEST(Edge, ZeroNoiseSeparatedPiecesArePure) {
  EdgeConfig cfg;
  cfg.noise_std = 0.0;
  cfg.bandwidth = 0.01;
  cfg.query_offset = 0.5;
  cfg.seeds = 3;
  const EdgeReport r = run_edge_preservation_experiment(cfg);
  for (const auto* e : {&r.first, &r.second})
    for (double d : e->per_seed) EXPECT_NEAR(d, r.target_distance, 1e-12);
}

TEST(Edge, CanonicalConfigDirection) {
  const EdgeReport r = run_edge_preservation_experiment(EdgeConfig{});
  EXPECT_GE(r.get(NwKernel::elliptical).mean, r.get(NwKernel::euclidean).mean);
  EXPECT_EQ(r.first.per_seed.size(), 20u);
  // x2 is inert, so the consistent estimate floors it.
  EXPECT_EQ(r.metric[0], 1.0);
  EXPECT_EQ(r.metric[1], kDefaultFloor);
}

TEST(Edge, SwappingLabelsSwapsFields) {
  EdgeConfig cfg;
  cfg.seeds = 4;
  const EdgeReport a = run_edge_preservation_experiment(cfg);
  cfg.estimators = {NwKernel::euclidean, NwKernel::elliptical};
  const EdgeReport b = run_edge_preservation_experiment(cfg);
  EXPECT_EQ(a.first.estimator, b.second.estimator);
  EXPECT_EQ(a.first.per_seed, b.second.per_seed);
  EXPECT_EQ(a.second.per_seed, b.first.per_seed);
  EXPECT_EQ(a.get(NwKernel::elliptical).mean, b.get(NwKernel::elliptical).mean);
}

TEST(Lipschitz, LinearHolds) {
  Rng rng(3);
  const auto f = SyntheticFunction::linear(Matrix::from_rows({{1, -2, 0.5}, {0, 3, 1}}));
  const EllipticalWeights w{{0.2, 1.0, 0.6}, ScalingMode::unscaled, kDefaultFloor};
  EXPECT_LE(check_lipschitz_transfer(f, w, 5000, rng), 0.0);
}

TEST(Lipschitz, SineHoldsOnTenThousandPairs) {
  Rng rng(4);
  SyntheticFunction f = SyntheticFunction::sparse_coordinate(2, {0});
  const EllipticalWeights w{{1.0, 1e-3}, ScalingMode::unscaled, kDefaultFloor};
  EXPECT_LE(check_lipschitz_transfer(f, w, 10000, rng), 0.0);
}

TEST(Lipschitz, CoincidentPairsAreSkipped) {
  Rng rng(5);
  const auto f = SyntheticFunction::linear(Matrix::from_rows({{2.0}}));
  // box 0 makes every pair coincide: result is 0 - bound
  EXPECT_DOUBLE_EQ(check_lipschitz_transfer(f, EllipticalWeights::identity(1), 10, rng, 0.0), -2.0);
}

TEST(Lipschitz, NeedsGradientBounds) {
  Rng rng(6);
  const auto f = SyntheticFunction::piecewise_constant(2, 0, 0.0, {1.0}, {0.0});
  EXPECT_THROW(check_lipschitz_transfer(f, EllipticalWeights::identity(2), 10, rng), ParameterError);
}
