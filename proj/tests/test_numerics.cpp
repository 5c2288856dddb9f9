#include <gtest/gtest.h>

#include <cmath>

#include "ellip/autograd.hpp"
#include "ellip/numerics.hpp"

using namespace ellip;

namespace {

void expect_near(const Matrix& a, const Matrix& b, double tol) {
  ASSERT_TRUE(a.same_shape(b)) << shape_str(a) << " vs " << shape_str(b);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], tol) << "entry " << i;
}

/// Gradient of a scalar tape function against central differences over every entry of `x`.
void check_vjp(const std::function<ad::Var(ad::Tape&, ad::Var)>& fn, const Matrix& x) {
  ad::Tape tape;
  const ad::Var leaf = tape.leaf(x);
  const ad::Var out = fn(tape, leaf);
  tape.backward(out);
  const Matrix analytic = tape.grad(leaf);
  const Matrix numeric = finite_diff_jacobian(
      [&](std::span<const double> v) {
        ad::Tape t;
        const ad::Var l = t.leaf(Matrix(x.rows(), x.cols(), Vector(v.begin(), v.end())));
        return Vector{t.value(fn(t, l))(0, 0)};
      },
      x.data(), 1e-5);
  const double scale = std::max(1.0, max_abs(analytic.data()));
  for (std::size_t i = 0; i < x.size(); ++i)
    EXPECT_NEAR(analytic.data()[i], numeric(0, i), 1e-4 * scale) << "entry " << i;
}

}  // namespace

TEST(Matrix, RejectsNonFiniteAndBadSize) {
  EXPECT_THROW(Matrix(2, 2, Vector{1, 2, 3}), ShapeError);
  EXPECT_THROW(Matrix(1, 2, Vector{1, NAN}), ParameterError);
  EXPECT_THROW(Matrix(1, 1, INFINITY), ParameterError);
}

TEST(Matmul, IdentityTimesA) {
  const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
  EXPECT_EQ(matmul(Matrix::identity(2), a), a);
}

TEST(Matmul, HandCase) {
  EXPECT_EQ(matmul(Matrix::from_rows({{1, 2}, {3, 4}}), Matrix::from_rows({{1}, {1}})),
            Matrix::from_rows({{3}, {7}}));
}

TEST(Matmul, ZeroAnnihilates) {
  Rng rng(3);
  const Matrix a = random_matrix(3, 4, rng);
  EXPECT_EQ(matmul(Matrix(2, 3), a), Matrix(2, 4));
}

TEST(Matmul, ShapeMismatchThrows) { EXPECT_THROW(matmul(Matrix(2, 3), Matrix(2, 3)), ShapeError); }

TEST(Matmul, AssociativeOnRandomTriples) {
  Rng rng(11);
  for (int n = 0; n < 200; ++n) {
    const std::size_t p = 1 + rng.below(6), q = 1 + rng.below(6), r = 1 + rng.below(6), s = 1 + rng.below(6);
    const Matrix a = random_matrix(p, q, rng), b = random_matrix(q, r, rng), c = random_matrix(r, s, rng);
    const Matrix left = matmul(matmul(a, b), c), right = matmul(a, matmul(b, c));
    for (std::size_t i = 0; i < left.size(); ++i)
      EXPECT_NEAR(left.data()[i], right.data()[i], 1e-9 * std::max(1.0, std::abs(left.data()[i])));
  }
}

TEST(Softmax, EqualEntriesUniform) {
  const Matrix p = softmax_rows(Matrix(1, 4, 2.5));
  for (double x : p.data()) EXPECT_DOUBLE_EQ(x, 0.25);
}

TEST(Softmax, HandCaseLn3) {
  const Vector p = softmax(Vector{0.0, std::log(3.0)});
  EXPECT_NEAR(p[0], 0.25, 1e-15);
  EXPECT_NEAR(p[1], 0.75, 1e-15);
}

TEST(Softmax, ShiftInvariant) {
  Rng rng(5);
  const Matrix z = random_matrix(3, 6, rng, -4, 4);
  Matrix shifted = z;
  for (std::size_t r = 0; r < 3; ++r)
    for (double& x : shifted.row(r)) x += 100.0 * static_cast<double>(r + 1);
  expect_near(softmax_rows(z), softmax_rows(shifted), 1e-13);
}

TEST(Softmax, LargeLogitsStayFinite) {
  const Vector p = softmax(Vector{1000.0, 999.0});
  EXPECT_TRUE(all_finite(p));
  EXPECT_NEAR(p[0] + p[1], 1.0, 1e-15);
}

TEST(Softmax, RowsSumToOneOnRandomMatrices) {
  Rng rng(7);
  for (int n = 0; n < 1000; ++n) {
    const Matrix p = softmax_rows(random_matrix(1 + rng.below(5), 1 + rng.below(10), rng, -30, 30));
    for (std::size_t r = 0; r < p.rows(); ++r) {
      double s = 0.0;
      for (double x : p.row(r)) {
        EXPECT_GE(x, 0.0);
        EXPECT_LE(x, 1.0);
        s += x;
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(FiniteDiff, IdentityFunction) {
  const Matrix j = finite_diff_jacobian([](std::span<const double> x) { return Vector(x.begin(), x.end()); },
                                        Vector{0.3, -2.0, 7.0}, 1e-5);
  expect_near(j, Matrix::identity(3), 1e-10);
}

TEST(FiniteDiff, LinearMapIsExact) {
  Rng rng(9);
  const Matrix a = random_matrix(3, 4, rng, -2, 2);
  const Matrix j = finite_diff_jacobian(
      [&](std::span<const double> x) {
        Vector y(3, 0.0);
        for (std::size_t r = 0; r < 3; ++r) y[r] = dot(a.row(r), x);
        return y;
      },
      Vector{1.0, -1.0, 0.5, 2.0}, 1e-5);
  expect_near(j, a, 1e-10);
}

TEST(FiniteDiff, SquareAtThree) {
  const Matrix j = finite_diff_jacobian(
      [](std::span<const double> x) { return Vector{x[0] * x[0], x[1]}; }, Vector{3.0, 1.0}, 1e-4);
  expect_near(j, Matrix::from_rows({{6, 0}, {0, 1}}), 1e-6);
}

TEST(FiniteDiff, NonFiniteOutputThrows) {
  EXPECT_THROW(finite_diff_jacobian([](std::span<const double> x) { return Vector{std::log(x[0])}; },
                                    Vector{0.0}, 1e-3),
               EvaluationError);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  Rng c(42), d(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(c.normal(), d.normal());
}

TEST(Rng, DistinctSeedsDiffer) {
  Rng a(1), b(2);
  int equal = 0;
  for (int i = 0; i < 1000; ++i) equal += a.next_u64() == b.next_u64();
  EXPECT_EQ(equal, 0);
}

TEST(Rng, UniformAndNormalMoments) {
  Rng rng(123);
  double su = 0, sn = 0, sn2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    su += rng.uniform();
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
  }
  EXPECT_NEAR(su / n, 0.5, 0.005);
  EXPECT_NEAR(sn / n, 0.0, 0.01);
  EXPECT_NEAR(sn2 / n, 1.0, 0.02);
}

TEST(Rng, BelowStaysInRange) {
  Rng rng(8);
  for (int i = 0; i < 10000; ++i) EXPECT_LT(rng.below(7), 7u);
  EXPECT_THROW(rng.below(0), ParameterError);
}

TEST(Tape, SumGradientIsOnes) {
  ad::Tape t;
  const ad::Var x = t.leaf(Matrix::from_rows({{1, -2, 3}}));
  t.backward(ad::sum(t, x));
  EXPECT_EQ(t.grad(x), Matrix(1, 3, 1.0));
}

TEST(Tape, DotSelfGradient) {
  ad::Tape t;
  const ad::Var x = t.leaf(Matrix::from_rows({{1, 2}}));
  t.backward(ad::sum(t, ad::mul(t, x, x)));
  EXPECT_EQ(t.grad(x), Matrix::from_rows({{2, 4}}));
}

TEST(Tape, NonScalarLossRejected) {
  ad::Tape t;
  const ad::Var x = t.leaf(Matrix(2, 2, 1.0));
  EXPECT_THROW(t.backward(x), ShapeError);
}

TEST(Tape, ConstantsReceiveNoGradient) {
  ad::Tape t;
  const ad::Var x = t.leaf(Matrix(1, 2, 1.0));
  const ad::Var c = t.constant(Matrix(1, 2, 3.0));
  t.backward(ad::sum(t, ad::mul(t, x, c)));
  EXPECT_EQ(t.grad(c), Matrix(1, 2, 0.0));
  EXPECT_EQ(t.grad(x), Matrix(1, 2, 3.0));
}

TEST(Tape, SharedSubexpressionVisitedOnce) {
  // y = x * x used twice: d/dx sum(y + y) = 4x
  ad::Tape t;
  const ad::Var x = t.leaf(Matrix::from_rows({{1.5, -0.5}}));
  const ad::Var y = ad::mul(t, x, x);
  t.backward(ad::sum(t, ad::add(t, y, y)));
  EXPECT_EQ(t.grad(x), Matrix::from_rows({{6.0, -2.0}}));
}

TEST(TapeGradients, SoftmaxCrossEntropyFiveLogits) {
  Rng rng(17);
  const Matrix logits = random_matrix(1, 5, rng, -3, 3);
  ad::Tape tape;
  const ad::Var l = tape.leaf(logits);
  tape.backward(ad::softmax_cross_entropy(tape, l, {2}));
  const Matrix analytic = tape.grad(l);
  const Matrix numeric = finite_diff_jacobian(
      [&](std::span<const double> v) {
        ad::Tape t;
        const ad::Var x = t.leaf(Matrix(1, 5, Vector(v.begin(), v.end())));
        return Vector{t.value(ad::softmax_cross_entropy(t, x, {2}))(0, 0)};
      },
      logits.data(), 1e-5);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(analytic(0, i), numeric(0, i), 1e-5);
}

class PrimitiveVjp : public ::testing::Test {
 protected:
  Rng rng{2024};
  Matrix rand(std::size_t r, std::size_t c) { return random_matrix(r, c, rng, -1.5, 1.5); }
};

TEST_F(PrimitiveVjp, Matmul) {
  const Matrix w = rand(4, 3), c = rand(3, 3);
  check_vjp([&](ad::Tape& t, ad::Var x) {
    return ad::sum(t, ad::mul(t, ad::matmul(t, x, t.constant(w)), t.constant(c)));
  }, rand(3, 4));
  const Matrix a = rand(2, 3), c2 = rand(2, 4);
  check_vjp([&](ad::Tape& t, ad::Var x) {
    return ad::sum(t, ad::mul(t, ad::matmul(t, t.constant(a), x), t.constant(c2)));
  }, rand(3, 4));
}

TEST_F(PrimitiveVjp, AddAndAddRow) {
  const Matrix b = rand(3, 2), c = rand(3, 2);
  check_vjp([&](ad::Tape& t, ad::Var x) {
    return ad::sum(t, ad::mul(t, ad::add(t, x, t.constant(b)), t.constant(c)));
  }, rand(3, 2));
  const Matrix base = rand(3, 2);
  check_vjp([&](ad::Tape& t, ad::Var bias) {
    return ad::sum(t, ad::mul(t, ad::add_row(t, t.constant(base), bias), t.constant(c)));
  }, rand(1, 2));
}

TEST_F(PrimitiveVjp, Gelu) {
  const Matrix c = rand(2, 5);
  check_vjp([&](ad::Tape& t, ad::Var x) { return ad::sum(t, ad::mul(t, ad::gelu(t, x), t.constant(c))); },
            rand(2, 5));
}

TEST_F(PrimitiveVjp, LayerNormAllInputs) {
  const Matrix c = rand(3, 4), g = rand(1, 4), b = rand(1, 4), x0 = rand(3, 4);
  check_vjp([&](ad::Tape& t, ad::Var x) {
    return ad::sum(t, ad::mul(t, ad::layer_norm(t, x, t.constant(g), t.constant(b)), t.constant(c)));
  }, x0);
  check_vjp([&](ad::Tape& t, ad::Var gain) {
    return ad::sum(t, ad::mul(t, ad::layer_norm(t, t.constant(x0), gain, t.constant(b)), t.constant(c)));
  }, g);
  check_vjp([&](ad::Tape& t, ad::Var bias) {
    return ad::sum(t, ad::mul(t, ad::layer_norm(t, t.constant(x0), t.constant(g), bias), t.constant(c)));
  }, b);
}

TEST_F(PrimitiveVjp, GatherRows) {
  const Matrix c = rand(4, 3);
  check_vjp([&](ad::Tape& t, ad::Var table) {
    return ad::sum(t, ad::mul(t, ad::gather_rows(t, table, {2, 0, 2, 1}), t.constant(c)));
  }, rand(3, 3));
}

TEST_F(PrimitiveVjp, CrossEntropyBatch) {
  check_vjp([&](ad::Tape& t, ad::Var x) { return ad::softmax_cross_entropy(t, x, {0, 3, 1}); }, rand(3, 4));
}

TEST(GatherRows, OutOfRangeIsInputError) {
  ad::Tape t;
  const ad::Var table = t.leaf(Matrix(2, 2));
  EXPECT_THROW(ad::gather_rows(t, table, {2}), InputError);
}
