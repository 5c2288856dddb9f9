#pragma once

// Reverse-mode differentiation over whole matrices. Nodes are appended in
// evaluation order, so walking the tape backwards is a reverse topological
// order and every node is visited exactly once.

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "ellip/errors.hpp"
#include "ellip/numerics.hpp"

namespace ellip::ad {

struct Var {
  std::size_t id = 0;
};

class Tape;

/// Receives the adjoint of the node's output and accumulates into its parents.
using BackwardFn = std::function<void(Tape&, const Matrix& out_grad)>;

class Tape {
 public:
  Var leaf(Matrix value) { return push(std::move(value), {}, true); }
  Var constant(Matrix value) { return push(std::move(value), {}, false); }

  Var record(Matrix value, BackwardFn backward, bool requires_grad) {
    return push(std::move(value), std::move(backward), requires_grad);
  }

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Adjoint after backward(); zeros if nothing flowed into the node.
  Matrix grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.grad.empty() ? Matrix(n.value.rows(), n.value.cols()) : n.grad;
  }

  void accumulate(Var v, const Matrix& g) {
    Node& n = nodes_.at(v.id);
    if (!n.requires_grad) return;
    if (!g.same_shape(n.value)) throw ShapeError("Tape::accumulate: gradient shape mismatch");
    if (n.grad.empty()) {
      n.grad = g;
      return;
    }
    auto dst = n.grad.data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  void backward(Var loss) {
    if (value(loss).size() != 1) throw ShapeError("Tape::backward: loss must be 1x1");
    for (Node& n : nodes_) n.grad = Matrix();
    nodes_[loss.id].grad = Matrix(1, 1, 1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.backward) continue;
      const Matrix g = n.grad;
      n.backward(*this, g);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Var push(Matrix value, BackwardFn backward, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), Matrix(), std::move(backward), requires_grad});
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

namespace detail {
inline bool any_grad(const Tape& t, std::initializer_list<Var> vs) {
  for (Var v : vs)
    if (t.requires_grad(v)) return true;
  return false;
}
}  // namespace detail

inline Var matmul(Tape& t, Var a, Var b) {
  Matrix out = ellip::matmul(t.value(a), t.value(b));
  return t.record(
      std::move(out),
      [a, b](Tape& tp, const Matrix& g) {
        if (tp.requires_grad(a)) tp.accumulate(a, ellip::matmul(g, transpose(tp.value(b))));
        if (tp.requires_grad(b)) tp.accumulate(b, ellip::matmul(transpose(tp.value(a)), g));
      },
      detail::any_grad(t, {a, b}));
}

inline Var add(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (!av.same_shape(bv)) throw ShapeError("add: " + shape_str(av) + " vs " + shape_str(bv));
  Matrix out = av;
  auto o = out.data();
  auto bd = bv.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i];
  return t.record(
      std::move(out),
      [a, b](Tape& tp, const Matrix& g) {
        tp.accumulate(a, g);
        tp.accumulate(b, g);
      },
      detail::any_grad(t, {a, b}));
}

/// x (R x C) plus a 1 x C row broadcast over every row.
inline Var add_row(Tape& t, Var x, Var bias) {
  const Matrix& xv = t.value(x);
  const Matrix& bv = t.value(bias);
  if (bv.rows() != 1 || bv.cols() != xv.cols()) throw ShapeError("add_row: bias must be 1xC");
  Matrix out = xv;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv(0, c);
  }
  return t.record(
      std::move(out),
      [x, bias](Tape& tp, const Matrix& g) {
        tp.accumulate(x, g);
        if (tp.requires_grad(bias)) {
          Matrix gb(1, g.cols());
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < g.cols(); ++c) gb(0, c) += g(r, c);
          tp.accumulate(bias, gb);
        }
      },
      detail::any_grad(t, {x, bias}));
}

/// Elementwise product.
inline Var mul(Tape& t, Var a, Var b) {
  const Matrix& av = t.value(a);
  const Matrix& bv = t.value(b);
  if (!av.same_shape(bv)) throw ShapeError("mul: shape mismatch");
  Matrix out = av;
  auto o = out.data();
  auto bd = bv.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bd[i];
  return t.record(
      std::move(out),
      [a, b](Tape& tp, const Matrix& g) {
        auto elementwise = [&](const Matrix& other) {
          Matrix r = g;
          auto rd = r.data();
          auto od = other.data();
          for (std::size_t i = 0; i < rd.size(); ++i) rd[i] *= od[i];
          return r;
        };
        if (tp.requires_grad(a)) tp.accumulate(a, elementwise(tp.value(b)));
        if (tp.requires_grad(b)) tp.accumulate(b, elementwise(tp.value(a)));
      },
      detail::any_grad(t, {a, b}));
}

inline Var sum(Tape& t, Var x) {
  double s = 0.0;
  for (double v : t.value(x).data()) s += v;
  return t.record(
      Matrix(1, 1, s),
      [x](Tape& tp, const Matrix& g) {
        const Matrix& xv = tp.value(x);
        tp.accumulate(x, Matrix(xv.rows(), xv.cols(), g(0, 0)));
      },
      t.requires_grad(x));
}

namespace detail {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
}
inline double gelu_grad(double x) {
  const double u = kGeluC * (x + 0.044715 * x * x * x);
  const double th = std::tanh(u);
  const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
}
}  // namespace detail

/// tanh-approximated GELU.
inline Var gelu(Tape& t, Var x) {
  Matrix out = t.value(x);
  for (double& v : out.data()) v = detail::gelu(v);
  return t.record(
      std::move(out),
      [x](Tape& tp, const Matrix& g) {
        Matrix r = g;
        auto rd = r.data();
        auto xd = tp.value(x).data();
        for (std::size_t i = 0; i < rd.size(); ++i) rd[i] *= detail::gelu_grad(xd[i]);
        tp.accumulate(x, r);
      },
      t.requires_grad(x));
}

/// Row-wise layer normalisation with learned 1 x C gain and bias.
inline Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps = 1e-5) {
  const Matrix& xv = t.value(x);
  const std::size_t rows = xv.rows();
  const std::size_t cols = xv.cols();
  if (t.value(gain).cols() != cols || t.value(bias).cols() != cols) {
    throw ShapeError("layer_norm: gain/bias width mismatch");
  }
  Matrix xhat(rows, cols);
  Vector inv_std(rows);
  Matrix out(rows, cols);
  const Matrix& gv = t.value(gain);
  const Matrix& bv = t.value(bias);
  for (std::size_t r = 0; r < rows; ++r) {
    auto xr = xv.row(r);
    double mean = 0.0;
    for (double v : xr) mean += v;
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (double v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) {
      xhat(r, c) = (xr[c] - mean) * inv_std[r];
      out(r, c) = xhat(r, c) * gv(0, c) + bv(0, c);
    }
  }
  return t.record(
      std::move(out),
      [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp,
                                                                            const Matrix& g) {
        const std::size_t rows = g.rows();
        const std::size_t cols = g.cols();
        const Matrix& gv = tp.value(gain);
        if (tp.requires_grad(gain) || tp.requires_grad(bias)) {
          Matrix gg(1, cols), gb(1, cols);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
              gg(0, c) += g(r, c) * xhat(r, c);
              gb(0, c) += g(r, c);
            }
          tp.accumulate(gain, gg);
          tp.accumulate(bias, gb);
        }
        if (!tp.requires_grad(x)) return;
        Matrix gx(rows, cols);
        const double n = static_cast<double>(cols);
        for (std::size_t r = 0; r < rows; ++r) {
          double s1 = 0.0, s2 = 0.0;
          for (std::size_t c = 0; c < cols; ++c) {
            const double dxh = g(r, c) * gv(0, c);
            s1 += dxh;
            s2 += dxh * xhat(r, c);
          }
          for (std::size_t c = 0; c < cols; ++c) {
            const double dxh = g(r, c) * gv(0, c);
            gx(r, c) = inv_std[r] * (dxh - s1 / n - xhat(r, c) * s2 / n);
          }
        }
        tp.accumulate(x, gx);
      },
      detail::any_grad(t, {x, gain, bias}));
}

/// Rows `ids` of `table`, in order (embedding lookup).
inline Var gather_rows(Tape& t, Var table, std::vector<std::size_t> ids) {
  const Matrix& tv = t.value(table);
  Matrix out(ids.size(), tv.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= tv.rows()) throw InputError("gather_rows: index out of range");
    auto src = tv.row(ids[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return t.record(
      std::move(out),
      [table, ids = std::move(ids)](Tape& tp, const Matrix& g) {
        const Matrix& tv = tp.value(table);
        Matrix gt(tv.rows(), tv.cols());
        for (std::size_t r = 0; r < ids.size(); ++r) {
          auto dst = gt.row(ids[r]);
          auto src = g.row(r);
          for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
        }
        tp.accumulate(table, gt);
      },
      t.requires_grad(table));
}

/// Mean next-token cross-entropy of row-wise softmax(logits) against `targets`.
inline Var softmax_cross_entropy(Tape& t, Var logits, std::vector<std::size_t> targets) {
  const Matrix& lv = t.value(logits);
  if (targets.size() != lv.rows()) throw ShapeError("softmax_cross_entropy: target count");
  Matrix probs = softmax_rows(lv);
  double loss = 0.0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] >= lv.cols()) throw InputError("softmax_cross_entropy: target out of range");
    // log-softmax directly for accuracy when a probability underflows
    auto row = lv.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    loss -= row[targets[r]] - mx - std::log(z);
  }
  loss /= static_cast<double>(targets.size());
  return t.record(
      Matrix(1, 1, loss),
      [logits, targets = std::move(targets), probs = std::move(probs)](Tape& tp,
                                                                       const Matrix& g) {
        Matrix gl = probs;
        const double scale = g(0, 0) / static_cast<double>(targets.size());
        for (std::size_t r = 0; r < targets.size(); ++r) gl(r, targets[r]) -= 1.0;
        for (double& v : gl.data()) v *= scale;
        tp.accumulate(logits, gl);
      },
      t.requires_grad(logits));
}

}  // namespace ellip::ad
