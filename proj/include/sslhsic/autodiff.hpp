#pragma once

// Reverse-mode differentiation over dense matrices.
//
// A Tape records every operation in evaluation order; backward() walks it in
// reverse and accumulates adjoints. Scalars are 1x1 matrices. The operator set
// is closed: what the network and the HSIC / InfoNCE losses need, nothing more.

#include "sslhsic/common.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace sslhsic::ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  double scalar() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& upstream)>;

  /// Leaf that receives a gradient.
  Var variable(Matrix value) { return push(std::move(value), true, nullptr); }

  /// Leaf treated as a constant.
  Var constant(Matrix value) { return push(std::move(value), false, nullptr); }

  Var constant_scalar(double v) { return constant(Matrix::Constant(1, 1, v)); }

  /// Records an op. The node needs a gradient iff any input does.
  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
    bool needs = false;
    for (const Var& in : inputs) needs = needs || nodes_[in.id()].needs_grad;
    if (!value.allFinite()) throw NumericalError("autodiff: non-finite value produced");
    return push(std::move(value), needs, needs ? std::move(backward) : nullptr);
  }

  const Matrix& value(const Var& v) const { return nodes_[v.id()].value; }
  bool needs_grad(const Var& v) const { return nodes_[v.id()].needs_grad; }

  /// Adds g to the adjoint of v (no-op for constants).
  void accumulate(const Var& v, const Matrix& g) {
    Node& node = nodes_[v.id()];
    if (!node.needs_grad) return;
    if (node.grad.size() == 0) {
      node.grad = g;
    } else {
      node.grad += g;
    }
  }

  /// Gradient of the scalar `output` with respect to every variable on the tape.
  void backward(const Var& output) {
    require(output.rows() == 1 && output.cols() == 1, "autodiff: backward needs a scalar output");
    for (auto& node : nodes_) node.grad.resize(0, 0);
    accumulate(output, Matrix::Ones(1, 1));
    for (std::size_t id = output.id() + 1; id-- > 0;) {
      Node& node = nodes_[id];
      if (!node.backward || node.grad.size() == 0) continue;
      const Matrix upstream = node.grad;
      node.backward(*this, upstream);
    }
  }

  /// Adjoint of v after backward(); zeros if nothing flowed into it.
  Matrix grad(const Var& v) const {
    const Node& node = nodes_[v.id()];
    if (node.grad.size() == 0) return Matrix::Zero(node.value.rows(), node.value.cols());
    return node.grad;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Backward backward;
  };

  Var push(Matrix value, bool needs_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Matrix(), needs_grad, std::move(backward)});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(*this); }
inline double Var::scalar() const { return value()(0, 0); }

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(const Var& a, const Var& b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Tape& t = *a.tape();
  return t.record(a.value() * b.value(), {a, b}, [a, b](Tape& tape, const Matrix& g) {
    if (tape.needs_grad(a)) tape.accumulate(a, g * b.value().transpose());
    if (tape.needs_grad(b)) tape.accumulate(b, a.value().transpose() * g);
  });
}

inline Var transpose(const Var& a) {
  return a.tape()->record(a.value().transpose(), {a}, [a](Tape& tape, const Matrix& g) { tape.accumulate(a, g.transpose()); });
}

inline Var add(const Var& a, const Var& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  return a.tape()->record(a.value() + b.value(), {a, b}, [a, b](Tape& tape, const Matrix& g) {
    tape.accumulate(a, g);
    tape.accumulate(b, g);
  });
}

inline Var sub(const Var& a, const Var& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  return a.tape()->record(a.value() - b.value(), {a, b}, [a, b](Tape& tape, const Matrix& g) {
    tape.accumulate(a, g);
    tape.accumulate(b, -g);
  });
}

/// Elementwise product.
inline Var hadamard(const Var& a, const Var& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "hadamard: shape mismatch");
  return a.tape()->record(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Tape& tape, const Matrix& g) {
    if (tape.needs_grad(a)) tape.accumulate(a, g.cwiseProduct(b.value()));
    if (tape.needs_grad(b)) tape.accumulate(b, g.cwiseProduct(a.value()));
  });
}

inline Var scale(const Var& a, double s) {
  return a.tape()->record(a.value() * s, {a}, [a, s](Tape& tape, const Matrix& g) { tape.accumulate(a, g * s); });
}

inline Var add_scalar(const Var& a, double s) {
  return a.tape()->record((a.value().array() + s).matrix(), {a}, [a](Tape& tape, const Matrix& g) { tape.accumulate(a, g); });
}

/// a + 1 * row, broadcasting a 1 x C row over every row of a.
inline Var add_row(const Var& a, const Var& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: row shape mismatch");
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return a.tape()->record(std::move(out), {a, row}, [a, row](Tape& tape, const Matrix& g) {
    tape.accumulate(a, g);
    if (tape.needs_grad(row)) tape.accumulate(row, g.colwise().sum());
  });
}

/// Sum of all entries, as a 1x1.
inline Var sum(const Var& a) {
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape()->record(Matrix::Constant(1, 1, tree_sum(a.value())), {a}, [a, r, c](Tape& tape, const Matrix& g) {
    tape.accumulate(a, Matrix::Constant(r, c, g(0, 0)));
  });
}

/// Sum of squared entries, as a 1x1.
inline Var sum_squares(const Var& a) {
  return a.tape()->record(Matrix::Constant(1, 1, tree_sum(Matrix(a.value().array().square()))), {a},
                          [a](Tape& tape, const Matrix& g) { tape.accumulate(a, 2.0 * g(0, 0) * a.value()); });
}

/// Column means broadcast back: a - 1 mean(a).
inline Var center_columns(const Var& a) {
  Matrix out = a.value();
  out.rowwise() -= out.colwise().mean();
  return a.tape()->record(std::move(out), {a}, [a](Tape& tape, const Matrix& g) {
    Matrix ga = g;
    ga.rowwise() -= g.colwise().mean();
    tape.accumulate(a, ga);
  });
}

/// H K H for the centering matrix H.
inline Var double_center(const Var& a) {
  auto centre = [](const Matrix& m) {
    Matrix out = m;
    out.rowwise() -= m.colwise().mean();
    out.colwise() -= out.rowwise().mean();
    return out;
  };
  return a.tape()->record(centre(a.value()), {a}, [a, centre](Tape& tape, const Matrix& g) { tape.accumulate(a, centre(g)); });
}

// ---------------------------------------------------------------------------
// Elementwise functions

template <typename Fn, typename Dfn>
Var unary(const Var& a, Fn&& fn, Dfn&& dfn) {
  Matrix out = a.value().unaryExpr(fn);
  Matrix local = a.value().binaryExpr(out, dfn);
  return a.tape()->record(std::move(out), {a}, [a, local = std::move(local)](Tape& tape, const Matrix& g) {
    tape.accumulate(a, g.cwiseProduct(local));
  });
}

inline Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(const Var& a) {
  if ((a.value().array() <= 0.0).any()) throw NumericalError("autodiff log: nonpositive input");
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var sqrt(const Var& a) {
  if ((a.value().array() < 0.0).any()) throw NumericalError("autodiff sqrt: negative input");
  return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

inline Var cos(const Var& a) {
  return unary(a, [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); });
}

/// x^p for x > 0.
inline Var pow(const Var& a, double p) {
  return unary(a, [p](double x) { return std::pow(x, p); }, [p](double x, double) { return p * std::pow(x, p - 1.0); });
}

/// max(x, lo); the gradient is zero where the clamp is active.
inline Var clamp_min(const Var& a, double lo) {
  return unary(a, [lo](double x) { return std::max(x, lo); }, [lo](double x, double) { return x > lo ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Fused ops with hand-written adjoints

/// Per-column standardisation over rows, no affine part and no running statistics.
inline Var batch_norm(const Var& a, double eps = 1e-5) {
  const Matrix& x = a.value();
  const double n = static_cast<double>(x.rows());
  const RowVector mean = x.colwise().mean();
  Matrix centered = x.rowwise() - mean;
  const RowVector inv_std = ((centered.array().square().colwise().sum() / n) + eps).sqrt().inverse().matrix();
  Matrix xhat = centered.array().rowwise() * inv_std.array();
  Matrix out = xhat;
  return a.tape()->record(std::move(out), {a}, [a, xhat = std::move(xhat), inv_std, n](Tape& tape, const Matrix& g) {
    const RowVector g_sum = g.colwise().sum();
    const RowVector gx_sum = g.cwiseProduct(xhat).colwise().sum();
    Matrix dx = (n * g).rowwise() - g_sum;
    dx -= (xhat.array().rowwise() * gx_sum.array()).matrix();
    dx = (dx.array().rowwise() * (inv_std.array() / n)).matrix();
    tape.accumulate(a, dx);
  });
}

/// Rescales each row to unit norm; rows with norm below min_norm are an error.
inline Var normalize_rows(const Var& a, double min_norm = 1e-12) {
  const Matrix& x = a.value();
  const Vector norms = x.rowwise().norm();
  if ((norms.array() < min_norm).any()) throw NumericalError("normalize_rows: zero vector cannot be unit-normalized");
  Matrix y = norms.cwiseInverse().asDiagonal() * x;
  Matrix out = y;
  return a.tape()->record(std::move(out), {a}, [a, y = std::move(y), norms](Tape& tape, const Matrix& g) {
    const Vector dots = y.cwiseProduct(g).rowwise().sum();
    Matrix dx = g - dots.asDiagonal() * y;
    tape.accumulate(a, norms.cwiseInverse().asDiagonal() * dx);
  });
}

/// Squared distances between rows, clamped at zero, with an exact zero diagonal.
inline Var pairwise_sqdist(const Var& a) {
  const Matrix& x = a.value();
  const Eigen::Index n = x.rows();
  const Matrix dots = x * x.transpose();
  const Vector norms = dots.diagonal();
  Matrix s(n, n);
  Matrix active = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    s(j, j) = 0.0;
    for (Eigen::Index i = 0; i < j; ++i) {
      const double raw = norms(i) + norms(j) - 2.0 * dots(i, j);
      const double v = std::max(raw, 0.0);
      s(i, j) = v;
      s(j, i) = v;
      const double on = raw > 0.0 ? 1.0 : 0.0;
      active(i, j) = on;
      active(j, i) = on;
    }
  }
  return a.tape()->record(std::move(s), {a}, [a, active = std::move(active)](Tape& tape, const Matrix& g) {
    const Matrix gs = g.cwiseProduct(active);
    const Matrix sym = gs + gs.transpose();
    const Vector row_tot = sym.rowwise().sum();
    const Matrix& x = a.value();
    tape.accumulate(a, 2.0 * (row_tot.asDiagonal() * x - sym * x));
  });
}

/// Row-wise log(mean(exp(row))) with a max shift, as an n x 1 column.
inline Var row_log_mean_exp(const Var& a) {
  const Matrix& x = a.value();
  const Eigen::Index n = x.rows();
  Matrix out(n, 1);
  Matrix softmax(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < n; ++r) {
    const double peak = x.row(r).maxCoeff();
    const RowVector e = (x.row(r).array() - peak).exp().matrix();
    const double total = e.sum();
    out(r, 0) = peak + std::log(total / static_cast<double>(x.cols()));
    softmax.row(r) = e / total;
  }
  return a.tape()->record(std::move(out), {a}, [a, softmax = std::move(softmax)](Tape& tape, const Matrix& g) {
    tape.accumulate(a, g.col(0).asDiagonal() * softmax);
  });
}

}  // namespace sslhsic::ad
