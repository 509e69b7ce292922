#pragma once

// Matrix-valued reverse-accumulation tape. Each node stores its forward value
// and, after backward(), the adjoint of a scalar output with respect to it.
// The operation set is exactly what the variational objective needs.

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "mfhogp/kernels.hpp"
#include "mfhogp/numerics.hpp"

namespace mfhogp::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& adjoint)>;

  Var leaf(Matrix value) { return push(std::move(value), true, {}); }
  Var constant(Matrix value) { return push(std::move(value), false, {}); }
  Var constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

  Var push(Matrix value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Matrix(), std::move(backward), requires_grad});
    return Var{this, nodes_.size() - 1};
  }

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Adjoint of the last backward() output with respect to v (zeros if unreached).
  Matrix grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void accumulate(Var v, const Matrix& adjoint) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = adjoint;
    else
      n.grad += adjoint;
  }

  void backward(Var output) {
    require(value(output).size() == 1, ErrorCode::DimensionMismatch, "backward() needs a scalar output");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    nodes_[output.id].grad = Matrix::Ones(1, 1);
    for (std::size_t i = output.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
      const Matrix adjoint = n.grad;
      n.backward(*this, adjoint);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape->value(*this); }

namespace detail {

inline bool any_grad(std::initializer_list<Var> vars) {
  for (const Var& v : vars)
    if (v.tape->requires_grad(v)) return true;
  return false;
}

inline void same_shape(const Var& a, const Var& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::DimensionMismatch,
          std::string(op) + ": shapes " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " and " +
              std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

inline Matrix tril_strict(const Matrix& m) {
  Matrix out = m.triangularView<Eigen::StrictlyLower>();
  return out;
}

}  // namespace detail

inline Var add(Var a, Var b) {
  detail::same_shape(a, b, "add");
  return a.tape->push(a.value() + b.value(), detail::any_grad({a, b}), [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

inline Var sub(Var a, Var b) {
  detail::same_shape(a, b, "sub");
  return a.tape->push(a.value() - b.value(), detail::any_grad({a, b}), [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

inline Var scale(Var a, double c) {
  return a.tape->push(c * a.value(), detail::any_grad({a}), [a, c](Tape& t, const Matrix& g) { t.accumulate(a, c * g); });
}

/// Adds a constant to every entry.
inline Var shift(Var a, double c) {
  return a.tape->push((a.value().array() + c).matrix(), detail::any_grad({a}),
                      [a](Tape& t, const Matrix& g) { t.accumulate(a, g); });
}

/// s * a where s is 1 x 1.
inline Var scale_by(Var s, Var a) {
  require(s.value().size() == 1, ErrorCode::DimensionMismatch, "scale_by expects a scalar factor");
  return a.tape->push(s.scalar() * a.value(), detail::any_grad({s, a}), [s, a](Tape& t, const Matrix& g) {
    t.accumulate(s, Matrix::Constant(1, 1, g.cwiseProduct(a.value()).sum()));
    t.accumulate(a, s.scalar() * g);
  });
}

inline Var mul(Var a, Var b) {
  if (a.value().size() == 1) return scale_by(a, b);
  if (b.value().size() == 1) return scale_by(b, a);
  detail::same_shape(a, b, "mul");
  return a.tape->push(a.value().cwiseProduct(b.value()), detail::any_grad({a, b}), [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(b.value()));
    t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

inline Var matmul(Var a, Var b) {
  require(a.cols() == b.rows(), ErrorCode::DimensionMismatch,
          "matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " times " + std::to_string(b.rows()) +
              "x" + std::to_string(b.cols()));
  return a.tape->push(a.value() * b.value(), detail::any_grad({a, b}), [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.requires_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

inline Var transpose(Var a) {
  return a.tape->push(a.value().transpose(), detail::any_grad({a}),
                      [a](Tape& t, const Matrix& g) { t.accumulate(a, g.transpose()); });
}

inline Var sum(Var a) {
  return a.tape->push(Matrix::Constant(1, 1, a.value().sum()), detail::any_grad({a}), [a](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

inline Var squared_norm(Var a) {
  return a.tape->push(Matrix::Constant(1, 1, a.value().squaredNorm()), detail::any_grad({a}),
                      [a](Tape& t, const Matrix& g) { t.accumulate(a, 2.0 * g(0, 0) * a.value()); });
}

inline Var exp(Var a) {
  Matrix v = a.value().array().exp().matrix();
  return a.tape->push(v, detail::any_grad({a}), [a, v](Tape& t, const Matrix& g) { t.accumulate(a, g.cwiseProduct(v)); });
}

inline Var log(Var a) {
  return a.tape->push(a.value().array().log().matrix(), detail::any_grad({a}), [a](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseQuotient(a.value()));
  });
}

inline Var gather_rows(Var a, std::vector<std::size_t> rows) {
  Matrix v(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(static_cast<Eigen::Index>(rows[i]) < a.rows(), ErrorCode::IndexOutOfRange, "gather_rows index out of range");
    v.row(static_cast<Eigen::Index>(i)) = a.value().row(static_cast<Eigen::Index>(rows[i]));
  }
  return a.tape->push(std::move(v), detail::any_grad({a}), [a, rows = std::move(rows)](Tape& t, const Matrix& g) {
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) ga.row(static_cast<Eigen::Index>(rows[i])) += g.row(static_cast<Eigen::Index>(i));
    t.accumulate(a, ga);
  });
}

/// [a, b] side by side.
inline Var hcat(Var a, Var b) {
  require(a.rows() == b.rows(), ErrorCode::DimensionMismatch, "hcat: row counts differ");
  Matrix v(a.rows(), a.cols() + b.cols());
  v << a.value(), b.value();
  return a.tape->push(std::move(v), detail::any_grad({a, b}), [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g.leftCols(a.cols()));
    t.accumulate(b, g.rightCols(b.cols()));
  });
}

/// Vertical stack of equally wide blocks.
inline Var vcat(const std::vector<Var>& parts) {
  require(!parts.empty(), ErrorCode::InvalidArgument, "vcat of nothing");
  Eigen::Index rows = 0;
  bool grad = false;
  for (const Var& p : parts) {
    require(p.cols() == parts.front().cols(), ErrorCode::DimensionMismatch, "vcat: column counts differ");
    rows += p.rows();
    grad = grad || p.tape->requires_grad(p);
  }
  Matrix v(rows, parts.front().cols());
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    v.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return parts.front().tape->push(std::move(v), grad, [parts](Tape& t, const Matrix& g) {
    Eigen::Index r0 = 0;
    for (const Var& p : parts) {
      t.accumulate(p, g.middleRows(r0, p.rows()));
      r0 += p.rows();
    }
  });
}

/// Row-vector Kronecker product: (1 x p) kron (1 x q) -> 1 x pq.
inline Var kron_rows(Var a, Var b) {
  require(a.rows() == 1 && b.rows() == 1, ErrorCode::DimensionMismatch, "kron_rows expects row vectors");
  const Eigen::Index p = a.cols();
  const Eigen::Index q = b.cols();
  Matrix v(1, p * q);
  for (Eigen::Index i = 0; i < p; ++i) v.block(0, i * q, 1, q) = a.value()(0, i) * b.value();
  return a.tape->push(std::move(v), detail::any_grad({a, b}), [a, b, p, q](Tape& t, const Matrix& g) {
    const Eigen::Map<const Matrix> gm(g.data(), p, q);  // g is row-major 1 x pq
    t.accumulate(a, (gm * b.value().transpose()).transpose());
    t.accumulate(b, a.value() * gm);
  });
}

/// First `n` columns.
inline Var head_cols(Var a, Eigen::Index n) {
  require(n <= a.cols(), ErrorCode::DimensionMismatch, "head_cols beyond width");
  if (n == a.cols()) return a;
  return a.tape->push(a.value().leftCols(n), detail::any_grad({a}), [a, n](Tape& t, const Matrix& g) {
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    ga.leftCols(n) = g;
    t.accumulate(a, ga);
  });
}

/// Lower-triangular matrix whose diagonal is softplus(raw_ii) and whose strict
/// lower triangle is copied from raw; the upper triangle of raw is ignored.
inline Var softplus_lower(Var raw) {
  require(raw.rows() == raw.cols(), ErrorCode::DimensionMismatch, "softplus_lower expects a square matrix");
  Matrix v = detail::tril_strict(raw.value());
  for (Eigen::Index i = 0; i < v.rows(); ++i) v(i, i) = softplus(raw.value()(i, i));
  return raw.tape->push(std::move(v), detail::any_grad({raw}), [raw](Tape& t, const Matrix& g) {
    Matrix gr = detail::tril_strict(g);
    for (Eigen::Index i = 0; i < gr.rows(); ++i) gr(i, i) = g(i, i) * sigmoid(raw.value()(i, i));
    t.accumulate(raw, gr);
  });
}

/// Cholesky factor of a symmetric matrix (jitter escalation as in numerics).
/// The adjoint assumes symmetric perturbations of the input.
inline Var cholesky(Var a, double jitter = 0.0, double* jitter_used = nullptr) {
  CholeskyFactor f = mfhogp::cholesky(a.value(), jitter);
  if (jitter_used != nullptr) *jitter_used = f.jitter;
  Matrix lower = f.lower;
  return a.tape->push(std::move(f.lower), detail::any_grad({a}), [a, lower](Tape& t, const Matrix& g) {
    const auto tri = lower.triangularView<Eigen::Lower>();
    Matrix p = (lower.transpose() * g.triangularView<Eigen::Lower>().toDenseMatrix()).eval();
    p = p.triangularView<Eigen::Lower>().toDenseMatrix();
    p.diagonal() *= 0.5;
    // S = L^{-T} P L^{-1}
    Matrix s = tri.transpose().solve(p);
    s = tri.transpose().solve(s.transpose()).transpose();
    t.accumulate(a, 0.5 * (s + s.transpose()));
  });
}

/// L^{-1} B for lower-triangular L.
inline Var solve_lower(Var l, Var b) {
  require(l.rows() == l.cols() && l.cols() == b.rows(), ErrorCode::DimensionMismatch, "solve_lower shapes");
  Matrix x = l.value().triangularView<Eigen::Lower>().solve(b.value());
  return l.tape->push(x, detail::any_grad({l, b}), [l, b, x](Tape& t, const Matrix& g) {
    const Matrix gb = l.value().triangularView<Eigen::Lower>().transpose().solve(g);
    t.accumulate(b, gb);
    if (t.requires_grad(l)) {
      Matrix gl = -(gb * x.transpose());
      gl = gl.triangularView<Eigen::Lower>().toDenseMatrix();
      t.accumulate(l, gl);
    }
  });
}

/// sum_i log L_ii.
inline Var sum_log_diag(Var l) {
  require(l.rows() == l.cols(), ErrorCode::DimensionMismatch, "sum_log_diag expects a square matrix");
  const double v = l.value().diagonal().array().log().sum();
  return l.tape->push(Matrix::Constant(1, 1, v), detail::any_grad({l}), [l](Tape& t, const Matrix& g) {
    Matrix gl = Matrix::Zero(l.rows(), l.cols());
    gl.diagonal() = g(0, 0) * l.value().diagonal().cwiseInverse();
    t.accumulate(l, gl);
  });
}

/// RBF gram matrix of the rows of x plus jitter on the diagonal.
/// log_ls holds one or x.cols() log-lengthscales; log_amp is 1 x 1.
inline Var rbf_gram(Var x, Var log_ls, Var log_amp, double jitter = 0.0) {
  RbfKernel k;
  k.log_lengthscales = Eigen::Map<const Vector>(log_ls.value().data(), log_ls.value().size());
  k.log_amplitude = log_amp.scalar();
  const Matrix xv = x.value();
  Matrix kv = gram(k, xv);
  Matrix out = kv;
  out.diagonal().array() += jitter;
  const Vector w = k.inverse_sq_lengthscales(xv.cols());
  const bool broadcast = log_ls.value().size() == 1;
  return x.tape->push(std::move(out), detail::any_grad({x, log_ls, log_amp}),
                      [x, log_ls, log_amp, kv, xv, w, broadcast](Tape& t, const Matrix& g) {
                        const Matrix h = g.cwiseProduct(kv);
                        t.accumulate(log_amp, Matrix::Constant(1, 1, h.sum()));
                        const Matrix s = h + h.transpose();
                        const Vector srow = s.rowwise().sum();
                        if (t.requires_grad(x)) {
                          Matrix gx = (srow.asDiagonal() * xv - s * xv) * w.asDiagonal();
                          t.accumulate(x, -gx);
                        }
                        if (t.requires_grad(log_ls)) {
                          // sum_ij h_ij (x_ic - x_jc)^2 = sum_i r_i x_ic^2 + sum_j c_j x_jc^2 - 2 (X^T H X)_cc
                          const Vector r = h.rowwise().sum();
                          const Vector c = h.colwise().sum().transpose();
                          const Matrix x2 = xv.array().square().matrix();
                          const Vector quad = (xv.transpose() * h * xv).diagonal();
                          const Vector per_col =
                              ((x2.transpose() * r) + (x2.transpose() * c) - 2.0 * quad).cwiseProduct(w);
                          Matrix gl(log_ls.rows(), log_ls.cols());
                          if (broadcast)
                            gl(0, 0) = per_col.sum();
                          else
                            gl = Eigen::Map<const Matrix>(per_col.data(), log_ls.rows(), log_ls.cols());
                          t.accumulate(log_ls, gl);
                        }
                      });
}

}  // namespace mfhogp::ad
