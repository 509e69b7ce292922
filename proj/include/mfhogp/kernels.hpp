#pragma once

// Covariance functions over inputs and over decomposed bases. Hyperparameters
// live in log space; gradients are taken with respect to those logs.

#include <cmath>
#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include "mfhogp/numerics.hpp"

namespace mfhogp {

/// Squared-exponential kernel with per-dimension (ARD) lengthscales. A single
/// lengthscale is broadcast over every input column.
struct RbfKernel {
  Vector log_lengthscales = Vector::Zero(1);
  double log_amplitude = 0.0;

  static RbfKernel isotropic(double lengthscale, double amplitude, std::size_t dims = 1) {
    RbfKernel k;
    k.log_lengthscales = Vector::Constant(static_cast<Eigen::Index>(dims), std::log(lengthscale));
    k.log_amplitude = std::log(amplitude);
    return k;
  }

  double amplitude() const { return std::exp(log_amplitude); }
  std::size_t hyperparameter_count() const { return static_cast<std::size_t>(log_lengthscales.size()) + 1; }

  /// Inverse squared lengthscale for column `c` of a `width`-column input.
  Vector inverse_sq_lengthscales(Eigen::Index width) const {
    require(log_lengthscales.size() == 1 || log_lengthscales.size() == width, ErrorCode::DimensionMismatch,
            "rbf kernel has " + std::to_string(log_lengthscales.size()) + " lengthscales for " + std::to_string(width) +
                " input columns");
    if (log_lengthscales.size() == 1) return Vector::Constant(width, std::exp(-2.0 * log_lengthscales(0)));
    return (-2.0 * log_lengthscales.array()).exp().matrix();
  }
};

/// amplitude * 1[a == b], rows compared exactly.
struct DeltaKernel {
  double log_amplitude = 0.0;
  double amplitude() const { return std::exp(log_amplitude); }
};

/// Kernel over bases, evaluated on the concatenation of each basis's
/// compositional vectors rather than on the expanded basis.
struct BasesKernel {
  RbfKernel inner;
};

namespace detail {

inline void check_widths(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), ErrorCode::DimensionMismatch,
          "gram inputs have " + std::to_string(a.cols()) + " and " + std::to_string(b.cols()) + " columns");
}

/// Weighted squared distances sum_c w_c (a_ic - b_jc)^2, formed from the
/// differences so that coincident rows give exactly zero.
inline Matrix weighted_sq_dist(const Matrix& a, const Matrix& b, const Vector& weights) {
  Matrix d(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (Eigen::Index c = 0; c < a.cols(); ++c) {
        const double t = a(i, c) - b(j, c);
        s += weights(c) * t * t;
      }
      d(i, j) = s;
    }
  return d;
}

}  // namespace detail

inline Matrix gram(const RbfKernel& k, const Matrix& a, const Matrix& b) {
  detail::check_widths(a, b);
  const Vector w = k.inverse_sq_lengthscales(a.cols());
  Matrix g = (-0.5 * detail::weighted_sq_dist(a, b, w).array()).exp().matrix() * k.amplitude();
  if (&a == &b) g = 0.5 * (g + g.transpose()).eval();
  return g;
}

inline Matrix gram(const RbfKernel& k, const Matrix& a) {
  Matrix g = gram(k, a, a);
  g.diagonal().setConstant(k.amplitude());
  return 0.5 * (g + g.transpose());
}

inline Matrix gram(const DeltaKernel& k, const Matrix& a, const Matrix& b) {
  detail::check_widths(a, b);
  Matrix g = Matrix::Zero(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j)
      if (a.row(i) == b.row(j)) g(i, j) = k.amplitude();
  return g;
}

inline Matrix gram(const DeltaKernel& k, const Matrix& a) { return gram(k, a, a); }

inline Matrix gram(const BasesKernel& k, const Matrix& a, const Matrix& b) { return gram(k.inner, a, b); }
inline Matrix gram(const BasesKernel& k, const Matrix& a) { return gram(k.inner, a); }

using AnyBasesKernel = std::variant<BasesKernel, DeltaKernel>;

inline Matrix gram(const AnyBasesKernel& k, const Matrix& a) {
  return std::visit([&](const auto& kk) { return gram(kk, a); }, k);
}

/// d gram(a, a) / d(log hyperparameter): one matrix per log-lengthscale, then
/// one for the log-amplitude.
inline std::vector<Matrix> gram_gradient(const RbfKernel& k, const Matrix& a) {
  const Matrix g = gram(k, a);
  std::vector<Matrix> out;
  out.reserve(k.hyperparameter_count());
  const Vector w = k.inverse_sq_lengthscales(a.cols());
  auto self_dist = [&](const Vector& weights) {
    Matrix d = detail::weighted_sq_dist(a, a, weights);
    d.diagonal().setZero();
    return d;
  };
  if (k.log_lengthscales.size() == 1) {
    out.push_back(g.cwiseProduct(self_dist(w)));
  } else {
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      Vector wc = Vector::Zero(a.cols());
      wc(c) = w(c);
      out.push_back(g.cwiseProduct(self_dist(wc)));
    }
  }
  out.push_back(g);
  return out;
}

inline std::vector<Matrix> gram_gradient(const DeltaKernel& k, const Matrix& a) { return {gram(k, a)}; }

inline std::vector<Matrix> gram_gradient(const BasesKernel& k, const Matrix& a) { return gram_gradient(k.inner, a); }

}  // namespace mfhogp
