#pragma once

// Matrix-normal distribution MN(M, Sigma, Omega): vec(W) ~ N(vec(M), Omega kron Sigma).
// No routine here ever materialises the np x np covariance.

#include <cmath>
#include <string>

#include "mfhogp/kernels.hpp"
#include "mfhogp/numerics.hpp"

namespace mfhogp {

struct MatrixGaussian {
  Matrix mean;     // n x p
  Matrix row_cov;  // n x n
  Matrix col_cov;  // p x p

  Eigen::Index rows() const { return mean.rows(); }
  Eigen::Index cols() const { return mean.cols(); }

  void validate() const {
    require(row_cov.rows() == mean.rows() && row_cov.cols() == mean.rows(), ErrorCode::DimensionMismatch,
            "row covariance must be " + std::to_string(mean.rows()) + " square");
    require(col_cov.rows() == mean.cols() && col_cov.cols() == mean.cols(), ErrorCode::DimensionMismatch,
            "column covariance must be " + std::to_string(mean.cols()) + " square");
  }
};

inline double log_density(const MatrixGaussian& dist, const Matrix& w) {
  dist.validate();
  require(w.rows() == dist.rows() && w.cols() == dist.cols(), ErrorCode::DimensionMismatch,
          "log_density argument shape does not match the mean");
  const auto n = static_cast<double>(dist.rows());
  const auto p = static_cast<double>(dist.cols());
  const CholeskyFactor row = cholesky(dist.row_cov);
  const CholeskyFactor col = cholesky(dist.col_cov);
  // tr(Omega^{-1} D^T Sigma^{-1} D) = ||L_row^{-1} D L_col^{-T}||_F^2
  const Matrix a = row.solve_lower(w - dist.mean);
  const Matrix b = col.solve_lower(a.transpose());
  return -0.5 * n * p * kLog2Pi - 0.5 * p * row.log_det() - 0.5 * n * col.log_det() - 0.5 * b.squaredNorm();
}

/// Reparameterised draw M + L Z R^T with L, R the Cholesky factors.
inline Matrix sample(const MatrixGaussian& dist, RngStream& rng) {
  dist.validate();
  const CholeskyFactor row = cholesky(dist.row_cov);
  const CholeskyFactor col = cholesky(dist.col_cov);
  const Matrix z = standard_normal_matrix(rng, static_cast<std::size_t>(dist.rows()), static_cast<std::size_t>(dist.cols()));
  return dist.mean + row.lower * z * col.lower.transpose();
}

/// KL( MN(M, Sigma, Omega) || MN(0, K, K_BB) ).
inline double kl_to_prior(const MatrixGaussian& q, const Matrix& prior_row, const Matrix& prior_col) {
  q.validate();
  require(prior_row.rows() == q.rows() && prior_col.rows() == q.cols(), ErrorCode::DimensionMismatch,
          "prior covariances do not match the variational shape");
  const auto n = static_cast<double>(q.rows());
  const auto p = static_cast<double>(q.cols());
  const CholeskyFactor k = cholesky(prior_row);
  const CholeskyFactor kbb = cholesky(prior_col);
  const CholeskyFactor sigma = cholesky(q.row_cov);
  const CholeskyFactor omega = cholesky(q.col_cov);

  const double tr_row = k.solve_lower(sigma.lower).squaredNorm();     // tr(K^{-1} Sigma)
  const double tr_col = kbb.solve_lower(omega.lower).squaredNorm();   // tr(K_BB^{-1} Omega)
  const Matrix a = k.solve_lower(q.mean);
  const double quad = kbb.solve_lower(a.transpose()).squaredNorm();  // tr(K_BB^{-1} M^T K^{-1} M)
  return 0.5 * (tr_col * tr_row + quad - n * p + p * (k.log_det() - sigma.log_det()) +
                n * (kbb.log_det() - omega.log_det()));
}

/// Noise-free GP conditional of one query row given training weights: a 1 x p
/// matrix normal with row variance k** - k*n K^{-1} kn* and column covariance
/// `col_cov`. The row variance is clamped at zero.
inline MatrixGaussian conditional(const Matrix& train_inputs, const Matrix& train_w, const RbfKernel& kernel,
                                  const Matrix& col_cov, const Matrix& query, double jitter = 0.0) {
  require(train_w.rows() == train_inputs.rows(), ErrorCode::DimensionMismatch,
          "conditional: weights have " + std::to_string(train_w.rows()) + " rows for " +
              std::to_string(train_inputs.rows()) + " inputs");
  require(query.rows() == 1, ErrorCode::DimensionMismatch, "conditional expects a single query row");
  const CholeskyFactor k = cholesky(gram(kernel, train_inputs), jitter);
  const Matrix cross = gram(kernel, query, train_inputs);  // 1 x n
  const Matrix v = k.solve_lower(cross.transpose());        // n x 1
  MatrixGaussian out;
  out.mean = v.transpose() * k.solve_lower(train_w);
  out.row_cov = Matrix::Constant(1, 1, std::max(kernel.amplitude() - v.squaredNorm(), 0.0));
  out.col_cov = col_cov;
  return out;
}

}  // namespace mfhogp
