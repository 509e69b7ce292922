#pragma once

// Single-fidelity nonlinear coregionalisation:
//   W ~ MN(0, K, K_BB),  Y = W B + noise,  noise ~ N(0, eta^{-1} I)
// so that vec(Y) ~ N(0, (B^T K_BB B) kron K + eta^{-1} I).

#include <cmath>
#include <string>

#include <Eigen/Eigenvalues>

#include "mfhogp/kernels.hpp"
#include "mfhogp/numerics.hpp"

namespace mfhogp {

struct CoregModel {
  Matrix bases;  // K x d
  RbfKernel input_kernel;
  AnyBasesKernel bases_kernel = BasesKernel{};
  double log_noise_precision = 0.0;

  double noise_precision() const { return std::exp(log_noise_precision); }
  Matrix bases_gram() const { return gram(bases_kernel, bases); }
};

enum class LikelihoodEvaluation { Structured, Dense };

inline constexpr Eigen::Index kDenseFallbackLimit = 4096;

namespace detail {

inline void check_coreg_shapes(const CoregModel& model, const Matrix& x, const Matrix& y) {
  require(x.rows() == y.rows(), ErrorCode::DimensionMismatch,
          "inputs have " + std::to_string(x.rows()) + " rows but outputs have " + std::to_string(y.rows()));
  require(model.bases.cols() == y.cols(), ErrorCode::DimensionMismatch,
          "bases have " + std::to_string(model.bases.cols()) + " columns but outputs have " + std::to_string(y.cols()));
}

inline double dense_gaussian_log_density(const Matrix& cov, const Vector& v) {
  const CholeskyFactor c = cholesky(cov);
  const Vector a = c.solve_lower(v);
  return -0.5 * static_cast<double>(v.size()) * kLog2Pi - 0.5 * c.log_det() - 0.5 * a.squaredNorm();
}

}  // namespace detail

/// log p(Y | X, B) with the Kronecker covariance. The structured path uses the
/// eigendecomposition of K and the SVD of L_BB^T B; the dense path builds the
/// full Nd x Nd covariance and is limited to Nd <= 4096.
inline double marginal_log_likelihood(const CoregModel& model, const Matrix& x, const Matrix& y,
                                      LikelihoodEvaluation how = LikelihoodEvaluation::Structured) {
  detail::check_coreg_shapes(model, x, y);
  const double noise_var = 1.0 / model.noise_precision();
  const Matrix k = gram(model.input_kernel, x);
  const Matrix kbb = model.bases_gram();

  if (how == LikelihoodEvaluation::Dense) {
    require(y.size() <= kDenseFallbackLimit, ErrorCode::OverflowingDimensions,
            "dense likelihood limited to N*d <= " + std::to_string(kDenseFallbackLimit));
    Matrix cov = kron(model.bases.transpose() * kbb * model.bases, k);
    cov.diagonal().array() += noise_var;
    return detail::dense_gaussian_log_density(cov, vec(y));
  }

  const auto n = static_cast<double>(y.rows());
  const auto d = static_cast<double>(y.cols());
  const Eigen::MatrixXd k_col = k;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_k(k_col);
  const Vector lambda = eig_k.eigenvalues().cwiseMax(0.0);
  const Matrix qk = eig_k.eigenvectors();

  // B^T K_BB B = V S^2 V^T with V orthonormal (d x r).
  Matrix v = Matrix::Zero(y.cols(), 0);
  Vector s2 = Vector::Zero(0);
  if (model.bases.rows() > 0 && model.bases.cols() > 0) {
    const CholeskyFactor lbb = cholesky(kbb);
    const Matrix g = lbb.lower.transpose() * model.bases;  // K x d
    const ThinSvd svd = thin_svd(g, static_cast<std::size_t>(std::min(g.rows(), g.cols())));
    v = svd.v;
    s2 = svd.s.array().square();
  }
  const Matrix yv = y * v;                    // N x r
  const Matrix proj = qk.transpose() * yv;    // eigen-coordinates
  double log_det = 0.0;
  double quad = 0.0;
  for (Eigen::Index r = 0; r < s2.size(); ++r) {
    for (Eigen::Index i = 0; i < lambda.size(); ++i) {
      const double e = s2(r) * lambda(i) + noise_var;
      log_det += std::log(e);
      quad += proj(i, r) * proj(i, r) / e;
    }
  }
  log_det += n * (d - static_cast<double>(s2.size())) * std::log(noise_var);
  quad += (y.squaredNorm() - yv.squaredNorm()) / noise_var;
  return -0.5 * n * d * kLog2Pi - 0.5 * log_det - 0.5 * quad;
}

/// cov(y_m(x_i), y_t(x_j)) = k(x_i, x_j) b_m^T K_BB b_t + eta^{-1} 1[x_i == x_j, m == t]
/// where b_m is column m of B.
inline double output_cross_covariance(const CoregModel& model, const Matrix& xi, const Matrix& xj, Eigen::Index m,
                                      Eigen::Index t) {
  require(m >= 0 && m < model.bases.cols() && t >= 0 && t < model.bases.cols(), ErrorCode::IndexOutOfRange,
          "output index outside [0, " + std::to_string(model.bases.cols()) + ")");
  require(xi.rows() == 1 && xj.rows() == 1, ErrorCode::DimensionMismatch, "cross covariance expects single input rows");
  const double kx = gram(model.input_kernel, xi, xj)(0, 0);
  const Matrix kbb = model.bases_gram();
  const double coupling = (model.bases.col(m).transpose() * kbb * model.bases.col(t))(0, 0);
  const bool same = (xi == xj) && m == t;
  return kx * coupling + (same ? 1.0 / model.noise_precision() : 0.0);
}

/// LMC log marginal likelihood with K independent weight GPs sharing one
/// kernel. Evaluated through the latent weights with the matrix determinant
/// lemma and Woodbury identity, independently of the Kronecker route above.
inline double lmc_equivalent_log_likelihood(const Matrix& bases, const RbfKernel& shared_kernel, double log_noise,
                                            const Matrix& x, const Matrix& y) {
  require(x.rows() == y.rows() && bases.cols() == y.cols(), ErrorCode::DimensionMismatch, "lmc shapes inconsistent");
  const double eta = std::exp(log_noise);
  const auto n = y.rows();
  const auto d = y.cols();
  const auto kk = bases.rows();
  const double total = static_cast<double>(n * d);
  if (kk == 0) return 0.5 * total * (log_noise - kLog2Pi) - 0.5 * eta * y.squaredNorm();

  // vec(Y) = Phi vec(V) + e with Phi = B^T kron L_K and V standard normal.
  const CholeskyFactor lk = cholesky(gram(shared_kernel, x));
  const Matrix inner = kron(bases * bases.transpose(), lk.lower.transpose() * lk.lower);  // Phi^T Phi
  Matrix cap = eta * inner;
  cap.diagonal().array() += 1.0;
  const CholeskyFactor capf = cholesky(0.5 * (cap + cap.transpose()));
  const Vector phit_y = vec(lk.lower.transpose() * y * bases.transpose());
  const double log_det = -total * log_noise + capf.log_det();
  const double quad = eta * y.squaredNorm() - eta * eta * phit_y.dot(Vector(capf.solve(phit_y)));
  return -0.5 * total * kLog2Pi - 0.5 * log_det - 0.5 * quad;
}

}  // namespace mfhogp
