#pragma once

// Dense linear algebra and random-number primitives shared by every module.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <tuple>

#include "mfhogp/error.hpp"

namespace mfhogp {

/// Row-major dense matrix of 64-bit floats.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// Lower-triangular factor with the diagonal shift that was needed to obtain it.
struct CholeskyFactor {
  Matrix lower;
  double jitter = 0.0;
  bool escalated = false;

  std::size_t dim() const { return static_cast<std::size_t>(lower.rows()); }

  /// log|A + jitter I| from the factor diagonal.
  double log_det() const { return 2.0 * lower.diagonal().array().log().sum(); }

  /// Solves (A + jitter I) X = B.
  Matrix solve(const Matrix& b) const {
    Matrix x = lower.triangularView<Eigen::Lower>().solve(b);
    lower.transpose().triangularView<Eigen::Upper>().solveInPlace(x);
    return x;
  }

  /// L^{-1} B.
  Matrix solve_lower(const Matrix& b) const { return lower.triangularView<Eigen::Lower>().solve(b); }
};

struct CholeskyPolicy {
  double first_escalation = 1e-8;
  double max_jitter = 1e-2;
  double growth = 10.0;
};

namespace detail {

inline bool try_cholesky(const Matrix& a, double jitter, Matrix& out) {
  Matrix shifted = a;
  if (jitter > 0.0) shifted.diagonal().array() += jitter;
  Eigen::LLT<Matrix> llt(shifted);
  if (llt.info() != Eigen::Success) return false;
  out = llt.matrixL();
  const auto diag = out.diagonal().array();
  return (diag > 0.0).all() && diag.isFinite().all() && out.allFinite();
}

}  // namespace detail

/// Cholesky factorisation of a symmetric matrix. On failure the diagonal shift
/// grows geometrically until `policy.max_jitter`; the shift used is reported.
inline CholeskyFactor cholesky(const Matrix& a, double jitter = 0.0, const CholeskyPolicy& policy = {}) {
  require(a.rows() == a.cols(), ErrorCode::DimensionMismatch,
          "cholesky expects a square matrix, got " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()));
  require(jitter >= 0.0, ErrorCode::InvalidArgument, "cholesky jitter must be nonnegative");
  require(a.allFinite(), ErrorCode::NotPositiveDefinite, "cholesky input has non-finite entries");
  const double scale = a.cwiseAbs().maxCoeff();
  require((a - a.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * std::max(scale, 1.0), ErrorCode::InvalidArgument,
          "cholesky input is not symmetric");

  CholeskyFactor factor;
  if (a.rows() == 0) return factor;
  if (detail::try_cholesky(a, jitter, factor.lower)) {
    factor.jitter = jitter;
    return factor;
  }
  double current = jitter < policy.first_escalation ? policy.first_escalation : jitter * policy.growth;
  while (current <= policy.max_jitter * (1.0 + 1e-12)) {
    if (detail::try_cholesky(a, current, factor.lower)) {
      factor.jitter = current;
      factor.escalated = true;
      return factor;
    }
    current *= policy.growth;
  }
  fail(ErrorCode::NotPositiveDefinite,
       "cholesky failed with jitter up to " + std::to_string(policy.max_jitter) + " (dim " + std::to_string(a.rows()) + ")");
}

inline constexpr std::size_t kDefaultKronElementCap = std::size_t{1} << 28;

/// Kronecker product; block (i, j) of the result is a(i, j) * b.
inline Matrix kron(const Matrix& a, const Matrix& b, std::size_t element_cap = kDefaultKronElementCap) {
  const auto rows = static_cast<std::size_t>(a.rows() * b.rows());
  const auto cols = static_cast<std::size_t>(a.cols() * b.cols());
  require(cols == 0 || rows <= element_cap / cols, ErrorCode::OverflowingDimensions,
          "kron result " + std::to_string(rows) + "x" + std::to_string(cols) + " exceeds element cap");
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

/// Column-stacking vectorisation vec(A).
inline Vector vec(const Matrix& a) {
  Vector out(a.size());
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i) out(k++) = a(i, j);
  return out;
}

struct ThinSvd {
  Matrix u;  // rows x k
  Vector s;  // k, nonincreasing
  Matrix v;  // cols x k
};

/// Leading-k singular triplets.
inline ThinSvd thin_svd(const Matrix& a, std::size_t k) {
  const auto min_dim = static_cast<std::size_t>(std::min(a.rows(), a.cols()));
  require(k <= min_dim, ErrorCode::InvalidArgument,
          "thin_svd rank " + std::to_string(k) + " exceeds min dimension " + std::to_string(min_dim));
  ThinSvd out;
  const auto kk = static_cast<Eigen::Index>(k);
  if (k == 0) {
    out.u = Matrix(a.rows(), 0);
    out.s = Vector(0);
    out.v = Matrix(a.cols(), 0);
    return out;
  }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(a), Eigen::ComputeThinU | Eigen::ComputeThinV);
  require(svd.info() == Eigen::Success, ErrorCode::ConvergenceFailure, "thin_svd did not converge");
  out.u = svd.matrixU().leftCols(kk);
  out.s = svd.singularValues().head(kk);
  out.v = svd.matrixV().leftCols(kk);
  return out;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seeded random stream. Identical seed and call sequence reproduce identical
/// draws; never share one instance between workers, use split() instead.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0) : seed_(seed), engine_(splitmix64(seed)) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t draws() const { return draws_; }

  double normal() {
    ++draws_;
    return normal_(engine_);
  }

  double uniform(double lo = 0.0, double hi = 1.0) {
    ++draws_;
    return lo + (hi - lo) * std::generate_canonical<double, 53>(engine_);
  }

  std::uint64_t next_u64() {
    ++draws_;
    return engine_();
  }

  /// Independent child stream derived from this stream's seed and `index`.
  RngStream split(std::uint64_t index) const { return RngStream(splitmix64(seed_ ^ splitmix64(index + 0x5851F42D4C957F2DULL))); }

 private:
  std::uint64_t seed_;
  std::uint64_t draws_ = 0;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// i.i.d. standard normal entries, filled in row-major order.
inline Matrix standard_normal_matrix(RngStream& rng, std::size_t rows, std::size_t cols) {
  Matrix z(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    for (Eigen::Index j = 0; j < z.cols(); ++j) z(i, j) = rng.normal();
  return z;
}

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double inverse_softplus(double y) { return y > 30.0 ? y : std::log(std::expm1(y)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// log(sum(exp(values))) without overflow.
inline double log_sum_exp(std::span<const double> values) {
  if (values.empty()) return -std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : values) hi = std::max(hi, v);
  if (!std::isfinite(hi)) return hi;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - hi);
  return hi + std::log(acc);
}

inline Matrix identity(std::size_t n) { return Matrix::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)); }

}  // namespace mfhogp
