#pragma once

// PCA-GP reference emulator: centre the outputs, keep the top-K right singular
// vectors as bases and regress each score column with an independent scalar GP.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mfhogp/kernels.hpp"
#include "mfhogp/mfmodel.hpp"
#include "mfhogp/numerics.hpp"
#include "mfhogp/parallel.hpp"

namespace mfhogp {

struct ScalarGpOptions {
  std::size_t restarts = 3;
  std::size_t steps = 150;  // Adam steps per restart
  double learning_rate = 0.05;
  double noise_floor = 1e-8;                  // lower bound on the noise variance, relative to the target variance
  std::optional<double> fixed_noise;          // relative noise variance held fixed when set
  std::uint64_t seed = 0;
};

/// Zero-mean GP with an ARD RBF kernel and Gaussian noise on a standardised target.
struct ScalarGp {
  RbfKernel kernel;
  double log_noise = std::log(1e-2);
  double scale = 1.0;  // target standard deviation
  Matrix inputs;
  Vector alpha;  // K^{-1} z
  CholeskyFactor chol;
  double log_marginal = 0.0;

  double noise() const { return std::exp(log_noise); }

  /// Predictive mean and variance of the noisy target at each row of x.
  std::pair<Vector, Vector> predict(const Matrix& x) const {
    const Matrix cross = gram(kernel, x, inputs);
    const Vector mean = scale * cross * alpha;
    const Matrix v = chol.solve_lower(cross.transpose());
    const Vector var =
        (scale * scale) * ((kernel.amplitude() + noise() - v.colwise().squaredNorm().transpose().array()).cwiseMax(0.0)).matrix();
    return {mean, var};
  }
};

namespace detail {

struct GpFit {
  double lml;
  Vector grad;  // [log ls..., log amp, log noise]
};

inline GpFit gp_objective(const Matrix& x, const Vector& z, const RbfKernel& k, double log_noise) {
  const Matrix kf = gram(k, x);
  Matrix kk = kf;
  kk.diagonal().array() += std::exp(log_noise);
  const CholeskyFactor c = cholesky(kk);
  const Vector a = c.solve(z);
  const auto n = static_cast<double>(z.size());
  GpFit f;
  f.lml = -0.5 * z.dot(a) - 0.5 * c.log_det() - 0.5 * n * kLog2Pi;
  const Matrix w = a * a.transpose() - c.solve(identity(x.rows()));
  const Matrix wk = w.cwiseProduct(kf);
  const Eigen::Index s = x.cols();
  f.grad.resize(s + 2);
  const Vector inv = k.inverse_sq_lengthscales(s);
  for (Eigen::Index col = 0; col < s; ++col) {
    const Vector xc = x.col(col);
    double g = 0.0;
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < x.rows(); ++j) g += wk(i, j) * (xc(i) - xc(j)) * (xc(i) - xc(j));
    f.grad(col) = 0.5 * g * inv(col);
  }
  f.grad(s) = 0.5 * wk.sum();
  f.grad(s + 1) = 0.5 * std::exp(log_noise) * w.trace();
  return f;
}

}  // namespace detail

/// Type-II maximum likelihood with multi-restart Adam on the log hyperparameters.
inline ScalarGp fit_scalar_gp(const Matrix& x, const Vector& y, const ScalarGpOptions& opt) {
  require(x.rows() == y.size() && x.rows() > 0, ErrorCode::DimensionMismatch, "scalar GP inputs and targets differ in length");
  const Eigen::Index s = x.cols();
  const double sd = std::sqrt(y.squaredNorm() / static_cast<double>(y.size()));
  ScalarGp best;
  best.scale = sd > 0.0 ? sd : 1.0;
  const Vector z = y / best.scale;
  const double floor = std::log(opt.noise_floor);

  Vector base_ls(s);
  for (Eigen::Index c = 0; c < s; ++c) base_ls(c) = std::log(detail::median_pairwise_distance(x.col(c)));
  RngStream rng(opt.seed);
  bool found = false;
  for (std::size_t r = 0; r < std::max<std::size_t>(opt.restarts, 1); ++r) {
    // restart 0 starts at the median heuristic; later ones are jittered around it
    const double spread = r == 0 ? 0.0 : 0.5;
    Vector theta(s + 2);
    for (Eigen::Index c = 0; c < s; ++c) theta(c) = base_ls(c) + spread * rng.normal();
    theta(s) = spread * rng.normal();
    theta(s + 1) = opt.fixed_noise ? std::log(*opt.fixed_noise) : std::log(1e-2) + 2.0 * spread * rng.normal();
    Vector m1 = Vector::Zero(s + 2), m2 = Vector::Zero(s + 2);
    auto unpack = [&](const Vector& t) {
      RbfKernel k;
      k.log_lengthscales = t.head(s);
      k.log_amplitude = t(s);
      return k;
    };
    double lml = -std::numeric_limits<double>::infinity();
    try {
      for (std::size_t step = 0; step < opt.steps; ++step) {
        const detail::GpFit f = detail::gp_objective(x, z, unpack(theta), theta(s + 1));
        if (!std::isfinite(f.lml) || !f.grad.allFinite()) break;
        Vector g = f.grad;
        if (opt.fixed_noise) g(s + 1) = 0.0;
        const double t = static_cast<double>(step + 1);
        m1 = 0.9 * m1 + 0.1 * g;
        m2 = 0.999 * m2 + 0.001 * g.cwiseAbs2();
        theta += opt.learning_rate * ((m1 / (1.0 - std::pow(0.9, t))).array() /
                                      ((m2 / (1.0 - std::pow(0.999, t))).array().sqrt() + 1e-8))
                                         .matrix();
        if (!opt.fixed_noise) theta(s + 1) = std::max(theta(s + 1), floor);
        theta.head(s) = theta.head(s).cwiseMax(-10.0).cwiseMin(10.0);
        theta(s) = std::clamp(theta(s), -10.0, 10.0);
      }
      lml = detail::gp_objective(x, z, unpack(theta), theta(s + 1)).lml;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::NotPositiveDefinite) throw;
    }
    if (std::isfinite(lml) && (!found || lml > best.log_marginal)) {
      found = true;
      best.kernel = unpack(theta);
      best.log_noise = theta(s + 1);
      best.log_marginal = lml;
    }
  }
  require(found, ErrorCode::ConvergenceFailure, "scalar GP hyperparameter search failed on every restart");
  Matrix kk = gram(best.kernel, x);
  kk.diagonal().array() += best.noise();
  best.chol = cholesky(kk);
  best.alpha = best.chol.solve(z);
  best.inputs = x;
  return best;
}

struct PcaGpModel {
  RowVector mean;            // d
  Matrix bases;              // K x d, orthonormal rows
  Vector singular_values;    // K
  Matrix scores;             // N x K, centred outputs projected on the bases
  std::vector<ScalarGp> gps;
  double residual_variance = 0.0;  // per entry, from the discarded components
  bool trained = false;

  std::size_t components() const { return static_cast<std::size_t>(bases.rows()); }
};

inline PcaGpModel fit_pca_gp(const Matrix& x, const Matrix& y, std::size_t k, const ScalarGpOptions& opt = {}) {
  require(x.rows() == y.rows() && x.rows() > 0, ErrorCode::DimensionMismatch, "PCA-GP inputs and outputs differ in rows");
  require(k <= static_cast<std::size_t>(std::min(y.rows(), y.cols())), ErrorCode::InvalidArgument,
          "PCA-GP needs K <= min(N, d); got K = " + std::to_string(k));
  PcaGpModel m;
  m.mean = y.colwise().mean();
  const Matrix yc = y.rowwise() - m.mean;
  const ThinSvd svd = thin_svd(yc, k);
  m.bases = svd.v.transpose();
  m.singular_values = svd.s;
  m.scores = yc * svd.v;
  m.residual_variance = std::max((yc - m.scores * m.bases).squaredNorm() / static_cast<double>(yc.size()), 1e-12);
  m.gps.resize(k);
  parallel_for(k, [&](std::size_t j) {
    ScalarGpOptions o = opt;
    o.seed = splitmix64(opt.seed + j);
    m.gps[j] = fit_scalar_gp(x, m.scores.col(static_cast<Eigen::Index>(j)), o);
  });
  m.trained = true;
  return m;
}

struct PcaGpPrediction {
  Matrix mean;      // Q x d
  Matrix variance;  // Q x d
};

inline PcaGpPrediction predict_pca_gp(const PcaGpModel& m, const Matrix& x_star) {
  require(m.trained, ErrorCode::UntrainedModel, "PCA-GP model has not been fitted");
  const auto q = x_star.rows();
  PcaGpPrediction p;
  p.mean = m.mean.replicate(q, 1);
  p.variance = Matrix::Constant(q, m.mean.size(), m.residual_variance);
  const Matrix b2 = m.bases.cwiseAbs2();
  for (std::size_t j = 0; j < m.gps.size(); ++j) {
    const auto [mu, var] = m.gps[j].predict(x_star);
    const auto jj = static_cast<Eigen::Index>(j);
    p.mean += mu * m.bases.row(jj);
    p.variance += var * b2.row(jj);
  }
  return p;
}

/// Mean Gaussian log density of the truth rows under the diagonal predictive.
inline double pca_gp_log_likelihood(const PcaGpPrediction& p, const Matrix& truth) {
  require(p.mean.rows() == truth.rows() && p.mean.cols() == truth.cols(), ErrorCode::DimensionMismatch,
          "prediction and truth shapes differ");
  const auto r = (truth - p.mean).array();
  const double total = (-0.5 * (kLog2Pi + p.variance.array().log()) - 0.5 * r.square() / p.variance.array()).sum();
  return total / static_cast<double>(truth.rows());
}

// ---------------------------------------------------------------------------
// Training-set selection

enum class BaselineMode { F1, FTop, All };

inline std::string baseline_mode_name(BaselineMode m) {
  switch (m) {
    case BaselineMode::F1: return "pcagp-f1";
    case BaselineMode::FTop: return "pcagp-ftop";
    case BaselineMode::All: return "pcagp-all";
  }
  return "pcagp";
}

/// Rows used by each mode. ALL walks from the top level down and drops any
/// lower-fidelity row whose input already appears at a higher fidelity.
inline FidelityData baseline_training_set(const MultiFidelityDataset& data, BaselineMode mode) {
  data.validate();
  if (mode == BaselineMode::F1) return FidelityData{data.levels.front().inputs, data.levels.front().outputs, {}};
  if (mode == BaselineMode::FTop) return FidelityData{data.levels.back().inputs, data.levels.back().outputs, {}};
  std::vector<RowVector> xs, ys;
  for (std::size_t i = data.fidelity_count(); i-- > 0;) {
    const auto& l = data.levels[i];
    for (Eigen::Index r = 0; r < l.inputs.rows(); ++r) {
      const RowVector x = l.inputs.row(r);
      if (std::none_of(xs.begin(), xs.end(), [&](const RowVector& seen) { return seen == x; })) {
        xs.push_back(x);
        ys.push_back(l.outputs.row(r));
      }
    }
  }
  FidelityData out;
  out.inputs.resize(static_cast<Eigen::Index>(xs.size()), data.levels.front().inputs.cols());
  out.outputs.resize(static_cast<Eigen::Index>(ys.size()), data.levels.front().outputs.cols());
  for (std::size_t r = 0; r < xs.size(); ++r) {
    out.inputs.row(static_cast<Eigen::Index>(r)) = xs[r];
    out.outputs.row(static_cast<Eigen::Index>(r)) = ys[r];
  }
  return out;
}

}  // namespace mfhogp
