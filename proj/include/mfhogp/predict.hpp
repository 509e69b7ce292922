#pragma once

// Posterior predictive sampling at the highest fidelity and evaluation metrics.
//
// One draw walks the levels in order 1..F: W(i) ~ q(W(i)), training inputs are
// augmented with the drawn W(i-1), and w*(i) is drawn from the noise-free GP
// conditional at [x*, w*(i-1)] with column covariance K_BB(i). The output
// sample is w*(F) B(F) plus N(0, eta_bar^{-1} I) noise.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mfhogp/matnorm.hpp"
#include "mfhogp/mfmodel.hpp"

namespace mfhogp {

inline constexpr std::size_t kDefaultPredictiveSamples = 64;

struct PredictiveEnsemble {
  Matrix samples;        // S x d latent draws w*(F) B(F)
  Matrix noisy_samples;  // S x d output draws, samples plus observation noise
  RowVector empirical_mean;
  RowVector empirical_var;  // spread of the latent draws (divisor S) plus 1 / noise_precision_used
  double noise_precision_used = 1.0;

  std::size_t sample_count() const { return static_cast<std::size_t>(samples.rows()); }
};

namespace detail {

inline void require_trained(const ModelState& model, const MultiFidelityDataset& data) {
  require(model.fidelity_count() > 0 && model.bases_per_level > 0, ErrorCode::UntrainedModel, "model has no levels");
  for (std::size_t i = 0; i < model.fidelity_count(); ++i)
    require(model.levels[i].mean.size() > 0, ErrorCode::UntrainedModel,
            "level " + std::to_string(i + 1) + " has no variational posterior");
  check_model_matches(model, data);
}

inline PredictiveEnsemble summarise(Matrix latent, Matrix noisy, double precision) {
  PredictiveEnsemble e;
  const auto s = static_cast<double>(latent.rows());
  e.empirical_mean = latent.colwise().mean();
  e.empirical_var = ((latent.rowwise() - e.empirical_mean).array().square().colwise().sum() / s + 1.0 / precision).matrix();
  e.samples = std::move(latent);
  e.noisy_samples = std::move(noisy);
  e.noise_precision_used = precision;
  return e;
}

}  // namespace detail

/// Ensembles for every row of `x_star`. All queries share the training-weight
/// draws W(i) of sample s; each query's own draws are independent.
inline std::vector<PredictiveEnsemble> predict_batch(const ModelState& model, const MultiFidelityDataset& data,
                                                     const Matrix& x_star, std::size_t s_samples, RngStream& rng) {
  detail::require_trained(model, data);
  require(s_samples >= 1, ErrorCode::InvalidArgument, "at least one predictive sample is required");
  require(x_star.cols() == static_cast<Eigen::Index>(model.input_dim), ErrorCode::DimensionMismatch,
          "query inputs have " + std::to_string(x_star.cols()) + " columns, model expects " +
              std::to_string(model.input_dim));

  const std::size_t f = model.fidelity_count();
  const auto q = x_star.rows();
  const auto d = static_cast<Eigen::Index>(model.output_dim);
  const auto ss = static_cast<Eigen::Index>(s_samples);
  const double precision = model.noise_ladder().effective_precision(f - 1);
  const double noise_sd = 1.0 / std::sqrt(precision);

  std::vector<Matrix> bases(f), kbb_lower(f), row_lower(f), col_lower(f);
  for (std::size_t i = 0; i < f; ++i) {
    bases[i] = stacked_bases(model, i);
    kbb_lower[i] = cholesky(bases_gram(model, i)).lower;
    row_lower[i] = model.levels[i].row_factor();
    col_lower[i] = model.levels[i].col_factor();
  }

  std::vector<Matrix> latent(static_cast<std::size_t>(q), Matrix(ss, d));
  std::vector<Matrix> noisy(static_cast<std::size_t>(q), Matrix(ss, d));
  for (Eigen::Index s = 0; s < ss; ++s) {
    Matrix w_prev;                          // W(i-1) at the training inputs
    Matrix star_prev = Matrix::Zero(q, 0);  // w*(i-1) per query row
    for (std::size_t i = 0; i < f; ++i) {
      const auto& lvl = model.levels[i];
      const auto& di = data.levels[i];
      const Matrix z = standard_normal_matrix(rng, static_cast<std::size_t>(lvl.mean.rows()), static_cast<std::size_t>(lvl.mean.cols()));
      const Matrix w = lvl.mean + row_lower[i] * z * col_lower[i].transpose();
      const Matrix xa = i == 0 ? di.inputs : augment_inputs(di.inputs, w_prev, di.parent_index);
      Matrix qa(q, xa.cols());
      qa << x_star, star_prev;

      const CholeskyFactor k = cholesky(input_gram(model, i, xa));
      const Matrix cross = gram(lvl.input_kernel, qa, xa);  // q x N_i
      const Matrix v = k.solve_lower(cross.transpose());   // N_i x q
      const Matrix mean = v.transpose() * k.solve_lower(w);
      const Vector row_var = (lvl.input_kernel.amplitude() - v.colwise().squaredNorm().array()).cwiseMax(0.0).matrix();
      const Matrix zs = standard_normal_matrix(rng, static_cast<std::size_t>(q), static_cast<std::size_t>(w.cols()));
      Matrix star = mean + row_var.cwiseSqrt().asDiagonal() * zs * kbb_lower[i].transpose();

      w_prev = w;
      star_prev = std::move(star);
    }
    const Matrix f_star = star_prev * bases[f - 1];
    const Matrix eps = standard_normal_matrix(rng, static_cast<std::size_t>(q), static_cast<std::size_t>(d));
    for (Eigen::Index r = 0; r < q; ++r) {
      latent[static_cast<std::size_t>(r)].row(s) = f_star.row(r);
      noisy[static_cast<std::size_t>(r)].row(s) = f_star.row(r) + noise_sd * eps.row(r);
    }
  }

  std::vector<PredictiveEnsemble> out;
  out.reserve(static_cast<std::size_t>(q));
  for (Eigen::Index r = 0; r < q; ++r)
    out.push_back(detail::summarise(std::move(latent[static_cast<std::size_t>(r)]), std::move(noisy[static_cast<std::size_t>(r)]), precision));
  return out;
}

inline PredictiveEnsemble predict(const ModelState& model, const MultiFidelityDataset& data, const Matrix& x_star,
                                  std::size_t s_samples, RngStream& rng) {
  require(x_star.rows() == 1, ErrorCode::DimensionMismatch, "predict expects a single query row; use predict_batch");
  return std::move(predict_batch(model, data, x_star, s_samples, rng).front());
}

/// Row-stacked empirical means of a batch of ensembles.
inline Matrix ensemble_means(const std::vector<PredictiveEnsemble>& batch) {
  if (batch.empty()) return Matrix(0, 0);
  Matrix out(static_cast<Eigen::Index>(batch.size()), batch.front().empirical_mean.size());
  for (std::size_t r = 0; r < batch.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = batch[r].empirical_mean;
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

inline double rmse(const Matrix& pred, const Matrix& truth) {
  require(pred.rows() == truth.rows() && pred.cols() == truth.cols(), ErrorCode::DimensionMismatch,
          "rmse shapes differ: " + std::to_string(pred.rows()) + "x" + std::to_string(pred.cols()) + " vs " +
              std::to_string(truth.rows()) + "x" + std::to_string(truth.cols()));
  require(truth.size() > 0, ErrorCode::DimensionMismatch, "rmse of empty matrices");
  return std::sqrt((pred - truth).squaredNorm() / static_cast<double>(truth.size()));
}

inline double n_rmse(const Matrix& pred, const Matrix& truth) {
  const double e = rmse(pred, truth);
  return e / std::sqrt(truth.squaredNorm() / static_cast<double>(truth.size()));
}

enum class LogLikelihoodMode {
  Mixture,       // equal-weight mixture of N(truth | sample, eta_bar^{-1} I)
  MomentMatched  // N(truth | empirical_mean, diag(empirical_var))
};

/// Log predictive density of `truth` under the ensemble.
inline double test_log_likelihood(const PredictiveEnsemble& e, const RowVector& truth,
                                  LogLikelihoodMode mode = LogLikelihoodMode::Mixture) {
  require(e.sample_count() >= 2, ErrorCode::DegenerateEnsemble,
          "test log-likelihood needs at least 2 samples, got " + std::to_string(e.sample_count()));
  require(truth.size() == e.samples.cols(), ErrorCode::DimensionMismatch, "truth length does not match the ensemble");
  const auto d = static_cast<double>(truth.size());
  if (mode == LogLikelihoodMode::MomentMatched) {
    const auto var = e.empirical_var.array();
    return -0.5 * d * kLog2Pi - 0.5 * var.log().sum() - 0.5 * ((truth - e.empirical_mean).array().square() / var).sum();
  }
  const double prec = e.noise_precision_used;
  std::vector<double> terms(e.sample_count());
  for (std::size_t s = 0; s < terms.size(); ++s)
    terms[s] = 0.5 * d * (std::log(prec) - kLog2Pi) - 0.5 * prec * (truth - e.samples.row(static_cast<Eigen::Index>(s))).squaredNorm();
  return log_sum_exp(terms) - std::log(static_cast<double>(terms.size()));
}

/// Mean test log-likelihood over a batch, one truth row per ensemble.
inline double mean_test_log_likelihood(const std::vector<PredictiveEnsemble>& batch, const Matrix& truth,
                                       LogLikelihoodMode mode = LogLikelihoodMode::Mixture) {
  require(static_cast<Eigen::Index>(batch.size()) == truth.rows(), ErrorCode::DimensionMismatch,
          "one truth row per ensemble expected");
  double s = 0.0;
  for (std::size_t r = 0; r < batch.size(); ++r) s += test_log_likelihood(batch[r], truth.row(static_cast<Eigen::Index>(r)), mode);
  return s / static_cast<double>(batch.size());
}

}  // namespace mfhogp
