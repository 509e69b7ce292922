#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "mfhogp/predict.hpp"
#include "mfhogp/svi.hpp"

using namespace mfhogp;

namespace {

// Single level with M B reproducing Y exactly, a tight posterior and high precision.
ModelState near_noiseless(const MultiFidelityDataset& data, std::size_t k) {
  ModelState m = initialize_model(data, {.bases = k, .seed = 3});
  auto& lvl = m.levels[0];
  const Matrix b = stacked_bases(m, 0);
  lvl.mean = b.transpose().completeOrthogonalDecomposition().solve(data.levels[0].outputs.transpose()).transpose();
  lvl.row_factor_raw = FidelityLevel::raw_from_factor(1e-4 * identity(lvl.mean.rows()));
  lvl.col_factor_raw = FidelityLevel::raw_from_factor(identity(lvl.mean.cols()));
  lvl.log_eta = std::log(1e6);
  lvl.input_kernel.log_lengthscales.setConstant(std::log(0.5));  // fixture inputs sit 1.5 apart
  return m;
}

PredictiveEnsemble manual_ensemble(Matrix samples, double precision) {
  PredictiveEnsemble e;
  e.samples = samples;
  e.noisy_samples = samples;
  e.empirical_mean = samples.colwise().mean();
  e.empirical_var = RowVector::Constant(samples.cols(), 1.0 / precision);
  e.noise_precision_used = precision;
  return e;
}

MultiFidelityDataset synthetic(std::uint64_t seed, int n) {
  RngStream rng(seed);
  const int d = 16, k = 2;
  Matrix x(n, 1);
  for (int i = 0; i < n; ++i) x(i, 0) = rng.uniform();
  Matrix b(k, d);
  for (int j = 0; j < d; ++j) {
    b(0, j) = std::sin(0.4 * j);
    b(1, j) = std::cos(0.25 * j);
  }
  const MatrixGaussian prior{Matrix::Zero(n, k), gram(RbfKernel::isotropic(0.3, 1.0), x), identity(k)};
  Matrix y = sample(prior, rng) * b;
  for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] += 0.05 * rng.normal();
  MultiFidelityDataset data;
  data.levels = {FidelityData{x, y, {}}};
  return data;
}

}  // namespace

TEST(Predict, InterpolatesTrainingOutputWhenNearlyNoiseless) {
  const auto data = fixtures::tiny_nested(11, {6}, 3);
  const ModelState m = near_noiseless(data, 3);
  RngStream rng(4);
  for (Eigen::Index r = 0; r < 6; ++r) {
    const PredictiveEnsemble e = predict(m, data, data.levels[0].inputs.row(r), 64, rng);
    const RowVector se = (e.empirical_var.array() / 64.0).sqrt().matrix();
    for (Eigen::Index j = 0; j < 3; ++j)
      EXPECT_LT(std::abs(e.empirical_mean(j) - data.levels[0].outputs(r, j)), 3.0 * se(j) + 1e-6) << r << "," << j;
  }
}

TEST(Predict, EmpiricalMomentsMatchSamples) {
  const auto data = fixtures::tiny_nested(2, {6, 3}, 4);
  const ModelState m = fixtures::perturbed_model(data, 2, 1, 2);
  RngStream rng(8);
  const auto e = predict(m, data, data.levels[1].inputs.row(0), 16, rng);
  ASSERT_EQ(e.samples.rows(), 16);
  ASSERT_EQ(e.samples.cols(), 4);
  for (Eigen::Index j = 0; j < 4; ++j) {
    const double mu = e.samples.col(j).mean();
    const double var = (e.samples.col(j).array() - mu).square().mean() + 1.0 / e.noise_precision_used;
    EXPECT_NEAR(e.empirical_mean(j), mu, 1e-12);
    EXPECT_NEAR(e.empirical_var(j), var, 1e-12);
  }
  EXPECT_DOUBLE_EQ(e.noise_precision_used, m.noise_ladder().effective_precision(1));
}

TEST(Predict, SingleSampleVarianceIsNoiseOnly) {
  const auto data = fixtures::tiny_nested(2, {6, 3}, 4);
  const ModelState m = fixtures::perturbed_model(data, 2, 1, 2);
  RngStream rng(8);
  const auto e = predict(m, data, data.levels[0].inputs.row(4), 1, rng);
  for (Eigen::Index j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(e.empirical_var(j), 1.0 / e.noise_precision_used);
  EXPECT_THROW(test_log_likelihood(e, data.levels[1].outputs.row(0)), Error);
}

TEST(Predict, ReproducibleForFixedSeed) {
  const auto data = fixtures::tiny_nested(2, {6, 3, 2}, 4);
  const ModelState m = fixtures::perturbed_model(data, 2, 1, 2);
  RngStream a(99), b(99);
  const auto ea = predict_batch(m, data, data.levels[0].inputs, 8, a);
  const auto eb = predict_batch(m, data, data.levels[0].inputs, 8, b);
  for (std::size_t r = 0; r < ea.size(); ++r) {
    EXPECT_TRUE(ea[r].samples == eb[r].samples);
    EXPECT_TRUE(ea[r].noisy_samples == eb[r].noisy_samples);
  }
}

TEST(Predict, UntrainedAndMismatchedInputsRejected) {
  const auto data = fixtures::tiny_nested(2, {6}, 4);
  RngStream rng(1);
  try {
    predict(ModelState{}, data, Matrix::Zero(1, 1), 4, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UntrainedModel);
  }
  const ModelState m = fixtures::perturbed_model(data, 2, 1, 2);
  EXPECT_THROW(predict(m, data, Matrix::Zero(1, 2), 4, rng), Error);
}

TEST(Predict, NoisySamplesSpreadMatchesPrecision) {
  const auto data = fixtures::tiny_nested(11, {6}, 3);
  ModelState m = near_noiseless(data, 3);
  m.levels[0].log_eta = std::log(4.0);
  RngStream rng(5);
  const auto e = predict(m, data, data.levels[0].inputs.row(2), 4000, rng);
  const Matrix noise = e.noisy_samples - e.samples;
  EXPECT_NEAR(noise.squaredNorm() / static_cast<double>(noise.size()), 0.25, 0.02);
}

TEST(Predict, RecoversSyntheticSingleLevelData) {
  const auto all = synthetic(21, 50);
  MultiFidelityDataset train, test;
  train.levels = {FidelityData{all.levels[0].inputs.topRows(40), all.levels[0].outputs.topRows(40), {}}};
  const Matrix x_test = all.levels[0].inputs.bottomRows(10);
  const Matrix y_test = all.levels[0].outputs.bottomRows(10);
  TrainConfig c;
  c.epochs = 5000;  // run to convergence
  c.learning_rate = 1e-2;
  c.log_every = 500;
  c.seed = 21;
  const FitResult r = fit(initialize_model(train, {.bases = 2, .seed = 21}), train, c);
  RngStream rng(3);
  const auto batch = predict_batch(r.model, train, x_test, 64, rng);
  const double noise_floor = 0.05;
  EXPECT_LT(rmse(ensemble_means(batch), y_test), 2.0 * noise_floor);
  EXPECT_TRUE(std::isfinite(mean_test_log_likelihood(batch, y_test)));
}

TEST(Metrics, RmseBasics) {
  std::mt19937_64 gen(1);
  const Matrix t = oracle::random_matrix(gen, 3, 4);
  EXPECT_EQ(rmse(t, t), 0.0);
  EXPECT_NEAR(rmse((t.array() + 1.0).matrix(), t), 1.0, 1e-15);
  const Matrix p = oracle::random_matrix(gen, 3, 4);
  double se = 0.0, st = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) {
      se += (p(i, j) - t(i, j)) * (p(i, j) - t(i, j));
      st += t(i, j) * t(i, j);
    }
  EXPECT_NEAR(rmse(p, t), std::sqrt(se / 12.0), 1e-14);
  EXPECT_NEAR(n_rmse(p, t), std::sqrt(se / 12.0) / std::sqrt(st / 12.0), 1e-14);
  try {
    rmse(p, Matrix::Zero(4, 3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

TEST(Metrics, TwoSampleMixtureMatchesHandValue) {
  const double a = 0.7, b = -1.9;
  Matrix s(2, 1);
  s << 0.0, a - b;  // truth = a, sample residuals a and b
  const auto e = manual_ensemble(s, 1.0);
  RowVector truth(1);
  truth << a;
  const double expected = std::log((std::exp(-a * a / 2) + std::exp(-b * b / 2)) / (2.0 * std::sqrt(2.0 * M_PI)));
  EXPECT_NEAR(test_log_likelihood(e, truth), expected, 1e-14);
}

TEST(Metrics, IdenticalSamplesCollapseToGaussian) {
  std::mt19937_64 gen(4);
  const RowVector mu = oracle::random_matrix(gen, 1, 5);
  const RowVector truth = oracle::random_matrix(gen, 1, 5);
  const auto e = manual_ensemble(Matrix(mu.replicate(7, 1)), 3.0);
  const double expected = oracle::mvn_log_density(truth.transpose(), mu.transpose(), oracle::Dense::Identity(5, 5) / 3.0);
  EXPECT_NEAR(test_log_likelihood(e, truth), expected, 1e-12);
}

TEST(Metrics, FarTruthStaysFinite) {
  Matrix s(3, 2);
  s << 0.0, 0.0, 0.1, -0.1, 0.05, 0.02;
  const auto e = manual_ensemble(s, 100.0);
  RowVector truth(2);
  truth << 1e4, -1e4;
  const double ll = test_log_likelihood(e, truth);
  EXPECT_TRUE(std::isfinite(ll));
  EXPECT_LT(ll, -1e9);
}

TEST(Metrics, MomentMatchedModeUsesEmpiricalMoments) {
  Matrix s(2, 1);
  s << 1.0, 3.0;
  auto e = manual_ensemble(s, 1.0);
  e.empirical_var(0) = 2.0;
  RowVector truth(1);
  truth << 2.5;
  EXPECT_NEAR(test_log_likelihood(e, truth, LogLikelihoodMode::MomentMatched),
              -0.5 * std::log(2 * M_PI * 2.0) - 0.25 * 0.25, 1e-14);
}

TEST(Metrics, LogLikelihoodSpreadShrinksWithSampleCount) {
  const auto data = fixtures::tiny_nested(2, {6, 3}, 4);
  ModelState m = fixtures::perturbed_model(data, 2, 1, 2);
  m.levels[0].log_eta = m.levels[1].log_eta = std::log(3.0);
  const RowVector truth = data.levels[1].outputs.row(1);
  const Matrix x = data.levels[1].inputs.row(1);
  auto spread = [&](std::size_t s) {
    std::vector<double> ll;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      RngStream rng(1000 + seed);
      ll.push_back(test_log_likelihood(predict(m, data, x, s, rng), truth));
    }
    double mu = 0.0, v = 0.0;
    for (double l : ll) mu += l / 20.0;
    for (double l : ll) v += (l - mu) * (l - mu) / 19.0;
    return std::sqrt(v);
  };
  EXPECT_LT(spread(64), spread(8));
}
