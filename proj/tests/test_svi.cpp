#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "mfhogp/svi.hpp"

using namespace mfhogp;

namespace {

bool same_parameters(const ModelState& a, const ModelState& b) {
  std::vector<double> va, vb;
  for_each_parameter(a, [&](const std::string&, const double* p, Eigen::Index r, Eigen::Index c) { va.insert(va.end(), p, p + r * c); });
  for_each_parameter(b, [&](const std::string&, const double* p, Eigen::Index r, Eigen::Index c) { vb.insert(vb.end(), p, p + r * c); });
  return va == vb;
}

// F=1 data drawn from the model: fixed bases, smooth GP weights, small noise.
MultiFidelityDataset synthetic_single_level(std::uint64_t seed) {
  RngStream rng(seed);
  const int n = 40, d = 16, k = 2;
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

TEST(TrainConfigDefaults, AdamSettings) {
  const TrainConfig c;
  EXPECT_EQ(c.epochs, 5000u);
  EXPECT_DOUBLE_EQ(c.learning_rate, 1e-3);
  EXPECT_EQ(c.mc_samples_per_step, 1u);
  EXPECT_FALSE(c.gradient_clip.has_value());
}

TEST(Fit, ZeroLearningRateLeavesParametersUntouched) {
  const auto data = fixtures::tiny_nested(1, {6, 3}, 4);
  const ModelState m = fixtures::perturbed_model(data, 2, 1, 1);
  TrainConfig c;
  c.epochs = 25;
  c.learning_rate = 0.0;
  const FitResult r = fit(m, data, c);
  EXPECT_TRUE(same_parameters(r.model, m));
}

TEST(Fit, ReproducibleForIdenticalSeed) {
  const auto data = fixtures::tiny_nested(2, {6, 3}, 4);
  const ModelState m = fixtures::perturbed_model(data, 2, 1, 2);
  TrainConfig c;
  c.epochs = 30;
  c.learning_rate = 1e-2;
  c.seed = 77;
  const FitResult a = fit(m, data, c);
  const FitResult b = fit(m, data, c);
  EXPECT_TRUE(same_parameters(a.model, b.model));
  EXPECT_FALSE(same_parameters(a.model, m));
  c.seed = 78;
  EXPECT_FALSE(same_parameters(fit(m, data, c).model, a.model));
}

TEST(Fit, TraceRecordsAtLogInterval) {
  const auto data = fixtures::tiny_nested(3, {6, 3}, 4);
  const ModelState m = fixtures::perturbed_model(data, 2, 1, 3);
  TrainConfig c;
  c.epochs = 25;
  c.log_every = 10;
  std::size_t callbacks = 0;
  const FitResult r = fit(m, data, c, [&](const TraceRecord&) { ++callbacks; });
  ASSERT_EQ(r.trace.size(), 4u);  // steps 0, 10, 20, 24
  EXPECT_EQ(callbacks, 4u);
  EXPECT_EQ(r.trace.back().step, 24u);
  EXPECT_EQ(r.trace.front().rmse.size(), 2u);
  EXPECT_GE(r.trace.front().seconds, 0.0);
}

TEST(Fit, RecoversSyntheticSingleLevelData) {
  const auto data = synthetic_single_level(5);
  const ModelState m = initialize_model(data, {.bases = 2, .seed = 5});
  TrainConfig c;
  c.epochs = 2000;
  c.learning_rate = 1e-2;
  c.log_every = 200;
  c.seed = 5;
  const FitResult r = fit(m, data, c);
  ASSERT_GE(r.trace.size(), 6u);
  for (std::size_t w = 1; w < r.trace.size(); ++w)
    EXPECT_LT(r.trace[w].rmse[0], r.trace[w - 1].rmse[0]) << "window ending at step " << r.trace[w].step;
  EXPECT_LT(r.trace.back().rmse[0], 0.5 * r.trace.front().rmse[0]);
}

TEST(Fit, NonFiniteObjectiveReportsLastGoodModel) {
  auto data = fixtures::tiny_nested(6, {6, 3}, 4);
  const ModelState m = fixtures::perturbed_model(data, 2, 1, 6);
  data.levels[1].outputs(0, 0) = std::numeric_limits<double>::infinity();
  TrainConfig c;
  c.epochs = 5;
  try {
    fit(m, data, c);
    FAIL();
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.code(), ErrorCode::Diverged);
    EXPECT_EQ(e.step(), 0u);
    EXPECT_TRUE(same_parameters(e.last_good(), m));
  }
}

TEST(Fit, GradientClipBoundsFirstStep) {
  const auto data = fixtures::tiny_nested(7, {6, 3}, 4);
  const ModelState m = fixtures::perturbed_model(data, 2, 1, 7);
  TrainConfig c;
  c.epochs = 3;
  c.gradient_clip = 1e-3;
  EXPECT_NO_THROW(fit(m, data, c));
  c.learning_rate = -1.0;
  EXPECT_THROW(fit(m, data, c), Error);
}

TEST(CheckGradients, TinyInstancePasses) {
  const auto data = fixtures::tiny_nested(8, {6, 3}, 4);
  const ModelState m = fixtures::perturbed_model(data, 2, 1, 8);
  const GradientCheckReport r = check_gradients(m, data, 1, 1e-5);
  EXPECT_TRUE(r.all_pass()) << r.max_relative_error;
  EXPECT_EQ(r.threshold, 1e-3);
  EXPECT_EQ(r.entries.front().path, "level1/bases/mode0[0]");
}

TEST(CheckGradients, NonPositiveStepRejected) {
  const auto data = fixtures::tiny_nested(9, {6, 3}, 4);
  const ModelState m = fixtures::perturbed_model(data, 2, 1, 9);
  for (double h : {0.0, -1e-5}) {
    try {
      check_gradients(m, data, 1, h);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::InvalidStepSize);
    }
  }
}

TEST(CheckGradients, CorruptedGradientIsReportedWithPath) {
  const auto data = fixtures::tiny_nested(10, {6, 3}, 4);
  const ModelState m = fixtures::perturbed_model(data, 2, 1, 10);
  const ElboOptions opt;
  auto corrupted = [&](const ModelState& s) {
    ModelState g = elbo_gradient(s, data, 1, opt).gradient;
    g.levels[1].mean(2, 1) += 1.0;
    return g;
  };
  const GradientCheckReport r = check_gradients(m, data, 1, 1e-5, opt, corrupted);
  EXPECT_FALSE(r.all_pass());
  std::vector<std::string> failing;
  for (const auto& e : r.entries)
    if (!e.pass) failing.push_back(e.path);
  // row-major flat index 2 * 4 + 1
  EXPECT_EQ(failing, std::vector<std::string>{"level2/posterior/mean[9]"});
}

TEST(CheckGradients, TooManyParameters) {
  const auto data = fixtures::tiny_nested(11, {80, 3}, 4);
  const ModelState m = initialize_model(data, {.bases = 2, .seed = 1});
  ASSERT_GT(parameter_count(m), kMaxCheckedParameters);
  try {
    check_gradients(m, data, 1, 1e-5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TooManyParameters);
  }
}
