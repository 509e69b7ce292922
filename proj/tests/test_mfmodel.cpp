#include <gtest/gtest.h>

#include <random>

#include "mfhogp/coreg.hpp"
#include "mfhogp/mfmodel.hpp"
#include "oracles.hpp"

using namespace mfhogp;

namespace {

// Nested two-level dataset: level-2 rows are level-1 rows {4, 1, 2}.
MultiFidelityDataset nested_dataset(std::mt19937_64& gen, int n1, int d, int s = 1) {
  MultiFidelityDataset data;
  FidelityData l1{oracle::random_matrix(gen, n1, s), oracle::random_matrix(gen, n1, d), {}};
  FidelityData l2;
  l2.parent_index = {4, 1, 2};
  l2.inputs = Matrix(3, s);
  for (int r = 0; r < 3; ++r) l2.inputs.row(r) = l1.inputs.row(static_cast<Eigen::Index>(l2.parent_index[r]));
  l2.outputs = oracle::random_matrix(gen, 3, d);
  data.levels = {l1, l2};
  return data;
}

std::vector<Matrix> random_weights(std::mt19937_64& gen, const ModelState& m, const MultiFidelityDataset& data) {
  std::vector<Matrix> w;
  for (std::size_t i = 0; i < data.fidelity_count(); ++i)
    w.push_back(oracle::random_matrix(gen, static_cast<int>(data.count(i)), static_cast<int>((i + 1) * m.bases_per_level)));
  return w;
}

}  // namespace

TEST(CpFactorLengths, ExactAndPaddedRoots) {
  EXPECT_EQ(cp_factor_lengths(16, 2), (std::vector<std::size_t>{4, 4}));
  EXPECT_EQ(cp_factor_lengths(1000000, 3), (std::vector<std::size_t>{100, 100, 100}));
  EXPECT_EQ(cp_factor_lengths(7, 1), (std::vector<std::size_t>{7}));
  const auto l = cp_factor_lengths(10, 2);
  EXPECT_GE(l[0] * l[1], 10u);
  EXPECT_LE(l[0] * l[1], 12u);
}

TEST(ExpandBasis, SingleFactorVerbatim) {
  CpBasisBlock b = make_cp_block(2, 5, 1);
  b.modes[0] << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10;
  EXPECT_EQ(expand_basis(b, 1), b.modes[0].row(1));
}

TEST(ExpandBasis, TwoFactorKron) {
  CpBasisBlock b = make_cp_block(1, 4, 2);
  b.modes[0] << 1, 2;
  b.modes[1] << 3, 4;
  RowVector expected(4);
  expected << 3, 4, 6, 8;
  EXPECT_EQ(expand_basis(b, 0), expected);
  EXPECT_THROW(expand_basis(b, 1), Error);
}

TEST(ExpandBasis, MillionOutputParameterReduction) {
  const CpBasisBlock b = make_cp_block(1, 1000000, 3);
  EXPECT_EQ(b.parameters_per_basis(), 300u);
  const double reduction = 1.0 - 300.0 / 1e6;
  EXPECT_NEAR(reduction, 0.9997, 1e-6);
}

TEST(ExpandBasis, TruncatesPaddedExpansion) {
  std::mt19937_64 gen(1);
  CpBasisBlock b = make_cp_block(2, 10, 2);
  for (auto& m : b.modes) m = oracle::random_matrix(gen, 2, static_cast<int>(m.cols()));
  const RowVector e = expand_basis(b, 1);
  ASSERT_EQ(e.size(), 10);
  EXPECT_NEAR(e(0), b.modes[0](1, 0) * b.modes[1](1, 0), 1e-15);
}

TEST(StackedBases, InheritsPreviousLevels) {
  std::mt19937_64 gen(2);
  const MultiFidelityDataset data = nested_dataset(gen, 6, 4);
  ModelState m = initialize_model(data, {.bases = 2, .factors = 1, .seed = 3});
  const Matrix b1 = stacked_bases(m, 0);
  const Matrix b2 = stacked_bases(m, 1);
  EXPECT_EQ(b1.rows(), 2);
  EXPECT_EQ(b2.rows(), 4);
  EXPECT_EQ(b2.topRows(2), b1);
  m.levels[0].block.modes[0](0, 0) += 1.0;
  EXPECT_EQ(stacked_bases(m, 1).topRows(2), stacked_bases(m, 0));
  EXPECT_NE(stacked_bases(m, 1).topRows(2), b1);
}

TEST(AugmentInputs, WidthAndIndexing) {
  Matrix x(2, 1);
  x << 0.5, 0.7;
  Matrix w(3, 2);
  w << 1, 2, 3, 4, 5, 6;
  const Matrix a = augment_inputs(x, w, {2, 0});
  ASSERT_EQ(a.cols(), 3);
  EXPECT_EQ(a(0, 1), 5);
  EXPECT_EQ(a(1, 2), 2);
  try {
    augment_inputs(x, w, {2, 3});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IndexMapInvalid);
  }
}

TEST(AugmentInputs, ZeroWeightsLeaveDistances) {
  std::mt19937_64 gen(4);
  const Matrix x = oracle::random_matrix(gen, 3, 2);
  const Matrix a = augment_inputs(x, Matrix::Zero(3, 2), {0, 1, 2});
  const RbfKernel k = RbfKernel::isotropic(0.7, 1.0, 1);
  EXPECT_LT((gram(k, a) - gram(k, x)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Dataset, ValidationErrors) {
  std::mt19937_64 gen(5);
  MultiFidelityDataset data = nested_dataset(gen, 6, 2);
  EXPECT_NO_THROW(data.validate());
  MultiFidelityDataset broken = data;
  broken.levels[1].inputs(0, 0) += 1.0;
  try {
    broken.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IndexMapInvalid);
  }
  MultiFidelityDataset counts = data;
  counts.levels[0] = FidelityData{data.levels[0].inputs.topRows(3), data.levels[0].outputs.topRows(3), {}};
  counts.levels[1].parent_index = {0, 1, 2};
  for (int r = 0; r < 3; ++r) counts.levels[1].inputs.row(r) = counts.levels[0].inputs.row(r);
  try {
    counts.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidCounts);
  }
}

TEST(JointLogProb, NoiseOnlySingleLevel) {
  std::mt19937_64 gen(6);
  MultiFidelityDataset data;
  data.levels = {FidelityData{oracle::random_matrix(gen, 4, 1), oracle::random_matrix(gen, 4, 3), {}}};
  ModelState m = initialize_model(data, {.bases = 2, .seed = 1});
  for (auto& mode : m.levels[0].block.modes) mode.setZero();
  // zero bases make K_BB = amplitude everywhere; use a delta kernel to keep it invertible
  m.levels[0].bases_kernel = DeltaKernel{0.0};
  m.levels[0].log_eta = std::log(3.0);
  const std::vector<Matrix> w{Matrix::Zero(4, 2)};
  const double eta = 3.0;
  const double lik = 6.0 * std::log(eta / (2 * M_PI)) - 0.5 * eta * data.levels[0].outputs.squaredNorm();
  const MatrixGaussian prior{Matrix::Zero(4, 2), input_gram(m, 0, data.levels[0].inputs), bases_gram(m, 0)};
  const double expected = gamma_log_prior(m.levels[0].log_eta, m.alpha) + basis_log_prior(m) + log_density(prior, w[0]) + lik;
  EXPECT_NEAR(joint_log_prob(m, data, w), expected, 1e-10);
  EXPECT_NEAR(basis_log_prior(m), -0.5 * 2 * 3 * kLog2Pi, 1e-12);
}

TEST(JointLogProb, SingleLevelMatchesCoregGenerativeDensity) {
  std::mt19937_64 gen(7);
  MultiFidelityDataset data;
  data.levels = {FidelityData{oracle::random_matrix(gen, 3, 1), oracle::random_matrix(gen, 3, 4), {}}};
  const ModelState m = initialize_model(data, {.bases = 2, .seed = 2});
  const std::vector<Matrix> w = random_weights(gen, m, data);
  const Matrix b = stacked_bases(m, 0);
  // independent oracle: dense MVN for vec(W) and for vec(Y) given W
  oracle::Dense k = oracle::rbf_gram(data.levels[0].inputs, data.levels[0].inputs,
                                     m.levels[0].input_kernel.log_lengthscales.array().exp(),
                                     m.levels[0].input_kernel.amplitude());
  k.diagonal().array() += m.jitter;
  const auto& bk = std::get<BasesKernel>(m.levels[0].bases_kernel).inner;
  oracle::Dense kbb = oracle::rbf_gram(m.levels[0].block.compositional(), m.levels[0].block.compositional(),
                                       bk.log_lengthscales.array().exp(), bk.amplitude());
  kbb.diagonal().array() += m.jitter;
  const double eta = std::exp(m.levels[0].log_eta);
  const double prior_w = oracle::mvn_log_density(oracle::vec(w[0]), oracle::Col::Zero(6), oracle::kron(kbb, k));
  const double lik = oracle::mvn_log_density(oracle::vec(data.levels[0].outputs), oracle::vec(w[0] * b),
                                             oracle::Dense::Identity(12, 12) / eta);
  const double expected = prior_w + lik + gamma_log_prior(m.levels[0].log_eta, m.alpha) + basis_log_prior(m);
  EXPECT_NEAR(joint_log_prob(m, data, w), expected, 1e-8);
}

TEST(JointLogProb, EtaTwoOnlyTouchesUpperLevels) {
  std::mt19937_64 gen(8);
  const MultiFidelityDataset data = nested_dataset(gen, 6, 3);
  ModelState m = initialize_model(data, {.bases = 2, .seed = 4});
  const std::vector<Matrix> w = random_weights(gen, m, data);
  ModelState m2 = m;
  m2.levels[1].log_eta += std::log(2.0);
  const double delta = joint_log_prob(m2, data, w) - joint_log_prob(m, data, w);
  // analytic change: Gamma prior on eta_2 plus level-2 likelihood
  const double n2d = 9.0;
  const double lp1 = m.levels[0].log_eta + m.levels[1].log_eta;
  const double sq = (data.levels[1].outputs - w[1] * stacked_bases(m, 1)).squaredNorm();
  const double expected = gamma_log_prior(m2.levels[1].log_eta, m.alpha) - gamma_log_prior(m.levels[1].log_eta, m.alpha) +
                          0.5 * n2d * std::log(2.0) - 0.5 * std::exp(lp1) * sq;
  EXPECT_NEAR(delta, expected, 1e-9);
}

TEST(JointLogProb, InvariantToConsistentRowPermutation) {
  std::mt19937_64 gen(9);
  const MultiFidelityDataset data = nested_dataset(gen, 6, 3, 2);
  const ModelState m = initialize_model(data, {.bases = 2, .seed = 5});
  const std::vector<Matrix> w = random_weights(gen, m, data);
  const double base = joint_log_prob(m, data, w);

  // permute level-1 rows by p (new row r holds old row p[r]) and remap parents
  const std::vector<std::size_t> p{3, 5, 0, 1, 4, 2};
  std::vector<std::size_t> inverse(6);
  for (std::size_t r = 0; r < 6; ++r) inverse[p[r]] = r;
  MultiFidelityDataset pd = data;
  std::vector<Matrix> pw = w;
  for (std::size_t r = 0; r < 6; ++r) {
    pd.levels[0].inputs.row(static_cast<Eigen::Index>(r)) = data.levels[0].inputs.row(static_cast<Eigen::Index>(p[r]));
    pd.levels[0].outputs.row(static_cast<Eigen::Index>(r)) = data.levels[0].outputs.row(static_cast<Eigen::Index>(p[r]));
    pw[0].row(static_cast<Eigen::Index>(r)) = w[0].row(static_cast<Eigen::Index>(p[r]));
  }
  // and reverse level-2 rows
  for (std::size_t r = 0; r < 3; ++r) {
    const auto src = static_cast<Eigen::Index>(2 - r);
    pd.levels[1].inputs.row(static_cast<Eigen::Index>(r)) = data.levels[1].inputs.row(src);
    pd.levels[1].outputs.row(static_cast<Eigen::Index>(r)) = data.levels[1].outputs.row(src);
    pw[1].row(static_cast<Eigen::Index>(r)) = w[1].row(src);
    pd.levels[1].parent_index[r] = inverse[data.levels[1].parent_index[2 - r]];
  }
  ASSERT_NO_THROW(pd.validate());
  EXPECT_NEAR(joint_log_prob(m, pd, pw), base, 1e-9);
}

TEST(JointLogProb, DeltaKernelMarginalisesToLmc) {
  // F=1 with a delta bases kernel: integrating W out of the joint gives the LMC
  // likelihood. Check log p(Y|W) + log p(W) - log p(W|Y) at an arbitrary W.
  std::mt19937_64 gen(10);
  MultiFidelityDataset data;
  data.levels = {FidelityData{oracle::random_matrix(gen, 3, 1), oracle::random_matrix(gen, 3, 2), {}}};
  ModelState m = initialize_model(data, {.bases = 2, .seed = 6});
  m.jitter = 0.0;
  m.levels[0].bases_kernel = DeltaKernel{0.0};
  const Matrix b = stacked_bases(m, 0);
  const Matrix x = data.levels[0].inputs;
  const Matrix y = data.levels[0].outputs;
  const double eta = std::exp(m.levels[0].log_eta);
  const oracle::Dense k = Matrix(gram(m.levels[0].input_kernel, x));
  const oracle::Dense prior = oracle::kron(oracle::Dense::Identity(2, 2), k);
  const oracle::Dense a = oracle::kron(Matrix(b.transpose()), oracle::Dense::Identity(3, 3));  // vec(WB) = a vec(W)
  const oracle::Dense post_cov = (prior.inverse() + eta * a.transpose() * a).inverse();
  const oracle::Col post_mean = post_cov * (eta * a.transpose() * oracle::vec(y));
  const std::vector<Matrix> w = random_weights(gen, m, data);
  const double log_post = oracle::mvn_log_density(oracle::vec(w[0]), post_mean, post_cov);
  const double evidence = joint_log_prob(m, data, w) - gamma_log_prior(m.levels[0].log_eta, m.alpha) -
                          basis_log_prior(m) - log_post;
  EXPECT_NEAR(evidence, lmc_equivalent_log_likelihood(b, m.levels[0].input_kernel, m.levels[0].log_eta, x, y), 1e-8);
}

TEST(NoiseLadder, ProductOfPrecisions) {
  NoiseLadder ladder{2.0, {std::log(2.0), std::log(3.0), 0.0}};
  EXPECT_NEAR(ladder.effective_precision(1), 6.0, 1e-12);
  EXPECT_NEAR(ladder.effective_precision(2), 6.0, 1e-12);
  EXPECT_THROW(ladder.effective_precision(3), Error);
}

TEST(NoiseLadder, NonDecreasingWhenEtasAtLeastOne) {
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    NoiseLadder ladder{2.0, {u(gen), u(gen), u(gen), u(gen)}};
    for (std::size_t i = 1; i < 4; ++i) EXPECT_GE(ladder.effective_precision(i), ladder.effective_precision(i - 1));
  }
}

TEST(ModelParameters, NamesAndCount) {
  std::mt19937_64 gen(12);
  const MultiFidelityDataset data = nested_dataset(gen, 6, 4);
  const ModelState m = initialize_model(data, {.bases = 2, .seed = 7});
  std::vector<std::string> names;
  for_each_parameter(m, [&](const std::string& n, const double*, Eigen::Index, Eigen::Index) { names.push_back(n); });
  EXPECT_EQ(names.front(), "level1/bases/mode0");
  EXPECT_EQ(names.back(), "level2/posterior/col_factor_raw");
  for (const auto& n : names) EXPECT_EQ(n.find("level3"), std::string::npos);
  // level 1: 2x4 bases, 1 ls, 1 amp, 1 bk ls, 1 bk amp, 1 eta, 6x2 mean, 6x6, 2x2
  // level 2: 2x4 bases, 3 ls (s + K), ..., 3x4 mean, 3x3, 4x4
  EXPECT_EQ(parameter_count(m), (8 + 5 + 12 + 36 + 4) + (8 + 3 + 4 + 12 + 9 + 16));
}

TEST(Initialisation, DeterministicPerSeedAndStrategies) {
  std::mt19937_64 gen(13);
  const MultiFidelityDataset data = nested_dataset(gen, 6, 4);
  const ModelState a = initialize_model(data, {.bases = 2, .seed = 9});
  const ModelState b = initialize_model(data, {.bases = 2, .seed = 9});
  EXPECT_EQ(a.levels[1].block.modes[0], b.levels[1].block.modes[0]);
  EXPECT_NEAR(a.levels[0].log_eta, std::log(2.0), 1e-15);
  const ModelState pca = initialize_model(data, {.bases = 2, .factors = 2, .seed = 9, .strategy = InitStrategy::Pca});
  // leading PCA basis spans the top right-singular vector of Y^(1)
  const ThinSvd svd = thin_svd(data.levels[0].outputs, 1);
  const RowVector b0 = expand_basis(pca.levels[0].block, 0);
  EXPECT_GT(std::abs(b0.normalized().dot(svd.v.col(0).transpose())), 0.8);
}
