#pragma once

// Small shared datasets for the model-level tests.

#include <random>

#include "mfhogp/mfmodel.hpp"
#include "oracles.hpp"

namespace fixtures {

/// Nested design with N = counts[0] > counts[1] > ...; each level keeps the
/// first rows of the previous one, so parent_index is the identity prefix.
inline mfhogp::MultiFidelityDataset tiny_nested(std::uint64_t seed, std::vector<int> counts, int d, int s = 1) {
  std::mt19937_64 gen(seed);
  mfhogp::MultiFidelityDataset data;
  // well separated inputs keep the unit-lengthscale gram matrices well conditioned
  mfhogp::Matrix x = oracle::random_matrix(gen, counts.front(), s, 0.2);
  for (int r = 0; r < counts.front(); ++r) x(r, 0) += 1.5 * r;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    mfhogp::FidelityData level;
    level.inputs = x.topRows(counts[i]);
    level.outputs = oracle::random_matrix(gen, counts[i], d);
    if (i > 0)
      for (int r = 0; r < counts[i]; ++r) level.parent_index.push_back(static_cast<std::size_t>(r));
    data.levels.push_back(level);
  }
  return data;
}

/// Randomly perturbed initial model, so no parameter sits at a special value.
inline mfhogp::ModelState perturbed_model(const mfhogp::MultiFidelityDataset& data, std::size_t k, std::size_t r,
                                          std::uint64_t seed) {
  mfhogp::ModelState m = mfhogp::initialize_model(data, {.bases = k, .factors = r, .seed = seed});
  std::mt19937_64 gen(seed + 1);
  std::normal_distribution<double> n(0.0, 0.1);
  mfhogp::for_each_parameter(m, [&](const std::string&, double* p, Eigen::Index rows, Eigen::Index cols) {
    for (Eigen::Index i = 0; i < rows * cols; ++i) p[i] += n(gen);
  });
  return m;
}

}  // namespace fixtures
