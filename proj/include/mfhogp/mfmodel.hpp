#pragma once

// Deep multi-fidelity model: CP-decomposed bases that are inherited level to
// level, inputs augmented with the previous level's weights, a noise ladder,
// and the joint log density of all of it.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "mfhogp/error.hpp"
#include "mfhogp/kernels.hpp"
#include "mfhogp/matnorm.hpp"
#include "mfhogp/numerics.hpp"

namespace mfhogp {

/// Factor lengths m_1..m_R: the integers closest to d^{1/R} whose product is
/// the smallest value >= d. Expanded bases are truncated to length d.
inline std::vector<std::size_t> cp_factor_lengths(std::size_t d, std::size_t r) {
  require(r >= 1, ErrorCode::InvalidArgument, "factor count R must be at least 1");
  require(d >= 1, ErrorCode::InvalidArgument, "output dimension must be positive");
  auto base = static_cast<std::size_t>(std::floor(std::pow(static_cast<double>(d), 1.0 / static_cast<double>(r))));
  base = std::max<std::size_t>(base, 1);
  auto power = [r](std::size_t b) {
    double p = 1.0;
    for (std::size_t i = 0; i < r; ++i) p *= static_cast<double>(b);
    return p;
  };
  while (power(base + 1) <= static_cast<double>(d)) ++base;
  while (base > 1 && power(base) > static_cast<double>(d)) --base;
  std::vector<std::size_t> lengths(r, base);
  auto product = [&lengths] {
    double p = 1.0;
    for (auto m : lengths) p *= static_cast<double>(m);
    return p;
  };
  for (std::size_t i = 0; product() < static_cast<double>(d); i = (i + 1) % r) ++lengths[i];
  return lengths;
}

/// K rank-1 CP bases. modes[r] is K x m_r; row j of modes[r] is u_{j r}.
struct CpBasisBlock {
  std::size_t output_dim = 0;
  std::vector<Matrix> modes;

  std::size_t basis_count() const { return modes.empty() ? 0 : static_cast<std::size_t>(modes.front().rows()); }
  std::size_t factor_count() const { return modes.size(); }

  std::size_t parameters_per_basis() const {
    std::size_t n = 0;
    for (const auto& m : modes) n += static_cast<std::size_t>(m.cols());
    return n;
  }

  /// [u_{j1}, ..., u_{jR}] for every j (K x sum m_r); the bases kernel input.
  Matrix compositional() const {
    Matrix out(static_cast<Eigen::Index>(basis_count()), static_cast<Eigen::Index>(parameters_per_basis()));
    Eigen::Index c = 0;
    for (const auto& m : modes) {
      out.middleCols(c, m.cols()) = m;
      c += m.cols();
    }
    return out;
  }
};

inline CpBasisBlock make_cp_block(std::size_t k, std::size_t d, std::size_t r) {
  CpBasisBlock block;
  block.output_dim = d;
  for (std::size_t m : cp_factor_lengths(d, r))
    block.modes.emplace_back(Matrix::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m)));
  return block;
}

/// b_j = u_{j1} kron ... kron u_{jR}, truncated to length d.
inline RowVector expand_basis(const CpBasisBlock& block, std::size_t j) {
  require(j < block.basis_count(), ErrorCode::IndexOutOfRange,
          "basis index " + std::to_string(j) + " outside [0, " + std::to_string(block.basis_count()) + ")");
  const auto jj = static_cast<Eigen::Index>(j);
  Matrix acc = block.modes.front().row(jj);
  for (std::size_t r = 1; r < block.modes.size(); ++r) acc = kron(acc, Matrix(block.modes[r].row(jj)));
  return acc.row(0).head(static_cast<Eigen::Index>(block.output_dim));
}

inline Matrix expand_block(const CpBasisBlock& block) {
  Matrix out(static_cast<Eigen::Index>(block.basis_count()), static_cast<Eigen::Index>(block.output_dim));
  for (std::size_t j = 0; j < block.basis_count(); ++j) out.row(static_cast<Eigen::Index>(j)) = expand_basis(block, j);
  return out;
}

/// One fidelity level: its new bases (B^(1) at the first level, C^(i) above),
/// kernels, noise factor and the matrix-normal variational posterior whose
/// covariances are stored as Cholesky factors with softplus diagonals.
struct FidelityLevel {
  CpBasisBlock block;
  RbfKernel input_kernel;
  AnyBasesKernel bases_kernel = BasesKernel{};
  double log_eta = std::log(2.0);
  Matrix mean;            // N_i x iK
  Matrix row_factor_raw;  // N_i x N_i, lower triangle used
  Matrix col_factor_raw;  // iK x iK, lower triangle used

  static Matrix factor_from_raw(const Matrix& raw) {
    Matrix l = raw.triangularView<Eigen::StrictlyLower>();
    for (Eigen::Index i = 0; i < l.rows(); ++i) l(i, i) = softplus(raw(i, i));
    return l;
  }
  static Matrix raw_from_factor(const Matrix& l) {
    Matrix raw = l.triangularView<Eigen::StrictlyLower>();
    for (Eigen::Index i = 0; i < l.rows(); ++i) raw(i, i) = inverse_softplus(l(i, i));
    return raw;
  }

  Matrix row_factor() const { return factor_from_raw(row_factor_raw); }
  Matrix col_factor() const { return factor_from_raw(col_factor_raw); }

  MatrixGaussian posterior() const {
    const Matrix l = row_factor();
    const Matrix r = col_factor();
    return MatrixGaussian{mean, l * l.transpose(), r * r.transpose()};
  }
};

/// Observation precision at level i is the product of eta_1..eta_i.
struct NoiseLadder {
  double alpha = 2.0;
  std::vector<double> log_etas;

  double effective_log_precision(std::size_t level) const {
    require(level < log_etas.size(), ErrorCode::IndexOutOfRange, "noise ladder level out of range");
    double s = 0.0;
    for (std::size_t j = 0; j <= level; ++j) s += log_etas[j];
    return s;
  }
  double effective_precision(std::size_t level) const { return std::exp(effective_log_precision(level)); }
};

struct ModelState {
  std::size_t bases_per_level = 0;  // K
  std::size_t factor_count = 1;     // R
  std::size_t output_dim = 0;       // d
  std::size_t input_dim = 0;        // s
  double alpha = 2.0;
  double jitter = 1e-6;  // added to every prior gram matrix
  std::vector<FidelityLevel> levels;

  std::size_t fidelity_count() const { return levels.size(); }

  NoiseLadder noise_ladder() const {
    NoiseLadder ladder{alpha, {}};
    for (const auto& l : levels) ladder.log_etas.push_back(l.log_eta);
    return ladder;
  }
};

/// Visits every free parameter as (name, data, rows, cols) in a fixed order.
/// Works on const and mutable models alike.
template <typename Model, typename Fn>
  requires std::is_same_v<std::remove_const_t<Model>, ModelState>
void for_each_parameter(Model& model, Fn&& fn) {
  for (std::size_t i = 0; i < model.levels.size(); ++i) {
    auto& level = model.levels[i];
    const std::string prefix = "level" + std::to_string(i + 1) + "/";
    for (std::size_t r = 0; r < level.block.modes.size(); ++r) {
      auto& m = level.block.modes[r];
      fn(prefix + "bases/mode" + std::to_string(r), m.data(), m.rows(), m.cols());
    }
    fn(prefix + "input_kernel/log_lengthscales", level.input_kernel.log_lengthscales.data(),
       level.input_kernel.log_lengthscales.size(), Eigen::Index{1});
    fn(prefix + "input_kernel/log_amplitude", &level.input_kernel.log_amplitude, Eigen::Index{1}, Eigen::Index{1});
    if (auto* bk = std::get_if<BasesKernel>(&level.bases_kernel)) {
      fn(prefix + "bases_kernel/log_lengthscales", bk->inner.log_lengthscales.data(), bk->inner.log_lengthscales.size(),
         Eigen::Index{1});
      fn(prefix + "bases_kernel/log_amplitude", &bk->inner.log_amplitude, Eigen::Index{1}, Eigen::Index{1});
    } else {
      auto& dk = std::get<DeltaKernel>(level.bases_kernel);
      fn(prefix + "bases_kernel/log_amplitude", &dk.log_amplitude, Eigen::Index{1}, Eigen::Index{1});
    }
    fn(prefix + "log_eta", &level.log_eta, Eigen::Index{1}, Eigen::Index{1});
    fn(prefix + "posterior/mean", level.mean.data(), level.mean.rows(), level.mean.cols());
    fn(prefix + "posterior/row_factor_raw", level.row_factor_raw.data(), level.row_factor_raw.rows(),
       level.row_factor_raw.cols());
    fn(prefix + "posterior/col_factor_raw", level.col_factor_raw.data(), level.col_factor_raw.rows(),
       level.col_factor_raw.cols());
  }
}

inline std::size_t parameter_count(const ModelState& model) {
  std::size_t n = 0;
  for_each_parameter(model, [&n](const std::string&, const double*, Eigen::Index r, Eigen::Index c) {
    n += static_cast<std::size_t>(r * c);
  });
  return n;
}

/// Zero-valued model with the same shapes, used to hold gradients.
inline ModelState zeros_like(const ModelState& model) {
  ModelState out = model;
  for_each_parameter(out, [](const std::string&, double* p, Eigen::Index r, Eigen::Index c) {
    std::fill(p, p + r * c, 0.0);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Data

struct FidelityData {
  Matrix inputs;   // N_i x s
  Matrix outputs;  // N_i x d
  std::vector<std::size_t> parent_index;  // row of X^(i-1) holding each row of X^(i); empty at level 1
};

struct MultiFidelityDataset {
  std::vector<FidelityData> levels;

  std::size_t fidelity_count() const { return levels.size(); }
  std::size_t input_dim() const { return levels.empty() ? 0 : static_cast<std::size_t>(levels.front().inputs.cols()); }
  std::size_t output_dim() const { return levels.empty() ? 0 : static_cast<std::size_t>(levels.front().outputs.cols()); }
  std::size_t count(std::size_t level) const { return static_cast<std::size_t>(levels.at(level).inputs.rows()); }

  /// Checks shapes, N_1 > ... > N_F and exact nestedness through the index maps.
  void validate() const {
    require(!levels.empty(), ErrorCode::InvalidCounts, "dataset has no fidelity levels");
    for (std::size_t i = 0; i < levels.size(); ++i) {
      const auto& l = levels[i];
      require(l.inputs.rows() == l.outputs.rows(), ErrorCode::DimensionMismatch,
              "level " + std::to_string(i + 1) + " inputs/outputs row mismatch");
      require(l.inputs.cols() == levels.front().inputs.cols() && l.outputs.cols() == levels.front().outputs.cols(),
              ErrorCode::DimensionMismatch, "level " + std::to_string(i + 1) + " width differs from level 1");
      require(l.inputs.rows() > 0, ErrorCode::InvalidCounts, "level " + std::to_string(i + 1) + " is empty");
      if (i == 0) continue;
      const auto& prev = levels[i - 1];
      require(l.inputs.rows() < prev.inputs.rows(), ErrorCode::InvalidCounts,
              "example counts must strictly decrease with fidelity");
      require(l.parent_index.size() == static_cast<std::size_t>(l.inputs.rows()), ErrorCode::IndexMapInvalid,
              "level " + std::to_string(i + 1) + " index map has the wrong length");
      for (std::size_t n = 0; n < l.parent_index.size(); ++n) {
        const auto p = static_cast<Eigen::Index>(l.parent_index[n]);
        require(p < prev.inputs.rows(), ErrorCode::IndexMapInvalid, "index map entry out of range");
        require(prev.inputs.row(p) == l.inputs.row(static_cast<Eigen::Index>(n)), ErrorCode::IndexMapInvalid,
                "level " + std::to_string(i + 1) + " row " + std::to_string(n) + " is not nested in level " +
                    std::to_string(i));
      }
    }
  }
};

/// X^ = [X, W_prev(rows selected by parent_index)].
inline Matrix augment_inputs(const Matrix& x, const Matrix& w_prev, const std::vector<std::size_t>& parent_index) {
  require(parent_index.size() == static_cast<std::size_t>(x.rows()), ErrorCode::IndexMapInvalid,
          "index map length does not match the inputs");
  Matrix out(x.rows(), x.cols() + w_prev.cols());
  out.leftCols(x.cols()) = x;
  for (Eigen::Index n = 0; n < x.rows(); ++n) {
    const auto p = static_cast<Eigen::Index>(parent_index[static_cast<std::size_t>(n)]);
    require(p < w_prev.rows(), ErrorCode::IndexMapInvalid, "index map points past the previous level");
    out.row(n).tail(w_prev.cols()) = w_prev.row(p);
  }
  return out;
}

/// B^(i) = [B^(i-1); C^(i)], level zero-based.
inline Matrix stacked_bases(const ModelState& model, std::size_t level) {
  require(level < model.levels.size(), ErrorCode::IndexOutOfRange, "level out of range");
  const auto k = static_cast<Eigen::Index>(model.bases_per_level);
  Matrix out(k * static_cast<Eigen::Index>(level + 1), static_cast<Eigen::Index>(model.output_dim));
  for (std::size_t j = 0; j <= level; ++j) out.middleRows(k * static_cast<Eigen::Index>(j), k) = expand_block(model.levels[j].block);
  return out;
}

/// Compositional vectors of every stacked basis at `level` (iK x sum m_r).
inline Matrix stacked_compositional(const ModelState& model, std::size_t level) {
  const auto k = static_cast<Eigen::Index>(model.bases_per_level);
  const Matrix first = model.levels.front().block.compositional();
  Matrix out(k * static_cast<Eigen::Index>(level + 1), first.cols());
  for (std::size_t j = 0; j <= level; ++j)
    out.middleRows(k * static_cast<Eigen::Index>(j), k) = model.levels[j].block.compositional();
  return out;
}

/// K_BB^(i) over all stacked bases, jitter included.
inline Matrix bases_gram(const ModelState& model, std::size_t level) {
  Matrix g = gram(model.levels[level].bases_kernel, stacked_compositional(model, level));
  g.diagonal().array() += model.jitter;
  return g;
}

/// K^(i) on (augmented) inputs, jitter included.
inline Matrix input_gram(const ModelState& model, std::size_t level, const Matrix& augmented_inputs) {
  Matrix g = gram(model.levels[level].input_kernel, augmented_inputs);
  g.diagonal().array() += model.jitter;
  return g;
}

inline double gamma_log_prior(double log_eta, double alpha) {
  return (alpha - 1.0) * log_eta - std::exp(log_eta) - std::lgamma(alpha);
}

/// sum of log N(u | 0, I) over every compositional vector of every level.
inline double basis_log_prior(const ModelState& model) {
  double s = 0.0;
  for (const auto& level : model.levels)
    for (const auto& m : level.block.modes)
      s += -0.5 * m.squaredNorm() - 0.5 * static_cast<double>(m.size()) * kLog2Pi;
  return s;
}

inline void check_model_matches(const ModelState& model, const MultiFidelityDataset& data) {
  require(model.fidelity_count() == data.fidelity_count(), ErrorCode::DimensionMismatch,
          "model has " + std::to_string(model.fidelity_count()) + " levels, data has " +
              std::to_string(data.fidelity_count()));
  require(model.output_dim == data.output_dim() && model.input_dim == data.input_dim(), ErrorCode::DimensionMismatch,
          "model and data dimensions differ");
}

/// log p({U, W, Y, eta}) for given weights W^(i) (N_i x iK each).
inline double joint_log_prob(const ModelState& model, const MultiFidelityDataset& data, const std::vector<Matrix>& weights) {
  check_model_matches(model, data);
  require(weights.size() == model.fidelity_count(), ErrorCode::DimensionMismatch, "one weight matrix per level expected");
  double total = basis_log_prior(model);
  double log_prec = 0.0;
  for (std::size_t i = 0; i < model.fidelity_count(); ++i) {
    const auto& level = model.levels[i];
    const auto& d = data.levels[i];
    const Matrix& w = weights[i];
    const auto p = static_cast<Eigen::Index>((i + 1) * model.bases_per_level);
    require(w.rows() == d.inputs.rows() && w.cols() == p, ErrorCode::DimensionMismatch,
            "weights at level " + std::to_string(i + 1) + " must be N_i x iK");
    total += gamma_log_prior(level.log_eta, model.alpha);
    log_prec += level.log_eta;

    const Matrix xa = i == 0 ? d.inputs : augment_inputs(d.inputs, weights[i - 1], d.parent_index);
    const MatrixGaussian prior{Matrix::Zero(w.rows(), w.cols()), input_gram(model, i, xa), bases_gram(model, i)};
    total += log_density(prior, w);

    const Matrix b = stacked_bases(model, i);
    const double n_out = static_cast<double>(d.outputs.size());
    total += 0.5 * n_out * (log_prec - kLog2Pi) - 0.5 * std::exp(log_prec) * (d.outputs - w * b).squaredNorm();
  }
  return total;
}

// ---------------------------------------------------------------------------
// Initialisation

enum class InitStrategy {
  Random,  // compositional vectors i.i.d. normal
  Pca,     // rank-1 CP fits of leading principal directions
};

struct InitOptions {
  std::size_t bases = 5;   // K
  std::size_t factors = 1; // R
  double alpha = 2.0;
  double jitter = 1e-6;
  std::uint64_t seed = 0;
  InitStrategy strategy = InitStrategy::Random;
  double row_scale = 0.1;  // initial L is row_scale * chol(K) at the initial means
};

namespace detail {

/// Best rank-1 CP approximation of a length-d vector reshaped by the block's
/// mode lengths, via alternating least squares from the leading fibre.
inline std::vector<RowVector> rank_one_cp(const RowVector& target, const std::vector<std::size_t>& lengths, std::size_t d) {
  const std::size_t r = lengths.size();
  std::vector<RowVector> u(r);
  for (std::size_t m = 0; m < r; ++m) u[m] = RowVector::Ones(static_cast<Eigen::Index>(lengths[m]));
  if (r == 1) {
    u[0].setZero();
    u[0].head(static_cast<Eigen::Index>(d)) = target;
    return u;
  }
  std::size_t total = 1;
  for (auto l : lengths) total *= l;
  RowVector t = RowVector::Zero(static_cast<Eigen::Index>(total));
  t.head(static_cast<Eigen::Index>(d)) = target;
  std::vector<std::size_t> stride(r, 1);
  for (std::size_t m = r - 1; m-- > 0;) stride[m] = stride[m + 1] * lengths[m + 1];
  for (int sweep = 0; sweep < 25; ++sweep) {
    for (std::size_t m = 0; m < r; ++m) {
      RowVector num = RowVector::Zero(static_cast<Eigen::Index>(lengths[m]));
      double den = 1.0;
      for (std::size_t o = 0; o < r; ++o)
        if (o != m) den *= u[o].squaredNorm();
      for (std::size_t idx = 0; idx < total; ++idx) {
        double w = t(static_cast<Eigen::Index>(idx));
        if (w == 0.0) continue;
        std::size_t mine = 0;
        for (std::size_t o = 0; o < r; ++o) {
          const std::size_t io = (idx / stride[o]) % lengths[o];
          if (o == m)
            mine = io;
          else
            w *= u[o](static_cast<Eigen::Index>(io));
        }
        num(static_cast<Eigen::Index>(mine)) += w;
      }
      u[m] = den > 0.0 ? RowVector(num / den) : num;
    }
  }
  // balance the norms across modes
  double prod = 1.0;
  for (auto& v : u) prod *= v.norm();
  const double each = std::pow(prod, 1.0 / static_cast<double>(r));
  for (auto& v : u) {
    const double n = v.norm();
    if (n > 0.0) v *= each / n;
  }
  return u;
}

inline double median_pairwise_distance(const Matrix& x) {
  std::vector<double> d;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = i + 1; j < x.rows(); ++j) d.push_back((x.row(i) - x.row(j)).norm());
  if (d.empty()) return 1.0;
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2), d.end());
  const double m = d[d.size() / 2];
  return m > 0.0 ? m : 1.0;
}

inline Matrix least_squares_weights(const Matrix& y, const Matrix& b) {
  Matrix gram = b * b.transpose();
  gram.diagonal().array() += 1e-8 * (1.0 + gram.diagonal().maxCoeff());
  return (gram.llt().solve(b * y.transpose())).transpose();
}

}  // namespace detail

/// Builds an untrained model for `data`. Kernels start at unit input
/// lengthscales (augmented columns scaled by the spread of the initial
/// weights), eta_j = alpha, and the variational means at the least-squares
/// projection of Y^(i) on the initial bases.
inline ModelState initialize_model(const MultiFidelityDataset& data, const InitOptions& opt) {
  data.validate();
  require(opt.bases >= 1 && opt.factors >= 1, ErrorCode::InvalidArgument, "K and R must be at least 1");
  require(opt.alpha > 1.0, ErrorCode::InvalidArgument, "Gamma prior shape alpha must exceed 1");
  ModelState model;
  model.bases_per_level = opt.bases;
  model.factor_count = opt.factors;
  model.output_dim = data.output_dim();
  model.input_dim = data.input_dim();
  model.alpha = opt.alpha;
  model.jitter = opt.jitter;
  RngStream rng(opt.seed);
  const auto k = static_cast<Eigen::Index>(opt.bases);
  const double init_sd = std::pow(static_cast<double>(opt.bases), -0.25);  // N(0, 1/sqrt(K))

  Matrix residual_source;
  for (std::size_t i = 0; i < data.fidelity_count(); ++i) {
    const auto& d = data.levels[i];
    FidelityLevel level;
    level.block = make_cp_block(opt.bases, model.output_dim, opt.factors);
    if (opt.strategy == InitStrategy::Random) {
      for (auto& m : level.block.modes)
        for (Eigen::Index a = 0; a < m.rows(); ++a)
          for (Eigen::Index b = 0; b < m.cols(); ++b) m(a, b) = init_sd * rng.normal();
    } else {
      // principal directions of what the inherited bases do not yet explain
      Matrix target = d.outputs;
      if (i > 0) {
        const Matrix prev_b = stacked_bases(model, i - 1);
        target = d.outputs - detail::least_squares_weights(d.outputs, prev_b) * prev_b;
      }
      const std::size_t rank = std::min<std::size_t>(opt.bases, static_cast<std::size_t>(std::min(target.rows(), target.cols())));
      const ThinSvd svd = thin_svd(target, rank);
      const auto lengths = cp_factor_lengths(model.output_dim, opt.factors);
      for (Eigen::Index j = 0; j < k; ++j) {
        RowVector dir(static_cast<Eigen::Index>(model.output_dim));
        if (j < static_cast<Eigen::Index>(rank) && svd.s(j) > 1e-12) {
          dir = svd.v.col(j).transpose() * std::sqrt(static_cast<double>(model.output_dim));
        } else {
          for (Eigen::Index c = 0; c < dir.size(); ++c) dir(c) = init_sd * rng.normal();
        }
        const auto parts = detail::rank_one_cp(dir, lengths, model.output_dim);
        for (std::size_t r = 0; r < parts.size(); ++r) level.block.modes[r].row(j) = parts[r];
      }
    }
    model.levels.push_back(std::move(level));
  }

  for (std::size_t i = 0; i < data.fidelity_count(); ++i) {
    auto& level = model.levels[i];
    const auto& d = data.levels[i];
    const Matrix b = stacked_bases(model, i);
    level.mean = detail::least_squares_weights(d.outputs, b);
    const auto p = level.mean.cols();

    const Eigen::Index width = static_cast<Eigen::Index>(model.input_dim) + (i == 0 ? 0 : model.levels[i - 1].mean.cols());
    level.input_kernel.log_lengthscales = Vector::Zero(width);
    for (Eigen::Index c = 0; c < d.inputs.cols(); ++c)
      level.input_kernel.log_lengthscales(c) = std::log(detail::median_pairwise_distance(d.inputs.col(c)));
    if (i > 0) {
      const Matrix& prev = model.levels[i - 1].mean;
      for (Eigen::Index c = 0; c < prev.cols(); ++c) {
        const double mu = prev.col(c).mean();
        const double sd = std::sqrt((prev.col(c).array() - mu).square().mean());
        level.input_kernel.log_lengthscales(static_cast<Eigen::Index>(model.input_dim) + c) = std::log(sd > 1e-8 ? 2.0 * sd : 1.0);
      }
    }
    const double weight_var = level.mean.squaredNorm() / static_cast<double>(std::max<Eigen::Index>(level.mean.size(), 1));
    level.input_kernel.log_amplitude = 0.0;
    BasesKernel bk;
    bk.inner.log_lengthscales = Vector::Constant(1, std::log(detail::median_pairwise_distance(stacked_compositional(model, i))));
    bk.inner.log_amplitude = std::log(std::max(weight_var, 1e-6));
    level.bases_kernel = bk;
    level.log_eta = std::log(opt.alpha);
    // Sigma starts as a scaled copy of the prior row covariance at the initial means
    const Matrix xa = i == 0 ? d.inputs : augment_inputs(d.inputs, model.levels[i - 1].mean, d.parent_index);
    level.row_factor_raw = FidelityLevel::raw_from_factor(opt.row_scale * cholesky(input_gram(model, i, xa)).lower);
    level.col_factor_raw = FidelityLevel::raw_from_factor(Matrix::Identity(p, p));
  }
  return model;
}

}  // namespace mfhogp
