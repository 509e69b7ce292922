#pragma once

// Reparameterised evidence lower bound and its exact gradient.
//
// For each level i (sequentially): W~(i) = M + L Z R^T, augmented inputs use
// W~(i-1), and the estimate accumulates
//   E_q log N(Y | W B, eta_bar^{-1} I)          analytic
//   log MN(W | 0, K~(i), K_BB(i))               plug-in at W~ (or its conditional
//                                               expectation over q given K~)
//   H[q(W(i))]                                  analytic
// plus the Gamma and compositional-vector priors.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mfhogp/autodiff.hpp"
#include "mfhogp/mfmodel.hpp"

namespace mfhogp {

enum class PriorTerm {
  Sampled,      // tr(K_BB^{-1} W~^T K~^{-1} W~) evaluated at the reparameterised draw
  Conditional,  // E_q[tr(...)] given K~: tr(K_BB^{-1} Omega) tr(K~^{-1} Sigma) + tr(K_BB^{-1} M^T K~^{-1} M)
};

struct ElboOptions {
  PriorTerm prior_term = PriorTerm::Conditional;
  std::size_t mc_samples = 1;
};

struct ElboEstimate {
  double value = 0.0;
  std::vector<double> expected_log_likelihood;  // per level
  std::vector<double> kl;                       // per level, -(cross entropy + entropy)
  double noise_prior = 0.0;                     // Gamma terms
  double basis_prior = 0.0;                     // compositional-vector terms
  std::uint64_t seed = 0;

  double breakdown_sum() const {
    double s = noise_prior + basis_prior;
    for (double v : expected_log_likelihood) s += v;
    for (double v : kl) s -= v;
    return s;
  }
};

struct ElboGradient {
  ElboEstimate estimate;
  ModelState gradient;  // same shapes as the model, holding d ELBO / d parameter
};

namespace detail {

struct LevelLeaves {
  std::vector<ad::Var> modes;
  ad::Var in_log_ls, in_log_amp;
  ad::Var bk_log_ls, bk_log_amp;
  bool delta_bases = false;
  ad::Var log_eta;
  ad::Var mean, row_raw, col_raw;
};

struct ElboGraph {
  std::vector<ad::Var> leaves;  // in for_each_parameter order
  ad::Var total;
  std::vector<ad::Var> ell, kl;
  ad::Var noise_prior, basis_prior;
};

inline ad::Var expand_block_on_tape(const std::vector<ad::Var>& modes, std::size_t k, std::size_t d) {
  if (modes.size() == 1) return ad::head_cols(modes.front(), static_cast<Eigen::Index>(d));
  std::vector<ad::Var> rows;
  rows.reserve(k);
  for (std::size_t j = 0; j < k; ++j) {
    ad::Var acc = ad::gather_rows(modes.front(), {j});
    for (std::size_t r = 1; r < modes.size(); ++r) acc = ad::kron_rows(acc, ad::gather_rows(modes[r], {j}));
    rows.push_back(ad::head_cols(acc, static_cast<Eigen::Index>(d)));
  }
  return ad::vcat(rows);
}

inline ad::Var concat_cols(const std::vector<ad::Var>& parts) {
  ad::Var acc = parts.front();
  for (std::size_t r = 1; r < parts.size(); ++r) acc = ad::hcat(acc, parts[r]);
  return acc;
}

inline ElboGraph build_elbo_levels(ad::Tape& tape, const ModelState& model, const MultiFidelityDataset& data,
                                   std::uint64_t seed, const ElboOptions& options, std::size_t& current_level) {
  check_model_matches(model, data);
  require(options.mc_samples >= 1, ErrorCode::InvalidArgument, "at least one Monte-Carlo sample is required");
  ElboGraph g;
  const std::size_t f = model.fidelity_count();
  const std::size_t k = model.bases_per_level;
  std::vector<LevelLeaves> lv(f);

  // leaves, in exactly the for_each_parameter order
  {
    for (std::size_t i = 0; i < f; ++i) {
      const auto& L = model.levels[i];
      auto& out = lv[i];
      for (const auto& m : L.block.modes) out.modes.push_back(tape.leaf(m));
      out.in_log_ls = tape.leaf(Matrix(L.input_kernel.log_lengthscales));
      out.in_log_amp = tape.leaf(Matrix::Constant(1, 1, L.input_kernel.log_amplitude));
      if (const auto* bk = std::get_if<BasesKernel>(&L.bases_kernel)) {
        out.bk_log_ls = tape.leaf(Matrix(bk->inner.log_lengthscales));
        out.bk_log_amp = tape.leaf(Matrix::Constant(1, 1, bk->inner.log_amplitude));
      } else {
        out.delta_bases = true;
        out.bk_log_amp = tape.leaf(Matrix::Constant(1, 1, std::get<DeltaKernel>(L.bases_kernel).log_amplitude));
      }
      out.log_eta = tape.leaf(Matrix::Constant(1, 1, L.log_eta));
      out.mean = tape.leaf(L.mean);
      out.row_raw = tape.leaf(L.row_factor_raw);
      out.col_raw = tape.leaf(L.col_factor_raw);
      for (auto& v : out.modes) g.leaves.push_back(v);
      g.leaves.push_back(out.in_log_ls);
      g.leaves.push_back(out.in_log_amp);
      if (!out.delta_bases) g.leaves.push_back(out.bk_log_ls);
      g.leaves.push_back(out.bk_log_amp);
      g.leaves.push_back(out.log_eta);
      g.leaves.push_back(out.mean);
      g.leaves.push_back(out.row_raw);
      g.leaves.push_back(out.col_raw);
    }
  }

  // hyperpriors
  {
    ad::Var np = tape.constant(0.0);
    ad::Var bp = tape.constant(0.0);
    for (std::size_t i = 0; i < f; ++i) {
      np = ad::add(np, ad::shift(ad::sub(ad::scale(lv[i].log_eta, model.alpha - 1.0), ad::exp(lv[i].log_eta)),
                                 -std::lgamma(model.alpha)));
      for (const auto& m : lv[i].modes)
        bp = ad::add(bp, ad::shift(ad::scale(ad::squared_norm(m), -0.5), -0.5 * static_cast<double>(m.value().size()) * kLog2Pi));
    }
    g.noise_prior = np;
    g.basis_prior = bp;
  }

  // per-level deterministic pieces
  std::vector<ad::Var> bases(f), kbb_chol(f), lfac(f), rfac(f), entropy(f);
  std::vector<ad::Var> block_bases(f), block_comp(f);
  ad::Var log_prec = tape.constant(0.0);
  g.ell.resize(f);
  for (std::size_t i = 0; i < f; ++i) {
    current_level = i;
    const auto& d = data.levels[i];
    const auto n = static_cast<double>(d.inputs.rows());
    const auto p = static_cast<double>((i + 1) * k);
    const auto dim = static_cast<double>(model.output_dim);

    block_bases[i] = expand_block_on_tape(lv[i].modes, k, model.output_dim);
    block_comp[i] = concat_cols(lv[i].modes);
    std::vector<ad::Var> stack(block_bases.begin(), block_bases.begin() + static_cast<std::ptrdiff_t>(i + 1));
    bases[i] = i == 0 ? block_bases[0] : ad::vcat(stack);

    ad::Var kbb;
    if (lv[i].delta_bases) {
      const Matrix comp = stacked_compositional(model, i);
      Matrix indicator = gram(DeltaKernel{0.0}, comp);
      kbb = ad::scale_by(ad::exp(lv[i].bk_log_amp), tape.constant(indicator));
      kbb = ad::add(kbb, tape.constant(model.jitter * Matrix::Identity(indicator.rows(), indicator.cols())));
    } else {
      std::vector<ad::Var> comps(block_comp.begin(), block_comp.begin() + static_cast<std::ptrdiff_t>(i + 1));
      kbb = ad::rbf_gram(i == 0 ? block_comp[0] : ad::vcat(comps), lv[i].bk_log_ls, lv[i].bk_log_amp, model.jitter);
    }
    kbb_chol[i] = ad::cholesky(kbb);
    lfac[i] = ad::softplus_lower(lv[i].row_raw);
    rfac[i] = ad::softplus_lower(lv[i].col_raw);

    log_prec = ad::add(log_prec, lv[i].log_eta);
    const ad::Var resid = ad::sub(tape.constant(d.outputs), ad::matmul(lv[i].mean, bases[i]));
    const ad::Var spread =
        ad::mul(ad::squared_norm(lfac[i]), ad::squared_norm(ad::matmul(ad::transpose(rfac[i]), bases[i])));
    const ad::Var misfit = ad::add(ad::squared_norm(resid), spread);
    g.ell[i] = ad::sub(ad::scale(ad::shift(log_prec, -kLog2Pi), 0.5 * n * dim),
                       ad::scale(ad::mul(ad::exp(log_prec), misfit), 0.5));

    entropy[i] = ad::shift(ad::add(ad::scale(ad::sum_log_diag(lfac[i]), p), ad::scale(ad::sum_log_diag(rfac[i]), n)),
                           0.5 * n * p * (1.0 + kLog2Pi));
  }

  // stochastic cross-entropy terms, averaged over samples
  RngStream rng(seed);
  std::vector<ad::Var> cross(f, tape.constant(0.0));
  const double inv_s = 1.0 / static_cast<double>(options.mc_samples);
  for (std::size_t s = 0; s < options.mc_samples; ++s) {
    ad::Var w_prev;
    for (std::size_t i = 0; i < f; ++i) {
      current_level = i;
      const auto& d = data.levels[i];
      const auto n = static_cast<double>(d.inputs.rows());
      const auto p = static_cast<double>((i + 1) * k);
      const Matrix z = standard_normal_matrix(rng, static_cast<std::size_t>(d.inputs.rows()), (i + 1) * k);
      const ad::Var w = ad::add(lv[i].mean, ad::matmul(ad::matmul(lfac[i], tape.constant(z)), ad::transpose(rfac[i])));
      const ad::Var x = i == 0 ? tape.constant(d.inputs)
                               : ad::hcat(tape.constant(d.inputs), ad::gather_rows(w_prev, d.parent_index));
      const ad::Var lk = ad::cholesky(ad::rbf_gram(x, lv[i].in_log_ls, lv[i].in_log_amp, model.jitter));
      ad::Var quad;
      if (options.prior_term == PriorTerm::Sampled) {
        quad = ad::squared_norm(ad::solve_lower(kbb_chol[i], ad::transpose(ad::solve_lower(lk, w))));
      } else {
        const ad::Var tr_row = ad::squared_norm(ad::solve_lower(lk, lfac[i]));
        const ad::Var tr_col = ad::squared_norm(ad::solve_lower(kbb_chol[i], rfac[i]));
        const ad::Var mean_quad =
            ad::squared_norm(ad::solve_lower(kbb_chol[i], ad::transpose(ad::solve_lower(lk, lv[i].mean))));
        quad = ad::add(ad::mul(tr_row, tr_col), mean_quad);
      }
      // log MN(W | 0, K~, K_BB) with log|K| = 2 sum log diag(L_K)
      const ad::Var log_mn =
          ad::shift(ad::sub(ad::scale(ad::add(ad::scale(ad::sum_log_diag(lk), p), ad::scale(ad::sum_log_diag(kbb_chol[i]), n)), -1.0),
                            ad::scale(quad, 0.5)),
                    -0.5 * n * p * kLog2Pi);
      cross[i] = ad::add(cross[i], ad::scale(log_mn, inv_s));
      w_prev = w;
    }
  }

  g.kl.resize(f);
  ad::Var total = ad::add(g.noise_prior, g.basis_prior);
  for (std::size_t i = 0; i < f; ++i) {
    g.kl[i] = ad::scale(ad::add(cross[i], entropy[i]), -1.0);
    total = ad::sub(ad::add(total, g.ell[i]), g.kl[i]);
  }
  g.total = total;
  return g;
}

inline ElboGraph build_elbo(ad::Tape& tape, const ModelState& model, const MultiFidelityDataset& data, std::uint64_t seed,
                            const ElboOptions& options) {
  std::size_t level = 0;
  try {
    return build_elbo_levels(tape, model, data, seed, options, level);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NotPositiveDefinite) throw;
    fail(ErrorCode::NotPositiveDefinite, "level " + std::to_string(level + 1) + ": " + e.detail());
  }
}

inline ElboEstimate read_estimate(const ElboGraph& g, std::uint64_t seed) {
  ElboEstimate e;
  for (const auto& v : g.ell) e.expected_log_likelihood.push_back(v.scalar());
  for (const auto& v : g.kl) e.kl.push_back(v.scalar());
  e.noise_prior = g.noise_prior.scalar();
  e.basis_prior = g.basis_prior.scalar();
  e.seed = seed;
  e.value = e.breakdown_sum();  // same terms as g.total, summed in breakdown order
  return e;
}

}  // namespace detail

/// Seed-fixed estimate of the ELBO; deterministic in (model, data, seed).
inline ElboEstimate estimate_elbo(const ModelState& model, const MultiFidelityDataset& data, std::uint64_t seed,
                                  const ElboOptions& options = {}) {
  ad::Tape tape;
  const detail::ElboGraph g = detail::build_elbo(tape, model, data, seed, options);
  return detail::read_estimate(g, seed);
}

/// Exact gradient of the seed-fixed estimate with respect to every free parameter.
inline ElboGradient elbo_gradient(const ModelState& model, const MultiFidelityDataset& data, std::uint64_t seed,
                                  const ElboOptions& options = {}) {
  ad::Tape tape;
  const detail::ElboGraph g = detail::build_elbo(tape, model, data, seed, options);
  tape.backward(g.total);
  ElboGradient out{detail::read_estimate(g, seed), zeros_like(model)};
  std::size_t idx = 0;
  for_each_parameter(out.gradient, [&](const std::string&, double* p, Eigen::Index r, Eigen::Index c) {
    const Matrix gm = tape.grad(g.leaves[idx++]);
    require(gm.rows() == r && gm.cols() == c, ErrorCode::DimensionMismatch, "gradient shape mismatch");
    std::copy(gm.data(), gm.data() + r * c, p);
  });
  return out;
}

}  // namespace mfhogp
