#pragma once

// Stochastic variational training loop and finite-difference gradient checking.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mfhogp/elbo.hpp"
#include "mfhogp/mfmodel.hpp"

namespace mfhogp {

struct TrainConfig {
  std::size_t epochs = 5000;
  double learning_rate = 1e-3;
  std::size_t mc_samples_per_step = 1;
  std::uint64_t seed = 0;
  std::optional<double> gradient_clip;  // global L2 norm cap
  std::size_t log_every = 100;
  PriorTerm prior_term = PriorTerm::Conditional;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::optional<double> lengthscale_floor;  // input-kernel lengthscales kept >= floor x their initial values

  void validate() const {
    require(learning_rate >= 0.0 && std::isfinite(learning_rate), ErrorCode::InvalidArgument,
            "learning rate must be finite and nonnegative");
    require(mc_samples_per_step >= 1, ErrorCode::InvalidArgument, "mc_samples_per_step must be at least 1");
    require(log_every >= 1, ErrorCode::InvalidArgument, "log_every must be at least 1");
    require(!lengthscale_floor || (*lengthscale_floor > 0.0 && *lengthscale_floor <= 1.0), ErrorCode::InvalidArgument,
            "lengthscale floor must lie in (0, 1]");
  }
};

struct TraceRecord {
  std::size_t step = 0;
  double elbo = 0.0;
  std::vector<double> rmse;  // per level, posterior mean M B against Y on the training rows
  double seconds = 0.0;      // wall time of this step
};

struct FitResult {
  ModelState model;
  std::vector<TraceRecord> trace;
};

/// Raised when the objective or its gradient stops being finite; carries the
/// last parameters for which both were finite.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(std::size_t step, ModelState last_good)
      : Error(ErrorCode::Diverged, "ELBO became non-finite at step " + std::to_string(step)),
        step_(step),
        last_good_(std::move(last_good)) {}

  std::size_t step() const { return step_; }
  const ModelState& last_good() const { return last_good_; }

 private:
  std::size_t step_;
  ModelState last_good_;
};

/// Seed used for the reparameterisation draws of a given step.
inline std::uint64_t step_seed(std::uint64_t base, std::size_t step) {
  return splitmix64(base ^ splitmix64(0xA5A5A5A5ULL + static_cast<std::uint64_t>(step)));
}

/// Posterior-mean reconstruction error sqrt(mean((M B - Y)^2)) per level.
inline std::vector<double> training_rmse(const ModelState& model, const MultiFidelityDataset& data) {
  std::vector<double> out;
  for (std::size_t i = 0; i < model.fidelity_count(); ++i) {
    const auto& y = data.levels[i].outputs;
    out.push_back(std::sqrt((model.levels[i].mean * stacked_bases(model, i) - y).squaredNorm() / static_cast<double>(y.size())));
  }
  return out;
}

/// Adam ascent on the reparameterised ELBO, one fresh seed per step.
inline FitResult fit(ModelState model, const MultiFidelityDataset& data, const TrainConfig& config,
                     const std::function<void(const TraceRecord&)>& on_record = {}) {
  config.validate();
  data.validate();
  check_model_matches(model, data);
  const ElboOptions options{config.prior_term, config.mc_samples_per_step};

  ModelState first_moment = zeros_like(model);
  ModelState second_moment = zeros_like(model);
  FitResult result;
  std::vector<Vector> log_floor;
  if (config.lengthscale_floor)
    for (const auto& l : model.levels)
      log_floor.push_back(l.input_kernel.log_lengthscales.array() + std::log(*config.lengthscale_floor));

  for (std::size_t step = 0; step < config.epochs; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    ElboGradient eg = elbo_gradient(model, data, step_seed(config.seed, step), options);

    double norm2 = 0.0;
    bool finite = std::isfinite(eg.estimate.value);
    for_each_parameter(eg.gradient, [&](const std::string&, const double* g, Eigen::Index r, Eigen::Index c) {
      for (Eigen::Index i = 0; i < r * c; ++i) {
        norm2 += g[i] * g[i];
        finite = finite && std::isfinite(g[i]);
      }
    });
    if (!finite) throw TrainingDiverged(step, model);
    double clip = 1.0;
    if (config.gradient_clip && std::sqrt(norm2) > *config.gradient_clip) clip = *config.gradient_clip / std::sqrt(norm2);

    const double b1t = 1.0 - std::pow(config.beta1, static_cast<double>(step + 1));
    const double b2t = 1.0 - std::pow(config.beta2, static_cast<double>(step + 1));
    std::vector<double*> grads, m1, m2;
    for_each_parameter(eg.gradient, [&](const std::string&, double* p, Eigen::Index, Eigen::Index) { grads.push_back(p); });
    for_each_parameter(first_moment, [&](const std::string&, double* p, Eigen::Index, Eigen::Index) { m1.push_back(p); });
    for_each_parameter(second_moment, [&](const std::string&, double* p, Eigen::Index, Eigen::Index) { m2.push_back(p); });
    std::size_t block = 0;
    for_each_parameter(model, [&](const std::string&, double* p, Eigen::Index r, Eigen::Index c) {
      double* g = grads[block];
      double* a = m1[block];
      double* b = m2[block];
      for (Eigen::Index i = 0; i < r * c; ++i) {
        const double gi = clip * g[i];
        a[i] = config.beta1 * a[i] + (1.0 - config.beta1) * gi;
        b[i] = config.beta2 * b[i] + (1.0 - config.beta2) * gi * gi;
        p[i] += config.learning_rate * (a[i] / b1t) / (std::sqrt(b[i] / b2t) + config.epsilon);  // ascent
      }
      ++block;
    });
    for (std::size_t i = 0; i < log_floor.size(); ++i) {
      auto& ls = model.levels[i].input_kernel.log_lengthscales;
      ls = ls.cwiseMax(log_floor[i]);
    }

    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (step % config.log_every == 0 || step + 1 == config.epochs) {
      TraceRecord rec{step, eg.estimate.value, training_rmse(model, data), seconds};
      if (on_record) on_record(rec);
      result.trace.push_back(std::move(rec));
    }
  }
  result.model = std::move(model);
  return result;
}

// ---------------------------------------------------------------------------
// Finite-difference checking

struct GradientCheckEntry {
  std::string path;  // parameter name and flat index, e.g. "level2/posterior/mean[3]"
  double analytic = 0.0;
  double numeric = 0.0;
  double relative_error = 0.0;
  bool pass = false;
};

struct GradientCheckReport {
  std::vector<GradientCheckEntry> entries;
  double threshold = 1e-3;
  double max_relative_error = 0.0;

  bool all_pass() const {
    for (const auto& e : entries)
      if (!e.pass) return false;
    return true;
  }
};

inline constexpr std::size_t kMaxCheckedParameters = 5000;

/// |a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients from
/// being judged on finite-difference round-off alone.
inline double gradient_relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

using GradientFn = std::function<ModelState(const ModelState&)>;

/// Central differences of the seed-fixed estimate against `gradient_fn`.
inline GradientCheckReport check_gradients(const ModelState& model, const MultiFidelityDataset& data, std::uint64_t seed,
                                           double h, const ElboOptions& options, const GradientFn& gradient_fn,
                                           double threshold = 1e-3) {
  require(h > 0.0 && std::isfinite(h), ErrorCode::InvalidStepSize, "finite-difference step must be positive");
  const std::size_t count = parameter_count(model);
  require(count <= kMaxCheckedParameters, ErrorCode::TooManyParameters,
          std::to_string(count) + " parameters exceed the finite-difference limit of " +
              std::to_string(kMaxCheckedParameters));
  const ModelState analytic = gradient_fn(model);
  std::vector<const double*> analytic_blocks;
  for_each_parameter(analytic, [&](const std::string&, const double* p, Eigen::Index, Eigen::Index) {
    analytic_blocks.push_back(p);
  });

  GradientCheckReport report;
  report.threshold = threshold;
  ModelState probe = model;
  std::vector<std::pair<std::string, std::pair<double*, Eigen::Index>>> blocks;
  for_each_parameter(probe, [&](const std::string& name, double* p, Eigen::Index r, Eigen::Index c) {
    blocks.push_back({name, {p, r * c}});
  });
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    auto& [name, span] = blocks[b];
    for (Eigen::Index i = 0; i < span.second; ++i) {
      double& x = span.first[i];
      const double saved = x;
      x = saved + h;
      const double up = estimate_elbo(probe, data, seed, options).value;
      x = saved - h;
      const double down = estimate_elbo(probe, data, seed, options).value;
      x = saved;
      GradientCheckEntry e;
      e.path = name + "[" + std::to_string(i) + "]";
      e.analytic = analytic_blocks[b][i];
      e.numeric = (up - down) / (2.0 * h);
      e.relative_error = gradient_relative_error(e.analytic, e.numeric);
      e.pass = e.relative_error < threshold;
      report.max_relative_error = std::max(report.max_relative_error, e.relative_error);
      report.entries.push_back(std::move(e));
    }
  }
  return report;
}

inline GradientCheckReport check_gradients(const ModelState& model, const MultiFidelityDataset& data, std::uint64_t seed,
                                           double h, const ElboOptions& options = {}, double threshold = 1e-3) {
  return check_gradients(
      model, data, seed, h, options,
      [&](const ModelState& m) { return elbo_gradient(m, data, seed, options).gradient; }, threshold);
}

}  // namespace mfhogp
