#pragma once

// Finite-difference / finite-volume solvers for the three benchmark PDEs and
// multi-fidelity dataset generation.
//
// Conventions shared by all solvers:
//  * a mesh of size n has n intervals per axis (n + 1 nodes);
//  * output fields are row-major, rows running over time (Burgers, heat) or
//    y (Poisson), columns over x;
//  * alignment onto the output grid is bilinear, so output nodes that coincide
//    with solver nodes carry the solver values unchanged.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include "mfhogp/mfmodel.hpp"
#include "mfhogp/numerics.hpp"
#include "mfhogp/parallel.hpp"

namespace mfhogp {

enum class Equation { Burgers, Poisson, Heat };

inline std::string equation_name(Equation e) {
  switch (e) {
    case Equation::Burgers: return "burgers";
    case Equation::Poisson: return "poisson";
    case Equation::Heat: return "heat";
  }
  return "unknown";
}

inline Equation parse_equation(const std::string& s) {
  if (s == "burgers") return Equation::Burgers;
  if (s == "poisson") return Equation::Poisson;
  if (s == "heat") return Equation::Heat;
  fail(ErrorCode::InvalidArgument, "unknown equation '" + s + "'");
}

struct SolutionField {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  RowVector flattened() const { return Eigen::Map<const RowVector>(values.data(), static_cast<Eigen::Index>(values.size())); }
};

struct PdeSpec {
  Equation equation = Equation::Poisson;
  std::vector<std::pair<double, double>> input_ranges;
  std::vector<std::size_t> meshes;  // meshes[i] is the mesh of fidelity i + 1
  std::size_t out_rows = 32;
  std::size_t out_cols = 32;
  double horizon = 1.0;  // final time, unused by Poisson

  std::size_t input_dim() const { return input_ranges.size(); }
  std::size_t output_dim() const { return out_rows * out_cols; }

  std::size_t mesh(std::size_t fidelity) const {
    require(fidelity >= 1 && fidelity <= meshes.size(), ErrorCode::InvalidArgument,
            "fidelity " + std::to_string(fidelity) + " has no mesh; spec defines " + std::to_string(meshes.size()));
    return meshes[fidelity - 1];
  }

  void validate() const {
    require(!meshes.empty(), ErrorCode::InvalidArgument, "spec needs at least one mesh");
    for (std::size_t i = 1; i < meshes.size(); ++i)
      require(meshes[i] > meshes[i - 1], ErrorCode::InvalidArgument, "meshes must increase with fidelity");
    for (const auto& [lo, hi] : input_ranges) require(lo <= hi, ErrorCode::InvalidArgument, "empty input range");
    require(out_rows >= 2 && out_cols >= 2, ErrorCode::InvalidArgument, "output grid needs at least 2x2 nodes");
  }
};

namespace detail {

inline std::vector<double> linspace(double a, double b, std::size_t nodes) {
  std::vector<double> v(nodes);
  for (std::size_t i = 0; i < nodes; ++i) v[i] = nodes == 1 ? a : a + (b - a) * static_cast<double>(i) / static_cast<double>(nodes - 1);
  v.back() = b;
  return v;
}

/// Index i and weight f with x = (1 - f) c[i] + f c[i+1]; queries outside are clamped.
inline std::pair<std::size_t, double> bracket(const std::vector<double>& c, double x) {
  if (x <= c.front()) return {0, 0.0};
  if (x >= c.back()) return {c.size() - 2, 1.0};
  const auto it = std::upper_bound(c.begin(), c.end(), x);
  const auto i = static_cast<std::size_t>(it - c.begin()) - 1;
  return {i, (x - c[i]) / (c[i + 1] - c[i])};
}

inline void check_finite(const Matrix& m, const char* what) {
  require(m.allFinite(), ErrorCode::SolverDiverged, std::string(what) + " solver produced a non-finite value");
}

/// Thomas algorithm for a diagonally dominant tridiagonal system, in place.
inline void solve_tridiagonal(std::vector<double> lower, std::vector<double> diag, const std::vector<double>& upper,
                              std::vector<double>& rhs) {
  const std::size_t n = diag.size();
  for (std::size_t i = 1; i < n; ++i) {
    const double m = lower[i] / diag[i - 1];
    diag[i] -= m * upper[i - 1];
    rhs[i] -= m * rhs[i - 1];
  }
  rhs[n - 1] /= diag[n - 1];
  for (std::size_t i = n - 1; i-- > 0;) rhs[i] = (rhs[i] - upper[i] * rhs[i + 1]) / diag[i];
}

}  // namespace detail

/// Bilinear interpolation of `values` (rows over row_coords, cols over col_coords).
inline SolutionField interpolate_grid(const Matrix& values, const std::vector<double>& row_coords,
                                      const std::vector<double>& col_coords, const std::vector<double>& out_rows,
                                      const std::vector<double>& out_cols) {
  require(values.rows() == static_cast<Eigen::Index>(row_coords.size()) &&
              values.cols() == static_cast<Eigen::Index>(col_coords.size()) && row_coords.size() >= 2 &&
              col_coords.size() >= 2,
          ErrorCode::DimensionMismatch, "interpolation coordinates do not match the field");
  SolutionField out{out_rows.size(), out_cols.size(), std::vector<double>(out_rows.size() * out_cols.size())};
  std::vector<std::pair<std::size_t, double>> cb(out_cols.size());
  for (std::size_t c = 0; c < out_cols.size(); ++c) cb[c] = detail::bracket(col_coords, out_cols[c]);
  for (std::size_t r = 0; r < out_rows.size(); ++r) {
    const auto [i, fr] = detail::bracket(row_coords, out_rows[r]);
    for (std::size_t c = 0; c < out_cols.size(); ++c) {
      const auto [j, fc] = cb[c];
      const auto ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
      double v = (1.0 - fr) * (1.0 - fc) * values(ii, jj);
      if (fc != 0.0) v += (1.0 - fr) * fc * values(ii, jj + 1);
      if (fr != 0.0) v += fr * (1.0 - fc) * values(ii + 1, jj);
      if (fr != 0.0 && fc != 0.0) v += fr * fc * values(ii + 1, jj + 1);
      out.values[r * out_cols.size() + c] = v;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Burgers: u_t + u u_x = v u_xx on [0,1] x [0,T], u(x,0) = sin(pi x / 2), u(0,t) = u(1,t) = 0

/// Node values, (n+1) time levels x (n+1) space nodes.
inline Matrix solve_burgers_mesh(double viscosity, std::size_t n, double horizon = 3.0) {
  require(n >= 2, ErrorCode::InvalidArgument, "Burgers mesh needs at least 2 intervals");
  require(viscosity > 0.0, ErrorCode::InvalidArgument, "viscosity must be positive");
  const double dx = 1.0 / static_cast<double>(n), dt = horizon / static_cast<double>(n);
  const auto nodes = static_cast<Eigen::Index>(n + 1);
  Matrix u(nodes, nodes);
  for (Eigen::Index j = 0; j < nodes; ++j) u(0, j) = std::sin(std::numbers::pi * static_cast<double>(j) * dx / 2.0);

  const std::size_t m = n - 1;  // interior unknowns
  std::vector<double> lo(m), di(m), up(m), rhs(m), iterate(m), prev(m);
  for (Eigen::Index k = 1; k < nodes; ++k) {
    for (std::size_t j = 0; j < m; ++j) prev[j] = iterate[j] = u(k - 1, static_cast<Eigen::Index>(j + 1));
    // Picard iteration on the advection speed; every linear system is an M-matrix
    double change = 0.0;
    for (int it = 0; it < 200; ++it) {
      for (std::size_t j = 0; j < m; ++j) {
        const double a = iterate[j];
        const double diff = viscosity / (dx * dx);
        lo[j] = -diff - std::max(a, 0.0) / dx;
        up[j] = -diff + std::min(a, 0.0) / dx;
        di[j] = 1.0 / dt + 2.0 * diff + std::abs(a) / dx;
        rhs[j] = prev[j] / dt;  // boundary values are zero
      }
      detail::solve_tridiagonal(lo, di, up, rhs);
      change = 0.0;
      for (std::size_t j = 0; j < m; ++j) change = std::max(change, std::abs(rhs[j] - iterate[j]));
      iterate = rhs;
      require(std::isfinite(change), ErrorCode::SolverDiverged, "Burgers Picard iteration produced a non-finite value");
      if (change < 1e-13) break;
    }
    require(change < 1e-9, ErrorCode::ConvergenceFailure,
            "Burgers Picard iteration stalled at step " + std::to_string(k) + " (change " + std::to_string(change) + ")");
    u(k, 0) = 0.0;
    u(k, nodes - 1) = 0.0;
    for (std::size_t j = 0; j < m; ++j) u(k, static_cast<Eigen::Index>(j + 1)) = iterate[j];
  }
  detail::check_finite(u, "Burgers");
  return u;
}

inline SolutionField solve_burgers(double viscosity, std::size_t n, std::size_t out_rows = 128, std::size_t out_cols = 128,
                                   double horizon = 3.0) {
  const Matrix u = solve_burgers_mesh(viscosity, n, horizon);
  const auto t = detail::linspace(0.0, horizon, n + 1), x = detail::linspace(0.0, 1.0, n + 1);
  const auto ox = detail::linspace(0.0, 1.0, out_cols);
  SolutionField f = interpolate_grid(u, t, x, detail::linspace(0.0, horizon, out_rows), ox);
  // the initial condition is known in closed form
  for (std::size_t c = 0; c < out_cols; ++c) f.values[c] = std::sin(std::numbers::pi * ox[c] / 2.0);
  return f;
}

// ---------------------------------------------------------------------------
// Poisson (Laplace) on [0,1]^2 with constant Dirichlet sides and a pinned center value

struct PoissonBoundary {
  double left = 0.5, right = 0.5, top = 0.5, bottom = 0.5, center = 0.5;
};

/// Node values, (n+1) x (n+1), rows over y (row 0 is y = 0, the bottom side).
inline Matrix solve_poisson_mesh(const PoissonBoundary& b, std::size_t n) {
  require(n >= 4 && n % 2 == 0, ErrorCode::InvalidArgument, "Poisson mesh must be even and at least 4");
  const auto nodes = static_cast<Eigen::Index>(n + 1);
  const Eigen::Index mid = nodes / 2;
  Matrix u = Matrix::Zero(nodes, nodes);
  for (Eigen::Index i = 0; i < nodes; ++i) {
    u(i, 0) = b.left;
    u(i, nodes - 1) = b.right;
    u(0, i) = b.bottom;
    u(nodes - 1, i) = b.top;
  }
  u(0, 0) = 0.5 * (b.bottom + b.left);
  u(0, nodes - 1) = 0.5 * (b.bottom + b.right);
  u(nodes - 1, 0) = 0.5 * (b.top + b.left);
  u(nodes - 1, nodes - 1) = 0.5 * (b.top + b.right);
  u(mid, mid) = b.center;

  auto fixed = [&](Eigen::Index r, Eigen::Index c) {
    return r == 0 || c == 0 || r == nodes - 1 || c == nodes - 1 || (r == mid && c == mid);
  };
  std::vector<Eigen::Index> index(static_cast<std::size_t>(nodes * nodes), -1);
  Eigen::Index unknowns = 0;
  for (Eigen::Index r = 0; r < nodes; ++r)
    for (Eigen::Index c = 0; c < nodes; ++c)
      if (!fixed(r, c)) index[static_cast<std::size_t>(r * nodes + c)] = unknowns++;

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(5 * unknowns));
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(unknowns);
  constexpr std::array<std::pair<int, int>, 4> nbrs{{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};
  for (Eigen::Index r = 0; r < nodes; ++r)
    for (Eigen::Index c = 0; c < nodes; ++c) {
      const Eigen::Index row = index[static_cast<std::size_t>(r * nodes + c)];
      if (row < 0) continue;
      trip.emplace_back(row, row, 4.0);
      for (const auto& [dr, dc] : nbrs) {
        const Eigen::Index rr = r + dr, cc = c + dc;
        const Eigen::Index col = index[static_cast<std::size_t>(rr * nodes + cc)];
        if (col >= 0) trip.emplace_back(row, col, -1.0);
        else rhs(row) += u(rr, cc);
      }
    }
  Eigen::SparseMatrix<double> a(unknowns, unknowns);
  a.setFromTriplets(trip.begin(), trip.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(a);
  require(ldlt.info() == Eigen::Success, ErrorCode::SolverDiverged, "Poisson factorization failed");
  const Eigen::VectorXd sol = ldlt.solve(rhs);
  require(sol.allFinite(), ErrorCode::SolverDiverged, "Poisson solve produced a non-finite value");
  const double residual = (a * sol - rhs).lpNorm<Eigen::Infinity>();
  require(residual < 1e-10, ErrorCode::SolverDiverged, "Poisson residual " + std::to_string(residual) + " exceeds 1e-10");
  for (Eigen::Index r = 0; r < nodes; ++r)
    for (Eigen::Index c = 0; c < nodes; ++c) {
      const Eigen::Index k = index[static_cast<std::size_t>(r * nodes + c)];
      if (k >= 0) u(r, c) = sol(k);
    }
  return u;
}

inline SolutionField solve_poisson(const PoissonBoundary& b, std::size_t n, std::size_t out_rows = 32, std::size_t out_cols = 32) {
  const Matrix u = solve_poisson_mesh(b, n);
  const auto g = detail::linspace(0.0, 1.0, n + 1);
  return interpolate_grid(u, g, g, detail::linspace(0.0, 1.0, out_rows), detail::linspace(0.0, 1.0, out_cols));
}

// ---------------------------------------------------------------------------
// Heat: u_t = alpha u_xx on [0,1] x [0,T], u(x,0) = H(x-0.25) - H(x-0.75),
// Neumann data -u_x(0,t) = flux_left, -u_x(1,t) = flux_right.

struct HeatParameters {
  double flux_left = 0.0;
  double flux_right = 0.0;
  double conductivity = 0.05;
};

/// Cell averages, (n+1) time levels x n cells; conservative backward Euler.
inline Matrix solve_heat_mesh(const HeatParameters& p, std::size_t n, double horizon = 5.0) {
  require(n >= 2, ErrorCode::InvalidArgument, "heat mesh needs at least 2 cells");
  require(p.conductivity > 0.0, ErrorCode::InvalidArgument, "conductivity must be positive");
  const double h = 1.0 / static_cast<double>(n), dt = horizon / static_cast<double>(n);
  const auto cells = static_cast<Eigen::Index>(n);
  Matrix u(cells + 1, cells);
  for (Eigen::Index j = 0; j < cells; ++j) {
    const double a = static_cast<double>(j) * h, b = a + h;
    u(0, j) = std::max(0.0, std::min(b, 0.75) - std::max(a, 0.25)) / h;  // exact cell average of the step
  }
  const double g = p.conductivity * dt / (h * h);
  std::vector<double> lo(n, -g), di(n, 1.0 + 2.0 * g), up(n, -g), rhs(n);
  di.front() = di.back() = 1.0 + g;
  lo.front() = up.back() = 0.0;
  for (Eigen::Index k = 1; k <= cells; ++k) {
    for (std::size_t j = 0; j < n; ++j) rhs[j] = u(k - 1, static_cast<Eigen::Index>(j));
    rhs.front() += p.conductivity * dt / h * p.flux_left;
    rhs.back() -= p.conductivity * dt / h * p.flux_right;
    detail::solve_tridiagonal(lo, di, up, rhs);
    for (std::size_t j = 0; j < n; ++j) u(k, static_cast<Eigen::Index>(j)) = rhs[j];
  }
  detail::check_finite(u, "heat");
  return u;
}

inline SolutionField solve_heat(const HeatParameters& p, std::size_t n, std::size_t out_rows = 100, std::size_t out_cols = 100,
                                double horizon = 5.0) {
  const Matrix cells = solve_heat_mesh(p, n, horizon);
  const double h = 1.0 / static_cast<double>(n);
  // cell centers plus the two walls, extrapolated with the prescribed gradient
  std::vector<double> x(n + 2);
  x.front() = 0.0;
  x.back() = 1.0;
  for (std::size_t j = 0; j < n; ++j) x[j + 1] = (static_cast<double>(j) + 0.5) * h;
  Matrix u(cells.rows(), static_cast<Eigen::Index>(n + 2));
  u.middleCols(1, cells.cols()) = cells;
  u.col(0) = (cells.col(0).array() + 0.5 * h * p.flux_left).matrix();
  u.col(u.cols() - 1) = (cells.col(cells.cols() - 1).array() - 0.5 * h * p.flux_right).matrix();
  u(0, 0) = cells(0, 0);
  u(0, u.cols() - 1) = cells(0, cells.cols() - 1);
  return interpolate_grid(u, detail::linspace(0.0, horizon, n + 1), x, detail::linspace(0.0, horizon, out_rows),
                          detail::linspace(0.0, 1.0, out_cols));
}

// ---------------------------------------------------------------------------
// Dataset generation

/// Solves one instance of `spec` at mesh n; `input` follows spec.input_ranges.
inline SolutionField solve_instance(const PdeSpec& spec, const RowVector& input, std::size_t n) {
  require(input.size() == static_cast<Eigen::Index>(spec.input_dim()), ErrorCode::DimensionMismatch,
          "instance input has the wrong width");
  switch (spec.equation) {
    case Equation::Burgers: return solve_burgers(input(0), n, spec.out_rows, spec.out_cols, spec.horizon);
    case Equation::Poisson:
      return solve_poisson(PoissonBoundary{input(0), input(1), input(2), input(3), input(4)}, n, spec.out_rows, spec.out_cols);
    case Equation::Heat:
      return solve_heat(HeatParameters{input(0), input(1), input(2)}, n, spec.out_rows, spec.out_cols, spec.horizon);
  }
  fail(ErrorCode::InvalidArgument, "unknown equation");
}

struct GeneratedData {
  PdeSpec spec;
  MultiFidelityDataset train;
  FidelityData test;  // outputs at fidelity F + 1, no index map
  std::size_t test_fidelity = 0;
  std::uint64_t seed = 0;
};

inline Matrix sample_inputs(const PdeSpec& spec, std::size_t count, RngStream& rng) {
  Matrix x(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(spec.input_dim()));
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const auto [lo, hi] = spec.input_ranges[static_cast<std::size_t>(c)];
      x(r, c) = rng.uniform(lo, hi);
    }
  return x;
}

inline Matrix solve_all(const PdeSpec& spec, const Matrix& inputs, std::size_t fidelity) {
  const std::size_t n = spec.mesh(fidelity);
  Matrix y(inputs.rows(), static_cast<Eigen::Index>(spec.output_dim()));
  parallel_for(static_cast<std::size_t>(inputs.rows()), [&](std::size_t r) {
    y.row(static_cast<Eigen::Index>(r)) = solve_instance(spec, inputs.row(static_cast<Eigen::Index>(r)), n).flattened();
  });
  return y;
}

/// Nested training levels with counts[0] > counts[1] > ... and a test set
/// solved one fidelity above the top training level.
inline GeneratedData generate_dataset(const PdeSpec& spec, const std::vector<std::size_t>& counts, std::uint64_t seed,
                                      std::size_t test_count) {
  spec.validate();
  require(!counts.empty() && counts.front() > 0, ErrorCode::InvalidCounts, "at least one non-empty fidelity is required");
  for (std::size_t i = 1; i < counts.size(); ++i)
    require(counts[i] > 0 && counts[i] < counts[i - 1], ErrorCode::InvalidCounts,
            "counts must strictly decrease with fidelity");
  require(spec.meshes.size() > counts.size(), ErrorCode::InvalidCounts,
          "spec needs a mesh for the test fidelity " + std::to_string(counts.size() + 1));
  for (std::size_t i = 0; i < counts.size(); ++i)
    require(spec.out_rows >= spec.meshes[i] && spec.out_cols >= spec.meshes[i], ErrorCode::InvalidArgument,
            "output grid is coarser than the training mesh of fidelity " + std::to_string(i + 1));

  GeneratedData g;
  g.spec = spec;
  g.seed = seed;
  g.test_fidelity = counts.size() + 1;
  RngStream input_rng = RngStream(seed).split(0);
  RngStream subset_rng = RngStream(seed).split(1);
  RngStream test_rng = RngStream(seed).split(2);

  Matrix x = sample_inputs(spec, counts.front(), input_rng);
  for (std::size_t i = 0; i < counts.size(); ++i) {
    FidelityData level;
    if (i == 0) {
      level.inputs = x;
    } else {
      const auto& prev = g.train.levels[i - 1].inputs;
      std::vector<std::size_t> perm(static_cast<std::size_t>(prev.rows()));
      for (std::size_t k = 0; k < perm.size(); ++k) perm[k] = k;
      for (std::size_t k = 0; k < counts[i]; ++k) {  // partial Fisher-Yates
        const std::size_t j = k + static_cast<std::size_t>(subset_rng.next_u64() % (perm.size() - k));
        std::swap(perm[k], perm[j]);
      }
      level.parent_index.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(counts[i]));
      level.inputs.resize(static_cast<Eigen::Index>(counts[i]), prev.cols());
      for (std::size_t k = 0; k < counts[i]; ++k)
        level.inputs.row(static_cast<Eigen::Index>(k)) = prev.row(static_cast<Eigen::Index>(level.parent_index[k]));
    }
    level.outputs = solve_all(spec, level.inputs, i + 1);
    g.train.levels.push_back(std::move(level));
  }
  g.test.inputs = sample_inputs(spec, test_count, test_rng);
  g.test.outputs = test_count == 0 ? Matrix(0, static_cast<Eigen::Index>(spec.output_dim()))
                                   : solve_all(spec, g.test.inputs, g.test_fidelity);
  g.train.validate();
  return g;
}

// ---------------------------------------------------------------------------
// Presets

struct Preset {
  std::string name;
  PdeSpec spec;
  std::vector<std::size_t> counts;
  std::size_t test_count = 112;
};

inline PdeSpec burgers_spec() {
  return PdeSpec{Equation::Burgers, {{0.001, 0.1}}, {16, 32, 64, 128}, 128, 128, 3.0};
}
inline PdeSpec poisson_spec() {
  return PdeSpec{Equation::Poisson, std::vector<std::pair<double, double>>(5, {0.1, 0.9}), {8, 16, 32, 64}, 32, 32, 1.0};
}
inline PdeSpec heat_spec() {
  return PdeSpec{Equation::Heat, {{0.0, 1.0}, {-1.0, 0.0}, {0.01, 0.1}}, {16, 32, 64}, 100, 100, 5.0};
}

inline std::vector<Preset> presets() {
  PdeSpec smoke = poisson_spec();
  smoke.meshes = {4, 8, 16};
  smoke.out_rows = smoke.out_cols = 8;
  return {
      {"burgers-i", burgers_spec(), {400}, 112},
      {"burgers-ii", burgers_spec(), {400, 4}, 112},
      {"burgers-iii", burgers_spec(), {400, 40, 4}, 112},
      {"poisson-i", poisson_spec(), {400}, 112},
      {"poisson-ii", poisson_spec(), {400, 10}, 112},
      {"heat-i", heat_spec(), {400}, 112},
      {"heat-ii", heat_spec(), {400, 4}, 112},
      {"burgers-ii-small", burgers_spec(), {100, 10}, 30},
      {"poisson-ii-small", poisson_spec(), {100, 10}, 30},
      {"heat-ii-small", heat_spec(), {100, 10}, 30},
      {"smoke", smoke, {20, 4}, 10},
  };
}

inline Preset find_preset(const std::string& name) {
  std::string known;
  for (auto& p : presets()) {
    if (p.name == name) return p;
    known += (known.empty() ? "" : ", ") + p.name;
  }
  fail(ErrorCode::InvalidArgument, "unknown preset '" + name + "' (known: " + known + ")");
}

}  // namespace mfhogp
