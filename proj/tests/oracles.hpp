#pragma once

// Independent reference computations used only by the tests. Everything here
// is deliberately naive: explicit loops, dense covariances, finite differences.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Dense = Eigen::MatrixXd;
using Col = Eigen::VectorXd;

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

inline Dense random_matrix(std::mt19937_64& gen, int rows, int cols, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Dense m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = n(gen);
  return m;
}

inline Dense random_spd(std::mt19937_64& gen, int n, double ridge = 0.5) {
  const Dense a = random_matrix(gen, n, n);
  return a * a.transpose() + ridge * Dense::Identity(n, n);
}

/// Element-by-element Kronecker product.
inline Dense kron(const Dense& a, const Dense& b) {
  Dense out(a.rows() * b.rows(), a.cols() * b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j)
      for (int k = 0; k < b.rows(); ++k)
        for (int l = 0; l < b.cols(); ++l) out(i * b.rows() + k, j * b.cols() + l) = a(i, j) * b(k, l);
  return out;
}

/// Column stacking.
inline Col vec(const Dense& a) {
  Col v(a.size());
  int idx = 0;
  for (int j = 0; j < a.cols(); ++j)
    for (int i = 0; i < a.rows(); ++i) v(idx++) = a(i, j);
  return v;
}

/// log N(x | mean, cov) via a full LU-based determinant and inverse.
inline double mvn_log_density(const Col& x, const Col& mean, const Dense& cov) {
  const Col d = x - mean;
  const double quad = d.dot(cov.fullPivLu().solve(d));
  return -0.5 * static_cast<double>(x.size()) * kLog2Pi - 0.5 * std::log(cov.determinant()) - 0.5 * quad;
}

/// KL(N(m0, s0) || N(m1, s1)) for explicit covariances.
inline double mvn_kl(const Col& m0, const Dense& s0, const Col& m1, const Dense& s1) {
  const Dense s1inv = s1.inverse();
  const Col d = m1 - m0;
  return 0.5 * ((s1inv * s0).trace() + d.dot(s1inv * d) - static_cast<double>(m0.size()) +
                std::log(s1.determinant() / s0.determinant()));
}

inline double rbf(const Col& a, const Col& b, const Col& lengthscales, double amplitude) {
  double s = 0.0;
  for (int i = 0; i < a.size(); ++i) {
    const double l = lengthscales.size() == 1 ? lengthscales(0) : lengthscales(i);
    s += (a(i) - b(i)) * (a(i) - b(i)) / (l * l);
  }
  return amplitude * std::exp(-0.5 * s);
}

inline Dense rbf_gram(const Dense& a, const Dense& b, const Col& lengthscales, double amplitude) {
  Dense g(a.rows(), b.rows());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < b.rows(); ++j) g(i, j) = rbf(a.row(i).transpose(), b.row(j).transpose(), lengthscales, amplitude);
  return g;
}

inline double central_difference(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

}  // namespace oracle
