#pragma once

// Test-only reference computations. Deliberately avoid the library's
// Cholesky path: everything here uses explicit loops and dense inversion.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>

#include <Eigen/Dense>

#include "fcps/gp.hpp"

namespace test_oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline double naive_kernel(const Eigen::Ref<const Eigen::RowVectorXd>& a, const Eigen::Ref<const Eigen::RowVectorXd>& b,
                           const fcps::gp::Hyperparams& hp) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < a.size(); ++k) {
    const double z = (a(k) - b(k)) / hp.lengthscales(k);
    s += z * z;
  }
  return hp.signal_variance * std::exp(-0.5 * s);
}

inline MatrixXd naive_gram(const MatrixXd& a, const MatrixXd& b, const fcps::gp::Hyperparams& hp) {
  MatrixXd k(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.rows(); ++j) k(i, j) = naive_kernel(a.row(i), b.row(j), hp);
  return k;
}

/// (mean, latent variance) by explicit inversion of K + noise I.
inline std::pair<double, double> dense_posterior(const MatrixXd& x, const VectorXd& y, const fcps::gp::Hyperparams& hp,
                                                 const VectorXd& xs) {
  MatrixXd k = naive_gram(x, x, hp);
  k.diagonal().array() += hp.noise_variance;
  const MatrixXd kinv = k.fullPivLu().inverse();
  const VectorXd ks = naive_gram(x, xs.transpose(), hp).col(0);
  return {ks.dot(kinv * y), hp.signal_variance - ks.dot(kinv * ks)};
}

inline double dense_log_evidence(const MatrixXd& x, const VectorXd& y, const fcps::gp::Hyperparams& hp) {
  MatrixXd k = naive_gram(x, x, hp);
  k.diagonal().array() += hp.noise_variance;
  const auto lu = k.fullPivLu();
  return -0.5 * y.dot(lu.inverse() * y) - 0.5 * std::log(lu.determinant()) -
         0.5 * static_cast<double>(x.rows()) * std::log(2.0 * std::numbers::pi);
}

/// Central differences of the log evidence in log-hyperparameter space.
inline VectorXd evidence_fd_gradient(const MatrixXd& x, const VectorXd& y, const fcps::gp::Hyperparams& hp,
                                     double step) {
  const VectorXd base = hp.to_log();
  VectorXd g(base.size());
  for (Eigen::Index k = 0; k < base.size(); ++k) {
    VectorXd up = base, down = base;
    up(k) += step;
    down(k) -= step;
    g(k) = (dense_log_evidence(x, y, fcps::gp::Hyperparams::from_log(up)) -
            dense_log_evidence(x, y, fcps::gp::Hyperparams::from_log(down))) /
           (2.0 * step);
  }
  return g;
}

/// max_k |a_k - b_k| / max(|a_k|, |b_k|, 1e-3)
inline double max_relative_error(const VectorXd& a, const VectorXd& b) {
  double worst = 0.0;
  for (Eigen::Index k = 0; k < a.size(); ++k) {
    const double denom = std::max({std::abs(a(k)), std::abs(b(k)), 1e-3});
    worst = std::max(worst, std::abs(a(k) - b(k)) / denom);
  }
  return worst;
}

}  // namespace test_oracle
