#pragma once

// Diagonal-covariance Gaussian mixtures fitted by EM, with BIC model choice.

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace mfdl {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct DiagGmm {
  VectorXd weights;  ///< k
  MatrixXd means;    ///< k x d
  MatrixXd vars;     ///< k x d
  double log_likelihood = 0.0;
  bool converged = false;

  int k() const { return static_cast<int>(weights.size()); }
  /// k * 2d means and variances plus k - 1 free weights.
  Index num_params() const { return k() * 2 * means.cols() + k() - 1; }
  double bic(Index n) const;
  /// n x k posterior responsibilities for rows of X.
  MatrixXd responsibilities(const MatrixXd& X) const;
  /// Index of the most responsible component for each row.
  std::vector<int> assign(const MatrixXd& X) const;
};

struct GmmOptions {
  int max_iter = 300;
  double tol = 1e-6;  ///< on the per-sample log-likelihood change
  int restarts = 3;
};

/// EM fit with k-means++ style seeding. Rows of X are samples.
DiagGmm fit_diag_gmm(const MatrixXd& X, int k, std::uint64_t seed, const GmmOptions& options = {});

struct GmmSelection {
  DiagGmm model;
  std::vector<double> bic;  ///< per tried k, starting at k = 1
  bool warning = false;     ///< chosen fit hit max_iter without converging
};

/// Fits k = 1..k_max and keeps the lowest BIC. k is capped so that there are
/// at least k * (dim + 1) samples; with fewer than dim + 2 samples only k = 1
/// is tried.
GmmSelection select_gmm(const MatrixXd& X, int k_max, std::uint64_t seed, const GmmOptions& options = {});

}  // namespace mfdl
