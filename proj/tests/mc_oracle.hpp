#pragma once

// Monte-Carlo moment estimates with standard errors. Test-only: the analytic
// code under test never goes through this path.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

namespace mfdl::testing {

struct McMoments {
  Eigen::VectorXd mean;
  Eigen::VectorXd mean_se;
  Eigen::MatrixXd cov;  // unbiased
  Eigen::MatrixXd cov_se;
};

/// Rows of `samples` are i.i.d. draws. Two passes: mean first, then centred
/// products and their squares for the covariance standard errors.
inline McMoments mc_moments(const Eigen::MatrixXd& samples) {
  const Eigen::Index n = samples.rows(), d = samples.cols();
  McMoments out;
  out.mean = samples.colwise().mean().transpose();
  Eigen::MatrixXd centred = samples.rowwise() - out.mean.transpose();
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(d, d);
  Eigen::MatrixXd sum_sq = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index s = 0; s < n; ++s) {
    const auto r = centred.row(s);
    for (Eigen::Index j = 0; j < d; ++j) {
      for (Eigen::Index i = 0; i < d; ++i) {
        const double p = r[i] * r[j];
        sum(i, j) += p;
        sum_sq(i, j) += p * p;
      }
    }
  }
  const double nd = static_cast<double>(n);
  out.cov = sum / (nd - 1.0);
  const Eigen::MatrixXd m1 = sum / nd;
  out.cov_se = ((sum_sq / nd - m1.cwiseAbs2()).cwiseMax(0.0) / nd).cwiseSqrt();
  out.mean_se = (out.cov.diagonal() / nd).cwiseSqrt();
  return out;
}

/// Largest |analytic - mc| / se over all entries; entries whose standard error
/// is zero must match to `abs_floor`.
inline double max_standardized_error(const Eigen::MatrixXd& analytic, const Eigen::MatrixXd& mc,
                                     const Eigen::MatrixXd& se, double abs_floor = 1e-12) {
  double worst = 0.0;
  for (Eigen::Index j = 0; j < analytic.cols(); ++j) {
    for (Eigen::Index i = 0; i < analytic.rows(); ++i) {
      const double diff = std::abs(analytic(i, j) - mc(i, j));
      if (se(i, j) > 0.0) {
        worst = std::max(worst, diff / se(i, j));
      } else if (diff > abs_floor) {
        worst = std::max(worst, 1e300);
      }
    }
  }
  return worst;
}

/// Empirical CDF sup-distance to a reference CDF.
template <typename Cdf>
double ks_statistic(std::vector<double> xs, Cdf cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max({d, std::abs(f - static_cast<double>(i) / n), std::abs(static_cast<double>(i + 1) / n - f)});
  }
  return d;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace mfdl::testing
