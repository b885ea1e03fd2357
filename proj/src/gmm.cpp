#include "mfdl/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mfdl/errors.hpp"
#include "mfdl/random.hpp"

namespace mfdl {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

/// n x k log(w_j N(x_i | m_j, v_j)).
MatrixXd weighted_log_densities(const DiagGmm& g, const MatrixXd& X) {
  const Index n = X.rows(), k = g.k();
  MatrixXd out(n, k);
  for (Index j = 0; j < k; ++j) {
    const double c = std::log(g.weights[j]) - 0.5 * (g.vars.row(j).array().log().sum() + kLog2Pi * X.cols());
    const Eigen::RowVectorXd inv = g.vars.row(j).cwiseInverse();
    out.col(j) = (c - 0.5 * ((X.rowwise() - g.means.row(j)).array().square().rowwise() * inv.array())
                               .rowwise()
                               .sum())
                     .matrix();
  }
  return out;
}

double log_sum_exp_rows(const MatrixXd& a, MatrixXd* normalized) {
  const VectorXd m = a.rowwise().maxCoeff();
  const VectorXd lse = m.array() + (a.colwise() - m).array().exp().rowwise().sum().log();
  if (normalized) *normalized = (a.colwise() - lse).array().exp();
  return lse.sum();
}

DiagGmm seed_components(const MatrixXd& X, int k, Rng& rng, const Eigen::RowVectorXd& floor,
                        const Eigen::RowVectorXd& total_var) {
  const Index n = X.rows();
  DiagGmm g;
  g.weights = VectorXd::Constant(k, 1.0 / k);
  g.means.resize(k, X.cols());
  g.vars = total_var.replicate(k, 1).cwiseMax(floor.replicate(k, 1));
  g.means.row(0) = X.row(static_cast<Index>(rng() % static_cast<std::uint64_t>(n)));
  VectorXd d2 = VectorXd::Constant(n, std::numeric_limits<double>::infinity());
  for (int j = 1; j < k; ++j) {
    for (Index i = 0; i < n; ++i) d2[i] = std::min(d2[i], (X.row(i) - g.means.row(j - 1)).squaredNorm());
    const double sum = d2.sum();
    Index pick = static_cast<Index>(rng() % static_cast<std::uint64_t>(n));
    if (sum > 0.0) {
      double u = NormalSampler::uniform(rng) * sum;
      for (Index i = 0; i < n; ++i) {
        u -= d2[i];
        if (u <= 0.0) {
          pick = i;
          break;
        }
      }
    }
    g.means.row(j) = X.row(pick);
  }
  return g;
}

}  // namespace

double DiagGmm::bic(Index n) const {
  return -2.0 * log_likelihood + static_cast<double>(num_params()) * std::log(static_cast<double>(n));
}

MatrixXd DiagGmm::responsibilities(const MatrixXd& X) const {
  MatrixXd r;
  log_sum_exp_rows(weighted_log_densities(*this, X), &r);
  return r;
}

std::vector<int> DiagGmm::assign(const MatrixXd& X) const {
  const MatrixXd lp = weighted_log_densities(*this, X);
  std::vector<int> out(static_cast<std::size_t>(X.rows()));
  for (Index i = 0; i < X.rows(); ++i) {
    Index j;
    lp.row(i).maxCoeff(&j);
    out[i] = static_cast<int>(j);
  }
  return out;
}

DiagGmm fit_diag_gmm(const MatrixXd& X, int k, std::uint64_t seed, const GmmOptions& options) {
  const Index n = X.rows();
  if (k < 1 || n < k) throw std::invalid_argument("need at least k >= 1 samples for a k-component mixture");
  if (!X.allFinite()) throw NumericError("non-finite samples passed to GMM fit");
  const Eigen::RowVectorXd mean = X.colwise().mean();
  const Eigen::RowVectorXd total_var = (X.rowwise() - mean).array().square().colwise().mean();
  const Eigen::RowVectorXd floor = (1e-6 * total_var.array()).max(1e-12);

  DiagGmm best;
  best.log_likelihood = -std::numeric_limits<double>::infinity();
  Rng rng = make_rng(seed, static_cast<std::uint64_t>(k));
  const int restarts = k == 1 ? 1 : std::max(1, options.restarts);
  for (int r = 0; r < restarts; ++r) {
    DiagGmm g = seed_components(X, k, rng, floor, total_var);
    double prev = -std::numeric_limits<double>::infinity();
    MatrixXd resp;
    for (int it = 0; it < options.max_iter; ++it) {
      g.log_likelihood = log_sum_exp_rows(weighted_log_densities(g, X), &resp);
      if (std::abs(g.log_likelihood - prev) <= options.tol * static_cast<double>(n)) {
        g.converged = true;
        break;
      }
      prev = g.log_likelihood;
      const VectorXd nk = resp.colwise().sum().transpose();
      for (Index j = 0; j < k; ++j) {
        if (nk[j] < 1e-10) {
          // Dead component: re-centre on a random sample.
          g.means.row(j) = X.row(static_cast<Index>(rng() % static_cast<std::uint64_t>(n)));
          g.vars.row(j) = total_var.cwiseMax(floor);
          g.weights[j] = 1.0 / static_cast<double>(n);
          continue;
        }
        g.weights[j] = nk[j] / static_cast<double>(n);
        g.means.row(j) = (resp.col(j).transpose() * X) / nk[j];
        const Eigen::RowVectorXd v =
            resp.col(j).transpose() * (X.rowwise() - g.means.row(j)).array().square().matrix();
        g.vars.row(j) = (v / nk[j]).cwiseMax(floor);
      }
      g.weights /= g.weights.sum();
    }
    if (!g.converged) g.log_likelihood = log_sum_exp_rows(weighted_log_densities(g, X), nullptr);
    if (g.log_likelihood > best.log_likelihood) best = g;
  }
  return best;
}

GmmSelection select_gmm(const MatrixXd& X, int k_max, std::uint64_t seed, const GmmOptions& options) {
  if (X.rows() < 1) throw std::invalid_argument("GMM selection needs samples");
  const Index n = X.rows(), d = X.cols();
  int k_cap = 1;
  if (n >= d + 2) k_cap = static_cast<int>(std::clamp<Index>(n / (d + 1), 1, std::max(1, k_max)));
  GmmSelection out;
  double best_bic = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= k_cap; ++k) {
    DiagGmm g = fit_diag_gmm(X, k, seed, options);
    const double b = g.bic(n);
    out.bic.push_back(b);
    if (b < best_bic) {
      best_bic = b;
      out.model = std::move(g);
    }
  }
  out.warning = !out.model.converged;
  return out;
}

}  // namespace mfdl
