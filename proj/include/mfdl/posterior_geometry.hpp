#pragma once

// HMC sampling of small network posteriors and the gap between full and
// diagonal Gaussian fits to one posterior mode.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mfdl/data_io.hpp"
#include "mfdl/mfvi.hpp"
#include "mfdl/network.hpp"

namespace mfdl {

/// Log density and its gradient (written into `grad`).
using LogDensityFn = std::function<double(const VectorXd& theta, VectorXd& grad)>;

/// log p(D | theta) * temperature - precision / 2 * |theta|^2, dropping
/// constants. An empty dataset leaves the prior term.
LossGradient bnn_log_posterior(const NetworkSpec& spec, const Dataset& data, double prior_precision,
                               const VectorXd& theta, LikelihoodKind likelihood = LikelihoodKind::categorical,
                               double noise_std = 0.05, double temperature = 1.0);

LogDensityFn make_bnn_log_posterior(const NetworkSpec& spec, const Dataset& data, double prior_precision,
                                    LikelihoodKind likelihood = LikelihoodKind::categorical,
                                    double noise_std = 0.05);

struct HMCConfig {
  double step_size = 0.01;  ///< initial step size
  int n_leapfrog = 100;     ///< leapfrog steps per transition
  int burn_in_steps = 10000;  ///< leapfrog steps spent adapting the step size
  double target_accept = 0.8;
  Index n_kept = 1000;
  std::uint64_t seed = 0;
  double prior_precision = 1.0;
  /// Each transition scales the step size by a uniform factor in
  /// [1 - step_jitter, 1 + step_jitter].
  double step_jitter = 0.1;
  VectorXd init;

  void validate() const;
};

void to_json(nlohmann::json& j, const HMCConfig& c);
void from_json(const nlohmann::json& j, HMCConfig& c);

struct PosteriorSamples {
  MatrixXd samples;  ///< n x P
  VectorXd log_post;
  double acceptance = 0.0;  ///< mean acceptance probability after burn-in
  double step_size = 0.0;   ///< adapted step size
  nlohmann::json layout;
};

/// Metropolis-adjusted leapfrog HMC. The step size is tuned by dual averaging
/// during burn-in and then frozen; one sample is kept per transition.
PosteriorSamples hmc_sample(const LogDensityFn& logpost, const HMCConfig& config);

struct DominantMode {
  MatrixXd samples;
  int k = 1;
  std::vector<int> assignment;
  bool warning = false;
};

/// Fits diagonal GMMs with 1..k_max components, keeps the best BIC and returns
/// the samples assigned to the heaviest component.
DominantMode gmm_dominant_mode(const MatrixXd& samples, int k_max, std::uint64_t seed);

struct GaussianFit {
  VectorXd mean;
  MatrixXd cov;  ///< full fits only
  VectorXd var;  ///< diagonal fits only
  bool diagonal = false;

  Index dim() const { return mean.size(); }
  /// Dense covariance in either case.
  MatrixXd covariance() const;
  void validate() const;
};

/// Sample mean and unbiased covariance, with 1e-8 * trace / dim added to the
/// diagonal.
GaussianFit fit_full(const MatrixXd& samples);
/// Same mean, variances from the diagonal of the full covariance.
GaussianFit fit_diag(const GaussianFit& full);

/// Closed-form KL(p || q) between two Gaussians, in nats.
double gaussian_kl(const GaussianFit& p, const GaussianFit& q);
/// KL(full || diag).
double kl_error(const GaussianFit& full, const GaussianFit& diag);

/// n draws from a fit, one per row.
MatrixXd sample_gaussian(const GaussianFit& fit, Index n, std::uint64_t seed);

/// Optimal transport cost between uniform empirical measures on the rows of U
/// and V under squared Euclidean cost (no square root).
double wasserstein_point_clouds(const MatrixXd& U, const MatrixXd& V);

/// Minimum-cost perfect matching on a square cost matrix; returns the column
/// assigned to each row.
std::vector<Index> solve_assignment(const MatrixXd& cost);

/// W(samples, draws from diag) - W(samples, draws from full), with as many
/// draws as samples.
double wasserstein_error(const MatrixXd& samples, const GaussianFit& full, const GaussianFit& diag,
                         std::uint64_t seed);

// --- depth sweep -------------------------------------------------------------

/// Hidden width whose non-bias parameter count n0 w + (depth-1) w^2 + w nout is
/// closest to budget (smaller width on ties).
int width_for_budget(int depth, int budget, int n_in, int n_out);

struct GapSweepConfig {
  std::vector<int> depths{1, 3, 5};
  int param_budget = 1000;
  ActivationSpec activation = ActivationSpec::relu();
  int restarts = 5;
  Index n_train = 500;
  Index n_test = 500;
  double data_noise = 0.1;
  TrainConfig mfvi;
  double mfvi_prior_std = 1.0;
  HMCConfig hmc;
  int k_max = 4;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const GapSweepConfig& c);
void from_json(const nlohmann::json& j, GapSweepConfig& c);

struct GapRecord {
  int depth = 0;
  int restart = 0;
  int width = 0;
  Index n_params = 0;
  double e_w = 0.0;
  double e_kl = 0.0;
  double test_acc = 0.0;
  double acceptance = 0.0;
  int modes = 0;
  std::string error;  ///< empty when the cell succeeded
};

struct GapReport {
  std::vector<GapRecord> records;

  /// Mean and standard error of each metric per depth.
  nlohmann::json summary() const;
  void write_csv(const std::filesystem::path& path) const;
  /// Values of one metric ("e_w", "e_kl", "test_acc", "acceptance") at a depth,
  /// successful cells only.
  std::vector<double> metric(int depth, const std::string& name) const;
};

/// Runs every (depth, restart) cell. Each depth trains one MFVI model that
/// initializes all its chains; cells use seeds derived from the master seed,
/// so the report does not depend on `jobs`. Errors in a cell are recorded and
/// the sweep continues.
GapReport depth_gap_sweep(const GapSweepConfig& config, int jobs = 1);

}  // namespace mfdl
