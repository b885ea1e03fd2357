#pragma once

// A two-hidden-layer mean-field network whose output distribution at a fixed
// input matches a chosen scalar predictive distribution. The first layer turns
// its bias noise into a unit Gaussian z and copies the input; the second stage
// is a deterministic map fitted to the target's quantile function of z.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mfdl/linear_analysis.hpp"
#include "mfdl/mfvi.hpp"

namespace mfdl {

/// Scalar Gaussian mixture p(y | x). Component means may depend linearly on x
/// through `mean_slope` (k x D); leave it empty for a fixed target.
struct TargetPredictive {
  VectorXd weights;
  VectorXd means;
  VectorXd stds;
  MatrixXd mean_slope;

  /// 0.5 N(-2, 0.5^2) + 0.5 N(2, 0.5^2).
  static TargetPredictive bimodal();
  static TargetPredictive gaussian(double mean, double std);

  bool depends_on_x() const { return mean_slope.size() > 0; }
  int k() const { return static_cast<int>(weights.size()); }
  VectorXd means_at(const VectorXd& x) const;
  double cdf(double y, const VectorXd& x) const;
  /// 1 - cdf, accurate in the upper tail.
  double sf(double y, const VectorXd& x) const;
  double pdf(double y, const VectorXd& x) const;
  VectorXd sample(Index n, const VectorXd& x, std::uint64_t seed) const;
  void validate() const;
};

void to_json(nlohmann::json& j, const TargetPredictive& t);
void from_json(const nlohmann::json& j, TargetPredictive& t);

/// G^-1(h) = F^-1(Phi(phi^-1(h))): maps an activated unit-Gaussian draw to the
/// target quantile at the same probability level.
class QuantileMap {
 public:
  QuantileMap(TargetPredictive target, double alpha);

  /// Target quantile at level u, clipped to [1e-15, 1 - 1e-15].
  double quantile(double u, const VectorXd& x) const;
  /// Quantile at level Phi(z), solved on the lower or upper tail as needed.
  double from_z(double z, const VectorXd& x) const;
  /// Same, taking the activated value h = phi(z).
  double operator()(double h, const VectorXd& x) const;

  const TargetPredictive& target() const { return target_; }
  double alpha() const { return alpha_; }

 private:
  double solve(double level, bool upper, const VectorXd& x) const;

  TargetPredictive target_;
  double alpha_;
};

struct RvIntroducer {
  MeanFieldLayer weight;  ///< (1 + D) x D
  VectorXd bias_mean;
  VectorXd bias_std;
};

/// Weight means (0; I), bias means 0, every weight std sigma and bias stds
/// (1, sigma, ..., sigma). Hidden pre-activations are (z, x') with z close to
/// N(0, 1) and x'_i ~ N(x_i, sigma^2 (1 + |x|^2)).
RvIntroducer build_rv_introducer(int input_dim, double sigma);

struct MapperFitConfig {
  int width = 256;
  double weight_std = 1e-3;  ///< std assigned to every mapper parameter
  double intro_sigma = 1e-3;
  Index n_fit = 4000;        ///< z levels per anchor
  std::vector<VectorXd> anchors;  ///< inputs to fit at; defaults to the origin
  double mix_scale = 0.5;         ///< std of x' weights in mapper units, x-dependent targets only
  double rmse_warning = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Second and third layers: h2 = phi(W2 h1 + b2), y = W3 h2 + b3.
struct RvMapper {
  MatrixXd w2;
  VectorXd b2;
  MatrixXd w3;  ///< 1 x width
  double b3 = 0.0;
  double rmse = 0.0;
  bool warning = false;
};

/// Hidden units with kinks placed at Gaussian quantiles of z; the output layer
/// is fitted by least squares to the quantile map, with a ridge term equal to
/// the expected squared error from the mapper's weight noise.
RvMapper fit_rv_mapper(const QuantileMap& map, int input_dim, const MapperFitConfig& config);

/// Network [D, 1 + D, width, 1] with leaky activation `alpha`.
MeanFieldPosterior assemble_uat_network(const RvIntroducer& intro, const RvMapper& mapper, double alpha,
                                        double weight_std);

/// Two-sided KS statistic between a sorted sample and a CDF.
double ks_statistic(VectorXd sorted, const std::function<double(double)>& cdf);

/// KS distance between n network outputs at x and the target CDF at x.
double induced_vs_target_ks(const MeanFieldPosterior& q, const TargetPredictive& target, const VectorXd& x,
                            Index n, std::uint64_t seed);

struct UatDemoConfig {
  TargetPredictive target = TargetPredictive::bimodal();
  VectorXd x = VectorXd::Zero(1);
  double alpha = 0.1;
  MapperFitConfig mapper;
  Index n_eval = 10000;
  int k_max = 4;
  int histogram_bins = 200;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const UatDemoConfig& c);
void from_json(const nlohmann::json& j, UatDemoConfig& c);

struct UatDemoResult {
  MeanFieldPosterior network;
  RvMapper mapper;
  VectorXd outputs;  ///< n_eval draws at x
  double ks = 0.0;
  int gmm_k = 0;
  std::vector<double> gmm_bic;

  nlohmann::json summary() const;
};

UatDemoResult run_uat_demo(const UatDemoConfig& config);

/// <stem>_target.csv (y, density), <stem>_induced.csv (histogram) and
/// <stem>_ks.json, each with a sidecar.
void write_uat_outputs(const std::filesystem::path& stem, const UatDemoResult& result,
                       const UatDemoConfig& config);

}  // namespace mfdl
