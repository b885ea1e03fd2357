#pragma once

// Mean-field Gaussian variational inference over network weights, trained by
// minimizing the negative ELBO with reparameterized Monte-Carlo gradients.

#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "mfdl/data_io.hpp"
#include "mfdl/linear_analysis.hpp"
#include "mfdl/network.hpp"
#include "mfdl/random.hpp"

namespace mfdl {

/// log(1 + e^x), stable for large |x|.
double softplus(double x);
/// Inverse of softplus for y > 0.
double inverse_softplus(double y);

/// Zero-mean isotropic Gaussian prior; one std per weight layer (biases of a
/// layer share its std).
struct PriorSpec {
  std::vector<double> layer_std;

  static PriorSpec isotropic(int num_layers, double std);
  void validate(int num_layers) const;
};

/// Per-parameter Gaussian q(theta) = N(mu, softplus(rho)^2), in the flat
/// ParamLayout order of `spec`.
struct MeanFieldPosterior {
  NetworkSpec spec;
  VectorXd mu;
  VectorXd rho;

  /// He-normal means for weights, zero bias means, every std = init_std.
  static MeanFieldPosterior initialize(const NetworkSpec& spec, double init_std, std::uint64_t seed);
  /// Fixed means with a uniform std.
  static MeanFieldPosterior from_means(const NetworkSpec& spec, VectorXd means, double std);

  VectorXd stddev() const;
  VectorXd sample(Rng& rng, NormalSampler& normal) const;

  /// Weight blocks as mean-field layers, bottom layer first (biases dropped).
  std::vector<MeanFieldLayer> weight_layers() const;
  /// Each layer augmented with its bias column and a constant unit row, so the
  /// product of all layers acts on (x, 1). The constant entries get `tiny` std.
  std::vector<MeanFieldLayer> augmented_layers(double tiny = 1e-12) const;

  void validate() const;
};

void to_json(nlohmann::json& j, const MeanFieldPosterior& q);
void from_json(const nlohmann::json& j, MeanFieldPosterior& q);

enum class LikelihoodKind { categorical, gaussian };

struct TrainConfig {
  double learning_rate = 1e-3;
  Index batch_size = 64;
  int epochs = 10;
  int n_train_samples = 16;
  int n_test_samples = 16;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  LikelihoodKind likelihood = LikelihoodKind::categorical;
  double noise_std = 0.05;  ///< Gaussian likelihood only
  bool amsgrad = true;
  double init_std = 0.04858735157374206;  ///< log(1 + e^-3)

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct ElboValue {
  double neg_elbo = 0.0;  ///< temperature * scaled KL + nll
  double kl = 0.0;        ///< unscaled KL(q || prior)
  double nll = 0.0;       ///< MC estimate of the batch negative log-likelihood
  VectorXd grad_mu;
  VectorXd grad_rho;
};

/// Closed-form KL(q || prior) summed over all parameters.
double kl_divergence(const MeanFieldPosterior& q, const PriorSpec& prior);

/// Negative ELBO on one batch:
///   temperature * (batch / dataset_size) * KL(q || prior) - E_q[log p(batch | theta)]
/// with the expectation estimated from `n_samples` reparameterized draws. The
/// draws are a deterministic function of `seed`.
ElboValue elbo(const MeanFieldPosterior& q, const PriorSpec& prior, const Dataset& batch, int n_samples,
               Index dataset_size, double temperature, std::uint64_t seed, LikelihoodKind likelihood,
               double noise_std = 0.05);

/// Adam with optional AMSGrad max-of-second-moments.
class AdamOptimizer {
 public:
  AdamOptimizer(Index size, double learning_rate, bool amsgrad, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);
  void step(VectorXd& params, const VectorXd& grad);

 private:
  double lr_, beta1_, beta2_, eps_;
  bool amsgrad_;
  VectorXd m_, v_, v_max_;
  long t_ = 0;
};

struct EpochStats {
  int epoch;
  double neg_elbo;
  double kl_term;  ///< temperature-scaled KL summed over the epoch's batches
  double nll_term;
};

struct TrainResult {
  MeanFieldPosterior posterior;
  std::vector<EpochStats> history;
};

/// Trains from `initial` (or a fresh He initialization when omitted).
TrainResult train(const NetworkSpec& spec, const Dataset& data, const PriorSpec& prior, const TrainConfig& config,
                  const MeanFieldPosterior* initial = nullptr);

/// n forward passes at x with independent weight draws; row s is sample s.
MatrixXd predict(const MeanFieldPosterior& q, const VectorXd& x, int n_samples, std::uint64_t seed);

/// Same for a batch: element s is the nL x m output of draw s on X (d x m).
std::vector<MatrixXd> predict_batch(const MeanFieldPosterior& q, const MatrixXd& X, int n_samples,
                                    std::uint64_t seed);

/// Accuracy of the sample-averaged softmax prediction.
double predictive_accuracy(const MeanFieldPosterior& q, const Dataset& test, int n_samples, std::uint64_t seed);

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochStats>& history);

}  // namespace mfdl
