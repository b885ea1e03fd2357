#pragma once

// Fully connected networks with piecewise-linear activations: architecture
// description, flat parameter layout, forward evaluation that records which
// linear branch each hidden unit took, and reverse-mode gradients.

#include <Eigen/Dense>
#include <functional>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace mfdl {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class ActivationKind { linear, relu, leaky_relu };

struct ActivationSpec {
  ActivationKind kind = ActivationKind::linear;
  /// Slope of the negative branch; only meaningful for leaky_relu.
  double alpha = 0.0;

  static ActivationSpec linear() { return {}; }
  static ActivationSpec relu() { return {ActivationKind::relu, 0.0}; }
  static ActivationSpec leaky_relu(double a) { return {ActivationKind::leaky_relu, a}; }

  /// Multiplier applied on the non-positive branch: 1 (linear), 0 (relu), alpha.
  double negative_slope() const;
  /// Branch multiplier for a pre-activation. Zero takes the negative branch.
  double multiplier(double pre) const { return pre > 0.0 ? 1.0 : negative_slope(); }
  double apply(double pre) const { return multiplier(pre) * pre; }
  void validate() const;
};

struct NetworkSpec {
  std::vector<int> widths;  ///< [n0, n1, ..., nL]
  ActivationSpec activation;
  bool has_bias = true;

  int num_layers() const { return static_cast<int>(widths.size()) - 1; }
  int input_dim() const { return widths.front(); }
  int output_dim() const { return widths.back(); }
  void validate() const;
};

void to_json(nlohmann::json& j, const NetworkSpec& spec);
void from_json(const nlohmann::json& j, NetworkSpec& spec);
void to_json(nlohmann::json& j, const ActivationSpec& act);

/// Where each layer's weight and bias live inside a flat parameter vector.
/// Layer l (0-based) maps widths[l] -> widths[l+1]; its weight block is stored
/// column-major, followed by its bias block when the spec has biases.
class ParamLayout {
 public:
  struct Block {
    Eigen::Index weight_offset;
    Eigen::Index rows;
    Eigen::Index cols;
    Eigen::Index bias_offset;  ///< -1 without bias
  };

  explicit ParamLayout(const NetworkSpec& spec);

  Eigen::Index size() const { return size_; }
  int num_layers() const { return static_cast<int>(blocks_.size()); }
  const Block& block(int layer) const { return blocks_.at(layer); }
  bool has_bias() const { return has_bias_; }

  Eigen::Map<const MatrixXd> weight(const VectorXd& theta, int layer) const;
  Eigen::Map<MatrixXd> weight(VectorXd& theta, int layer) const;
  /// Empty map when the spec has no biases.
  Eigen::Map<const VectorXd> bias(const VectorXd& theta, int layer) const;
  Eigen::Map<VectorXd> bias(VectorXd& theta, int layer) const;

  /// True for coordinates that hold weights (as opposed to biases).
  std::vector<bool> weight_mask() const;

  nlohmann::json describe() const;

 private:
  std::vector<Block> blocks_;
  Eigen::Index size_ = 0;
  bool has_bias_ = true;
};

struct LayerParams {
  MatrixXd weight;
  VectorXd bias;  ///< size 0 without bias
};

std::vector<LayerParams> unflatten(const ParamLayout& layout, const VectorXd& theta);
VectorXd flatten(const ParamLayout& layout, std::span<const LayerParams> layers);

/// Branch multipliers per hidden layer: entry is 1 on the positive branch,
/// the activation's negative slope otherwise.
struct ActivationPattern {
  std::vector<VectorXd> multipliers;

  bool operator==(const ActivationPattern& other) const;
};

struct ForwardResult {
  VectorXd output;
  ActivationPattern pattern;
};

/// Single-example evaluation. Accumulates in double-double and rounds the
/// output once, so it agrees with other extended-precision evaluations of the
/// same affine piece to a few ulps.
ForwardResult forward(const NetworkSpec& spec, const VectorXd& theta, const VectorXd& x);

/// Evaluates the network with every hidden unit's branch fixed by `pattern`
/// instead of recomputed. For a frozen pattern this map is affine in x.
VectorXd forward_frozen(const NetworkSpec& spec, const VectorXd& theta,
                        const ActivationPattern& pattern, const VectorXd& x);

/// Intermediate values kept by forward_batch for the backward pass.
struct ForwardCache {
  std::vector<MatrixXd> inputs;       ///< input to each layer (n_l x batch)
  std::vector<MatrixXd> multipliers;  ///< branch multipliers of each hidden layer
};

/// Column-per-example forward pass. X is n0 x batch; returns nL x batch.
MatrixXd forward_batch(const NetworkSpec& spec, const VectorXd& theta, const MatrixXd& X,
                       ForwardCache* cache = nullptr);

/// Backpropagates d(loss)/d(outputs) (nL x batch) into a gradient over theta.
VectorXd backward_batch(const NetworkSpec& spec, const VectorXd& theta, const ForwardCache& cache,
                        const MatrixXd& d_outputs);

/// Scalar loss of the network outputs over a batch. Must write d(loss)/d(outputs)
/// into `d_outputs` (resized by the callee).
using OutputLoss = std::function<double(const MatrixXd& outputs, MatrixXd& d_outputs)>;

struct LossGradient {
  double value = 0.0;
  VectorXd grad;
};

/// Loss and its gradient with respect to theta. Throws NumericError if the
/// loss or any gradient coordinate is non-finite.
LossGradient grad_logdensity(const NetworkSpec& spec, const VectorXd& theta, const MatrixXd& X,
                             const OutputLoss& loss);

/// Summed softmax cross-entropy against integer class labels.
OutputLoss softmax_cross_entropy(std::vector<int> labels);
/// Summed Gaussian negative log-likelihood with fixed noise scale, including
/// the normalizing constant. Targets are nL x batch.
OutputLoss gaussian_nll(MatrixXd targets, double noise_std);
OutputLoss constant_loss(double value);

/// Row-wise log-softmax of a logits column.
VectorXd log_softmax(const VectorXd& logits);

}  // namespace mfdl
