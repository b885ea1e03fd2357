#include "mfdl/network.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "mfdl/errors.hpp"
#include "dd.hpp"

namespace mfdl {

double ActivationSpec::negative_slope() const {
  switch (kind) {
    case ActivationKind::linear:
      return 1.0;
    case ActivationKind::relu:
      return 0.0;
    case ActivationKind::leaky_relu:
      return alpha;
  }
  return 1.0;
}

void ActivationSpec::validate() const {
  if (kind == ActivationKind::leaky_relu && !(alpha > 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("leaky_relu alpha must lie in (0, 1], got " + std::to_string(alpha));
  }
}

void NetworkSpec::validate() const {
  if (widths.size() < 2) throw std::invalid_argument("network needs at least two widths");
  for (int w : widths) {
    if (w < 1) throw std::invalid_argument("layer widths must be positive");
  }
  activation.validate();
}

namespace {

const char* activation_name(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::linear:
      return "linear";
    case ActivationKind::relu:
      return "relu";
    case ActivationKind::leaky_relu:
      return "leaky_relu";
  }
  return "linear";
}

ActivationKind parse_activation(const std::string& name) {
  if (name == "linear") return ActivationKind::linear;
  if (name == "relu") return ActivationKind::relu;
  if (name == "leaky_relu") return ActivationKind::leaky_relu;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

}  // namespace

void to_json(nlohmann::json& j, const ActivationSpec& act) {
  j = nlohmann::json{{"activation", activation_name(act.kind)}};
  if (act.kind == ActivationKind::leaky_relu) j["alpha"] = act.alpha;
}

void to_json(nlohmann::json& j, const NetworkSpec& spec) {
  j = nlohmann::json{{"widths", spec.widths},
                     {"activation", activation_name(spec.activation.kind)},
                     {"bias", spec.has_bias}};
  if (spec.activation.kind == ActivationKind::leaky_relu) j["alpha"] = spec.activation.alpha;
}

void from_json(const nlohmann::json& j, NetworkSpec& spec) {
  spec.widths = j.at("widths").get<std::vector<int>>();
  spec.activation.kind = parse_activation(j.value("activation", std::string("linear")));
  spec.activation.alpha = j.value("alpha", spec.activation.kind == ActivationKind::leaky_relu ? 0.1 : 0.0);
  spec.has_bias = j.value("bias", true);
  spec.validate();
}

ParamLayout::ParamLayout(const NetworkSpec& spec) : has_bias_(spec.has_bias) {
  spec.validate();
  Eigen::Index offset = 0;
  for (int l = 0; l < spec.num_layers(); ++l) {
    Block b;
    b.rows = spec.widths[l + 1];
    b.cols = spec.widths[l];
    b.weight_offset = offset;
    offset += b.rows * b.cols;
    b.bias_offset = -1;
    if (spec.has_bias) {
      b.bias_offset = offset;
      offset += b.rows;
    }
    blocks_.push_back(b);
  }
  size_ = offset;
}

Eigen::Map<const MatrixXd> ParamLayout::weight(const VectorXd& theta, int layer) const {
  const Block& b = blocks_.at(layer);
  return {theta.data() + b.weight_offset, b.rows, b.cols};
}

Eigen::Map<MatrixXd> ParamLayout::weight(VectorXd& theta, int layer) const {
  const Block& b = blocks_.at(layer);
  return {theta.data() + b.weight_offset, b.rows, b.cols};
}

Eigen::Map<const VectorXd> ParamLayout::bias(const VectorXd& theta, int layer) const {
  const Block& b = blocks_.at(layer);
  if (b.bias_offset < 0) return {theta.data(), 0};
  return {theta.data() + b.bias_offset, b.rows};
}

Eigen::Map<VectorXd> ParamLayout::bias(VectorXd& theta, int layer) const {
  const Block& b = blocks_.at(layer);
  if (b.bias_offset < 0) return {theta.data(), 0};
  return {theta.data() + b.bias_offset, b.rows};
}

std::vector<bool> ParamLayout::weight_mask() const {
  std::vector<bool> mask(static_cast<std::size_t>(size_), false);
  for (const Block& b : blocks_) {
    for (Eigen::Index i = 0; i < b.rows * b.cols; ++i) mask[b.weight_offset + i] = true;
  }
  return mask;
}

nlohmann::json ParamLayout::describe() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const Block& b : blocks_) {
    layers.push_back({{"weight_offset", b.weight_offset},
                      {"rows", b.rows},
                      {"cols", b.cols},
                      {"bias_offset", b.bias_offset}});
  }
  return {{"size", size_}, {"storage", "column-major"}, {"layers", layers}};
}

std::vector<LayerParams> unflatten(const ParamLayout& layout, const VectorXd& theta) {
  if (theta.size() != layout.size()) throw ShapeError("parameter vector does not match layout");
  std::vector<LayerParams> out;
  out.reserve(layout.num_layers());
  for (int l = 0; l < layout.num_layers(); ++l) {
    out.push_back({layout.weight(theta, l), layout.bias(theta, l)});
  }
  return out;
}

VectorXd flatten(const ParamLayout& layout, std::span<const LayerParams> layers) {
  if (static_cast<int>(layers.size()) != layout.num_layers()) {
    throw ShapeError("layer count does not match layout");
  }
  VectorXd theta(layout.size());
  for (int l = 0; l < layout.num_layers(); ++l) {
    const auto& b = layout.block(l);
    const LayerParams& p = layers[l];
    if (p.weight.rows() != b.rows || p.weight.cols() != b.cols) {
      throw ShapeError("weight block " + std::to_string(l) + " has the wrong shape");
    }
    if ((b.bias_offset >= 0 ? b.rows : 0) != p.bias.size()) {
      throw ShapeError("bias block " + std::to_string(l) + " has the wrong size");
    }
    layout.weight(theta, l) = p.weight;
    if (b.bias_offset >= 0) layout.bias(theta, l) = p.bias;
  }
  return theta;
}

bool ActivationPattern::operator==(const ActivationPattern& other) const {
  if (multipliers.size() != other.multipliers.size()) return false;
  for (std::size_t i = 0; i < multipliers.size(); ++i) {
    if (multipliers[i].size() != other.multipliers[i].size()) return false;
    if (multipliers[i] != other.multipliers[i]) return false;
  }
  return true;
}

namespace {

void check_theta(const ParamLayout& layout, const VectorXd& theta) {
  if (theta.size() != layout.size()) {
    throw ShapeError("parameter vector has " + std::to_string(theta.size()) + " entries, layout needs " +
                     std::to_string(layout.size()));
  }
}

}  // namespace

namespace {

// One layer W h + b with double-double accumulation.
std::vector<detail::DD> dd_affine(const Eigen::Map<const MatrixXd>& W, const Eigen::Map<const VectorXd>& b,
                                  const std::vector<detail::DD>& h) {
  std::vector<detail::DD> pre(static_cast<std::size_t>(W.rows()));
  for (Eigen::Index i = 0; i < W.rows(); ++i) {
    detail::DD acc{b.size() ? b[i] : 0.0, 0.0};
    for (Eigen::Index j = 0; j < W.cols(); ++j) acc = acc + W(i, j) * h[j];
    pre[i] = acc;
  }
  return pre;
}

VectorXd dd_round(const std::vector<detail::DD>& v) {
  VectorXd out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i].value();
  return out;
}

std::vector<detail::DD> dd_input(const VectorXd& x) {
  std::vector<detail::DD> h(static_cast<std::size_t>(x.size()));
  for (Eigen::Index i = 0; i < x.size(); ++i) h[i] = {x[i], 0.0};
  return h;
}

}  // namespace

ForwardResult forward(const NetworkSpec& spec, const VectorXd& theta, const VectorXd& x) {
  const ParamLayout layout(spec);
  check_theta(layout, theta);
  if (x.size() != spec.input_dim()) {
    throw ShapeError("input has dimension " + std::to_string(x.size()) + ", network expects " +
                     std::to_string(spec.input_dim()));
  }
  ForwardResult result;
  std::vector<detail::DD> h = dd_input(x);
  const int L = spec.num_layers();
  for (int l = 0; l < L; ++l) {
    std::vector<detail::DD> pre = dd_affine(layout.weight(theta, l), layout.bias(theta, l), h);
    if (l + 1 == L) {
      h = std::move(pre);
      break;
    }
    VectorXd mult(static_cast<Eigen::Index>(pre.size()));
    for (std::size_t i = 0; i < pre.size(); ++i) {
      mult[i] = spec.activation.multiplier(pre[i].hi);
      pre[i] = pre[i] * mult[i];
    }
    h = std::move(pre);
    result.pattern.multipliers.push_back(std::move(mult));
  }
  result.output = dd_round(h);
  return result;
}

VectorXd forward_frozen(const NetworkSpec& spec, const VectorXd& theta, const ActivationPattern& pattern,
                        const VectorXd& x) {
  const ParamLayout layout(spec);
  check_theta(layout, theta);
  const int L = spec.num_layers();
  if (static_cast<int>(pattern.multipliers.size()) != L - 1) {
    throw ShapeError("pattern has the wrong number of hidden layers");
  }
  if (x.size() != spec.input_dim()) throw ShapeError("input dimension mismatch");
  std::vector<detail::DD> h = dd_input(x);
  for (int l = 0; l < L; ++l) {
    std::vector<detail::DD> pre = dd_affine(layout.weight(theta, l), layout.bias(theta, l), h);
    if (l + 1 < L) {
      if (pattern.multipliers[l].size() != static_cast<Eigen::Index>(pre.size())) {
        throw ShapeError("pattern width mismatch");
      }
      for (std::size_t i = 0; i < pre.size(); ++i) pre[i] = pre[i] * pattern.multipliers[l][i];
    }
    h = std::move(pre);
  }
  return dd_round(h);
}

MatrixXd forward_batch(const NetworkSpec& spec, const VectorXd& theta, const MatrixXd& X,
                       ForwardCache* cache) {
  const ParamLayout layout(spec);
  check_theta(layout, theta);
  if (X.rows() != spec.input_dim()) throw ShapeError("batch input dimension mismatch");
  const int L = spec.num_layers();
  if (cache) {
    cache->inputs.assign(L, MatrixXd());
    cache->multipliers.assign(L - 1, MatrixXd());
  }
  const double slope = spec.activation.negative_slope();
  MatrixXd h = X;
  for (int l = 0; l < L; ++l) {
    MatrixXd pre(spec.widths[l + 1], X.cols());
    pre.noalias() = layout.weight(theta, l) * h;
    const auto b = layout.bias(theta, l);
    if (cache) cache->inputs[l] = std::move(h);
    if (l + 1 == L) {
      if (spec.has_bias) pre.colwise() += b;
      return pre;
    }
    if (spec.has_bias) pre.colwise() += b;
    MatrixXd mult = (pre.array() > 0.0).select(1.0, Eigen::ArrayXXd::Constant(pre.rows(), pre.cols(), slope)).matrix();
    pre.array() *= mult.array();
    h = std::move(pre);
    if (cache) cache->multipliers[l] = std::move(mult);
  }
  return h;
}

VectorXd backward_batch(const NetworkSpec& spec, const VectorXd& theta, const ForwardCache& cache,
                        const MatrixXd& d_outputs) {
  const ParamLayout layout(spec);
  check_theta(layout, theta);
  const int L = spec.num_layers();
  if (static_cast<int>(cache.inputs.size()) != L) throw ShapeError("forward cache does not match network");
  VectorXd grad = VectorXd::Zero(layout.size());
  MatrixXd delta = d_outputs;  // d loss / d pre-activation of layer l
  for (int l = L - 1; l >= 0; --l) {
    layout.weight(grad, l).noalias() = delta * cache.inputs[l].transpose();
    if (spec.has_bias) layout.bias(grad, l) = delta.rowwise().sum();
    if (l == 0) break;
    delta = (layout.weight(theta, l).transpose() * delta).cwiseProduct(cache.multipliers[l - 1]);
  }
  return grad;
}

LossGradient grad_logdensity(const NetworkSpec& spec, const VectorXd& theta, const MatrixXd& X,
                             const OutputLoss& loss) {
  // Forward and backward run on column blocks so wide layers stay in cache;
  // the loss still sees the whole batch.
  constexpr Eigen::Index kBlock = 32;
  const Eigen::Index n = X.cols();
  const Eigen::Index blocks = std::max<Eigen::Index>(1, (n + kBlock - 1) / kBlock);
  std::vector<ForwardCache> caches(static_cast<std::size_t>(blocks));
  MatrixXd Y(spec.output_dim(), n);
  for (Eigen::Index b = 0; b < blocks; ++b) {
    const Eigen::Index start = b * kBlock, len = std::min(kBlock, n - start);
    Y.middleCols(start, len) = forward_batch(spec, theta, X.middleCols(start, len), &caches[b]);
  }
  MatrixXd dY;
  LossGradient out;
  out.value = loss(Y, dY);
  if (dY.rows() != Y.rows() || dY.cols() != Y.cols()) throw ShapeError("loss returned a gradient of the wrong shape");
  out.grad = backward_batch(spec, theta, caches[0], dY.middleCols(0, std::min(kBlock, n)));
  for (Eigen::Index b = 1; b < blocks; ++b) {
    const Eigen::Index start = b * kBlock, len = std::min(kBlock, n - start);
    out.grad += backward_batch(spec, theta, caches[b], dY.middleCols(start, len));
  }
  if (!std::isfinite(out.value) || !out.grad.allFinite()) {
    std::ptrdiff_t bad = -1;
    for (Eigen::Index i = 0; i < theta.size() && bad < 0; ++i) {
      if (!std::isfinite(theta[i])) bad = i;
    }
    for (Eigen::Index i = 0; i < out.grad.size() && bad < 0; ++i) {
      if (!std::isfinite(out.grad[i])) bad = i;
    }
    throw NumericError("non-finite loss or gradient", bad);
  }
  return out;
}

VectorXd log_softmax(const VectorXd& logits) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return logits.array() - lse;
}

OutputLoss softmax_cross_entropy(std::vector<int> labels) {
  return [labels = std::move(labels)](const MatrixXd& Y, MatrixXd& dY) {
    if (static_cast<Eigen::Index>(labels.size()) != Y.cols()) throw ShapeError("label count mismatch");
    dY.resize(Y.rows(), Y.cols());
    double total = 0.0;
    for (Eigen::Index n = 0; n < Y.cols(); ++n) {
      const int c = labels[n];
      if (c < 0 || c >= Y.rows()) throw std::out_of_range("class label out of range");
      const double m = Y.col(n).maxCoeff();
      double z = 0.0;
      for (Eigen::Index k = 0; k < Y.rows(); ++k) {
        dY(k, n) = std::exp(Y(k, n) - m);
        z += dY(k, n);
      }
      total -= Y(c, n) - m - std::log(z);
      dY.col(n) /= z;
      dY(c, n) -= 1.0;
    }
    return total;
  };
}

OutputLoss gaussian_nll(MatrixXd targets, double noise_std) {
  if (!(noise_std > 0.0)) throw std::invalid_argument("noise_std must be positive");
  return [targets = std::move(targets), noise_std](const MatrixXd& Y, MatrixXd& dY) {
    if (Y.rows() != targets.rows() || Y.cols() != targets.cols()) throw ShapeError("target shape mismatch");
    const double var = noise_std * noise_std;
    const MatrixXd r = Y - targets;
    dY = r / var;
    const double log_norm = 0.5 * std::log(2.0 * M_PI * var);
    return 0.5 * r.squaredNorm() / var + log_norm * static_cast<double>(r.size());
  };
}

OutputLoss constant_loss(double value) {
  return [value](const MatrixXd& Y, MatrixXd& dY) {
    dY = MatrixXd::Zero(Y.rows(), Y.cols());
    return value;
  };
}

}  // namespace mfdl
