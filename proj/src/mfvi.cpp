#include "mfdl/mfvi.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "mfdl/errors.hpp"

namespace mfdl {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double inverse_softplus(double y) {
  if (!(y > 0.0)) throw std::invalid_argument("inverse_softplus needs y > 0");
  // log(e^y - 1) = y + log(1 - e^-y)
  return y + std::log(-std::expm1(-y));
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

VectorXd per_parameter_prior_std(const NetworkSpec& spec, const PriorSpec& prior) {
  const ParamLayout layout(spec);
  prior.validate(spec.num_layers());
  VectorXd out(layout.size());
  for (int l = 0; l < layout.num_layers(); ++l) {
    const auto& b = layout.block(l);
    out.segment(b.weight_offset, b.rows * b.cols).setConstant(prior.layer_std[l]);
    if (b.bias_offset >= 0) out.segment(b.bias_offset, b.rows).setConstant(prior.layer_std[l]);
  }
  return out;
}

}  // namespace

PriorSpec PriorSpec::isotropic(int num_layers, double std) {
  return {std::vector<double>(static_cast<std::size_t>(num_layers), std)};
}

void PriorSpec::validate(int num_layers) const {
  if (static_cast<int>(layer_std.size()) != num_layers) throw ShapeError("prior has the wrong number of layers");
  for (double s : layer_std) {
    if (!(s > 0.0)) throw std::invalid_argument("prior std must be positive");
  }
}

MeanFieldPosterior MeanFieldPosterior::initialize(const NetworkSpec& spec, double init_std, std::uint64_t seed) {
  const ParamLayout layout(spec);
  MeanFieldPosterior q{spec, VectorXd::Zero(layout.size()), VectorXd::Constant(layout.size(), inverse_softplus(init_std))};
  Rng rng = make_rng(seed, 0x1417);
  NormalSampler normal;
  for (int l = 0; l < layout.num_layers(); ++l) {
    const auto& b = layout.block(l);
    const double scale = std::sqrt(2.0 / static_cast<double>(b.cols));
    for (Index k = 0; k < b.rows * b.cols; ++k) q.mu[b.weight_offset + k] = scale * normal(rng);
  }
  return q;
}

MeanFieldPosterior MeanFieldPosterior::from_means(const NetworkSpec& spec, VectorXd means, double std) {
  const ParamLayout layout(spec);
  if (means.size() != layout.size()) throw ShapeError("means do not match the network layout");
  MeanFieldPosterior q{spec, std::move(means), VectorXd::Constant(layout.size(), inverse_softplus(std))};
  return q;
}

VectorXd MeanFieldPosterior::stddev() const { return rho.unaryExpr([](double r) { return softplus(r); }); }

VectorXd MeanFieldPosterior::sample(Rng& rng, NormalSampler& normal) const {
  VectorXd theta(mu.size());
  for (Index i = 0; i < mu.size(); ++i) theta[i] = mu[i] + softplus(rho[i]) * normal(rng);
  return theta;
}

void MeanFieldPosterior::validate() const {
  const ParamLayout layout(spec);
  if (mu.size() != layout.size() || rho.size() != layout.size()) {
    throw ShapeError("posterior parameters do not match the network layout");
  }
}

std::vector<MeanFieldLayer> MeanFieldPosterior::weight_layers() const {
  validate();
  const ParamLayout layout(spec);
  const VectorXd sd = stddev();
  std::vector<MeanFieldLayer> out;
  for (int l = 0; l < layout.num_layers(); ++l) {
    out.push_back({layout.weight(mu, l), layout.weight(sd, l)});
  }
  return out;
}

std::vector<MeanFieldLayer> MeanFieldPosterior::augmented_layers(double tiny) const {
  validate();
  const ParamLayout layout(spec);
  const VectorXd sd = stddev();
  std::vector<MeanFieldLayer> out;
  for (int l = 0; l < layout.num_layers(); ++l) {
    const auto& b = layout.block(l);
    MeanFieldLayer a{MatrixXd::Zero(b.rows + 1, b.cols + 1), MatrixXd::Constant(b.rows + 1, b.cols + 1, tiny)};
    a.mu.topLeftCorner(b.rows, b.cols) = layout.weight(mu, l);
    a.sigma.topLeftCorner(b.rows, b.cols) = layout.weight(sd, l);
    if (b.bias_offset >= 0) {
      a.mu.col(b.cols).head(b.rows) = layout.bias(mu, l);
      a.sigma.col(b.cols).head(b.rows) = layout.bias(sd, l);
    }
    a.mu(b.rows, b.cols) = 1.0;
    out.push_back(std::move(a));
  }
  return out;
}

void to_json(nlohmann::json& j, const MeanFieldPosterior& q) {
  j = nlohmann::json{{"spec", q.spec},
                     {"mu", std::vector<double>(q.mu.data(), q.mu.data() + q.mu.size())},
                     {"rho", std::vector<double>(q.rho.data(), q.rho.data() + q.rho.size())}};
}

void from_json(const nlohmann::json& j, MeanFieldPosterior& q) {
  q.spec = j.at("spec").get<NetworkSpec>();
  const auto mu = j.at("mu").get<std::vector<double>>();
  const auto rho = j.at("rho").get<std::vector<double>>();
  q.mu = Eigen::Map<const VectorXd>(mu.data(), static_cast<Index>(mu.size()));
  q.rho = Eigen::Map<const VectorXd>(rho.data(), static_cast<Index>(rho.size()));
  q.validate();
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || batch_size < 1 || epochs < 1 || n_train_samples < 1 || n_test_samples < 1 ||
      temperature < 0.0 || !(noise_std > 0.0) || !(init_std > 0.0)) {
    throw std::invalid_argument("invalid training configuration");
  }
}

namespace {

const char* likelihood_name(LikelihoodKind k) { return k == LikelihoodKind::categorical ? "categorical" : "gaussian"; }

}  // namespace

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate},     {"batch_size", c.batch_size},
                     {"epochs", c.epochs},                   {"n_train_samples", c.n_train_samples},
                     {"n_test_samples", c.n_test_samples},   {"temperature", c.temperature},
                     {"seed", c.seed},                       {"likelihood", likelihood_name(c.likelihood)},
                     {"noise_std", c.noise_std},             {"amsgrad", c.amsgrad},
                     {"init_std", c.init_std}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs = j.value("epochs", d.epochs);
  c.n_train_samples = j.value("n_train_samples", d.n_train_samples);
  c.n_test_samples = j.value("n_test_samples", d.n_test_samples);
  c.temperature = j.value("temperature", d.temperature);
  c.seed = j.value("seed", d.seed);
  const std::string lk = j.value("likelihood", std::string("categorical"));
  if (lk != "categorical" && lk != "gaussian") throw std::invalid_argument("unknown likelihood '" + lk + "'");
  c.likelihood = lk == "categorical" ? LikelihoodKind::categorical : LikelihoodKind::gaussian;
  c.noise_std = j.value("noise_std", d.noise_std);
  c.amsgrad = j.value("amsgrad", d.amsgrad);
  c.init_std = j.value("init_std", d.init_std);
  c.validate();
}

double kl_divergence(const MeanFieldPosterior& q, const PriorSpec& prior) {
  q.validate();
  const VectorXd p = per_parameter_prior_std(q.spec, prior);
  double kl = 0.0;
  for (Index i = 0; i < q.mu.size(); ++i) {
    const double s = softplus(q.rho[i]);
    kl += std::log(p[i] / s) + (s * s + q.mu[i] * q.mu[i]) / (2.0 * p[i] * p[i]) - 0.5;
  }
  return kl;
}

namespace {

OutputLoss batch_loss(const Dataset& batch, LikelihoodKind likelihood, double noise_std) {
  if (likelihood == LikelihoodKind::categorical) return softmax_cross_entropy(batch.labels());
  return gaussian_nll(batch.targets.transpose(), noise_std);
}

}  // namespace

ElboValue elbo(const MeanFieldPosterior& q, const PriorSpec& prior, const Dataset& batch, int n_samples,
               Index dataset_size, double temperature, std::uint64_t seed, LikelihoodKind likelihood,
               double noise_std) {
  q.validate();
  if (batch.size() < 1) throw std::invalid_argument("empty batch");
  if (n_samples < 1) throw std::invalid_argument("need at least one ELBO sample");
  if (dataset_size < batch.size()) throw std::invalid_argument("dataset smaller than batch");
  const VectorXd p = per_parameter_prior_std(q.spec, prior);
  const Index P = q.mu.size();
  const VectorXd s = q.stddev();
  const VectorXd ds_drho = q.rho.unaryExpr([](double r) { return sigmoid(r); });

  ElboValue out;
  out.grad_mu = VectorXd::Zero(P);
  out.grad_rho = VectorXd::Zero(P);
  const double kl_scale = temperature * static_cast<double>(batch.size()) / static_cast<double>(dataset_size);
  for (Index i = 0; i < P; ++i) {
    out.kl += std::log(p[i] / s[i]) + (s[i] * s[i] + q.mu[i] * q.mu[i]) / (2.0 * p[i] * p[i]) - 0.5;
    out.grad_mu[i] = kl_scale * q.mu[i] / (p[i] * p[i]);
    out.grad_rho[i] = kl_scale * (-1.0 / s[i] + s[i] / (p[i] * p[i])) * ds_drho[i];
  }

  const MatrixXd X = batch.features();
  const OutputLoss loss = batch_loss(batch, likelihood, noise_std);
  Rng rng = make_rng(seed, 0xe1b0);
  NormalSampler normal;
  VectorXd eps(P), theta(P);
  const double inv_n = 1.0 / n_samples;
  for (int k = 0; k < n_samples; ++k) {
    for (Index i = 0; i < P; ++i) {
      eps[i] = normal(rng);
      theta[i] = q.mu[i] + s[i] * eps[i];
    }
    const LossGradient g = grad_logdensity(q.spec, theta, X, loss);
    out.nll += inv_n * g.value;
    out.grad_mu += inv_n * g.grad;
    out.grad_rho.array() += inv_n * g.grad.array() * eps.array() * ds_drho.array();
  }
  out.neg_elbo = kl_scale * out.kl + out.nll;
  if (!std::isfinite(out.neg_elbo)) throw NumericError("non-finite negative ELBO");
  return out;
}

AdamOptimizer::AdamOptimizer(Index size, double learning_rate, bool amsgrad, double beta1, double beta2, double eps)
    : lr_(learning_rate),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      amsgrad_(amsgrad),
      m_(VectorXd::Zero(size)),
      v_(VectorXd::Zero(size)),
      v_max_(VectorXd::Zero(size)) {}

void AdamOptimizer::step(VectorXd& params, const VectorXd& grad) {
  if (grad.size() != params.size() || grad.size() != m_.size()) throw ShapeError("optimizer size mismatch");
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const VectorXd* second = &v_;
  if (amsgrad_) {
    v_max_ = v_max_.cwiseMax(v_);
    second = &v_max_;
  }
  params.array() -= lr_ * (m_.array() / bc1) / ((second->array() / bc2).sqrt() + eps_);
}

TrainResult train(const NetworkSpec& spec, const Dataset& data, const PriorSpec& prior, const TrainConfig& config,
                  const MeanFieldPosterior* initial) {
  config.validate();
  data.validate();
  if (data.dim() != spec.input_dim()) throw ShapeError("dataset features do not match network input");
  TrainResult result{initial ? *initial : MeanFieldPosterior::initialize(spec, config.init_std, config.seed), {}};
  MeanFieldPosterior& q = result.posterior;
  q.validate();
  AdamOptimizer opt_mu(q.mu.size(), config.learning_rate, config.amsgrad);
  AdamOptimizer opt_rho(q.rho.size(), config.learning_rate, config.amsgrad);

  std::vector<Index> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), Index{0});
  Rng shuffle_rng = make_rng(config.seed, 0x5bf1);
  std::uint64_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (Index i = data.size() - 1; i > 0; --i) {
      std::swap(order[i], order[static_cast<Index>(shuffle_rng() % static_cast<std::uint64_t>(i + 1))]);
    }
    EpochStats stats{epoch, 0.0, 0.0, 0.0};
    for (Index start = 0; start < data.size(); start += config.batch_size) {
      const Index end = std::min(data.size(), start + config.batch_size);
      const Dataset batch = data.subset(std::vector<Index>(order.begin() + start, order.begin() + end));
      ElboValue e;
      try {
        e = elbo(q, prior, batch, config.n_train_samples, data.size(), config.temperature,
                 stream_seed(config.seed, step++), config.likelihood, config.noise_std);
      } catch (const NumericError& err) {
        throw TrainingError(std::string("training diverged: ") + err.what(), epoch);
      }
      stats.neg_elbo += e.neg_elbo;
      stats.kl_term += e.neg_elbo - e.nll;
      stats.nll_term += e.nll;
      opt_mu.step(q.mu, e.grad_mu);
      opt_rho.step(q.rho, e.grad_rho);
    }
    if (!q.mu.allFinite() || !q.rho.allFinite()) throw TrainingError("parameters became non-finite", epoch);
    result.history.push_back(stats);
  }
  return result;
}

MatrixXd predict(const MeanFieldPosterior& q, const VectorXd& x, int n_samples, std::uint64_t seed) {
  if (n_samples < 1) throw std::invalid_argument("need at least one predictive sample");
  const auto outs = predict_batch(q, x, n_samples, seed);
  MatrixXd out(n_samples, q.spec.output_dim());
  for (int s = 0; s < n_samples; ++s) out.row(s) = outs[s].col(0).transpose();
  return out;
}

std::vector<MatrixXd> predict_batch(const MeanFieldPosterior& q, const MatrixXd& X, int n_samples,
                                    std::uint64_t seed) {
  q.validate();
  if (n_samples < 1) throw std::invalid_argument("need at least one predictive sample");
  std::vector<MatrixXd> out;
  out.reserve(static_cast<std::size_t>(n_samples));
  for (int s = 0; s < n_samples; ++s) {
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(s));
    NormalSampler normal;
    out.push_back(forward_batch(q.spec, q.sample(rng, normal), X));
  }
  return out;
}

double predictive_accuracy(const MeanFieldPosterior& q, const Dataset& test, int n_samples, std::uint64_t seed) {
  const auto outs = predict_batch(q, test.features(), n_samples, seed);
  MatrixXd probs = MatrixXd::Zero(q.spec.output_dim(), test.size());
  for (const MatrixXd& logits : outs) {
    for (Index n = 0; n < logits.cols(); ++n) probs.col(n) += log_softmax(logits.col(n)).array().exp().matrix();
  }
  Index correct = 0;
  for (Index n = 0; n < test.size(); ++n) {
    Index best;
    probs.col(n).maxCoeff(&best);
    if (best == static_cast<Index>(test.targets[n])) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochStats>& history) {
  MatrixXd rows(static_cast<Index>(history.size()), 4);
  for (std::size_t i = 0; i < history.size(); ++i) {
    rows.row(i) << history[i].epoch, history[i].neg_elbo, history[i].kl_term, history[i].nll_term;
  }
  write_csv(path, {"epoch", "neg_elbo", "kl_term", "nll_term"}, rows);
}

}  // namespace mfdl
