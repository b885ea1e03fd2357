#include "mfdl/posterior_geometry.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <thread>

#include "mfdl/errors.hpp"
#include "mfdl/gmm.hpp"
#include "mfdl/random.hpp"

namespace mfdl {

LossGradient bnn_log_posterior(const NetworkSpec& spec, const Dataset& data, double prior_precision,
                               const VectorXd& theta, LikelihoodKind likelihood, double noise_std,
                               double temperature) {
  if (!(prior_precision >= 0.0)) throw std::invalid_argument("prior precision must be non-negative");
  LossGradient out;
  out.value = -0.5 * prior_precision * theta.squaredNorm();
  out.grad = -prior_precision * theta;
  if (data.size() > 0) {
    const OutputLoss loss = likelihood == LikelihoodKind::categorical
                                ? softmax_cross_entropy(data.labels())
                                : gaussian_nll(data.targets.transpose(), noise_std);
    const LossGradient nll = grad_logdensity(spec, theta, data.features(), loss);
    out.value -= temperature * nll.value;
    out.grad -= temperature * nll.grad;
  } else if (theta.size() != ParamLayout(spec).size()) {
    throw ShapeError("parameter vector does not match the network layout");
  }
  if (!std::isfinite(out.value)) throw NumericError("non-finite log posterior");
  return out;
}

LogDensityFn make_bnn_log_posterior(const NetworkSpec& spec, const Dataset& data, double prior_precision,
                                    LikelihoodKind likelihood, double noise_std) {
  return [=](const VectorXd& theta, VectorXd& grad) {
    try {
      LossGradient lg = bnn_log_posterior(spec, data, prior_precision, theta, likelihood, noise_std);
      grad = std::move(lg.grad);
      return lg.value;
    } catch (const NumericError&) {
      grad = VectorXd::Zero(theta.size());
      return -std::numeric_limits<double>::infinity();
    }
  };
}

void HMCConfig::validate() const {
  if (!(step_size > 0.0) || n_leapfrog < 1 || burn_in_steps < 1 || n_kept < 1) {
    throw std::invalid_argument("HMC step size and counts must be positive");
  }
  if (!(target_accept > 0.0 && target_accept < 1.0)) throw std::invalid_argument("target acceptance must be in (0, 1)");
  if (!(step_jitter >= 0.0 && step_jitter < 1.0)) throw std::invalid_argument("step jitter must be in [0, 1)");
  if (!(prior_precision >= 0.0)) throw std::invalid_argument("prior precision must be non-negative");
}

void to_json(nlohmann::json& j, const HMCConfig& c) {
  j = nlohmann::json{{"step_size", c.step_size},         {"n_leapfrog", c.n_leapfrog},
                     {"burn_in_steps", c.burn_in_steps}, {"target_accept", c.target_accept},
                     {"n_kept", c.n_kept},               {"seed", c.seed},
                     {"prior_precision", c.prior_precision}, {"step_jitter", c.step_jitter}};
}

void from_json(const nlohmann::json& j, HMCConfig& c) {
  const HMCConfig d;
  c.step_size = j.value("step_size", d.step_size);
  c.n_leapfrog = j.value("n_leapfrog", d.n_leapfrog);
  c.burn_in_steps = j.value("burn_in_steps", d.burn_in_steps);
  c.target_accept = j.value("target_accept", d.target_accept);
  c.n_kept = j.value("n_kept", d.n_kept);
  c.seed = j.value("seed", d.seed);
  c.prior_precision = j.value("prior_precision", d.prior_precision);
  c.step_jitter = j.value("step_jitter", d.step_jitter);
  c.validate();
}

PosteriorSamples hmc_sample(const LogDensityFn& logpost, const HMCConfig& config) {
  config.validate();
  if (config.init.size() == 0) throw std::invalid_argument("HMC needs an initial point");
  const Index P = config.init.size();
  VectorXd theta = config.init, grad(P);
  double lp = logpost(theta, grad);
  if (!std::isfinite(lp) || !grad.allFinite()) throw SamplingError("log density is not finite at the initial point");

  Rng rng = make_rng(config.seed, 0x4a3c);
  NormalSampler normal;

  // Dual averaging constants.
  constexpr double gamma = 0.05, t0 = 10.0, kappa = 0.75;
  double mu = std::log(10.0 * config.step_size);
  double h_bar = 0.0, log_eps_bar = 0.0;
  double eps = config.step_size;
  const Index adapt = std::max(1, config.burn_in_steps / config.n_leapfrog);
  // Averaging restarts halfway, once the chain has left the initial point.
  const Index restart = adapt >= 20 ? adapt / 2 : 0;
  Index window_start = 0;

  PosteriorSamples out;
  out.samples.resize(config.n_kept, P);
  out.log_post.resize(config.n_kept);
  double accept_sum = 0.0;
  int bad_streak = 0;
  VectorXd q(P), p(P), g(P);
  for (Index it = 0; it < adapt + config.n_kept; ++it) {
    const double eps_t = eps * (1.0 + config.step_jitter * (2.0 * NormalSampler::uniform(rng) - 1.0));
    for (Index i = 0; i < P; ++i) p[i] = normal(rng);
    const double h0 = -lp + 0.5 * p.squaredNorm();
    q = theta;
    g = grad;
    double lq = lp;
    bool finite = true;
    p += 0.5 * eps_t * g;
    for (int s = 0; s < config.n_leapfrog; ++s) {
      q += eps_t * p;
      lq = logpost(q, g);
      if (!std::isfinite(lq) || !g.allFinite()) {
        finite = false;
        break;
      }
      if (s + 1 < config.n_leapfrog) p += eps_t * g;
    }
    double alpha = 0.0;
    if (finite) {
      p += 0.5 * eps_t * g;
      const double h1 = -lq + 0.5 * p.squaredNorm();
      alpha = std::isfinite(h1) ? std::min(1.0, std::exp(h0 - h1)) : 0.0;
    }
    bad_streak = finite ? 0 : bad_streak + 1;
    if (bad_streak >= 100) throw SamplingError("energy stayed non-finite for 100 transitions");
    if (finite && NormalSampler::uniform(rng) < alpha) {
      theta = q;
      grad = g;
      lp = lq;
    }
    if (it < adapt) {
      if (it == restart && restart > 0) {
        window_start = it;
        eps = std::exp(log_eps_bar);
        mu = std::log(10.0 * eps);
        h_bar = 0.0;
        log_eps_bar = 0.0;
      }
      const double t = static_cast<double>(it - window_start + 1);
      h_bar = (1.0 - 1.0 / (t + t0)) * h_bar + (config.target_accept - alpha) / (t + t0);
      const double log_eps = mu - std::sqrt(t) / gamma * h_bar;
      const double w = std::pow(t, -kappa);
      log_eps_bar = w * log_eps + (1.0 - w) * log_eps_bar;
      eps = it + 1 == adapt ? std::exp(log_eps_bar) : std::exp(log_eps);
    } else {
      const Index k = it - adapt;
      accept_sum += alpha;
      out.samples.row(k) = theta.transpose();
      out.log_post[k] = lp;
    }
  }
  out.acceptance = accept_sum / static_cast<double>(config.n_kept);
  out.step_size = eps;
  return out;
}

DominantMode gmm_dominant_mode(const MatrixXd& samples, int k_max, std::uint64_t seed) {
  if (samples.rows() < 1) throw std::invalid_argument("no samples");
  DominantMode out;
  const GmmSelection sel = select_gmm(samples, k_max, seed);
  out.k = sel.model.k();
  out.warning = sel.warning;
  if (out.k == 1) {
    out.samples = samples;
    out.assignment.assign(static_cast<std::size_t>(samples.rows()), 0);
    return out;
  }
  out.assignment = sel.model.assign(samples);
  Index heavy;
  sel.model.weights.maxCoeff(&heavy);
  std::vector<Index> rows;
  for (std::size_t i = 0; i < out.assignment.size(); ++i) {
    if (out.assignment[i] == heavy) rows.push_back(static_cast<Index>(i));
  }
  out.samples.resize(static_cast<Index>(rows.size()), samples.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.samples.row(static_cast<Index>(r)) = samples.row(rows[r]);
  return out;
}

MatrixXd GaussianFit::covariance() const {
  if (diagonal) return var.asDiagonal();
  return cov;
}

void GaussianFit::validate() const {
  if (diagonal) {
    if (var.size() != mean.size()) throw ShapeError("variance vector does not match the mean");
    if (!(var.array() > 0.0).all()) throw FitError("diagonal variances must be positive");
  } else {
    if (cov.rows() != mean.size() || cov.cols() != mean.size()) throw ShapeError("covariance does not match the mean");
  }
}

GaussianFit fit_full(const MatrixXd& samples) {
  if (samples.rows() < 2) throw FitError("a full Gaussian fit needs at least two samples");
  if (!samples.allFinite()) throw FitError("non-finite samples");
  GaussianFit fit;
  fit.mean = samples.colwise().mean().transpose();
  const MatrixXd centred = samples.rowwise() - fit.mean.transpose();
  fit.cov = (centred.transpose() * centred) / static_cast<double>(samples.rows() - 1);
  fit.cov = 0.5 * (fit.cov + fit.cov.transpose());
  const double avg_var = fit.cov.trace() / static_cast<double>(fit.cov.rows());
  // All-identical samples have zero trace; fall back to a unit scale.
  fit.cov.diagonal().array() += 1e-8 * (avg_var > 0.0 ? avg_var : 1.0);
  if (Eigen::LLT<MatrixXd>(fit.cov).info() != Eigen::Success) throw FitError("covariance is singular after jitter");
  return fit;
}

GaussianFit fit_diag(const GaussianFit& full) {
  full.validate();
  GaussianFit d;
  d.diagonal = true;
  d.mean = full.mean;
  d.var = full.diagonal ? full.var : full.cov.diagonal();
  d.validate();
  return d;
}

namespace {

double log_det_spd(const MatrixXd& m) {
  const Eigen::LLT<MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) throw FitError("covariance is not positive definite");
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

}  // namespace

double gaussian_kl(const GaussianFit& p, const GaussianFit& q) {
  p.validate();
  q.validate();
  if (p.dim() != q.dim()) throw ShapeError("Gaussian fits differ in dimension");
  const Index k = p.dim();
  const VectorXd diff = q.mean - p.mean;
  const double logdet_p = p.diagonal ? p.var.array().log().sum() : log_det_spd(p.cov);
  double kl;
  if (q.diagonal) {
    const VectorXd pdiag = p.diagonal ? p.var : VectorXd(p.cov.diagonal());
    double s = 0.0;
    for (Index i = 0; i < k; ++i) s += pdiag[i] / q.var[i] + diff[i] * diff[i] / q.var[i] + std::log(q.var[i]);
    kl = 0.5 * (s - static_cast<double>(k) - logdet_p);
  } else {
    const Eigen::LLT<MatrixXd> llt(q.cov);
    if (llt.info() != Eigen::Success) throw FitError("covariance is not positive definite");
    const double trace = llt.solve(p.covariance()).trace();
    const double maha = diff.dot(llt.solve(diff));
    kl = 0.5 * (trace + maha - static_cast<double>(k) + log_det_spd(q.cov) - logdet_p);
  }
  return std::max(0.0, kl);
}

double kl_error(const GaussianFit& full, const GaussianFit& diag) { return gaussian_kl(full, diag); }

MatrixXd sample_gaussian(const GaussianFit& fit, Index n, std::uint64_t seed) {
  fit.validate();
  Rng rng = make_rng(seed, 0x6a55);
  NormalSampler normal;
  const Index d = fit.dim();
  MatrixXd z(d, n);
  for (Index i = 0; i < z.size(); ++i) z.data()[i] = normal(rng);
  MatrixXd x;
  if (fit.diagonal) {
    x = fit.var.cwiseSqrt().asDiagonal() * z;
  } else {
    const Eigen::LLT<MatrixXd> llt(fit.cov);
    if (llt.info() != Eigen::Success) throw FitError("covariance is not positive definite");
    x = llt.matrixL() * z;
  }
  x.colwise() += fit.mean;
  return x.transpose();
}

double wasserstein_error(const MatrixXd& samples, const GaussianFit& full, const GaussianFit& diag,
                         std::uint64_t seed) {
  const Index n = samples.rows();
  const double w_diag = wasserstein_point_clouds(samples, sample_gaussian(diag, n, stream_seed(seed, 1)));
  const double w_full = wasserstein_point_clouds(samples, sample_gaussian(full, n, stream_seed(seed, 2)));
  return w_diag - w_full;
}

int width_for_budget(int depth, int budget, int n_in, int n_out) {
  if (depth < 1 || budget < 1 || n_in < 1 || n_out < 1) throw std::invalid_argument("invalid width budget query");
  auto count = [&](long w) { return n_in * w + static_cast<long>(depth - 1) * w * w + w * n_out; };
  if (count(1) > budget) throw std::invalid_argument("budget is below the smallest network of this depth");
  long w = 1;
  while (count(w + 1) <= budget) ++w;
  // w is the largest width within budget; w + 1 may still be closer.
  if (std::abs(count(w + 1) - budget) < std::abs(count(w) - budget)) ++w;
  return static_cast<int>(w);
}

void GapSweepConfig::validate() const {
  if (depths.empty() || restarts < 1 || n_train < 1 || n_test < 1 || k_max < 1) {
    throw std::invalid_argument("invalid sweep configuration");
  }
  for (int d : depths) {
    if (d < 1) throw std::invalid_argument("depths must be positive");
  }
  activation.validate();
  mfvi.validate();
  hmc.validate();
}

void to_json(nlohmann::json& j, const GapSweepConfig& c) {
  j = nlohmann::json{{"depths", c.depths},
                     {"param_budget", c.param_budget},
                     {"restarts", c.restarts},
                     {"n_train", c.n_train},
                     {"n_test", c.n_test},
                     {"data_noise", c.data_noise},
                     {"mfvi", c.mfvi},
                     {"mfvi_prior_std", c.mfvi_prior_std},
                     {"hmc", c.hmc},
                     {"k_max", c.k_max},
                     {"seed", c.seed}};
  const nlohmann::json act = c.activation;
  j["activation"] = act.at("activation");
  if (act.contains("alpha")) j["alpha"] = act.at("alpha");
}

void from_json(const nlohmann::json& j, GapSweepConfig& c) {
  const GapSweepConfig d;
  c.depths = j.value("depths", d.depths);
  c.param_budget = j.value("param_budget", d.param_budget);
  if (j.contains("activation")) {
    nlohmann::json spec = {{"widths", {1, 1}}, {"activation", j.at("activation")}};
    if (j.contains("alpha")) spec["alpha"] = j.at("alpha");
    c.activation = spec.get<NetworkSpec>().activation;
  }
  c.restarts = j.value("restarts", d.restarts);
  c.n_train = j.value("n_train", d.n_train);
  c.n_test = j.value("n_test", d.n_test);
  c.data_noise = j.value("data_noise", d.data_noise);
  c.mfvi = j.contains("mfvi") ? j.at("mfvi").get<TrainConfig>() : d.mfvi;
  c.mfvi_prior_std = j.value("mfvi_prior_std", d.mfvi_prior_std);
  c.hmc = j.contains("hmc") ? j.at("hmc").get<HMCConfig>() : d.hmc;
  c.k_max = j.value("k_max", d.k_max);
  c.seed = j.value("seed", d.seed);
  c.validate();
}

namespace {

double ensemble_accuracy(const NetworkSpec& spec, const MatrixXd& thetas, const Dataset& test) {
  const MatrixXd X = test.features();
  MatrixXd probs = MatrixXd::Zero(spec.output_dim(), test.size());
  for (Index s = 0; s < thetas.rows(); ++s) {
    const MatrixXd logits = forward_batch(spec, thetas.row(s).transpose(), X);
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

// Runs f(i) for i in [0, n) on up to `jobs` threads.
template <typename F>
void parallel_for(int n, int jobs, F f) {
  if (jobs <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  for (int t = 0; t < std::min(jobs, n); ++t) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) f(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace

GapReport depth_gap_sweep(const GapSweepConfig& config, int jobs) {
  config.validate();
  const Dataset all = two_moons(config.n_train + config.n_test, config.data_noise, config.seed);
  const Split split = split_dataset(all, config.n_train, stream_seed(config.seed, 1));
  const int n_depths = static_cast<int>(config.depths.size());

  struct DepthSetup {
    NetworkSpec spec;
    int width = 0;
    VectorXd init;
    std::string error;
  };
  std::vector<DepthSetup> setups(static_cast<std::size_t>(n_depths));
  parallel_for(n_depths, jobs, [&](int d) {
    DepthSetup& s = setups[d];
    const int depth = config.depths[d];
    try {
      s.width = width_for_budget(depth, config.param_budget, 2, 2);
      s.spec.widths.assign(1, 2);
      for (int l = 0; l < depth; ++l) s.spec.widths.push_back(s.width);
      s.spec.widths.push_back(2);
      s.spec.activation = config.activation;
      s.spec.has_bias = true;
      TrainConfig tc = config.mfvi;
      tc.seed = stream_seed(config.seed, 100 + static_cast<std::uint64_t>(depth));
      tc.likelihood = LikelihoodKind::categorical;
      s.init = train(s.spec, split.train, PriorSpec::isotropic(depth + 1, config.mfvi_prior_std), tc).posterior.mu;
    } catch (const std::exception& e) {
      s.error = e.what();
    }
  });

  GapReport report;
  report.records.resize(static_cast<std::size_t>(n_depths * config.restarts));
  parallel_for(n_depths * config.restarts, jobs, [&](int cell) {
    const int d = cell / config.restarts, r = cell % config.restarts;
    const DepthSetup& s = setups[d];
    GapRecord& rec = report.records[cell];
    rec.depth = config.depths[d];
    rec.restart = r;
    rec.width = s.width;
    rec.n_params = s.spec.widths.empty() ? 0 : ParamLayout(s.spec).size();
    if (!s.error.empty()) {
      rec.error = s.error;
      return;
    }
    try {
      const std::uint64_t cell_seed = stream_seed(config.seed, 1000 + static_cast<std::uint64_t>(cell));
      HMCConfig hc = config.hmc;
      hc.seed = cell_seed;
      hc.init = s.init;
      const PosteriorSamples ps =
          hmc_sample(make_bnn_log_posterior(s.spec, split.train, hc.prior_precision), hc);
      rec.acceptance = ps.acceptance;
      rec.test_acc = ensemble_accuracy(s.spec, ps.samples, split.test);
      const DominantMode mode = gmm_dominant_mode(ps.samples, config.k_max, stream_seed(cell_seed, 1));
      rec.modes = mode.k;
      const GaussianFit full = fit_full(mode.samples);
      const GaussianFit diag = fit_diag(full);
      rec.e_kl = kl_error(full, diag);
      rec.e_w = wasserstein_error(mode.samples, full, diag, stream_seed(cell_seed, 2));
    } catch (const std::exception& e) {
      rec.error = e.what();
    }
  });
  return report;
}

std::vector<double> GapReport::metric(int depth, const std::string& name) const {
  std::vector<double> out;
  for (const GapRecord& r : records) {
    if (r.depth != depth || !r.error.empty()) continue;
    if (name == "e_w") {
      out.push_back(r.e_w);
    } else if (name == "e_kl") {
      out.push_back(r.e_kl);
    } else if (name == "test_acc") {
      out.push_back(r.test_acc);
    } else if (name == "acceptance") {
      out.push_back(r.acceptance);
    } else {
      throw std::invalid_argument("unknown metric '" + name + "'");
    }
  }
  return out;
}

nlohmann::json GapReport::summary() const {
  std::vector<int> depths;
  for (const GapRecord& r : records) {
    if (std::find(depths.begin(), depths.end(), r.depth) == depths.end()) depths.push_back(r.depth);
  }
  nlohmann::json out = nlohmann::json::array();
  for (int depth : depths) {
    nlohmann::json row = {{"depth", depth}};
    int failed = 0;
    for (const GapRecord& r : records) failed += r.depth == depth && !r.error.empty();
    row["failed_cells"] = failed;
    for (const char* name : {"e_w", "e_kl", "test_acc", "acceptance"}) {
      const std::vector<double> v = metric(depth, name);
      nlohmann::json m = {{"n", v.size()}};
      if (!v.empty()) {
        const Eigen::Map<const VectorXd> x(v.data(), static_cast<Index>(v.size()));
        const double mean = x.mean();
        m["mean"] = mean;
        m["se"] = v.size() > 1 ? std::sqrt((x.array() - mean).square().sum() / static_cast<double>(v.size() - 1) /
                                           static_cast<double>(v.size()))
                               : 0.0;
      }
      row[name] = m;
    }
    out.push_back(row);
  }
  return out;
}

void GapReport::write_csv(const std::filesystem::path& path) const {
  MatrixXd rows(static_cast<Index>(records.size()), 6);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const GapRecord& r = records[i];
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const bool ok = r.error.empty();
    rows.row(static_cast<Index>(i)) << r.depth, r.restart, ok ? r.e_w : nan, ok ? r.e_kl : nan,
        ok ? r.test_acc : nan, ok ? r.acceptance : nan;
  }
  mfdl::write_csv(path, {"depth", "restart", "e_w", "e_kl", "test_acc", "acceptance"}, rows);
}

}  // namespace mfdl
