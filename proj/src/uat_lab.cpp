#include "mfdl/uat_lab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/distributions/normal.hpp>

#include "mfdl/data_io.hpp"
#include "mfdl/errors.hpp"
#include "mfdl/gmm.hpp"
#include "mfdl/random.hpp"

namespace mfdl {

namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI); }

double normal_quantile(double u) { return boost::math::quantile(boost::math::normal_distribution<double>(), u); }

double leaky(double v, double alpha) { return v > 0.0 ? v : alpha * v; }

double leaky_inverse(double h, double alpha) { return h > 0.0 ? h : h / alpha; }

std::vector<double> to_std(const VectorXd& v) { return {v.data(), v.data() + v.size()}; }

VectorXd from_std(const std::vector<double>& v) {
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size()));
}

}  // namespace

TargetPredictive TargetPredictive::bimodal() {
  TargetPredictive t;
  t.weights = Eigen::Vector2d(0.5, 0.5);
  t.means = Eigen::Vector2d(-2.0, 2.0);
  t.stds = Eigen::Vector2d(0.5, 0.5);
  return t;
}

TargetPredictive TargetPredictive::gaussian(double mean, double std) {
  TargetPredictive t;
  t.weights = VectorXd::Ones(1);
  t.means = VectorXd::Constant(1, mean);
  t.stds = VectorXd::Constant(1, std);
  return t;
}

VectorXd TargetPredictive::means_at(const VectorXd& x) const {
  if (!depends_on_x()) return means;
  if (x.size() != mean_slope.cols()) throw ShapeError("input does not match the target's mean map");
  return means + mean_slope * x;
}

double TargetPredictive::cdf(double y, const VectorXd& x) const {
  const VectorXd m = means_at(x);
  double s = 0.0;
  for (int c = 0; c < k(); ++c) s += weights[c] * normal_cdf((y - m[c]) / stds[c]);
  return s;
}

double TargetPredictive::sf(double y, const VectorXd& x) const {
  const VectorXd m = means_at(x);
  double s = 0.0;
  for (int c = 0; c < k(); ++c) s += weights[c] * normal_cdf((m[c] - y) / stds[c]);
  return s;
}

double TargetPredictive::pdf(double y, const VectorXd& x) const {
  const VectorXd m = means_at(x);
  double s = 0.0;
  for (int c = 0; c < k(); ++c) s += weights[c] * normal_pdf((y - m[c]) / stds[c]) / stds[c];
  return s;
}

VectorXd TargetPredictive::sample(Index n, const VectorXd& x, std::uint64_t seed) const {
  const VectorXd m = means_at(x);
  Rng rng = make_rng(seed, 0x7a67);
  NormalSampler normal;
  VectorXd out(n);
  for (Index i = 0; i < n; ++i) {
    const double u = NormalSampler::uniform(rng);
    int c = 0;
    double acc = weights[0];
    while (c + 1 < k() && u >= acc) acc += weights[++c];
    out[i] = m[c] + stds[c] * normal(rng);
  }
  return out;
}

void TargetPredictive::validate() const {
  if (weights.size() < 1) throw std::invalid_argument("target needs at least one component");
  if (means.size() != weights.size() || stds.size() != weights.size())
    throw ShapeError("target component arrays differ in length");
  if ((weights.array() <= 0.0).any()) throw std::invalid_argument("target weights must be positive");
  if (std::abs(weights.sum() - 1.0) > 1e-12) throw std::invalid_argument("target weights must sum to 1");
  if (!(stds.array() > 0.0).all() || !stds.allFinite()) throw std::invalid_argument("target stds must be positive");
  if (depends_on_x() && mean_slope.rows() != weights.size()) throw ShapeError("mean_slope needs one row per component");
}

void to_json(nlohmann::json& j, const TargetPredictive& t) {
  j = nlohmann::json{{"weights", to_std(t.weights)}, {"means", to_std(t.means)}, {"stds", to_std(t.stds)}};
  if (t.depends_on_x()) {
    nlohmann::json rows = nlohmann::json::array();
    for (Index r = 0; r < t.mean_slope.rows(); ++r) rows.push_back(to_std(t.mean_slope.row(r).transpose()));
    j["mean_slope"] = rows;
  } else {
    j["mean_slope"] = nlohmann::json::array();
  }
}

void from_json(const nlohmann::json& j, TargetPredictive& t) {
  t.weights = from_std(j.at("weights").get<std::vector<double>>());
  t.means = from_std(j.at("means").get<std::vector<double>>());
  t.stds = from_std(j.at("stds").get<std::vector<double>>());
  t.mean_slope.resize(0, 0);
  if (j.contains("mean_slope") && !j.at("mean_slope").empty()) {
    const auto rows = j.at("mean_slope").get<std::vector<std::vector<double>>>();
    t.mean_slope.resize(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != rows.front().size()) throw ShapeError("ragged mean_slope");
      t.mean_slope.row(static_cast<Index>(r)) = from_std(rows[r]).transpose();
    }
  }
  t.validate();
}

QuantileMap::QuantileMap(TargetPredictive target, double alpha) : target_(std::move(target)), alpha_(alpha) {
  target_.validate();
  if (!(alpha_ > 0.0 && alpha_ <= 1.0)) throw std::invalid_argument("activation must be invertible (alpha in (0, 1])");
}

double QuantileMap::solve(double level, bool upper, const VectorXd& x) const {
  const VectorXd m = target_.means_at(x);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (int c = 0; c < target_.k(); ++c) {
    lo = std::min(lo, m[c] - 40.0 * target_.stds[c]);
    hi = std::max(hi, m[c] + 40.0 * target_.stds[c]);
  }
  // residual(y) is increasing in y for both tails.
  auto residual = [&](double y) { return upper ? level - target_.sf(y, x) : target_.cdf(y, x) - level; };
  const double scale = target_.stds.minCoeff();
  while (hi - lo > 1e-6 * scale) {
    const double mid = 0.5 * (lo + hi);
    (residual(mid) < 0.0 ? lo : hi) = mid;
  }
  double y = 0.5 * (lo + hi);
  for (int it = 0; it < 20; ++it) {
    const double r = residual(y);
    if (std::abs(r) < 1e-12 * std::min(1.0, 1e3 * level)) break;
    const double f = target_.pdf(y, x);
    double next = f > 0.0 ? y - r / f : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    (r < 0.0 ? lo : hi) = y;
    y = next;
  }
  return y;
}

double QuantileMap::quantile(double u, const VectorXd& x) const {
  u = std::clamp(u, 1e-15, 1.0 - 1e-15);
  return u <= 0.5 ? solve(u, false, x) : solve(1.0 - u, true, x);
}

double QuantileMap::from_z(double z, const VectorXd& x) const {
  return z <= 0.0 ? solve(std::max(normal_cdf(z), 1e-15), false, x) : solve(std::max(normal_cdf(-z), 1e-15), true, x);
}

double QuantileMap::operator()(double h, const VectorXd& x) const { return from_z(leaky_inverse(h, alpha_), x); }

RvIntroducer build_rv_introducer(int input_dim, double sigma) {
  if (input_dim < 1) throw std::invalid_argument("input dimension must be positive");
  if (!(sigma > 0.0)) throw std::invalid_argument("introducer sigma must be positive");
  RvIntroducer intro;
  MatrixXd mean = MatrixXd::Zero(input_dim + 1, input_dim);
  mean.bottomRows(input_dim).setIdentity();
  intro.weight = MeanFieldLayer{mean, MatrixXd::Constant(input_dim + 1, input_dim, sigma)};
  intro.bias_mean = VectorXd::Zero(input_dim + 1);
  intro.bias_std = VectorXd::Constant(input_dim + 1, sigma);
  intro.bias_std[0] = 1.0;
  return intro;
}

void MapperFitConfig::validate() const {
  if (width < 1) throw std::invalid_argument("mapper width must be at least 1");
  if (!(weight_std > 0.0) || !(intro_sigma > 0.0)) throw std::invalid_argument("mapper stds must be positive");
  if (n_fit < 2) throw std::invalid_argument("mapper fit needs at least 2 levels");
  if (!(mix_scale >= 0.0)) throw std::invalid_argument("mix_scale must be non-negative");
}

RvMapper fit_rv_mapper(const QuantileMap& map, int input_dim, const MapperFitConfig& config) {
  config.validate();
  const double alpha = map.alpha();
  const int W = config.width;
  const Index D = input_dim;
  std::vector<VectorXd> anchors = config.anchors;
  if (anchors.empty()) anchors.push_back(VectorXd::Zero(D));
  for (const VectorXd& a : anchors) {
    if (a.size() != D) throw ShapeError("anchor does not match the input dimension");
  }

  // Units 0 and 1 kink at z = 0 with opposite orientations, so together they
  // span both linear pieces of phi^-1; the rest sit at evenly spaced Gaussian
  // quantiles with alternating orientation.
  RvMapper m;
  m.w2 = MatrixXd::Zero(W, D + 1);
  m.b2 = VectorXd::Zero(W);
  Rng rng = make_rng(config.seed, 0x3a9);
  NormalSampler normal;
  const bool mix = map.target().depends_on_x() && config.mix_scale > 0.0;
  for (int j = 0; j < W; ++j) {
    const double s = (j % 2 == 0) ? 1.0 : -1.0;
    const double t = j < 2 ? 0.0 : leaky(normal_quantile((j - 1.5) / (W - 2)), alpha);
    m.w2(j, 0) = s;
    m.b2[j] = -s * t;
    if (mix) {
      const VectorXd& a = anchors[static_cast<std::size_t>(rng() % anchors.size())];
      for (Index d = 0; d < D; ++d) {
        m.w2(j, d + 1) = config.mix_scale * normal(rng);
        m.b2[j] -= m.w2(j, d + 1) * leaky(a[d], alpha);
      }
    }
  }

  const Index per = config.n_fit;
  const Index N = per * static_cast<Index>(anchors.size());
  MatrixXd H(N, W + 1);
  VectorXd y(N);
  VectorXd penalty = VectorXd::Zero(W + 1);
  const double wv = config.weight_std * config.weight_std;
  const double iv = config.intro_sigma * config.intro_sigma;
  VectorXd h1(D + 1);
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    const VectorXd& x = anchors[a];
    const VectorXd hx = x.unaryExpr([alpha](double v) { return leaky(v, alpha); });
    const VectorXd dx = x.unaryExpr([alpha](double v) { return v > 0.0 ? 1.0 : alpha; });
    const double x_noise = iv * (1.0 + x.squaredNorm());
    for (Index i = 0; i < per; ++i) {
      const Index r = static_cast<Index>(a) * per + i;
      const double z = normal_quantile((static_cast<double>(i) + 0.5) / static_cast<double>(per));
      h1 << leaky(z, alpha), hx;
      y[r] = map.from_z(z, x);
      const double pre_noise = wv * (h1.squaredNorm() + 1.0);
      for (int j = 0; j < W; ++j) {
        const double pre = m.w2.row(j).dot(h1) + m.b2[j];
        const double slope = pre > 0.0 ? 1.0 : alpha;
        H(r, j) = slope * pre;
        const double copy_noise = (m.w2.row(j).tail(D).transpose().cwiseProduct(dx)).squaredNorm() * x_noise;
        penalty[j] += slope * slope * (pre_noise + copy_noise);
      }
      H(r, W) = 1.0;
    }
  }

  MatrixXd A = H.transpose() * H;
  A.diagonal() += penalty;
  A.diagonal().array() += 1e-12 * A.trace() / static_cast<double>(W + 1);
  const VectorXd c = A.ldlt().solve(H.transpose() * y);
  if (!c.allFinite()) throw FitError("mapper least squares failed");
  m.w3 = c.head(W).transpose();
  m.b3 = c[W];
  m.rmse = std::sqrt((H * c - y).squaredNorm() / static_cast<double>(N));
  m.warning = m.rmse > config.rmse_warning;
  return m;
}

MeanFieldPosterior assemble_uat_network(const RvIntroducer& intro, const RvMapper& mapper, double alpha,
                                        double weight_std) {
  const int D = static_cast<int>(intro.weight.cols());
  const int W = static_cast<int>(mapper.w2.rows());
  if (mapper.w2.cols() != D + 1 || mapper.w3.cols() != W) throw ShapeError("mapper does not match the introducer");
  const NetworkSpec spec{{D, D + 1, W, 1}, ActivationSpec::leaky_relu(alpha), true};
  const ParamLayout layout(spec);
  const std::vector<LayerParams> mean{{intro.weight.mu, intro.bias_mean},
                                      {mapper.w2, mapper.b2},
                                      {mapper.w3, VectorXd::Constant(1, mapper.b3)}};
  const std::vector<LayerParams> std{{intro.weight.sigma, intro.bias_std},
                                     {MatrixXd::Constant(W, D + 1, weight_std), VectorXd::Constant(W, weight_std)},
                                     {MatrixXd::Constant(1, W, weight_std), VectorXd::Constant(1, weight_std)}};
  MeanFieldPosterior q{spec, flatten(layout, mean), flatten(layout, std).unaryExpr([](double s) {
                         return inverse_softplus(s);
                       })};
  q.validate();
  return q;
}

double ks_statistic(VectorXd sorted, const std::function<double(double)>& cdf) {
  std::sort(sorted.data(), sorted.data() + sorted.size());
  const double n = static_cast<double>(sorted.size());
  double d = 0.0;
  for (Index i = 0; i < sorted.size(); ++i) {
    const double f = cdf(sorted[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

double induced_vs_target_ks(const MeanFieldPosterior& q, const TargetPredictive& target, const VectorXd& x,
                            Index n, std::uint64_t seed) {
  if (n < 100) throw std::invalid_argument("KS check needs at least 100 draws");
  if (q.spec.output_dim() != 1) throw ShapeError("KS check needs a scalar output");
  const VectorXd out = predict(q, x, static_cast<int>(n), seed).col(0);
  return ks_statistic(out, [&](double y) { return target.cdf(y, x); });
}

void UatDemoConfig::validate() const {
  target.validate();
  mapper.validate();
  if (x.size() < 1) throw std::invalid_argument("demo input must be nonempty");
  if (target.depends_on_x() && target.mean_slope.cols() != x.size()) throw ShapeError("demo input does not match target");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must be in (0, 1]");
  if (n_eval < 100) throw std::invalid_argument("n_eval must be at least 100");
  if (k_max < 1 || histogram_bins < 1) throw std::invalid_argument("k_max and histogram_bins must be positive");
}

void to_json(nlohmann::json& j, const UatDemoConfig& c) {
  nlohmann::json anchors = nlohmann::json::array();
  for (const VectorXd& a : c.mapper.anchors) anchors.push_back(to_std(a));
  j = nlohmann::json{{"target", c.target},
                     {"x", to_std(c.x)},
                     {"alpha", c.alpha},
                     {"mapper",
                      {{"width", c.mapper.width},
                       {"weight_std", c.mapper.weight_std},
                       {"intro_sigma", c.mapper.intro_sigma},
                       {"n_fit", c.mapper.n_fit},
                       {"anchors", anchors},
                       {"mix_scale", c.mapper.mix_scale},
                       {"rmse_warning", c.mapper.rmse_warning}}},
                     {"n_eval", c.n_eval},
                     {"k_max", c.k_max},
                     {"histogram_bins", c.histogram_bins},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, UatDemoConfig& c) {
  const UatDemoConfig d;
  c.target = j.contains("target") ? j.at("target").get<TargetPredictive>() : d.target;
  c.x = j.contains("x") ? from_std(j.at("x").get<std::vector<double>>()) : d.x;
  c.alpha = j.value("alpha", d.alpha);
  c.mapper = d.mapper;
  if (j.contains("mapper")) {
    const nlohmann::json& m = j.at("mapper");
    c.mapper.width = m.value("width", d.mapper.width);
    c.mapper.weight_std = m.value("weight_std", d.mapper.weight_std);
    c.mapper.intro_sigma = m.value("intro_sigma", d.mapper.intro_sigma);
    c.mapper.n_fit = m.value("n_fit", d.mapper.n_fit);
    c.mapper.mix_scale = m.value("mix_scale", d.mapper.mix_scale);
    c.mapper.rmse_warning = m.value("rmse_warning", d.mapper.rmse_warning);
    c.mapper.anchors.clear();
    if (m.contains("anchors")) {
      for (const auto& a : m.at("anchors")) c.mapper.anchors.push_back(from_std(a.get<std::vector<double>>()));
    }
  }
  c.n_eval = j.value("n_eval", d.n_eval);
  c.k_max = j.value("k_max", d.k_max);
  c.histogram_bins = j.value("histogram_bins", d.histogram_bins);
  c.seed = j.value("seed", d.seed);
  c.validate();
}

nlohmann::json UatDemoResult::summary() const {
  return {{"ks", ks},
          {"n", outputs.size()},
          {"gmm_k", gmm_k},
          {"gmm_bic", gmm_bic},
          {"fit_rmse", mapper.rmse},
          {"fit_warning", mapper.warning}};
}

UatDemoResult run_uat_demo(const UatDemoConfig& config) {
  config.validate();
  MapperFitConfig mc = config.mapper;
  mc.seed = stream_seed(config.seed, 1);
  if (mc.anchors.empty()) mc.anchors.push_back(config.x);
  const QuantileMap map(config.target, config.alpha);
  const RvIntroducer intro = build_rv_introducer(static_cast<int>(config.x.size()), mc.intro_sigma);

  UatDemoResult r;
  r.mapper = fit_rv_mapper(map, static_cast<int>(config.x.size()), mc);
  r.network = assemble_uat_network(intro, r.mapper, config.alpha, mc.weight_std);
  r.outputs = predict(r.network, config.x, static_cast<int>(config.n_eval), stream_seed(config.seed, 2)).col(0);
  r.ks = ks_statistic(r.outputs, [&](double y) { return config.target.cdf(y, config.x); });
  const GmmSelection sel = select_gmm(r.outputs, config.k_max, stream_seed(config.seed, 3));
  r.gmm_k = sel.model.k();
  r.gmm_bic = sel.bic;
  return r;
}

void write_uat_outputs(const std::filesystem::path& stem, const UatDemoResult& result,
                       const UatDemoConfig& config) {
  const nlohmann::json cfg = config;
  const TargetPredictive& t = config.target;
  const VectorXd m = t.means_at(config.x);
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (int c = 0; c < t.k(); ++c) {
    lo = std::min(lo, m[c] - 5.0 * t.stds[c]);
    hi = std::max(hi, m[c] + 5.0 * t.stds[c]);
  }

  const Index points = 1001;
  MatrixXd density(points, 2);
  for (Index i = 0; i < points; ++i) {
    const double y = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
    density(i, 0) = y;
    density(i, 1) = t.pdf(y, config.x);
  }
  auto path = [&](const char* suffix) {
    std::filesystem::path p = stem;
    p += suffix;
    return p;
  };
  write_csv(path("_target.csv"), {"y", "density"}, density);
  write_sidecar(path("_target.csv"), cfg, config.seed);

  const int bins = config.histogram_bins;
  const double width = (hi - lo) / bins;
  VectorXd counts = VectorXd::Zero(bins);
  for (Index i = 0; i < result.outputs.size(); ++i) {
    const double v = result.outputs[i];
    if (v < lo || v >= hi) continue;
    counts[std::min(bins - 1, static_cast<int>((v - lo) / width))] += 1.0;
  }
  MatrixXd hist(bins, 3);
  const double n = static_cast<double>(result.outputs.size());
  for (int b = 0; b < bins; ++b) {
    hist(b, 0) = lo + (b + 0.5) * width;
    hist(b, 1) = counts[b] / (n * width);
    hist(b, 2) = counts[b];
  }
  write_csv(path("_induced.csv"), {"y", "density", "count"}, hist);
  write_sidecar(path("_induced.csv"), cfg, config.seed);

  write_json(path("_ks.json"), result.summary());
  write_sidecar(path("_ks.json"), cfg, config.seed);
}

}  // namespace mfdl
