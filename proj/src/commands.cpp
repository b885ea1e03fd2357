#include "mfdl/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>

#include "mfdl/errors.hpp"
#include "mfdl/linear_analysis.hpp"
#include "mfdl/local_analysis.hpp"
#include "mfdl/mfvi.hpp"
#include "mfdl/posterior_geometry.hpp"
#include "mfdl/random.hpp"
#include "mfdl/uat_lab.hpp"

namespace mfdl {

namespace fs = std::filesystem;
using nlohmann::json;

void to_json(json& j, const DatasetConfig& c) {
  j = json{{"kind", c.kind},   {"n", c.n},
           {"noise", c.noise}, {"dim", c.dim},
           {"classes", c.classes}, {"separation", c.separation},
           {"path", c.path},   {"labels_path", c.labels_path},
           {"test_fraction", c.test_fraction}, {"standardize", c.standardize}};
}

void from_json(const json& j, DatasetConfig& c) {
  const DatasetConfig d;
  c.kind = j.value("kind", d.kind);
  c.n = j.value("n", d.n);
  c.noise = j.value("noise", d.noise);
  c.dim = j.value("dim", d.dim);
  c.classes = j.value("classes", d.classes);
  c.separation = j.value("separation", d.separation);
  c.path = j.value("path", d.path);
  c.labels_path = j.value("labels_path", d.labels_path);
  c.test_fraction = j.value("test_fraction", d.test_fraction);
  c.standardize = j.value("standardize", d.standardize);
  if (!(c.test_fraction > 0.0 && c.test_fraction < 1.0)) throw ConfigError("dataset.test_fraction must be in (0, 1)");
}

Split load_dataset(const DatasetConfig& c, std::uint64_t seed) {
  Dataset all;
  if (c.kind == "two_moons") {
    all = two_moons(c.n, c.noise, seed);
  } else if (c.kind == "blobs") {
    all = gaussian_blobs(c.n, c.dim, c.classes, c.separation, seed);
  } else if (c.kind == "toy_sine") {
    all = toy_sine(seed);
  } else if (c.kind == "csv") {
    all = load_csv_labeled(c.path);
  } else if (c.kind == "idx") {
    all = load_idx(c.path, c.labels_path);
  } else {
    throw ConfigError("unknown dataset kind '" + c.kind + "'");
  }
  const Index n_train = std::max<Index>(
      1, std::min<Index>(all.size() - 1, static_cast<Index>(std::llround((1.0 - c.test_fraction) * all.size()))));
  Split split = split_dataset(all, n_train, stream_seed(seed, 1));
  if (c.standardize) {
    const Standardizer s = Standardizer::fit(split.train);
    s.apply(split.train);
    s.apply(split.test);
  }
  return split;
}

namespace {

// --- config plumbing ---------------------------------------------------------

void strip_nested_seeds(json& j, bool top) {
  if (!j.is_object()) return;
  if (!top) j.erase("seed");
  for (auto& [key, value] : j.items()) strip_nested_seeds(value, false);
}

void check_keys(const json& given, const json& defaults, const std::string& prefix) {
  if (!given.is_object()) throw ConfigError("config section '" + prefix + "' must be an object");
  for (const auto& [key, value] : given.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!defaults.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    if (defaults.at(key).is_object()) check_keys(value, defaults.at(key), path);
  }
}

json parse_value(const std::string& text) {
  json v = json::parse(text, nullptr, false);
  if (v.is_discarded()) return text;
  return v;
}

json train_defaults() {
  json t = TrainConfig{};
  return t;
}

json cov_heatmap_defaults() {
  DatasetConfig data;
  json train = train_defaults();
  return {{"mode", "local-trained"},
          {"depth", 5},
          {"width", 16},
          {"alpha", 0.1},
          {"dataset", data},
          {"prior_std", 0.23},
          {"train", train},
          {"n_samples", 10000},
          {"anchor_index", 0},
          {"multimodal_entries", 16},
          {"seed", 0}};
}

json depth_gap_defaults() {
  GapSweepConfig c;
  c.mfvi.epochs = 100;
  c.mfvi.learning_rate = 1e-2;
  c.hmc.n_leapfrog = 50;
  c.hmc.burn_in_steps = 200 * 50;
  return c;
}

json mvg_defaults() {
  return {{"m", 2}, {"p", 3}, {"q", 3}, {"n", 2}, {"n_samples", 1000000}, {"tolerance_se", 5.0}, {"seed", 0}};
}

json uat_defaults() {
  json j = UatDemoConfig{};
  return j;
}

json train_command_defaults() {
  DatasetConfig data;
  data.kind = "two_moons";
  data.n = 1000;
  data.test_fraction = 0.2;
  data.standardize = false;
  TrainConfig tc;
  tc.learning_rate = 1e-2;
  tc.epochs = 40;
  return {{"hidden", {16, 16}},
          {"activation", "leaky_relu"},
          {"alpha", 0.1},
          {"dataset", data},
          {"prior_std", 1.0},
          {"train", tc},
          {"seed", 0}};
}

json prior_density_defaults() {
  return {{"depths", {1, 2, 3, 4, 5, 6, 7}}, {"width", 16}, {"sigma", 0.23},
          {"n", 100000},                      {"bins", 200}, {"seed", 0}};
}

const std::map<std::string, std::function<json()>>& registry() {
  static const std::map<std::string, std::function<json()>> r{
      {"cov-heatmap", cov_heatmap_defaults}, {"depth-gap", depth_gap_defaults}, {"mvg-check", mvg_defaults},
      {"uat-demo", uat_defaults},           {"train", train_command_defaults}, {"prior-density", prior_density_defaults}};
  return r;
}

fs::path in(const RunContext& ctx, const std::string& name) { return ctx.out / name; }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

TrainConfig train_config(const json& j, std::uint64_t seed) {
  TrainConfig tc = j.get<TrainConfig>();
  tc.seed = seed;
  return tc;
}

// --- commands ----------------------------------------------------------------

CommandResult cmd_cov_heatmap(const json& cfg, const RunContext& ctx) {
  CommandResult res;
  const std::string mode = cfg.at("mode");
  const int depth = cfg.at("depth");
  const int width = cfg.at("width");
  const std::uint64_t seed = cfg.at("seed");
  if (mode != "linear-analytic" && mode != "linear-trained" && mode != "local-trained") {
    throw ConfigError("mode must be linear-analytic, linear-trained or local-trained");
  }
  if (depth < 1 || width < 1) throw ConfigError("depth and width must be positive");
  const Split data = load_dataset(cfg.at("dataset").get<DatasetConfig>(), stream_seed(seed, 1));
  if (data.train.task != Task::classification) throw ConfigError("cov-heatmap needs a classification dataset");

  NetworkSpec spec;
  spec.widths.push_back(static_cast<int>(data.train.dim()));
  for (int l = 1; l < depth; ++l) spec.widths.push_back(width);
  spec.widths.push_back(data.train.num_classes);
  spec.activation = mode == "local-trained" ? ActivationSpec::leaky_relu(cfg.at("alpha")) : ActivationSpec::linear();
  const TrainResult tr = train(spec, data.train, PriorSpec::isotropic(depth, cfg.at("prior_std")),
                               train_config(cfg.at("train"), stream_seed(seed, 2)));
  const MeanFieldPosterior& q = tr.posterior;
  const Index n_samples = cfg.at("n_samples");
  const double acc = predictive_accuracy(q, data.test, 16, stream_seed(seed, 3));

  LocalCovReport report;
  json summary = {{"mode", mode}, {"depth", depth}, {"width", width}, {"test_accuracy", acc}};
  if (mode == "linear-analytic") {
    const ProductMoments pm = cov_product(q.weight_layers());
    report.mean = pm.mean;
    report.cov = pm.cov;
  } else if (mode == "linear-trained") {
    const std::vector<MeanFieldLayer> layers = q.weight_layers();
    const MatrixXd flat = mc_product_samples(layers, n_samples, stream_seed(seed, 4), ctx.jobs);
    report = empirical_cov(flat, layers.back().rows(), layers.front().cols());
  } else {
    const Index anchor = cfg.at("anchor_index");
    if (anchor < 0 || anchor >= data.test.size()) throw ConfigError("anchor_index outside the test set");
    const VectorXd x = data.test.inputs.row(anchor).transpose();
    const auto samples = sample_local_products(spec, q, x, n_samples, stream_seed(seed, 4), ctx.jobs);
    report = empirical_cov(samples, x);
    const Index dim = report.cov.dim();
    const Index want = std::min<Index>(dim, cfg.at("multimodal_entries").get<Index>());
    std::vector<Index> entries;
    for (Index e = 0; e < want; ++e) entries.push_back(e * dim / std::max<Index>(1, want));
    flag_multimodal(report, flatten_samples(samples), entries, stream_seed(seed, 5));
    summary["multimodal_entries"] = std::count(report.multimodal.begin(), report.multimodal.end(), true);
    summary["checked_entries"] = entries.size();
    const ActivationStats st = activation_stats(spec, q, data.test, 100, stream_seed(seed, 6));
    summary["mean_on_fraction"] = st.mean_on_fraction;
    summary["sd_on_fraction"] = st.sd_on_fraction;
    summary["all_off_events"] = st.all_off_events;
  }
  report.n_samples = mode == "linear-analytic" ? 0 : n_samples;
  const double off = report.cov.max_abs_off_diagonal(), diag = report.cov.max_diagonal();
  summary["max_abs_off_diagonal"] = off;
  summary["max_diagonal"] = diag;
  summary["off_diagonal_ratio"] = diag > 0.0 ? off / diag : 0.0;

  const std::string stem = "cov_" + mode + "_L" + std::to_string(depth);
  for (const fs::path& p : write_cov_report(in(ctx, stem), report, cfg, seed)) res.files.push_back(p);
  write_history_csv(in(ctx, stem + "_history.csv"), tr.history);
  write_json(in(ctx, stem + "_summary.json"), summary);
  write_sidecar(in(ctx, stem + "_history.csv"), cfg, seed);
  write_sidecar(in(ctx, stem + "_summary.json"), cfg, seed);
  res.files.push_back(in(ctx, stem + "_history.csv"));
  res.files.push_back(in(ctx, stem + "_summary.json"));
  res.lines.push_back("cov-heatmap " + mode + " L=" + std::to_string(depth) + " max|offdiag|=" + fmt("%.6g", off) +
                      " max diag=" + fmt("%.6g", diag) + " test acc=" + fmt("%.4f", acc));
  return res;
}

CommandResult cmd_depth_gap(const json& cfg, const RunContext& ctx) {
  CommandResult res;
  const GapSweepConfig c = cfg.get<GapSweepConfig>();
  const GapReport report = depth_gap_sweep(c, ctx.jobs);
  report.write_csv(in(ctx, "gap.csv"));
  write_sidecar(in(ctx, "gap.csv"), cfg, c.seed);
  json errors = json::array();
  for (const GapRecord& r : report.records) {
    if (r.error.empty()) continue;
    const std::string cell = "depth " + std::to_string(r.depth) + " restart " + std::to_string(r.restart);
    res.failures.push_back(cell + ": " + r.error);
    errors.push_back({{"depth", r.depth}, {"restart", r.restart}, {"error", r.error}});
  }
  write_json(in(ctx, "gap_summary.json"), {{"summary", report.summary()}, {"errors", errors}});
  write_sidecar(in(ctx, "gap_summary.json"), cfg, c.seed);
  res.files = {in(ctx, "gap.csv"), in(ctx, "gap_summary.json")};
  for (int d : c.depths) {
    std::vector<double> ew = report.metric(d, "e_w"), ekl = report.metric(d, "e_kl"), acc = report.metric(d, "test_acc");
    auto median = [](std::vector<double> v) {
      if (v.empty()) return std::nan("");
      std::sort(v.begin(), v.end());
      const std::size_t m = v.size() / 2;
      return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
    };
    res.lines.push_back("depth " + std::to_string(d) + ": median E_W=" + fmt("%.6g", median(ew)) +
                        " median E_KL=" + fmt("%.6g", median(ekl)) + " median acc=" + fmt("%.4f", median(acc)) +
                        " cells=" + std::to_string(ew.size()));
  }
  return res;
}

CommandResult cmd_mvg_check(const json& cfg, const RunContext& ctx) {
  CommandResult res;
  const int m = cfg.at("m"), p = cfg.at("p"), q = cfg.at("q"), n = cfg.at("n");
  const Index samples = cfg.at("n_samples");
  const double tol = cfg.at("tolerance_se");
  const std::uint64_t seed = cfg.at("seed");
  if (m < 1 || p < 1 || q < 1 || n < 1 || samples < 2) throw ConfigError("mvg-check sizes must be positive");
  Rng rng = make_rng(seed, 0);
  NormalSampler normal;
  auto draw = [&](int r, int c) {
    MatrixXd x(r, c);
    for (Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
    return x;
  };
  MVGFactors f{draw(m, p), draw(q, n), draw(p, q)};
  const ProductMoments analytic = mvg_product(f);
  // Same product as three mean-field layers: C first, then B, then A.
  const std::vector<MeanFieldLayer> layers{MeanFieldLayer::near_deterministic(f.C),
                                           MeanFieldLayer{f.mu_B, MatrixXd::Ones(p, q)},
                                           MeanFieldLayer::near_deterministic(f.A)};
  const ProductMoments recursion = cov_product(layers);
  const MatrixXd flat = mc_product_samples(layers, samples, stream_seed(seed, 1), ctx.jobs);

  const Index dim = flat.cols();
  const VectorXd mean = flat.colwise().mean().transpose();
  const MatrixXd centred = flat.rowwise() - mean.transpose();
  const MatrixXd cov = centred.transpose() * centred / static_cast<double>(samples - 1);
  double worst_z = 0.0, worst_rel = 0.0;
  MatrixXd table(dim * dim, 4);
  for (Index a = 0; a < dim; ++a) {
    for (Index b = 0; b < dim; ++b) {
      const VectorXd prod = centred.col(a).cwiseProduct(centred.col(b));
      const double sd = std::sqrt((prod.array() - prod.mean()).square().sum() / static_cast<double>(samples - 1));
      const double se = sd / std::sqrt(static_cast<double>(samples));
      const double truth = analytic.cov.flat()(a, b);
      const double z = se > 0.0 ? std::abs(cov(a, b) - truth) / se : 0.0;
      worst_z = std::max(worst_z, z);
      const double scale = std::sqrt(analytic.cov.flat()(a, a) * analytic.cov.flat()(b, b));
      if (scale > 0.0) worst_rel = std::max(worst_rel, std::abs(cov(a, b) - truth) / scale);
      table.row(a * dim + b) << truth, cov(a, b), se, z;
    }
  }
  const double recursion_gap = (recursion.cov.flat() - analytic.cov.flat()).cwiseAbs().maxCoeff() /
                               std::max(1e-300, analytic.cov.flat().cwiseAbs().maxCoeff());
  const bool pass = worst_z < tol && recursion_gap < 1e-8;
  write_csv(in(ctx, "mvg_check.csv"), {"analytic", "empirical", "se", "z"}, table);
  write_sidecar(in(ctx, "mvg_check.csv"), cfg, seed);
  write_json(in(ctx, "mvg_check.json"), {{"pass", pass},
                                         {"max_z", worst_z},
                                         {"max_relative_deviation", worst_rel},
                                         {"recursion_relative_gap", recursion_gap},
                                         {"n_samples", samples}});
  write_sidecar(in(ctx, "mvg_check.json"), cfg, seed);
  res.files = {in(ctx, "mvg_check.csv"), in(ctx, "mvg_check.json")};
  res.lines.push_back(std::string(pass ? "PASS" : "FAIL") + " mvg-check max relative deviation " +
                      fmt("%.3e", worst_rel) + " max z " + fmt("%.3f", worst_z));
  if (!pass) res.failures.push_back("empirical covariance outside tolerance");
  return res;
}

CommandResult cmd_uat_demo(const json& cfg, const RunContext& ctx) {
  CommandResult res;
  const UatDemoConfig c = cfg.get<UatDemoConfig>();
  const UatDemoResult r = run_uat_demo(c);
  write_uat_outputs(in(ctx, "uat"), r, c);
  res.files = {in(ctx, "uat_target.csv"), in(ctx, "uat_induced.csv"), in(ctx, "uat_ks.json")};
  res.lines.push_back("uat-demo KS=" + fmt("%.5f", r.ks) + " n=" + std::to_string(r.outputs.size()) +
                      " gmm components=" + std::to_string(r.gmm_k) + " fit rmse=" + fmt("%.4g", r.mapper.rmse));
  if (r.mapper.warning) res.lines.push_back("warning: mapper fit rmse above threshold");
  return res;
}

CommandResult cmd_train(const json& cfg, const RunContext& ctx) {
  CommandResult res;
  const std::uint64_t seed = cfg.at("seed");
  const DatasetConfig dc = cfg.at("dataset").get<DatasetConfig>();
  const Split data = load_dataset(dc, stream_seed(seed, 1));
  const bool regression = data.train.task == Task::regression;
  NetworkSpec spec;
  spec.widths.push_back(static_cast<int>(data.train.dim()));
  for (int h : cfg.at("hidden").get<std::vector<int>>()) spec.widths.push_back(h);
  spec.widths.push_back(regression ? 1 : data.train.num_classes);
  spec = json{{"widths", spec.widths}, {"activation", cfg.at("activation")}, {"alpha", cfg.at("alpha")}}
             .get<NetworkSpec>();
  TrainConfig tc = train_config(cfg.at("train"), stream_seed(seed, 2));
  if (regression) tc.likelihood = LikelihoodKind::gaussian;
  const TrainResult tr = train(spec, data.train, PriorSpec::isotropic(spec.num_layers(), cfg.at("prior_std")), tc);
  write_json(in(ctx, "train_checkpoint.json"), tr.posterior);
  write_sidecar(in(ctx, "train_checkpoint.json"), cfg, seed);
  write_history_csv(in(ctx, "train_history.csv"), tr.history);
  write_sidecar(in(ctx, "train_history.csv"), cfg, seed);
  json metrics = {{"final_neg_elbo", tr.history.empty() ? 0.0 : tr.history.back().neg_elbo}};
  std::string line = "train epochs=" + std::to_string(tc.epochs);
  if (regression) {
    const auto outs = predict_batch(tr.posterior, data.test.features(), tc.n_test_samples, stream_seed(seed, 3));
    VectorXd mean = VectorXd::Zero(data.test.size());
    for (const MatrixXd& o : outs) mean += o.row(0).transpose();
    mean /= static_cast<double>(outs.size());
    const double rmse = std::sqrt((mean - data.test.targets).squaredNorm() / static_cast<double>(data.test.size()));
    metrics["test_rmse"] = rmse;
    line += " test rmse=" + fmt("%.5f", rmse);
  } else {
    const double acc = predictive_accuracy(tr.posterior, data.test, tc.n_test_samples, stream_seed(seed, 3));
    metrics["test_accuracy"] = acc;
    line += " test acc=" + fmt("%.4f", acc);
  }
  write_json(in(ctx, "train_metrics.json"), metrics);
  write_sidecar(in(ctx, "train_metrics.json"), cfg, seed);
  res.files = {in(ctx, "train_checkpoint.json"), in(ctx, "train_history.csv"), in(ctx, "train_metrics.json")};
  res.lines.push_back(line);
  return res;
}

CommandResult cmd_prior_density(const json& cfg, const RunContext& ctx) {
  CommandResult res;
  const std::uint64_t seed = cfg.at("seed");
  const int width = cfg.at("width");
  const double sigma = cfg.at("sigma");
  const Index n = cfg.at("n");
  const int bins = cfg.at("bins");
  if (bins < 1 || n < 2) throw ConfigError("prior-density needs bins >= 1 and n >= 2");
  json stats = json::array();
  for (int depth : cfg.at("depths").get<std::vector<int>>()) {
    const VectorXd v = prior_element_density(depth, width, sigma, n, stream_seed(seed, static_cast<std::uint64_t>(depth)));
    // Entry variance K^(L-1) sigma^(2L).
    const double sd = std::sqrt(std::pow(static_cast<double>(width), depth - 1) * std::pow(sigma, 2.0 * depth));
    const double lo = -5.0 * sd, hi = 5.0 * sd, step = (hi - lo) / bins;
    VectorXd counts = VectorXd::Zero(bins);
    for (Index i = 0; i < v.size(); ++i) {
      if (v[i] < lo || v[i] >= hi) continue;
      counts[std::min(bins - 1, static_cast<int>((v[i] - lo) / step))] += 1.0;
    }
    MatrixXd table(bins, 3);
    for (int b = 0; b < bins; ++b) {
      const double x = lo + (b + 0.5) * step;
      table(b, 0) = x;
      table(b, 1) = counts[b] / (static_cast<double>(n) * step);
      table(b, 2) = std::exp(-0.5 * x * x / (sd * sd)) / (sd * std::sqrt(2.0 * M_PI));
    }
    const std::string name = "prior_density_L" + std::to_string(depth) + ".csv";
    write_csv(in(ctx, name), {"x", "density", "gaussian"}, table);
    write_sidecar(in(ctx, name), cfg, seed);
    res.files.push_back(in(ctx, name));
    const double mean = v.mean();
    const double var = (v.array() - mean).square().mean();
    const double kurt = (v.array() - mean).pow(4).mean() / (var * var) - 3.0;
    stats.push_back({{"depth", depth}, {"variance", var}, {"expected_variance", sd * sd}, {"excess_kurtosis", kurt}});
    res.lines.push_back("prior-density L=" + std::to_string(depth) + " variance=" + fmt("%.6g", var) +
                        " excess kurtosis=" + fmt("%.4f", kurt));
  }
  write_json(in(ctx, "prior_density_summary.json"), stats);
  write_sidecar(in(ctx, "prior_density_summary.json"), cfg, seed);
  res.files.push_back(in(ctx, "prior_density_summary.json"));
  return res;
}

}  // namespace

std::vector<std::string> command_names() {
  std::vector<std::string> names;
  for (const auto& [name, fn] : registry()) names.push_back(name);
  return names;
}

json default_config(const std::string& command) {
  const auto it = registry().find(command);
  if (it == registry().end()) throw ConfigError("unknown command '" + command + "'");
  json j = it->second();
  strip_nested_seeds(j, true);
  return j;
}

json resolve_config(const std::string& command, const json& file, const std::vector<std::string>& overrides) {
  const json defaults = default_config(command);
  json cfg = defaults;
  if (!file.is_null()) {
    check_keys(file, defaults, "");
    cfg.merge_patch(file);
  }
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "' is not key=value");
    const std::string key = o.substr(0, eq);
    json patch = parse_value(o.substr(eq + 1));
    std::size_t end = key.size();
    while (true) {
      const std::size_t dot = key.rfind('.', end - 1);
      const std::size_t start = dot == std::string::npos ? 0 : dot + 1;
      patch = json{{key.substr(start, end - start), patch}};
      if (dot == std::string::npos) break;
      end = dot;
    }
    check_keys(patch, defaults, "");
    cfg.merge_patch(patch);
  }
  return cfg;
}

CommandResult run_command(const std::string& command, const json& config, const RunContext& context) {
  check_keys(config, default_config(command), "");
  fs::create_directories(context.out);
  write_json(context.out / (command + ".config.json"), config);
  CommandResult res;
  if (command == "cov-heatmap") {
    res = cmd_cov_heatmap(config, context);
  } else if (command == "depth-gap") {
    res = cmd_depth_gap(config, context);
  } else if (command == "mvg-check") {
    res = cmd_mvg_check(config, context);
  } else if (command == "uat-demo") {
    res = cmd_uat_demo(config, context);
  } else if (command == "train") {
    res = cmd_train(config, context);
  } else if (command == "prior-density") {
    res = cmd_prior_density(config, context);
  } else {
    throw ConfigError("unknown command '" + command + "'");
  }
  res.files.insert(res.files.begin(), context.out / (command + ".config.json"));
  return res;
}

}  // namespace mfdl
