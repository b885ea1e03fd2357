#include "mfdl/local_analysis.hpp"

#include <cmath>

#include "mfdl/errors.hpp"
#include "mfdl/gmm.hpp"
#include "mfdl/random.hpp"
#include "dd.hpp"
#include "parallel.hpp"

namespace mfdl {

LocalProductSample local_product_matrix(const NetworkSpec& spec, const VectorXd& theta, const VectorXd& x,
                                        std::uint64_t theta_ref) {
  using detail::DD;
  const ParamLayout layout(spec);
  LocalProductSample out;
  out.pattern = forward(spec, theta, x).pattern;
  out.theta_ref = theta_ref;
  const Index n0 = spec.input_dim();
  const bool bias = spec.has_bias;
  const Index cols = n0 + (bias ? 1 : 0);

  // Column-major DD matrix, rows x cols.
  Index rows = spec.widths[1];
  std::vector<DD> P(static_cast<std::size_t>(rows * cols));
  {
    const auto W = layout.weight(theta, 0);
    for (Index j = 0; j < n0; ++j) {
      for (Index i = 0; i < rows; ++i) P[i + j * rows] = {W(i, j), 0.0};
    }
    if (bias) {
      const auto b = layout.bias(theta, 0);
      for (Index i = 0; i < rows; ++i) P[i + n0 * rows] = {b[i], 0.0};
    }
  }
  for (int l = 1; l < spec.num_layers(); ++l) {
    const VectorXd& m = out.pattern.multipliers[l - 1];
    for (Index j = 0; j < cols; ++j) {
      for (Index i = 0; i < rows; ++i) P[i + j * rows] = P[i + j * rows] * m[i];
    }
    const auto W = layout.weight(theta, l);
    const auto b = layout.bias(theta, l);
    std::vector<DD> next(static_cast<std::size_t>(W.rows() * cols));
    for (Index j = 0; j < cols; ++j) {
      for (Index i = 0; i < W.rows(); ++i) {
        DD acc{bias && j == n0 ? b[i] : 0.0, 0.0};
        for (Index k = 0; k < rows; ++k) acc = acc + W(i, k) * P[k + j * rows];
        next[i + j * W.rows()] = acc;
      }
    }
    P = std::move(next);
    rows = W.rows();
  }
  out.P.resize(rows, cols);
  out.P_lo.resize(rows, cols);
  for (Index k = 0; k < rows * cols; ++k) {
    const DD r = detail::quick_two_sum(P[k].hi, P[k].lo);
    out.P.data()[k] = r.hi;
    out.P_lo.data()[k] = r.lo;
  }
  return out;
}

VectorXd apply_local_product(const LocalProductSample& sample, const VectorXd& x) {
  using detail::DD;
  const Index n0 = x.size();
  const Index cols = sample.P.cols();
  if (cols != n0 && cols != n0 + 1) throw ShapeError("input does not match the local product matrix");
  const bool has_lo = sample.P_lo.size() == sample.P.size();
  VectorXd out(sample.P.rows());
  for (Index i = 0; i < sample.P.rows(); ++i) {
    DD acc;
    for (Index j = 0; j < cols; ++j) {
      const DD p{sample.P(i, j), has_lo ? sample.P_lo(i, j) : 0.0};
      acc = acc + (j < n0 ? p * x[j] : p);
    }
    out[i] = acc.value();
  }
  return out;
}

std::vector<LocalProductSample> sample_local_products(const NetworkSpec& spec, const MeanFieldPosterior& q,
                                                      const VectorXd& x, Index n, std::uint64_t seed,
                                                      int threads) {
  if (n < 1) throw std::invalid_argument("need at least one sample");
  q.validate();
  if (x.size() != spec.input_dim()) throw ShapeError("anchor does not match the network input");
  std::vector<LocalProductSample> out(static_cast<std::size_t>(n));
  detail::for_each_block(n, threads, [&](Index, Index start, Index count) {
    for (Index i = start; i < start + count; ++i) {
      Rng rng = make_rng(seed, static_cast<std::uint64_t>(i));
      NormalSampler normal;
      out[i] = local_product_matrix(spec, q.sample(rng, normal), x, static_cast<std::uint64_t>(i));
    }
  });
  return out;
}

MatrixXd flatten_samples(const std::vector<LocalProductSample>& samples) {
  if (samples.empty()) return {};
  const Index dim = samples.front().P.size();
  MatrixXd flat(static_cast<Index>(samples.size()), dim);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].P.size() != dim) throw ShapeError("local product samples differ in shape");
    flat.row(static_cast<Index>(i)) = vec(samples[i].P).transpose();
  }
  return flat;
}

LocalCovReport empirical_cov(const std::vector<LocalProductSample>& samples, const VectorXd& anchor) {
  if (samples.size() < 2) throw std::invalid_argument("empirical covariance needs at least two samples");
  return empirical_cov(flatten_samples(samples), samples.front().P.rows(), samples.front().P.cols(), anchor);
}

LocalCovReport empirical_cov(const MatrixXd& flat, Index rows, Index cols, const VectorXd& anchor) {
  if (flat.rows() < 2) throw std::invalid_argument("empirical covariance needs at least two samples");
  if (flat.cols() != rows * cols) throw ShapeError("flattened samples do not match the matrix shape");
  LocalCovReport r;
  r.n_samples = flat.rows();
  r.anchor = anchor;
  const VectorXd mean = flat.colwise().mean().transpose();
  r.mean = Eigen::Map<const MatrixXd>(mean.data(), rows, cols);
  const MatrixXd centred = flat.rowwise() - mean.transpose();
  MatrixXd cov = (centred.transpose() * centred) / static_cast<double>(flat.rows() - 1);
  r.cov = CovTensor4(rows, cols);
  for (Index i = 0; i < cov.rows(); ++i) {
    for (Index j = i; j < cov.cols(); ++j) {
      const double v = 0.5 * (cov(i, j) + cov(j, i));
      r.cov.set(i % rows, i / rows, j % rows, j / rows, v);
    }
  }
  return r;
}

LocalCovReport empirical_cov_one_pass(const MatrixXd& flat, Index rows, Index cols) {
  if (flat.rows() < 2) throw std::invalid_argument("empirical covariance needs at least two samples");
  if (flat.cols() != rows * cols) throw ShapeError("flattened samples do not match the matrix shape");
  const Index dim = flat.cols();
  VectorXd mean = VectorXd::Zero(dim);
  MatrixXd m2 = MatrixXd::Zero(dim, dim);
  for (Index n = 0; n < flat.rows(); ++n) {
    const VectorXd delta = flat.row(n).transpose() - mean;
    mean += delta / static_cast<double>(n + 1);
    m2.noalias() += delta * (flat.row(n).transpose() - mean).transpose();
  }
  LocalCovReport r;
  r.n_samples = flat.rows();
  r.mean = Eigen::Map<const MatrixXd>(mean.data(), rows, cols);
  r.cov = CovTensor4(rows, cols);
  const double denom = static_cast<double>(flat.rows() - 1);
  for (Index i = 0; i < dim; ++i) {
    for (Index j = i; j < dim; ++j) r.cov.set(i % rows, i / rows, j % rows, j / rows, 0.5 * (m2(i, j) + m2(j, i)) / denom);
  }
  return r;
}

void flag_multimodal(LocalCovReport& report, const MatrixXd& flat, const std::vector<Index>& entries,
                     std::uint64_t seed) {
  report.multimodal.assign(static_cast<std::size_t>(flat.cols()), false);
  report.checked_entries = entries;
  for (std::size_t e = 0; e < entries.size(); ++e) {
    const Index idx = entries[e];
    if (idx < 0 || idx >= flat.cols()) throw std::out_of_range("entry index out of range");
    const GmmSelection sel = select_gmm(flat.col(idx), 4, stream_seed(seed, e));
    report.multimodal[idx] = sel.model.k() >= 2;
  }
}

ActivationStats activation_stats(const NetworkSpec& spec, const MeanFieldPosterior& q, const Dataset& data,
                                 Index n_theta, std::uint64_t seed) {
  if (data.size() < 1) throw std::invalid_argument("activation statistics need data");
  if (n_theta < 1) throw std::invalid_argument("need at least one weight sample");
  const int hidden = spec.num_layers() - 1;
  ActivationStats st;
  st.layer_on_fraction.assign(static_cast<std::size_t>(hidden), 0.0);
  const MatrixXd X = data.features();
  std::vector<double> fractions;
  fractions.reserve(static_cast<std::size_t>(n_theta * data.size()));
  std::vector<double> layer_on(static_cast<std::size_t>(hidden), 0.0);
  Index hidden_units = 0;
  for (int l = 0; l < hidden; ++l) hidden_units += spec.widths[l + 1];
  for (Index t = 0; t < n_theta; ++t) {
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(t));
    NormalSampler normal;
    ForwardCache cache;
    forward_batch(spec, q.sample(rng, normal), X, &cache);
    for (Index n = 0; n < X.cols(); ++n) {
      Index on = 0;
      bool all_off = false;
      for (int l = 0; l < hidden; ++l) {
        // Multiplier 1 marks the positive branch.
        const Index layer_count = (cache.multipliers[l].col(n).array() == 1.0).count();
        on += layer_count;
        layer_on[l] += static_cast<double>(layer_count);
        if (layer_count == 0) all_off = true;
      }
      if (spec.activation.kind == ActivationKind::linear) {
        on = hidden_units;
        all_off = false;
      }
      fractions.push_back(hidden_units ? static_cast<double>(on) / static_cast<double>(hidden_units) : 1.0);
      if (all_off) ++st.all_off_events;
    }
  }
  st.events = static_cast<Index>(fractions.size());
  const Eigen::Map<const VectorXd> f(fractions.data(), st.events);
  st.mean_on_fraction = f.mean();
  st.sd_on_fraction = st.events > 1 ? std::sqrt((f.array() - f.mean()).square().sum() / (st.events - 1)) : 0.0;
  for (int l = 0; l < hidden; ++l) {
    st.layer_on_fraction[l] = spec.activation.kind == ActivationKind::linear
                                  ? 1.0
                                  : layer_on[l] / static_cast<double>(st.events * spec.widths[l + 1]);
  }
  return st;
}

BigInt region_count_bound(const NetworkSpec& spec) {
  spec.validate();
  const int n0 = spec.input_dim();
  const int hidden = spec.num_layers() - 1;
  if (hidden < 1) return 1;
  BigInt bound = 1;
  for (int i = 1; i < hidden; ++i) {
    const int ratio = std::max(1, spec.widths[i] / n0);
    bound *= boost::multiprecision::pow(BigInt(ratio), static_cast<unsigned>(n0));
  }
  const int last = spec.widths[hidden];
  BigInt sum = 0, binom = 1;
  for (int j = 0; j <= std::min(n0, last); ++j) {
    sum += binom;
    binom = binom * (last - j) / (j + 1);
  }
  return bound * sum;
}

std::vector<std::filesystem::path> write_cov_report(const std::filesystem::path& stem, const LocalCovReport& report,
                                                    const nlohmann::json& config, std::uint64_t seed) {
  const auto with = [&](const std::string& suffix) {
    auto p = stem;
    p += suffix;
    return p;
  };
  std::vector<std::filesystem::path> paths{with("_cov.csv"), with("_cov.ppm"), with("_mean.csv"), with("_anchor.json")};
  const MatrixXd& cov = report.cov.flat();
  std::vector<std::string> header;
  for (Index j = 0; j < cov.cols(); ++j) header.push_back("v" + std::to_string(j));
  write_csv(paths[0], header, cov);
  write_heatmap_ppm(paths[1], cov);
  std::vector<std::string> mean_header;
  for (Index j = 0; j < report.mean.cols(); ++j) mean_header.push_back("c" + std::to_string(j));
  write_csv(paths[2], mean_header, report.mean);
  nlohmann::json anchor = nlohmann::json::object();
  anchor["anchor"] = std::vector<double>(report.anchor.data(), report.anchor.data() + report.anchor.size());
  anchor["n_samples"] = report.n_samples;
  anchor["rows"] = report.mean.rows();
  anchor["cols"] = report.mean.cols();
  std::vector<Index> flagged;
  for (std::size_t i = 0; i < report.multimodal.size(); ++i) {
    if (report.multimodal[i]) flagged.push_back(static_cast<Index>(i));
  }
  anchor["checked_entries"] = report.checked_entries;
  anchor["multimodal_entries"] = flagged;
  write_json(paths[3], anchor);
  for (const auto& p : paths) write_sidecar(p, config, seed);
  return paths;
}

}  // namespace mfdl
