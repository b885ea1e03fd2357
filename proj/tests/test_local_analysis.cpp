#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "mc_oracle.hpp"
#include "mfdl/errors.hpp"
#include "mfdl/local_analysis.hpp"
#include "ulp.hpp"

using namespace mfdl;
namespace fs = std::filesystem;

namespace {

VectorXd random_vector(Index n, Rng& rng, NormalSampler& normal) {
  VectorXd v(n);
  for (Index i = 0; i < n; ++i) v[i] = normal(rng);
  return v;
}

NetworkSpec random_spec(Rng& rng, ActivationSpec act) {
  const int depth = 1 + static_cast<int>(rng() % 5);
  std::vector<int> widths{1 + static_cast<int>(rng() % 6)};
  for (int l = 0; l < depth; ++l) widths.push_back(1 + static_cast<int>(rng() % 10));
  return {widths, act, true};
}

// Covariance of vec of the top `keep` rows of an augmented product.
MatrixXd top_rows_cov(const CovTensor4& full, Index keep) {
  const Index cols = full.cols();
  MatrixXd out(keep * cols, keep * cols);
  for (Index b = 0; b < cols; ++b) {
    for (Index a = 0; a < keep; ++a) {
      for (Index d = 0; d < cols; ++d) {
        for (Index c = 0; c < keep; ++c) out(a + b * keep, c + d * keep) = full(a, b, c, d);
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("linear activation gives the plain weight product") {
  const NetworkSpec spec{{3, 4, 5, 2}, ActivationSpec::linear(), false};
  Rng rng = make_rng(1);
  NormalSampler normal;
  const VectorXd theta = random_vector(ParamLayout(spec).size(), rng, normal);
  const auto layers = unflatten(ParamLayout(spec), theta);
  const MatrixXd plain = layers[2].weight * layers[1].weight * layers[0].weight;
  const auto a = local_product_matrix(spec, theta, random_vector(3, rng, normal));
  const auto b = local_product_matrix(spec, theta, random_vector(3, rng, normal));
  CHECK((a.P - plain).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(a.P == b.P);
}

TEST_CASE("all-on relu pattern gives the plain affine product") {
  const NetworkSpec spec{{2, 3, 3, 1}, ActivationSpec::relu(), true};
  const ParamLayout layout(spec);
  Rng rng = make_rng(2);
  VectorXd theta(layout.size());
  for (Index i = 0; i < theta.size(); ++i) theta[i] = 0.1 + NormalSampler::uniform(rng);
  const VectorXd x = (VectorXd(2) << 0.5, 1.5).finished();
  const auto s = local_product_matrix(spec, theta, x);
  for (const auto& m : s.pattern.multipliers) CHECK(m.minCoeff() == 1.0);
  const auto L = unflatten(layout, theta);
  MatrixXd W = L[2].weight * L[1].weight * L[0].weight;
  VectorXd c = L[2].weight * (L[1].weight * L[0].bias + L[1].bias) + L[2].bias;
  CHECK((s.P.leftCols(2) - W).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(std::abs(s.P(0, 2) - c[0]) < 1e-12);
}

TEST_CASE("local product reproduces the forward pass to a few ulps") {
  Rng rng = make_rng(3);
  NormalSampler normal;
  std::uint64_t worst = 0;
  for (int t = 0; t < 1000; ++t) {
    const NetworkSpec spec = random_spec(rng, ActivationSpec::leaky_relu(0.1));
    const VectorXd theta = random_vector(ParamLayout(spec).size(), rng, normal);
    const VectorXd x = random_vector(spec.input_dim(), rng, normal);
    const LocalProductSample s = local_product_matrix(spec, theta, x);
    const VectorXd f = forward(spec, theta, x).output;
    const VectorXd p = apply_local_product(s, x);
    for (Index i = 0; i < f.size(); ++i) worst = std::max(worst, testing::ulp_distance(f[i], p[i]));

    // Nearby inputs on the same linear piece.
    const VectorXd x2 = x + 1e-7 * random_vector(x.size(), rng, normal);
    const ForwardResult f2 = forward(spec, theta, x2);
    if (f2.pattern == s.pattern) {
      const VectorXd p2 = apply_local_product(s, x2);
      for (Index i = 0; i < p2.size(); ++i) CHECK(testing::ulp_distance(f2.output[i], p2[i]) <= 4);
    }
  }
  CHECK(worst <= 4);
}

TEST_CASE("sampled local products") {
  const NetworkSpec spec{{2, 6, 6, 2}, ActivationSpec::leaky_relu(0.1), true};
  const MeanFieldPosterior q = MeanFieldPosterior::initialize(spec, 0.2, 3);
  const VectorXd x = (VectorXd(2) << 0.3, -0.2).finished();

  const auto a = sample_local_products(spec, q, x, 300, 5, 1);
  const auto b = sample_local_products(spec, q, x, 300, 5, 4);
  REQUIRE(a.size() == 300);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].P == b[i].P);

  const MeanFieldPosterior tight = MeanFieldPosterior::from_means(spec, q.mu, 1e-12);
  const auto c = sample_local_products(spec, tight, x, 50, 1);
  for (const auto& s : c) CHECK((s.P - c.front().P).cwiseAbs().maxCoeff() < 1e-9);
  CHECK_THROWS(sample_local_products(spec, q, x, 0, 1));
}

TEST_CASE("linear activation matches the analytic product covariance") {
  const NetworkSpec spec{{2, 3, 2}, ActivationSpec::linear(), true};
  MeanFieldPosterior q = MeanFieldPosterior::initialize(spec, 0.3, 8);
  q.mu.array() += 0.2;
  const auto samples = sample_local_products(spec, q, VectorXd::Constant(2, 0.7), 100000, 9, 4);
  const MatrixXd flat = flatten_samples(samples);
  const auto mc = testing::mc_moments(flat);

  const ProductMoments analytic = cov_product(q.augmented_layers());
  const Index keep = spec.output_dim();
  const MatrixXd cov = top_rows_cov(analytic.cov, keep);
  CHECK(testing::max_standardized_error(cov, mc.cov, mc.cov_se, 1e-9) < 5.0);
  const MatrixXd mean = analytic.mean.topRows(keep);
  for (Index k = 0; k < mean.size(); ++k) {
    CHECK(std::abs(vec(mean)[k] - mc.mean[k]) < 5.0 * mc.mean_se[k]);
  }
}

TEST_CASE("empirical covariance") {
  SUBCASE("identical samples") {
    MatrixXd flat = MatrixXd::Ones(10, 4);
    const LocalCovReport r = empirical_cov(flat, 2, 2);
    CHECK(r.cov.flat().cwiseAbs().maxCoeff() == 0.0);
    CHECK(r.mean(1, 1) == 1.0);
    CHECK_THROWS(empirical_cov(flat.topRows(1), 2, 2));
  }
  SUBCASE("known Gaussian over 2x2 matrices") {
    MatrixXd A(4, 4);
    A << 1.0, 0.0, 0.0, 0.0, 0.5, 1.0, 0.0, 0.0, -0.3, 0.2, 0.7, 0.0, 0.1, 0.4, -0.2, 0.5;
    const MatrixXd Sigma = A * A.transpose();
    Rng rng = make_rng(4);
    NormalSampler normal;
    MatrixXd flat(50000, 4);
    for (Index i = 0; i < flat.rows(); ++i) flat.row(i) = (A * random_vector(4, rng, normal)).transpose();
    const LocalCovReport r = empirical_cov(flat, 2, 2);
    const auto mc = testing::mc_moments(flat);
    CHECK(testing::max_standardized_error(Sigma, r.cov.flat(), mc.cov_se) < 5.0);
  }
  SUBCASE("one pass and two pass agree") {
    Rng rng = make_rng(6);
    NormalSampler normal;
    MatrixXd flat(2000, 6);
    for (Index i = 0; i < flat.size(); ++i) flat.data()[i] = 3.0 + normal(rng) * (1 + i % 3);
    const LocalCovReport a = empirical_cov(flat, 3, 2);
    const LocalCovReport b = empirical_cov_one_pass(flat, 3, 2);
    const double scale = a.cov.flat().cwiseAbs().maxCoeff();
    CHECK((a.cov.flat() - b.cov.flat()).cwiseAbs().maxCoeff() <= 1e-10 * scale);
    CHECK((a.mean - b.mean).cwiseAbs().maxCoeff() <= 1e-10 * a.mean.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("multimodal entries are flagged") {
  Rng rng = make_rng(7);
  NormalSampler normal;
  MatrixXd flat(4000, 2);
  for (Index i = 0; i < flat.rows(); ++i) {
    flat(i, 0) = normal(rng);
    flat(i, 1) = (i % 2 ? 4.0 : -4.0) + normal(rng);
  }
  LocalCovReport r = empirical_cov(flat, 2, 1);
  flag_multimodal(r, flat, {0, 1}, 1);
  CHECK_FALSE(r.multimodal[0]);
  CHECK(r.multimodal[1]);
}

TEST_CASE("activation statistics") {
  const Dataset data = two_moons(50, 0.1, 0);
  SUBCASE("linear") {
    const NetworkSpec spec{{2, 5, 5, 2}, ActivationSpec::linear(), true};
    const auto st = activation_stats(spec, MeanFieldPosterior::initialize(spec, 0.1, 0), data, 4, 1);
    CHECK(st.mean_on_fraction == 1.0);
    CHECK(st.all_off_events == 0);
  }
  SUBCASE("forced all-off relu") {
    const NetworkSpec spec{{2, 5, 5, 2}, ActivationSpec::relu(), false};
    Dataset pos = data;
    pos.inputs = pos.inputs.cwiseAbs().array() + 0.1;
    const Index P = ParamLayout(spec).size();
    const auto q = MeanFieldPosterior::from_means(spec, VectorXd::Constant(P, -1.0), 1e-3);
    const auto st = activation_stats(spec, q, pos, 7, 2);
    CHECK(st.layer_on_fraction[0] == 0.0);
    CHECK(st.all_off_events == 7 * 50);
    CHECK(st.events == 7 * 50);
  }
}

TEST_CASE("region count bound") {
  CHECK(region_count_bound({{2, 3, 1}, ActivationSpec::relu(), true}) == 7);
  CHECK(region_count_bound({{1, 1, 1, 1, 1}, ActivationSpec::relu(), true}) == 2);
  CHECK(region_count_bound({{2, 4, 6, 1}, ActivationSpec::relu(), true}) == 88);
  CHECK(region_count_bound({{5, 2, 1}, ActivationSpec::relu(), true}) == 4);
  CHECK(region_count_bound({{3, 1}, ActivationSpec::relu(), true}) >= 1);
  // 784-d input, three hidden layers of 1000: far beyond 64 bits.
  const BigInt big = region_count_bound({{784, 1000, 1000, 1000, 10}, ActivationSpec::relu(), true});
  CHECK(big > BigInt(std::numeric_limits<std::uint64_t>::max()));
  CHECK(big % BigInt(1) == 0);
}

TEST_CASE("trained leaky net shows off-diagonal and multimodal structure") {
  const NetworkSpec spec{{2, 16, 16, 2}, ActivationSpec::leaky_relu(0.1), true};
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.learning_rate = 1e-2;
  const auto q = train(spec, two_moons(1000, 0.1, 1), PriorSpec::isotropic(3, 1.0), cfg).posterior;
  const VectorXd x = (VectorXd(2) << 0.5, 0.25).finished();
  const auto samples = sample_local_products(spec, q, x, 10000, 3, 4);
  const MatrixXd flat = flatten_samples(samples);
  LocalCovReport r = empirical_cov(samples, x);
  MESSAGE("max off-diagonal " << r.cov.max_abs_off_diagonal() << ", max diagonal " << r.cov.max_diagonal());
  CHECK(r.cov.max_abs_off_diagonal() > 0.1 * r.cov.max_diagonal());

  Rng rng = make_rng(11);
  std::vector<Index> entries;
  for (int i = 0; i < 20; ++i) entries.push_back(static_cast<Index>(rng() % static_cast<std::uint64_t>(flat.cols())));
  flag_multimodal(r, flat, entries, 5);
  const auto flagged = std::count(r.multimodal.begin(), r.multimodal.end(), true);
  MESSAGE(flagged << " of 20 entries flagged");
  CHECK(flagged >= 1);

  const fs::path dir = fs::temp_directory_path() / "mfdl_test_local";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto paths = write_cov_report(dir / "local", r, {{"n", 10000}}, 3);
  for (const auto& p : paths) CHECK(fs::exists(p));
  const auto anchor = nlohmann::json::parse(std::ifstream(dir / "local_anchor.json"));
  CHECK(anchor["anchor"][1] == 0.25);

  const auto st = activation_stats(spec, q, two_moons(200, 0.1, 2), 100, 4);
  MESSAGE("on fraction " << st.mean_on_fraction << " +- " << st.sd_on_fraction << ", all-off " << st.all_off_events);
  CHECK(st.mean_on_fraction > 0.0);
  CHECK(st.mean_on_fraction < 1.0);
}
