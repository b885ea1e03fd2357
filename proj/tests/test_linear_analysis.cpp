#include <Eigen/Eigenvalues>
#include <cmath>

#include "doctest.h"
#include "mc_oracle.hpp"
#include "mfdl/errors.hpp"
#include "mfdl/linear_analysis.hpp"
#include "mfdl/random.hpp"

using namespace mfdl;
using mfdl::testing::max_standardized_error;
using mfdl::testing::mc_moments;

namespace {

MeanFieldLayer random_layer(Index rows, Index cols, Rng& rng, bool positive) {
  MeanFieldLayer l{MatrixXd(rows, cols), MatrixXd(rows, cols)};
  for (Index k = 0; k < l.mu.size(); ++k) {
    const double u = NormalSampler::uniform(rng);
    l.mu.data()[k] = positive ? 0.1 + 0.9 * u : 2.0 * u - 1.0;
    l.sigma.data()[k] = 0.1 + 0.6 * NormalSampler::uniform(rng);
  }
  return l;
}

std::vector<MeanFieldLayer> random_chain(const std::vector<Index>& widths, std::uint64_t seed, bool positive) {
  Rng rng = make_rng(seed);
  std::vector<MeanFieldLayer> layers;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    layers.push_back(random_layer(widths[l + 1], widths[l], rng, positive));
  }
  return layers;
}

double min_eig_ratio(const MatrixXd& cov) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff() / cov.trace();
}

}  // namespace

TEST_CASE("product mean of simple chains") {
  Rng rng = make_rng(1);
  const MeanFieldLayer one = random_layer(3, 2, rng, false);
  CHECK(product_mean({one}) == one.mu);
  const MeanFieldLayer eye = MeanFieldLayer::near_deterministic(MatrixXd::Identity(2, 2), 0.5);
  CHECK(product_mean({eye, eye}) == MatrixXd::Identity(2, 2));
  CHECK_THROWS_AS(product_mean({random_layer(3, 2, rng, false), random_layer(3, 2, rng, false)}), ShapeError);
  CHECK_THROWS_AS(product_mean({}), ShapeError);
}

TEST_CASE("product mean matches Monte-Carlo mean") {
  const auto layers = random_chain({3, 3, 3, 3}, 2, false);
  const auto mc = mc_moments(mc_product_samples(layers, 1'000'000, 7));
  const VectorXd analytic = vec(product_mean(layers));
  for (Index i = 0; i < analytic.size(); ++i) {
    CHECK(std::abs(analytic[i] - mc.mean[i]) <= 4.0 * mc.mean_se[i]);
  }
}

TEST_CASE("scalar two-layer variance") {
  const double m1 = 0.7, s1 = 0.3, m2 = -1.2, s2 = 0.5;
  const MeanFieldLayer w1{MatrixXd::Constant(1, 1, m1), MatrixXd::Constant(1, 1, s1)};
  const MeanFieldLayer w2{MatrixXd::Constant(1, 1, m2), MatrixXd::Constant(1, 1, s2)};
  const double expected = s2 * s2 * s1 * s1 + m2 * m2 * s1 * s1 + m1 * m1 * s2 * s2;
  CHECK(cov_two_layer(w1, w2)(0, 0, 0, 0) == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("two-layer covariance vanishes when no row or column is shared") {
  const auto layers = random_chain({3, 4, 2}, 3, false);
  const CovTensor4 cov = cov_two_layer(layers[0], layers[1]);
  for (Index a = 0; a < 2; ++a)
    for (Index b = 0; b < 3; ++b)
      for (Index c = 0; c < 2; ++c)
        for (Index d = 0; d < 3; ++d) {
          if (a != c && b != d) CHECK(cov(a, b, c, d) == 0.0);
          if (a == c || b == d) CHECK(cov(a, b, c, d) != 0.0);
        }
}

TEST_CASE("two-layer covariance matches Monte-Carlo") {
  const auto layers = random_chain({2, 3, 2}, 4, false);
  const auto mc = mc_moments(mc_product_samples(layers, 1'000'000, 11));
  CHECK(max_standardized_error(cov_two_layer(layers[0], layers[1]).flat(), mc.cov, mc.cov_se) <= 5.0);
}

TEST_CASE("one recursive step from a single layer equals the two-layer closed form") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto layers = random_chain({3, 4, 2}, 100 + seed, false);
    const ProductMoments step = cov_recursive_step(single_layer_moments(layers[0]), layers[1]);
    CHECK(step.cov.flat() == cov_two_layer(layers[0], layers[1]).flat());
  }
}

TEST_CASE("near-deterministic identity on top leaves the covariance unchanged") {
  const auto layers = random_chain({3, 3, 3}, 5, false);
  const ProductMoments base = cov_product(layers);
  const ProductMoments stacked =
      cov_recursive_step(base, MeanFieldLayer::near_deterministic(MatrixXd::Identity(3, 3)));
  const double scale = base.cov.flat().cwiseAbs().maxCoeff();
  CHECK((stacked.cov.flat() - base.cov.flat()).cwiseAbs().maxCoeff() <= 1e-6 * scale);
  CHECK(stacked.mean.isApprox(base.mean, 1e-12));
}

TEST_CASE("single layer covariance is diagonal") {
  const auto layers = random_chain({3, 2}, 6, false);
  const ProductMoments pm = cov_product(layers);
  for (Index i = 0; i < pm.cov.dim(); ++i)
    for (Index j = 0; j < pm.cov.dim(); ++j) {
      if (i != j) CHECK(pm.cov.flat()(i, j) == 0.0);
    }
  CHECK(pm.cov(1, 0, 1, 0) == layers[0].sigma(1, 0) * layers[0].sigma(1, 0));
}

TEST_CASE("three positive layers give an everywhere-positive covariance") {
  const MeanFieldLayer l{MatrixXd::Constant(2, 2, 0.5), MatrixXd::Constant(2, 2, 0.3)};
  const ProductMoments pm = cov_product({l, l, l});
  CHECK((pm.cov.flat().array() > 0.0).all());
  // Random positive chains as well, L = 3..5.
  for (int L = 3; L <= 5; ++L) {
    std::vector<Index> widths(L + 1, 3);
    widths.front() = 2;
    const ProductMoments r = cov_product(random_chain(widths, 200 + L, true));
    CHECK((r.cov.flat().array() > 0.0).all());
  }
}

TEST_CASE("covariance is symmetric and positive semidefinite") {
  for (int L = 1; L <= 5; ++L) {
    std::vector<Index> widths;
    for (int i = 0; i <= L; ++i) widths.push_back(2 + (i % 3));
    const ProductMoments pm = cov_product(random_chain(widths, 300 + L, false));
    const MatrixXd& f = pm.cov.flat();
    CHECK(f == f.transpose());
    CHECK(min_eig_ratio(f) >= -1e-8);
  }
}

TEST_CASE("deep products match the Monte-Carlo oracle") {
  SUBCASE("three layers") {
    const auto layers = random_chain({2, 3, 3, 2}, 8, false);
    const auto mc = mc_moments(mc_product_samples(layers, 1'000'000, 12));
    CHECK(max_standardized_error(cov_product(layers).cov.flat(), mc.cov, mc.cov_se) <= 5.0);
  }
  SUBCASE("five positive layers") {
    const auto layers = random_chain({2, 3, 2, 3, 2, 2}, 9, true);
    const auto mc = mc_moments(mc_product_samples(layers, 1'000'000, 13));
    CHECK(max_standardized_error(cov_product(layers).cov.flat(), mc.cov, mc.cov_se) <= 5.0);
  }
}

TEST_CASE("Monte-Carlo sampler contracts") {
  const auto layers = random_chain({2, 3, 2}, 10, false);
  const MatrixXd a = mc_product_samples(layers, 10'000, 99);
  CHECK(a == mc_product_samples(layers, 10'000, 99));
  CHECK(a == mc_product_samples(layers, 10'000, 99, 3));
  CHECK(a != mc_product_samples(layers, 10'000, 100));

  std::vector<MeanFieldLayer> tight;
  for (const auto& l : layers) tight.push_back(MeanFieldLayer::near_deterministic(l.mu));
  const MatrixXd s = mc_product_samples(tight, 100, 5);
  const VectorXd mean = vec(product_mean(tight));
  for (Index r = 0; r < s.rows(); ++r) CHECK((s.row(r).transpose() - mean).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("vec identity for the Kronecker product") {
  Rng rng = make_rng(3);
  NormalSampler normal;
  MatrixXd A(2, 3), B(3, 4), C(4, 2);
  for (auto* m : {&A, &B, &C})
    for (Index k = 0; k < m->size(); ++k) m->data()[k] = normal(rng);
  CHECK(vec(A * B * C).isApprox(kron(C.transpose(), A) * vec(B), 1e-12));
}

TEST_CASE("matrix variate Gaussian construction") {
  SUBCASE("identity factors") {
    const ProductMoments pm = mvg_product({MatrixXd::Identity(2, 2), MatrixXd::Identity(2, 2), MatrixXd::Zero(2, 2)});
    CHECK(pm.cov.flat() == MatrixXd::Identity(4, 4));
    CHECK(pm.mean == MatrixXd::Zero(2, 2));
  }
  SUBCASE("scaled A") {
    const ProductMoments pm =
        mvg_product({2.0 * MatrixXd::Identity(2, 2), MatrixXd::Identity(2, 2), MatrixXd::Zero(2, 2)});
    CHECK(pm.cov.flat() == 4.0 * MatrixXd::Identity(4, 4));
  }
  SUBCASE("Monte-Carlo and the equivalent three-layer mean-field chain") {
    Rng rng = make_rng(21);
    NormalSampler normal;
    MVGFactors f{MatrixXd(2, 3), MatrixXd(3, 2), MatrixXd(3, 3)};
    for (auto* m : {&f.A, &f.C, &f.mu_B})
      for (Index k = 0; k < m->size(); ++k) m->data()[k] = normal(rng);
    const ProductMoments pm = mvg_product(f);
    CHECK(pm.cov.flat() == kron(f.V(), f.U()));

    const std::vector<MeanFieldLayer> chain{MeanFieldLayer::near_deterministic(f.C),
                                            {f.mu_B, MatrixXd::Ones(3, 3)},
                                            MeanFieldLayer::near_deterministic(f.A)};
    const ProductMoments via_chain = cov_product(chain);
    const double scale = pm.cov.flat().cwiseAbs().maxCoeff();
    CHECK((via_chain.cov.flat() - pm.cov.flat()).cwiseAbs().maxCoeff() <= 1e-6 * scale);

    const auto mc = mc_moments(mc_product_samples(chain, 1'000'000, 31));
    CHECK(max_standardized_error(pm.cov.flat(), mc.cov, mc.cov_se) <= 5.0);
  }
  CHECK_THROWS_AS(mvg_product({MatrixXd::Identity(2, 2), MatrixXd::Identity(3, 3), MatrixXd::Zero(2, 2)}),
                  ShapeError);
}

TEST_CASE("prior product element densities") {
  SUBCASE("one layer is Gaussian") {
    const VectorXd s = prior_element_density(1, 16, 0.23, 100'000, 1);
    std::vector<double> xs(s.data(), s.data() + s.size());
    CHECK(mfdl::testing::ks_statistic(xs, [](double x) { return mfdl::testing::normal_cdf(x / 0.23); }) < 0.01);
  }
  SUBCASE("product of two scalar Gaussians has kurtosis 9") {
    const VectorXd s = prior_element_density(2, 1, 1.0, 1'000'000, 2);
    const double m2 = s.array().square().mean();
    const double m4 = s.array().pow(4).mean();
    CHECK(m4 / (m2 * m2) == doctest::Approx(9.0).epsilon(0.10));
  }
  SUBCASE("deeper products keep the single-entry variance K^(L-1) sigma^(2L)") {
    const int K = 4, L = 3;
    const double sigma = 0.5;
    const VectorXd s = prior_element_density(L, K, sigma, 200'000, 3);
    const double var = s.array().square().mean();
    const double expected = std::pow(K, L - 1) * std::pow(sigma, 2 * L);
    CHECK(var == doctest::Approx(expected).epsilon(0.03));
    CHECK(prior_element_density(L, K, sigma, 1000, 3) == s.head(1000));
  }
}
