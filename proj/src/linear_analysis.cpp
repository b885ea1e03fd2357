#include "mfdl/linear_analysis.hpp"

#include <algorithm>
#include <string>

#include "mfdl/errors.hpp"
#include "mfdl/random.hpp"
#include "parallel.hpp"

namespace mfdl {

using detail::for_each_block;

namespace {

void require_conformable(const MatrixXd& lower, const MatrixXd& upper) {
  if (upper.cols() != lower.rows()) {
    throw ShapeError("layers not conformable: " + std::to_string(upper.rows()) + "x" +
                     std::to_string(upper.cols()) + " on top of " + std::to_string(lower.rows()) + "x" +
                     std::to_string(lower.cols()));
  }
}

void check_chain(const std::vector<MeanFieldLayer>& layers) {
  if (layers.empty()) throw ShapeError("need at least one layer");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].validate();
    if (l > 0) require_conformable(layers[l - 1].mu, layers[l].mu);
  }
}

}  // namespace

void MeanFieldLayer::validate() const {
  if (mu.rows() != sigma.rows() || mu.cols() != sigma.cols()) {
    throw ShapeError("mean and std matrices differ in shape");
  }
  if (!(sigma.array() > 0.0).all()) throw std::invalid_argument("mean-field stds must be positive");
}

MeanFieldLayer MeanFieldLayer::near_deterministic(const MatrixXd& mean, double sigma) {
  return {mean, MatrixXd::Constant(mean.rows(), mean.cols(), sigma)};
}

CovTensor4::CovTensor4(Index rows, Index cols)
    : rows_(rows), cols_(cols), flat_(MatrixXd::Zero(rows * cols, rows * cols)) {}

void CovTensor4::set(Index a, Index b, Index c, Index d, double value) {
  flat_(vec_index(a, b), vec_index(c, d)) = value;
  flat_(vec_index(c, d), vec_index(a, b)) = value;
}

double CovTensor4::max_abs_off_diagonal() const {
  double m = 0.0;
  for (Index j = 0; j < flat_.cols(); ++j) {
    for (Index i = 0; i < flat_.rows(); ++i) {
      if (i != j) m = std::max(m, std::abs(flat_(i, j)));
    }
  }
  return m;
}

double CovTensor4::max_diagonal() const { return flat_.diagonal().maxCoeff(); }

MatrixXd product_mean(const std::vector<MeanFieldLayer>& layers) {
  check_chain(layers);
  MatrixXd m = layers.front().mu;
  for (std::size_t l = 1; l < layers.size(); ++l) m = layers[l].mu * m;
  return m;
}

CovTensor4 cov_two_layer(const MeanFieldLayer& w1, const MeanFieldLayer& w2) {
  w1.validate();
  w2.validate();
  require_conformable(w1.mu, w2.mu);
  const Index n_out = w2.rows(), K = w2.cols(), n_in = w1.cols();
  const MatrixXd v1 = w1.sigma.cwiseAbs2();
  const MatrixXd v2 = w2.sigma.cwiseAbs2();
  const MatrixXd& m1 = w1.mu;
  const MatrixXd& m2 = w2.mu;
  CovTensor4 cov(n_out, n_in);
  for (Index d = 0; d < n_in; ++d) {
    for (Index c = 0; c < n_out; ++c) {
      for (Index b = 0; b < n_in; ++b) {
        for (Index a = 0; a < n_out; ++a) {
          if (cov.vec_index(a, b) > cov.vec_index(c, d)) continue;
          double diag = 0.0, shared_col = 0.0, shared_row = 0.0;
          if (b == d) {
            for (Index i = 0; i < K; ++i) shared_col += m2(a, i) * (v1(i, b) * m2(c, i));
            if (a == c) {
              for (Index i = 0; i < K; ++i) diag += v2(a, i) * v1(i, b);
            }
          }
          if (a == c) {
            for (Index i = 0; i < K; ++i) shared_row += v2(a, i) * (m1(i, b) * m1(i, d));
          }
          cov.set(a, b, c, d, (diag + shared_col) + shared_row);
        }
      }
    }
  }
  return cov;
}

ProductMoments single_layer_moments(const MeanFieldLayer& layer) {
  layer.validate();
  ProductMoments out{layer.mu, CovTensor4(layer.rows(), layer.cols())};
  for (Index b = 0; b < layer.cols(); ++b) {
    for (Index a = 0; a < layer.rows(); ++a) {
      out.cov.set(a, b, a, b, layer.sigma(a, b) * layer.sigma(a, b));
    }
  }
  return out;
}

ProductMoments cov_recursive_step(const ProductMoments& prev, const MeanFieldLayer& top) {
  top.validate();
  require_conformable(prev.mean, top.mu);
  if (prev.cov.rows() != prev.mean.rows() || prev.cov.cols() != prev.mean.cols()) {
    throw ShapeError("covariance and mean shapes disagree");
  }
  const Index n_out = top.rows(), K = top.cols(), n_in = prev.mean.cols();
  const MatrixXd& mu = top.mu;
  const MatrixXd var = top.sigma.cwiseAbs2();
  const MatrixXd& m = prev.mean;
  const MatrixXd& S = prev.cov.flat();

  ProductMoments out{mu * m, CovTensor4(n_out, n_in)};
  MatrixXd G(K, n_out);
  for (Index d = 0; d < n_in; ++d) {
    for (Index b = 0; b < n_in; ++b) {
      // Sigma_prev(i, b, j, d) over i, j is the K x K block at (b*K, d*K).
      if (b > d) continue;
      const auto Sbd = S.block(b * K, d * K, K, K);
      for (Index c = 0; c < n_out; ++c) {
        for (Index i = 0; i < K; ++i) {
          double acc = 0.0;
          for (Index j = 0; j < K; ++j) acc += Sbd(i, j) * mu(c, j);
          G(i, c) = acc;
        }
      }
      for (Index c = 0; c < n_out; ++c) {
        for (Index a = 0; a < n_out; ++a) {
          if (out.cov.vec_index(a, b) > out.cov.vec_index(c, d)) continue;
          // cov(w) * cov(m) + mean(w)^2 * cov(m) + mean(m)^2 * cov(w)
          double cov_cov = 0.0, mean_w = 0.0, mean_m = 0.0;
          for (Index i = 0; i < K; ++i) mean_w += mu(a, i) * G(i, c);
          if (a == c) {
            for (Index i = 0; i < K; ++i) cov_cov += var(a, i) * Sbd(i, i);
            for (Index i = 0; i < K; ++i) mean_m += var(a, i) * (m(i, b) * m(i, d));
          }
          out.cov.set(a, b, c, d, (cov_cov + mean_w) + mean_m);
        }
      }
    }
  }
  return out;
}

ProductMoments cov_product(const std::vector<MeanFieldLayer>& layers) {
  check_chain(layers);
  ProductMoments acc = single_layer_moments(layers.front());
  for (std::size_t l = 1; l < layers.size(); ++l) acc = cov_recursive_step(acc, layers[l]);
  return acc;
}

MatrixXd mc_product_samples(const std::vector<MeanFieldLayer>& layers, Index n, std::uint64_t seed,
                            int threads) {
  check_chain(layers);
  if (n < 1) throw std::invalid_argument("need at least one sample");
  const Index rows = layers.back().rows(), cols = layers.front().cols();
  MatrixXd out(n, rows * cols);
  for_each_block(n, threads, [&](Index blk, Index start, Index count) {
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(blk));
    NormalSampler normal;
    MatrixXd W, M;
    for (Index s = 0; s < count; ++s) {
      for (std::size_t l = 0; l < layers.size(); ++l) {
        const MeanFieldLayer& layer = layers[l];
        W.resize(layer.rows(), layer.cols());
        for (Index k = 0; k < W.size(); ++k) {
          W.data()[k] = layer.mu.data()[k] + layer.sigma.data()[k] * normal(rng);
        }
        if (l == 0) {
          M = W;
        } else {
          M = (W * M).eval();
        }
      }
      out.row(start + s) = Eigen::Map<const VectorXd>(M.data(), M.size()).transpose();
    }
  });
  return out;
}

MatrixXd kron(const MatrixXd& left, const MatrixXd& right) {
  MatrixXd out(left.rows() * right.rows(), left.cols() * right.cols());
  for (Index j = 0; j < left.cols(); ++j) {
    for (Index i = 0; i < left.rows(); ++i) {
      out.block(i * right.rows(), j * right.cols(), right.rows(), right.cols()) = left(i, j) * right;
    }
  }
  return out;
}

ProductMoments mvg_product(const MVGFactors& f) {
  if (f.A.cols() != f.mu_B.rows() || f.mu_B.cols() != f.C.rows()) {
    throw ShapeError("A, B and C are not conformable");
  }
  const MatrixXd U = f.U();
  const MatrixXd V = f.V();
  ProductMoments out{f.A * f.mu_B * f.C, CovTensor4(f.A.rows(), f.C.cols())};
  for (Index d = 0; d < f.C.cols(); ++d) {
    for (Index c = 0; c < f.A.rows(); ++c) {
      for (Index b = 0; b < f.C.cols(); ++b) {
        for (Index a = 0; a < f.A.rows(); ++a) {
          if (out.cov.vec_index(a, b) > out.cov.vec_index(c, d)) continue;
          out.cov.set(a, b, c, d, U(a, c) * V(b, d));
        }
      }
    }
  }
  return out;
}

VectorXd prior_element_density(int depth, int width, double sigma, Index n, std::uint64_t seed) {
  if (depth < 1 || width < 1) throw std::invalid_argument("depth and width must be at least 1");
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
  VectorXd out(n);
  for_each_block(n, 1, [&](Index blk, Index start, Index count) {
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(blk));
    NormalSampler normal;
    VectorXd row(width), next(width);
    for (Index s = 0; s < count; ++s) {
      if (depth == 1) {
        out[start + s] = sigma * normal(rng);
        continue;
      }
      // Row 0 of the top layer, then pushed down through the remaining layers;
      // the last layer only needs its column 0.
      for (int i = 0; i < width; ++i) row[i] = sigma * normal(rng);
      for (int l = depth - 1; l > 1; --l) {
        next.setZero();
        for (int j = 0; j < width; ++j) {
          for (int i = 0; i < width; ++i) next[j] += row[i] * sigma * normal(rng);
        }
        row.swap(next);
      }
      double acc = 0.0;
      for (int i = 0; i < width; ++i) acc += row[i] * sigma * normal(rng);
      out[start + s] = acc;
    }
  });
  return out;
}

VectorXd vec(const MatrixXd& m) { return Eigen::Map<const VectorXd>(m.data(), m.size()); }

}  // namespace mfdl
