#pragma once

// Moments of products of independent mean-field Gaussian weight matrices.
//
// A product matrix M = W_L ... W_2 W_1 is built from layers listed bottom-up:
// layers[0] is applied first. Covariances between product-matrix entries are
// kept as a four-index tensor Sigma(a, b, c, d) = Cov(m_ab, m_cd), stored as a
// dense (rows*cols)^2 matrix over vec(M), where vec stacks columns:
// vec index of (a, b) is a + b * rows.

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace mfdl {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Per-element Gaussian weights: entry (a, b) ~ N(mu(a, b), sigma(a, b)^2).
struct MeanFieldLayer {
  MatrixXd mu;
  MatrixXd sigma;

  Index rows() const { return mu.rows(); }
  Index cols() const { return mu.cols(); }
  void validate() const;

  /// Stand-in for a deterministic matrix: every std is `sigma` (tiny).
  static MeanFieldLayer near_deterministic(const MatrixXd& mean, double sigma = 1e-12);
};

class CovTensor4 {
 public:
  CovTensor4() = default;
  CovTensor4(Index rows, Index cols);

  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  Index dim() const { return rows_ * cols_; }
  Index vec_index(Index a, Index b) const { return a + b * rows_; }

  double operator()(Index a, Index b, Index c, Index d) const {
    return flat_(vec_index(a, b), vec_index(c, d));
  }
  /// Writes both (a,b,c,d) and (c,d,a,b).
  void set(Index a, Index b, Index c, Index d, double value);

  /// dim x dim covariance of vec(M).
  const MatrixXd& flat() const { return flat_; }

  /// Largest absolute entry off the diagonal of the flattened matrix.
  double max_abs_off_diagonal() const;
  double max_diagonal() const;

 private:
  Index rows_ = 0;
  Index cols_ = 0;
  MatrixXd flat_;
};

struct ProductMoments {
  MatrixXd mean;
  CovTensor4 cov;
};

MatrixXd product_mean(const std::vector<MeanFieldLayer>& layers);

/// Closed form for the product of two mean-field layers (w1 applied first).
CovTensor4 cov_two_layer(const MeanFieldLayer& w1, const MeanFieldLayer& w2);

/// Moments of a single mean-field layer viewed as a one-layer product.
ProductMoments single_layer_moments(const MeanFieldLayer& layer);

/// Adds one more layer on top of an existing product.
ProductMoments cov_recursive_step(const ProductMoments& prev, const MeanFieldLayer& top);

/// Mean and covariance of the full product.
ProductMoments cov_product(const std::vector<MeanFieldLayer>& layers);

/// n i.i.d. product samples, one per row, each row holding vec(M).
/// Samples are generated in fixed-size blocks with one RNG stream per block,
/// so the output does not depend on `threads`.
MatrixXd mc_product_samples(const std::vector<MeanFieldLayer>& layers, Index n, std::uint64_t seed,
                            int threads = 1);

/// M = A B C with A, C fixed and B elementwise N(mu_B, 1).
struct MVGFactors {
  MatrixXd A;
  MatrixXd C;
  MatrixXd mu_B;

  MatrixXd U() const { return A * A.transpose(); }
  MatrixXd V() const { return C.transpose() * C; }
};

/// Mean A mu_B C and covariance of vec(M) equal to kron(V, U).
ProductMoments mvg_product(const MVGFactors& factors);

/// Kronecker product, used for the vec identity vec(ABC) = kron(C^T, A) vec(B).
MatrixXd kron(const MatrixXd& left, const MatrixXd& right);

/// Draws of entry (0, 0) of a product of L K x K matrices whose entries are
/// i.i.d. N(0, sigma^2).
VectorXd prior_element_density(int depth, int width, double sigma, Index n, std::uint64_t seed);

/// Vectorize column-major, matching CovTensor4's index convention.
VectorXd vec(const MatrixXd& m);

}  // namespace mfdl
