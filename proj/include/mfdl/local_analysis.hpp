#pragma once

// Local product matrices of piecewise-linear networks. At a fixed input x*,
// each weight sample acts on x* through a single affine map P_x* obtained by
// interleaving the weight matrices with the branch multipliers of the
// activation pattern at x*.

#include <cstdint>
#include <filesystem>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "mfdl/data_io.hpp"
#include "mfdl/linear_analysis.hpp"
#include "mfdl/mfvi.hpp"
#include "mfdl/network.hpp"

namespace mfdl {

struct LocalProductSample {
  /// nL x (n0 + 1) with the bias column last when the spec has biases,
  /// nL x n0 otherwise.
  MatrixXd P;
  /// Low-order parts: P + P_lo carries the product to roughly twice double
  /// precision.
  MatrixXd P_lo;
  ActivationPattern pattern;
  std::uint64_t theta_ref = 0;
};

LocalProductSample local_product_matrix(const NetworkSpec& spec, const VectorXd& theta, const VectorXd& x,
                                        std::uint64_t theta_ref = 0);

/// P x~, where x~ is x with a trailing 1 when biases are folded.
VectorXd apply_local_product(const LocalProductSample& sample, const VectorXd& x);

/// n draws from q, each turned into its local product matrix at x. Draw i
/// uses RNG stream (seed, i).
std::vector<LocalProductSample> sample_local_products(const NetworkSpec& spec, const MeanFieldPosterior& q,
                                                      const VectorXd& x, Index n, std::uint64_t seed,
                                                      int threads = 1);

struct LocalCovReport {
  MatrixXd mean;
  CovTensor4 cov;
  Index n_samples = 0;
  VectorXd anchor;
  /// Per vec(P) entry; empty until flag_multimodal runs. Unchecked entries
  /// stay false.
  std::vector<bool> multimodal;
  std::vector<Index> checked_entries;
};

/// Rows of the returned matrix are vec(P) of each sample.
MatrixXd flatten_samples(const std::vector<LocalProductSample>& samples);

/// Unbiased mean and covariance over vec(P), two-pass.
LocalCovReport empirical_cov(const std::vector<LocalProductSample>& samples, const VectorXd& anchor = {});
LocalCovReport empirical_cov(const MatrixXd& flat, Index rows, Index cols, const VectorXd& anchor = {});

/// Same statistics accumulated in a single pass with Welford updates.
LocalCovReport empirical_cov_one_pass(const MatrixXd& flat, Index rows, Index cols);

/// Fits 1-4 component mixtures to the marginal of each listed vec(P) entry
/// and flags the entry when BIC prefers two or more components.
void flag_multimodal(LocalCovReport& report, const MatrixXd& flat, const std::vector<Index>& entries,
                     std::uint64_t seed);

struct ActivationStats {
  double mean_on_fraction = 0.0;
  double sd_on_fraction = 0.0;  ///< across (theta, input) events
  Index all_off_events = 0;     ///< events where some hidden layer is entirely off
  Index events = 0;
  std::vector<double> layer_on_fraction;
};

ActivationStats activation_stats(const NetworkSpec& spec, const MeanFieldPosterior& q, const Dataset& data,
                                 Index n_theta, std::uint64_t seed);

using BigInt = boost::multiprecision::cpp_int;

/// prod_{i < H} floor(h_i / n0)^n0 * sum_{j=0}^{n0} C(h_H, j) over the hidden
/// widths h_1..h_H. Factors with h_i < n0 are taken as 1.
BigInt region_count_bound(const NetworkSpec& spec);

/// Writes mean/covariance CSV + PPM files for a report, plus an anchor
/// sidecar. Returns the written paths.
std::vector<std::filesystem::path> write_cov_report(const std::filesystem::path& stem, const LocalCovReport& report,
                                                    const nlohmann::json& config, std::uint64_t seed);

}  // namespace mfdl
