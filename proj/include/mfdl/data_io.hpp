#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace mfdl {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr const char* kArtifactVersion = "0.3.0";

enum class Task { classification, regression };

struct Dataset {
  MatrixXd inputs;  ///< n x d, one example per row
  VectorXd targets;  ///< class index (as a double) or real target
  Task task = Task::classification;
  int num_classes = 0;  ///< 0 for regression
  std::string name;
  std::uint64_t seed = 0;

  Index size() const { return inputs.rows(); }
  Index dim() const { return inputs.cols(); }
  /// d x n, the layout the network batch routines take.
  MatrixXd features() const { return inputs.transpose(); }
  std::vector<int> labels() const;
  Dataset subset(const std::vector<Index>& rows) const;
  void validate() const;
};

/// Two interleaving half circles: label 0 on the upper unit half circle,
/// label 1 on the lower one shifted by (1, -0.5). Points are shuffled.
Dataset two_moons(Index n, double noise_std, std::uint64_t seed);

/// y = sin(4(x - 4.3)) + N(0, 0.05^2); 750 points uniform on [-2, -1.4] and
/// 750 on [1.0, 1.8].
Dataset toy_sine(std::uint64_t seed);
double toy_sine_mean(double x);

/// Isotropic Gaussian clusters with random unit-variance centres scaled by
/// `separation`. Used as a synthetic stand-in for image data.
Dataset gaussian_blobs(Index n, int dim, int classes, double separation, std::uint64_t seed);

struct Split {
  Dataset train;
  Dataset test;
};

/// Seeded shuffle, first n_train rows to train, the rest to test.
Split split_dataset(const Dataset& data, Index n_train, std::uint64_t seed);

/// Per-feature affine map to zero mean, unit std on the data it was fit on.
/// Constant features are only centred.
struct Standardizer {
  VectorXd mean;
  VectorXd scale;

  static Standardizer fit(const Dataset& data);
  void apply(Dataset& data) const;
};

struct CsvSchema {
  bool has_header = true;
  int label_column = -1;  ///< negative counts from the end
  char delimiter = ',';
  Task task = Task::classification;
};

Dataset load_csv_labeled(const std::filesystem::path& path, const CsvSchema& schema = {});

/// Standard IDX files (ubyte images, magic 0x00000803; ubyte labels, magic
/// 0x00000801). Pixels are scaled to [0, 1]; standardization is left to the
/// caller so it can be fit on a training split.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

// --- file emission ----------------------------------------------------------

/// Formats a double with 17 significant digits.
std::string format_real(double v);

/// RFC-4180 CSV, CRLF line endings, 17 significant digits.
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header, const MatrixXd& rows);

struct CsvTable {
  std::vector<std::string> header;
  MatrixXd rows;
};
/// Reads an all-numeric CSV with a header line.
CsvTable read_csv(const std::filesystem::path& path);

/// Binary P6 heatmap, one pixel block per matrix entry, red-white-blue
/// diverging colours centred at 0 and scaled by max |entry|.
void write_heatmap_ppm(const std::filesystem::path& path, const MatrixXd& values, int pixels_per_entry = 4);

/// Pretty-printed JSON with a trailing newline.
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

/// Writes `<artifact>.meta.json` holding config, seed and artifact version.
void write_sidecar(const std::filesystem::path& artifact, const nlohmann::json& config, std::uint64_t seed);

/// Sample dump: "BNNS", u32 n, u32 dim, u32 layout length, layout JSON bytes,
/// then n*dim little-endian f64 values, row-major.
void write_sample_dump(const std::filesystem::path& path, const MatrixXd& samples, const nlohmann::json& layout);

struct SampleDump {
  MatrixXd samples;
  nlohmann::json layout;
};
SampleDump read_sample_dump(const std::filesystem::path& path);

}  // namespace mfdl
