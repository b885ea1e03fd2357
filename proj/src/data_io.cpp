#include "mfdl/data_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mfdl/errors.hpp"
#include "mfdl/random.hpp"

namespace mfdl {

namespace fs = std::filesystem;

std::vector<int> Dataset::labels() const {
  std::vector<int> out(static_cast<std::size_t>(targets.size()));
  for (Index i = 0; i < targets.size(); ++i) out[i] = static_cast<int>(targets[i]);
  return out;
}

Dataset Dataset::subset(const std::vector<Index>& rows) const {
  Dataset out = *this;
  out.inputs.resize(static_cast<Index>(rows.size()), dim());
  out.targets.resize(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.inputs.row(i) = inputs.row(rows[i]);
    out.targets[i] = targets[rows[i]];
  }
  return out;
}

void Dataset::validate() const {
  if (inputs.rows() < 1) throw std::invalid_argument("dataset is empty");
  if (targets.size() != inputs.rows()) throw ShapeError("targets and inputs disagree in length");
  if (task == Task::classification) {
    for (Index i = 0; i < targets.size(); ++i) {
      const double t = targets[i];
      if (t != std::floor(t) || t < 0 || t >= num_classes) throw std::out_of_range("class index out of range");
    }
  }
}

namespace {

std::vector<Index> shuffled_indices(Index n, Rng& rng) {
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  for (Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Index>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(idx[i], idx[j]);
  }
  return idx;
}

}  // namespace

Dataset two_moons(Index n, double noise_std, std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("two_moons needs n >= 2");
  const Index n_upper = n / 2, n_lower = n - n_upper;
  Dataset raw;
  raw.inputs.resize(n, 2);
  raw.targets.resize(n);
  auto angle = [](Index i, Index count) { return count > 1 ? M_PI * static_cast<double>(i) / (count - 1) : 0.0; };
  for (Index i = 0; i < n_upper; ++i) {
    const double t = angle(i, n_upper);
    raw.inputs.row(i) << std::cos(t), std::sin(t);
    raw.targets[i] = 0;
  }
  for (Index i = 0; i < n_lower; ++i) {
    const double t = angle(i, n_lower);
    raw.inputs.row(n_upper + i) << 1.0 - std::cos(t), 0.5 - std::sin(t);
    raw.targets[n_upper + i] = 1;
  }
  Rng rng = make_rng(seed, 0);
  Dataset out = raw.subset(shuffled_indices(n, rng));
  if (noise_std > 0.0) {
    Rng noise_rng = make_rng(seed, 1);
    NormalSampler normal;
    for (Index k = 0; k < out.inputs.size(); ++k) out.inputs.data()[k] += noise_std * normal(noise_rng);
  }
  out.task = Task::classification;
  out.num_classes = 2;
  out.name = "two_moons";
  out.seed = seed;
  return out;
}

double toy_sine_mean(double x) { return std::sin(4.0 * (x - 4.3)); }

Dataset toy_sine(std::uint64_t seed) {
  constexpr Index per_interval = 750;
  Dataset out;
  out.inputs.resize(2 * per_interval, 1);
  out.targets.resize(2 * per_interval);
  Rng rng = make_rng(seed);
  NormalSampler normal;
  for (Index i = 0; i < 2 * per_interval; ++i) {
    const double lo = i < per_interval ? -2.0 : 1.0;
    const double hi = i < per_interval ? -1.4 : 1.8;
    const double x = lo + (hi - lo) * NormalSampler::uniform(rng);
    out.inputs(i, 0) = x;
    out.targets[i] = toy_sine_mean(x) + 0.05 * normal(rng);
  }
  out.task = Task::regression;
  out.name = "toy_sine";
  out.seed = seed;
  return out;
}

Dataset gaussian_blobs(Index n, int dim, int classes, double separation, std::uint64_t seed) {
  if (n < 1 || dim < 1 || classes < 1) throw std::invalid_argument("gaussian_blobs: bad sizes");
  Rng rng = make_rng(seed);
  NormalSampler normal;
  MatrixXd centres(classes, dim);
  for (Index k = 0; k < centres.size(); ++k) centres.data()[k] = separation * normal(rng);
  Dataset out;
  out.inputs.resize(n, dim);
  out.targets.resize(n);
  for (Index i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % classes);
    out.targets[i] = c;
    for (int j = 0; j < dim; ++j) out.inputs(i, j) = centres(c, j) + normal(rng);
  }
  out = out.subset(shuffled_indices(n, rng));
  out.task = Task::classification;
  out.num_classes = classes;
  out.name = "gaussian_blobs";
  out.seed = seed;
  return out;
}

Split split_dataset(const Dataset& data, Index n_train, std::uint64_t seed) {
  if (n_train < 1 || n_train >= data.size()) throw std::invalid_argument("train split must leave both sides nonempty");
  Rng rng = make_rng(seed, 0x5eed);
  const auto idx = shuffled_indices(data.size(), rng);
  const std::vector<Index> train(idx.begin(), idx.begin() + n_train);
  const std::vector<Index> test(idx.begin() + n_train, idx.end());
  return {data.subset(train), data.subset(test)};
}

Standardizer Standardizer::fit(const Dataset& data) {
  Standardizer s;
  s.mean = data.inputs.colwise().mean().transpose();
  s.scale.resize(data.dim());
  for (Index j = 0; j < data.dim(); ++j) {
    const double var = (data.inputs.col(j).array() - s.mean[j]).square().sum() / static_cast<double>(data.size());
    s.scale[j] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return s;
}

void Standardizer::apply(Dataset& data) const {
  if (data.dim() != mean.size()) throw ShapeError("standardizer fit on a different feature count");
  for (Index j = 0; j < data.dim(); ++j) data.inputs.col(j) = (data.inputs.col(j).array() - mean[j]) / scale[j];
}

namespace {

std::vector<std::string> split_fields(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        field += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == delim) {
      out.push_back(field);
      field.clear();
    } else if (ch != '\r') {
      field += ch;
    }
  }
  out.push_back(field);
  return out;
}

double parse_number(const std::string& s, std::size_t offset) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ParseError("not a number: '" + s + "'", offset);
  }
  if (used != s.size()) throw ParseError("trailing characters in number '" + s + "'", offset);
  return v;
}

std::string quote_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

}  // namespace

Dataset load_csv_labeled(const fs::path& path, const CsvSchema& schema) {
  std::ifstream in = open_in(path);
  std::string line;
  std::size_t offset = 0;
  std::vector<std::vector<double>> features;
  std::vector<double> targets;
  bool first = true;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    const std::size_t line_offset = offset;
    offset += line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first && schema.has_header) {
      first = false;
      continue;
    }
    first = false;
    const auto fields = split_fields(line, schema.delimiter);
    if (width == 0) width = fields.size();
    if (fields.size() != width || width < 2) throw ParseError("ragged CSV row", line_offset);
    const int label_col = schema.label_column < 0 ? static_cast<int>(width) + schema.label_column : schema.label_column;
    if (label_col < 0 || label_col >= static_cast<int>(width)) throw ParseError("label column out of range", line_offset);
    std::vector<double> row;
    for (std::size_t j = 0; j < width; ++j) {
      const double v = parse_number(fields[j], line_offset);
      if (static_cast<int>(j) == label_col) {
        targets.push_back(v);
      } else {
        row.push_back(v);
      }
    }
    features.push_back(std::move(row));
  }
  if (features.empty()) throw ParseError("no data rows", offset);
  Dataset out;
  out.inputs.resize(static_cast<Index>(features.size()), static_cast<Index>(width - 1));
  out.targets.resize(static_cast<Index>(targets.size()));
  for (std::size_t i = 0; i < features.size(); ++i) {
    for (std::size_t j = 0; j + 1 < width; ++j) out.inputs(i, j) = features[i][j];
    out.targets[i] = targets[i];
  }
  out.task = schema.task;
  if (schema.task == Task::classification) out.num_classes = static_cast<int>(out.targets.maxCoeff()) + 1;
  out.name = path.stem().string();
  out.validate();
  return out;
}

namespace {

std::uint32_t read_be32(std::istream& in, std::size_t& offset) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw ParseError("truncated IDX header", offset);
  offset += 4;
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

std::vector<std::uint32_t> read_idx_header(std::istream& in, std::uint32_t expected_magic, std::size_t& offset) {
  const std::uint32_t magic = read_be32(in, offset);
  if (magic != expected_magic) {
    std::ostringstream msg;
    msg << "bad IDX magic 0x" << std::hex << magic << ", expected 0x" << expected_magic;
    throw ParseError(msg.str(), 0);
  }
  std::vector<std::uint32_t> dims(magic & 0xffu);
  for (auto& d : dims) d = read_be32(in, offset);
  return dims;
}

}  // namespace

Dataset load_idx(const fs::path& images, const fs::path& labels) {
  std::ifstream img = open_in(images);
  std::ifstream lab = open_in(labels);
  std::size_t img_off = 0, lab_off = 0;
  const auto idims = read_idx_header(img, 0x00000803u, img_off);
  const auto ldims = read_idx_header(lab, 0x00000801u, lab_off);
  if (idims[0] != ldims[0]) throw ParseError("image and label counts differ", lab_off);
  const Index n = idims[0];
  const Index d = static_cast<Index>(idims[1]) * idims[2];
  std::vector<unsigned char> pixels(static_cast<std::size_t>(n * d));
  if (!img.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()))) {
    throw ParseError("truncated IDX image data", img_off + static_cast<std::size_t>(img.gcount()));
  }
  std::vector<unsigned char> classes(static_cast<std::size_t>(n));
  if (!lab.read(reinterpret_cast<char*>(classes.data()), static_cast<std::streamsize>(n))) {
    throw ParseError("truncated IDX label data", lab_off + static_cast<std::size_t>(lab.gcount()));
  }
  Dataset out;
  out.inputs.resize(n, d);
  out.targets.resize(n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) out.inputs(i, j) = pixels[i * d + j] / 255.0;
    out.targets[i] = classes[i];
  }
  out.task = Task::classification;
  out.num_classes = static_cast<int>(out.targets.maxCoeff()) + 1;
  out.name = images.stem().string();
  return out;
}

std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_csv(const fs::path& path, const std::vector<std::string>& header, const MatrixXd& rows) {
  if (!header.empty() && static_cast<Index>(header.size()) != rows.cols()) {
    throw ShapeError("CSV header and row width differ");
  }
  std::ofstream out = open_out(path);
  for (std::size_t j = 0; j < header.size(); ++j) out << (j ? "," : "") << quote_field(header[j]);
  if (!header.empty()) out << "\r\n";
  for (Index i = 0; i < rows.rows(); ++i) {
    for (Index j = 0; j < rows.cols(); ++j) out << (j ? "," : "") << format_real(rows(i, j));
    out << "\r\n";
  }
}

CsvTable read_csv(const fs::path& path) {
  std::ifstream in = open_in(path);
  std::string line;
  std::size_t offset = 0;
  CsvTable t;
  std::vector<std::vector<double>> rows;
  bool first = true;
  while (std::getline(in, line)) {
    const std::size_t line_offset = offset;
    offset += line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_fields(line, ',');
    if (first) {
      t.header = std::move(fields);
      first = false;
      continue;
    }
    if (fields.size() != t.header.size()) throw ParseError("ragged CSV row", line_offset);
    std::vector<double> row;
    for (const auto& f : fields) row.push_back(parse_number(f, line_offset));
    rows.push_back(std::move(row));
  }
  t.rows.resize(static_cast<Index>(rows.size()), static_cast<Index>(t.header.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < t.header.size(); ++j) t.rows(i, j) = rows[i][j];
  return t;
}

void write_heatmap_ppm(const fs::path& path, const MatrixXd& values, int pixels_per_entry) {
  if (pixels_per_entry < 1) throw std::invalid_argument("pixels_per_entry must be positive");
  const double scale = values.size() ? values.cwiseAbs().maxCoeff() : 0.0;
  const Index w = values.cols() * pixels_per_entry, h = values.rows() * pixels_per_entry;
  std::ofstream out = open_out(path);
  out << "P6\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(w * 3));
  auto channel = [](double t) { return static_cast<unsigned char>(std::lround(255.0 * std::clamp(t, 0.0, 1.0))); };
  for (Index i = 0; i < values.rows(); ++i) {
    for (Index j = 0; j < values.cols(); ++j) {
      const double t = scale > 0.0 ? values(i, j) / scale : 0.0;
      unsigned char rgb[3];
      if (t >= 0.0) {
        rgb[0] = 255;
        rgb[1] = rgb[2] = channel(1.0 - t);
      } else {
        rgb[0] = rgb[1] = channel(1.0 + t);
        rgb[2] = 255;
      }
      for (int p = 0; p < pixels_per_entry; ++p) {
        std::copy(rgb, rgb + 3, row.begin() + (j * pixels_per_entry + p) * 3);
      }
    }
    for (int p = 0; p < pixels_per_entry; ++p) out.write(reinterpret_cast<const char*>(row.data()), w * 3);
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out = open_out(path);
  out << j.dump(2) << "\n";
}

void write_sidecar(const fs::path& artifact, const nlohmann::json& config, std::uint64_t seed) {
  fs::path meta = artifact;
  meta += ".meta.json";
  write_json(meta, {{"artifact", artifact.filename().string()},
                    {"config", config},
                    {"seed", seed},
                    {"version", kArtifactVersion}});
}

namespace {

void put_le32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_le32(std::istream& in, std::size_t& offset) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw ParseError("truncated sample dump", offset);
  offset += 4;
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) | (std::uint32_t{b[3]} << 24);
}

}  // namespace

void write_sample_dump(const fs::path& path, const MatrixXd& samples, const nlohmann::json& layout) {
  std::ofstream out = open_out(path);
  const std::string layout_text = layout.dump();
  out.write("BNNS", 4);
  put_le32(out, static_cast<std::uint32_t>(samples.rows()));
  put_le32(out, static_cast<std::uint32_t>(samples.cols()));
  put_le32(out, static_cast<std::uint32_t>(layout_text.size()));
  out.write(layout_text.data(), static_cast<std::streamsize>(layout_text.size()));
  for (Index i = 0; i < samples.rows(); ++i) {
    for (Index j = 0; j < samples.cols(); ++j) {
      const auto bits = std::bit_cast<std::uint64_t>(samples(i, j));
      unsigned char b[8];
      for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(bits >> (8 * k));
      out.write(reinterpret_cast<const char*>(b), 8);
    }
  }
}

SampleDump read_sample_dump(const fs::path& path) {
  std::ifstream in = open_in(path);
  std::size_t offset = 0;
  char magic[4];
  if (!in.read(magic, 4) || std::string(magic, 4) != "BNNS") throw ParseError("bad sample dump magic", 0);
  offset = 4;
  const std::uint32_t n = get_le32(in, offset);
  const std::uint32_t dim = get_le32(in, offset);
  const std::uint32_t len = get_le32(in, offset);
  std::string layout_text(len, '\0');
  if (!in.read(layout_text.data(), len)) throw ParseError("truncated layout block", offset);
  offset += len;
  SampleDump dump;
  try {
    dump.layout = nlohmann::json::parse(layout_text);
  } catch (const nlohmann::json::exception&) {
    throw ParseError("layout block is not JSON", offset - len);
  }
  dump.samples.resize(n, dim);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < dim; ++j) {
      unsigned char b[8];
      if (!in.read(reinterpret_cast<char*>(b), 8)) throw ParseError("truncated sample data", offset);
      offset += 8;
      std::uint64_t bits = 0;
      for (int k = 0; k < 8; ++k) bits |= std::uint64_t{b[k]} << (8 * k);
      dump.samples(i, j) = std::bit_cast<double>(bits);
    }
  }
  return dump;
}

}  // namespace mfdl
