#include "docpool/embed_store.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>

#include <Eigen/Dense>
#include <json.hpp>

#include "docpool/error.hpp"

namespace docpool {

static_assert(std::endian::native == std::endian::little,
              "SEMB I/O assumes a little-endian host");

EmbeddingMatrix::EmbeddingMatrix(std::size_t count, std::size_t dim)
    : EmbeddingMatrix(count, dim, std::vector<float>(count * dim, 0.0f)) {}

EmbeddingMatrix::EmbeddingMatrix(std::size_t count, std::size_t dim, std::vector<float> values)
    : count_(count), dim_(dim), values_(std::move(values)) {
  if (dim_ == 0) throw ValidationError("embedding dim must be > 0");
  if (values_.size() != count_ * dim_) {
    throw ValidationError("embedding payload has " + std::to_string(values_.size()) +
                          " values, expected " + std::to_string(count_ * dim_));
  }
}

EmbeddingMatrix EmbeddingMatrix::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw ValidationError("from_rows needs at least one row to fix the dim");
  EmbeddingMatrix m(0, rows.front().size());
  for (const auto& r : rows) m.append_row(std::span<const double>(r));
  return m;
}

void EmbeddingMatrix::append_row(std::span<const float> row) {
  if (row.size() != dim_) throw ValidationError("row dim mismatch");
  values_.insert(values_.end(), row.begin(), row.end());
  ++count_;
}

void EmbeddingMatrix::append_row(std::span<const double> row) {
  if (row.size() != dim_) throw ValidationError("row dim mismatch");
  for (const double v : row) values_.push_back(static_cast<float>(v));
  ++count_;
}

EmbeddingMatrix EmbeddingMatrix::slice(std::size_t first, std::size_t n) const {
  if (first + n > count_) throw ValidationError("slice out of range");
  const auto begin = values_.begin() + static_cast<std::ptrdiff_t>(first * dim_);
  return {n, dim_, std::vector<float>(begin, begin + static_cast<std::ptrdiff_t>(n * dim_))};
}

void EmbeddingMatrix::validate_finite() const {
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      throw ValidationError("non-finite embedding value at row " + std::to_string(i / dim_) +
                            ", column " + std::to_string(i % dim_));
    }
  }
}

EmbeddingMatrix stack_rows(std::span<const EmbeddingMatrix* const> parts) {
  if (parts.empty()) throw ValidationError("stack_rows: nothing to stack");
  const std::size_t dim = parts.front()->dim();
  std::size_t total = 0;
  for (const auto* p : parts) {
    if (p->dim() != dim) throw ValidationError("stack_rows: dim mismatch");
    total += p->count();
  }
  std::vector<float> values;
  values.reserve(total * dim);
  for (const auto* p : parts) values.insert(values.end(), p->values().begin(), p->values().end());
  return {total, dim, std::move(values)};
}

// ---------------------------------------------------------------------------
// SEMB

namespace {

constexpr std::array<char, 4> kMagic{'S', 'E', 'M', 'B'};
constexpr std::uint64_t kHeaderBytes = 4 + 4 + 4 + 8;

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, std::uint64_t offset, const char* field) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(T))) {
    throw FormatError(std::string("truncated SEMB header reading ") + field,
                      offset + static_cast<std::uint64_t>(in.gcount()));
  }
  return value;
}

}  // namespace

void write_semb(std::ostream& out, const EmbeddingMatrix& m) {
  m.validate_finite();
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kSembVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(m.dim()));
  put<std::uint64_t>(out, m.count());
  const auto values = m.values();
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!out) throw IoError("SEMB write failed");
}

EmbeddingMatrix read_semb(std::istream& in, std::uint64_t base_offset) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (in.gcount() != 4) throw FormatError("truncated SEMB magic", base_offset + in.gcount());
  if (magic != kMagic) throw FormatError("bad SEMB magic", base_offset);

  const auto version = get<std::uint32_t>(in, base_offset + 4, "version");
  if (version != kSembVersion) {
    throw FormatError("unsupported SEMB version " + std::to_string(version), base_offset + 4);
  }
  const auto dim = get<std::uint32_t>(in, base_offset + 8, "dim");
  const auto count = get<std::uint64_t>(in, base_offset + 12, "count");
  if (dim == 0) throw ValidationError("SEMB header declares dim=0");

  // Refuse absurd counts before allocating: at most what the stream still holds.
  const std::uint64_t payload_offset = base_offset + kHeaderBytes;
  const auto here = in.tellg();
  if (here != std::istream::pos_type(-1)) {
    in.seekg(0, std::ios::end);
    const auto end = in.tellg();
    in.seekg(here);
    const auto remaining = static_cast<std::uint64_t>(end - here);
    if (count > remaining / (std::uint64_t{dim} * sizeof(float))) {
      throw FormatError("truncated SEMB payload: header declares " + std::to_string(count) + "x" +
                            std::to_string(dim) + " floats",
                        payload_offset + remaining);
    }
  }

  std::vector<float> values(static_cast<std::size_t>(count) * dim);
  const auto bytes = static_cast<std::streamsize>(values.size() * sizeof(float));
  in.read(reinterpret_cast<char*>(values.data()), bytes);
  if (in.gcount() != bytes) {
    throw FormatError("truncated SEMB payload", payload_offset + static_cast<std::uint64_t>(in.gcount()));
  }
  EmbeddingMatrix m(static_cast<std::size_t>(count), dim, std::move(values));
  m.validate_finite();
  return m;
}

void write_semb_file(const std::filesystem::path& path, const EmbeddingMatrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write_semb(out, m);
}

EmbeddingMatrix read_semb_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return read_semb(in);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

std::filesystem::path index_sidecar_path(const std::filesystem::path& container) {
  auto p = container;
  p += ".idx";
  return p;
}

EmbeddingMap load_embeddings(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  EmbeddingMap map;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(path)) {
      if (entry.is_regular_file() && entry.path().extension() == ".semb") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) map.emplace(f.stem().string(), read_semb_file(f));
    return map;
  }

  if (!fs::exists(path)) throw IoError("embeddings path does not exist: " + path.string());
  const auto sidecar = index_sidecar_path(path);
  std::ifstream idx_in(sidecar);
  if (!idx_in) throw IoError("missing index sidecar " + sidecar.string());
  nlohmann::json idx;
  try {
    idx = nlohmann::json::parse(idx_in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(sidecar.string() + ": " + e.what(), e.byte);
  }

  const EmbeddingMatrix all = read_semb_file(path);
  for (const auto& [doc_id, entry] : idx.items()) {
    if (!entry.is_array() || entry.size() != 2 || !entry[0].is_number_unsigned() ||
        !entry[1].is_number_unsigned()) {
      throw ValidationError(sidecar.string() + ": entry for '" + doc_id + "' must be [row_start, row_count]");
    }
    const auto start = entry[0].get<std::uint64_t>();
    const auto rows = entry[1].get<std::uint64_t>();
    if (start + rows > all.count()) {
      throw ValidationError(sidecar.string() + ": rows for '" + doc_id + "' exceed container count");
    }
    map.emplace(doc_id, all.slice(start, rows));
  }
  return map;
}

void store_embeddings_dir(const EmbeddingMap& map, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [doc_id, m] : map) {
    if (doc_id.find('/') != std::string::npos || doc_id.empty() || doc_id == "." || doc_id == "..") {
      throw ValidationError("doc_id '" + doc_id + "' cannot be used as a file name");
    }
    write_semb_file(dir / (doc_id + ".semb"), m);
  }
}

void store_embeddings_container(const EmbeddingMap& map, const std::filesystem::path& path) {
  if (map.empty()) throw ValidationError("cannot store an empty embedding container (dim unknown)");
  std::vector<const EmbeddingMatrix*> parts;
  nlohmann::json idx = nlohmann::json::object();
  std::uint64_t start = 0;
  for (const auto& [doc_id, m] : map) {
    parts.push_back(&m);
    idx[doc_id] = {start, m.count()};
    start += m.count();
  }
  write_semb_file(path, stack_rows(parts));
  std::ofstream idx_out(index_sidecar_path(path));
  if (!idx_out) throw IoError("cannot write " + index_sidecar_path(path).string());
  idx_out << idx.dump() << '\n';
}

void store_embeddings(const EmbeddingMap& map, const std::filesystem::path& path) {
  if (std::filesystem::is_directory(path)) {
    store_embeddings_dir(map, path);
  } else {
    store_embeddings_container(map, path);
  }
}

// ---------------------------------------------------------------------------
// PCA

PcaModel pca_fit(const EmbeddingMatrix& pool, std::size_t k) {
  const std::size_t d = pool.dim();
  const std::size_t n = pool.count();
  if (k == 0 || k > d) {
    throw ValidationError("PCA k=" + std::to_string(k) + " must be in [1, dim=" + std::to_string(d) + "]");
  }
  if (n < k) {
    throw ValidationError("insufficient samples: " + std::to_string(n) + " rows for k=" + std::to_string(k));
  }

  PcaModel model;
  model.input_dim = d;
  model.k = k;
  model.mean.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = pool.row(i);
    for (std::size_t j = 0; j < d; ++j) model.mean[j] += r[j];
  }
  for (auto& m : model.mean) m /= static_cast<double>(n);

  Eigen::MatrixXd centered(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = pool.row(i);
    for (std::size_t j = 0; j < d; ++j) centered(i, j) = r[j] - model.mean[j];
  }
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / denom;

  // Eigenvalues come back ascending.
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw std::runtime_error("PCA eigendecomposition failed");

  model.components.resize(k * d);
  model.explained_variance.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    const auto src = static_cast<Eigen::Index>(d - 1 - c);
    Eigen::VectorXd v = solver.eigenvectors().col(src);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    for (std::size_t j = 0; j < d; ++j) model.components[c * d + j] = v(static_cast<Eigen::Index>(j));
    model.explained_variance[c] = std::max(0.0, solver.eigenvalues()(src));
  }
  return model;
}

EmbeddingMatrix pca_apply(const PcaModel& model, const EmbeddingMatrix& m) {
  if (m.dim() != model.input_dim) {
    throw ValidationError("PCA dim mismatch: model expects " + std::to_string(model.input_dim) +
                          ", got " + std::to_string(m.dim()));
  }
  const std::size_t d = model.input_dim;
  EmbeddingMatrix out(m.count(), model.k);
  std::vector<double> centered(d);
  for (std::size_t i = 0; i < m.count(); ++i) {
    const auto r = m.row(i);
    for (std::size_t j = 0; j < d; ++j) centered[j] = r[j] - model.mean[j];
    auto o = out.row(i);
    for (std::size_t c = 0; c < model.k; ++c) {
      const auto comp = model.component(c);
      o[c] = static_cast<float>(std::inner_product(comp.begin(), comp.end(), centered.begin(), 0.0));
    }
  }
  return out;
}

namespace {

constexpr std::array<char, 4> kPcaMagic{'S', 'P', 'C', 'A'};
constexpr std::uint32_t kPcaVersion = 1;

void put_doubles(std::ostream& out, const std::vector<double>& v) {
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> get_doubles(std::istream& in, std::size_t n, std::uint64_t offset) {
  std::vector<double> v(n);
  const auto bytes = static_cast<std::streamsize>(n * sizeof(double));
  in.read(reinterpret_cast<char*>(v.data()), bytes);
  if (in.gcount() != bytes) throw FormatError("truncated PCA model", offset + static_cast<std::uint64_t>(in.gcount()));
  return v;
}

}  // namespace

void save_pca_file(const std::filesystem::path& path, const PcaModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(kPcaMagic.data(), kPcaMagic.size());
  put<std::uint32_t>(out, kPcaVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.input_dim));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.k));
  put_doubles(out, model.mean);
  put_doubles(out, model.components);
  put_doubles(out, model.explained_variance);
  if (!out) throw IoError("write failed for " + path.string());
}

PcaModel load_pca_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (in.gcount() != 4 || magic != kPcaMagic) throw FormatError(path.string() + ": bad PCA magic", 0);
  if (get<std::uint32_t>(in, 4, "version") != kPcaVersion) {
    throw FormatError(path.string() + ": unsupported PCA version", 4);
  }
  PcaModel model;
  model.input_dim = get<std::uint32_t>(in, 8, "input_dim");
  model.k = get<std::uint32_t>(in, 12, "k");
  if (model.input_dim == 0 || model.k == 0 || model.k > model.input_dim) {
    throw ValidationError(path.string() + ": inconsistent PCA shape");
  }
  std::uint64_t offset = 16;
  model.mean = get_doubles(in, model.input_dim, offset);
  offset += model.input_dim * sizeof(double);
  model.components = get_doubles(in, model.k * model.input_dim, offset);
  offset += model.k * model.input_dim * sizeof(double);
  model.explained_variance = get_doubles(in, model.k, offset);
  return model;
}

// ---------------------------------------------------------------------------

double l2_norm(std::span<const double> v) {
  double sum = 0.0;
  for (const double x : v) sum += x * x;
  return std::sqrt(sum);
}

std::vector<double> l2_normalize(std::span<const double> v) {
  std::vector<double> out(v.begin(), v.end());
  l2_normalize_inplace(out);
  return out;
}

void l2_normalize_inplace(std::span<double> v) {
  const double norm = l2_norm(v);
  if (norm <= kNormEpsilon) return;
  for (auto& x : v) x /= norm;
}

std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

}  // namespace docpool
