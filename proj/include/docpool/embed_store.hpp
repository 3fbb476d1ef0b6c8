#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace docpool {

/// count x dim matrix of 32-bit floats, row-major. Row i is sentence i of the
/// owning document (or one excerpt / one composed document vector).
class EmbeddingMatrix {
 public:
  /// Throws ValidationError when dim == 0.
  EmbeddingMatrix(std::size_t count, std::size_t dim);
  EmbeddingMatrix(std::size_t count, std::size_t dim, std::vector<float> values);

  static EmbeddingMatrix from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t count() const noexcept { return count_; }
  std::size_t dim() const noexcept { return dim_; }

  std::span<const float> row(std::size_t i) const { return {values_.data() + i * dim_, dim_}; }
  std::span<float> row(std::size_t i) { return {values_.data() + i * dim_, dim_}; }
  float operator()(std::size_t i, std::size_t j) const { return values_[i * dim_ + j]; }
  float& operator()(std::size_t i, std::size_t j) { return values_[i * dim_ + j]; }

  std::span<const float> values() const noexcept { return values_; }

  void append_row(std::span<const float> row);
  void append_row(std::span<const double> row);

  /// Rows [first, first + n) as a new matrix.
  EmbeddingMatrix slice(std::size_t first, std::size_t n) const;

  /// Throws ValidationError naming the first non-finite entry.
  void validate_finite() const;

  friend bool operator==(const EmbeddingMatrix&, const EmbeddingMatrix&) = default;

 private:
  std::size_t count_;
  std::size_t dim_;
  std::vector<float> values_;
};

using EmbeddingMap = std::map<std::string, EmbeddingMatrix>;

/// Stacks all rows of `parts` (same dim) into one pool.
EmbeddingMatrix stack_rows(std::span<const EmbeddingMatrix* const> parts);

// ---------------------------------------------------------------------------
// SEMB format, little-endian:
//   "SEMB" | u32 version=1 | u32 dim | u64 count | count*dim f32, row-major

inline constexpr std::uint32_t kSembVersion = 1;

void write_semb(std::ostream& out, const EmbeddingMatrix& m);
/// `base_offset` is added to byte offsets reported in FormatError.
EmbeddingMatrix read_semb(std::istream& in, std::uint64_t base_offset = 0);

void write_semb_file(const std::filesystem::path& path, const EmbeddingMatrix& m);
EmbeddingMatrix read_semb_file(const std::filesystem::path& path);

/// Loads either a directory of `<doc_id>.semb` files or a container file
/// `<name>.semb` with its `<name>.semb.idx` JSON sidecar mapping
/// doc_id -> [row_start, row_count].
EmbeddingMap load_embeddings(const std::filesystem::path& path);

/// Writes one `<doc_id>.semb` per entry into `dir` (created if needed).
void store_embeddings_dir(const EmbeddingMap& map, const std::filesystem::path& dir);
/// Writes a container plus `<path>.idx`. Rows are laid out in doc_id order.
void store_embeddings_container(const EmbeddingMap& map, const std::filesystem::path& path);
/// Directory layout when `path` is an existing directory, container otherwise.
void store_embeddings(const EmbeddingMap& map, const std::filesystem::path& path);

std::filesystem::path index_sidecar_path(const std::filesystem::path& container);

// ---------------------------------------------------------------------------
// PCA

struct PcaModel {
  std::size_t input_dim = 0;
  std::size_t k = 0;
  std::vector<double> mean;                // input_dim
  std::vector<double> components;          // k x input_dim, rows orthonormal
  std::vector<double> explained_variance;  // k, descending

  std::span<const double> component(std::size_t i) const {
    return {components.data() + i * input_dim, input_dim};
  }
};

/// Top-k principal directions of the mean-centred pool (sample covariance,
/// no whitening). Each component's largest-magnitude coordinate is made
/// positive so the result is deterministic. Throws ValidationError
/// ("insufficient samples") when pool.count() < k, or when k > dim.
PcaModel pca_fit(const EmbeddingMatrix& pool, std::size_t k = 128);

/// rows -> components * (row - mean). Throws ValidationError on dim mismatch.
EmbeddingMatrix pca_apply(const PcaModel& model, const EmbeddingMatrix& m);

// "SPCA" | u32 version=1 | u32 input_dim | u32 k | f64 mean | f64 components |
// f64 explained_variance, little-endian.
void save_pca_file(const std::filesystem::path& path, const PcaModel& model);
PcaModel load_pca_file(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

inline constexpr double kNormEpsilon = 1e-12;

double l2_norm(std::span<const double> v);
/// Unit-norm copy of v; v returned unchanged when its norm is <= 1e-12.
std::vector<double> l2_normalize(std::span<const double> v);
void l2_normalize_inplace(std::span<double> v);

std::vector<double> to_double(std::span<const float> v);

}  // namespace docpool
