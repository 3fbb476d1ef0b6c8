#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace docpool {

struct Neighbor {
  std::string doc_id;
  double score = 0.0;  // cosine similarity

  friend bool operator==(const Neighbor&, const Neighbor&) = default;
};

/// Ranking order shared by every backend: score descending, then doc_id
/// ascending.
bool ranks_before(const Neighbor& a, const Neighbor& b);

double cosine(std::span<const double> a, std::span<const double> b);

using VectorMap = std::map<std::string, std::vector<double>>;

/// Top-K cosine retrieval over a fixed collection. Implementations are
/// immutable after construction and safe to query concurrently.
class CosineIndex {
 public:
  virtual ~CosineIndex() = default;

  virtual std::size_t size() const noexcept = 0;
  virtual std::size_t dim() const noexcept = 0;
  /// Up to k neighbours (fewer when the collection is smaller), ranked by
  /// ranks_before. Throws ValidationError on dim mismatch.
  virtual std::vector<Neighbor> search(std::span<const double> query, std::size_t k) const = 0;
};

/// Full scan over unit-normalised rows.
class ExactCosineIndex final : public CosineIndex {
 public:
  explicit ExactCosineIndex(const VectorMap& vectors);

  std::size_t size() const noexcept override { return ids_.size(); }
  std::size_t dim() const noexcept override { return dim_; }
  std::vector<Neighbor> search(std::span<const double> query, std::size_t k) const override;

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<double> rows_;  // size() x dim(), unit norm
};

/// Inverted-file index: spherical k-means partitions, `n_probe` closest lists
/// scanned per query. With n_probe == n_lists it returns exactly what
/// ExactCosineIndex returns.
class IvfCosineIndex final : public CosineIndex {
 public:
  IvfCosineIndex(const VectorMap& vectors, std::size_t n_lists, std::size_t n_probe, std::uint64_t seed);

  std::size_t size() const noexcept override { return ids_.size(); }
  std::size_t dim() const noexcept override { return dim_; }
  std::size_t n_lists() const noexcept { return lists_.size(); }
  std::vector<Neighbor> search(std::span<const double> query, std::size_t k) const override;

 private:
  std::size_t dim_ = 0;
  std::size_t n_probe_ = 0;
  std::vector<std::string> ids_;
  std::vector<double> rows_;
  std::vector<double> centroids_;
  std::vector<std::vector<std::size_t>> lists_;
};

enum class IndexBackend { kExact, kIvf };

struct IndexOptions {
  IndexBackend backend = IndexBackend::kExact;
  std::size_t n_lists = 16;
  std::size_t n_probe = 0;  // 0 = probe every list
  std::uint64_t seed = 0;
};

/// Throws ValidationError when vectors differ in dim or the map is empty.
std::unique_ptr<CosineIndex> build_index(const VectorMap& vectors, const IndexOptions& options = {});

std::vector<Neighbor> topk(const CosineIndex& index, std::span<const double> query, std::size_t k = 32);

// ---------------------------------------------------------------------------
// Matching

struct AlignedPair {
  std::string src;
  std::string tgt;
  double score = 0.0;

  friend bool operator==(const AlignedPair&, const AlignedPair&) = default;
};

struct AlignmentResult {
  /// domain -> one-to-one pairs, score descending.
  std::map<std::string, std::vector<AlignedPair>> by_domain;

  std::vector<AlignedPair> all() const;
  std::size_t size() const;
};

/// src doc_id -> ranked candidate targets.
using CandidateLists = std::map<std::string, std::vector<Neighbor>>;

/// Competitive linking per domain: all candidate edges sorted by score
/// (ties: src, then tgt, lexicographically) and accepted greedily while both
/// endpoints are unmatched.
AlignmentResult match(const std::map<std::string, CandidateLists>& candidates_by_domain);

/// domain -> doc_id -> document vector.
using DomainCollection = std::map<std::string, VectorMap>;

/// Top-k candidates for every source document among target documents of the
/// same domain. Domains without targets yield empty candidate lists.
std::map<std::string, CandidateLists> retrieve_candidates(const DomainCollection& src,
                                                          const DomainCollection& tgt, std::size_t k = 32,
                                                          const IndexOptions& options = {});

AlignmentResult align(const DomainCollection& src, const DomainCollection& tgt, std::size_t k = 32,
                      const IndexOptions& options = {});

// ---------------------------------------------------------------------------

using GoldPairs = std::set<std::pair<std::string, std::string>>;

/// |predicted ∩ gold| / |gold|. Throws ValidationError on empty gold.
double recall(const AlignmentResult& result, const GoldPairs& gold);

/// One flag per gold pair (in set order): was it predicted?
std::vector<bool> gold_hits(const AlignmentResult& result, const GoldPairs& gold);

/// TSV `src_doc_id \t tgt_doc_id`, one pair per line.
GoldPairs read_gold_pairs(const std::filesystem::path& path);
/// TSV `src \t tgt \t score \t domain`.
void write_pairs(const std::filesystem::path& path, const AlignmentResult& result);

}  // namespace docpool
