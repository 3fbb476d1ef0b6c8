#include "docpool/align.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <tuple>

#include "docpool/embed_store.hpp"
#include "docpool/error.hpp"
#include "docpool/parallel.hpp"

namespace docpool {

bool ranks_before(const Neighbor& a, const Neighbor& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.doc_id < b.doc_id;
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("cosine: dim mismatch");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na <= kNormEpsilon || nb <= kNormEpsilon) return 0.0;
  return dot / (na * nb);
}

namespace {

std::size_t common_dim(const VectorMap& vectors) {
  if (vectors.empty()) throw ValidationError("cannot index an empty collection");
  const std::size_t dim = vectors.begin()->second.size();
  if (dim == 0) throw ValidationError("cannot index zero-dimensional vectors");
  for (const auto& [id, v] : vectors) {
    if (v.size() != dim) {
      throw ValidationError("vector '" + id + "' has dim " + std::to_string(v.size()) + ", expected " +
                            std::to_string(dim));
    }
  }
  return dim;
}

void flatten_normalized(const VectorMap& vectors, std::vector<std::string>& ids, std::vector<double>& rows) {
  ids.reserve(vectors.size());
  for (const auto& [id, v] : vectors) {
    ids.push_back(id);
    const auto unit = l2_normalize(v);
    rows.insert(rows.end(), unit.begin(), unit.end());
  }
}

double dot(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) s += a[i] * b[i];
  return s;
}

std::vector<double> unit_query(std::span<const double> query, std::size_t dim) {
  if (query.size() != dim) {
    throw ValidationError("query dim " + std::to_string(query.size()) + " does not match index dim " +
                          std::to_string(dim));
  }
  return l2_normalize(query);
}

// Keeps the best k of `candidates` in ranked order.
void keep_top(std::vector<Neighbor>& candidates, std::size_t k) {
  const std::size_t keep = std::min(k, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                    candidates.end(), ranks_before);
  candidates.resize(keep);
}

}  // namespace

ExactCosineIndex::ExactCosineIndex(const VectorMap& vectors) : dim_(common_dim(vectors)) {
  flatten_normalized(vectors, ids_, rows_);
}

std::vector<Neighbor> ExactCosineIndex::search(std::span<const double> query, std::size_t k) const {
  const auto q = unit_query(query, dim_);
  std::vector<Neighbor> all;
  all.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    all.push_back({ids_[i], dot(q.data(), rows_.data() + i * dim_, dim_)});
  }
  keep_top(all, k);
  return all;
}

IvfCosineIndex::IvfCosineIndex(const VectorMap& vectors, std::size_t n_lists, std::size_t n_probe,
                               std::uint64_t seed)
    : dim_(common_dim(vectors)) {
  flatten_normalized(vectors, ids_, rows_);
  const std::size_t n = ids_.size();
  const std::size_t lists = std::clamp<std::size_t>(n_lists, 1, n);
  n_probe_ = n_probe == 0 ? lists : std::min(n_probe, lists);

  // Seed centroids with distinct rows chosen by a partial Fisher-Yates.
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> pick(n);
  std::iota(pick.begin(), pick.end(), std::size_t{0});
  for (std::size_t i = 0; i < lists; ++i) {
    std::swap(pick[i], pick[i + static_cast<std::size_t>(rng() % (n - i))]);
  }
  centroids_.resize(lists * dim_);
  for (std::size_t c = 0; c < lists; ++c) {
    std::copy_n(rows_.begin() + static_cast<std::ptrdiff_t>(pick[c] * dim_), dim_,
                centroids_.begin() + static_cast<std::ptrdiff_t>(c * dim_));
  }

  std::vector<std::size_t> assignment(n, 0);
  const auto assign = [&] {
    for (std::size_t i = 0; i < n; ++i) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < lists; ++c) {
        const double s = dot(rows_.data() + i * dim_, centroids_.data() + c * dim_, dim_);
        if (s > best) {
          best = s;
          assignment[i] = c;
        }
      }
    }
  };
  constexpr int kIterations = 10;
  for (int it = 0; it < kIterations; ++it) {
    assign();
    std::vector<double> sums(lists * dim_, 0.0);
    std::vector<std::size_t> sizes(lists, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++sizes[assignment[i]];
      for (std::size_t k = 0; k < dim_; ++k) sums[assignment[i] * dim_ + k] += rows_[i * dim_ + k];
    }
    for (std::size_t c = 0; c < lists; ++c) {
      if (sizes[c] == 0) continue;  // keep the previous centroid
      std::span<double> centroid(sums.data() + c * dim_, dim_);
      if (l2_norm(centroid) <= kNormEpsilon) continue;
      l2_normalize_inplace(centroid);
      std::copy(centroid.begin(), centroid.end(), centroids_.begin() + static_cast<std::ptrdiff_t>(c * dim_));
    }
  }
  assign();
  lists_.assign(lists, {});
  for (std::size_t i = 0; i < n; ++i) lists_[assignment[i]].push_back(i);
}

std::vector<Neighbor> IvfCosineIndex::search(std::span<const double> query, std::size_t k) const {
  const auto q = unit_query(query, dim_);
  std::vector<std::pair<double, std::size_t>> order;
  order.reserve(lists_.size());
  for (std::size_t c = 0; c < lists_.size(); ++c) {
    order.emplace_back(dot(q.data(), centroids_.data() + c * dim_, dim_), c);
  }
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });

  std::vector<Neighbor> candidates;
  for (std::size_t p = 0; p < n_probe_; ++p) {
    for (const auto i : lists_[order[p].second]) {
      candidates.push_back({ids_[i], dot(q.data(), rows_.data() + i * dim_, dim_)});
    }
  }
  keep_top(candidates, k);
  return candidates;
}

std::unique_ptr<CosineIndex> build_index(const VectorMap& vectors, const IndexOptions& options) {
  if (options.backend == IndexBackend::kIvf) {
    return std::make_unique<IvfCosineIndex>(vectors, options.n_lists, options.n_probe, options.seed);
  }
  return std::make_unique<ExactCosineIndex>(vectors);
}

std::vector<Neighbor> topk(const CosineIndex& index, std::span<const double> query, std::size_t k) {
  if (k == 0) throw ValidationError("top-k needs k >= 1");
  return index.search(query, k);
}

// ---------------------------------------------------------------------------

std::vector<AlignedPair> AlignmentResult::all() const {
  std::vector<AlignedPair> out;
  for (const auto& [domain, pairs] : by_domain) out.insert(out.end(), pairs.begin(), pairs.end());
  return out;
}

std::size_t AlignmentResult::size() const {
  std::size_t n = 0;
  for (const auto& [domain, pairs] : by_domain) n += pairs.size();
  return n;
}

AlignmentResult match(const std::map<std::string, CandidateLists>& candidates_by_domain) {
  AlignmentResult result;
  for (const auto& [domain, lists] : candidates_by_domain) {
    std::vector<AlignedPair> edges;
    for (const auto& [src, neighbors] : lists) {
      for (const auto& nb : neighbors) edges.push_back({src, nb.doc_id, nb.score});
    }
    std::sort(edges.begin(), edges.end(), [](const AlignedPair& a, const AlignedPair& b) {
      if (a.score != b.score) return a.score > b.score;
      return std::tie(a.src, a.tgt) < std::tie(b.src, b.tgt);
    });
    std::set<std::string> used_src;
    std::set<std::string> used_tgt;
    auto& accepted = result.by_domain[domain];
    for (auto& e : edges) {
      if (used_src.contains(e.src) || used_tgt.contains(e.tgt)) continue;
      used_src.insert(e.src);
      used_tgt.insert(e.tgt);
      accepted.push_back(std::move(e));
    }
  }
  return result;
}

std::map<std::string, CandidateLists> retrieve_candidates(const DomainCollection& src,
                                                          const DomainCollection& tgt, std::size_t k,
                                                          const IndexOptions& options) {
  std::map<std::string, CandidateLists> out;
  for (const auto& [domain, sources] : src) {
    auto& lists = out[domain];
    const auto t = tgt.find(domain);
    if (t == tgt.end() || t->second.empty()) {
      for (const auto& [id, v] : sources) lists[id];
      continue;
    }
    const auto index = build_index(t->second, options);
    std::vector<const std::pair<const std::string, std::vector<double>>*> items;
    for (const auto& item : sources) items.push_back(&item);
    std::vector<std::vector<Neighbor>> results(items.size());
    parallel_for(items.size(), [&](std::size_t i) { results[i] = topk(*index, items[i]->second, k); });
    for (std::size_t i = 0; i < items.size(); ++i) lists[items[i]->first] = std::move(results[i]);
  }
  return out;
}

AlignmentResult align(const DomainCollection& src, const DomainCollection& tgt, std::size_t k,
                      const IndexOptions& options) {
  return match(retrieve_candidates(src, tgt, k, options));
}

// ---------------------------------------------------------------------------

std::vector<bool> gold_hits(const AlignmentResult& result, const GoldPairs& gold) {
  GoldPairs predicted;
  for (const auto& [domain, pairs] : result.by_domain) {
    for (const auto& p : pairs) predicted.emplace(p.src, p.tgt);
  }
  std::vector<bool> hits;
  hits.reserve(gold.size());
  for (const auto& g : gold) hits.push_back(predicted.contains(g));
  return hits;
}

double recall(const AlignmentResult& result, const GoldPairs& gold) {
  if (gold.empty()) throw ValidationError("recall needs at least one gold pair");
  const auto hits = gold_hits(result, gold);
  return static_cast<double>(std::count(hits.begin(), hits.end(), true)) / static_cast<double>(gold.size());
}

GoldPairs read_gold_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open gold pairs " + path.string());
  GoldPairs gold;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size()) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": expected 'src<TAB>tgt'");
    }
    auto tgt = line.substr(tab + 1);
    if (const auto extra = tgt.find('\t'); extra != std::string::npos) tgt.resize(extra);
    gold.emplace(line.substr(0, tab), std::move(tgt));
  }
  return gold;
}

void write_pairs(const std::filesystem::path& path, const AlignmentResult& result) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write pairs " + path.string());
  out << std::setprecision(9);
  for (const auto& [domain, pairs] : result.by_domain) {
    for (const auto& p : pairs) out << p.src << '\t' << p.tgt << '\t' << p.score << '\t' << domain << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace docpool
