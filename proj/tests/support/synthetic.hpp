#pragma once

// Synthetic labelled document sets and bilingual collections.

#include <algorithm>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "docpool/align.hpp"
#include "docpool/learner.hpp"
#include "testkit.hpp"

namespace synthetic {

using Centroids = std::vector<std::vector<double>>;

inline Centroids centroids(std::uint64_t seed, std::size_t count, std::size_t d) {
  std::mt19937_64 rng(seed);
  Centroids c;
  for (std::size_t i = 0; i < count; ++i) c.push_back(testkit::gaussian_vector(rng, d));
  return c;
}

inline std::vector<double> tfidf_for(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.5, 1.5);
  std::vector<double> t(n);
  for (auto& x : t) x = u(rng);
  return t;
}

/// Uniform-prior genre set: document i has class i % C and 3..12 sentences,
/// each its class centroid plus isotropic noise.
inline std::vector<docpool::LabeledExample> genre_set(std::mt19937_64& rng, const Centroids& c,
                                                      std::size_t n_docs, double noise,
                                                      const std::string& prefix) {
  std::uniform_int_distribution<std::size_t> len(3, 12);
  const std::size_t d = c[0].size();
  std::vector<docpool::LabeledExample> out;
  for (std::size_t i = 0; i < n_docs; ++i) {
    const std::size_t cls = i % c.size();
    docpool::EmbeddingMatrix embs(0, d);
    const std::size_t n = len(rng);
    for (std::size_t s = 0; s < n; ++s) {
      auto row = testkit::gaussian_vector(rng, d, noise);
      for (std::size_t k = 0; k < d; ++k) row[k] += c[cls][k];
      embs.append_row(std::span<const double>(row));
    }
    out.push_back({prefix + std::to_string(i), "en", std::move(embs), tfidf_for(rng, n),
                   {"genre" + std::to_string(cls)}});
  }
  return out;
}

/// Multi-label set: codes 0..dominant-1 each occur with probability `p_dom`,
/// the remaining codes with `p_tail`. Every active code contributes 2..4
/// sentences near its centroid; sentence order is shuffled.
inline std::vector<docpool::LabeledExample> coded_set(std::mt19937_64& rng, const Centroids& c,
                                                      std::size_t dominant, std::size_t n_docs,
                                                      double p_dom, double p_tail, double noise,
                                                      const std::string& prefix) {
  std::bernoulli_distribution dom(p_dom), tail(p_tail);
  std::uniform_int_distribution<std::size_t> reps(2, 4);
  std::uniform_int_distribution<std::size_t> any(0, c.size() - 1);
  const std::size_t d = c[0].size();
  std::vector<docpool::LabeledExample> out;
  for (std::size_t i = 0; i < n_docs; ++i) {
    std::vector<std::size_t> codes;
    for (std::size_t k = 0; k < c.size(); ++k) {
      if (k < dominant ? dom(rng) : tail(rng)) codes.push_back(k);
    }
    if (codes.empty()) codes.push_back(any(rng));
    std::vector<std::vector<double>> rows;
    for (const auto k : codes) {
      for (std::size_t r = reps(rng); r > 0; --r) {
        auto row = testkit::gaussian_vector(rng, d, noise);
        for (std::size_t j = 0; j < d; ++j) row[j] += c[k][j];
        rows.push_back(std::move(row));
      }
    }
    std::shuffle(rows.begin(), rows.end(), rng);
    docpool::EmbeddingMatrix embs(0, d);
    for (const auto& row : rows) embs.append_row(std::span<const double>(row));
    std::vector<std::string> labels;
    for (const auto k : codes) labels.push_back("code" + std::to_string(k));
    out.push_back({prefix + std::to_string(i), "en", std::move(embs), tfidf_for(rng, rows.size()),
                   std::move(labels)});
  }
  return out;
}

/// Random model with non-zero queries and biases, for gradient checks.
inline docpool::PoolerModel random_model(std::uint64_t seed, docpool::PoolMode mode, docpool::TaskKind task,
                                         std::size_t d, std::size_t parts, std::size_t hidden,
                                         std::size_t classes) {
  std::vector<std::string> labels;
  for (std::size_t c = 0; c < classes; ++c) labels.push_back("c" + std::to_string(c));
  auto m = docpool::PoolerModel::create(mode, task, d, parts, hidden, labels, seed);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> g(0.0, 0.5);
  for (auto& x : m.params.queries.values()) x = 2.0 * g(rng);
  for (auto& x : m.params.b1) x = g(rng);
  for (auto& x : m.params.b2) x = g(rng);
  return m;
}

/// Parallel collection: pair i shares a latent vector z_i; each side adds
/// independent N(0, sigma^2) noise. Ids are "s0000" / "t0000".
struct Bilingual {
  docpool::VectorMap src;
  docpool::VectorMap tgt;
  docpool::GoldPairs gold;
};

inline Bilingual bilingual(std::uint64_t seed, std::size_t pairs, std::size_t d, double sigma) {
  std::mt19937_64 latent_rng(seed);
  std::mt19937_64 noise_rng(seed ^ 0x5eedULL);
  Bilingual b;
  char buf[32];
  for (std::size_t i = 0; i < pairs; ++i) {
    const auto z = testkit::gaussian_vector(latent_rng, d);
    auto s = z;
    auto t = z;
    if (sigma > 0) {
      const auto ns = testkit::gaussian_vector(noise_rng, d, sigma);
      const auto nt = testkit::gaussian_vector(noise_rng, d, sigma);
      for (std::size_t k = 0; k < d; ++k) {
        s[k] += ns[k];
        t[k] += nt[k];
      }
    }
    std::snprintf(buf, sizeof buf, "%04zu", i);
    b.src["s" + std::string(buf)] = std::move(s);
    b.tgt["t" + std::string(buf)] = std::move(t);
    b.gold.emplace("s" + std::string(buf), "t" + std::string(buf));
  }
  return b;
}

}  // namespace synthetic
