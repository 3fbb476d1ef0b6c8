#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "docpool/corpus.hpp"
#include "docpool/embed_store.hpp"
#include "docpool/matrix.hpp"

namespace docpool {

/// Modified PERT density on [a, c] with mode b and shape gamma:
/// Beta(alpha, beta) rescaled to [a, c] with
///   alpha = 1 + gamma (b - a) / (c - a),  beta = 1 + gamma (c - b) / (c - a).
/// Zero outside [a, c]. Throws ValidationError unless a < c and a <= b <= c.
double pert_pdf(double x, double a, double b, double c, double gamma);

/// J overlapping PERT windows over relative document position x in [0, 1].
/// Window j has mode (j + 0.5) / J and support mode +- 1/J. The cache holds
/// each window sampled at x_i = i / R for i = 0..R (R + 1 samples); samples
/// outside a window's support are zero.
class PertWindowBank {
 public:
  explicit PertWindowBank(std::size_t parts = 16, double gamma = 20.0, std::size_t resolution = 1024);

  std::size_t parts() const noexcept { return parts_; }
  double gamma() const noexcept { return gamma_; }
  std::size_t resolution() const noexcept { return resolution_; }

  double mode(std::size_t j) const;
  double support_low(std::size_t j) const;
  double support_high(std::size_t j) const;

  /// Exact density of window j at x (no caching).
  double density(std::size_t j, double x) const;

  /// Cached samples of window j, size resolution + 1.
  std::span<const double> window(std::size_t j) const {
    return {cache_.data() + j * (resolution_ + 1), resolution_ + 1};
  }
  /// Nearest-sample lookup; x is clamped to [0, 1].
  double lookup(std::size_t j, double x) const;

  friend bool operator==(const PertWindowBank&, const PertWindowBank&) = default;

 private:
  std::size_t parts_;
  double gamma_;
  std::size_t resolution_;
  std::vector<double> cache_;
};

PertWindowBank build_window_bank(std::size_t parts = 16, double gamma = 20.0,
                                 std::size_t resolution = 1024);

/// J x N matrix P_j(n): sentence n sits at x_n = (n + 0.5) / N; each row is
/// sum-normalised when its sum is positive, otherwise left all-zero.
DenseMatrix window_weights(const PertWindowBank& bank, std::size_t n_sentences);

/// Per-sentence boilerplate factors B(S_n) in (0, 1] keyed by doc_id.
/// Disabled: all ones. Enabled: 1 / (number of documents of the same
/// domain_id containing the identical sentence text). Documents without a
/// domain_id share one unnamed group.
std::unordered_map<std::string, std::vector<double>> boilerplate_weights(
    std::span<const Document> collection, bool enabled);

/// Document vector of length J * d: D_j = sum_n emb_n P_j(n) B_n, each D_j
/// L2-normalised (all-zero parts stay zero), the concatenation scaled by
/// 1/sqrt(J). An empty `boilerplate` span means B = 1.
std::vector<double> tk_pert(const EmbeddingMatrix& embs, const PertWindowBank& bank,
                            std::span<const double> boilerplate = {});

/// As tk_pert with an extra per-sentence factor tfidf(S_n).
std::vector<double> tf_pert(const EmbeddingMatrix& embs, const PertWindowBank& bank,
                            std::span<const double> boilerplate, std::span<const double> tfidf);

/// Shared composition: D_j = sum_n emb_n * window(j, n) * factor_n, normalised
/// and concatenated as in tk_pert. `factors` may be empty (all ones).
std::vector<double> compose_windows(const EmbeddingMatrix& embs, const DenseMatrix& window,
                                    std::span<const double> factors);

}  // namespace docpool
