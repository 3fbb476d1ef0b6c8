#include "docpool/pert.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_set>

#include "docpool/error.hpp"

namespace docpool {

double pert_pdf(double x, double a, double b, double c, double gamma) {
  if (!(a < c)) throw ValidationError("pert_pdf requires a < c");
  if (b < a || b > c) throw ValidationError("pert_pdf requires a <= b <= c");
  if (x < a || x > c) return 0.0;

  const double width = c - a;
  const double alpha = 1.0 + gamma * (b - a) / width;
  const double beta = 1.0 + gamma * (c - b) / width;
  const double log_beta_fn = std::lgamma(alpha) + std::lgamma(beta) - std::lgamma(alpha + beta);
  // Boundary factors are zero for alpha, beta > 1; pow(0, 0) = 1 covers the
  // degenerate alpha == 1 / beta == 1 cases.
  const double num = std::pow(x - a, alpha - 1.0) * std::pow(c - x, beta - 1.0);
  return num / std::exp(log_beta_fn + (alpha + beta - 1.0) * std::log(width));
}

PertWindowBank::PertWindowBank(std::size_t parts, double gamma, std::size_t resolution)
    : parts_(parts), gamma_(gamma), resolution_(resolution) {
  if (parts_ == 0) throw ValidationError("PERT bank needs at least one part");
  if (resolution_ == 0) throw ValidationError("PERT cache resolution must be positive");
  if (!(gamma_ >= 0.0)) throw ValidationError("PERT shape gamma must be non-negative");

  cache_.assign(parts_ * (resolution_ + 1), 0.0);
  for (std::size_t j = 0; j < parts_; ++j) {
    auto* row = cache_.data() + j * (resolution_ + 1);
    for (std::size_t i = 0; i <= resolution_; ++i) {
      row[i] = density(j, static_cast<double>(i) / static_cast<double>(resolution_));
    }
  }
}

double PertWindowBank::mode(std::size_t j) const {
  return (static_cast<double>(j) + 0.5) / static_cast<double>(parts_);
}

double PertWindowBank::support_low(std::size_t j) const {
  return mode(j) - 1.0 / static_cast<double>(parts_);
}

double PertWindowBank::support_high(std::size_t j) const {
  return mode(j) + 1.0 / static_cast<double>(parts_);
}

double PertWindowBank::density(std::size_t j, double x) const {
  return pert_pdf(x, support_low(j), mode(j), support_high(j), gamma_);
}

double PertWindowBank::lookup(std::size_t j, double x) const {
  const double clamped = std::clamp(x, 0.0, 1.0);
  const auto i = static_cast<std::size_t>(std::lround(clamped * static_cast<double>(resolution_)));
  return window(j)[i];
}

PertWindowBank build_window_bank(std::size_t parts, double gamma, std::size_t resolution) {
  return PertWindowBank(parts, gamma, resolution);
}

DenseMatrix window_weights(const PertWindowBank& bank, std::size_t n_sentences) {
  if (n_sentences == 0) throw ValidationError("window_weights needs at least one sentence");
  DenseMatrix w(bank.parts(), n_sentences);
  for (std::size_t j = 0; j < bank.parts(); ++j) {
    double sum = 0.0;
    for (std::size_t n = 0; n < n_sentences; ++n) {
      const double x = (static_cast<double>(n) + 0.5) / static_cast<double>(n_sentences);
      w(j, n) = bank.lookup(j, x);
      sum += w(j, n);
    }
    if (sum > 0.0) {
      for (auto& v : w.row(j)) v /= sum;
    }
  }
  return w;
}

std::unordered_map<std::string, std::vector<double>> boilerplate_weights(
    std::span<const Document> collection, bool enabled) {
  std::unordered_map<std::string, std::vector<double>> out;
  if (!enabled) {
    for (const auto& doc : collection) out[doc.doc_id].assign(doc.size(), 1.0);
    return out;
  }

  // domain -> sentence text -> number of documents containing it
  std::map<std::string, std::unordered_map<std::string, std::size_t>> freq;
  for (const auto& doc : collection) {
    auto& domain = freq[doc.domain_id.value_or("")];
    std::unordered_set<std::string_view> seen;
    for (const auto& s : doc.sentences) {
      if (seen.insert(s.text).second) ++domain[s.text];
    }
  }
  for (const auto& doc : collection) {
    const auto& domain = freq.at(doc.domain_id.value_or(""));
    auto& b = out[doc.doc_id];
    b.reserve(doc.size());
    for (const auto& s : doc.sentences) b.push_back(1.0 / static_cast<double>(domain.at(s.text)));
  }
  return out;
}

std::vector<double> compose_windows(const EmbeddingMatrix& embs, const DenseMatrix& window,
                                    std::span<const double> factors) {
  const std::size_t n = embs.count();
  const std::size_t d = embs.dim();
  const std::size_t parts = window.rows();
  if (n == 0) throw ValidationError("cannot compose a document without sentence embeddings");
  if (window.cols() != n) throw ValidationError("window matrix does not match sentence count");
  if (!factors.empty() && factors.size() != n) {
    throw ValidationError("per-sentence factor count " + std::to_string(factors.size()) +
                          " does not match sentence count " + std::to_string(n));
  }

  std::vector<double> out(parts * d, 0.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(parts));
  for (std::size_t j = 0; j < parts; ++j) {
    std::span<double> part(out.data() + j * d, d);
    for (std::size_t s = 0; s < n; ++s) {
      const double w = window(j, s) * (factors.empty() ? 1.0 : factors[s]);
      if (w == 0.0) continue;
      const auto r = embs.row(s);
      for (std::size_t k = 0; k < d; ++k) part[k] += w * r[k];
    }
    const double norm = l2_norm(part);
    if (norm <= kNormEpsilon) {
      std::fill(part.begin(), part.end(), 0.0);
      continue;
    }
    for (auto& v : part) v *= scale / norm;
  }
  return out;
}

std::vector<double> tk_pert(const EmbeddingMatrix& embs, const PertWindowBank& bank,
                            std::span<const double> boilerplate) {
  if (embs.count() == 0) throw ValidationError("tk_pert needs at least one sentence");
  return compose_windows(embs, window_weights(bank, embs.count()), boilerplate);
}

std::vector<double> tf_pert(const EmbeddingMatrix& embs, const PertWindowBank& bank,
                            std::span<const double> boilerplate, std::span<const double> tfidf) {
  if (embs.count() == 0) throw ValidationError("tf_pert needs at least one sentence");
  if (tfidf.size() != embs.count()) {
    throw ValidationError("tf_pert: " + std::to_string(tfidf.size()) + " tfidf scores for " +
                          std::to_string(embs.count()) + " sentences");
  }
  if (!boilerplate.empty() && boilerplate.size() != embs.count()) {
    throw ValidationError("tf_pert: boilerplate length mismatch");
  }
  std::vector<double> factors(tfidf.begin(), tfidf.end());
  if (!boilerplate.empty()) {
    for (std::size_t n = 0; n < factors.size(); ++n) factors[n] *= boilerplate[n];
  }
  return compose_windows(embs, window_weights(bank, embs.count()), factors);
}

}  // namespace docpool
