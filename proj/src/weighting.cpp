#include "docpool/weighting.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "docpool/error.hpp"

namespace docpool {

std::string_view to_string(TfVariant v) { return v == TfVariant::kTf2 ? "tf2" : "tf4"; }

TfVariant parse_tf_variant(std::string_view text) {
  if (text == "tf2") return TfVariant::kTf2;
  if (text == "tf4") return TfVariant::kTf4;
  throw ValidationError("unknown tf variant '" + std::string(text) + "'");
}

TermCounts::TermCounts(const Document& doc) {
  for (const auto& s : doc.sentences) {
    for (const auto& w : s.words) max_freq_ = std::max(max_freq_, ++counts_[w]);
  }
}

std::size_t TermCounts::freq(const std::string& word) const {
  const auto it = counts_.find(word);
  return it == counts_.end() ? 0 : it->second;
}

double tf2(const std::string& word, const TermCounts& counts) {
  return static_cast<double>(counts.freq(word));
}

double tf2(const std::string& word, const Document& doc) { return tf2(word, TermCounts(doc)); }

double tf4(const std::string& word, const TermCounts& counts) {
  if (counts.max_freq() == 0) return 0.4;
  return 0.4 + 0.6 * static_cast<double>(counts.freq(word)) / static_cast<double>(counts.max_freq());
}

double tf4(const std::string& word, const Document& doc) { return tf4(word, TermCounts(doc)); }

double idf4(const std::string& word, const CollectionStats& stats) {
  if (stats.n_docs == 0) throw ValidationError("idf4 needs a non-empty collection");
  const std::size_t df = std::max<std::size_t>(stats.df(word), 1);
  return std::log(1.0 + static_cast<double>(stats.n_docs) / static_cast<double>(df));
}

double sentence_tfidf(const Sentence& sentence, const TermCounts& counts,
                      const CollectionStats& stats, TfVariant variant) {
  if (sentence.words.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& w : sentence.words) {
    const double tf = variant == TfVariant::kTf2 ? tf2(w, counts) : tf4(w, counts);
    sum += tf * idf4(w, stats);
  }
  return sum / static_cast<double>(sentence.words.size());
}

double sentence_tfidf(const Sentence& sentence, const Document& doc,
                      const CollectionStats& stats, TfVariant variant) {
  return sentence_tfidf(sentence, TermCounts(doc), stats, variant);
}

std::vector<double> sentence_tfidf_scores(const Document& doc, const CollectionStats& stats,
                                          TfVariant variant) {
  const TermCounts counts(doc);
  std::vector<double> scores;
  scores.reserve(doc.size());
  for (const auto& s : doc.sentences) scores.push_back(sentence_tfidf(s, counts, stats, variant));
  return scores;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<double> uniform_over(std::size_t n, std::span<const std::size_t> support) {
  std::vector<double> w(n, 0.0);
  for (const auto i : support) w[i] = 1.0 / static_cast<double>(support.size());
  return w;
}

}  // namespace

WeightVector make_weights(const Document& doc, const WeightOptions& options,
                          const CollectionStats* stats) {
  const std::size_t n = doc.size();
  WeightVector out;
  switch (options.scheme) {
    case WeightScheme::kUniform:
      out.weights.assign(n, n ? 1.0 / static_cast<double>(n) : 0.0);
      out.scheme_tag = "uniform";
      break;
    case WeightScheme::kTopHalf:
      out.weights = uniform_over(n, split_halves(n).top);
      out.scheme_tag = "top-half";
      break;
    case WeightScheme::kBottomHalf:
      out.weights = uniform_over(n, split_halves(n).bottom);
      out.scheme_tag = "bottom-half";
      break;
    case WeightScheme::kTfIdf: {
      if (stats == nullptr) throw ValidationError("TF-IDF weighting requires collection statistics");
      out.weights = sentence_tfidf_scores(doc, *stats, options.tf);
      out.scheme_tag = std::string(to_string(options.tf)) + "-idf4";
      if (n == 0) break;
      const double denom = options.norm == TfIdfNorm::kSum
                               ? std::accumulate(out.weights.begin(), out.weights.end(), 0.0)
                               : *std::max_element(out.weights.begin(), out.weights.end());
      if (denom <= 0.0) {
        out.weights.assign(n, 1.0 / static_cast<double>(n));
        out.scheme_tag += "(uniform-fallback)";
      } else {
        for (auto& w : out.weights) w /= denom;
      }
      break;
    }
  }
  return out;
}

std::vector<double> pool_weighted(const EmbeddingMatrix& embs, const WeightVector& w) {
  if (embs.count() != w.size()) {
    throw ValidationError("pool_weighted: " + std::to_string(embs.count()) + " rows but " +
                          std::to_string(w.size()) + " weights");
  }
  std::vector<double> out(embs.dim(), 0.0);
  for (std::size_t n = 0; n < embs.count(); ++n) {
    const double wn = w.weights[n];
    if (wn == 0.0) continue;
    const auto r = embs.row(n);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += wn * r[j];
  }
  return out;
}

nlohmann::json to_json(const WeightVector& w) {
  return {{"scheme", w.scheme_tag}, {"weights", w.weights}};
}

}  // namespace docpool
