#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "docpool/corpus.hpp"
#include "docpool/embed_store.hpp"

namespace docpool {

enum class TfVariant { kTf2, kTf4 };

std::string_view to_string(TfVariant v);
TfVariant parse_tf_variant(std::string_view text);

/// Word frequencies over all sentences of one document.
class TermCounts {
 public:
  explicit TermCounts(const Document& doc);

  std::size_t freq(const std::string& word) const;
  std::size_t max_freq() const noexcept { return max_freq_; }

 private:
  std::unordered_map<std::string, std::size_t> counts_;
  std::size_t max_freq_ = 0;
};

/// Raw frequency of `word` in the document.
double tf2(const std::string& word, const TermCounts& counts);
double tf2(const std::string& word, const Document& doc);

/// Augmented frequency 0.4 + 0.6 * freq / max_freq; 0.4 for absent words and
/// for documents without words.
double tf4(const std::string& word, const TermCounts& counts);
double tf4(const std::string& word, const Document& doc);

/// ln(1 + |D| / df(w)); unseen words are treated as df = 1.
double idf4(const std::string& word, const CollectionStats& stats);

/// Mean of tf(w) * idf4(w) over the sentence's word tokens; 0 for a sentence
/// without words.
double sentence_tfidf(const Sentence& sentence, const TermCounts& counts,
                      const CollectionStats& stats, TfVariant variant);
double sentence_tfidf(const Sentence& sentence, const Document& doc,
                      const CollectionStats& stats, TfVariant variant);

/// sentence_tfidf for every sentence of `doc`, in order.
std::vector<double> sentence_tfidf_scores(const Document& doc, const CollectionStats& stats,
                                          TfVariant variant);

// ---------------------------------------------------------------------------

enum class WeightScheme { kUniform, kTopHalf, kBottomHalf, kTfIdf };

/// How TF-IDF sentence scores are turned into weights.
enum class TfIdfNorm { kSum, kMax };

struct WeightOptions {
  WeightScheme scheme = WeightScheme::kUniform;
  TfVariant tf = TfVariant::kTf4;
  TfIdfNorm norm = TfIdfNorm::kSum;
};

struct WeightVector {
  std::vector<double> weights;
  std::string scheme_tag;

  std::size_t size() const noexcept { return weights.size(); }
};

/// Per-sentence weights. TfIdf needs `stats` (ValidationError otherwise) and
/// falls back to uniform when every sentence scores 0.
WeightVector make_weights(const Document& doc, const WeightOptions& options,
                          const CollectionStats* stats = nullptr);

/// sum_n w_n * row_n, accumulated in double.
std::vector<double> pool_weighted(const EmbeddingMatrix& embs, const WeightVector& w);

nlohmann::json to_json(const WeightVector& w);

}  // namespace docpool
