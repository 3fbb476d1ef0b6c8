#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace docpool {

enum class Split { kTrain, kDev, kTest };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct Sentence {
  std::string text;
  std::vector<std::string> words;  // lowercased word tokens of `text`
  std::uint64_t subword_count = 0;  // 0 until the encoder adapter has run
};

struct Document {
  std::string doc_id;
  std::string lang;
  std::vector<Sentence> sentences;
  std::vector<std::string> labels;
  std::optional<std::string> domain_id;
  Split split = Split::kTrain;

  std::size_t size() const noexcept { return sentences.size(); }
  std::uint64_t total_subwords() const noexcept;
  std::size_t total_words() const noexcept;
};

/// Maps raw sentence text to word tokens.
using WordTokenizer = std::function<std::vector<std::string>(std::string_view)>;

/// Default word tokenizer: NFC, lowercase, split on Unicode whitespace, strip
/// leading/trailing punctuation, drop empty tokens. Han, Hiragana and Katakana
/// code points become one token each since those scripts carry no whitespace
/// word boundaries.
std::vector<std::string> tokenize_words(std::string_view text);

Sentence make_sentence(std::string text, std::uint64_t subword_count = 0,
                       const WordTokenizer& tokenizer = tokenize_words);

// ---------------------------------------------------------------------------
// Excerpts

enum class ExcerptStrategy { kAllTokens, kTopN, kBottomN, kTopBottom };

std::string_view to_string(ExcerptStrategy strategy);
ExcerptStrategy parse_excerpt_strategy(std::string_view text);

/// Half-open [start, end) over the document's concatenated subword stream.
struct TokenRange {
  std::uint64_t start = 0;
  std::uint64_t end = 0;

  std::uint64_t length() const noexcept { return end - start; }
  friend bool operator==(const TokenRange&, const TokenRange&) = default;
};

struct TokenRangeSpec {
  std::string doc_id;
  std::vector<TokenRange> ranges;
  ExcerptStrategy strategy = ExcerptStrategy::kAllTokens;

  std::uint64_t selected() const noexcept;
};

struct ExcerptParams {
  std::uint64_t n = 510;       // TopN / BottomN length
  std::uint64_t top = 128;     // TopBottom head length
  std::uint64_t bottom = 382;  // TopBottom tail length
};

/// Throws ValidationError("unencoded document") when the document has no
/// subword counts yet.
TokenRangeSpec select_excerpt(const Document& doc, ExcerptStrategy strategy,
                              const ExcerptParams& params = {});

// ---------------------------------------------------------------------------
// Sentence halves

struct HalfSplit {
  std::vector<std::size_t> top;
  std::vector<std::size_t> bottom;
};

/// top = [0, ceil(n/2)), bottom = [ceil(n/2), n).
HalfSplit split_halves(std::size_t n_sentences);
HalfSplit split_halves(const Document& doc);

// ---------------------------------------------------------------------------
// Collection statistics

struct CollectionStats {
  std::size_t n_docs = 0;
  std::unordered_map<std::string, std::size_t> doc_freq;
  std::unordered_map<std::string, std::size_t> sentence_doc_freq;
  double avg_len = 0.0;
  std::uint64_t max_len = 0;

  /// Number of documents containing `word`; 0 when unseen.
  std::size_t df(const std::string& word) const;
};

CollectionStats collect_stats(std::span<const Document> collection);

// ---------------------------------------------------------------------------
// Manifest (JSON lines, one document per line)

Document document_from_json(const nlohmann::json& j, const WordTokenizer& tokenizer = tokenize_words);
nlohmann::json document_to_json(const Document& doc);

/// Reads a JSONL manifest. Validates non-empty sentence lists and unique doc
/// ids; errors name the line number and doc_id.
std::vector<Document> read_manifest(const std::filesystem::path& path,
                                    const WordTokenizer& tokenizer = tokenize_words);
void write_manifest(const std::filesystem::path& path, std::span<const Document> docs);

nlohmann::json ranges_to_json(const TokenRangeSpec& spec);
TokenRangeSpec ranges_from_json(const nlohmann::json& j);
void write_ranges(const std::filesystem::path& path, std::span<const TokenRangeSpec> specs);

}  // namespace docpool
