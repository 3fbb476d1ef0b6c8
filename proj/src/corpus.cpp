#include "docpool/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/uscript.h>
#include <unicode/unistr.h>

#include "docpool/error.hpp"

namespace docpool {

namespace {

bool is_unsegmented_script(UChar32 c) {
  UErrorCode status = U_ZERO_ERROR;
  const UScriptCode script = uscript_getScript(c, &status);
  if (U_FAILURE(status)) return false;
  return script == USCRIPT_HAN || script == USCRIPT_HIRAGANA || script == USCRIPT_KATAKANA;
}

bool is_punct(UChar32 c) { return u_ispunct(c) != 0; }

std::string to_utf8(const icu::UnicodeString& s) {
  std::string out;
  s.toUTF8String(out);
  return out;
}

// Strips punctuation from both ends of s[begin, end) and appends the rest.
void emit_stripped(const icu::UnicodeString& s, int32_t begin, int32_t end,
                   std::vector<std::string>& out) {
  while (begin < end) {
    const UChar32 c = s.char32At(begin);
    if (!is_punct(c)) break;
    begin = s.moveIndex32(begin, 1);
  }
  while (end > begin) {
    const int32_t prev = s.moveIndex32(end, -1);
    if (!is_punct(s.char32At(prev))) break;
    end = prev;
  }
  if (begin < end) out.push_back(to_utf8(s.tempSubStringBetween(begin, end)));
}

}  // namespace

std::string_view to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kDev: return "dev";
    case Split::kTest: return "test";
  }
  return "train";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::kTrain;
  if (text == "dev") return Split::kDev;
  if (text == "test") return Split::kTest;
  throw ValidationError("unknown split '" + std::string(text) + "'");
}

std::uint64_t Document::total_subwords() const noexcept {
  std::uint64_t total = 0;
  for (const auto& s : sentences) total += s.subword_count;
  return total;
}

std::size_t Document::total_words() const noexcept {
  std::size_t total = 0;
  for (const auto& s : sentences) total += s.words.size();
  return total;
}

std::vector<std::string> tokenize_words(std::string_view text) {
  std::vector<std::string> out;
  if (text.empty()) return out;

  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw std::runtime_error("ICU NFC normalizer unavailable");

  // Invalid UTF-8 bytes become U+FFFD rather than errors.
  icu::UnicodeString s = icu::UnicodeString::fromUTF8(
      icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  s = nfc->normalize(s, status);
  s.toLower(icu::Locale::getRoot());
  // Lowercasing can produce decomposed sequences for a few code points.
  s = nfc->normalize(s, status);
  if (U_FAILURE(status)) throw std::runtime_error("ICU normalization failed");

  int32_t run_begin = -1;
  int32_t i = 0;
  const int32_t n = s.length();
  while (i < n) {
    const UChar32 c = s.char32At(i);
    const int32_t next = s.moveIndex32(i, 1);
    if (u_isUWhiteSpace(c)) {
      if (run_begin >= 0) emit_stripped(s, run_begin, i, out);
      run_begin = -1;
    } else if (is_unsegmented_script(c)) {
      if (run_begin >= 0) emit_stripped(s, run_begin, i, out);
      run_begin = -1;
      out.push_back(to_utf8(s.tempSubStringBetween(i, next)));
    } else if (run_begin < 0) {
      run_begin = i;
    }
    i = next;
  }
  if (run_begin >= 0) emit_stripped(s, run_begin, n, out);
  return out;
}

Sentence make_sentence(std::string text, std::uint64_t subword_count,
                       const WordTokenizer& tokenizer) {
  Sentence s;
  s.words = tokenizer(text);
  s.text = std::move(text);
  s.subword_count = subword_count;
  return s;
}

// ---------------------------------------------------------------------------

std::string_view to_string(ExcerptStrategy strategy) {
  switch (strategy) {
    case ExcerptStrategy::kAllTokens: return "AllTokens";
    case ExcerptStrategy::kTopN: return "TopN";
    case ExcerptStrategy::kBottomN: return "BottomN";
    case ExcerptStrategy::kTopBottom: return "TopBottom";
  }
  return "AllTokens";
}

ExcerptStrategy parse_excerpt_strategy(std::string_view text) {
  if (text == "AllTokens") return ExcerptStrategy::kAllTokens;
  if (text == "TopN") return ExcerptStrategy::kTopN;
  if (text == "BottomN") return ExcerptStrategy::kBottomN;
  if (text == "TopBottom") return ExcerptStrategy::kTopBottom;
  throw ValidationError("unknown excerpt strategy '" + std::string(text) + "'");
}

std::uint64_t TokenRangeSpec::selected() const noexcept {
  std::uint64_t total = 0;
  for (const auto& r : ranges) total += r.length();
  return total;
}

TokenRangeSpec select_excerpt(const Document& doc, ExcerptStrategy strategy,
                              const ExcerptParams& params) {
  const std::uint64_t total = doc.total_subwords();
  if (total == 0) throw ValidationError("unencoded document: " + doc.doc_id);

  TokenRangeSpec spec{doc.doc_id, {}, strategy};
  switch (strategy) {
    case ExcerptStrategy::kAllTokens:
      spec.ranges.push_back({0, total});
      break;
    case ExcerptStrategy::kTopN:
      spec.ranges.push_back({0, std::min(params.n, total)});
      break;
    case ExcerptStrategy::kBottomN:
      spec.ranges.push_back({total - std::min(params.n, total), total});
      break;
    case ExcerptStrategy::kTopBottom: {
      const std::uint64_t head_end = std::min(params.top, total);
      const std::uint64_t tail_begin =
          std::max(head_end, total - std::min(params.bottom, total));
      if (tail_begin == head_end) {
        spec.ranges.push_back({0, total});
      } else {
        spec.ranges.push_back({0, head_end});
        spec.ranges.push_back({tail_begin, total});
      }
      break;
    }
  }
  // Drop empty head ranges (params.top == 0).
  std::erase_if(spec.ranges, [](const TokenRange& r) { return r.length() == 0; });
  return spec;
}

// ---------------------------------------------------------------------------

HalfSplit split_halves(std::size_t n_sentences) {
  HalfSplit halves;
  const std::size_t cut = (n_sentences + 1) / 2;
  halves.top.resize(cut);
  std::iota(halves.top.begin(), halves.top.end(), std::size_t{0});
  halves.bottom.resize(n_sentences - cut);
  std::iota(halves.bottom.begin(), halves.bottom.end(), cut);
  return halves;
}

HalfSplit split_halves(const Document& doc) { return split_halves(doc.size()); }

// ---------------------------------------------------------------------------

std::size_t CollectionStats::df(const std::string& word) const {
  const auto it = doc_freq.find(word);
  return it == doc_freq.end() ? 0 : it->second;
}

CollectionStats collect_stats(std::span<const Document> collection) {
  CollectionStats stats;
  stats.n_docs = collection.size();
  std::uint64_t len_sum = 0;
  for (const auto& doc : collection) {
    std::unordered_set<std::string_view> words;
    std::unordered_set<std::string_view> texts;
    for (const auto& s : doc.sentences) {
      for (const auto& w : s.words) words.insert(w);
      texts.insert(s.text);
    }
    for (const auto w : words) ++stats.doc_freq[std::string(w)];
    for (const auto t : texts) ++stats.sentence_doc_freq[std::string(t)];

    const std::uint64_t len = doc.total_subwords();
    len_sum += len;
    stats.max_len = std::max(stats.max_len, len);
  }
  if (stats.n_docs > 0) stats.avg_len = static_cast<double>(len_sum) / static_cast<double>(stats.n_docs);
  return stats;
}

// ---------------------------------------------------------------------------

Document document_from_json(const nlohmann::json& j, const WordTokenizer& tokenizer) {
  Document doc;
  try {
    doc.doc_id = j.at("doc_id").get<std::string>();
    doc.lang = j.value("lang", std::string{});
    if (j.contains("domain_id") && !j["domain_id"].is_null()) {
      doc.domain_id = j["domain_id"].get<std::string>();
    }
    doc.split = parse_split(j.value("split", std::string{"train"}));
    if (j.contains("labels")) doc.labels = j["labels"].get<std::vector<std::string>>();
    for (const auto& sj : j.at("sentences")) {
      doc.sentences.push_back(make_sentence(sj.at("text").get<std::string>(),
                                            sj.value("subword_count", std::uint64_t{0}), tokenizer));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed manifest record '" + doc.doc_id + "': " + e.what());
  }
  if (doc.doc_id.empty()) throw ValidationError("manifest record without doc_id");
  if (doc.sentences.empty()) throw ValidationError("document '" + doc.doc_id + "' has no sentences");
  return doc;
}

nlohmann::json document_to_json(const Document& doc) {
  nlohmann::json j;
  j["doc_id"] = doc.doc_id;
  j["lang"] = doc.lang;
  j["domain_id"] = doc.domain_id ? nlohmann::json(*doc.domain_id) : nlohmann::json(nullptr);
  j["split"] = std::string(to_string(doc.split));
  j["labels"] = doc.labels;
  auto& sentences = j["sentences"] = nlohmann::json::array();
  for (const auto& s : doc.sentences) {
    sentences.push_back({{"text", s.text}, {"subword_count", s.subword_count}});
  }
  return j;
}

std::vector<Document> read_manifest(const std::filesystem::path& path, const WordTokenizer& tokenizer) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());

  std::vector<Document> docs;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    try {
      docs.push_back(document_from_json(j, tokenizer));
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!seen.insert(docs.back().doc_id).second) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": duplicate doc_id '" +
                            docs.back().doc_id + "'");
    }
  }
  return docs;
}

void write_manifest(const std::filesystem::path& path, std::span<const Document> docs) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  for (const auto& doc : docs) out << document_to_json(doc).dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

nlohmann::json ranges_to_json(const TokenRangeSpec& spec) {
  nlohmann::json ranges = nlohmann::json::array();
  for (const auto& r : spec.ranges) ranges.push_back({r.start, r.end});
  return {{"doc_id", spec.doc_id}, {"strategy", std::string(to_string(spec.strategy))}, {"ranges", ranges}};
}

TokenRangeSpec ranges_from_json(const nlohmann::json& j) {
  TokenRangeSpec spec;
  try {
    spec.doc_id = j.at("doc_id").get<std::string>();
    spec.strategy = parse_excerpt_strategy(j.at("strategy").get<std::string>());
    for (const auto& r : j.at("ranges")) {
      spec.ranges.push_back({r.at(0).get<std::uint64_t>(), r.at(1).get<std::uint64_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed range record: ") + e.what());
  }
  return spec;
}

void write_ranges(const std::filesystem::path& path, std::span<const TokenRangeSpec> specs) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write ranges file " + path.string());
  for (const auto& spec : specs) out << ranges_to_json(spec).dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace docpool
