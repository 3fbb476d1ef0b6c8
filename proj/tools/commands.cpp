#include "commands.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string_view>

#include <CLI11.hpp>
#include <json.hpp>

#include "docpool/align.hpp"
#include "docpool/corpus.hpp"
#include "docpool/embed_store.hpp"
#include "docpool/error.hpp"
#include "docpool/learner.hpp"
#include "docpool/metrics.hpp"
#include "docpool/parallel.hpp"
#include "docpool/pert.hpp"
#include "docpool/weighting.hpp"

namespace docpool::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Strategies

enum class Family {
  kAverage,
  kTopHalf,
  kBottomHalf,
  kTfIdf,
  kTkPert,
  kTfPert,
  kAttPert,
  kAttTfPert,
  kExcerpt,
};

struct Strategy {
  Family family = Family::kAverage;
  ExcerptStrategy excerpt = ExcerptStrategy::kAllTokens;
  ExcerptParams params;
};

constexpr std::uint64_t kMaxExcerpt = 510;

std::uint64_t parse_count(const std::string& text) { return std::stoull(text); }

Strategy parse_strategy(const std::string& name) {
  static const std::map<std::string, Family, std::less<>> kNamed = {
      {"sentence-average", Family::kAverage}, {"top-half-average", Family::kTopHalf},
      {"top-half", Family::kTopHalf},         {"bottom-half-average", Family::kBottomHalf},
      {"bottom-half", Family::kBottomHalf},   {"tfidf", Family::kTfIdf},
      {"tk-pert", Family::kTkPert},           {"tf-pert", Family::kTfPert},
      {"att-pert", Family::kAttPert},         {"att-tf-pert", Family::kAttTfPert},
  };
  if (const auto it = kNamed.find(name); it != kNamed.end()) return {it->second, {}, {}};

  Strategy s{Family::kExcerpt, ExcerptStrategy::kAllTokens, {}};
  static const std::regex kTop(R"(top-(\d{1,6}))");
  static const std::regex kBottom(R"(bottom-(\d{1,6}))");
  static const std::regex kTopBottom(R"(top-(\d{1,6})-bottom-(\d{1,6}))");
  std::smatch m;
  if (name == "all-tokens") return s;
  if (name == "top-n") {
    s.excerpt = ExcerptStrategy::kTopN;
  } else if (name == "bottom-n") {
    s.excerpt = ExcerptStrategy::kBottomN;
  } else if (name == "top-bottom") {
    s.excerpt = ExcerptStrategy::kTopBottom;
  } else if (std::regex_match(name, m, kTopBottom)) {
    s.excerpt = ExcerptStrategy::kTopBottom;
    s.params.top = parse_count(m[1]);
    s.params.bottom = parse_count(m[2]);
  } else if (std::regex_match(name, m, kTop)) {
    s.excerpt = ExcerptStrategy::kTopN;
    s.params.n = parse_count(m[1]);
  } else if (std::regex_match(name, m, kBottom)) {
    s.excerpt = ExcerptStrategy::kBottomN;
    s.params.n = parse_count(m[1]);
  } else {
    throw ValidationError("unknown strategy '" + name +
                          "' (expected sentence-average, top-half-average, bottom-half-average, tfidf, "
                          "tk-pert, tf-pert, att-pert, att-tf-pert, all-tokens, top-N, bottom-N, "
                          "top-N-bottom-M)");
  }
  const bool single = s.excerpt != ExcerptStrategy::kTopBottom;
  if (single && (s.params.n == 0 || s.params.n > kMaxExcerpt)) {
    throw ValidationError("excerpt length must be in [1, 510], got " + std::to_string(s.params.n));
  }
  if (!single && (s.params.top == 0 || s.params.bottom == 0 || s.params.top + s.params.bottom > kMaxExcerpt)) {
    throw ValidationError("top + bottom excerpt lengths must be positive and total at most 510");
  }
  return s;
}

bool uses_tfidf(Family f) {
  return f == Family::kTfIdf || f == Family::kTfPert || f == Family::kAttTfPert;
}

bool uses_bank(Family f) {
  return f == Family::kTkPert || f == Family::kTfPert || f == Family::kAttPert || f == Family::kAttTfPert;
}

// ---------------------------------------------------------------------------
// Shared plumbing

void require_path(const fs::path& p, std::string_view flag) {
  if (p.empty()) throw ValidationError(std::string(flag) + " is required");
}

void validate_bank_params(const RunConfig& cfg) {
  if (cfg.pert_j == 0 || cfg.pert_j > 1024) throw ValidationError("--pert-j must be in [1, 1024]");
  if (!(cfg.pert_gamma > 0.0)) throw ValidationError("--pert-gamma must be positive");
  if (cfg.pert_resolution < 2) throw ValidationError("--pert-resolution must be at least 2");
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

fs::path with_suffix(const fs::path& p, std::string_view suffix) {
  auto out = p;
  out += std::string(suffix);
  return out;
}

std::vector<const Document*> pointers(const std::vector<Document>& docs) {
  std::vector<const Document*> out;
  out.reserve(docs.size());
  for (const auto& d : docs) out.push_back(&d);
  return out;
}

std::vector<const Document*> in_split(const std::vector<Document>& docs, Split split) {
  std::vector<const Document*> out;
  for (const auto& d : docs) {
    if (d.split == split) out.push_back(&d);
  }
  return out;
}

/// Every doc must have embeddings with the expected row count and a common
/// dim. Problems are written to `report` (when set) and raised together.
void require_embeddings(std::span<const Document* const> docs, const EmbeddingMap& embs, bool one_row,
                        const fs::path& report) {
  json problems = json::array();
  std::optional<std::size_t> dim;
  for (const auto* doc : docs) {
    const auto it = embs.find(doc->doc_id);
    std::string problem;
    if (it == embs.end()) {
      problem = "missing embeddings";
    } else {
      const std::size_t want = one_row ? 1 : doc->size();
      if (it->second.count() != want) {
        problem = "expected " + std::to_string(want) + " rows, found " + std::to_string(it->second.count());
      } else if (dim && *dim != it->second.dim()) {
        problem = "dim " + std::to_string(it->second.dim()) + " differs from " + std::to_string(*dim);
      } else {
        dim = it->second.dim();
      }
    }
    if (!problem.empty()) problems.push_back({{"doc_id", doc->doc_id}, {"problem", problem}});
  }
  if (problems.empty()) return;

  std::ostringstream msg;
  msg << problems.size() << " document(s) lack usable embeddings:";
  const std::size_t shown = std::min<std::size_t>(problems.size(), 10);
  for (std::size_t i = 0; i < shown; ++i) {
    msg << "\n  " << problems[i]["doc_id"].get<std::string>() << ": " << problems[i]["problem"].get<std::string>();
  }
  if (shown < problems.size()) msg << "\n  ...";
  if (!report.empty()) {
    write_json(report, json{{"errors", problems}});
    msg << "\nfull report: " << report.string();
  }
  throw ValidationError(msg.str());
}

/// Fits PCA on the training split (every document when there is none) and
/// reduces all matrices in place. Returns nullopt when reduction is off or
/// would not shrink the vectors.
std::optional<PcaModel> reduce_in_place(const std::vector<Document>& docs, EmbeddingMap& embs,
                                        std::size_t k, std::ostream& log) {
  if (k == 0 || embs.empty()) return std::nullopt;
  const std::size_t dim = embs.begin()->second.dim();
  if (dim <= k) {
    log << "note: embedding dim " << dim << " <= --pca-dim " << k << ", PCA skipped\n";
    return std::nullopt;
  }
  auto fit_docs = in_split(docs, Split::kTrain);
  if (fit_docs.empty()) fit_docs = pointers(docs);
  std::vector<const EmbeddingMatrix*> parts;
  for (const auto* d : fit_docs) {
    if (const auto it = embs.find(d->doc_id); it != embs.end()) parts.push_back(&it->second);
  }
  const auto model = pca_fit(stack_rows(parts), k);
  std::vector<EmbeddingMatrix*> targets;
  for (auto& [id, m] : embs) targets.push_back(&m);
  parallel_for(targets.size(), [&](std::size_t i) { *targets[i] = pca_apply(model, *targets[i]); });
  log << "PCA: " << dim << " -> " << k << " dims, fitted on " << parts.size() << " documents\n";
  return model;
}

void apply_pca(const PcaModel& model, EmbeddingMap& embs) {
  std::vector<EmbeddingMatrix*> targets;
  for (auto& [id, m] : embs) targets.push_back(&m);
  parallel_for(targets.size(), [&](std::size_t i) { *targets[i] = pca_apply(model, *targets[i]); });
}

/// Word statistics per language; TF-IDF collections never mix languages.
std::map<std::string, CollectionStats> stats_by_lang(const std::vector<Document>& docs) {
  std::map<std::string, std::vector<Document>> groups;
  for (const auto& d : docs) groups[d.lang].push_back(d);
  std::map<std::string, CollectionStats> out;
  for (const auto& [lang, group] : groups) out.emplace(lang, collect_stats(group));
  return out;
}

EmbeddingMatrix to_row(std::span<const double> v) {
  EmbeddingMatrix m(0, v.size());
  m.append_row(v);
  return m;
}

json ci_json(const ConfidenceInterval& ci, std::size_t n) {
  return {{"value", ci.point},       {"ci_low", ci.low()},       {"ci_high", ci.high()},
          {"plus", ci.upper_delta},  {"minus", ci.lower_delta},  {"formatted", format_ci(ci)},
          {"n", n}};
}

ConfidenceInterval bootstrap_or_point(const ResampleMetric& metric, std::size_t n, const RunConfig& cfg) {
  if (cfg.bootstrap_samples == 0) {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    return {metric(all), 0.0, 0.0};
  }
  if (cfg.bootstrap_samples < 100) throw ValidationError("--bootstrap-samples must be 0 or at least 100");
  return bootstrap_ci(metric, n, cfg.bootstrap_samples, 0.95, cfg.seed);
}

// ---------------------------------------------------------------------------
// compose

struct ComposeContext {
  Strategy strategy;
  TfVariant tf = TfVariant::kTf4;
  const std::map<std::string, CollectionStats>* stats = nullptr;
  const std::unordered_map<std::string, std::vector<double>>* boilerplate = nullptr;
  const PertWindowBank* bank = nullptr;
  const PoolerModel* model = nullptr;
  bool dump = false;
};

struct Composed {
  std::vector<double> vector;
  json weights;
};

Composed compose_doc(const Document& doc, const EmbeddingMatrix& embs, const ComposeContext& ctx) {
  const auto family = ctx.strategy.family;
  const CollectionStats* stats = uses_tfidf(family) ? &ctx.stats->at(doc.lang) : nullptr;
  Composed out;

  if (family == Family::kAverage || family == Family::kTopHalf || family == Family::kBottomHalf ||
      family == Family::kTfIdf) {
    WeightOptions options;
    options.tf = ctx.tf;
    options.scheme = family == Family::kAverage    ? WeightScheme::kUniform
                     : family == Family::kTopHalf  ? WeightScheme::kTopHalf
                     : family == Family::kTfIdf    ? WeightScheme::kTfIdf
                                                   : WeightScheme::kBottomHalf;
    const auto w = make_weights(doc, options, stats);
    out.vector = pool_weighted(embs, w);
    if (ctx.dump) out.weights = to_json(w);
    return out;
  }

  std::vector<double> tfidf;
  if (stats != nullptr) tfidf = sentence_tfidf_scores(doc, *stats, ctx.tf);
  const auto& boiler = ctx.boilerplate->at(doc.doc_id);

  if (family == Family::kTkPert || family == Family::kTfPert) {
    out.vector = family == Family::kTkPert ? tk_pert(embs, *ctx.bank, boiler)
                                           : tf_pert(embs, *ctx.bank, boiler, tfidf);
    if (ctx.dump) {
      const auto window = window_weights(*ctx.bank, doc.size());
      json rows = json::array();
      for (std::size_t j = 0; j < window.rows(); ++j) {
        const auto r = window.row(j);
        rows.push_back(std::vector<double>(r.begin(), r.end()));
      }
      out.weights = {{"scheme", family == Family::kTkPert ? "tk-pert" : "tf-pert"},
                     {"windows", rows},
                     {"boilerplate", boiler}};
      if (!tfidf.empty()) out.weights["tfidf"] = tfidf;
    }
    return out;
  }

  out.vector = att_pert_pool(*ctx.model, embs, *ctx.bank, tfidf);
  if (ctx.dump) {
    const auto att = attention_weights(*ctx.model, embs);
    json rows = json::array();
    for (std::size_t j = 0; j < att.rows(); ++j) {
      const auto r = att.row(j);
      rows.push_back(std::vector<double>(r.begin(), r.end()));
    }
    out.weights = {{"scheme", to_string(ctx.model->mode)}, {"attention", rows}};
    if (!tfidf.empty()) out.weights["tfidf"] = tfidf;
  }
  return out;
}

fs::path ranges_path(const fs::path& out) {
  const auto s = out.string();
  constexpr std::string_view kExt = ".ranges.jsonl";
  if (s.size() >= kExt.size() && s.compare(s.size() - kExt.size(), kExt.size(), kExt) == 0) return out;
  auto p = out;
  p.replace_extension(std::string(kExt));
  return p;
}

int compose_excerpts(const RunConfig& cfg, const Strategy& strategy, std::ostream& log) {
  const auto docs = read_manifest(cfg.manifest);
  std::vector<TokenRangeSpec> specs(docs.size());
  parallel_for(docs.size(), [&](std::size_t i) {
    specs[i] = select_excerpt(docs[i], strategy.excerpt, strategy.params);
  });
  const auto path = ranges_path(cfg.out);
  write_ranges(path, specs);
  log << json{{"status", "ranges_written"},
              {"strategy", to_string(strategy.excerpt)},
              {"documents", specs.size()},
              {"ranges", path.string()}}
             .dump()
      << '\n';
  return kExitOk;
}

}  // namespace

int cmd_compose(const RunConfig& cfg, std::ostream& log) {
  require_path(cfg.manifest, "--manifest");
  require_path(cfg.out, "--out");
  const auto strategy = parse_strategy(cfg.strategy);
  if (strategy.family == Family::kExcerpt) return compose_excerpts(cfg, strategy, log);

  require_path(cfg.embeddings, "--embeddings");
  const bool attentive = strategy.family == Family::kAttPert || strategy.family == Family::kAttTfPert;
  if (attentive) require_path(cfg.model, "--model");

  const auto docs = read_manifest(cfg.manifest);
  auto embs = load_embeddings(cfg.embeddings);
  const auto doc_ptrs = pointers(docs);
  require_embeddings(doc_ptrs, embs, false, with_suffix(cfg.out, ".errors.json"));

  std::optional<PoolerModel> model;
  std::optional<PertWindowBank> bank;
  if (attentive) {
    model = load_model_file(cfg.model);
    const auto expected = strategy.family == Family::kAttPert ? PoolMode::kAttPert : PoolMode::kAttTfPert;
    if (model->mode != expected) {
      throw ValidationError("model " + cfg.model.string() + " was trained for " +
                            std::string(to_string(model->mode)) + ", not " + cfg.strategy);
    }
    if (const auto pca_path = with_suffix(cfg.model, ".pca"); fs::exists(pca_path)) {
      apply_pca(load_pca_file(pca_path), embs);
    }
    bank = build_window_bank(model->parts, model->gamma, model->resolution);
  } else {
    reduce_in_place(docs, embs, cfg.pca_dim, log);
    if (uses_bank(strategy.family)) {
      validate_bank_params(cfg);
      bank = build_window_bank(cfg.pert_j, cfg.pert_gamma, cfg.pert_resolution);
    }
  }

  std::map<std::string, CollectionStats> stats;
  if (uses_tfidf(strategy.family)) stats = stats_by_lang(docs);
  const auto boiler = boilerplate_weights(docs, cfg.boilerplate);

  ComposeContext ctx;
  ctx.strategy = strategy;
  ctx.tf = cfg.tf_variant;
  ctx.stats = &stats;
  ctx.boilerplate = &boiler;
  ctx.bank = bank ? &*bank : nullptr;
  ctx.model = model ? &*model : nullptr;
  ctx.dump = !cfg.dump_weights.empty();

  std::vector<Composed> composed(docs.size());
  parallel_for(docs.size(), [&](std::size_t i) {
    composed[i] = compose_doc(docs[i], embs.at(docs[i].doc_id), ctx);
  });

  EmbeddingMap out;
  json dump = json::object();
  for (std::size_t i = 0; i < docs.size(); ++i) {
    out.emplace(docs[i].doc_id, to_row(composed[i].vector));
    if (ctx.dump) dump[docs[i].doc_id] = std::move(composed[i].weights);
  }
  store_embeddings(out, cfg.out);
  if (ctx.dump) write_json(cfg.dump_weights, dump);

  const std::size_t dim = out.empty() ? 0 : out.begin()->second.dim();
  log << json{{"status", "composed"},
              {"strategy", cfg.strategy},
              {"documents", out.size()},
              {"dim", dim},
              {"out", cfg.out.string()}}
             .dump()
      << '\n';
  return kExitOk;
}

int cmd_reduce(const RunConfig& cfg, std::ostream& log) {
  require_path(cfg.manifest, "--manifest");
  require_path(cfg.embeddings, "--embeddings");
  require_path(cfg.out, "--out");
  if (cfg.pca_dim == 0) throw ValidationError("--pca-dim must be positive for reduce");
  const auto docs = read_manifest(cfg.manifest);
  auto embs = load_embeddings(cfg.embeddings);
  require_embeddings(pointers(docs), embs, false, with_suffix(cfg.out, ".errors.json"));

  EmbeddingMap selected;
  for (const auto& d : docs) selected.emplace(d.doc_id, std::move(embs.at(d.doc_id)));
  const auto model = reduce_in_place(docs, selected, cfg.pca_dim, log);
  store_embeddings(selected, cfg.out);
  if (model) save_pca_file(with_suffix(cfg.out, ".pca"), *model);
  log << json{{"status", model ? "reduced" : "unchanged"},
              {"documents", selected.size()},
              {"dim", selected.empty() ? 0 : selected.begin()->second.dim()},
              {"out", cfg.out.string()}}
             .dump()
      << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train / eval

namespace {

PoolMode train_mode(const std::string& strategy) {
  if (strategy == "att-pert") return PoolMode::kAttPert;
  if (strategy == "att-tf-pert") return PoolMode::kAttTfPert;
  if (strategy == "fixed") return PoolMode::kFixed;
  throw ValidationError("train --strategy must be att-pert, att-tf-pert or fixed (composed vectors), got '" +
                        strategy + "'");
}

std::vector<LabeledExample> make_examples(std::span<const Document* const> docs, const EmbeddingMap& embs,
                                          PoolMode mode, const std::map<std::string, CollectionStats>& stats,
                                          TfVariant tf) {
  std::vector<LabeledExample> out;
  out.reserve(docs.size());
  for (const auto* d : docs) {
    LabeledExample ex{d->doc_id, d->lang, embs.at(d->doc_id), {}, d->labels};
    if (mode == PoolMode::kAttTfPert) ex.tfidf = sentence_tfidf_scores(*d, stats.at(d->lang), tf);
    out.push_back(std::move(ex));
  }
  return out;
}

std::string metric_name(TaskKind task) { return task == TaskKind::kMulticlass ? "accuracy" : "micro_f1"; }

/// Interns label strings; ids of the model's own labels come first.
class LabelSpace {
 public:
  explicit LabelSpace(const std::vector<std::string>& known) {
    for (const auto& l : known) id(l);
  }
  std::size_t id(const std::string& label) {
    const auto [it, inserted] = ids_.try_emplace(label, ids_.size());
    return it->second;
  }
  std::vector<std::size_t> ids(const std::vector<std::string>& labels) {
    std::vector<std::size_t> out;
    for (const auto& l : labels) out.push_back(id(l));
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

 private:
  std::map<std::string, std::size_t> ids_;
};

struct Scored {
  std::string lang;
  std::vector<std::size_t> predicted;
  std::vector<std::size_t> gold;
};

double score_subset(const std::vector<Scored>& items, std::span<const std::size_t> idx, TaskKind task) {
  if (task == TaskKind::kMulticlass) {
    std::size_t correct = 0;
    for (const auto i : idx) correct += items[i].predicted == items[i].gold ? 1 : 0;
    return idx.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(idx.size());
  }
  std::vector<std::vector<std::size_t>> p;
  std::vector<std::vector<std::size_t>> g;
  for (const auto i : idx) {
    p.push_back(items[i].predicted);
    g.push_back(items[i].gold);
  }
  return micro_f1(p, g);
}

std::map<std::string, std::vector<std::string>> read_predictions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open predictions " + path.string());
  std::map<std::string, std::vector<std::string>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = path.string() + ":" + std::to_string(line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ValidationError(where + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("doc_id") || !j["doc_id"].is_string() || !j.contains("labels") ||
        !j["labels"].is_array()) {
      throw ValidationError(where + ": expected {\"doc_id\": string, \"labels\": [string]}");
    }
    const auto id = j["doc_id"].get<std::string>();
    std::vector<std::string> labels;
    for (const auto& l : j["labels"]) {
      if (!l.is_string()) throw ValidationError(where + ": label of '" + id + "' is not a string");
      labels.push_back(l.get<std::string>());
    }
    if (!out.emplace(id, std::move(labels)).second) {
      throw ValidationError(where + ": duplicate doc_id '" + id + "'");
    }
  }
  return out;
}

}  // namespace

int cmd_train(const RunConfig& cfg, std::ostream& log) {
  require_path(cfg.manifest, "--manifest");
  require_path(cfg.embeddings, "--embeddings");
  require_path(cfg.out, "--out");
  const auto mode = train_mode(cfg.strategy);
  const auto task = parse_task_kind(cfg.task);
  validate_bank_params(cfg);
  if (cfg.epochs == 0 || cfg.batch_size == 0 || cfg.hidden == 0) {
    throw ValidationError("--epochs, --batch-size and --hidden must be positive");
  }
  if (!(cfg.learning_rate > 0.0)) throw ValidationError("--lr must be positive");

  const auto docs = read_manifest(cfg.manifest);
  const auto train_docs = in_split(docs, Split::kTrain);
  const auto dev_docs = in_split(docs, Split::kDev);
  if (train_docs.empty()) throw ValidationError("manifest has no training documents");
  auto embs = load_embeddings(cfg.embeddings);
  std::vector<const Document*> used = train_docs;
  used.insert(used.end(), dev_docs.begin(), dev_docs.end());
  require_embeddings(used, embs, mode == PoolMode::kFixed, with_suffix(cfg.out, ".errors.json"));

  const auto pca_path = with_suffix(cfg.out, ".pca");
  std::optional<PcaModel> pca;
  if (mode != PoolMode::kFixed) {
    EmbeddingMap selected;
    for (const auto* d : used) selected.emplace(d->doc_id, std::move(embs.at(d->doc_id)));
    embs = std::move(selected);
    std::vector<Document> fit_docs;
    for (const auto* d : train_docs) fit_docs.push_back(*d);
    pca = reduce_in_place(fit_docs, embs, cfg.pca_dim, log);
  }

  std::map<std::string, CollectionStats> stats;
  if (mode == PoolMode::kAttTfPert) stats = stats_by_lang(docs);
  const auto train_set = make_examples(train_docs, embs, mode, stats, cfg.tf_variant);
  const auto dev_set = make_examples(dev_docs, embs, mode, stats, cfg.tf_variant);

  TrainConfig tc;
  tc.seed = cfg.seed;
  tc.learning_rate = cfg.learning_rate;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.patience = cfg.patience;
  tc.hidden = cfg.hidden;
  if (cfg.optimizer == "adam") {
    tc.optimizer = Optimizer::kAdam;
  } else if (cfg.optimizer == "sgd") {
    tc.optimizer = Optimizer::kSgd;
  } else {
    throw ValidationError("--optimizer must be adam or sgd");
  }

  const auto bank = build_window_bank(cfg.pert_j, cfg.pert_gamma, cfg.pert_resolution);
  const auto result = train(train_set, dev_set, tc, mode, task, bank);

  save_model_file(cfg.out, result.model);
  if (pca) {
    save_pca_file(pca_path, *pca);
  } else if (fs::exists(pca_path)) {
    fs::remove(pca_path);  // stale reduction from an earlier run
  }

  json epochs = json::array();
  for (const auto& e : result.history) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"train_metric", e.train_metric},
                      {"dev_metric", e.dev_metric}});
  }
  const double train_metric = evaluate(result.model, train_set, bank);
  const json metrics = {
      {"mode", to_string(mode)},
      {"task", to_string(task)},
      {"metric", metric_name(task)},
      {"labels", result.model.labels},
      {"n_train", train_set.size()},
      {"n_dev", dev_set.size()},
      {"seed", cfg.seed},
      {"epochs", epochs},
      {"best_epoch", result.best_epoch},
      {"train_metric", train_metric},
      {"dev_metric", dev_set.empty() ? json(nullptr) : json(evaluate(result.model, dev_set, bank))},
  };
  write_json(with_suffix(cfg.out, ".metrics.json"), metrics);
  log << "trained " << to_string(mode) << " (" << to_string(task) << ") for " << result.history.size()
      << " epochs; best epoch " << result.best_epoch << ", " << metric_name(task) << " " << std::fixed
      << std::setprecision(4) << result.best_dev_metric << '\n';
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg, std::ostream& log) {
  require_path(cfg.manifest, "--manifest");
  if (cfg.model.empty() == cfg.predictions.empty()) {
    throw ValidationError("eval needs exactly one of --model or --predictions");
  }
  const auto split = parse_split(cfg.split);
  const auto docs = read_manifest(cfg.manifest);
  const auto eval_docs = in_split(docs, split);
  if (eval_docs.empty()) throw ValidationError("manifest has no '" + cfg.split + "' documents");

  TaskKind task{};
  std::vector<Scored> items;
  items.reserve(eval_docs.size());

  if (!cfg.predictions.empty()) {
    task = parse_task_kind(cfg.task);
    const auto preds = read_predictions(cfg.predictions);
    LabelSpace space({});
    std::vector<std::string> missing;
    for (const auto* d : eval_docs) {
      const auto it = preds.find(d->doc_id);
      if (it == preds.end()) {
        missing.push_back(d->doc_id);
        continue;
      }
      if (task == TaskKind::kMulticlass && it->second.size() != 1) {
        throw ValidationError("prediction for '" + d->doc_id + "' must hold exactly one label");
      }
      items.push_back({d->lang, space.ids(it->second), space.ids(d->labels)});
    }
    if (!missing.empty()) {
      std::string msg = std::to_string(missing.size()) + " document(s) have no prediction:";
      for (std::size_t i = 0; i < std::min<std::size_t>(missing.size(), 10); ++i) msg += " " + missing[i];
      throw ValidationError(msg);
    }
  } else {
    require_path(cfg.embeddings, "--embeddings");
    const auto model = load_model_file(cfg.model);
    task = model.task;
    auto embs = load_embeddings(cfg.embeddings);
    require_embeddings(eval_docs, embs, model.mode == PoolMode::kFixed, {});
    EmbeddingMap selected;
    for (const auto* d : eval_docs) selected.emplace(d->doc_id, std::move(embs.at(d->doc_id)));
    if (const auto pca_path = with_suffix(cfg.model, ".pca"); model.mode != PoolMode::kFixed && fs::exists(pca_path)) {
      apply_pca(load_pca_file(pca_path), selected);
    }
    std::map<std::string, CollectionStats> stats;
    if (model.mode == PoolMode::kAttTfPert) stats = stats_by_lang(docs);
    const auto examples = make_examples(eval_docs, selected, model.mode, stats, cfg.tf_variant);
    const auto bank = build_window_bank(model.mode == PoolMode::kFixed ? 1 : model.parts, model.gamma,
                                        model.resolution);
    std::vector<std::vector<std::size_t>> predicted(examples.size());
    parallel_for(examples.size(), [&](std::size_t i) { predicted[i] = predict(model, examples[i], bank); });
    LabelSpace space(model.labels);
    for (std::size_t i = 0; i < examples.size(); ++i) {
      items.push_back({examples[i].lang, predicted[i], space.ids(examples[i].labels)});
    }
  }

  const auto metric_for = [&](std::vector<std::size_t> subset) -> ResampleMetric {
    return [&items, task, subset = std::move(subset)](std::span<const std::size_t> idx) {
      std::vector<std::size_t> mapped;
      mapped.reserve(idx.size());
      for (const auto i : idx) mapped.push_back(subset[i]);
      return score_subset(items, mapped, task);
    };
  };

  std::map<std::string, std::vector<std::size_t>> by_lang;
  std::vector<std::size_t> everything(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    everything[i] = i;
    by_lang[items[i].lang].push_back(i);
  }

  const auto overall = bootstrap_or_point(metric_for(everything), everything.size(), cfg);
  json langs = json::object();
  log << std::left << std::setw(8) << "lang" << std::setw(10) << "n" << metric_name(task) << '\n';
  for (const auto& [lang, idx] : by_lang) {
    const auto ci = bootstrap_or_point(metric_for(idx), idx.size(), cfg);
    langs[lang] = ci_json(ci, idx.size());
    log << std::setw(8) << lang << std::setw(10) << idx.size() << format_ci(ci) << '\n';
  }
  log << std::setw(8) << "all" << std::setw(10) << items.size() << format_ci(overall) << '\n';

  const json metrics = {{"task", to_string(task)},
                        {"metric", metric_name(task)},
                        {"split", cfg.split},
                        {"bootstrap_samples", cfg.bootstrap_samples},
                        {"seed", cfg.seed},
                        {"overall", ci_json(overall, items.size())},
                        {"by_lang", langs}};
  if (!cfg.out.empty()) write_json(cfg.out, metrics);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// align / stats

int cmd_align(const RunConfig& cfg, std::ostream& log) {
  require_path(cfg.manifest, "--manifest");
  require_path(cfg.embeddings, "--embeddings");
  require_path(cfg.gold, "--gold");
  require_path(cfg.out, "--out");
  if (cfg.topk == 0) throw ValidationError("--topk must be at least 1");

  const auto docs = read_manifest(cfg.manifest);
  std::string src_lang = cfg.src_lang;
  std::string tgt_lang = cfg.tgt_lang;
  if (src_lang.empty() || tgt_lang.empty()) {
    std::set<std::string> langs;
    for (const auto& d : docs) langs.insert(d.lang);
    if (langs.size() != 2) {
      throw ValidationError("manifest has " + std::to_string(langs.size()) +
                            " languages; pass --src-lang and --tgt-lang");
    }
    src_lang = *langs.begin();
    tgt_lang = *langs.rbegin();
  }
  if (src_lang == tgt_lang) throw ValidationError("--src-lang and --tgt-lang must differ");

  const auto gold = read_gold_pairs(cfg.gold);
  if (gold.empty()) throw ValidationError("gold file " + cfg.gold.string() + " holds no pairs");

  std::vector<const Document*> used;
  for (const auto& d : docs) {
    if (d.lang == src_lang || d.lang == tgt_lang) used.push_back(&d);
  }
  const auto embs = load_embeddings(cfg.embeddings);
  require_embeddings(used, embs, true, with_suffix(cfg.out, ".errors.json"));

  DomainCollection src;
  DomainCollection tgt;
  for (const auto* d : used) {
    const auto row = embs.at(d->doc_id).row(0);
    auto& side = d->lang == src_lang ? src : tgt;
    side[d->domain_id.value_or("")].emplace(d->doc_id, to_double(row));
  }
  if (src.empty() || tgt.empty()) throw ValidationError("no documents for " + (src.empty() ? src_lang : tgt_lang));

  IndexOptions options;
  options.seed = cfg.seed;
  options.n_lists = cfg.ivf_lists;
  options.n_probe = cfg.ivf_probe;
  if (cfg.index == "ivf") {
    options.backend = IndexBackend::kIvf;
  } else if (cfg.index != "exact") {
    throw ValidationError("--index must be exact or ivf");
  }

  const auto result = align(src, tgt, cfg.topk, options);
  write_pairs(cfg.out, result);

  const auto hits = gold_hits(result, gold);
  const ResampleMetric metric = [&hits](std::span<const std::size_t> idx) {
    std::size_t n = 0;
    for (const auto i : idx) n += hits[i] ? 1 : 0;
    return idx.empty() ? 0.0 : static_cast<double>(n) / static_cast<double>(idx.size());
  };
  const auto ci = bootstrap_or_point(metric, hits.size(), cfg);
  const json metrics = {{"recall", ci.point},
                        {"ci_low", ci.low()},
                        {"ci_high", ci.high()},
                        {"n_gold", gold.size()},
                        {"n_pairs", result.size()},
                        {"formatted", format_ci(ci)},
                        {"src_lang", src_lang},
                        {"tgt_lang", tgt_lang},
                        {"topk", cfg.topk},
                        {"index", cfg.index}};
  write_json(with_suffix(cfg.out, ".metrics.json"), metrics);
  log << src_lang << "-" << tgt_lang << " recall " << format_ci(ci) << " (" << gold.size() << " gold pairs, "
      << result.size() << " predicted)\n";
  return kExitOk;
}

int cmd_stats(const RunConfig& cfg, std::ostream& log) {
  require_path(cfg.manifest, "--manifest");
  const auto docs = read_manifest(cfg.manifest);

  const auto summarize = [](const std::vector<Document>& group) {
    const auto s = collect_stats(group);
    std::size_t words_sum = 0;
    std::size_t words_max = 0;
    for (const auto& d : group) {
      words_sum += d.total_words();
      words_max = std::max(words_max, d.total_words());
    }
    return json{{"n_docs", s.n_docs},
                {"avg_len", s.avg_len},
                {"max_len", s.max_len},
                {"avg_words", group.empty() ? 0.0 : static_cast<double>(words_sum) / static_cast<double>(group.size())},
                {"max_words", words_max}};
  };

  std::map<std::pair<std::string, std::string>, std::vector<Document>> groups;
  for (const auto& d : docs) groups[{d.lang, std::string(to_string(d.split))}].push_back(d);

  json rows = json::array();
  log << std::left << std::setw(8) << "lang" << std::setw(8) << "split" << std::setw(10) << "docs"
      << std::setw(12) << "avg_len" << std::setw(10) << "max_len" << '\n';
  const auto print = [&log](const std::string& lang, const std::string& split, const json& j) {
    log << std::setw(8) << lang << std::setw(8) << split << std::setw(10) << j["n_docs"].get<std::size_t>()
        << std::setw(12) << std::fixed << std::setprecision(1) << j["avg_len"].get<double>() << std::setw(10)
        << j["max_len"].get<std::uint64_t>() << '\n';
  };
  for (const auto& [key, group] : groups) {
    auto j = summarize(group);
    print(key.first, key.second, j);
    j["lang"] = key.first;
    j["split"] = key.second;
    rows.push_back(std::move(j));
  }
  const auto total = summarize(docs);
  print("all", "all", total);

  if (!cfg.out.empty()) write_json(cfg.out, json{{"groups", rows}, {"total", total}});
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Argument parsing

namespace {

void add_inputs(CLI::App& sub, RunConfig& cfg) {
  sub.add_option("--manifest", cfg.manifest, "Manifest JSONL");
  sub.add_option("--seed", cfg.seed, "Seed for every random choice");
}

void add_bank(CLI::App& sub, RunConfig& cfg) {
  sub.add_option("--pert-j", cfg.pert_j, "Number of PERT windows J")->capture_default_str();
  sub.add_option("--pert-gamma", cfg.pert_gamma, "PERT shape gamma")->capture_default_str();
  sub.add_option("--pert-resolution", cfg.pert_resolution, "PERT cache resolution R")->capture_default_str();
}

void add_tf(CLI::App& sub, std::string& tf_text) {
  sub.add_option("--tf-variant", tf_text, "Term-frequency variant")
      ->check(CLI::IsMember({"tf2", "tf4"}))
      ->capture_default_str();
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  std::string tf_text = "tf4";
  std::string boiler_text = "off";

  CLI::App app{"Document embeddings pooled from sentence embeddings", "docpool"};
  app.require_subcommand(1);

  auto* compose = app.add_subcommand("compose", "Compose document vectors or excerpt ranges");
  add_inputs(*compose, cfg);
  compose->add_option("--embeddings", cfg.embeddings, "Sentence embeddings (directory or container)");
  compose->add_option("--strategy", cfg.strategy, "Composition strategy")->capture_default_str();
  add_tf(*compose, tf_text);
  add_bank(*compose, cfg);
  compose->add_option("--boilerplate", boiler_text, "Down-weight repeated sentences")
      ->check(CLI::IsMember({"on", "off"}))
      ->capture_default_str();
  compose->add_option("--pca-dim", cfg.pca_dim, "PCA target dim (0 disables)")->capture_default_str();
  compose->add_option("--model", cfg.model, "Trained model for att-pert / att-tf-pert");
  compose->add_option("--dump-weights", cfg.dump_weights, "Write per-sentence weights as JSON");
  compose->add_option("--out", cfg.out, "Output SEMB container, directory, or ranges file");

  auto* reduce = app.add_subcommand("reduce", "PCA-reduce sentence embeddings");
  add_inputs(*reduce, cfg);
  reduce->add_option("--embeddings", cfg.embeddings, "Sentence embeddings");
  reduce->add_option("--pca-dim", cfg.pca_dim, "PCA target dim")->capture_default_str();
  reduce->add_option("--out", cfg.out, "Output SEMB container or directory");

  auto* train_cmd = app.add_subcommand("train", "Train a pooling classifier");
  add_inputs(*train_cmd, cfg);
  train_cmd->add_option("--embeddings", cfg.embeddings, "Sentence (or composed) embeddings");
  auto* train_strategy =
      train_cmd->add_option("--strategy", cfg.strategy, "att-pert, att-tf-pert or fixed")->default_str("att-pert");
  train_cmd->add_option("--task", cfg.task, "multiclass or multilabel")
      ->check(CLI::IsMember({"multiclass", "multilabel"}))
      ->capture_default_str();
  add_tf(*train_cmd, tf_text);
  add_bank(*train_cmd, cfg);
  train_cmd->add_option("--pca-dim", cfg.pca_dim, "PCA target dim (0 disables)")->capture_default_str();
  train_cmd->add_option("--lr", cfg.learning_rate, "Learning rate")->capture_default_str();
  train_cmd->add_option("--epochs", cfg.epochs, "Maximum epochs")->capture_default_str();
  train_cmd->add_option("--batch-size", cfg.batch_size, "Mini-batch size")->capture_default_str();
  train_cmd->add_option("--patience", cfg.patience, "Early-stopping patience (0 disables)")->capture_default_str();
  train_cmd->add_option("--hidden", cfg.hidden, "Hidden layer width")->capture_default_str();
  train_cmd->add_option("--optimizer", cfg.optimizer, "adam or sgd")
      ->check(CLI::IsMember({"adam", "sgd"}))
      ->capture_default_str();
  train_cmd->add_option("--out", cfg.out, "Checkpoint path; metrics go to <out>.metrics.json");

  auto* eval = app.add_subcommand("eval", "Score a model or predictions with bootstrap CIs");
  add_inputs(*eval, cfg);
  eval->add_option("--embeddings", cfg.embeddings, "Embeddings for --model");
  eval->add_option("--model", cfg.model, "Trained checkpoint");
  eval->add_option("--predictions", cfg.predictions, "JSONL of {doc_id, labels}");
  eval->add_option("--task", cfg.task, "Task for --predictions")
      ->check(CLI::IsMember({"multiclass", "multilabel"}))
      ->capture_default_str();
  add_tf(*eval, tf_text);
  eval->add_option("--split", cfg.split, "Split to score")
      ->check(CLI::IsMember({"train", "dev", "test"}))
      ->capture_default_str();
  eval->add_option("--bootstrap-samples", cfg.bootstrap_samples, "Resamples (0 disables)")->capture_default_str();
  eval->add_option("--out", cfg.out, "Metrics JSON");

  auto* align_cmd = app.add_subcommand("align", "Align documents across two languages");
  add_inputs(*align_cmd, cfg);
  align_cmd->add_option("--embeddings", cfg.embeddings, "Composed document vectors");
  align_cmd->add_option("--gold", cfg.gold, "Gold pairs TSV");
  align_cmd->add_option("--src-lang", cfg.src_lang, "Source language");
  align_cmd->add_option("--tgt-lang", cfg.tgt_lang, "Target language");
  align_cmd->add_option("--topk", cfg.topk, "Candidates per source document")->capture_default_str();
  align_cmd->add_option("--index", cfg.index, "exact or ivf")
      ->check(CLI::IsMember({"exact", "ivf"}))
      ->capture_default_str();
  align_cmd->add_option("--ivf-lists", cfg.ivf_lists, "IVF partitions")->capture_default_str();
  align_cmd->add_option("--ivf-probe", cfg.ivf_probe, "IVF partitions scanned (0 = all)")->capture_default_str();
  align_cmd->add_option("--bootstrap-samples", cfg.bootstrap_samples, "Resamples (0 disables)")
      ->capture_default_str();
  align_cmd->add_option("--out", cfg.out, "Pairs TSV; metrics go to <out>.metrics.json");

  auto* stats = app.add_subcommand("stats", "Document counts and lengths per language and split");
  add_inputs(*stats, cfg);
  stats->add_option("--out", cfg.out, "Report JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  cfg.tf_variant = parse_tf_variant(tf_text);
  cfg.boilerplate = boiler_text == "on";
  if (train_cmd->parsed() && train_strategy->count() == 0) cfg.strategy = "att-pert";

  try {
    if (compose->parsed()) return cmd_compose(cfg, out);
    if (reduce->parsed()) return cmd_reduce(cfg, out);
    if (train_cmd->parsed()) return cmd_train(cfg, out);
    if (eval->parsed()) return cmd_eval(cfg, out);
    if (align_cmd->parsed()) return cmd_align(cfg, out);
    return cmd_stats(cfg, out);
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const ValidationError& e) {
    err << "validation error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  }
}

}  // namespace docpool::cli
