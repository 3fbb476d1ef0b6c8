#include "docpool/learner.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <set>

#include "docpool/error.hpp"
#include "docpool/metrics.hpp"

namespace docpool {

std::string_view to_string(PoolMode mode) {
  switch (mode) {
    case PoolMode::kAttPert: return "att-pert";
    case PoolMode::kAttTfPert: return "att-tf-pert";
    case PoolMode::kFixed: return "fixed";
  }
  return "att-pert";
}

std::string_view to_string(TaskKind task) {
  return task == TaskKind::kMulticlass ? "multiclass" : "multilabel";
}

PoolMode parse_pool_mode(std::string_view text) {
  if (text == "att-pert") return PoolMode::kAttPert;
  if (text == "att-tf-pert") return PoolMode::kAttTfPert;
  if (text == "fixed") return PoolMode::kFixed;
  throw ValidationError("unknown pooling mode '" + std::string(text) + "'");
}

TaskKind parse_task_kind(std::string_view text) {
  if (text == "multiclass") return TaskKind::kMulticlass;
  if (text == "multilabel") return TaskKind::kMultilabel;
  throw ValidationError("unknown task '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------

const std::array<std::string_view, Parameters::kGroupCount>& Parameters::group_names() {
  static const std::array<std::string_view, kGroupCount> names{"queries", "w1", "b1", "w2", "b2"};
  return names;
}

std::array<std::span<double>, Parameters::kGroupCount> Parameters::groups() {
  return {queries.values(), w1.values(), std::span<double>(b1), w2.values(), std::span<double>(b2)};
}

std::array<std::span<const double>, Parameters::kGroupCount> Parameters::groups() const {
  return {queries.values(), w1.values(), std::span<const double>(b1), w2.values(),
          std::span<const double>(b2)};
}

Parameters Parameters::zeros_like() const {
  return {DenseMatrix(queries.rows(), queries.cols()), DenseMatrix(w1.rows(), w1.cols()),
          std::vector<double>(b1.size(), 0.0), DenseMatrix(w2.rows(), w2.cols()),
          std::vector<double>(b2.size(), 0.0)};
}

namespace {

// Uniform double in [0, 1) with a fixed bit recipe so runs reproduce exactly.
double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

void glorot_fill(DenseMatrix& m, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  for (auto& v : m.values()) v = (2.0 * unit_uniform(rng) - 1.0) * limit;
}

}  // namespace

PoolerModel PoolerModel::create(PoolMode mode, TaskKind task, std::size_t dim, std::size_t parts,
                                std::size_t hidden, std::vector<std::string> labels,
                                std::uint64_t seed, double gamma, std::size_t resolution) {
  if (dim == 0) throw ValidationError("model dim must be positive");
  if (hidden == 0) throw ValidationError("hidden layer size must be positive");
  if (labels.empty()) throw ValidationError("model needs at least one class");
  if (mode != PoolMode::kFixed && parts == 0) throw ValidationError("PERT parts must be positive");

  PoolerModel m;
  m.mode = mode;
  m.task = task;
  m.dim = dim;
  m.parts = mode == PoolMode::kFixed ? 0 : parts;
  m.hidden = hidden;
  m.gamma = gamma;
  m.resolution = resolution;
  m.labels = std::move(labels);

  std::mt19937_64 rng(seed);
  m.params.queries = mode == PoolMode::kFixed ? DenseMatrix() : DenseMatrix(parts, dim);
  m.params.w1 = DenseMatrix(m.input_dim(), hidden);
  m.params.b1.assign(hidden, 0.0);
  m.params.w2 = DenseMatrix(hidden, m.classes());
  m.params.b2.assign(m.classes(), 0.0);
  glorot_fill(m.params.w1, rng);
  glorot_fill(m.params.w2, rng);
  return m;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

void check_input(const PoolerModel& model, const EmbeddingMatrix& embs, std::span<const double> tfidf) {
  if (embs.dim() != model.dim) {
    throw ValidationError("embedding dim " + std::to_string(embs.dim()) + " does not match model dim " +
                          std::to_string(model.dim));
  }
  if (embs.count() == 0) throw ValidationError("document has no sentence embeddings");
  if (model.mode == PoolMode::kFixed && embs.count() != 1) {
    throw ValidationError("fixed pooling expects exactly one document vector");
  }
  if (model.mode == PoolMode::kAttTfPert && tfidf.size() != embs.count()) {
    throw ValidationError("att-tf-pert pooling requires one tfidf score per sentence");
  }
}

struct ForwardState {
  DenseMatrix window;        // J x N, static PERT prior
  DenseMatrix attention;     // J x N
  std::vector<double> raw;   // J * d, unnormalised sub-vectors
  std::vector<double> norm;  // J
  std::vector<double> pool;  // input_dim
  std::vector<double> z;     // H pre-activation
  std::vector<double> h;     // H
  std::vector<double> scores;
};

DenseMatrix attention_from(const DenseMatrix& queries, const EmbeddingMatrix& embs) {
  const std::size_t parts = queries.rows();
  const std::size_t n = embs.count();
  const std::size_t d = embs.dim();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  DenseMatrix a(parts, n);
  for (std::size_t j = 0; j < parts; ++j) {
    const auto q = queries.row(j);
    double max_score = -std::numeric_limits<double>::infinity();
    for (std::size_t s = 0; s < n; ++s) {
      const auto e = embs.row(s);
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += q[k] * e[k];
      a(j, s) = dot * inv_sqrt_d;
      max_score = std::max(max_score, a(j, s));
    }
    double sum = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
      a(j, s) = std::exp(a(j, s) - max_score);
      sum += a(j, s);
    }
    for (std::size_t s = 0; s < n; ++s) a(j, s) /= sum;
  }
  return a;
}

void pool_into(const PoolerModel& model, const EmbeddingMatrix& embs, std::span<const double> tfidf,
               ForwardState& st) {
  if (model.mode == PoolMode::kFixed) {
    const auto r = embs.row(0);
    st.pool.assign(r.begin(), r.end());
    return;
  }
  const std::size_t parts = model.parts;
  const std::size_t n = embs.count();
  const std::size_t d = embs.dim();
  const bool use_tfidf = model.mode == PoolMode::kAttTfPert;
  st.attention = attention_from(model.params.queries, embs);
  st.raw.assign(parts * d, 0.0);
  st.norm.assign(parts, 0.0);
  st.pool.assign(parts * d, 0.0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(parts));
  for (std::size_t j = 0; j < parts; ++j) {
    double* raw = st.raw.data() + j * d;
    for (std::size_t s = 0; s < n; ++s) {
      const double u = st.window(j, s) * st.attention(j, s) * (use_tfidf ? tfidf[s] : 1.0);
      if (u == 0.0) continue;
      const auto e = embs.row(s);
      for (std::size_t k = 0; k < d; ++k) raw[k] += u * e[k];
    }
    const double norm = l2_norm({raw, d});
    st.norm[j] = norm;
    if (norm <= kNormEpsilon) continue;
    for (std::size_t k = 0; k < d; ++k) st.pool[j * d + k] = raw[k] * scale / norm;
  }
}

void classify_into(const PoolerModel& model, ForwardState& st) {
  const auto& p = model.params;
  const std::size_t in = model.input_dim();
  st.z.assign(p.b1.begin(), p.b1.end());
  for (std::size_t i = 0; i < in; ++i) {
    const double x = st.pool[i];
    if (x == 0.0) continue;
    const auto w = p.w1.row(i);
    for (std::size_t h = 0; h < model.hidden; ++h) st.z[h] += x * w[h];
  }
  st.h.resize(model.hidden);
  for (std::size_t h = 0; h < model.hidden; ++h) st.h[h] = std::max(0.0, st.z[h]);
  st.scores.assign(p.b2.begin(), p.b2.end());
  for (std::size_t h = 0; h < model.hidden; ++h) {
    const auto w = p.w2.row(h);
    for (std::size_t c = 0; c < model.classes(); ++c) st.scores[c] += st.h[h] * w[c];
  }
}

ForwardState run_forward(const PoolerModel& model, const EmbeddingMatrix& embs, const DenseMatrix& window,
                         std::span<const double> tfidf) {
  check_input(model, embs, tfidf);
  ForwardState st;
  if (model.mode != PoolMode::kFixed) {
    if (window.rows() != model.parts || window.cols() != embs.count()) {
      throw ValidationError("PERT window bank does not match model parts");
    }
    st.window = window;
  }
  pool_into(model, embs, tfidf, st);
  classify_into(model, st);
  return st;
}

double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// dL/dscores
std::vector<double> score_gradient(std::span<const double> scores, std::span<const std::size_t> targets,
                                   TaskKind task) {
  std::vector<double> g(scores.size(), 0.0);
  if (task == TaskKind::kMulticlass) {
    const double max_s = *std::max_element(scores.begin(), scores.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < scores.size(); ++c) sum += (g[c] = std::exp(scores[c] - max_s));
    for (auto& v : g) v /= sum;
    g[targets.front()] -= 1.0;
  } else {
    const double inv_c = 1.0 / static_cast<double>(scores.size());
    for (std::size_t c = 0; c < scores.size(); ++c) g[c] = sigmoid(scores[c]) * inv_c;
    for (const auto t : targets) g[t] -= inv_c;
  }
  return g;
}

double backward(const PoolerModel& model, const EmbeddingMatrix& embs, std::span<const double> tfidf,
                const ForwardState& st, std::span<const std::size_t> targets, Parameters& grad,
                double weight) {
  const auto& p = model.params;
  const std::size_t in = model.input_dim();
  const std::size_t hidden = model.hidden;
  const std::size_t classes = model.classes();

  const double loss = loss_from_scores(st.scores, targets, model.task);
  std::vector<double> g_scores = score_gradient(st.scores, targets, model.task);
  for (auto& v : g_scores) v *= weight;

  // Output layer.
  std::vector<double> g_z(hidden, 0.0);
  for (std::size_t h = 0; h < hidden; ++h) {
    auto gw = grad.w2.row(h);
    const auto w = p.w2.row(h);
    double dh = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      gw[c] += st.h[h] * g_scores[c];
      dh += w[c] * g_scores[c];
    }
    g_z[h] = st.z[h] > 0.0 ? dh : 0.0;
  }
  for (std::size_t c = 0; c < classes; ++c) grad.b2[c] += g_scores[c];

  // Hidden layer.
  std::vector<double> g_pool(in, 0.0);
  for (std::size_t i = 0; i < in; ++i) {
    auto gw = grad.w1.row(i);
    const auto w = p.w1.row(i);
    double dp = 0.0;
    for (std::size_t h = 0; h < hidden; ++h) {
      gw[h] += st.pool[i] * g_z[h];
      dp += w[h] * g_z[h];
    }
    g_pool[i] = dp;
  }
  for (std::size_t h = 0; h < hidden; ++h) grad.b1[h] += g_z[h];

  if (model.mode == PoolMode::kFixed) return loss;

  // Pooling: pool_j = raw_j / (|raw_j| sqrt(J)), raw_j = sum_n u_j(n) e_n,
  // u_j(n) = P_j(n) a_j(n) t_n, a_j = softmax_n(q_j . e_n / sqrt(d)).
  const std::size_t parts = model.parts;
  const std::size_t n = embs.count();
  const std::size_t d = model.dim;
  const bool use_tfidf = model.mode == PoolMode::kAttTfPert;
  const double scale = 1.0 / std::sqrt(static_cast<double>(parts));
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<double> g_raw(d);
  std::vector<double> g_att(n);
  for (std::size_t j = 0; j < parts; ++j) {
    const double norm = st.norm[j];
    if (norm <= kNormEpsilon) continue;
    const double* unit = st.pool.data() + j * d;  // = scale * raw / norm
    const double* gp = g_pool.data() + j * d;
    // d(raw/|raw|) = (I - v v^T) / |raw|, with v = raw/|raw| = unit / scale.
    double dot = 0.0;
    for (std::size_t k = 0; k < d; ++k) dot += (unit[k] / scale) * gp[k];
    for (std::size_t k = 0; k < d; ++k) g_raw[k] = scale * (gp[k] - (unit[k] / scale) * dot) / norm;

    double weighted = 0.0;  // sum_n a_j(n) g_att(n)
    for (std::size_t s = 0; s < n; ++s) {
      const auto e = embs.row(s);
      double ge = 0.0;
      for (std::size_t k = 0; k < d; ++k) ge += e[k] * g_raw[k];
      g_att[s] = st.window(j, s) * (use_tfidf ? tfidf[s] : 1.0) * ge;
      weighted += st.attention(j, s) * g_att[s];
    }
    auto gq = grad.queries.row(j);
    for (std::size_t s = 0; s < n; ++s) {
      const double g_score = st.attention(j, s) * (g_att[s] - weighted) * inv_sqrt_d;
      if (g_score == 0.0) continue;
      const auto e = embs.row(s);
      for (std::size_t k = 0; k < d; ++k) gq[k] += g_score * e[k];
    }
  }
  return loss;
}

DenseMatrix window_for(const PoolerModel& model, const PertWindowBank& bank, std::size_t n) {
  if (model.mode == PoolMode::kFixed) return {};
  if (bank.parts() != model.parts) {
    throw ValidationError("PERT bank has " + std::to_string(bank.parts()) + " parts, model expects " +
                          std::to_string(model.parts));
  }
  return window_weights(bank, n);
}

}  // namespace

DenseMatrix attention_weights(const PoolerModel& model, const EmbeddingMatrix& embs) {
  if (embs.dim() != model.dim) throw ValidationError("embedding dim does not match model dim");
  if (model.mode == PoolMode::kFixed) throw ValidationError("fixed pooling has no attention");
  return attention_from(model.params.queries, embs);
}

std::vector<double> att_pert_pool(const PoolerModel& model, const EmbeddingMatrix& embs,
                                  const PertWindowBank& bank, std::span<const double> tfidf) {
  check_input(model, embs, tfidf);
  ForwardState st;
  st.window = window_for(model, bank, embs.count());
  pool_into(model, embs, tfidf, st);
  return st.pool;
}

std::vector<double> forward(const PoolerModel& model, const EmbeddingMatrix& embs,
                            const PertWindowBank& bank, std::span<const double> tfidf) {
  check_input(model, embs, tfidf);
  return run_forward(model, embs, window_for(model, bank, embs.count()), tfidf).scores;
}

double loss_from_scores(std::span<const double> scores, std::span<const std::size_t> targets,
                        TaskKind task) {
  if (task == TaskKind::kMulticlass) {
    if (targets.size() != 1) throw ValidationError("multiclass loss needs exactly one target");
    const double max_s = *std::max_element(scores.begin(), scores.end());
    double sum = 0.0;
    for (const double s : scores) sum += std::exp(s - max_s);
    return max_s + std::log(sum) - scores[targets.front()];
  }
  double total = 0.0;
  for (std::size_t c = 0; c < scores.size(); ++c) {
    const double s = scores[c];
    const double y = std::find(targets.begin(), targets.end(), c) != targets.end() ? 1.0 : 0.0;
    total += std::max(s, 0.0) - s * y + std::log1p(std::exp(-std::abs(s)));
  }
  return total / static_cast<double>(scores.size());
}

std::vector<std::size_t> predict_from_scores(std::span<const double> scores, TaskKind task) {
  if (task == TaskKind::kMulticlass) {
    return {static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin())};
  }
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < scores.size(); ++c) {
    if (scores[c] >= 0.0) out.push_back(c);
  }
  return out;
}

std::vector<std::size_t> predict(const PoolerModel& model, const LabeledExample& example,
                                 const PertWindowBank& bank) {
  return predict_from_scores(forward(model, example.embs, bank, example.tfidf), model.task);
}

double loss_and_gradient(const PoolerModel& model, const LabeledExample& example,
                         std::span<const std::size_t> targets, const PertWindowBank& bank,
                         Parameters& grad, double weight) {
  const auto window = window_for(model, bank, example.embs.count());
  const auto st = run_forward(model, example.embs, window, example.tfidf);
  return backward(model, example.embs, example.tfidf, st, targets, grad, weight);
}

std::vector<std::size_t> label_ids(const PoolerModel& model, std::span<const std::string> labels,
                                   std::string_view doc_id) {
  std::vector<std::size_t> ids;
  for (const auto& l : labels) {
    const auto it = std::lower_bound(model.labels.begin(), model.labels.end(), l);
    if (it == model.labels.end() || *it != l) {
      throw ValidationError("document '" + std::string(doc_id) + "' has label '" + l +
                            "' outside the training label space");
    }
    ids.push_back(static_cast<std::size_t>(it - model.labels.begin()));
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

double evaluate(const PoolerModel& model, std::span<const LabeledExample> examples,
                const PertWindowBank& bank) {
  std::vector<std::vector<std::size_t>> predicted;
  std::vector<std::vector<std::size_t>> gold;
  for (const auto& ex : examples) {
    predicted.push_back(predict(model, ex, bank));
    gold.push_back(label_ids(model, ex.labels, ex.doc_id));
  }
  if (model.task == TaskKind::kMultilabel) return micro_f1(predicted, gold);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hits += predicted[i] == gold[i];
  return gold.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(gold.size());
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct Prepared {
  const LabeledExample* example;
  DenseMatrix window;
  std::vector<std::size_t> targets;
};

std::vector<Prepared> prepare(const PoolerModel& model, std::span<const LabeledExample> set,
                              const PertWindowBank& bank) {
  std::vector<Prepared> out;
  out.reserve(set.size());
  for (const auto& ex : set) {
    check_input(model, ex.embs, ex.tfidf);
    auto targets = label_ids(model, ex.labels, ex.doc_id);
    if (model.task == TaskKind::kMulticlass && targets.size() != 1) {
      throw ValidationError("document '" + ex.doc_id + "' needs exactly one label for multiclass training");
    }
    out.push_back({&ex, window_for(model, bank, ex.embs.count()), std::move(targets)});
  }
  return out;
}

double prepared_metric(const PoolerModel& model, const std::vector<Prepared>& set) {
  std::vector<std::vector<std::size_t>> predicted;
  std::vector<std::vector<std::size_t>> gold;
  predicted.reserve(set.size());
  for (const auto& p : set) {
    const auto st = run_forward(model, p.example->embs, p.window, p.example->tfidf);
    predicted.push_back(predict_from_scores(st.scores, model.task));
    gold.push_back(p.targets);
  }
  if (model.task == TaskKind::kMultilabel) return micro_f1(predicted, gold);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hits += predicted[i] == gold[i];
  return gold.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(gold.size());
}

class AdamState {
 public:
  explicit AdamState(const Parameters& like) : m_(like.zeros_like()), v_(like.zeros_like()) {}

  void step(Parameters& params, const Parameters& grad, double lr) {
    constexpr double kBeta1 = 0.9;
    constexpr double kBeta2 = 0.999;
    constexpr double kEps = 1e-8;
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    auto p = params.groups();
    auto g = grad.groups();
    auto m = m_.groups();
    auto v = v_.groups();
    for (std::size_t k = 0; k < Parameters::kGroupCount; ++k) {
      for (std::size_t i = 0; i < p[k].size(); ++i) {
        m[k][i] = kBeta1 * m[k][i] + (1.0 - kBeta1) * g[k][i];
        v[k][i] = kBeta2 * v[k][i] + (1.0 - kBeta2) * g[k][i] * g[k][i];
        p[k][i] -= lr * (m[k][i] / c1) / (std::sqrt(v[k][i] / c2) + kEps);
      }
    }
  }

 private:
  Parameters m_;
  Parameters v_;
  std::size_t t_ = 0;
};

}  // namespace

TrainResult train(std::span<const LabeledExample> train_set, std::span<const LabeledExample> dev_set,
                  const TrainConfig& cfg, PoolMode mode, TaskKind task, const PertWindowBank& bank) {
  if (train_set.empty()) throw ValidationError("training split is empty");
  if (cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.learning_rate > 0.0)) {
    throw ValidationError("epochs, batch size and learning rate must be positive");
  }

  std::set<std::string> label_set;
  for (const auto& ex : train_set) label_set.insert(ex.labels.begin(), ex.labels.end());
  std::vector<std::string> labels(label_set.begin(), label_set.end());

  auto model = PoolerModel::create(mode, task, train_set.front().embs.dim(), bank.parts(), cfg.hidden,
                                   std::move(labels), cfg.seed, bank.gamma(), bank.resolution());
  const auto train_prepared = prepare(model, train_set, bank);
  const auto dev_prepared = prepare(model, dev_set, bank);

  TrainResult result{model, {}, 0, -1.0};
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(train_prepared.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  AdamState adam(model.params);
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);
    }
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double weight = 1.0 / static_cast<double>(end - start);
      Parameters grad = model.params.zeros_like();
      for (std::size_t b = start; b < end; ++b) {
        const auto& p = train_prepared[order[b]];
        const auto st = run_forward(model, p.example->embs, p.window, p.example->tfidf);
        epoch_loss += backward(model, p.example->embs, p.example->tfidf, st, p.targets, grad, weight);
      }
      if (cfg.optimizer == Optimizer::kAdam) {
        adam.step(model.params, grad, cfg.learning_rate);
      } else {
        auto p = model.params.groups();
        auto g = grad.groups();
        for (std::size_t k = 0; k < Parameters::kGroupCount; ++k) {
          for (std::size_t i = 0; i < p[k].size(); ++i) p[k][i] -= cfg.learning_rate * g[k][i];
        }
      }
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss = epoch_loss / static_cast<double>(order.size());
    em.train_metric = prepared_metric(model, train_prepared);
    em.dev_metric = dev_prepared.empty() ? em.train_metric : prepared_metric(model, dev_prepared);
    result.history.push_back(em);

    if (em.dev_metric > result.best_dev_metric) {
      result.best_dev_metric = em.dev_metric;
      result.best_epoch = epoch;
      result.model = model;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------

GradCheckReport grad_check(const PoolerModel& model, const LabeledExample& example,
                           const PertWindowBank& bank, double epsilon) {
  const auto targets = label_ids(model, example.labels, example.doc_id);
  const auto window = window_for(model, bank, example.embs.count());
  Parameters analytic = model.params.zeros_like();
  {
    const auto st = run_forward(model, example.embs, window, example.tfidf);
    backward(model, example.embs, example.tfidf, st, targets, analytic, 1.0);
  }

  PoolerModel probe = model;
  const auto loss_at = [&] {
    const auto st = run_forward(probe, example.embs, window, example.tfidf);
    return loss_from_scores(st.scores, targets, probe.task);
  };

  GradCheckReport report;
  auto params = probe.params.groups();
  const auto grads = analytic.groups();
  for (std::size_t k = 0; k < Parameters::kGroupCount; ++k) {
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      const double saved = params[k][i];
      params[k][i] = saved + epsilon;
      const double plus = loss_at();
      params[k][i] = saved - epsilon;
      const double minus = loss_at();
      params[k][i] = saved;

      const double numeric = (plus - minus) / (2.0 * epsilon);
      const double abs_err = std::abs(numeric - grads[k][i]);
      const double rel_err =
          abs_err / std::max({std::abs(numeric), std::abs(grads[k][i]), kGradCheckFloor});
      report.group_abs_error[k] = std::max(report.group_abs_error[k], abs_err);
      report.group_rel_error[k] = std::max(report.group_rel_error[k], rel_err);
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      report.max_rel_error = std::max(report.max_rel_error, rel_err);
    }
  }
  return report;
}

std::map<std::string, double> zero_shot_eval(
    const PoolerModel& model, const std::map<std::string, std::vector<LabeledExample>>& eval_sets,
    const PertWindowBank& bank) {
  std::map<std::string, double> out;
  for (const auto& [lang, examples] : eval_sets) {
    std::size_t hits = 0;
    for (const auto& ex : examples) {
      if (ex.embs.dim() != model.dim) {
        throw ValidationError("language '" + lang + "': embedding dim " + std::to_string(ex.embs.dim()) +
                              " does not match model dim " + std::to_string(model.dim));
      }
      hits += predict(model, ex, bank) == label_ids(model, ex.labels, ex.doc_id);
    }
    out[lang] = examples.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(examples.size());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr std::array<char, 4> kModelMagic{'D', 'P', 'M', 'L'};

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  template <typename T>
  T get(const char* field) {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (in_.gcount() != static_cast<std::streamsize>(sizeof(T))) {
      throw FormatError(std::string("truncated checkpoint reading ") + field, offset_ + in_.gcount());
    }
    offset_ += sizeof(T);
    return v;
  }

  void bytes(char* dst, std::size_t n, const char* field) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (in_.gcount() != static_cast<std::streamsize>(n)) {
      throw FormatError(std::string("truncated checkpoint reading ") + field, offset_ + in_.gcount());
    }
    offset_ += n;
  }

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::istream& in_;
  std::uint64_t offset_ = 0;
};

}  // namespace

void save_model(std::ostream& out, const PoolerModel& model) {
  out.write(kModelMagic.data(), kModelMagic.size());
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.dim));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.parts));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.hidden));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.classes()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.mode));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.task));
  put<double>(out, model.gamma);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.resolution));
  for (const auto& l : model.labels) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(l.size()));
    out.write(l.data(), static_cast<std::streamsize>(l.size()));
  }
  for (const auto group : model.params.groups()) {
    out.write(reinterpret_cast<const char*>(group.data()),
              static_cast<std::streamsize>(group.size() * sizeof(double)));
  }
  if (!out) throw IoError("checkpoint write failed");
}

PoolerModel load_model(std::istream& in) {
  Reader r(in);
  std::array<char, 4> magic{};
  r.bytes(magic.data(), magic.size(), "magic");
  if (magic != kModelMagic) throw FormatError("bad checkpoint magic", 0);
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  const auto dim = r.get<std::uint32_t>("dim");
  const auto parts = r.get<std::uint32_t>("parts");
  const auto hidden = r.get<std::uint32_t>("hidden");
  const auto classes = r.get<std::uint32_t>("classes");
  const auto mode = r.get<std::uint32_t>("mode");
  const auto task = r.get<std::uint32_t>("task");
  const auto gamma = r.get<double>("gamma");
  const auto resolution = r.get<std::uint32_t>("resolution");
  if (mode > 2) throw FormatError("unknown pooling mode in checkpoint", 24);
  if (task > 1) throw FormatError("unknown task in checkpoint", 28);

  std::vector<std::string> labels(classes);
  for (auto& l : labels) {
    const auto len = r.get<std::uint32_t>("label length");
    if (len > (1u << 20)) throw FormatError("implausible label length", r.offset());
    l.resize(len);
    r.bytes(l.data(), len, "label");
  }

  auto model = PoolerModel::create(static_cast<PoolMode>(mode), static_cast<TaskKind>(task), dim, parts,
                                   hidden, std::move(labels), 0, gamma, resolution);
  for (auto group : model.params.groups()) {
    r.bytes(reinterpret_cast<char*>(group.data()), group.size() * sizeof(double), "parameters");
  }
  for (const auto group : model.params.groups()) {
    for (const double v : group) {
      if (!std::isfinite(v)) throw ValidationError("checkpoint contains non-finite parameters");
    }
  }
  return model;
}

void save_model_file(const std::filesystem::path& path, const PoolerModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  save_model(out, model);
}

PoolerModel load_model_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  return load_model(in);
}

}  // namespace docpool
