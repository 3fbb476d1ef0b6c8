#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "docpool/embed_store.hpp"
#include "docpool/matrix.hpp"
#include "docpool/pert.hpp"

namespace docpool {

/// How a document's sentence matrix becomes the classifier input.
enum class PoolMode : std::uint32_t {
  kAttPert = 0,    // D_j = sum_n emb_n P_j(n) a_j(n)
  kAttTfPert = 1,  // D_j = sum_n emb_n P_j(n) a_j(n) tfidf_n
  kFixed = 2,      // input is a precomputed 1 x d document vector
};

enum class TaskKind : std::uint32_t { kMulticlass = 0, kMultilabel = 1 };

std::string_view to_string(PoolMode mode);
std::string_view to_string(TaskKind task);
PoolMode parse_pool_mode(std::string_view text);
TaskKind parse_task_kind(std::string_view text);

/// Trainable tensors, in checkpoint order.
struct Parameters {
  DenseMatrix queries;     // parts x dim (0 x 0 for kFixed)
  DenseMatrix w1;          // input_dim x hidden
  std::vector<double> b1;  // hidden
  DenseMatrix w2;          // hidden x classes
  std::vector<double> b2;  // classes

  static constexpr std::size_t kGroupCount = 5;
  static const std::array<std::string_view, kGroupCount>& group_names();

  std::array<std::span<double>, kGroupCount> groups();
  std::array<std::span<const double>, kGroupCount> groups() const;

  /// Same shapes, all zero.
  Parameters zeros_like() const;

  friend bool operator==(const Parameters&, const Parameters&) = default;
};

struct PoolerModel {
  PoolMode mode = PoolMode::kAttPert;
  TaskKind task = TaskKind::kMulticlass;
  std::size_t dim = 0;      // sentence (or fixed document) vector dim
  std::size_t parts = 0;    // PERT parts J
  std::size_t hidden = 10;  // H
  double gamma = 20.0;      // PERT bank the model was trained with
  std::size_t resolution = 1024;
  std::vector<std::string> labels;  // class names, id = position
  Parameters params;

  std::size_t classes() const noexcept { return labels.size(); }
  std::size_t input_dim() const noexcept { return mode == PoolMode::kFixed ? dim : parts * dim; }

  /// Zero queries and biases; Glorot-uniform W1 and W2 drawn from `seed`.
  static PoolerModel create(PoolMode mode, TaskKind task, std::size_t dim, std::size_t parts,
                            std::size_t hidden, std::vector<std::string> labels,
                            std::uint64_t seed, double gamma = 20.0,
                            std::size_t resolution = 1024);

  friend bool operator==(const PoolerModel&, const PoolerModel&) = default;
};

/// One document prepared for the learner.
struct LabeledExample {
  std::string doc_id;
  std::string lang;
  EmbeddingMatrix embs;
  std::vector<double> tfidf;  // per sentence; required for kAttTfPert
  std::vector<std::string> labels;
};

// ---------------------------------------------------------------------------
// Inference

/// J x N softmax attention a_j(n) over sentences with scores q_j . emb_n / sqrt(d).
DenseMatrix attention_weights(const PoolerModel& model, const EmbeddingMatrix& embs);

/// Pooled classifier input (length J * d). Sub-vectors are L2-normalised and
/// scaled by 1/sqrt(J) exactly as in tk_pert. For kFixed returns row 0.
std::vector<double> att_pert_pool(const PoolerModel& model, const EmbeddingMatrix& embs,
                                  const PertWindowBank& bank, std::span<const double> tfidf = {});

/// Raw class scores W2^T relu(W1^T pool + b1) + b2.
std::vector<double> forward(const PoolerModel& model, const EmbeddingMatrix& embs,
                            const PertWindowBank& bank, std::span<const double> tfidf = {});

/// Cross-entropy (multiclass) or mean binary cross-entropy over classes (multilabel).
double loss_from_scores(std::span<const double> scores, std::span<const std::size_t> targets,
                        TaskKind task);

/// Multiclass: {argmax}. Multilabel: every class with sigmoid(score) >= 0.5.
std::vector<std::size_t> predict_from_scores(std::span<const double> scores, TaskKind task);
std::vector<std::size_t> predict(const PoolerModel& model, const LabeledExample& example,
                                 const PertWindowBank& bank);

/// Loss on one example and its gradient, accumulated into `grad` with `weight`.
double loss_and_gradient(const PoolerModel& model, const LabeledExample& example,
                         std::span<const std::size_t> targets, const PertWindowBank& bank,
                         Parameters& grad, double weight = 1.0);

/// Label ids of `labels` in the model's label space; ValidationError naming
/// `doc_id` for unknown labels.
std::vector<std::size_t> label_ids(const PoolerModel& model, std::span<const std::string> labels,
                                   std::string_view doc_id);

/// Multiclass: accuracy. Multilabel: micro-F1 at threshold 0.5.
double evaluate(const PoolerModel& model, std::span<const LabeledExample> examples,
                const PertWindowBank& bank);

// ---------------------------------------------------------------------------
// Training

enum class Optimizer { kAdam, kSgd };

struct TrainConfig {
  std::uint64_t seed = 0;
  double learning_rate = 1e-3;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  Optimizer optimizer = Optimizer::kAdam;
  std::size_t patience = 5;
  std::size_t hidden = 10;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_metric = 0.0;
  double dev_metric = 0.0;
};

struct TrainResult {
  PoolerModel model;  // parameters at the best dev epoch
  std::vector<EpochMetrics> history;
  std::size_t best_epoch = 0;
  double best_dev_metric = 0.0;
};

/// Mini-batch training of pooling + classifier. The label space is the
/// sorted set of training labels; any dev label outside it, a multiclass
/// example without exactly one label, inconsistent dims or missing tfidf
/// scores raise ValidationError before training starts. Early stopping on the
/// dev metric (training metric when `dev` is empty). Deterministic for a
/// given cfg.seed.
TrainResult train(std::span<const LabeledExample> train_set, std::span<const LabeledExample> dev_set,
                  const TrainConfig& cfg, PoolMode mode, TaskKind task, const PertWindowBank& bank);

// ---------------------------------------------------------------------------
// Gradient checking

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::array<double, Parameters::kGroupCount> group_rel_error{};
  std::array<double, Parameters::kGroupCount> group_abs_error{};
};

/// Denominator floor of the relative error: |a - n| / max(|a|, |n|, floor).
/// Below the floor the check is effectively absolute.
inline constexpr double kGradCheckFloor = 1e-4;

/// Compares the analytic gradient of the example loss against central finite
/// differences (step epsilon) for every parameter.
GradCheckReport grad_check(const PoolerModel& model, const LabeledExample& example,
                           const PertWindowBank& bank, double epsilon = 1e-5);

// ---------------------------------------------------------------------------

/// Applies a frozen model to each language's examples and reports accuracy
/// (exact label-set match for multilabel models). Throws ValidationError on
/// dim mismatch.
std::map<std::string, double> zero_shot_eval(
    const PoolerModel& model, const std::map<std::string, std::vector<LabeledExample>>& eval_sets,
    const PertWindowBank& bank);

// ---------------------------------------------------------------------------
// Checkpoints: "DPML" | u32 version | u32 d, J, H, C, mode, task | f64 gamma |
// u32 resolution | C labels (u32 length + UTF-8 bytes) | f64 parameter blocks
// in Parameters order.

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_model(std::ostream& out, const PoolerModel& model);
PoolerModel load_model(std::istream& in);
void save_model_file(const std::filesystem::path& path, const PoolerModel& model);
PoolerModel load_model_file(const std::filesystem::path& path);

}  // namespace docpool
