#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "docpool/weighting.hpp"

namespace docpool::cli {

/// Stable process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitIo = 2;

struct RunConfig {
  std::string subcommand;
  std::filesystem::path manifest;
  std::filesystem::path embeddings;
  std::filesystem::path out;
  std::filesystem::path model;
  std::filesystem::path gold;
  std::filesystem::path predictions;
  std::filesystem::path dump_weights;

  std::string strategy = "sentence-average";
  TfVariant tf_variant = TfVariant::kTf4;
  std::size_t pert_j = 16;
  double pert_gamma = 20.0;
  std::size_t pert_resolution = 1024;
  bool boilerplate = false;
  std::size_t pca_dim = 128;  // 0 disables; no-op when the input dim is not larger
  std::size_t topk = 32;
  std::size_t bootstrap_samples = 1000;
  std::uint64_t seed = 0;

  // train
  std::string task = "multiclass";
  std::string optimizer = "adam";
  double learning_rate = 1e-3;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  std::size_t patience = 5;
  std::size_t hidden = 10;

  // eval
  std::string split = "test";

  // align
  std::string src_lang;
  std::string tgt_lang;
  std::string index = "exact";
  std::size_t ivf_lists = 16;
  std::size_t ivf_probe = 0;
};

/// Composes one vector per document (or writes `.ranges.jsonl` for excerpt
/// strategies).
int cmd_compose(const RunConfig& cfg, std::ostream& log);
/// Fits PCA on the training split and writes reduced sentence embeddings.
int cmd_reduce(const RunConfig& cfg, std::ostream& log);
/// Trains a pooling + classifier model; writes checkpoint and metrics JSON.
int cmd_train(const RunConfig& cfg, std::ostream& log);
/// Scores a model or a predictions file against manifest labels.
int cmd_eval(const RunConfig& cfg, std::ostream& log);
/// Aligns two language collections and reports recall against gold pairs.
int cmd_align(const RunConfig& cfg, std::ostream& log);
/// Document counts and tokenised lengths per language and split.
int cmd_stats(const RunConfig& cfg, std::ostream& log);

/// Parses argv, dispatches, and maps errors to exit codes.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace docpool::cli
