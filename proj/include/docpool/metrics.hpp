#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace docpool {

/// Fraction of positions where predicted == gold. Sizes must match; empty → 0.
double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> gold);

struct F1Counts {
  std::size_t true_pos = 0;
  std::size_t false_pos = 0;
  std::size_t false_neg = 0;

  /// 2TP / (2TP + FP + FN); 1.0 when there is nothing to predict and nothing
  /// was predicted.
  double f1() const noexcept;
};

/// Micro-averaged F1 over label sets. When `restrict_to` is non-empty only
/// those label ids are counted.
F1Counts micro_f1_counts(std::span<const std::vector<std::size_t>> predicted,
                         std::span<const std::vector<std::size_t>> gold,
                         std::span<const std::size_t> restrict_to = {});
double micro_f1(std::span<const std::vector<std::size_t>> predicted,
                std::span<const std::vector<std::size_t>> gold,
                std::span<const std::size_t> restrict_to = {});

/// Point estimate with percentile-bootstrap deltas, reported as
/// point^{+upper_delta}_{-lower_delta}.
struct ConfidenceInterval {
  double point = 0.0;
  double lower_delta = 0.0;
  double upper_delta = 0.0;

  double low() const noexcept { return point - lower_delta; }
  double high() const noexcept { return point + upper_delta; }
};

/// Evaluates a metric on a resample, given as item indices (with repeats).
using ResampleMetric = std::function<double(std::span<const std::size_t>)>;

/// Percentile bootstrap: draws `n_samples` resamples of [0, n_items) with
/// replacement, evaluates `metric` on each and takes the (1-level)/2 and
/// (1+level)/2 quantiles (linear interpolation between order statistics).
/// The point estimate is the metric on the full item set. Deterministic for a
/// given seed. Requires n_samples >= 100 and n_items > 0.
ConfidenceInterval bootstrap_ci(const ResampleMetric& metric, std::size_t n_items,
                                std::size_t n_samples, double level = 0.95,
                                std::uint64_t seed = 0);

/// Linear-interpolated quantile of sorted values, q in [0, 1].
double sorted_quantile(std::span<const double> sorted, double q);

/// "96.4^{+0.6}_{-0.5}" with values scaled by `scale` (100 for percentages).
std::string format_ci(const ConfidenceInterval& ci, double scale = 100.0, int precision = 1);

}  // namespace docpool
