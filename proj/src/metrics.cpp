#include "docpool/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <iomanip>

#include "docpool/error.hpp"

namespace docpool {

double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> gold) {
  if (predicted.size() != gold.size()) throw ValidationError("accuracy: size mismatch");
  if (gold.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hits += predicted[i] == gold[i];
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

double F1Counts::f1() const noexcept {
  const std::size_t denom = 2 * true_pos + false_pos + false_neg;
  if (denom == 0) return 1.0;
  return 2.0 * static_cast<double>(true_pos) / static_cast<double>(denom);
}

F1Counts micro_f1_counts(std::span<const std::vector<std::size_t>> predicted,
                         std::span<const std::vector<std::size_t>> gold,
                         std::span<const std::size_t> restrict_to) {
  if (predicted.size() != gold.size()) throw ValidationError("micro_f1: size mismatch");
  const auto counted = [&](std::size_t label) {
    return restrict_to.empty() ||
           std::find(restrict_to.begin(), restrict_to.end(), label) != restrict_to.end();
  };
  F1Counts c;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const auto& p = predicted[i];
    const auto& g = gold[i];
    for (const auto label : p) {
      if (!counted(label)) continue;
      if (std::find(g.begin(), g.end(), label) != g.end()) {
        ++c.true_pos;
      } else {
        ++c.false_pos;
      }
    }
    for (const auto label : g) {
      if (counted(label) && std::find(p.begin(), p.end(), label) == p.end()) ++c.false_neg;
    }
  }
  return c;
}

double micro_f1(std::span<const std::vector<std::size_t>> predicted,
                std::span<const std::vector<std::size_t>> gold,
                std::span<const std::size_t> restrict_to) {
  return micro_f1_counts(predicted, gold, restrict_to).f1();
}

double sorted_quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw ValidationError("quantile of an empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

ConfidenceInterval bootstrap_ci(const ResampleMetric& metric, std::size_t n_items,
                                std::size_t n_samples, double level, std::uint64_t seed) {
  if (n_items == 0) throw ValidationError("bootstrap needs at least one item");
  if (n_samples < 100) throw ValidationError("bootstrap needs at least 100 resamples");
  if (!(level > 0.0 && level < 1.0)) throw ValidationError("confidence level must be in (0, 1)");

  std::vector<std::size_t> indices(n_items);
  std::iota(indices.begin(), indices.end(), std::size_t{0});
  ConfidenceInterval ci;
  ci.point = metric(indices);

  std::mt19937_64 rng(seed);
  std::vector<double> values;
  values.reserve(n_samples);
  for (std::size_t b = 0; b < n_samples; ++b) {
    for (auto& idx : indices) idx = static_cast<std::size_t>(rng() % n_items);
    values.push_back(metric(indices));
  }
  std::sort(values.begin(), values.end());
  const double tail = (1.0 - level) / 2.0;
  ci.lower_delta = ci.point - sorted_quantile(values, tail);
  ci.upper_delta = sorted_quantile(values, 1.0 - tail) - ci.point;
  return ci;
}

std::string format_ci(const ConfidenceInterval& ci, double scale, int precision) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(precision) << ci.point * scale << "^{+"
      << ci.upper_delta * scale << "}_{-" << ci.lower_delta * scale << "}";
  return out.str();
}

}  // namespace docpool
