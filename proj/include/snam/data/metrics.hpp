#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "snam/error.hpp"

namespace snam::data {

inline double rmse(std::span<const double> predictions, std::span<const double> targets) {
  if (predictions.size() != targets.size()) throw Error(ErrorCode::dimension_mismatch, "rmse: length mismatch");
  if (predictions.empty()) throw Error(ErrorCode::too_few_rows, "rmse of an empty set");
  double ss = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) ss += (predictions[i] - targets[i]) * (predictions[i] - targets[i]);
  return std::sqrt(ss / static_cast<double>(targets.size()));
}

/// Normalized Mann-Whitney U from mid-ranks, so tied scores count one half.
inline double auc(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) throw Error(ErrorCode::dimension_mismatch, "auc: length mismatch");
  std::size_t pos = 0;
  for (double l : labels) {
    if (l != 0.0 && l != 1.0) throw Error(ErrorCode::non_binary_target, "auc labels must be 0 or 1");
    pos += l == 1.0 ? 1 : 0;
  }
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw Error(ErrorCode::single_class_auc, "auc needs both classes present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j + 1);  // 1-based mid-rank
    for (std::size_t t = i; t < j; ++t) rank_sum += labels[order[t]] == 1.0 ? mid : 0.0;
    i = j;
  }
  const double p = static_cast<double>(pos);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

}  // namespace snam::data
