#pragma once

#include <span>
#include <string>
#include <vector>

namespace drtl {

/// Fraction of positions where prediction and gold agree.
double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> golds);

/// Mann-Whitney AUC (ties count one half) via average ranks, O(n log n).
/// Throws std::invalid_argument unless both classes are present.
double auc(std::span<const double> scores, std::span<const int> golds);

struct ScoredPair {
  std::string query_id;
  std::string candidate_id;
  double score = 0.0;  // probability of the positive class
  int gold = 0;
};

struct RankAt1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t queries = 0;
  std::size_t answered = 0;
  std::size_t correct = 0;
  std::size_t answerable = 0;  // queries with at least one gold-positive candidate
};

/// A query is answered when its top candidate (highest score, ties to the
/// smallest candidate_id) scores at least `threshold`.
RankAt1 rank_at_1(std::span<const ScoredPair> pairs, double threshold = 0.5);

}  // namespace drtl
