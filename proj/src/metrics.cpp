#include "drtl/metrics.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <stdexcept>

namespace drtl {

double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> golds) {
  if (predictions.size() != golds.size()) throw std::invalid_argument("accuracy: predictions and golds differ in length");
  if (predictions.empty()) throw std::invalid_argument("accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < golds.size(); ++i) hits += predictions[i] == golds[i];
  return static_cast<double>(hits) / static_cast<double>(golds.size());
}

double auc(std::span<const double> scores, std::span<const int> golds) {
  if (scores.size() != golds.size()) throw std::invalid_argument("auc: scores and golds differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of positive ranks with tied groups sharing their average rank.
  // Ranks are kept doubled so that averages stay integral.
  unsigned long long rank_sum2 = 0, positives = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const unsigned long long avg2 = (i + 1) + j;  // 2 * mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t) {
      if (golds[order[t]] == 1) {
        rank_sum2 += avg2;
        ++positives;
      }
    }
    i = j;
  }
  const unsigned long long negatives = n - positives;
  if (positives == 0 || negatives == 0) {
    throw std::invalid_argument("auc: undefined without both positive and negative examples");
  }
  // U = R_pos - P(P+1)/2 ; doubled form keeps it in exact integers
  const unsigned long long u2 = rank_sum2 - positives * (positives + 1);
  return static_cast<double>(u2) / (2.0 * static_cast<double>(positives) * static_cast<double>(negatives));
}

RankAt1 rank_at_1(std::span<const ScoredPair> pairs, double threshold) {
  struct Group {
    const ScoredPair* top = nullptr;
    bool has_positive = false;
  };
  std::map<std::string, Group> groups;
  for (const ScoredPair& p : pairs) {
    Group& g = groups[p.query_id];
    g.has_positive = g.has_positive || p.gold == 1;
    if (!g.top || p.score > g.top->score || (p.score == g.top->score && p.candidate_id < g.top->candidate_id)) {
      g.top = &p;
    }
  }
  if (groups.empty()) throw std::invalid_argument("rank_at_1: no query groups");
  RankAt1 r;
  r.queries = groups.size();
  for (const auto& [id, g] : groups) {
    r.answerable += g.has_positive;
    if (g.top->score >= threshold) {
      ++r.answered;
      r.correct += g.top->gold == 1;
    }
  }
  r.precision = r.answered ? static_cast<double>(r.correct) / static_cast<double>(r.answered) : 0.0;
  r.recall = r.answerable ? static_cast<double>(r.correct) / static_cast<double>(r.answerable) : 0.0;
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

}  // namespace drtl
