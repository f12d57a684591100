#include <cmath>
#include <cstdio>
#include <random>
#include <stdexcept>

#include "doctest.h"
#include "drtl/metrics.hpp"
#include "drtl/parameter.hpp"

using namespace drtl;

namespace {

// fraction of positive/negative pairs ordered correctly, ties counted as half
double auc_pairwise(const std::vector<double>& s, const std::vector<int>& y) {
  double good = 0.0, total = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      total += 1.0;
      good += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  return good / total;
}

}  // namespace

TEST_SUITE("accuracy") {
  TEST_CASE("fraction of matching labels") {
    const std::vector<std::size_t> p = {1, 0, 1, 1}, g = {1, 1, 1, 0};
    CHECK(accuracy(p, g) == 0.5);
    CHECK_THROWS_AS(accuracy(std::vector<std::size_t>{}, std::vector<std::size_t>{}), std::invalid_argument);
    CHECK_THROWS_AS(accuracy(p, std::vector<std::size_t>{1}), std::invalid_argument);
  }
}

TEST_SUITE("auc") {
  TEST_CASE("hand examples") {
    CHECK(auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1}) == 0.75);
    CHECK(auc(std::vector<double>{0.5, 0.5}, std::vector<int>{0, 1}) == 0.5);
    CHECK(auc(std::vector<double>{0.9, 0.1}, std::vector<int>{1, 0}) == 1.0);
    CHECK(auc(std::vector<double>{0.9, 0.1}, std::vector<int>{0, 1}) == 0.0);
  }

  TEST_CASE("undefined with a single class") {
    CHECK_THROWS_AS(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), std::invalid_argument);
    CHECK_THROWS_AS(auc(std::vector<double>{}, std::vector<int>{}), std::invalid_argument);
  }

  TEST_CASE("matches the pairwise definition exactly, ties included") {
    Rng rng(21);
    std::uniform_int_distribution<int> coarse(0, 9), label(0, 1);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t n = 2 + trial % 40;
      std::vector<double> s(n);
      std::vector<int> y(n);
      for (std::size_t i = 0; i < n; ++i) {
        s[i] = coarse(rng) / 10.0;
        y[i] = label(rng);
      }
      y[0] = 0;
      y[1] = 1;
      CHECK(auc(s, y) == auc_pairwise(s, y));
    }
  }

  TEST_CASE("invariant under strictly increasing transforms") {
    Rng rng(22);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    std::uniform_int_distribution<int> label(0, 1);
    std::vector<double> s(300), t(300);
    std::vector<int> y(300);
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i] = std::round(u(rng) * 4.0) / 4.0;
      t[i] = std::exp(2.0 * s[i]) + 7.0;
      y[i] = label(rng);
    }
    CHECK(auc(s, y) == auc(t, y));
  }
}

TEST_SUITE("rank at 1") {
  TEST_CASE("answer, abstain and unanswerable queries") {
    const std::vector<ScoredPair> pairs = {
        {"q1", "a", 0.9, 1}, {"q1", "b", 0.2, 0},  // answered correctly
        {"q2", "a", 0.7, 0}, {"q2", "b", 0.6, 1},  // answered wrongly
        {"q3", "a", 0.3, 1}, {"q3", "b", 0.1, 0},  // abstains, answerable
        {"q4", "a", 0.8, 0},                       // answered, not answerable
    };
    const RankAt1 r = rank_at_1(pairs, 0.5);
    CHECK(r.queries == 4);
    CHECK(r.answered == 3);
    CHECK(r.correct == 1);
    CHECK(r.answerable == 3);
    CHECK(r.precision == doctest::Approx(1.0 / 3.0));
    CHECK(r.recall == doctest::Approx(1.0 / 3.0));
    CHECK(r.f1 == doctest::Approx(1.0 / 3.0));
  }

  TEST_CASE("ties go to the smallest candidate id") {
    const std::vector<ScoredPair> pairs = {{"q", "c2", 0.6, 0}, {"q", "c1", 0.6, 1}, {"q", "c3", 0.6, 0}};
    CHECK(rank_at_1(pairs).correct == 1);
  }

  TEST_CASE("nothing answered gives zero precision and f1") {
    const std::vector<ScoredPair> pairs = {{"q", "a", 0.1, 1}};
    const RankAt1 r = rank_at_1(pairs);
    CHECK(r.precision == 0.0);
    CHECK(r.f1 == 0.0);
    CHECK_THROWS_AS(rank_at_1(std::vector<ScoredPair>{}), std::invalid_argument);
  }

  TEST_CASE("fifty-query fixture against a direct count") {
    Rng rng(23);
    std::uniform_int_distribution<int> scores(0, 20), label(0, 3), count(1, 6);
    std::vector<ScoredPair> pairs;
    std::size_t answered = 0, correct = 0, answerable = 0;
    for (int q = 0; q < 50; ++q) {
      char qid[16];
      std::snprintf(qid, sizeof qid, "q%02d", q);
      const int n = count(rng);
      double best = -1.0;
      int best_gold = 0;
      bool has_pos = false;
      for (int c = 0; c < n; ++c) {
        const double s = scores(rng) / 20.0;
        const int g = label(rng) == 0 ? 1 : 0;
        has_pos = has_pos || g == 1;
        // candidates are generated in id order, so the first maximum wins ties
        if (s > best) {
          best = s;
          best_gold = g;
        }
        pairs.push_back({qid, "c" + std::to_string(c), s, g});
      }
      answerable += has_pos;
      if (best >= 0.5) {
        ++answered;
        correct += best_gold == 1;
      }
    }
    std::shuffle(pairs.begin(), pairs.end(), rng);
    const RankAt1 r = rank_at_1(pairs, 0.5);
    CHECK(r.queries == 50);
    CHECK(r.answered == answered);
    CHECK(r.correct == correct);
    CHECK(r.answerable == answerable);
  }
}
