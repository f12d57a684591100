#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "drtl/retrieval.hpp"

namespace drtl::testing {

struct ScoredDoc {
  std::string id;
  double score = 0.0;
};

/// Dense tf-idf cosine over every KB question, recomputed from the raw text.
inline std::vector<ScoredDoc> brute_force_cosine(const std::vector<KbEntry>& kb, const std::string& query) {
  std::vector<std::map<std::string, double>> counts;
  std::map<std::string, double> df;
  for (const KbEntry& e : kb) {
    std::map<std::string, double> c;
    for (const std::string& t : tokenize(e.question)) c[t] += 1.0;
    for (const auto& kv : c) df[kv.first] += 1.0;
    counts.push_back(c);
  }
  const double n = static_cast<double>(kb.size());
  auto vec = [&](const std::map<std::string, double>& c) {
    std::map<std::string, double> v;
    for (const auto& [t, k] : c) {
      if (!df.count(t)) continue;
      v[t] = (1.0 + std::log(k)) * (std::log((n + 1.0) / (df[t] + 1.0)) + 1.0);
    }
    return v;
  };
  std::map<std::string, double> qc;
  for (const std::string& t : tokenize(query)) qc[t] += 1.0;
  const auto q = vec(qc);
  double qn = 0.0;
  for (const auto& kv : q) qn += kv.second * kv.second;
  std::vector<ScoredDoc> out;
  for (std::size_t d = 0; d < kb.size(); ++d) {
    const auto v = vec(counts[d]);
    double dot = 0.0, vn = 0.0;
    for (const auto& [t, w] : v) {
      vn += w * w;
      if (q.count(t)) dot += w * q.at(t);
    }
    if (dot > 0.0) out.push_back({kb[d].id, dot / std::sqrt(qn * vn)});
  }
  std::sort(out.begin(), out.end(), [](const ScoredDoc& a, const ScoredDoc& b) {
    return a.score != b.score ? a.score > b.score : a.id < b.id;
  });
  return out;
}

struct AuditedQuery {
  std::string query;
  std::string top;  // "-" when recall is empty
  std::string answer;
};

inline std::vector<AuditedQuery> read_audited_queries(const std::string& path) {
  std::ifstream in(path);
  std::vector<AuditedQuery> out;
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line[0] == '#') continue;
    const auto a = line.find('\t'), b = line.find('\t', a + 1);
    out.push_back({line.substr(0, a), line.substr(a + 1, b - a - 1), line.substr(b + 1)});
  }
  return out;
}

/// Blend used by the audited fixture: token overlap only, no stopwords.
inline RetrievalConfig audited_config() {
  RetrievalConfig c;
  c.weights = {0.0, 0.0, 1.0};
  return c;
}

}  // namespace drtl::testing

namespace drtl::testing {

/// True when `got` lists the same documents as `want` with scores within `tol`.
/// Documents whose oracle scores agree to 1e-12 may appear in either order.
inline bool same_ranking(const InvertedIndex& index, const std::vector<Candidate>& got,
                         const std::vector<ScoredDoc>& want, double tol, std::string* why = nullptr) {
  auto fail = [&](const std::string& m) {
    if (why) *why = m;
    return false;
  };
  if (got.size() != want.size()) {
    return fail("length " + std::to_string(got.size()) + " vs " + std::to_string(want.size()));
  }
  for (std::size_t i = 0; i < got.size();) {
    std::size_t j = i + 1;
    while (j < want.size() && std::abs(want[j].score - want[i].score) < 1e-12) ++j;
    std::vector<std::string> a, b;
    for (std::size_t t = i; t < j; ++t) {
      if (std::abs(got[t].score - want[t].score) >= tol) return fail("score at rank " + std::to_string(t + 1));
      a.push_back(index.doc(got[t].doc).id);
      b.push_back(want[t].id);
    }
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a != b) return fail("documents at ranks " + std::to_string(i + 1) + ".." + std::to_string(j));
    i = j;
  }
  return true;
}

}  // namespace drtl::testing
