#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "drtl/model.hpp"

namespace drtl {

struct KbEntry {
  std::string id;
  std::string question;
  std::string answer;
};

/// UTF-8 TSV `id<TAB>question<TAB>answer`. Blank lines are skipped.
std::vector<KbEntry> read_kb_tsv(const std::filesystem::path& path);
void write_kb_tsv(const std::filesystem::path& path, const std::vector<KbEntry>& kb);

struct Posting {
  std::uint32_t doc = 0;
  std::uint32_t count = 0;
};

/// TF-IDF index over KB questions. Term weight is (1 + ln count) * idf with
/// idf = ln((N + 1) / (df + 1)) + 1; documents are scored by cosine.
/// Immutable after construction.
class InvertedIndex {
 public:
  InvertedIndex() = default;

  /// Throws DataError on duplicate ids, empty ids or questions without tokens.
  static InvertedIndex build(std::vector<KbEntry> kb);

  std::size_t doc_count() const { return docs_.size(); }
  const KbEntry& doc(std::size_t i) const { return docs_.at(i); }
  const std::vector<KbEntry>& docs() const { return docs_; }
  /// Postings of `term` sorted by doc, or an empty list.
  const std::vector<Posting>& postings(const std::string& term) const;
  std::size_t df(const std::string& term) const { return postings(term).size(); }
  double idf(const std::string& term) const;
  /// L2 norm of the document's tf-idf vector.
  double norm(std::size_t doc) const { return norms_.at(doc); }
  std::size_t term_count() const { return postings_.size(); }

  /// Text format: header, the KB entries, then one posting line per term.
  void save(const std::filesystem::path& path) const;
  static InvertedIndex load(const std::filesystem::path& path);

 private:
  void finalize();

  std::vector<KbEntry> docs_;
  std::map<std::string, std::vector<Posting>> postings_;
  std::vector<double> norms_;
};

inline InvertedIndex build_index(std::vector<KbEntry> kb) { return InvertedIndex::build(std::move(kb)); }

double tf_weight(std::size_t count);

struct Candidate {
  std::size_t doc = 0;
  double score = 0.0;
};

/// Cosine of the query and document tf-idf vectors, descending, ties by KB id.
/// Query terms missing from the index are dropped; a query without indexed
/// terms returns nothing.
std::vector<Candidate> tfidf_topk(const InvertedIndex& index, std::string_view query, std::size_t k = 30);

struct BlendWeights {
  double model_prob = 0.8;
  double emb_cosine = 0.1;
  double token_overlap = 0.1;
};

struct RetrievalConfig {
  std::size_t k = 30;
  BlendWeights weights;
  /// Tokens ignored by token_overlap.
  std::set<std::string> stopwords;
  /// Best blended score below this gives no answer.
  double answer_threshold = 0.5;
  /// Output head used for the matcher probability.
  Domain domain = Domain::target;

  void validate() const;
};

/// One token per line, lowercased like the tokenizer. '#' starts a comment.
std::set<std::string> read_stopwords(const std::filesystem::path& path);

/// Frozen matcher used by the reranker.
class Matcher {
 public:
  explicit Matcher(const Model& model);

  /// Positive-class probability for the pair on the given domain's head.
  double paraphrase_prob(std::string_view a, std::string_view b, Domain domain) const;
  /// Cosine of the mean embedding rows of the in-vocabulary tokens of the two
  /// texts, clamped to [0, 1]. Zero mean vectors (no known tokens) give 0.
  double embedding_cosine(std::string_view a, std::string_view b) const;

 private:
  std::vector<double> mean_embedding(std::string_view text) const;

  Vocabulary vocab_;
  ModelWeights<double> weights_;
};

/// Jaccard similarity of the non-stopword token sets; 0 when both are empty.
double token_overlap(std::string_view a, std::string_view b, const std::set<std::string>& stopwords);

struct CandidateTrace {
  std::string candidate_id;
  double tfidf = 0.0;
  double model_prob = 0.0;
  double emb_cosine = 0.0;
  double token_overlap = 0.0;
  double blend = 0.0;
};

/// `candidate_id, tfidf, model_prob, emb_cosine, token_overlap, blend` with six decimals.
std::string format_trace(const CandidateTrace& t);
std::string trace_header();

struct RerankResult {
  /// Index into `trace` of the winner; empty when there were no candidates.
  std::optional<std::size_t> best;
  /// One entry per candidate, ordered by blend descending then candidate id.
  std::vector<CandidateTrace> trace;
};

RerankResult rerank(std::string_view query, std::span<const Candidate> candidates, const InvertedIndex& index,
                    const Matcher& matcher, const RetrievalConfig& config);

inline constexpr std::string_view kNoAnswer = "no answer";

struct AnswerResult {
  bool answered = false;
  /// The answer text, or kNoAnswer.
  std::string answer;
  std::string candidate_id;
  double score = 0.0;
  std::vector<CandidateTrace> trace;
};

/// Recall with tfidf_topk, rerank, then apply the answer threshold.
AnswerResult answer(std::string_view query, const InvertedIndex& index, const Matcher& matcher,
                    const RetrievalConfig& config);

}  // namespace drtl
