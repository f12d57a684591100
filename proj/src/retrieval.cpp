#include "drtl/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "drtl/error.hpp"

namespace drtl {

namespace fs = std::filesystem;

namespace {

constexpr const char* kIndexMagic = "drtl-index 1";

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, '\t')) out.push_back(cur);
  if (!line.empty() && line.back() == '\t') out.emplace_back();
  return out;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

bool clean_field(const std::string& s) { return s.find_first_of("\t\n\r") == std::string::npos; }

std::map<std::string, std::size_t> term_counts(std::string_view text) {
  std::map<std::string, std::size_t> counts;
  for (std::string& t : tokenize(text)) ++counts[std::move(t)];
  return counts;
}

}  // namespace

std::vector<KbEntry> read_kb_tsv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open knowledge base " + path.string());
  std::vector<KbEntry> kb;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    auto f = split_tabs(line);
    if (f.size() != 3) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 3 tab-separated fields, found " +
                      std::to_string(f.size()));
    }
    kb.push_back({std::move(f[0]), std::move(f[1]), std::move(f[2])});
  }
  return kb;
}

void write_kb_tsv(const fs::path& path, const std::vector<KbEntry>& kb) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write knowledge base " + path.string());
  for (const KbEntry& e : kb) {
    if (!clean_field(e.id) || !clean_field(e.question) || !clean_field(e.answer)) {
      throw DataError("knowledge base entry '" + e.id + "' contains a tab or newline");
    }
    out << e.id << '\t' << e.question << '\t' << e.answer << '\n';
  }
}

// ---------------------------------------------------------------------------

double tf_weight(std::size_t count) { return 1.0 + std::log(static_cast<double>(count)); }

InvertedIndex InvertedIndex::build(std::vector<KbEntry> kb) {
  InvertedIndex index;
  std::set<std::string> ids;
  for (std::size_t d = 0; d < kb.size(); ++d) {
    const KbEntry& e = kb[d];
    if (e.id.empty()) throw DataError("knowledge base entry " + std::to_string(d + 1) + " has an empty id");
    if (!ids.insert(e.id).second) throw DataError("duplicate knowledge base id '" + e.id + "'");
    const auto counts = term_counts(e.question);
    if (counts.empty()) throw DataError("knowledge base entry '" + e.id + "' has an empty question");
    for (const auto& [term, c] : counts) {
      index.postings_[term].push_back({static_cast<std::uint32_t>(d), static_cast<std::uint32_t>(c)});
    }
  }
  index.docs_ = std::move(kb);
  index.finalize();
  return index;
}

void InvertedIndex::finalize() {
  norms_.assign(docs_.size(), 0.0);
  for (const auto& [term, list] : postings_) {
    const double w_idf = idf(term);
    for (const Posting& p : list) {
      const double w = tf_weight(p.count) * w_idf;
      norms_[p.doc] += w * w;
    }
  }
  for (double& n : norms_) n = std::sqrt(n);
}

const std::vector<Posting>& InvertedIndex::postings(const std::string& term) const {
  static const std::vector<Posting> none;
  const auto it = postings_.find(term);
  return it == postings_.end() ? none : it->second;
}

double InvertedIndex::idf(const std::string& term) const {
  const double n = static_cast<double>(docs_.size());
  return std::log((n + 1.0) / (static_cast<double>(df(term)) + 1.0)) + 1.0;
}

void InvertedIndex::save(const fs::path& path) const {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw DataError("cannot write index " + tmp.string());
    out << kIndexMagic << '\n' << "docs " << docs_.size() << '\n';
    for (const KbEntry& e : docs_) out << e.id << '\t' << e.question << '\t' << e.answer << '\n';
    out << "terms " << postings_.size() << '\n';
    for (const auto& [term, list] : postings_) {
      out << term;
      for (const Posting& p : list) out << ' ' << p.doc << ':' << p.count;
      out << '\n';
    }
    if (!out) throw DataError("write failed for index " + tmp.string());
  }
  fs::rename(tmp, path);
}

InvertedIndex InvertedIndex::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open index " + path.string());
  const std::string where = "index " + path.string();
  std::string line;
  if (!std::getline(in, line) || line != kIndexMagic) throw DataError(where + ": not an index file (bad header)");

  auto read_count = [&](const char* key) {
    if (!std::getline(in, line)) throw DataError(where + ": truncated before '" + key + "'");
    std::istringstream ls(line);
    std::string k;
    std::size_t n = 0;
    if (!(ls >> k >> n) || k != key) throw DataError(where + ": expected '" + key + " <count>', got '" + line + "'");
    return n;
  };

  std::vector<KbEntry> kb;
  const std::size_t n_docs = read_count("docs");
  for (std::size_t d = 0; d < n_docs; ++d) {
    if (!std::getline(in, line)) throw DataError(where + ": truncated in documents");
    strip_cr(line);
    auto f = split_tabs(line);
    if (f.size() != 3) throw DataError(where + ": malformed document line " + std::to_string(d + 1));
    kb.push_back({std::move(f[0]), std::move(f[1]), std::move(f[2])});
  }
  // the postings are rebuilt from the documents and must agree with the stored ones
  InvertedIndex index = build(std::move(kb));
  const std::size_t n_terms = read_count("terms");
  if (n_terms != index.postings_.size()) throw DataError(where + ": term count does not match the documents");
  for (std::size_t t = 0; t < n_terms; ++t) {
    if (!std::getline(in, line)) throw DataError(where + ": truncated in postings");
    std::istringstream ls(line);
    std::string term;
    ls >> term;
    const auto& want = index.postings(term);
    std::vector<Posting> got;
    for (std::string item; ls >> item;) {
      unsigned long doc = 0, count = 0;
      if (std::sscanf(item.c_str(), "%lu:%lu", &doc, &count) != 2) {
        throw DataError(where + ": malformed posting '" + item + "' for term '" + term + "'");
      }
      got.push_back({static_cast<std::uint32_t>(doc), static_cast<std::uint32_t>(count)});
    }
    const bool same = got.size() == want.size() &&
                      std::equal(got.begin(), got.end(), want.begin(), [](const Posting& a, const Posting& b) {
                        return a.doc == b.doc && a.count == b.count;
                      });
    if (!same) throw DataError(where + ": postings of term '" + term + "' do not match the documents");
  }
  if (std::getline(in, line)) throw DataError(where + ": trailing content after postings");
  return index;
}

// ---------------------------------------------------------------------------

std::vector<Candidate> tfidf_topk(const InvertedIndex& index, std::string_view query, std::size_t k) {
  if (k == 0) throw ConfigError("tfidf_topk: k must be >= 1");
  std::map<std::size_t, double> dots;
  double q_norm2 = 0.0;
  for (const auto& [term, c] : term_counts(query)) {
    const auto& list = index.postings(term);
    if (list.empty()) continue;
    const double w_idf = index.idf(term);
    const double qw = tf_weight(c) * w_idf;
    q_norm2 += qw * qw;
    for (const Posting& p : list) dots[p.doc] += qw * tf_weight(p.count) * w_idf;
  }
  std::vector<Candidate> out;
  if (dots.empty()) return out;
  const double q_norm = std::sqrt(q_norm2);
  for (const auto& [doc, dot] : dots) out.push_back({doc, std::clamp(dot / (q_norm * index.norm(doc)), 0.0, 1.0)});
  std::sort(out.begin(), out.end(), [&](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return index.doc(a.doc).id < index.doc(b.doc).id;
  });
  if (out.size() > k) out.resize(k);
  return out;
}

// ---------------------------------------------------------------------------

void RetrievalConfig::validate() const {
  if (k == 0) throw ConfigError("k must be >= 1");
  for (double w : {weights.model_prob, weights.emb_cosine, weights.token_overlap}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("blend weights must be finite and >= 0");
  }
  if (!std::isfinite(answer_threshold)) throw ConfigError("answer_threshold must be finite");
}

std::set<std::string> read_stopwords(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open stopword file " + path.string());
  std::set<std::string> out;
  for (std::string line; std::getline(in, line);) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    for (std::string& t : tokenize(line)) out.insert(std::move(t));
  }
  return out;
}

Matcher::Matcher(const Model& model) : vocab_(model.vocab()), weights_(ModelWeights<double>::from(model)) {}

double Matcher::paraphrase_prob(std::string_view a, std::string_view b, Domain domain) const {
  const auto p = weights_.predict(encode_tokens(a, vocab_), encode_tokens(b, vocab_), domain);
  return p.size() > 1 ? p[1] : 0.0;
}

std::vector<double> Matcher::mean_embedding(std::string_view text) const {
  const std::size_t l = weights_.embeddings.dim(1);
  std::vector<double> mean(l, 0.0);
  // unknown tokens would all share the UNK row and make unrelated texts look identical
  std::size_t known = 0;
  for (int id : encode_tokens(text, vocab_)) {
    if (id == Vocabulary::unk_id) continue;
    ++known;
    for (std::size_t j = 0; j < l; ++j) mean[j] += weights_.embeddings.at(static_cast<std::size_t>(id), j);
  }
  if (known)
    for (double& v : mean) v /= static_cast<double>(known);
  return mean;
}

double Matcher::embedding_cosine(std::string_view a, std::string_view b) const {
  const auto u = mean_embedding(a), v = mean_embedding(b);
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    dot += u[j] * v[j];
    nu += u[j] * u[j];
    nv += v[j] * v[j];
  }
  if (nu == 0.0 || nv == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), 0.0, 1.0);
}

double token_overlap(std::string_view a, std::string_view b, const std::set<std::string>& stopwords) {
  auto content = [&](std::string_view text) {
    std::set<std::string> s;
    for (std::string& t : tokenize(text))
      if (!stopwords.count(t)) s.insert(std::move(t));
    return s;
  };
  const auto sa = content(a), sb = content(b);
  std::size_t shared = 0;
  for (const std::string& t : sa) shared += sb.count(t);
  const std::size_t uni = sa.size() + sb.size() - shared;
  return uni == 0 ? 0.0 : static_cast<double>(shared) / static_cast<double>(uni);
}

std::string trace_header() { return "candidate_id, tfidf, model_prob, emb_cosine, token_overlap, blend"; }

std::string format_trace(const CandidateTrace& t) {
  char buf[160];
  std::snprintf(buf, sizeof buf, ", %.6f, %.6f, %.6f, %.6f, %.6f", t.tfidf, t.model_prob, t.emb_cosine,
                t.token_overlap, t.blend);
  return t.candidate_id + buf;
}

RerankResult rerank(std::string_view query, std::span<const Candidate> candidates, const InvertedIndex& index,
                    const Matcher& matcher, const RetrievalConfig& config) {
  config.validate();
  RerankResult r;
  const BlendWeights& w = config.weights;
  for (const Candidate& c : candidates) {
    const KbEntry& e = index.doc(c.doc);
    CandidateTrace t;
    t.candidate_id = e.id;
    t.tfidf = c.score;
    t.model_prob = std::clamp(matcher.paraphrase_prob(query, e.question, config.domain), 0.0, 1.0);
    t.emb_cosine = matcher.embedding_cosine(query, e.question);
    t.token_overlap = token_overlap(query, e.question, config.stopwords);
    t.blend = w.model_prob * t.model_prob + w.emb_cosine * t.emb_cosine + w.token_overlap * t.token_overlap;
    r.trace.push_back(std::move(t));
  }
  std::sort(r.trace.begin(), r.trace.end(), [](const CandidateTrace& a, const CandidateTrace& b) {
    if (a.blend != b.blend) return a.blend > b.blend;
    return a.candidate_id < b.candidate_id;
  });
  if (!r.trace.empty()) r.best = 0;
  return r;
}

AnswerResult answer(std::string_view query, const InvertedIndex& index, const Matcher& matcher,
                    const RetrievalConfig& config) {
  const auto candidates = tfidf_topk(index, query, config.k);
  RerankResult rr = rerank(query, candidates, index, matcher, config);
  AnswerResult out;
  out.answer = std::string(kNoAnswer);
  if (rr.best) {
    const CandidateTrace& top = rr.trace[*rr.best];
    out.candidate_id = top.candidate_id;
    out.score = top.blend;
    if (top.blend >= config.answer_threshold) {
      out.answered = true;
      for (const KbEntry& e : index.docs())
        if (e.id == top.candidate_id) out.answer = e.answer;
    }
  }
  out.trace = std::move(rr.trace);
  return out;
}

}  // namespace drtl
