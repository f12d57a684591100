#include "drtl/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "drtl/config.hpp"

namespace drtl {

std::string_view domain_name(Domain d) { return d == Domain::source ? "source" : "target"; }

Domain parse_domain(std::string_view text) {
  if (text == "source" || text == "src" || text == "s") return Domain::source;
  if (text == "target" || text == "tgt" || text == "t") return Domain::target;
  throw DataError("unknown domain tag '" + std::string(text) + "'");
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isspace(u)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(u)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

// ---------------------------------------------------------------------------

Vocabulary::Vocabulary() {
  add(std::string(pad_token));
  add(std::string(unk_token));
}

int Vocabulary::add(const std::string& token) {
  auto [it, inserted] = index_.try_emplace(token, static_cast<int>(tokens_.size()));
  if (inserted) tokens_.push_back(token);
  return it->second;
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? unk_id : it->second;
}

// ---------------------------------------------------------------------------

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

std::vector<double> hashed_vector(std::string_view token, std::size_t dim, std::uint64_t seed) {
  Rng rng(mix64(seed ^ fnv1a(token)));
  std::uniform_real_distribution<double> dist(-0.25, 0.25);
  std::vector<double> v(dim);
  for (double& x : v) x = dist(rng);
  return v;
}

EmbeddingTable make_embedding_table(std::size_t dim, std::uint64_t seed) {
  if (dim == 0) throw ConfigError("embedding dimension must be positive");
  EmbeddingTable table;
  table.seed = seed;
  std::vector<double> values(dim, 0.0);
  const auto unk = hashed_vector(Vocabulary::unk_token, dim, seed);
  values.insert(values.end(), unk.begin(), unk.end());
  table.matrix = Tensor({2, dim}, std::move(values));
  return table;
}

void EmbeddingTable::extend(const std::vector<std::string>& tokens) {
  std::vector<double> values = std::move(matrix.values());
  const std::size_t l = values.size() / vocab.size();
  for (const auto& tok : tokens) {
    if (vocab.contains(tok)) continue;
    vocab.add(tok);
    const auto v = hashed_vector(tok, l, seed);
    values.insert(values.end(), v.begin(), v.end());
  }
  matrix = Tensor({vocab.size(), l}, std::move(values));
}

EmbeddingTable load_embeddings(const std::filesystem::path& path, std::size_t expected_dim, std::uint64_t seed,
                               std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open embedding file " + path.string());
  EmbeddingTable table = make_embedding_table(expected_dim, seed);
  std::vector<double> values = std::move(table.matrix.values());
  std::string line;
  std::size_t line_no = 0;
  std::size_t loaded = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream fields(line);
    std::string token;
    if (!(fields >> token)) continue;
    std::vector<double> row;
    std::string num;
    while (fields >> num) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), v);
      if (ec != std::errc() || ptr != num.data() + num.size()) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed number '" + num + "'");
      }
      row.push_back(v);
    }
    if (row.size() != expected_dim) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(expected_dim) +
                      " values for token '" + token + "', found " + std::to_string(row.size()));
    }
    token = tokenize(token).front();
    if (table.vocab.contains(token)) {
      if (warnings) warnings->push_back("duplicate token '" + token + "' at line " + std::to_string(line_no) + " ignored");
      continue;
    }
    table.vocab.add(token);
    values.insert(values.end(), row.begin(), row.end());
    ++loaded;
  }
  if (loaded == 0 && warnings) warnings->push_back("embedding file " + path.string() + " contains no vectors");
  table.matrix = Tensor({table.vocab.size(), expected_dim}, std::move(values));
  return table;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

}  // namespace

std::vector<RawPair> read_pairs_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file " + path.string());
  std::vector<RawPair> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cols = split_tabs(line);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (cols.size() != 5) {
      throw DataError(where + ": expected 5 tab-separated columns, found " + std::to_string(cols.size()));
    }
    RawPair p;
    p.query_id = cols[0];
    p.s1 = cols[1];
    p.s2 = cols[2];
    auto [ptr, ec] = std::from_chars(cols[3].data(), cols[3].data() + cols[3].size(), p.label);
    if (ec != std::errc() || ptr != cols[3].data() + cols[3].size() || p.label < 0) {
      throw DataError(where + ": malformed label '" + cols[3] + "'");
    }
    try {
      p.domain = parse_domain(cols[4]);
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
    if (tokenize(p.s1).empty() || tokenize(p.s2).empty()) throw DataError(where + ": empty sentence");
    out.push_back(std::move(p));
  }
  return out;
}

void write_pairs_tsv(const std::filesystem::path& path, const std::vector<RawPair>& pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write dataset file " + path.string());
  for (const auto& p : pairs) {
    out << p.query_id << '\t' << p.s1 << '\t' << p.s2 << '\t' << p.label << '\t' << domain_name(p.domain) << '\n';
  }
  if (!out) throw DataError("write failed for " + path.string());
}

std::vector<int> encode_tokens(std::string_view text, const Vocabulary& vocab) {
  std::vector<int> ids;
  for (const auto& tok : tokenize(text)) ids.push_back(vocab.id(tok));
  return ids;
}

Dataset encode_dataset(const std::vector<RawPair>& pairs, const Vocabulary& vocab, int num_classes) {
  Dataset out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (p.label < 0 || p.label >= num_classes) {
      throw DataError("label " + std::to_string(p.label) + " outside [0," + std::to_string(num_classes) + ")");
    }
    Example ex{encode_tokens(p.s1, vocab), encode_tokens(p.s2, vocab), p.label, p.domain, p.query_id};
    if (ex.s1.empty() || ex.s2.empty()) throw DataError("empty sentence in pair '" + p.s1 + "' / '" + p.s2 + "'");
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<int> pad_to(const std::vector<int>& ids, std::size_t m) {
  if (m == 0) throw ConfigError("sequence length m must be positive");
  std::vector<int> out(m, Vocabulary::pad_id);
  std::copy_n(ids.begin(), std::min(m, ids.size()), out.begin());
  return out;
}

std::pair<std::vector<int>, std::vector<int>> encode_pair(std::string_view s1, std::string_view s2, std::size_t m,
                                                          const Vocabulary& vocab) {
  if (m == 0) throw ConfigError("sequence length m must be positive");
  return {pad_to(encode_tokens(s1, vocab), m), pad_to(encode_tokens(s2, vocab), m)};
}

std::vector<Batch> batch_iter(const Dataset& data, std::size_t batch_size, bool shuffle, std::uint64_t seed) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  if (shuffle) {
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    Batch b;
    b.indices.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + batch_size)));
    b.domain = data[b.indices.front()].domain;
    out.push_back(std::move(b));
  }
  return out;
}

// ---------------------------------------------------------------------------

SynthSpec SynthSpec::with_alphabets(std::size_t shared, std::size_t source, std::size_t target) {
  SynthSpec spec;
  for (std::size_t i = 0; i < shared; ++i) spec.shared_alphabet.push_back("w" + std::to_string(i));
  for (std::size_t i = 0; i < source; ++i) spec.source_alphabet.push_back("s" + std::to_string(i));
  for (std::size_t i = 0; i < target; ++i) spec.target_alphabet.push_back("t" + std::to_string(i));
  return spec;
}

SynthSpec parse_synth_spec(const std::string& text) {
  const KeyValues kv = parse_key_values(text);
  SynthSpec spec = SynthSpec::with_alphabets(kv.get_size("shared_alphabet", 40), kv.get_size("source_alphabet", 12),
                                             kv.get_size("target_alphabet", 12));
  spec.tau = kv.get_double("tau", spec.tau);
  spec.rho = kv.get_double("rho", spec.rho);
  spec.trigger_rate = kv.get_double("trigger_rate", spec.trigger_rate);
  spec.min_len = kv.get_size("min_len", spec.min_len);
  spec.max_len = kv.get_size("max_len", spec.max_len);
  spec.n_dev = kv.get_size("n_dev", spec.n_dev);
  spec.n_test = kv.get_size("n_test", spec.n_test);
  kv.reject_unused("synthetic spec");
  return spec;
}

double shared_jaccard(const std::vector<std::string>& s1, const std::vector<std::string>& s2,
                      const std::vector<std::string>& shared_alphabet) {
  const std::set<std::string> shared(shared_alphabet.begin(), shared_alphabet.end());
  std::set<std::string> a, b;
  for (const auto& t : s1)
    if (shared.count(t)) a.insert(t);
  for (const auto& t : s2)
    if (shared.count(t)) b.insert(t);
  std::size_t inter = 0;
  for (const auto& t : a) inter += b.count(t);
  const std::size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

void validate(const SynthSpec& spec) {
  std::set<std::string> seen;
  for (const auto* alphabet : {&spec.shared_alphabet, &spec.source_alphabet, &spec.target_alphabet}) {
    for (const auto& tok : *alphabet) {
      if (!seen.insert(tok).second) throw ConfigError("synthetic alphabets overlap on token '" + tok + "'");
    }
  }
  if (spec.source_alphabet.size() < 3 || spec.target_alphabet.size() < 3) {
    throw ConfigError("domain alphabets need at least 3 tokens (two triggers plus filler)");
  }
  if (spec.min_len < 3 || spec.max_len < spec.min_len) throw ConfigError("synthetic lengths must satisfy 3 <= min_len <= max_len");
  if (spec.shared_alphabet.size() < 2 * spec.max_len) {
    throw ConfigError("shared alphabet must hold at least 2*max_len tokens");
  }
  if (spec.tau < 0.0 || spec.tau > 1.0 || spec.rho < 0.0 || spec.rho > 1.0 || spec.trigger_rate < 0.0 ||
      spec.trigger_rate > 1.0) {
    throw ConfigError("tau, rho and trigger_rate must lie in [0,1]");
  }
}

class PairSampler {
 public:
  PairSampler(const SynthSpec& spec, Rng& rng) : spec_(spec), rng_(rng) {}

  RawPair sample(Domain domain) {
    const auto& dom = domain == Domain::source ? spec_.source_alphabet : spec_.target_alphabet;
    std::uniform_int_distribution<std::size_t> len(spec_.min_len, spec_.max_len);
    std::uniform_int_distribution<std::size_t> ndom(1, 2);
    const std::size_t len1 = len(rng_), len2 = len(rng_);
    const std::size_t d1 = ndom(rng_), d2 = ndom(rng_);
    const std::size_t k1 = len1 - d1, k2 = len2 - d2;

    // shared part: choose the overlap so labels come out roughly balanced
    std::size_t c_min = 0;
    while (c_min <= std::min(k1, k2) && jaccard(c_min, k1, k2) + 1e-12 < spec_.tau) ++c_min;
    const std::size_t c_max = std::min(k1, k2);
    std::size_t common = 0;
    const bool want_pos = std::bernoulli_distribution(0.5)(rng_);
    if ((want_pos && c_min <= c_max) || c_min == 0) {
      common = std::uniform_int_distribution<std::size_t>(std::min(c_min, c_max), c_max)(rng_);
    } else {
      common = std::uniform_int_distribution<std::size_t>(0, std::min(c_min, c_max + 1) - 1)(rng_);
    }
    std::vector<std::size_t> perm(spec_.shared_alphabet.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng_);
    std::vector<std::string> s1, s2;
    for (std::size_t i = 0; i < k1; ++i) s1.push_back(spec_.shared_alphabet[perm[i]]);
    for (std::size_t i = 0; i < common; ++i) s2.push_back(spec_.shared_alphabet[perm[i]]);
    for (std::size_t i = 0; i < k2 - common; ++i) s2.push_back(spec_.shared_alphabet[perm[k1 + i]]);

    // domain part
    const bool trigger = std::bernoulli_distribution(spec_.trigger_rate)(rng_);
    std::uniform_int_distribution<std::size_t> filler(2, dom.size() - 1);
    for (std::size_t i = 0; i < d1; ++i) s1.push_back(trigger && i == 0 ? dom[0] : dom[filler(rng_)]);
    for (std::size_t i = 0; i < d2; ++i) s2.push_back(trigger && i == 0 ? dom[1] : dom[filler(rng_)]);
    std::shuffle(s1.begin(), s1.end(), rng_);
    std::shuffle(s2.begin(), s2.end(), rng_);

    int label = jaccard(common, k1, k2) + 1e-12 >= spec_.tau ? 1 : 0;
    const bool flip = std::bernoulli_distribution(spec_.rho)(rng_);
    if (trigger && flip) label = 1 - label;

    RawPair p;
    p.s1 = join(s1);
    p.s2 = join(s2);
    p.label = label;
    p.domain = domain;
    return p;
  }

 private:
  static double jaccard(std::size_t common, std::size_t k1, std::size_t k2) {
    return static_cast<double>(common) / static_cast<double>(k1 + k2 - common);
  }
  static std::string join(const std::vector<std::string>& toks) {
    std::string out;
    for (const auto& t : toks) {
      if (!out.empty()) out += ' ';
      out += t;
    }
    return out;
  }

  const SynthSpec& spec_;
  Rng& rng_;
};

}  // namespace

SynthSplits synth_generate(std::uint64_t seed, std::size_t n_src, std::size_t n_tgt, const SynthSpec& spec) {
  validate(spec);
  Rng rng(seed);
  PairSampler sampler(spec, rng);
  SynthSplits out;
  for (std::size_t i = 0; i < n_src; ++i) out.source.push_back(sampler.sample(Domain::source));
  for (std::size_t i = 0; i < n_tgt; ++i) out.target.push_back(sampler.sample(Domain::target));
  for (std::size_t i = 0; i < spec.n_dev; ++i) out.target_dev.push_back(sampler.sample(Domain::target));
  for (std::size_t i = 0; i < spec.n_test; ++i) out.target_test.push_back(sampler.sample(Domain::target));
  return out;
}

EmbeddingTable table_for_pairs(std::size_t dim, std::uint64_t seed, const std::vector<const std::vector<RawPair>*>& sets) {
  EmbeddingTable table = make_embedding_table(dim, seed);
  std::vector<std::string> tokens;
  for (const auto* set : sets) {
    for (const auto& p : *set) {
      for (auto& t : tokenize(p.s1)) tokens.push_back(std::move(t));
      for (auto& t : tokenize(p.s2)) tokens.push_back(std::move(t));
    }
  }
  table.extend(tokens);
  return table;
}

}  // namespace drtl
