#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "drtl/parameter.hpp"
#include "drtl/tensor.hpp"

namespace drtl {

enum class Domain { source, target };

std::string_view domain_name(Domain d);
/// Accepts "source"/"src"/"s" and "target"/"tgt"/"t".
Domain parse_domain(std::string_view text);

/// Lowercased whitespace tokenization.
std::vector<std::string> tokenize(std::string_view text);

class Vocabulary {
 public:
  static constexpr int pad_id = 0;
  static constexpr int unk_id = 1;
  static constexpr std::string_view pad_token = "<pad>";
  static constexpr std::string_view unk_token = "<unk>";

  Vocabulary();

  /// Returns the id of `token`, adding it if new.
  int add(const std::string& token);
  /// Id of `token`, or unk_id.
  int id(const std::string& token) const;
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::unordered_map<std::string, int> index_;
  std::vector<std::string> tokens_;
};

/// Lookup table stored as [|V| x l]: row i is the l-dimensional vector of token id i.
struct EmbeddingTable {
  Vocabulary vocab;
  Tensor matrix;
  std::uint64_t seed = 0;

  std::size_t dim() const { return matrix.dim(1); }

  /// Adds unseen tokens with seeded hash-random vectors in +-0.25; PAD stays zero.
  void extend(const std::vector<std::string>& tokens);
};

/// Vector assigned to a token that has no pre-trained entry. Depends only on (seed, token).
std::vector<double> hashed_vector(std::string_view token, std::size_t dim, std::uint64_t seed);

/// Empty table holding PAD (zero) and UNK (hash-random).
EmbeddingTable make_embedding_table(std::size_t dim, std::uint64_t seed);

/// Reads GloVe-style text: `token v1 ... vl` per line. Lines whose width differs
/// from `expected_dim` raise DataError naming the line number. Warnings
/// (empty file, duplicate tokens) are appended to `warnings` when given.
EmbeddingTable load_embeddings(const std::filesystem::path& path, std::size_t expected_dim, std::uint64_t seed,
                               std::vector<std::string>* warnings = nullptr);

/// Sentence pair as text, as stored in dataset files.
struct RawPair {
  std::string query_id;
  std::string s1;
  std::string s2;
  int label = 0;
  Domain domain = Domain::source;
};

/// Sentence pair as (unpadded) token ids.
struct Example {
  std::vector<int> s1;
  std::vector<int> s2;
  int label = 0;
  Domain domain = Domain::source;
  std::string query_id;
};

using Dataset = std::vector<Example>;

/// Reads `query_id<TAB>s1<TAB>s2<TAB>label<TAB>domain`.
std::vector<RawPair> read_pairs_tsv(const std::filesystem::path& path);
void write_pairs_tsv(const std::filesystem::path& path, const std::vector<RawPair>& pairs);

/// Token ids of `text`; unknown tokens map to UNK.
std::vector<int> encode_tokens(std::string_view text, const Vocabulary& vocab);
Dataset encode_dataset(const std::vector<RawPair>& pairs, const Vocabulary& vocab, int num_classes);

/// Right-pads with PAD or truncates to the first m ids.
std::vector<int> pad_to(const std::vector<int>& ids, std::size_t m);
std::pair<std::vector<int>, std::vector<int>> encode_pair(std::string_view s1, std::string_view s2, std::size_t m,
                                                          const Vocabulary& vocab);

/// Mini-batch of dataset indices; every example in a batch shares `domain`.
struct Batch {
  std::vector<std::size_t> indices;
  Domain domain = Domain::source;
};

/// Splits [0, n) into batches of `batch_size` (last batch may be short).
/// Deterministic for a fixed seed; shuffle=false keeps corpus order.
std::vector<Batch> batch_iter(const Dataset& data, std::size_t batch_size, bool shuffle, std::uint64_t seed);

// ---------------------------------------------------------------------------
// synthetic transfer task

struct SynthSpec {
  std::vector<std::string> shared_alphabet;
  std::vector<std::string> source_alphabet;
  std::vector<std::string> target_alphabet;
  /// y = 1 iff Jaccard overlap of shared tokens >= tau.
  double tau = 0.5;
  /// Probability that a co-occurring domain trigger pair flips the label.
  double rho = 0.0;
  /// Fraction of pairs carrying the domain trigger pair (first token of the
  /// domain alphabet in s1, second in s2).
  double trigger_rate = 0.3;
  std::size_t min_len = 6;
  std::size_t max_len = 12;
  std::size_t n_dev = 500;
  std::size_t n_test = 2000;

  /// Alphabets named w0.., s0.., t0.. of the given sizes.
  static SynthSpec with_alphabets(std::size_t shared, std::size_t source, std::size_t target);
};

/// Reads flat `key = value` lines (shared_alphabet, source_alphabet,
/// target_alphabet sizes; tau; rho; trigger_rate; min_len; max_len; n_dev; n_test).
SynthSpec parse_synth_spec(const std::string& text);

struct SynthSplits {
  std::vector<RawPair> source;
  std::vector<RawPair> target;
  std::vector<RawPair> target_dev;
  std::vector<RawPair> target_test;
};

/// Jaccard overlap of the shared-alphabet token sets of two sentences.
double shared_jaccard(const std::vector<std::string>& s1, const std::vector<std::string>& s2,
                      const std::vector<std::string>& shared_alphabet);

SynthSplits synth_generate(std::uint64_t seed, std::size_t n_src, std::size_t n_tgt, const SynthSpec& spec);

/// Vocabulary-plus-embeddings covering every token of the given pairs.
EmbeddingTable table_for_pairs(std::size_t dim, std::uint64_t seed, const std::vector<const std::vector<RawPair>*>& sets);

}  // namespace drtl
