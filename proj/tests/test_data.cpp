#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "drtl/data.hpp"
#include "drtl/error.hpp"

using namespace drtl;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name, const std::string& content) {
  const fs::path p = fs::temp_directory_path() / ("drtl_test_" + name);
  std::ofstream(p) << content;
  return p;
}

}  // namespace

TEST_SUITE("vocabulary and embeddings") {
  TEST_CASE("reserved ids") {
    Vocabulary v;
    CHECK(v.size() == 2);
    CHECK(v.token(Vocabulary::pad_id) == "<pad>");
    CHECK(v.id("never seen") == Vocabulary::unk_id);
    const int a = v.add("a");
    CHECK(v.add("a") == a);
    CHECK(v.token(a) == "a");
  }

  TEST_CASE("two-line file") {
    const auto p = temp_file("emb2", "a 1 0\nb 0 1\n");
    const EmbeddingTable t = load_embeddings(p, 2, 3);
    CHECK(t.vocab.size() == 4);
    const int a = t.vocab.id("a");
    CHECK(t.matrix.at(a, 0) == 1.0);
    CHECK(t.matrix.at(a, 1) == 0.0);
    CHECK(t.matrix.at(0, 0) == 0.0);
    CHECK(t.matrix.at(0, 1) == 0.0);
  }

  TEST_CASE("empty file warns and keeps PAD and UNK") {
    const auto p = temp_file("emb_empty", "");
    std::vector<std::string> warnings;
    const EmbeddingTable t = load_embeddings(p, 2, 3, &warnings);
    CHECK(t.vocab.size() == 2);
    CHECK_FALSE(warnings.empty());
  }

  TEST_CASE("malformed line names its number") {
    const auto p = temp_file("emb_bad", "a 1 0\nc 1\n");
    try {
      load_embeddings(p, 2, 3);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find(":2:") != std::string::npos);
    }
  }

  TEST_CASE("hash vectors are seeded, bounded and token-specific") {
    const auto a = hashed_vector("x", 16, 5);
    CHECK(a == hashed_vector("x", 16, 5));
    CHECK(a != hashed_vector("y", 16, 5));
    CHECK(a != hashed_vector("x", 16, 6));
    for (double v : a) CHECK(std::abs(v) <= 0.25);
  }

  TEST_CASE("extend keeps existing rows and PAD zero") {
    EmbeddingTable t = make_embedding_table(3, 9);
    t.extend({"p", "q", "p"});
    CHECK(t.vocab.size() == 4);
    CHECK(t.matrix.dim(0) == 4);
    for (std::size_t c = 0; c < 3; ++c) CHECK(t.matrix.at(0, c) == 0.0);
    const auto q = hashed_vector("q", 3, 9);
    for (std::size_t c = 0; c < 3; ++c) CHECK(t.matrix.at(t.vocab.id("q"), c) == q[c]);
  }
}

TEST_SUITE("encoding and batching") {
  TEST_CASE("pad and truncate") {
    Vocabulary v;
    const int a = v.add("a"), b = v.add("b");
    const auto [x1, x2] = encode_pair("a b", "B", 4, v);
    CHECK(x1 == std::vector<int>{a, b, 0, 0});
    CHECK(x2 == std::vector<int>{b, 0, 0, 0});

    std::string long_text;
    for (int i = 0; i < 40; ++i) long_text += (i % 2 ? "a " : "b ");
    const auto [l1, l2] = encode_pair(long_text, "zzz", 32, v);
    CHECK(l1.size() == 32);
    CHECK(l1.front() == b);
    CHECK(l2.front() == Vocabulary::unk_id);
    CHECK_THROWS_AS(encode_pair("a", "b", 0, v), ConfigError);
  }

  TEST_CASE("decode of encode reproduces in-vocabulary tokens") {
    Vocabulary v;
    const std::vector<std::string> words = {"the", "cat", "sat", "on", "the", "mat"};
    for (const auto& w : words) v.add(w);
    const auto ids = encode_tokens("The cat sat on the MAT", v);
    REQUIRE(ids.size() == words.size());
    for (std::size_t i = 0; i < ids.size(); ++i) CHECK(v.token(ids[i]) == words[i]);
  }

  TEST_CASE("10 examples in batches of 4") {
    Dataset d(10);
    const auto batches = batch_iter(d, 4, false, 1);
    REQUIRE(batches.size() == 3);
    CHECK(batches[0].indices.size() == 4);
    CHECK(batches[1].indices.size() == 4);
    CHECK(batches[2].indices.size() == 2);
    CHECK(batches[0].indices == std::vector<std::size_t>{0, 1, 2, 3});
    CHECK(batch_iter(Dataset{}, 4, true, 1).empty());
  }

  TEST_CASE("shuffled batches are a seeded partition") {
    Dataset d(103);
    const auto a = batch_iter(d, 8, true, 42);
    const auto b = batch_iter(d, 8, true, 42);
    std::multiset<std::size_t> seen;
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].indices == b[i].indices);
      seen.insert(a[i].indices.begin(), a[i].indices.end());
    }
    CHECK(seen.size() == 103);
    CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == 103);
    CHECK(batch_iter(d, 8, true, 43)[0].indices != a[0].indices);
  }

  TEST_CASE("tsv round trip") {
    const std::vector<RawPair> pairs = {{"q1", "a b", "c", 1, Domain::source}, {"", "x", "y z", 0, Domain::target}};
    const fs::path p = fs::temp_directory_path() / "drtl_test_pairs.tsv";
    write_pairs_tsv(p, pairs);
    const auto back = read_pairs_tsv(p);
    REQUIRE(back.size() == 2);
    CHECK(back[0].query_id == "q1");
    CHECK(back[1].s2 == "y z");
    CHECK(back[1].domain == Domain::target);
    CHECK(back[0].label == 1);
  }

  TEST_CASE("labels outside the class range are rejected") {
    Vocabulary v;
    CHECK_THROWS_AS(encode_dataset({{"", "a", "b", 2, Domain::source}}, v, 2), DataError);
  }
}

TEST_SUITE("synthetic generator") {
  TEST_CASE("fixed seed gives identical datasets") {
    SynthSpec spec = SynthSpec::with_alphabets(40, 12, 12);
    spec.n_dev = 50;
    spec.n_test = 50;
    const auto a = synth_generate(7, 300, 100, spec);
    const auto b = synth_generate(7, 300, 100, spec);
    REQUIRE(a.source.size() == 300);
    REQUIRE(a.target.size() == 100);
    for (std::size_t i = 0; i < a.source.size(); ++i) {
      CHECK(a.source[i].s1 == b.source[i].s1);
      CHECK(a.source[i].label == b.source[i].label);
    }
  }

  TEST_CASE("lengths, balance and domain tags") {
    SynthSpec spec = SynthSpec::with_alphabets(40, 12, 12);
    const auto s = synth_generate(3, 2000, 500, spec);
    std::size_t pos = 0;
    for (const auto& p : s.source) {
      const auto t1 = tokenize(p.s1);
      CHECK(t1.size() >= spec.min_len);
      CHECK(t1.size() <= spec.max_len);
      CHECK(p.domain == Domain::source);
      pos += p.label;
    }
    const double rate = double(pos) / double(s.source.size());
    CHECK(rate >= 0.4);
    CHECK(rate <= 0.6);
    for (const auto& p : s.target_test) CHECK(p.domain == Domain::target);
  }

  TEST_CASE("without flips the label is the shared rule") {
    SynthSpec spec = SynthSpec::with_alphabets(40, 12, 12);
    spec.rho = 0.0;
    const auto s = synth_generate(11, 500, 10, spec);
    for (const auto& p : s.source) {
      const double j = shared_jaccard(tokenize(p.s1), tokenize(p.s2), spec.shared_alphabet);
      CHECK(p.label == (j >= spec.tau ? 1 : 0));
    }
  }

  TEST_CASE("tau of one with identical sentences is always positive") {
    const auto toks = tokenize("w1 w2 w3 s4");
    CHECK(shared_jaccard(toks, toks, SynthSpec::with_alphabets(40, 12, 12).shared_alphabet) >= 1.0);
  }

  TEST_CASE("overlapping alphabets are rejected") {
    SynthSpec spec = SynthSpec::with_alphabets(40, 12, 12);
    spec.target_alphabet[0] = spec.shared_alphabet[0];
    CHECK_THROWS_AS(synth_generate(1, 10, 10, spec), ConfigError);
  }

  TEST_CASE("spec parsing") {
    const SynthSpec spec = parse_synth_spec("shared_alphabet = 30\nrho = 0.25\n# note\nmax_len = 10\n");
    CHECK(spec.shared_alphabet.size() == 30);
    CHECK(spec.rho == 0.25);
    CHECK(spec.max_len == 10);
    CHECK_THROWS_AS(parse_synth_spec("bogus = 1\n"), ConfigError);
  }
}
