#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"

namespace fs = std::filesystem;

namespace {

const std::string kData = DRTL_TEST_DATA;

struct Run {
  int code = 0;
  std::string out, err;
};

Run invoke(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Run r;
  r.code = drtl::cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

// Flags listed by `drtl <cmd> --help`, without --help itself.
std::set<std::string> help_flags(const std::string& cmd) {
  const Run r = invoke({cmd, "--help"});
  std::set<std::string> flags;
  static const std::regex line(R"(^\s+(?:-\w,)?(--[a-z0-9-]+))");
  std::istringstream in(r.out);
  for (std::string s; std::getline(in, s);) {
    std::smatch m;
    if (std::regex_search(s, m, line) && m[1] != "--help") flags.insert(m[1]);
  }
  return flags;
}

// Flags in the table rows of the README section for `cmd`.
std::set<std::string> readme_flags(const std::string& cmd) {
  std::istringstream in(slurp(DRTL_README));
  std::set<std::string> flags;
  bool inside = false;
  static const std::regex row(R"(^\| `(--[a-z0-9-]+)`)");
  for (std::string s; std::getline(in, s);) {
    if (s.rfind("#", 0) == 0) inside = s == "### `drtl " + cmd + "`";
    std::smatch m;
    if (inside && std::regex_search(s, m, row)) flags.insert(m[1]);
  }
  return flags;
}

// Scratch directory holding a small synthetic task and one trained model.
struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() / ("drtl_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    write(dir / "spec.cfg", "n_dev = 60\nn_test = 60\n");
    write(dir / "small.cfg", "m = 8\nembedding_dim = 8\nfeature_maps = 4\nbatch_source = 32\nbatch_target = 16\n");
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string path(const std::string& name) const { return (dir / name).string(); }

  Run synth() { return invoke({"synth-data", "--out", path("data"), "--spec", path("spec.cfg"), "--n-src", "300", "--n-tgt", "80", "--seed", "3"}); }
  Run train(const std::string& out, std::vector<std::string> extra = {}) {
    std::vector<std::string> args = {"train", "--config", path("small.cfg"), "--source", path("data/source_train.tsv"),
                                     "--target", path("data/target_train.tsv"), "--dev", path("data/target_dev.tsv"),
                                     "--epochs", "2", "--out", path(out)};
    args.insert(args.end(), extra.begin(), extra.end());
    return invoke(args);
  }
};

std::string after(const std::string& text, const std::string& marker) {
  const auto pos = text.find(marker);
  return pos == std::string::npos ? std::string() : text.substr(pos);
}

bool one_error_line(const Run& r, const std::string& kind) {
  return r.err.rfind("error: " + kind + ": ", 0) == 0 && r.err.find('\n') == r.err.size() - 1;
}

}  // namespace

TEST_CASE("README flag tables match --help for every command") {
  for (const std::string cmd : {"train", "evaluate", "gradcheck", "omega-report", "synth-data", "index", "query"}) {
    CAPTURE(cmd);
    const auto help = help_flags(cmd);
    CHECK(!help.empty());
    CHECK(readme_flags(cmd) == help);
  }
}

TEST_CASE("gradcheck passes on a toy DRSS-Adv model") {
  const Run r = invoke({"gradcheck", "--seed", "7"});
  CHECK(r.code == 0);
  CHECK(r.out.find("result = pass") != std::string::npos);
  static const std::regex row(R"(^(\w+), ([0-9.e+-]+), (\d+), (\d+), \S+$)");
  std::istringstream in(r.out);
  std::set<std::string> groups;
  for (std::string s; std::getline(in, s);) {
    std::smatch m;
    if (!std::regex_match(s, m, row)) continue;
    groups.insert(m[1]);
    CHECK(std::stod(m[2]) < 1e-4);
  }
  CHECK(groups == std::set<std::string>{"embeddings", "theta_c", "theta_s", "theta_t", "heads", "adversary"});
}

TEST_CASE("train, evaluate, omega-report, index and query end to end") {
  Workspace ws;
  REQUIRE(ws.synth().code == 0);
  for (const char* f : {"source_train.tsv", "target_train.tsv", "target_dev.tsv", "target_test.tsv"})
    CHECK(fs::exists(ws.dir / "data" / f));

  const Run a = ws.train("run_a");
  REQUIRE_MESSAGE(a.code == 0, a.err);
  CHECK(fs::exists(ws.dir / "run_a" / "model.ckpt"));
  const std::string history = slurp(ws.dir / "run_a" / "history.csv");
  CHECK(history.rfind("epoch, ce_src, ce_tgt, trace_term, adv_term, l2_term, dev_acc, dev_auc\n", 0) == 0);

  SUBCASE("a second run with the same seed writes the same history") {
    REQUIRE(ws.train("run_b").code == 0);
    CHECK(slurp(ws.dir / "run_b" / "history.csv") == history);
  }

  SUBCASE("evaluate reproduces the dev report printed by train") {
    const Run e = invoke({"evaluate", "--checkpoint", ws.path("run_a/model.ckpt"), "--data", ws.path("data/target_dev.tsv")});
    REQUIRE(e.code == 0);
    CHECK(e.out.rfind("examples = ", 0) == 0);
    CHECK(after(a.out, "examples = ") == e.out);
  }

  SUBCASE("omega-report prints unit-diagonal correlations") {
    const Run o = invoke({"omega-report", "--checkpoint", ws.path("run_a/model.ckpt"), "--format", "kv"});
    REQUIRE(o.code == 0);
    CHECK(o.out.find("rho.W_sc.W_sc=1") != std::string::npos);
    CHECK(o.out.find("rho.W_sc.W_tc=") != std::string::npos);
    const Run tgt = ws.train("run_tgt", {"--variant", "tgt-only"});
    REQUIRE(tgt.code == 0);
    const Run bad = invoke({"omega-report", "--checkpoint", ws.path("run_tgt/model.ckpt")});
    CHECK(bad.code == 2);
    CHECK(one_error_line(bad, "config"));
  }

  SUBCASE("index then query prints the trace and an answer line") {
    const Run ix = invoke({"index", "--kb", kData + "/toy_kb.tsv", "--out", ws.path("kb.idx")});
    REQUIRE(ix.code == 0);
    CHECK(ix.out.find("documents = 10") != std::string::npos);
    const Run q = invoke({"query", "--index", ws.path("kb.idx"), "--checkpoint", ws.path("run_a/model.ckpt"), "--query",
                        "how do i reset my password", "--k", "5"});
    REQUIRE_MESSAGE(q.code == 0, q.err);
    std::istringstream in(q.out);
    std::vector<std::string> lines;
    for (std::string s; std::getline(in, s);) lines.push_back(s);
    REQUIRE(lines.size() >= 5);
    CHECK(lines[0] == "# query = how do i reset my password");
    CHECK(lines[1] == "candidate_id, tfidf, model_prob, emb_cosine, token_overlap, blend");
    static const std::regex trace(R"(^k\d\d(, \d\.\d{6}){5}$)");
    std::size_t traces = 0;
    for (std::size_t i = 2; i < lines.size() && lines[i][0] != '#'; ++i) {
      CHECK(std::regex_match(lines[i], trace));
      ++traces;
    }
    CHECK(traces >= 1);
    CHECK(traces <= 5);
    CHECK(std::regex_match(lines[lines.size() - 3], std::regex(R"(^# answer_id = (k\d\d|-)$)")));
    CHECK(std::regex_match(lines[lines.size() - 2], std::regex(R"(^# answer_score = \d\.\d{6}$)")));
    CHECK(lines.back().rfind("# answer = ", 0) == 0);
  }
}

TEST_CASE("exit codes and one-line errors") {
  Workspace ws;
  Run r = invoke({});
  CHECK(r.code == 2);
  r = invoke({"train", "--bogus"});
  CHECK(r.code == 2);
  CHECK(one_error_line(r, "usage"));
  r = invoke({"evaluate", "--checkpoint", ws.path("missing.ckpt"), "--data", ws.path("missing.tsv")});
  CHECK(r.code == 3);
  CHECK(one_error_line(r, "data"));
  write(ws.dir / "typo.cfg", "lamda1 = 0.1\n");
  r = invoke({"gradcheck", "--config", ws.path("typo.cfg")});
  CHECK(r.code == 2);
  CHECK(one_error_line(r, "config"));
  CHECK(r.err.find("lamda1") != std::string::npos);
  r = invoke({"gradcheck", "--set", "lambda1"});
  CHECK(r.code == 2);
  r = invoke({"gradcheck", "--tolerance", "1e-30"});
  CHECK(r.code == 4);
  CHECK(one_error_line(r, "numeric"));
  write(ws.dir / "bad_kb.tsv", "k1\tonly two fields\n");
  r = invoke({"index", "--kb", ws.path("bad_kb.tsv"), "--out", ws.path("x.idx")});
  CHECK(r.code == 3);
  CHECK(r.err.find(":1:") != std::string::npos);
}

TEST_CASE("DRTL_CONFIG supplies the default configuration and flags override it") {
  Workspace ws;
  REQUIRE(ws.synth().code == 0);
  write(ws.dir / "env.cfg", "m = 8\nembedding_dim = 8\nfeature_maps = 4\nbatch_target = 16\nmax_epoch = 1\n");
  ::setenv("DRTL_CONFIG", ws.path("env.cfg").c_str(), 1);
  const Run r = invoke({"train", "--source", ws.path("data/source_train.tsv"), "--target", ws.path("data/target_train.tsv"),
                      "--dev", ws.path("data/target_dev.tsv"), "--out", ws.path("env_run"), "--quiet", "--variant",
                      "ss"});
  const Run bad = invoke({"gradcheck"});
  write(ws.dir / "env.cfg", "no_such_key = 1\n");
  const Run rejected = invoke({"gradcheck"});
  ::unsetenv("DRTL_CONFIG");
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(bad.code == 0);
  const std::string history = slurp(ws.dir / "env_run" / "history.csv");
  CHECK(std::count(history.begin(), history.end(), '\n') == 2);
  const std::string manifest = slurp(ws.dir / "env_run" / "model.ckpt");
  CHECK(manifest.find("variant = ss\n") != std::string::npos);
  CHECK(manifest.find("embedding_dim = 8\n") != std::string::npos);
  CHECK(rejected.code == 2);
  CHECK(rejected.err.find("no_such_key") != std::string::npos);
}
