#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "drtl/checkpoint.hpp"
#include "drtl/error.hpp"
#include "drtl/retrieval.hpp"
#include "drtl/trainer.hpp"

namespace drtl::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kConfigEnv = "DRTL_CONFIG";

std::string fmt(double v) {
  if (std::isnan(v)) return "undefined";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

// Options shared by the commands that read a training configuration.
struct ConfigOptions {
  std::string path;
  std::vector<std::string> overrides;
};

void add_config_options(CLI::App* cmd, ConfigOptions& o) {
  cmd->add_option("--config", o.path, "key = value configuration file (default: $DRTL_CONFIG)");
  cmd->add_option("--set", o.overrides, "override one configuration key, as key=value (repeatable)");
}

KeyValues load_config(const ConfigOptions& o) {
  std::string path = o.path;
  if (path.empty()) {
    if (const char* env = std::getenv(kConfigEnv)) path = env;
  }
  KeyValues kv = path.empty() ? KeyValues{} : read_key_values(path);
  for (const std::string& item : o.overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + item + "'");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t"), e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv.set(trim(item.substr(0, eq)), trim(item.substr(eq + 1)));
  }
  return kv;
}

std::vector<RawPair> read_optional_pairs(const std::string& path) {
  return path.empty() ? std::vector<RawPair>{} : read_pairs_tsv(path);
}

Dataset encode_as(const std::vector<RawPair>& pairs, const Vocabulary& vocab, int classes, Domain d) {
  Dataset data = encode_dataset(pairs, vocab, classes);
  for (Example& ex : data) ex.domain = d;
  return data;
}

void print_report(std::ostream& out, const EvalReport& r) {
  out << "examples = " << r.examples << '\n' << "acc = " << fmt(r.acc) << '\n' << "auc = " << fmt(r.auc) << '\n';
  if (r.rank) {
    out << "p@1 = " << fmt(r.rank->precision) << '\n'
        << "r@1 = " << fmt(r.rank->recall) << '\n'
        << "f1@1 = " << fmt(r.rank->f1) << '\n';
  }
}

// -- train ------------------------------------------------------------------

struct TrainOptions {
  ConfigOptions config;
  std::string source, target, dev, embeddings, variant, out;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

int cmd_train(const TrainOptions& o, std::ostream& out, std::ostream& err) {
  KeyValues kv = load_config(o.config);
  if (!o.variant.empty()) kv.set("variant", o.variant);
  if (o.epochs) kv.set("max_epoch", std::to_string(*o.epochs));
  if (o.seed) kv.set("seed", std::to_string(*o.seed));
  const TrainConfig cfg = TrainConfig::from_key_values(kv);

  const auto src_raw = read_optional_pairs(o.source), tgt_raw = read_optional_pairs(o.target),
             dev_raw = read_optional_pairs(o.dev);
  const std::size_t dim = cfg.model.hcnn.embedding_dim;
  std::vector<std::string> warnings;
  EmbeddingTable table = o.embeddings.empty() ? make_embedding_table(dim, cfg.seed)
                                              : load_embeddings(o.embeddings, dim, cfg.seed, &warnings);
  for (const std::string& w : warnings) err << "warning: " << one_line(w) << '\n';
  std::vector<std::string> tokens;
  for (const auto* set : {&src_raw, &tgt_raw, &dev_raw}) {
    for (const RawPair& p : *set) {
      for (auto& t : tokenize(p.s1)) tokens.push_back(std::move(t));
      for (auto& t : tokenize(p.s2)) tokens.push_back(std::move(t));
    }
  }
  table.extend(tokens);

  const int classes = static_cast<int>(cfg.model.num_classes);
  const Dataset source = encode_as(src_raw, table.vocab, classes, Domain::source);
  const Dataset target = encode_as(tgt_raw, table.vocab, classes, Domain::target);
  const Dataset dev = encode_as(dev_raw, table.vocab, classes, Domain::target);

  if (!o.quiet) out << history_header() << '\n';
  TrainResult r = train(cfg, table, source, target, dev, [&](const EpochRecord& e) {
    if (!o.quiet) out << format_record(e) << std::endl;
  });

  fs::create_directories(o.out);
  save_checkpoint(fs::path(o.out) / "model.ckpt", r.model, cfg, r.omega, r.best_epoch, r.best_dev_acc);
  {
    std::ofstream h(fs::path(o.out) / "history.csv");
    h << history_header() << '\n';
    for (const EpochRecord& e : r.history) h << format_record(e) << '\n';
    if (!h) throw DataError("cannot write " + (fs::path(o.out) / "history.csv").string());
  }
  out << "checkpoint = " << (fs::path(o.out) / "model.ckpt").string() << '\n' << "best_epoch = " << r.best_epoch << '\n';
  if (!dev.empty()) print_report(out, evaluate(r.model, dev));
  if (r.aborted) throw NumericError("training stopped early: " + r.abort_reason);
  return kOk;
}

// -- evaluate ---------------------------------------------------------------

struct EvaluateOptions {
  std::string checkpoint, data, domain = "target";
  double threshold = 0.5;
};

int cmd_evaluate(const EvaluateOptions& o, std::ostream& out) {
  const LoadedCheckpoint ck = load_checkpoint(o.checkpoint);
  const Dataset data = encode_as(read_pairs_tsv(o.data), ck.model.vocab(),
                                 static_cast<int>(ck.config.model.num_classes), parse_domain(o.domain));
  print_report(out, evaluate(ck.model, data, o.threshold));
  return kOk;
}

// -- gradcheck --------------------------------------------------------------

struct GradcheckOptions {
  ConfigOptions config;
  std::string variant = "drss-adv";
  std::uint64_t seed = 1;
  std::size_t m = 8, l = 4, f = 3, batch = 4, samples = 50;
  double tolerance = 1e-4;
};

int cmd_gradcheck(const GradcheckOptions& o, std::ostream& out) {
  KeyValues kv = load_config(o.config);
  kv.set("variant", o.variant);
  kv.set("m", std::to_string(o.m));
  kv.set("embedding_dim", std::to_string(o.l));
  kv.set("feature_maps", std::to_string(o.f));
  const TrainConfig cfg = TrainConfig::from_key_values(kv);
  GradCheckOptions opts;
  opts.tolerance = o.tolerance;
  opts.samples_per_param = o.samples;
  opts.seed = o.seed;
  const GradCheckReport r = model_grad_check(cfg.model, cfg.lambdas, o.batch, o.seed, opts);
  out << "group, max_rel_error, coordinates, retried, worst\n";
  for (const GroupReport& g : r.groups) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.3e", g.max_rel_error);
    out << g.group << ", " << buf << ", " << g.coordinates << ", " << g.retried << ", " << g.worst << '\n';
  }
  if (!r.failure.empty()) throw NumericError("gradient check aborted: " + r.failure);
  if (!r.passed) throw NumericError("gradient check exceeded tolerance " + fmt(o.tolerance));
  out << "result = pass\n";
  return kOk;
}

// -- omega-report -----------------------------------------------------------

struct OmegaOptions {
  std::string checkpoint, format = "text";
};

int cmd_omega(const OmegaOptions& o, std::ostream& out) {
  const LoadedCheckpoint ck = load_checkpoint(o.checkpoint);
  if (!has_private_encoders(ck.config.model.variant)) {
    throw ConfigError("omega-report needs a model with four output heads, checkpoint holds " +
                      std::string(variant_name(ck.config.model.variant)));
  }
  // Omega as learned by training; for SS-family models without updates this is the identity over four
  const CorrelationReport rep = correlation_report(ck.omega);
  out << (o.format == "kv" ? rep.render_key_values() : rep.render_text());
  return kOk;
}

// -- synth-data -------------------------------------------------------------

struct SynthOptions {
  std::string out, spec;
  std::size_t n_src = 20000, n_tgt = 500;
  std::uint64_t seed = 1;
};

int cmd_synth(const SynthOptions& o, std::ostream& out) {
  std::string text;
  if (!o.spec.empty()) {
    std::ifstream in(o.spec);
    if (!in) throw DataError("cannot open synthetic spec " + o.spec);
    std::stringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  const SynthSplits s = synth_generate(o.seed, o.n_src, o.n_tgt, parse_synth_spec(text));
  fs::create_directories(o.out);
  const std::pair<const char*, const std::vector<RawPair>*> files[] = {{"source_train.tsv", &s.source},
                                                                       {"target_train.tsv", &s.target},
                                                                       {"target_dev.tsv", &s.target_dev},
                                                                       {"target_test.tsv", &s.target_test}};
  for (const auto& [name, pairs] : files) {
    const fs::path p = fs::path(o.out) / name;
    write_pairs_tsv(p, *pairs);
    out << p.string() << " = " << pairs->size() << '\n';
  }
  return kOk;
}

// -- index / query ----------------------------------------------------------

struct IndexOptions {
  std::string kb, out;
};

int cmd_index(const IndexOptions& o, std::ostream& out) {
  const InvertedIndex index = build_index(read_kb_tsv(o.kb));
  index.save(o.out);
  out << "documents = " << index.doc_count() << '\n' << "terms = " << index.term_count() << '\n';
  return kOk;
}

struct QueryOptions {
  std::string index, checkpoint, query, stopwords, weights = "0.8,0.1,0.1", domain = "target";
  std::size_t k = 30;
  double threshold = 0.5;
};

BlendWeights parse_weights(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    char* end = nullptr;
    const double d = std::strtod(item.c_str(), &end);
    if (item.empty() || *end != '\0') throw ConfigError("--weights: '" + item + "' is not a number");
    v.push_back(d);
  }
  if (v.size() != 3) throw ConfigError("--weights expects model_prob,emb_cosine,token_overlap");
  return {v[0], v[1], v[2]};
}

int cmd_query(const QueryOptions& o, std::ostream& out, std::istream& in) {
  RetrievalConfig cfg;
  cfg.k = o.k;
  cfg.answer_threshold = o.threshold;
  cfg.weights = parse_weights(o.weights);
  cfg.domain = parse_domain(o.domain);
  if (!o.stopwords.empty()) cfg.stopwords = read_stopwords(o.stopwords);
  cfg.validate();
  const InvertedIndex index = InvertedIndex::load(o.index);
  const LoadedCheckpoint ck = load_checkpoint(o.checkpoint);
  const Matcher matcher(ck.model);

  auto run_one = [&](const std::string& q) {
    const AnswerResult r = answer(q, index, matcher, cfg);
    out << "# query = " << q << '\n' << trace_header() << '\n';
    for (const CandidateTrace& t : r.trace) out << format_trace(t) << '\n';
    char score[32];
    std::snprintf(score, sizeof score, "%.6f", r.score);
    out << "# answer_id = " << (r.answered ? r.candidate_id : "-") << '\n'
        << "# answer_score = " << score << '\n'
        << "# answer = " << r.answer << '\n';
  };
  if (!o.query.empty()) {
    run_one(o.query);
  } else {
    for (std::string line; std::getline(in, line);)
      if (!line.empty()) run_one(line);
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Sentence-pair matching with domain-relationship transfer learning", "drtl"};
  app.require_subcommand(1);
  app.footer(std::string("Environment: ") + kConfigEnv +
             " names the default --config file.\nExit codes: 0 success, 1 internal error, 2 usage or configuration error, "
             "3 data error, 4 numeric failure.");

  TrainOptions train_o;
  auto* train = app.add_subcommand("train", "train a matcher and write model.ckpt and history.csv");
  add_config_options(train, train_o.config);
  train->add_option("--source", train_o.source, "source-domain training pairs (TSV)");
  train->add_option("--target", train_o.target, "target-domain training pairs (TSV)");
  train->add_option("--dev", train_o.dev, "target-domain dev pairs for early stopping (TSV)");
  train->add_option("--embeddings", train_o.embeddings, "pre-trained vectors, one `token v1 ... vl` per line");
  train->add_option("--variant", train_o.variant, "model variant, overrides the config");
  train->add_option("--epochs", train_o.epochs, "maximum epochs, overrides max_epoch");
  train->add_option("--seed", train_o.seed, "root random seed, overrides seed");
  train->add_option("--out", train_o.out, "output directory")->required();
  train->add_flag("--quiet", train_o.quiet, "do not print per-epoch history");

  EvaluateOptions eval_o;
  auto* eval = app.add_subcommand("evaluate", "print ACC, AUC and rank-at-1 metrics of a checkpoint");
  eval->add_option("--checkpoint", eval_o.checkpoint, "checkpoint written by train")->required();
  eval->add_option("--data", eval_o.data, "pairs to score (TSV)")->required();
  eval->add_option("--domain", eval_o.domain, "output head to use: source or target")->capture_default_str();
  eval->add_option("--threshold", eval_o.threshold, "answer threshold for rank-at-1")->capture_default_str();

  GradcheckOptions gc_o;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the full objective on a toy model");
  add_config_options(gc, gc_o.config);
  gc->add_option("--variant", gc_o.variant, "model variant")->capture_default_str();
  gc->add_option("--seed", gc_o.seed, "random seed")->capture_default_str();
  gc->add_option("--m", gc_o.m, "sentence length")->capture_default_str();
  gc->add_option("--l", gc_o.l, "embedding width")->capture_default_str();
  gc->add_option("--f", gc_o.f, "feature maps")->capture_default_str();
  gc->add_option("--batch", gc_o.batch, "pairs per domain")->capture_default_str();
  gc->add_option("--samples", gc_o.samples, "coordinates checked per parameter")->capture_default_str();
  gc->add_option("--tolerance", gc_o.tolerance, "maximum relative error")->capture_default_str();

  OmegaOptions om_o;
  auto* om = app.add_subcommand("omega-report", "print the head correlation tables of a checkpoint");
  om->add_option("--checkpoint", om_o.checkpoint, "checkpoint written by train")->required();
  om->add_option("--format", om_o.format, "text or kv")->check(CLI::IsMember({"text", "kv"}))->capture_default_str();

  SynthOptions sy_o;
  auto* sy = app.add_subcommand("synth-data", "write the four splits of the synthetic transfer task");
  sy->add_option("--out", sy_o.out, "output directory")->required();
  sy->add_option("--spec", sy_o.spec, "synthetic task key = value file");
  sy->add_option("--n-src", sy_o.n_src, "source training pairs")->capture_default_str();
  sy->add_option("--n-tgt", sy_o.n_tgt, "target training pairs")->capture_default_str();
  sy->add_option("--seed", sy_o.seed, "random seed")->capture_default_str();

  IndexOptions ix_o;
  auto* ix = app.add_subcommand("index", "build the TF-IDF index of a knowledge base");
  ix->add_option("--kb", ix_o.kb, "knowledge base TSV: id, question, answer")->required();
  ix->add_option("--out", ix_o.out, "index file to write")->required();

  QueryOptions q_o;
  auto* q = app.add_subcommand("query", "answer questions from an index with a trained matcher");
  q->add_option("--index", q_o.index, "index written by the index command")->required();
  q->add_option("--checkpoint", q_o.checkpoint, "matcher checkpoint")->required();
  q->add_option("--query", q_o.query, "question text (default: one question per stdin line)");
  q->add_option("--k", q_o.k, "candidates recalled before reranking")->capture_default_str();
  q->add_option("--weights", q_o.weights, "blend of model_prob,emb_cosine,token_overlap")->capture_default_str();
  q->add_option("--threshold", q_o.threshold, "minimum blended score to answer")->capture_default_str();
  q->add_option("--stopwords", q_o.stopwords, "tokens ignored by token_overlap, one per line");
  q->add_option("--domain", q_o.domain, "matcher output head: source or target")->capture_default_str();

  auto fail = [&](const char* kind, int code, const std::string& msg) {
    err << "error: " << kind << ": " << one_line(msg) << '\n';
    return code;
  };
  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return kOk;
  } catch (const CLI::ParseError& e) {
    return fail("usage", kUsage, e.what());
  }

  try {
    if (train->parsed()) return cmd_train(train_o, out, err);
    if (eval->parsed()) return cmd_evaluate(eval_o, out);
    if (gc->parsed()) return cmd_gradcheck(gc_o, out);
    if (om->parsed()) return cmd_omega(om_o, out);
    if (sy->parsed()) return cmd_synth(sy_o, out);
    if (ix->parsed()) return cmd_index(ix_o, out);
    if (q->parsed()) return cmd_query(q_o, out, std::cin);
  } catch (const ConfigError& e) {
    return fail("config", kUsage, e.what());
  } catch (const ShapeError& e) {
    return fail("config", kUsage, e.what());
  } catch (const DataError& e) {
    return fail("data", kData, e.what());
  } catch (const NumericError& e) {
    return fail("numeric", kNumeric, e.what());
  } catch (const fs::filesystem_error& e) {
    return fail("data", kData, e.what());
  } catch (const std::exception& e) {
    return fail("internal", kInternal, e.what());
  }
  return fail("usage", kUsage, "no command given");
}

}  // namespace drtl::cli
