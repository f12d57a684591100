#include "drtl/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "drtl/error.hpp"
#include "drtl/optim.hpp"

namespace drtl {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void TrainConfig::validate() const {
  model.validate();
  lambdas.validate();
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be positive");
  if (batch_source == 0 || batch_target == 0) throw ConfigError("batch_source and batch_target must be >= 1");
  if (patience == 0) throw ConfigError("patience must be >= 1");
}

const std::vector<std::string>& train_config_keys() {
  static const std::vector<std::string> keys = {
      "variant",      "num_classes",  "m",           "embedding_dim",  "feature_maps",   "window",
      "share_filters", "use_bcnn",    "use_pyramid", "pyr1_kernel",    "pyr1_maps",      "pyr1_stride",
      "pool1_size",   "pool1_stride", "pyr2_kernel", "pyr2_maps",      "pyr2_stride",    "pool2_size",
      "pool2_stride", "private_encoders", "freeze_embeddings", "lambda0", "lambda1",     "lambda2",
      "lambda3",      "lambda4",      "lambda5",     "learning_rate",  "max_epoch",      "patience",
      "batch_source", "batch_target", "fine_tune_epochs", "omega_updates", "seed"};
  return keys;
}

TrainConfig TrainConfig::from_key_values(const KeyValues& kv) {
  TrainConfig c;
  ModelConfig& mc = c.model;
  HcnnConfig& h = mc.hcnn;
  mc.variant = parse_variant(kv.get_string("variant", std::string(variant_name(mc.variant))));
  mc.num_classes = kv.get_size("num_classes", mc.num_classes);
  h.m = kv.get_size("m", h.m);
  h.embedding_dim = kv.get_size("embedding_dim", h.embedding_dim);
  h.feature_maps = kv.get_size("feature_maps", h.feature_maps);
  h.window = kv.get_size("window", h.window);
  h.share_sentence_filters = kv.get_bool("share_filters", h.share_sentence_filters);
  h.use_bcnn = kv.get_bool("use_bcnn", h.use_bcnn);
  h.use_pyramid = kv.get_bool("use_pyramid", h.use_pyramid);
  h.pyr1_kernel = kv.get_size("pyr1_kernel", h.pyr1_kernel);
  h.pyr1_maps = kv.get_size("pyr1_maps", h.pyr1_maps);
  h.pyr1_stride = kv.get_size("pyr1_stride", h.pyr1_stride);
  h.pool1_size = kv.get_size("pool1_size", h.pool1_size);
  h.pool1_stride = kv.get_size("pool1_stride", h.pool1_stride);
  h.pyr2_kernel = kv.get_size("pyr2_kernel", h.pyr2_kernel);
  h.pyr2_maps = kv.get_size("pyr2_maps", h.pyr2_maps);
  h.pyr2_stride = kv.get_size("pyr2_stride", h.pyr2_stride);
  h.pool2_size = kv.get_size("pool2_size", h.pool2_size);
  h.pool2_stride = kv.get_size("pool2_stride", h.pool2_stride);
  const std::string priv = kv.get_string("private_encoders", "auto");
  if (priv != "auto") mc.private_encoders = kv.get_bool("private_encoders", false);
  mc.freeze_embeddings = kv.get_bool("freeze_embeddings", mc.freeze_embeddings);
  c.lambdas.adv = kv.get_double("lambda0", c.lambdas.adv);
  c.lambdas.trace = kv.get_double("lambda1", c.lambdas.trace);
  c.lambdas.heads = kv.get_double("lambda2", c.lambdas.heads);
  c.lambdas.shared = kv.get_double("lambda3", c.lambdas.shared);
  c.lambdas.source = kv.get_double("lambda4", c.lambdas.source);
  c.lambdas.target = kv.get_double("lambda5", c.lambdas.target);
  c.learning_rate = kv.get_double("learning_rate", c.learning_rate);
  c.max_epoch = kv.get_size("max_epoch", c.max_epoch);
  c.patience = kv.get_size("patience", c.patience);
  c.batch_source = kv.get_size("batch_source", c.batch_source);
  c.batch_target = kv.get_size("batch_target", c.batch_target);
  c.fine_tune_epochs = kv.get_size("fine_tune_epochs", c.fine_tune_epochs);
  c.omega_updates = kv.get_bool("omega_updates", c.omega_updates);
  c.seed = kv.get_u64("seed", c.seed);
  kv.reject_unused("training config");
  c.validate();
  return c;
}

std::string TrainConfig::to_key_values() const {
  const HcnnConfig& h = model.hcnn;
  auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  auto z = [](std::size_t v) { return std::to_string(v); };
  const std::vector<std::pair<std::string, std::string>> items = {
      {"variant", std::string(variant_name(model.variant))},
      {"num_classes", z(model.num_classes)},
      {"m", z(h.m)},
      {"embedding_dim", z(h.embedding_dim)},
      {"feature_maps", z(h.feature_maps)},
      {"window", z(h.window)},
      {"share_filters", b(h.share_sentence_filters)},
      {"use_bcnn", b(h.use_bcnn)},
      {"use_pyramid", b(h.use_pyramid)},
      {"pyr1_kernel", z(h.pyr1_kernel)},
      {"pyr1_maps", z(h.pyr1_maps)},
      {"pyr1_stride", z(h.pyr1_stride)},
      {"pool1_size", z(h.pool1_size)},
      {"pool1_stride", z(h.pool1_stride)},
      {"pyr2_kernel", z(h.pyr2_kernel)},
      {"pyr2_maps", z(h.pyr2_maps)},
      {"pyr2_stride", z(h.pyr2_stride)},
      {"pool2_size", z(h.pool2_size)},
      {"pool2_stride", z(h.pool2_stride)},
      {"private_encoders", model.private_encoders ? b(*model.private_encoders) : "auto"},
      {"freeze_embeddings", b(model.freeze_embeddings)},
      {"lambda0", fmt(lambdas.adv)},
      {"lambda1", fmt(lambdas.trace)},
      {"lambda2", fmt(lambdas.heads)},
      {"lambda3", fmt(lambdas.shared)},
      {"lambda4", fmt(lambdas.source)},
      {"lambda5", fmt(lambdas.target)},
      {"learning_rate", fmt(learning_rate)},
      {"max_epoch", z(max_epoch)},
      {"patience", z(patience)},
      {"batch_source", z(batch_source)},
      {"batch_target", z(batch_target)},
      {"fine_tune_epochs", z(fine_tune_epochs)},
      {"omega_updates", b(omega_updates)},
      {"seed", std::to_string(seed)},
  };
  std::string out;
  for (const auto& [k, v] : items) out += k + " = " + v + "\n";
  return out;
}

std::string history_header() { return "epoch, ce_src, ce_tgt, trace_term, adv_term, l2_term, dev_acc, dev_auc"; }

std::string format_record(const EpochRecord& r) {
  return std::to_string(r.epoch) + ", " + fmt(r.ce_src) + ", " + fmt(r.ce_tgt) + ", " + fmt(r.trace_term) + ", " +
         fmt(r.adv_term) + ", " + fmt(r.l2_term) + ", " + fmt(r.dev_acc) + ", " + fmt(r.dev_auc);
}

// ---------------------------------------------------------------------------

EvalReport evaluate(const Model& model, const Dataset& data, double threshold) {
  if (data.empty()) throw DataError("evaluate: empty dataset");
  const auto weights = ModelWeights<double>::from(model);
  const auto preds = predict_dataset(weights, data);
  EvalReport r;
  r.examples = data.size();
  std::vector<std::size_t> labels, golds;
  std::vector<double> scores;
  std::vector<int> binary;
  std::vector<ScoredPair> pairs;
  bool has_both[2] = {false, false};
  for (std::size_t i = 0; i < data.size(); ++i) {
    labels.push_back(preds[i].label);
    golds.push_back(static_cast<std::size_t>(data[i].label));
    scores.push_back(preds[i].positive);
    binary.push_back(data[i].label == 1 ? 1 : 0);
    if (data[i].label <= 1) has_both[data[i].label] = true;
    if (!data[i].query_id.empty()) {
      char id[24];
      std::snprintf(id, sizeof id, "%012zu", i);
      pairs.push_back({data[i].query_id, id, preds[i].positive, data[i].label == 1 ? 1 : 0});
    }
  }
  r.acc = accuracy(labels, golds);
  const bool binary_task = model.config().num_classes == 2;
  r.auc = binary_task && has_both[0] && has_both[1] ? auc(scores, binary) : std::numeric_limits<double>::quiet_NaN();
  if (!pairs.empty()) r.rank = rank_at_1(pairs, threshold);
  return r;
}

// ---------------------------------------------------------------------------

namespace {

std::uint64_t stream_seed(std::uint64_t root, std::size_t epoch, std::uint64_t salt) {
  return mix64(root ^ mix64(epoch * 0x100 + salt));
}

class Run {
 public:
  Run(const TrainConfig& cfg, const EmbeddingTable& table, const Dataset& dev, const EpochCallback& cb)
      : cfg_(cfg), dev_(dev), callback_(cb), result_{Model(cfg.model, table, mix64(cfg.seed)), Mat4::identity(0.25), {}, 0, 0.0, false, {}},
        opt_(cfg.learning_rate) {
    omega_inv_ = omega_inverse(result_.omega);
    best_ = result_.model.store().snapshot();
    best_omega_ = result_.omega;
  }

  Model& model() { return result_.model; }

  void reset_optimizer() { opt_ = AdaGrad(cfg_.learning_rate); }

  void step(std::span<const DomainBatch> batches, Domain params_of) {
    Model& m = result_.model;
    m.store().zero_grad();
    Graph g;
    const LossParts parts = build_loss(g, m, batches, omega_inv_, cfg_.lambdas);
    g.backward(parts.total);
    const auto params = m.step_parameters(params_of);
    opt_.step(params);
    for (const DomainBatch& b : batches) {
      if (b.indices.empty()) continue;
      if (b.domain == Domain::source) {
        src_sum_ += parts.ce_src;
        ++src_steps_;
      } else {
        tgt_sum_ += parts.ce_tgt;
        ++tgt_steps_;
      }
    }
    trace_sum_ += parts.trace;
    adv_sum_ += parts.adv;
    l2_sum_ += parts.l2;
    ++steps_;
  }

  void step_single(const Dataset& data, std::span<const std::size_t> idx, Domain d) {
    const DomainBatch b{&data, idx, d};
    step(std::span<const DomainBatch>(&b, 1), d);
  }

  void refresh_omega() {
    result_.omega = update_omega(stack_W(result_.model.heads()));
    omega_inv_ = omega_inverse(result_.omega);
    ++epoch_updates_;
  }

  /// Closes an epoch; returns false when early stopping triggers.
  bool finish_epoch() {
    EpochRecord r;
    r.epoch = ++epoch_;
    r.ce_src = src_steps_ ? src_sum_ / static_cast<double>(src_steps_) : 0.0;
    r.ce_tgt = tgt_steps_ ? tgt_sum_ / static_cast<double>(tgt_steps_) : 0.0;
    const double n = steps_ ? static_cast<double>(steps_) : 1.0;
    r.trace_term = trace_sum_ / n;
    r.adv_term = adv_sum_ / n;
    r.l2_term = l2_sum_ / n;
    r.omega_updates = epoch_updates_;
    for (double v : {r.ce_src, r.ce_tgt, r.trace_term, r.adv_term, r.l2_term}) {
      if (!std::isfinite(v)) throw NumericError("epoch " + std::to_string(r.epoch) + ": non-finite training loss");
    }
    bool keep_going = true;
    if (!dev_.empty()) {
      const EvalReport e = evaluate(result_.model, dev_);
      r.dev_acc = e.acc;
      r.dev_auc = e.auc;
      if (!have_best_ || r.dev_acc > result_.best_dev_acc) {
        remember_best(r);
        stale_ = 0;
      } else if (++stale_ >= cfg_.patience) {
        keep_going = false;
      }
    } else {
      r.dev_acc = r.dev_auc = std::numeric_limits<double>::quiet_NaN();
      remember_best(r);
    }
    result_.history.push_back(r);
    if (callback_) callback_(r);
    src_sum_ = tgt_sum_ = trace_sum_ = adv_sum_ = l2_sum_ = 0.0;
    src_steps_ = tgt_steps_ = steps_ = epoch_updates_ = 0;
    return keep_going;
  }

  std::size_t epoch() const { return epoch_; }

  void remember_best(const EpochRecord& r) {
    have_best_ = true;
    result_.best_dev_acc = r.dev_acc;
    result_.best_epoch = r.epoch;
    best_ = result_.model.store().snapshot();
    best_omega_ = result_.omega;
  }

  void restore_best() {
    if (!have_best_) return;
    result_.model.store().restore(best_);
    result_.omega = best_omega_;
  }

  /// Starts a new selection window (the fine-tune target phase).
  void reset_best() {
    have_best_ = false;
    result_.best_dev_acc = 0.0;
    stale_ = 0;
  }

  TrainResult finish() {
    restore_best();
    return std::move(result_);
  }

  void abort(const std::string& why) {
    result_.aborted = true;
    result_.abort_reason = why;
  }

 private:
  const TrainConfig& cfg_;
  const Dataset& dev_;
  const EpochCallback& callback_;
  TrainResult result_;
  AdaGrad opt_;
  Mat4 omega_inv_;
  std::vector<Tensor> best_;
  Mat4 best_omega_;
  bool have_best_ = false;
  std::size_t epoch_ = 0, stale_ = 0;
  double src_sum_ = 0, tgt_sum_ = 0, trace_sum_ = 0, adv_sum_ = 0, l2_sum_ = 0;
  std::size_t src_steps_ = 0, tgt_steps_ = 0, steps_ = 0, epoch_updates_ = 0;
};

constexpr std::uint64_t kSourceSalt = 1, kTargetSalt = 2, kMixedSalt = 3;

void require_nonempty(const Dataset& d, const char* what) {
  if (d.empty()) throw DataError(std::string(what) + " training set is empty");
}

// Source and target steps alternate; the target stream cycles, and every
// time it wraps Omega is recomputed from the stacked heads.
void alternating(Run& run, const TrainConfig& cfg, const Dataset& source, const Dataset& target) {
  const bool refresh = uses_trace(cfg.model.variant) && cfg.omega_updates;
  for (std::size_t e = 0; e < cfg.max_epoch; ++e) {
    const auto sb = batch_iter(source, cfg.batch_source, true, stream_seed(cfg.seed, run.epoch(), kSourceSalt));
    const auto tb = batch_iter(target, cfg.batch_target, true, stream_seed(cfg.seed, run.epoch(), kTargetSalt));
    std::size_t c_t = 0;
    for (std::size_t c_s = 0; c_s < sb.size(); ++c_s) {
      run.step_single(source, sb[c_s].indices, Domain::source);
      run.step_single(target, tb[c_t].indices, Domain::target);
      if (++c_t == tb.size()) {
        c_t = 0;
        if (refresh) run.refresh_omega();
      }
    }
    if (!run.finish_epoch()) return;
  }
}

void single_domain(Run& run, const TrainConfig& cfg, std::size_t epochs, const Dataset& data, Domain d,
                   std::size_t batch) {
  const std::uint64_t salt = d == Domain::source ? kSourceSalt : kTargetSalt;
  for (std::size_t e = 0; e < epochs; ++e) {
    for (const Batch& b : batch_iter(data, batch, true, stream_seed(cfg.seed, run.epoch(), salt))) {
      run.step_single(data, b.indices, d);
    }
    if (!run.finish_epoch()) return;
  }
}

void mixed(Run& run, const TrainConfig& cfg, const Dataset& source, const Dataset& target) {
  Dataset all = source;
  all.insert(all.end(), target.begin(), target.end());
  for (std::size_t e = 0; e < cfg.max_epoch; ++e) {
    for (const Batch& b : batch_iter(all, cfg.batch_source, true, stream_seed(cfg.seed, run.epoch(), kMixedSalt))) {
      std::vector<std::size_t> src, tgt;
      for (std::size_t i : b.indices) (all[i].domain == Domain::source ? src : tgt).push_back(i);
      const DomainBatch parts[2] = {{&all, src, Domain::source}, {&all, tgt, Domain::target}};
      run.step(parts, Domain::source);
    }
    if (!run.finish_epoch()) return;
  }
}

TrainResult run_variant(const TrainConfig& cfg, const EmbeddingTable& table, const Dataset& source,
                        const Dataset& target, const Dataset& dev, const EpochCallback& cb) {
  cfg.validate();
  Run run(cfg, table, dev, cb);
  try {
    switch (cfg.model.variant) {
      case Variant::tgt_only:
        require_nonempty(target, "target");
        single_domain(run, cfg, cfg.max_epoch, target, Domain::target, cfg.batch_target);
        break;
      case Variant::src_only:
        require_nonempty(source, "source");
        single_domain(run, cfg, cfg.max_epoch, source, Domain::source, cfg.batch_source);
        break;
      case Variant::mixed:
        require_nonempty(source, "source");
        require_nonempty(target, "target");
        mixed(run, cfg, source, target);
        break;
      case Variant::fine_tune: {
        require_nonempty(source, "source");
        require_nonempty(target, "target");
        single_domain(run, cfg, cfg.max_epoch, source, Domain::source, cfg.batch_source);
        if (cfg.fine_tune_epochs > 0) {
          // continue from the best source-phase parameters with a fresh optimizer
          run.restore_best();
          run.reset_optimizer();
          run.reset_best();
          single_domain(run, cfg, cfg.fine_tune_epochs, target, Domain::target, cfg.batch_target);
        }
        break;
      }
      default:
        require_nonempty(source, "source");
        require_nonempty(target, "target");
        alternating(run, cfg, source, target);
    }
  } catch (const NumericError& e) {
    run.abort(e.what());
  }
  return run.finish();
}

}  // namespace

TrainResult train_drss(const TrainConfig& config, const EmbeddingTable& table, const Dataset& source,
                       const Dataset& target, const Dataset& dev, const EpochCallback& on_epoch) {
  if (!uses_trace(config.model.variant)) {
    throw ConfigError("train_drss: variant " + std::string(variant_name(config.model.variant)) + " is not drss or drss-adv");
  }
  return run_variant(config, table, source, target, dev, on_epoch);
}

TrainResult train_baseline(const TrainConfig& config, const EmbeddingTable& table, const Dataset& source,
                           const Dataset& target, const Dataset& dev, const EpochCallback& on_epoch) {
  if (uses_trace(config.model.variant)) {
    throw ConfigError("train_baseline: variant " + std::string(variant_name(config.model.variant)) +
                      " is trained with train_drss");
  }
  return run_variant(config, table, source, target, dev, on_epoch);
}

TrainResult train(const TrainConfig& config, const EmbeddingTable& table, const Dataset& source,
                  const Dataset& target, const Dataset& dev, const EpochCallback& on_epoch) {
  return uses_trace(config.model.variant) ? train_drss(config, table, source, target, dev, on_epoch)
                                          : train_baseline(config, table, source, target, dev, on_epoch);
}

}  // namespace drtl

namespace drtl {

GradCheckReport model_grad_check(const ModelConfig& config, const LossWeights& weights, std::size_t batch,
                                 std::uint64_t seed, const GradCheckOptions& options) {
  config.validate();
  weights.validate();
  if (batch == 0) throw ConfigError("gradcheck batch must be >= 1");
  Rng rng(mix64(seed));
  EmbeddingTable table = make_embedding_table(config.hcnn.embedding_dim, mix64(seed + 1));
  std::vector<std::string> words;
  for (int i = 0; i < 12; ++i) words.push_back("w" + std::to_string(i));
  table.extend(words);

  const std::size_t max_len = std::max<std::size_t>(config.hcnn.m, 3);
  std::uniform_int_distribution<int> id(2, static_cast<int>(table.vocab.size()) - 1), label(0, 1);
  std::uniform_int_distribution<std::size_t> len(1, max_len);
  auto make = [&](Domain d) {
    Dataset data(batch);
    for (Example& ex : data) {
      ex.s1.resize(len(rng));
      ex.s2.resize(len(rng));
      for (int& v : ex.s1) v = id(rng);
      for (int& v : ex.s2) v = id(rng);
      ex.label = label(rng) % static_cast<int>(config.num_classes);
      ex.domain = d;
    }
    return data;
  };
  const Dataset src = make(Domain::source), tgt = make(Domain::target);
  std::vector<std::size_t> idx(batch);
  for (std::size_t i = 0; i < batch; ++i) idx[i] = i;

  Model model(config, table, mix64(seed + 2));
  std::uniform_real_distribution<double> bias(0.05, 0.3), unit(-1.0, 1.0);
  for (Parameter* p : model.store().all()) {
    const std::string& n = p->name;
    if (n.find("bias") != std::string::npos || n == "head.b_s" || n == "head.b_t" || n == "adv.b_d") {
      for (double& v : p->value.values()) v = bias(rng);
    }
  }
  Mat4 b;
  for (double& v : b.a) v = unit(rng);
  Mat4 omega = b * b.transposed();
  omega = (1.0 / omega.trace()) * omega;
  const Mat4 oinv = omega_inverse(omega);

  std::vector<DomainBatch> batches = {{&src, idx, Domain::source}, {&tgt, idx, Domain::target}};
  auto params = model.store().all();
  std::erase_if(params, [](const Parameter* p) { return p->frozen; });
  return grad_check([&](Graph& g) { return build_loss(g, model, batches, oinv, weights).total; }, params,
                    Model::group_of, options);
}

}  // namespace drtl
