#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "drtl/config.hpp"
#include "drtl/gradcheck.hpp"
#include "drtl/metrics.hpp"
#include "drtl/model.hpp"

namespace drtl {

struct TrainConfig {
  ModelConfig model;
  LossWeights lambdas;
  double learning_rate = 0.08;
  std::size_t max_epoch = 10;
  /// Epochs without a dev-accuracy improvement before stopping.
  std::size_t patience = 3;
  std::size_t batch_source = 64;
  std::size_t batch_target = 64;
  /// Target-phase epochs of the fine-tune baseline.
  std::size_t fine_tune_epochs = 10;
  /// Recompute Omega each time the target stream wraps (DRSS variants).
  bool omega_updates = true;
  std::uint64_t seed = 1;

  void validate() const;

  /// Reads every documented key (see README); unknown keys are rejected.
  static TrainConfig from_key_values(const KeyValues& kv);
  /// `key = value` lines that from_key_values reads back exactly.
  std::string to_key_values() const;
};

/// Documented configuration keys, in to_key_values order.
const std::vector<std::string>& train_config_keys();

struct EpochRecord {
  std::size_t epoch = 0;
  double ce_src = 0.0;
  double ce_tgt = 0.0;
  double trace_term = 0.0;
  double adv_term = 0.0;
  double l2_term = 0.0;
  double dev_acc = 0.0;
  double dev_auc = 0.0;
  std::size_t omega_updates = 0;
};

/// "epoch, ce_src, ce_tgt, trace_term, adv_term, l2_term, dev_acc, dev_auc".
std::string history_header();
std::string format_record(const EpochRecord& r);

struct EvalReport {
  std::size_t examples = 0;
  double acc = 0.0;
  /// NaN when only one class is present or the task is not binary.
  double auc = 0.0;
  /// Present when the data carries query ids.
  std::optional<RankAt1> rank;
};

EvalReport evaluate(const Model& model, const Dataset& data, double threshold = 0.5);

struct TrainResult {
  Model model;
  Mat4 omega = Mat4::identity(0.25);
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_dev_acc = 0.0;
  /// Set when a non-finite loss or update stopped training; the model then
  /// holds the last good parameters.
  bool aborted = false;
  std::string abort_reason;
};

/// Called after every epoch (for progress output).
using EpochCallback = std::function<void(const EpochRecord&)>;

/// Alternating source/target training with the closed-form Omega refresh.
/// Requires a DRSS variant.
TrainResult train_drss(const TrainConfig& config, const EmbeddingTable& table, const Dataset& source,
                       const Dataset& target, const Dataset& dev, const EpochCallback& on_epoch = {});

/// Tgt-Only, Src-Only, Mixed, Fine-Tune, FS, SS and SS-Adv.
TrainResult train_baseline(const TrainConfig& config, const EmbeddingTable& table, const Dataset& source,
                           const Dataset& target, const Dataset& dev, const EpochCallback& on_epoch = {});

/// Dispatches on the configured variant.
TrainResult train(const TrainConfig& config, const EmbeddingTable& table, const Dataset& source,
                  const Dataset& target, const Dataset& dev, const EpochCallback& on_epoch = {});

/// Finite-difference check of the full objective on a random toy model:
/// `batch` random pairs per domain over a 12-token vocabulary, random non-zero
/// biases and a random feasible Omega. Groups are those of Model::group_of.
GradCheckReport model_grad_check(const ModelConfig& config, const LossWeights& weights, std::size_t batch,
                                 std::uint64_t seed, const GradCheckOptions& options = {});

}  // namespace drtl
