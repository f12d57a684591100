#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "drtl/data.hpp"
#include "drtl/hcnn.hpp"
#include "drtl/heads.hpp"
#include "drtl/omega.hpp"

namespace drtl {

struct ModelConfig {
  Variant variant = Variant::drss;
  HcnnConfig hcnn;
  std::size_t num_classes = 2;
  /// When set, must agree with the variant (e.g. FS with private encoders is rejected).
  std::optional<bool> private_encoders;
  bool freeze_embeddings = false;

  void validate() const;
};

/// Every trainable tensor of one matcher. Parameter names:
///   embeddings, enc_c.*, enc_s.*, enc_t.*, head.{W_s,W_sc,W_t,W_tc,b_s,b_t}, adv.{W_d,b_d}
class Model {
 public:
  Model(const ModelConfig& config, const EmbeddingTable& table, std::uint64_t seed);

  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  ParameterStore& store() { return store_; }
  const ParameterStore& store() const { return store_; }

  Parameter& embeddings() { return *embeddings_; }
  const Parameter& embeddings() const { return *embeddings_; }
  const HcnnParams& shared_encoder() const { return enc_c_; }
  /// Null outside the SS family.
  const HcnnParams* private_encoder(Domain domain) const;
  const OutputHeads& heads() const { return heads_; }
  const AdvHead& adversary() const { return adv_; }

  /// Representation size q of every encoder.
  std::size_t q() const { return hcnn_output_dim(config_.hcnn); }

  /// Parameters a step on `domain` updates: the shared encoder, that domain's
  /// private encoder, all head weights, that domain's bias, the adversary and
  /// the embeddings.
  std::vector<Parameter*> step_parameters(Domain domain) const;

  /// Report group of a parameter: embeddings, theta_c, theta_s, theta_t, heads or adversary.
  static std::string group_of(const Parameter& p);

 private:
  ModelConfig config_;
  Vocabulary vocab_;
  ParameterStore store_;
  Parameter* embeddings_ = nullptr;
  HcnnParams enc_c_;
  std::optional<HcnnParams> enc_s_, enc_t_;
  OutputHeads heads_;
  AdvHead adv_;
};

/// Indices of `data` trained on together, all tagged with `domain`.
struct DomainBatch {
  const Dataset* data = nullptr;
  std::span<const std::size_t> indices;
  Domain domain = Domain::source;
};

/// The objective and its components as plain numbers (for history records).
struct LossParts {
  Var total;
  double total_value = 0.0;
  double ce_src = 0.0;
  double ce_tgt = 0.0;
  double trace = 0.0;
  double adv = 0.0;
  double l2 = 0.0;
};

/// Per-domain averaged cross-entropy plus every regularizer the variant uses:
///   + lambda0 * adversarial entropy (Adv variants)
///   + lambda1/2 * tr(W Omega^-1 W^T) (DRSS variants, skipped when lambda1 = 0)
///   + lambda2/2 * ||W||^2 + lambda3/2 * ||Theta_c||^2
///   + lambda4/2 * ||Theta_s||^2 if a source batch is present, lambda5/2 * ||Theta_t||^2 likewise.
/// Embeddings are trained but not regularized.
LossParts build_loss(Graph& g, const Model& model, std::span<const DomainBatch> batches, const Mat4& omega_inv,
                     const LossWeights& weights);

/// Frozen copy of a model in precision T for untaped inference.
template <typename T>
struct ModelWeights {
  ModelConfig config;
  BasicTensor<T> embeddings;
  HcnnWeights<T> enc_c;
  std::optional<HcnnWeights<T>> enc_s, enc_t;
  HeadWeights<T> heads;

  static ModelWeights from(const Model& model);

  /// Padded sentence matrix [m x l] for ids already padded to m.
  BasicTensor<T> embed(std::span<const int> ids) const;
  /// Class distribution for an encoded pair (unpadded ids are padded here).
  std::vector<T> predict(const std::vector<int>& s1, const std::vector<int>& s2, Domain domain) const;
};

extern template struct ModelWeights<float>;
extern template struct ModelWeights<double>;

struct Prediction {
  std::size_t label = 0;
  /// Probability of class 1.
  double positive = 0.0;
};

/// Predictions for every example, each with the head of its own domain.
std::vector<Prediction> predict_dataset(const ModelWeights<double>& weights, const Dataset& data);

}  // namespace drtl
