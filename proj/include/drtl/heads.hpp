#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "drtl/data.hpp"
#include "drtl/graph.hpp"
#include "drtl/omega.hpp"

namespace drtl {

enum class Variant { tgt_only, src_only, mixed, fine_tune, fs, ss, ss_adv, drss, drss_adv };

std::string_view variant_name(Variant v);
/// Accepts the names printed by variant_name ("tgt-only", "drss-adv", ...), case-insensitive.
Variant parse_variant(std::string_view text);

/// One encoder and one output head, shared by both domains.
bool is_single_encoder(Variant v);
/// Shared plus per-domain private encoders (SS family).
bool has_private_encoders(Variant v);
bool is_adversarial(Variant v);
bool uses_trace(Variant v);

struct LossWeights {
  double adv = 0.05;        // lambda0
  double trace = 0.0008;    // lambda1
  double heads = 0.0004;    // lambda2, over the stacked head weights
  double shared = 0.0004;   // lambda3, Theta_c
  double source = 0.0004;   // lambda4, Theta_s
  double target = 0.0004;   // lambda5, Theta_t

  void validate() const;
};

/// Output layer parameters. Heads a variant does not use stay null:
/// single-encoder models hold only W_sc and b_s, FS adds W_tc and b_t.
struct OutputHeads {
  Parameter* W_s = nullptr;
  Parameter* W_sc = nullptr;
  Parameter* W_t = nullptr;
  Parameter* W_tc = nullptr;
  Parameter* b_s = nullptr;
  Parameter* b_t = nullptr;

  /// Shared-representation head and bias used for `domain`.
  Parameter* shared_weight(Domain domain) const;
  Parameter* bias(Domain domain) const;
  /// Private-representation head for `domain` (null outside the SS family).
  Parameter* private_weight(Domain domain) const;

  /// Present weight matrices in W_s, W_sc, W_t, W_tc order.
  std::vector<Parameter*> weights() const;
  std::vector<Parameter*> parameters() const;
};

struct AdvHead {
  Parameter* W_d = nullptr;
  Parameter* b_d = nullptr;
};

/// Frozen head weights in precision T. Absent heads are empty tensors.
template <typename T>
struct HeadWeights {
  BasicTensor<T> W_s, W_sc, W_t, W_tc, b_s, b_t;

  static HeadWeights from(const OutputHeads& heads);
};

/// softmax(W_xc z_c + b_x) for the requested domain x.
template <typename T>
std::vector<T> fs_predict(const BasicTensor<T>& z_c, Domain domain, const HeadWeights<T>& heads);

/// softmax(W_xc z_c + W_x z_x + b_x) for the requested domain x.
template <typename T>
std::vector<T> ss_predict(const BasicTensor<T>& z_c, const BasicTensor<T>& z_dom, Domain domain,
                          const HeadWeights<T>& heads);

/// Columns W_s, W_sc, W_t, W_tc, each the row-major flatten of its head. Shape [q|Y| x 4].
Tensor stack_W(const OutputHeads& heads);
/// Writes the columns of `stacked` back into the four heads.
void unstack_W(const Tensor& stacked, const OutputHeads& heads);

/// tr(W Omega^-1 W^T) as a graph node over the four head parameters.
Var trace_penalty(Graph& g, const OutputHeads& heads, const Mat4& omega_inv);

/// sum_k (1/n_k) sum_i sum_j p_ij log p_ij over per-instance domain logits,
/// grouped by the domain each instance came from.
double adversarial_entropy(const std::vector<std::vector<double>>& domain_logits, const std::vector<Domain>& domains);

}  // namespace drtl
