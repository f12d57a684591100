#include "drtl/heads.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "drtl/error.hpp"
#include "drtl/kernels.hpp"

namespace drtl {

namespace k = kernels;

namespace {

constexpr std::pair<Variant, std::string_view> kVariantNames[] = {
    {Variant::tgt_only, "tgt-only"}, {Variant::src_only, "src-only"}, {Variant::mixed, "mixed"},
    {Variant::fine_tune, "fine-tune"}, {Variant::fs, "fs"},           {Variant::ss, "ss"},
    {Variant::ss_adv, "ss-adv"},     {Variant::drss, "drss"},         {Variant::drss_adv, "drss-adv"},
};

void require_domain(Domain d) {
  if (d != Domain::source && d != Domain::target) throw ConfigError("unknown domain tag");
}

}  // namespace

std::string_view variant_name(Variant v) {
  for (const auto& [variant, name] : kVariantNames) {
    if (variant == v) return name;
  }
  throw ConfigError("unknown variant");
}

Variant parse_variant(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) {
    return c == '_' ? '-' : static_cast<char>(std::tolower(c));
  });
  for (const auto& [variant, name] : kVariantNames) {
    if (name == lower) return variant;
  }
  throw ConfigError("unknown variant '" + std::string(text) +
                    "' (expected tgt-only, src-only, mixed, fine-tune, fs, ss, ss-adv, drss or drss-adv)");
}

bool is_single_encoder(Variant v) {
  return v == Variant::tgt_only || v == Variant::src_only || v == Variant::mixed || v == Variant::fine_tune;
}

bool has_private_encoders(Variant v) {
  return v == Variant::ss || v == Variant::ss_adv || v == Variant::drss || v == Variant::drss_adv;
}

bool is_adversarial(Variant v) { return v == Variant::ss_adv || v == Variant::drss_adv; }

bool uses_trace(Variant v) { return v == Variant::drss || v == Variant::drss_adv; }

void LossWeights::validate() const {
  const std::pair<const char*, double> all[] = {{"lambda0", adv},    {"lambda1", trace},  {"lambda2", heads},
                                                {"lambda3", shared}, {"lambda4", source}, {"lambda5", target}};
  for (const auto& [name, v] : all) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(std::string(name) + " must be a finite value >= 0");
  }
}

// ---------------------------------------------------------------------------

Parameter* OutputHeads::shared_weight(Domain domain) const {
  require_domain(domain);
  if (domain == Domain::target && W_tc) return W_tc;
  return W_sc;
}

Parameter* OutputHeads::bias(Domain domain) const {
  require_domain(domain);
  if (domain == Domain::target && b_t) return b_t;
  return b_s;
}

Parameter* OutputHeads::private_weight(Domain domain) const {
  require_domain(domain);
  return domain == Domain::source ? W_s : W_t;
}

std::vector<Parameter*> OutputHeads::weights() const {
  std::vector<Parameter*> out;
  for (Parameter* p : {W_s, W_sc, W_t, W_tc}) {
    if (p) out.push_back(p);
  }
  return out;
}

std::vector<Parameter*> OutputHeads::parameters() const {
  std::vector<Parameter*> out = weights();
  for (Parameter* p : {b_s, b_t}) {
    if (p) out.push_back(p);
  }
  return out;
}

template <typename T>
HeadWeights<T> HeadWeights<T>::from(const OutputHeads& heads) {
  auto cast = [](const Parameter* p) { return p ? p->value.cast<T>() : BasicTensor<T>{}; };
  return {cast(heads.W_s), cast(heads.W_sc), cast(heads.W_t), cast(heads.W_tc), cast(heads.b_s), cast(heads.b_t)};
}

namespace {

template <typename T>
BasicTensor<T> shared_logits(const BasicTensor<T>& z_c, Domain domain, const HeadWeights<T>& h) {
  require_domain(domain);
  const bool target_head = domain == Domain::target && h.W_tc.size() != 0;
  const BasicTensor<T>& w = target_head ? h.W_tc : h.W_sc;
  const BasicTensor<T>& b = domain == Domain::target && h.b_t.size() != 0 ? h.b_t : h.b_s;
  if (w.size() == 0) throw ConfigError("prediction: no output head for domain " + std::string(domain_name(domain)));
  return k::affine(z_c, w, &b);
}

}  // namespace

template <typename T>
std::vector<T> fs_predict(const BasicTensor<T>& z_c, Domain domain, const HeadWeights<T>& heads) {
  const BasicTensor<T> logits = shared_logits(z_c, domain, heads);
  return k::softmax<T>(logits.span());
}

template <typename T>
std::vector<T> ss_predict(const BasicTensor<T>& z_c, const BasicTensor<T>& z_dom, Domain domain,
                          const HeadWeights<T>& heads) {
  BasicTensor<T> logits = shared_logits(z_c, domain, heads);
  const BasicTensor<T>& w = domain == Domain::source ? heads.W_s : heads.W_t;
  if (w.size() == 0) throw ConfigError("ss_predict: model has no private head for domain " + std::string(domain_name(domain)));
  const BasicTensor<T> extra = k::affine<T>(z_dom, w, nullptr);
  for (std::size_t i = 0; i < logits.size(); ++i) logits[i] += extra[i];
  return k::softmax<T>(logits.span());
}

template struct HeadWeights<float>;
template struct HeadWeights<double>;
template std::vector<float> fs_predict(const TensorF&, Domain, const HeadWeights<float>&);
template std::vector<double> fs_predict(const Tensor&, Domain, const HeadWeights<double>&);
template std::vector<float> ss_predict(const TensorF&, const TensorF&, Domain, const HeadWeights<float>&);
template std::vector<double> ss_predict(const Tensor&, const Tensor&, Domain, const HeadWeights<double>&);

// ---------------------------------------------------------------------------

namespace {

std::vector<Parameter*> four_heads(const OutputHeads& heads, const char* what) {
  std::vector<Parameter*> cols = {heads.W_s, heads.W_sc, heads.W_t, heads.W_tc};
  for (std::size_t c = 0; c < 4; ++c) {
    if (!cols[c]) throw ConfigError(std::string(what) + ": head " + kOmegaLabels[c] + " is absent for this variant");
    if (cols[c]->value.shape() != cols[0]->value.shape()) {
      throw ShapeError(std::string(what) + ": head " + kOmegaLabels[c] + " has shape " +
                       shape_string(cols[c]->value.shape()) + ", expected " + shape_string(cols[0]->value.shape()));
    }
  }
  return cols;
}

}  // namespace

Tensor stack_W(const OutputHeads& heads) {
  const auto cols = four_heads(heads, "stack_W");
  const std::size_t n = cols[0]->value.size();
  Tensor w({n, 4});
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t r = 0; r < n; ++r) w[r * 4 + c] = cols[c]->value[r];
  return w;
}

void unstack_W(const Tensor& stacked, const OutputHeads& heads) {
  const auto cols = four_heads(heads, "unstack_W");
  const std::size_t n = cols[0]->value.size();
  if (stacked.shape() != Shape{n, 4}) {
    throw ShapeError("unstack_W: expected " + shape_string({n, 4}) + ", got " + shape_string(stacked.shape()));
  }
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t r = 0; r < n; ++r) cols[c]->value[r] = stacked[r * 4 + c];
}

Var trace_penalty(Graph& g, const OutputHeads& heads, const Mat4& omega_inv) {
  const auto cols = four_heads(heads, "trace_penalty");
  std::vector<Var> inputs;
  for (Parameter* p : cols) inputs.push_back(g.param(*p));
  const std::size_t n = cols[0]->value.size();
  // value = sum_ij Oinv_ij <w_i, w_j>
  double dots[4][4];
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < n; ++r) s += cols[i]->value[r] * cols[j]->value[r];
      dots[i][j] = s;
    }
  double value = 0.0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) value += omega_inv(i, j) * dots[i][j];
  if (!std::isfinite(value)) {
    throw NumericError("trace penalty is not finite (" + std::to_string(value) + "); Omega is near singular");
  }
  return g.emit(Tensor({1}, std::vector<double>{value}), inputs,
                [inputs, omega_inv, n](Graph& gr, const Tensor&, const Tensor& go) {
                  std::vector<const Tensor*> w;
                  for (Var v : inputs) w.push_back(&gr.value(v));
                  for (std::size_t kk = 0; kk < 4; ++kk) {
                    Tensor* sink = gr.grad_sink(inputs[kk]);
                    if (!sink) continue;
                    for (std::size_t j = 0; j < 4; ++j) {
                      const double c = go[0] * (omega_inv(kk, j) + omega_inv(j, kk));
                      if (c == 0.0) continue;
                      for (std::size_t r = 0; r < n; ++r) (*sink)[r] += c * (*w[j])[r];
                    }
                  }
                });
}

double adversarial_entropy(const std::vector<std::vector<double>>& domain_logits, const std::vector<Domain>& domains) {
  if (domain_logits.size() != domains.size()) throw ShapeError("adversarial_entropy: one domain tag per instance");
  double sums[2] = {0.0, 0.0};
  std::size_t counts[2] = {0, 0};
  for (std::size_t i = 0; i < domains.size(); ++i) {
    const auto logp = k::log_softmax<double>(domain_logits[i]);
    double h = 0.0;
    for (double lp : logp) h += std::exp(lp) * lp;
    const int d = domains[i] == Domain::source ? 0 : 1;
    sums[d] += h;
    ++counts[d];
  }
  double total = 0.0;
  for (int d = 0; d < 2; ++d) {
    if (counts[d]) total += sums[d] / static_cast<double>(counts[d]);
  }
  return total;
}

}  // namespace drtl
