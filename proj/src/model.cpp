#include "drtl/model.hpp"

#include <algorithm>

#include "drtl/error.hpp"

namespace drtl {

void ModelConfig::validate() const {
  hcnn.validate();
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (private_encoders && *private_encoders != has_private_encoders(variant)) {
    throw ConfigError(std::string("variant ") + std::string(variant_name(variant)) +
                      (*private_encoders ? " has no domain-specific encoders" : " requires domain-specific encoders"));
  }
}

Model::Model(const ModelConfig& config, const EmbeddingTable& table, std::uint64_t seed)
    : config_(config), vocab_(table.vocab) {
  config_.validate();
  if (table.dim() != config_.hcnn.embedding_dim) {
    throw ConfigError("embedding table has dimension " + std::to_string(table.dim()) + " but the model expects " +
                      std::to_string(config_.hcnn.embedding_dim));
  }
  Rng rng(seed);
  embeddings_ = &store_.add("embeddings", table.matrix);
  embeddings_->masked_rows = {static_cast<std::size_t>(Vocabulary::pad_id)};
  embeddings_->frozen = config_.freeze_embeddings;

  const Variant v = config_.variant;
  enc_c_ = make_hcnn(store_, "enc_c.", config_.hcnn, rng);
  if (has_private_encoders(v)) {
    enc_s_ = make_hcnn(store_, "enc_s.", config_.hcnn, rng);
    enc_t_ = make_hcnn(store_, "enc_t.", config_.hcnn, rng);
  }
  const std::size_t q = this->q(), Y = config_.num_classes;
  auto head = [&](const char* name) {
    Parameter& p = store_.add(std::string("head.") + name, Tensor({Y, q}));
    init_fan_uniform(p.value, q, Y, rng);
    return &p;
  };
  if (has_private_encoders(v)) heads_.W_s = head("W_s");
  heads_.W_sc = head("W_sc");
  if (!is_single_encoder(v)) {
    if (has_private_encoders(v)) heads_.W_t = head("W_t");
    heads_.W_tc = head("W_tc");
  }
  heads_.b_s = &store_.add("head.b_s", Tensor({Y}));
  if (!is_single_encoder(v)) heads_.b_t = &store_.add("head.b_t", Tensor({Y}));
  if (is_adversarial(v)) {
    adv_.W_d = &store_.add("adv.W_d", Tensor({2, q}));
    init_fan_uniform(adv_.W_d->value, q, 2, rng);
    adv_.b_d = &store_.add("adv.b_d", Tensor({2}));
  }
}

const HcnnParams* Model::private_encoder(Domain domain) const {
  const auto& e = domain == Domain::source ? enc_s_ : enc_t_;
  return e ? &*e : nullptr;
}

std::vector<Parameter*> Model::step_parameters(Domain domain) const {
  std::vector<Parameter*> out = {embeddings_};
  auto append = [&out](const std::vector<Parameter*>& ps) { out.insert(out.end(), ps.begin(), ps.end()); };
  append(enc_c_.parameters());
  if (const HcnnParams* p = private_encoder(domain)) append(p->parameters());
  append(heads_.weights());
  out.push_back(heads_.bias(domain));
  if (adv_.W_d) {
    out.push_back(adv_.W_d);
    out.push_back(adv_.b_d);
  }
  return out;
}

std::string Model::group_of(const Parameter& p) {
  const std::string& n = p.name;
  if (n == "embeddings") return "embeddings";
  if (n.rfind("enc_c.", 0) == 0) return "theta_c";
  if (n.rfind("enc_s.", 0) == 0) return "theta_s";
  if (n.rfind("enc_t.", 0) == 0) return "theta_t";
  if (n.rfind("head.", 0) == 0) return "heads";
  if (n.rfind("adv.", 0) == 0) return "adversary";
  return n;
}

// ---------------------------------------------------------------------------

namespace {

Var sum_or_zero(Graph& g, const std::vector<Var>& terms) {
  if (terms.empty()) return g.constant(Tensor({1}));
  return terms.size() == 1 ? terms.front() : g.sum(terms);
}

Var half_squared_norms(Graph& g, const std::vector<Parameter*>& params, double lambda) {
  std::vector<Var> norms;
  for (Parameter* p : params) norms.push_back(g.squared_norm(g.param(*p)));
  return g.scale(sum_or_zero(g, norms), 0.5 * lambda);
}

}  // namespace

LossParts build_loss(Graph& g, const Model& model, std::span<const DomainBatch> batches, const Mat4& omega_inv,
                     const LossWeights& w) {
  w.validate();
  const ModelConfig& cfg = model.config();
  const std::size_t m = cfg.hcnn.m;
  Parameter& emb = const_cast<Model&>(model).embeddings();
  const OutputHeads& heads = model.heads();
  const bool adversarial = is_adversarial(cfg.variant);

  LossParts parts;
  std::vector<Var> terms, regs;
  bool saw[2] = {false, false};
  for (const DomainBatch& batch : batches) {
    if (batch.indices.empty()) continue;
    if (!batch.data) throw ShapeError("build_loss: batch without data");
    const Domain d = batch.domain;
    saw[d == Domain::source ? 0 : 1] = true;
    const HcnnParams* priv = model.private_encoder(d);
    Parameter* w_shared = heads.shared_weight(d);
    Parameter* bias = heads.bias(d);
    Parameter* w_priv = priv ? heads.private_weight(d) : nullptr;

    std::vector<Var> ces, ents;
    for (std::size_t idx : batch.indices) {
      const Example& ex = batch.data->at(idx);
      const std::vector<int> ids1 = pad_to(ex.s1, m), ids2 = pad_to(ex.s2, m);
      Var x1 = g.lookup(emb, ids1), x2 = g.lookup(emb, ids2);
      Var zc = hcnn_forward(g, x1, x2, model.shared_encoder());
      Var logits = g.affine(zc, g.param(*w_shared), g.param(*bias));
      if (priv) logits = g.add(logits, g.matvec(g.param(*w_priv), hcnn_forward(g, x1, x2, *priv)));
      ces.push_back(g.softmax_cross_entropy(logits, static_cast<std::size_t>(ex.label)));
      if (adversarial) {
        const AdvHead& adv = model.adversary();
        ents.push_back(g.entropy_term(g.affine(zc, g.param(*adv.W_d), g.param(*adv.b_d))));
      }
    }
    const double inv_n = 1.0 / static_cast<double>(ces.size());
    Var ce = g.scale(g.sum(ces), inv_n);
    (d == Domain::source ? parts.ce_src : parts.ce_tgt) += g.scalar(ce);
    terms.push_back(ce);
    if (adversarial) {
      Var ent = g.scale(g.sum(ents), inv_n);
      parts.adv += g.scalar(ent);
      terms.push_back(g.scale(ent, w.adv));
    }
  }
  if (terms.empty()) throw ShapeError("build_loss: no examples in any batch");

  if (uses_trace(cfg.variant) && w.trace > 0.0) {
    Var tr = trace_penalty(g, heads, omega_inv);
    parts.trace = g.scalar(tr);
    terms.push_back(g.scale(tr, 0.5 * w.trace));
  }
  regs.push_back(half_squared_norms(g, heads.weights(), w.heads));
  regs.push_back(half_squared_norms(g, model.shared_encoder().parameters(), w.shared));
  if (saw[0] && model.private_encoder(Domain::source)) {
    regs.push_back(half_squared_norms(g, model.private_encoder(Domain::source)->parameters(), w.source));
  }
  if (saw[1] && model.private_encoder(Domain::target)) {
    regs.push_back(half_squared_norms(g, model.private_encoder(Domain::target)->parameters(), w.target));
  }
  Var l2 = g.sum(regs);
  parts.l2 = g.scalar(l2);
  terms.push_back(l2);

  parts.total = g.sum(terms);
  parts.total_value = g.scalar(parts.total);
  if (!std::isfinite(parts.total_value)) {
    throw NumericError("loss is not finite (ce_src=" + std::to_string(parts.ce_src) +
                       ", ce_tgt=" + std::to_string(parts.ce_tgt) + ", trace=" + std::to_string(parts.trace) + ")");
  }
  return parts;
}

// ---------------------------------------------------------------------------

template <typename T>
ModelWeights<T> ModelWeights<T>::from(const Model& model) {
  ModelWeights<T> w;
  w.config = model.config();
  w.embeddings = model.embeddings().value.cast<T>();
  w.enc_c = HcnnWeights<T>::from(model.shared_encoder());
  if (const HcnnParams* p = model.private_encoder(Domain::source)) w.enc_s = HcnnWeights<T>::from(*p);
  if (const HcnnParams* p = model.private_encoder(Domain::target)) w.enc_t = HcnnWeights<T>::from(*p);
  w.heads = HeadWeights<T>::from(model.heads());
  return w;
}

template <typename T>
BasicTensor<T> ModelWeights<T>::embed(std::span<const int> ids) const {
  const std::size_t l = embeddings.dim(1), V = embeddings.dim(0);
  BasicTensor<T> x({ids.size(), l});
  for (std::size_t t = 0; t < ids.size(); ++t) {
    const auto row = static_cast<std::size_t>(ids[t]);
    if (ids[t] < 0 || row >= V) throw ShapeError("token id " + std::to_string(ids[t]) + " outside the vocabulary");
    std::copy_n(embeddings.data() + row * l, l, x.data() + t * l);
  }
  return x;
}

template <typename T>
std::vector<T> ModelWeights<T>::predict(const std::vector<int>& s1, const std::vector<int>& s2, Domain domain) const {
  const std::size_t m = config.hcnn.m;
  const BasicTensor<T> x1 = embed(pad_to(s1, m)), x2 = embed(pad_to(s2, m));
  const BasicTensor<T> zc = hcnn_forward_eval(x1, x2, enc_c);
  const auto& priv = domain == Domain::source ? enc_s : enc_t;
  if (priv) return ss_predict(zc, hcnn_forward_eval(x1, x2, *priv), domain, heads);
  return fs_predict(zc, domain, heads);
}

template struct ModelWeights<float>;
template struct ModelWeights<double>;

std::vector<Prediction> predict_dataset(const ModelWeights<double>& weights, const Dataset& data) {
  std::vector<Prediction> out;
  out.reserve(data.size());
  for (const Example& ex : data) {
    const std::vector<double> p = weights.predict(ex.s1, ex.s2, ex.domain);
    Prediction pr;
    pr.label = static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
    pr.positive = p.size() > 1 ? p[1] : 0.0;
    out.push_back(pr);
  }
  return out;
}

}  // namespace drtl
