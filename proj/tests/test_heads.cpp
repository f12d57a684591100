#include <cmath>
#include <numbers>

#include "doctest.h"
#include "drtl/error.hpp"
#include "drtl/gradcheck.hpp"
#include "drtl/model.hpp"
#include "drtl/optim.hpp"
#include "test_util.hpp"

using namespace drtl;
using namespace drtl::testing;

namespace {

constexpr double kLn2 = std::numbers::ln2;

struct Toy {
  EmbeddingTable table;
  Dataset src, tgt;
  std::vector<std::size_t> src_idx, tgt_idx;

  explicit Toy(std::uint64_t seed, std::size_t n = 4, std::size_t l = 4) : table(toy_table(12, l, seed)) {
    Rng rng(seed);
    src = toy_dataset(n, table.vocab.size(), Domain::source, rng);
    tgt = toy_dataset(n, table.vocab.size(), Domain::target, rng);
    for (std::size_t i = 0; i < n; ++i) {
      src_idx.push_back(i);
      tgt_idx.push_back(i);
    }
  }

  std::vector<DomainBatch> both() const {
    return {{&src, src_idx, Domain::source}, {&tgt, tgt_idx, Domain::target}};
  }
};

Mat4 random_omega(Rng& rng) {
  Mat4 b;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double& v : b.a) v = u(rng);
  Mat4 o = b * b.transposed();
  const double t = o.trace();
  for (double& v : o.a) v /= t;
  return o;
}

// tr(W M W^T) computed as the trace of the full [n x n] product
double trace_oracle(const Tensor& W, const Mat4& M) {
  const std::size_t n = W.dim(0);
  double tr = 0.0;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) tr += W[r * 4 + i] * M.a[i * 4 + j] * W[r * 4 + j];
  return tr;
}

double penalty_value(const OutputHeads& heads, const Mat4& oinv) {
  Graph g;
  return g.scalar(trace_penalty(g, heads, oinv));
}

// product of random Householder reflections
Tensor random_orthogonal(std::size_t n, Rng& rng) {
  Tensor q({n, n});
  for (std::size_t i = 0; i < n; ++i) q[i * n + i] = 1.0;
  for (int k = 0; k < 5; ++k) {
    Tensor v = random_tensor({n}, rng);
    double vv = 0.0;
    for (double x : v.values()) vv += x * x;
    Tensor h({n, n});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) h[i * n + j] = (i == j ? 1.0 : 0.0) - 2.0 * v[i] * v[j] / vv;
    Tensor next({n, n});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t t = 0; t < n; ++t) next[i * n + j] += h[i * n + t] * q[t * n + j];
    q = next;
  }
  return q;
}

std::vector<double> softmax_oracle(const std::vector<double>& logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  std::vector<double> p;
  for (double v : logits) p.push_back(std::exp(v - mx) / z);
  return p;
}

}  // namespace

TEST_SUITE("variants") {
  TEST_CASE("names round trip and predicates") {
    for (Variant v : {Variant::tgt_only, Variant::src_only, Variant::mixed, Variant::fine_tune, Variant::fs,
                      Variant::ss, Variant::ss_adv, Variant::drss, Variant::drss_adv}) {
      CHECK(parse_variant(variant_name(v)) == v);
    }
    CHECK(parse_variant("DRSS_Adv") == Variant::drss_adv);
    CHECK_THROWS_AS(parse_variant("drs"), ConfigError);
    CHECK(is_single_encoder(Variant::mixed));
    CHECK_FALSE(is_single_encoder(Variant::fs));
    CHECK(has_private_encoders(Variant::drss));
    CHECK_FALSE(has_private_encoders(Variant::fs));
    CHECK(is_adversarial(Variant::ss_adv));
    CHECK(uses_trace(Variant::drss_adv));
    CHECK_FALSE(uses_trace(Variant::ss));
  }

  TEST_CASE("FS with private encoders is rejected") {
    EmbeddingTable t = toy_table(5, 4, 1);
    ModelConfig c = toy_model_config(Variant::fs);
    c.private_encoders = true;
    CHECK_THROWS_AS(Model(c, t, 1), ConfigError);
    c.variant = Variant::drss;
    c.private_encoders = false;
    CHECK_THROWS_AS(Model(c, t, 1), ConfigError);
    c.private_encoders = true;
    CHECK_NOTHROW(Model(c, t, 1));
  }

  TEST_CASE("negative loss weights are rejected") {
    LossWeights w;
    w.trace = -1.0;
    CHECK_THROWS_AS(w.validate(), ConfigError);
  }

  TEST_CASE("parameter sets per variant") {
    EmbeddingTable t = toy_table(5, 4, 1);
    Model tgt(toy_model_config(Variant::tgt_only), t, 1);
    CHECK(tgt.heads().weights().size() == 1);
    CHECK(tgt.private_encoder(Domain::source) == nullptr);
    Model fs(toy_model_config(Variant::fs), t, 1);
    CHECK(fs.heads().weights().size() == 2);
    Model drss(toy_model_config(Variant::drss_adv), t, 1);
    CHECK(drss.heads().weights().size() == 4);
    CHECK(drss.adversary().W_d != nullptr);
    CHECK(drss.store().get("embeddings").masked_rows == std::vector<std::size_t>{0});
    CHECK(Model::group_of(drss.store().get("enc_t.pyr1")) == "theta_t");
    CHECK(Model::group_of(drss.store().get("head.W_tc")) == "heads");
    CHECK(Model::group_of(drss.store().get("adv.W_d")) == "adversary");
  }
}

TEST_SUITE("output heads") {
  TEST_CASE("fs_predict matches a direct affine softmax") {
    Rng rng(3);
    EmbeddingTable t = toy_table(5, 4, 1);
    Model model(toy_model_config(Variant::fs), t, 2);
    for (Parameter* p : model.heads().parameters()) p->value = random_tensor(p->value.shape(), rng);
    const auto hw = HeadWeights<double>::from(model.heads());
    const std::size_t q = model.q();
    Tensor z = random_tensor({q}, rng);
    for (Domain d : {Domain::source, Domain::target}) {
      const Tensor& W = model.heads().shared_weight(d)->value;
      const Tensor& b = model.heads().bias(d)->value;
      std::vector<double> logits(2);
      for (std::size_t y = 0; y < 2; ++y) {
        logits[y] = b[y];
        for (std::size_t k = 0; k < q; ++k) logits[y] += W[y * q + k] * z[k];
      }
      const auto want = softmax_oracle(logits);
      const auto got = fs_predict(z, d, hw);
      CHECK(got[0] == doctest::Approx(want[0]).epsilon(1e-12));
      CHECK(got[1] == doctest::Approx(want[1]).epsilon(1e-12));
      CHECK(got[0] + got[1] == doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  TEST_CASE("zero weights give the uniform distribution") {
    EmbeddingTable t = toy_table(5, 4, 1);
    Model model(toy_model_config(Variant::drss), t, 2);
    for (Parameter* p : model.heads().parameters()) p->value.fill(0.0);
    const auto hw = HeadWeights<double>::from(model.heads());
    Tensor z({model.q()}, 0.7);
    CHECK(fs_predict(z, Domain::target, hw) == std::vector<double>{0.5, 0.5});
    CHECK(ss_predict(z, z, Domain::source, hw) == std::vector<double>{0.5, 0.5});
  }

  TEST_CASE("ss_predict reduces to fs_predict without the private term") {
    Rng rng(4);
    EmbeddingTable t = toy_table(5, 4, 1);
    Model model(toy_model_config(Variant::drss), t, 2);
    for (Parameter* p : model.heads().parameters()) p->value = random_tensor(p->value.shape(), rng);
    const Tensor zc = random_tensor({model.q()}, rng), zd = random_tensor({model.q()}, rng);
    const Tensor zero({model.q()}, 0.0);
    auto hw = HeadWeights<double>::from(model.heads());
    CHECK(ss_predict(zc, zero, Domain::source, hw) == fs_predict(zc, Domain::source, hw));
    model.heads().W_t->value.fill(0.0);
    hw = HeadWeights<double>::from(model.heads());
    CHECK(ss_predict(zc, zd, Domain::target, hw) == fs_predict(zc, Domain::target, hw));
  }

  TEST_CASE("stack_W flattens each head into one column") {
    EmbeddingTable t = toy_table(5, 4, 1);
    Model model(toy_model_config(Variant::drss), t, 2);
    const OutputHeads& h = model.heads();
    Rng rng(5);
    for (Parameter* p : h.weights()) p->value = random_tensor(p->value.shape(), rng);
    const Tensor s = stack_W(h);
    const std::size_t n = 2 * model.q();
    REQUIRE(s.shape() == Shape{n, 4});
    // column c, row r is element r of the row-major flatten of head c
    CHECK(s[0 * 4 + 0] == h.W_s->value[0]);
    CHECK(s[0 * 4 + 3] == h.W_tc->value[0]);
    CHECK(s[(n - 1) * 4 + 1] == h.W_sc->value[n - 1]);
    CHECK(s[model.q() * 4 + 2] == h.W_t->value.at(1, 0));
    const Tensor before = s;
    for (Parameter* p : h.weights()) p->value.fill(0.0);
    unstack_W(before, h);
    CHECK(stack_W(h).values() == before.values());
    CHECK_THROWS_AS(unstack_W(Tensor({n, 3}), h), ShapeError);
  }

  TEST_CASE("stack_W needs all four heads") {
    EmbeddingTable t = toy_table(5, 4, 1);
    Model fs(toy_model_config(Variant::fs), t, 2);
    CHECK_THROWS_AS(stack_W(fs.heads()), ConfigError);
  }
}

TEST_SUITE("trace penalty") {
  TEST_CASE("identity over four reduces to four times the squared norm") {
    Rng rng(6);
    EmbeddingTable t = toy_table(5, 4, 1);
    Model model(toy_model_config(Variant::drss), t, 2);
    double sq = 0.0;
    for (Parameter* p : model.heads().weights()) {
      p->value = random_tensor(p->value.shape(), rng);
      for (double v : p->value.values()) sq += v * v;
    }
    const double got = penalty_value(model.heads(), omega_inverse(Mat4::identity(0.25), 0.0));
    CHECK(std::abs(got - 4.0 * sq) <= 1e-10 * std::max(1.0, sq));
  }

  TEST_CASE("matches the explicit trace and is zero at W = 0") {
    Rng rng(7);
    EmbeddingTable t = toy_table(5, 4, 1);
    Model model(toy_model_config(Variant::drss), t, 2);
    for (Parameter* p : model.heads().weights()) p->value.fill(0.0);
    const Mat4 oinv = omega_inverse(random_omega(rng));
    CHECK(penalty_value(model.heads(), oinv) == 0.0);
    for (Parameter* p : model.heads().weights()) p->value = random_tensor(p->value.shape(), rng);
    const double want = trace_oracle(stack_W(model.heads()), oinv);
    CHECK(penalty_value(model.heads(), oinv) == doctest::Approx(want).epsilon(1e-10));
  }

  TEST_CASE("invariant under a common rotation of the rows") {
    Rng rng(8);
    EmbeddingTable t = toy_table(5, 4, 1);
    Model model(toy_model_config(Variant::drss), t, 2);
    for (Parameter* p : model.heads().weights()) p->value = random_tensor(p->value.shape(), rng);
    const Mat4 oinv = omega_inverse(random_omega(rng));
    const double before = penalty_value(model.heads(), oinv);
    const Tensor W = stack_W(model.heads());
    const std::size_t n = W.dim(0);
    const Tensor R = random_orthogonal(n, rng);
    Tensor RW({n, 4});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < 4; ++c)
        for (std::size_t k = 0; k < n; ++k) RW[i * 4 + c] += R[i * n + k] * W[k * 4 + c];
    unstack_W(RW, model.heads());
    const double after = penalty_value(model.heads(), oinv);
    CHECK(std::abs(after - before) <= 1e-9 * std::max(1.0, std::abs(before)));
  }

  TEST_CASE("analytic gradient matches finite differences") {
    Rng rng(9);
    EmbeddingTable t = toy_table(5, 4, 1);
    Model model(toy_model_config(Variant::drss), t, 2);
    for (Parameter* p : model.heads().weights()) p->value = random_tensor(p->value.shape(), rng);
    const Mat4 oinv = omega_inverse(random_omega(rng));
    const OutputHeads& heads = model.heads();
    const auto params = heads.weights();
    const auto report = grad_check([&](Graph& g) { return trace_penalty(g, heads, oinv); }, params,
                                   [](const Parameter& p) { return p.name; });
    CHECK_MESSAGE(report.passed, report.failure);
    for (const auto& gr : report.groups) CHECK_MESSAGE(gr.max_rel_error < 1e-6, gr.group << " " << gr.worst);
  }
}

TEST_SUITE("adversarial entropy") {
  TEST_CASE("uniform domain predictions give minus two ln 2") {
    const std::vector<std::vector<double>> logits = {{0.3, 0.3}, {-1.0, -1.0}, {2.0, 2.0}};
    CHECK(adversarial_entropy(logits, {Domain::source, Domain::target, Domain::target}) ==
          doctest::Approx(-2.0 * kLn2).epsilon(1e-14));
  }

  TEST_CASE("confident predictions approach zero") {
    CHECK(adversarial_entropy({{40.0, -40.0}, {-40.0, 40.0}}, {Domain::source, Domain::target}) ==
          doctest::Approx(0.0).epsilon(1e-12));
  }

  TEST_CASE("averages within each domain") {
    const std::vector<std::vector<double>> logits = {{0.0, 1.0}, {0.0, 3.0}, {2.0, 0.0}};
    auto h = [](double a, double b) {
      const auto p = softmax_oracle({a, b});
      return p[0] * std::log(p[0]) + p[1] * std::log(p[1]);
    };
    const double want = (h(0, 1) + h(0, 3)) / 2.0 + h(2, 0);
    CHECK(adversarial_entropy(logits, {Domain::source, Domain::source, Domain::target}) ==
          doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_SUITE("combined loss") {
  TEST_CASE("zero heads give ln 2 per domain plus the encoder regularizers") {
    Toy toy(10);
    Model model(toy_model_config(Variant::drss), toy.table, 3);
    for (Parameter* p : model.heads().parameters()) p->value.fill(0.0);
    LossWeights w;
    double reg = 0.0;
    for (auto [prefix, lambda] : {std::pair{"enc_c.", w.shared}, {"enc_s.", w.source}, {"enc_t.", w.target}}) {
      for (Parameter* p : model.store().with_prefix(prefix))
        for (double v : p->value.values()) reg += 0.5 * lambda * v * v;
    }
    Graph g;
    const auto batches = toy.both();
    const LossParts parts = build_loss(g, model, batches, omega_inverse(Mat4::identity(0.25)), w);
    CHECK(parts.ce_src == doctest::Approx(kLn2).epsilon(1e-12));
    CHECK(parts.ce_tgt == doctest::Approx(kLn2).epsilon(1e-12));
    CHECK(parts.trace == 0.0);
    CHECK(parts.total_value == doctest::Approx(2.0 * kLn2 + reg).epsilon(1e-12));
  }

  TEST_CASE("cross-entropy agrees with the untaped predictor") {
    Toy toy(11);
    Model model(toy_model_config(Variant::ss), toy.table, 3);
    Rng rng(12);
    randomize_biases(model, rng);
    LossWeights none{0, 0, 0, 0, 0, 0};
    Graph g;
    const auto batches = toy.both();
    const LossParts parts = build_loss(g, model, batches, Mat4::identity(4.0), none);
    const auto mw = ModelWeights<double>::from(model);
    for (const Dataset* ds : {&toy.src, &toy.tgt}) {
      double ce = 0.0;
      for (const Example& ex : *ds) ce -= std::log(mw.predict(ex.s1, ex.s2, ex.domain)[ex.label]);
      ce /= static_cast<double>(ds->size());
      CHECK(ce == doctest::Approx(ds == &toy.src ? parts.ce_src : parts.ce_tgt).epsilon(1e-10));
    }
    CHECK(parts.total_value == doctest::Approx(parts.ce_src + parts.ce_tgt).epsilon(1e-12));
  }

  TEST_CASE("private regularizer only applies to domains present in the step") {
    Toy toy(13);
    Model model(toy_model_config(Variant::ss), toy.table, 3);
    LossWeights w{0, 0, 0, 0, 0, 1.0};
    std::vector<DomainBatch> src_only = {{&toy.src, toy.src_idx, Domain::source}};
    Graph g1, g2;
    CHECK(build_loss(g1, model, src_only, Mat4::identity(4.0), w).l2 == 0.0);
    CHECK(build_loss(g2, model, toy.both(), Mat4::identity(4.0), w).l2 > 0.0);
  }

  TEST_CASE("steps on one domain leave the other domain's parameters without gradient") {
    Toy toy(14);
    Model model(toy_model_config(Variant::drss_adv), toy.table, 3);
    std::vector<DomainBatch> src_only = {{&toy.src, toy.src_idx, Domain::source}};
    model.store().zero_grad();
    Graph g;
    const LossParts parts = build_loss(g, model, src_only, omega_inverse(Mat4::identity(0.25)), LossWeights{});
    g.backward(parts.total);
    for (Parameter* p : model.store().with_prefix("enc_t.")) {
      for (double v : p->grad.values()) CHECK(v == 0.0);
    }
    for (double v : model.heads().b_t->grad.values()) CHECK(v == 0.0);
    // W_t and W_tc still receive the trace and weight-decay gradients
    double norm = 0.0;
    for (double v : model.heads().W_t->grad.values()) norm += std::abs(v);
    CHECK(norm > 0.0);
  }

  TEST_CASE("full DRSS-Adv objective passes gradient check in every group") {
    Toy toy(15);
    Model model(toy_model_config(Variant::drss_adv), toy.table, 4);
    Rng rng(16);
    randomize_biases(model, rng);
    const Mat4 oinv = omega_inverse(random_omega(rng));
    LossWeights w{0.5, 0.1, 0.1, 0.1, 0.1, 0.1};
    const auto batches = toy.both();
    auto params = model.store().all();
    const auto report = grad_check([&](Graph& g) { return build_loss(g, model, batches, oinv, w).total; }, params,
                                   Model::group_of);
    CHECK_MESSAGE(report.passed, report.failure);
    CHECK(report.groups.size() == 6);
    for (const auto& gr : report.groups) CHECK_MESSAGE(gr.max_rel_error < 1e-4, gr.group << " " << gr.worst);
  }

  TEST_CASE("full-batch AdaGrad never increases the loss") {
    for (Variant v : {Variant::tgt_only, Variant::mixed, Variant::fs, Variant::ss, Variant::ss_adv, Variant::drss,
                      Variant::drss_adv}) {
      CAPTURE(variant_name(v));
      Toy toy(17, 6);
      Model model(toy_model_config(v), toy.table, 5);
      const Mat4 oinv = omega_inverse(Mat4::identity(0.25));
      const auto batches = toy.both();
      auto params = model.store().all();
      AdaGrad opt(0.08);
      double prev = std::numeric_limits<double>::infinity();
      for (int step = 0; step < 50; ++step) {
        model.store().zero_grad();
        Graph g;
        const LossParts parts = build_loss(g, model, batches, oinv, LossWeights{});
        CHECK(parts.total_value <= prev + 1e-12);
        prev = parts.total_value;
        g.backward(parts.total);
        opt.step(params);
      }
    }
  }
}
