#include "drtl/graph.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace drtl {

namespace k = kernels;

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), nullptr, {}, {}, {}, false});
  return Var{nodes_.size() - 1};
}

Var Graph::param(Parameter& p) {
  nodes_.push_back(Node{{}, &p, {}, {}, {}, !p.frozen});
  return Var{nodes_.size() - 1};
}

Var Graph::emit(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  for (Var v : inputs) {
    if (v.id >= nodes_.size()) throw ShapeError("graph: input node does not exist");
    node.inputs.push_back(v.id);
    node.needs_grad = node.needs_grad || nodes_[v.id].needs_grad;
  }
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

const Tensor& Graph::value_of(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.param ? n.param->value : n.value;
}

const Tensor& Graph::value(Var v) const { return value_of(v.id); }

double Graph::scalar(Var v) const {
  const Tensor& t = value(v);
  if (t.size() != 1) throw ShapeError("graph: expected a scalar node, got " + shape_string(t.shape()));
  return t[0];
}

Tensor* Graph::grad_sink(Var v) {
  Node& n = nodes_.at(v.id);
  if (!n.needs_grad) return nullptr;
  if (n.param) return &n.param->grad;
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return &n.grad;
}

const Tensor* Graph::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.param) return &n.param->grad;
  return n.grad.empty() ? nullptr : &n.grad;
}

void Graph::backward(Var loss) {
  if (value(loss).size() != 1) throw ShapeError("backward: loss must be a scalar");
  Tensor* seed = grad_sink(loss);
  if (!seed) return;
  (*seed)[0] += 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, n.value, n.grad);
  }
}

void Graph::require_same_shape(Var a, Var b, const char* op) const {
  if (value(a).shape() != value(b).shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(value(a).shape()) + " vs " +
                     shape_string(value(b).shape()));
  }
}

// ---------------------------------------------------------------------------

Var Graph::lookup(Parameter& table, std::span<const int> ids) {
  if (table.value.rank() != 2) throw ShapeError("lookup: table must be rank 2 [|V| x l]");
  if (ids.empty()) throw ShapeError("lookup: empty id sequence");
  const std::size_t vocab = table.value.dim(0), l = table.value.dim(1);
  Tensor out({ids.size(), l});
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] < 0 || static_cast<std::size_t>(ids[t]) >= vocab) {
      throw ShapeError("lookup: token id " + std::to_string(ids[t]) + " outside vocabulary of size " +
                       std::to_string(vocab));
    }
    std::copy_n(table.value.data() + static_cast<std::size_t>(ids[t]) * l, l, out.data() + t * l);
  }
  Var leaf = param(table);
  std::vector<int> idv(ids.begin(), ids.end());
  Parameter* tp = &table;
  return emit(std::move(out), {leaf}, [leaf, idv = std::move(idv), tp, l](Graph& g, const Tensor&, const Tensor& go) {
    Tensor* gt = g.grad_sink(leaf);
    for (std::size_t t = 0; t < idv.size(); ++t) {
      const auto row = static_cast<std::size_t>(idv[t]);
      if (std::find(tp->masked_rows.begin(), tp->masked_rows.end(), row) != tp->masked_rows.end()) continue;
      for (std::size_t c = 0; c < l; ++c) (*gt)[row * l + c] += go[t * l + c];
    }
  });
}

Var Graph::conv1d(Var input, Var filters, Var bias, Activation act) {
  Tensor out = k::conv1d(value(input), value(filters), value(bias), act);
  return emit(std::move(out), {input, filters, bias}, [=](Graph& g, const Tensor& o, const Tensor& go) {
    Tensor masked = go;
    k::mask_activation_grad(o, masked, act);
    k::conv1d_backward(g.value(input), g.value(filters), masked, g.grad_sink(input), g.grad_sink(filters),
                       g.grad_sink(bias));
  });
}

Var Graph::global_max_pool_1d(Var input) {
  if (value(input).dim(0) == 0) throw ShapeError("global_max_pool_1d: empty time axis");
  std::vector<std::size_t> argmax;
  Tensor out = k::global_max_pool_1d(value(input), &argmax);
  return emit(std::move(out), {input}, [=, argmax = std::move(argmax)](Graph& g, const Tensor&, const Tensor& go) {
    Tensor* gi = g.grad_sink(input);
    for (std::size_t f = 0; f < argmax.size(); ++f) (*gi)[argmax[f]] += go[f];
  });
}

Var Graph::interaction(Var a, Var b) {
  Tensor out = k::interaction(value(a), value(b));
  return emit(std::move(out), {a, b}, [=](Graph& g, const Tensor&, const Tensor& go) {
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    const std::size_t m = av.dim(0), n = bv.dim(0), l = av.dim(1);
    Tensor* ga = g.grad_sink(a);
    Tensor* gb = g.grad_sink(b);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double gij = go[i * n + j];
        if (gij == 0.0) continue;
        if (ga) {
          for (std::size_t c = 0; c < l; ++c) (*ga)[i * l + c] += gij * bv[j * l + c];
        }
        if (gb) {
          for (std::size_t c = 0; c < l; ++c) (*gb)[j * l + c] += gij * av[i * l + c];
        }
      }
    }
  });
}

Var Graph::conv2d(Var input, Var kernel, Var bias, std::size_t stride, Activation act) {
  Tensor out = k::conv2d(value(input), value(kernel), value(bias), stride, act);
  return emit(std::move(out), {input, kernel, bias}, [=](Graph& g, const Tensor& o, const Tensor& go) {
    Tensor masked = go;
    k::mask_activation_grad(o, masked, act);
    k::conv2d_backward(g.value(input), g.value(kernel), stride, masked, g.grad_sink(input), g.grad_sink(kernel),
                       g.grad_sink(bias));
  });
}

Var Graph::max_pool_2d(Var input, std::size_t size, std::size_t stride) {
  std::vector<std::size_t> argmax;
  Tensor out = k::max_pool_2d(value(input), size, stride, &argmax);
  return emit(std::move(out), {input}, [=, argmax = std::move(argmax)](Graph& g, const Tensor&, const Tensor& go) {
    Tensor* gi = g.grad_sink(input);
    for (std::size_t o = 0; o < argmax.size(); ++o) (*gi)[argmax[o]] += go[o];
  });
}

Var Graph::affine(Var input, Var weight, Var bias) {
  const Tensor& b = value(bias);
  Tensor out = k::affine(value(input), value(weight), &b);
  return emit(std::move(out), {input, weight, bias}, [=](Graph& g, const Tensor&, const Tensor& go) {
    const Tensor& x = g.value(input);
    const Tensor& w = g.value(weight);
    const std::size_t r = w.dim(0), q = w.dim(1);
    Tensor* gx = g.grad_sink(input);
    Tensor* gw = g.grad_sink(weight);
    Tensor* gb = g.grad_sink(bias);
    for (std::size_t i = 0; i < r; ++i) {
      if (gb) (*gb)[i] += go[i];
      for (std::size_t j = 0; j < q; ++j) {
        if (gw) (*gw)[i * q + j] += go[i] * x[j];
        if (gx) (*gx)[j] += w[i * q + j] * go[i];
      }
    }
  });
}

Var Graph::matvec(Var weight, Var input) {
  Tensor out = k::affine<double>(value(input), value(weight), nullptr);
  return emit(std::move(out), {weight, input}, [=](Graph& g, const Tensor&, const Tensor& go) {
    const Tensor& x = g.value(input);
    const Tensor& w = g.value(weight);
    const std::size_t r = w.dim(0), q = w.dim(1);
    Tensor* gx = g.grad_sink(input);
    Tensor* gw = g.grad_sink(weight);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < q; ++j) {
        if (gw) (*gw)[i * q + j] += go[i] * x[j];
        if (gx) (*gx)[j] += w[i * q + j] * go[i];
      }
    }
  });
}

Var Graph::reshape(Var v, Shape shape) {
  Tensor out = value(v).reshaped(std::move(shape));
  return emit(std::move(out), {v}, [=](Graph& g, const Tensor&, const Tensor& go) {
    Tensor* gi = g.grad_sink(v);
    for (std::size_t i = 0; i < go.size(); ++i) (*gi)[i] += go[i];
  });
}

Var Graph::concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  std::size_t total = 0;
  for (Var p : parts) {
    if (value(p).rank() != 1) throw ShapeError("concat: inputs must be rank 1, got " + shape_string(value(p).shape()));
    total += value(p).size();
  }
  Tensor out({total});
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& v = value(p);
    std::copy(v.values().begin(), v.values().end(), out.data() + off);
    off += v.size();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return emit(std::move(out), inputs, [inputs](Graph& g, const Tensor&, const Tensor& go) {
    std::size_t offset = 0;
    for (Var p : inputs) {
      const std::size_t n = g.value(p).size();
      if (Tensor* gi = g.grad_sink(p)) {
        for (std::size_t i = 0; i < n; ++i) (*gi)[i] += go[offset + i];
      }
      offset += n;
    }
  });
}

Var Graph::add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tensor out = value(a);
  const Tensor& bv = value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return emit(std::move(out), {a, b}, [=](Graph& g, const Tensor&, const Tensor& go) {
    if (Tensor* ga = g.grad_sink(a)) {
      for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i];
    }
    if (Tensor* gb = g.grad_sink(b)) {
      for (std::size_t i = 0; i < go.size(); ++i) (*gb)[i] += go[i];
    }
  });
}

Var Graph::sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tensor out = value(a);
  const Tensor& bv = value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return emit(std::move(out), {a, b}, [=](Graph& g, const Tensor&, const Tensor& go) {
    if (Tensor* ga = g.grad_sink(a)) {
      for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i];
    }
    if (Tensor* gb = g.grad_sink(b)) {
      for (std::size_t i = 0; i < go.size(); ++i) (*gb)[i] -= go[i];
    }
  });
}

Var Graph::mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Tensor out = value(a);
  const Tensor& bv = value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return emit(std::move(out), {a, b}, [=](Graph& g, const Tensor&, const Tensor& go) {
    const Tensor& av = g.value(a);
    const Tensor& bw = g.value(b);
    if (Tensor* ga = g.grad_sink(a)) {
      for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i] * bw[i];
    }
    if (Tensor* gb = g.grad_sink(b)) {
      for (std::size_t i = 0; i < go.size(); ++i) (*gb)[i] += go[i] * av[i];
    }
  });
}

Var Graph::scale(Var v, double factor) {
  Tensor out = value(v);
  for (double& x : out.values()) x *= factor;
  return emit(std::move(out), {v}, [=](Graph& g, const Tensor&, const Tensor& go) {
    Tensor* gi = g.grad_sink(v);
    for (std::size_t i = 0; i < go.size(); ++i) (*gi)[i] += factor * go[i];
  });
}

Var Graph::sum(std::span<const Var> scalars) {
  if (scalars.empty()) return constant(Tensor({1}));
  double total = 0.0;
  for (Var s : scalars) total += scalar(s);
  std::vector<Var> inputs(scalars.begin(), scalars.end());
  return emit(Tensor({1}, std::vector<double>{total}), inputs, [inputs](Graph& g, const Tensor&, const Tensor& go) {
    for (Var s : inputs) {
      if (Tensor* gi = g.grad_sink(s)) (*gi)[0] += go[0];
    }
  });
}

Var Graph::squared_norm(Var v) {
  double total = 0.0;
  for (double x : value(v).values()) total += x * x;
  return emit(Tensor({1}, std::vector<double>{total}), {v}, [=](Graph& g, const Tensor&, const Tensor& go) {
    const Tensor& x = g.value(v);
    Tensor* gi = g.grad_sink(v);
    for (std::size_t i = 0; i < x.size(); ++i) (*gi)[i] += 2.0 * x[i] * go[0];
  });
}

Var Graph::softmax_cross_entropy(Var logits, std::size_t label) {
  const Tensor& z = value(logits);
  if (z.rank() != 1 || z.size() < 2) throw ShapeError("softmax_cross_entropy: logits must be a vector of >= 2 classes");
  if (label >= z.size()) {
    throw ShapeError("softmax_cross_entropy: label " + std::to_string(label) + " outside [0," +
                     std::to_string(z.size()) + ")");
  }
  const auto logp = k::log_softmax<double>(z.span());
  return emit(Tensor({1}, std::vector<double>{-logp[label]}), {logits},
              [=](Graph& g, const Tensor&, const Tensor& go) {
                Tensor* gi = g.grad_sink(logits);
                for (std::size_t j = 0; j < logp.size(); ++j) {
                  const double target = j == label ? 1.0 : 0.0;
                  (*gi)[j] += go[0] * (std::exp(logp[j]) - target);
                }
              });
}

Var Graph::entropy_term(Var logits) {
  const Tensor& z = value(logits);
  if (z.rank() != 1 || z.size() < 2) throw ShapeError("entropy_term: logits must be a vector of >= 2 classes");
  const auto logp = k::log_softmax<double>(z.span());
  double h = 0.0;
  for (double lp : logp) h += std::exp(lp) * lp;
  return emit(Tensor({1}, std::vector<double>{h}), {logits}, [=](Graph& g, const Tensor&, const Tensor& go) {
    Tensor* gi = g.grad_sink(logits);
    for (std::size_t j = 0; j < logp.size(); ++j) (*gi)[j] += go[0] * std::exp(logp[j]) * (logp[j] - h);
  });
}

}  // namespace drtl
