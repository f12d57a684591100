#include "drtl/hcnn.hpp"

#include <algorithm>

namespace drtl {

namespace k = kernels;

void HcnnConfig::validate() const {
  if (!use_bcnn && !use_pyramid) throw ConfigError("hcnn: at least one of the BCNN and Pyramid branches must be enabled");
  if (embedding_dim == 0 || feature_maps == 0 || window == 0) {
    throw ConfigError("hcnn: embedding_dim, feature_maps and window must be positive");
  }
  if (use_bcnn && m < window) {
    throw ConfigError("hcnn: m=" + std::to_string(m) + " is below the convolution window; minimum m is " +
                      std::to_string(window));
  }
  if (use_pyramid && m < pyr1_kernel) {
    throw ConfigError("hcnn: m=" + std::to_string(m) + " is below the first pyramid kernel; minimum m is " +
                      std::to_string(pyr1_kernel));
  }
  for (std::size_t v : {pyr1_kernel, pyr1_maps, pyr1_stride, pool1_size, pool1_stride, pyr2_kernel, pyr2_maps,
                        pyr2_stride, pool2_size, pool2_stride}) {
    if (v == 0) throw ConfigError("hcnn: pyramid kernel, map, pool and stride sizes must be positive");
  }
}

PyramidShapes pyramid_shapes(const HcnnConfig& c) {
  PyramidShapes s;
  s.conv1 = k::ceil_div(c.m, c.pyr1_stride);
  s.pool1 = k::ceil_div(s.conv1, c.pool1_stride);
  s.conv2 = k::ceil_div(s.pool1, c.pyr2_stride);
  s.pool2 = k::ceil_div(s.conv2, c.pool2_stride);
  s.flat = s.pool2 * s.pool2 * c.pyr2_maps;
  return s;
}

std::size_t bcnn_dim(const HcnnConfig& c) { return 4 * c.feature_maps; }

std::size_t hcnn_output_dim(const HcnnConfig& c) {
  return (c.use_bcnn ? bcnn_dim(c) : 0) + (c.use_pyramid ? pyramid_shapes(c).flat : 0);
}

std::vector<Parameter*> HcnnParams::parameters() const {
  std::vector<Parameter*> out;
  for (Parameter* p : {conv_s1, bias_s1, conv_s2, bias_s2, pyr1, pyr1_bias, pyr2, pyr2_bias}) {
    if (p && std::find(out.begin(), out.end(), p) == out.end()) out.push_back(p);
  }
  return out;
}

HcnnParams make_hcnn(ParameterStore& store, const std::string& prefix, const HcnnConfig& config, Rng& rng) {
  config.validate();
  HcnnParams p;
  p.config = config;
  const std::size_t w = config.window, l = config.embedding_dim, F = config.feature_maps;
  auto conv = [&](const std::string& name) {
    Parameter& param = store.add(prefix + name, Tensor({w, l, F}));
    init_fan_uniform(param.value, w * l, w * F, rng);
    return &param;
  };
  if (config.use_bcnn) {
    p.conv_s1 = conv("conv_s1");
    p.bias_s1 = &store.add(prefix + "bias_s1", Tensor({F}));
    if (config.share_sentence_filters) {
      p.conv_s2 = p.conv_s1;
      p.bias_s2 = p.bias_s1;
    } else {
      p.conv_s2 = conv("conv_s2");
      p.bias_s2 = &store.add(prefix + "bias_s2", Tensor({F}));
    }
  }
  if (config.use_pyramid) {
    const std::size_t k1 = config.pyr1_kernel, c1 = config.pyr1_maps;
    const std::size_t k2 = config.pyr2_kernel, c2 = config.pyr2_maps;
    p.pyr1 = &store.add(prefix + "pyr1", Tensor({k1, k1, 1, c1}));
    init_fan_uniform(p.pyr1->value, k1 * k1, k1 * k1 * c1, rng);
    p.pyr1_bias = &store.add(prefix + "pyr1_bias", Tensor({c1}));
    p.pyr2 = &store.add(prefix + "pyr2", Tensor({k2, k2, c1, c2}));
    init_fan_uniform(p.pyr2->value, k2 * k2 * c1, k2 * k2 * c2, rng);
    p.pyr2_bias = &store.add(prefix + "pyr2_bias", Tensor({c2}));
  }
  return p;
}

Var bcnn_encode(Graph& g, Var x1, Var x2, const HcnnParams& p) {
  Var h1 = g.global_max_pool_1d(g.conv1d(x1, g.param(*p.conv_s1), g.param(*p.bias_s1), Activation::relu));
  Var h2 = g.global_max_pool_1d(g.conv1d(x2, g.param(*p.conv_s2), g.param(*p.bias_s2), Activation::relu));
  const Var blocks[] = {h1, h2, g.sub(h1, h2), g.mul(h1, h2)};
  return g.concat(blocks);
}

Var interaction_matrix(Graph& g, Var x1, Var x2) {
  Var m = g.interaction(x1, x2);
  const Shape& s = g.value(m).shape();
  return g.reshape(m, {s[0], s[1], 1});
}

Var pyramid_encode(Graph& g, Var interaction, const HcnnParams& p) {
  const HcnnConfig& c = p.config;
  Var x = g.conv2d(interaction, g.param(*p.pyr1), g.param(*p.pyr1_bias), c.pyr1_stride, Activation::relu);
  x = g.max_pool_2d(x, c.pool1_size, c.pool1_stride);
  x = g.conv2d(x, g.param(*p.pyr2), g.param(*p.pyr2_bias), c.pyr2_stride, Activation::relu);
  x = g.max_pool_2d(x, c.pool2_size, c.pool2_stride);
  return g.reshape(x, {g.value(x).size()});
}

Var hcnn_forward(Graph& g, Var x1, Var x2, const HcnnParams& p) {
  const Shape& s1 = g.value(x1).shape();
  if (s1 != g.value(x2).shape()) {
    throw ShapeError("hcnn: both sentences must be padded to the same length, got " + shape_string(s1) + " and " +
                     shape_string(g.value(x2).shape()));
  }
  if (s1[0] != p.config.m) {
    throw ShapeError("hcnn: expected padded length m=" + std::to_string(p.config.m) + ", got " + std::to_string(s1[0]));
  }
  std::vector<Var> parts;
  if (p.config.use_bcnn) parts.push_back(bcnn_encode(g, x1, x2, p));
  if (p.config.use_pyramid) parts.push_back(pyramid_encode(g, interaction_matrix(g, x1, x2), p));
  return parts.size() == 1 ? parts.front() : g.concat(parts);
}

// ---------------------------------------------------------------------------

template <typename T>
HcnnWeights<T> HcnnWeights<T>::from(const HcnnParams& p) {
  HcnnWeights<T> w;
  w.config = p.config;
  auto cast = [](const Parameter* param) { return param ? param->value.cast<T>() : BasicTensor<T>{}; };
  w.conv_s1 = cast(p.conv_s1);
  w.bias_s1 = cast(p.bias_s1);
  w.conv_s2 = cast(p.conv_s2);
  w.bias_s2 = cast(p.bias_s2);
  w.pyr1 = cast(p.pyr1);
  w.pyr1_bias = cast(p.pyr1_bias);
  w.pyr2 = cast(p.pyr2);
  w.pyr2_bias = cast(p.pyr2_bias);
  return w;
}

template <typename T>
BasicTensor<T> hcnn_forward_eval(const BasicTensor<T>& x1, const BasicTensor<T>& x2, const HcnnWeights<T>& w) {
  const HcnnConfig& c = w.config;
  std::vector<T> z;
  z.reserve(hcnn_output_dim(c));
  if (c.use_bcnn) {
    const auto h1 = k::global_max_pool_1d<T>(k::conv1d(x1, w.conv_s1, w.bias_s1, Activation::relu), nullptr);
    const auto h2 = k::global_max_pool_1d<T>(k::conv1d(x2, w.conv_s2, w.bias_s2, Activation::relu), nullptr);
    const std::size_t F = h1.size();
    z.insert(z.end(), h1.values().begin(), h1.values().end());
    z.insert(z.end(), h2.values().begin(), h2.values().end());
    for (std::size_t f = 0; f < F; ++f) z.push_back(h1[f] - h2[f]);
    for (std::size_t f = 0; f < F; ++f) z.push_back(h1[f] * h2[f]);
  }
  if (c.use_pyramid) {
    auto m = k::interaction(x1, x2);
    auto x = m.reshaped({m.dim(0), m.dim(1), 1});
    x = k::conv2d(x, w.pyr1, w.pyr1_bias, c.pyr1_stride, Activation::relu);
    x = k::max_pool_2d<T>(x, c.pool1_size, c.pool1_stride, nullptr);
    x = k::conv2d(x, w.pyr2, w.pyr2_bias, c.pyr2_stride, Activation::relu);
    x = k::max_pool_2d<T>(x, c.pool2_size, c.pool2_stride, nullptr);
    z.insert(z.end(), x.values().begin(), x.values().end());
  }
  const std::size_t q = z.size();
  return BasicTensor<T>({q}, std::move(z));
}

template struct HcnnWeights<float>;
template struct HcnnWeights<double>;
template BasicTensor<float> hcnn_forward_eval(const BasicTensor<float>&, const BasicTensor<float>&,
                                              const HcnnWeights<float>&);
template BasicTensor<double> hcnn_forward_eval(const BasicTensor<double>&, const BasicTensor<double>&,
                                               const HcnnWeights<double>&);

}  // namespace drtl
