#pragma once

#include <string>

#include "drtl/graph.hpp"
#include "drtl/parameter.hpp"

namespace drtl {

/// Architecture of one hybrid encoder. Defaults are the paraphrase setting.
struct HcnnConfig {
  std::size_t m = 32;             // padded sentence length
  std::size_t embedding_dim = 300;
  std::size_t feature_maps = 50;  // F of the sentence convolutions
  std::size_t window = 4;
  bool share_sentence_filters = false;
  bool use_bcnn = true;
  bool use_pyramid = true;

  std::size_t pyr1_kernel = 6, pyr1_maps = 8, pyr1_stride = 1;
  std::size_t pool1_size = 4, pool1_stride = 4;
  std::size_t pyr2_kernel = 4, pyr2_maps = 16, pyr2_stride = 3;
  std::size_t pool2_size = 2, pool2_stride = 2;

  /// Throws ConfigError if the configuration cannot be built (e.g. m below the first pyramid kernel).
  void validate() const;
};

/// Spatial sizes after each pyramid stage for an m x m interaction matrix.
struct PyramidShapes {
  std::size_t conv1 = 0, pool1 = 0, conv2 = 0, pool2 = 0;
  std::size_t flat = 0;  // |H_p|
};

PyramidShapes pyramid_shapes(const HcnnConfig& config);
/// |H_b| = 4F.
std::size_t bcnn_dim(const HcnnConfig& config);
/// q = |H_b| + |H_p| (each term only when its branch is enabled).
std::size_t hcnn_output_dim(const HcnnConfig& config);

/// Parameters of one encoder instance. Pointers are owned by a ParameterStore;
/// with shared sentence filters the s2 pointers alias the s1 ones.
struct HcnnParams {
  HcnnConfig config;
  Parameter* conv_s1 = nullptr;
  Parameter* bias_s1 = nullptr;
  Parameter* conv_s2 = nullptr;
  Parameter* bias_s2 = nullptr;
  Parameter* pyr1 = nullptr;
  Parameter* pyr1_bias = nullptr;
  Parameter* pyr2 = nullptr;
  Parameter* pyr2_bias = nullptr;

  /// Distinct parameters of this encoder.
  std::vector<Parameter*> parameters() const;
};

/// Registers an encoder under `prefix` (e.g. "enc_c.") with fan-uniform weights and zero biases.
HcnnParams make_hcnn(ParameterStore& store, const std::string& prefix, const HcnnConfig& config, Rng& rng);

/// h1 (+) h2 (+) (h1 - h2) (+) (h1 * h2) with h_i = max-over-time(conv1d(X_i)).
Var bcnn_encode(Graph& g, Var x1, Var x2, const HcnnParams& params);
/// M[i,j] = <X1[i], X2[j]> shaped [m x m x 1].
Var interaction_matrix(Graph& g, Var x1, Var x2);
/// conv -> pool -> conv -> pool over M, flattened.
Var pyramid_encode(Graph& g, Var interaction, const HcnnParams& params);
/// z = H_b (+) H_p.
Var hcnn_forward(Graph& g, Var x1, Var x2, const HcnnParams& params);

/// Frozen copy of one encoder's weights in precision T, for untaped inference.
template <typename T>
struct HcnnWeights {
  HcnnConfig config;
  BasicTensor<T> conv_s1, bias_s1, conv_s2, bias_s2, pyr1, pyr1_bias, pyr2, pyr2_bias;

  static HcnnWeights from(const HcnnParams& params);
};

/// Untaped forward pass with the same kernels as the graph path.
template <typename T>
BasicTensor<T> hcnn_forward_eval(const BasicTensor<T>& x1, const BasicTensor<T>& x2, const HcnnWeights<T>& w);

extern template struct HcnnWeights<float>;
extern template struct HcnnWeights<double>;
extern template BasicTensor<float> hcnn_forward_eval(const BasicTensor<float>&, const BasicTensor<float>&,
                                                     const HcnnWeights<float>&);
extern template BasicTensor<double> hcnn_forward_eval(const BasicTensor<double>&, const BasicTensor<double>&,
                                                      const HcnnWeights<double>&);

}  // namespace drtl
