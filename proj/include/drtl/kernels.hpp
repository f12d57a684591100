#pragma once

// Forward and backward numerical kernels shared by the taped (double) graph
// and the untaped float inference path. Shapes are validated here so both
// paths reject bad inputs identically.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "drtl/tensor.hpp"

namespace drtl::kernels {

enum class Activation { none, relu };

/// Output length and leading zero-padding of a "same" convolution.
struct SameGeometry {
  std::size_t out = 0;
  std::size_t pad_before = 0;
};

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

inline SameGeometry same_geometry(std::size_t extent, std::size_t kernel, std::size_t stride) {
  SameGeometry g;
  g.out = ceil_div(extent, stride);
  const std::size_t needed = (g.out - 1) * stride + kernel;
  const std::size_t pad_total = needed > extent ? needed - extent : 0;
  g.pad_before = pad_total / 2;
  return g;
}

inline void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

template <typename T>
void apply_activation(BasicTensor<T>& t, Activation act) {
  if (act == Activation::relu) {
    for (T& v : t.values()) v = v > T(0) ? v : T(0);
  }
}

/// Zeroes gradient entries where the relu output was clamped.
template <typename T>
void mask_activation_grad(const BasicTensor<T>& out, BasicTensor<T>& grad, Activation act) {
  if (act != Activation::relu) return;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(out[i] > T(0))) grad[i] = T(0);
  }
}

// ---------------------------------------------------------------------------
// conv1d: input [m x l], filters [w x l x F], bias [F] -> [m x F]

template <typename T>
void check_conv1d(const BasicTensor<T>& input, const BasicTensor<T>& filters, const BasicTensor<T>& bias) {
  require(input.rank() == 2, "conv1d: input must be rank 2 [m x l], got " + shape_string(input.shape()));
  require(filters.rank() == 3, "conv1d: filters must be rank 3 [w x l x F], got " + shape_string(filters.shape()));
  require(filters.dim(1) == input.dim(1), "conv1d: embedding dimension l mismatch: input has " +
                                              std::to_string(input.dim(1)) + ", filters have " +
                                              std::to_string(filters.dim(1)));
  require(filters.dim(0) <= input.dim(0), "conv1d: window w=" + std::to_string(filters.dim(0)) +
                                              " exceeds sequence length m=" + std::to_string(input.dim(0)));
  require(bias.rank() == 1 && bias.dim(0) == filters.dim(2),
          "conv1d: bias length must equal feature maps F=" + std::to_string(filters.dim(2)));
}

template <typename T>
BasicTensor<T> conv1d(const BasicTensor<T>& input, const BasicTensor<T>& filters, const BasicTensor<T>& bias,
                      Activation act) {
  check_conv1d(input, filters, bias);
  const std::size_t m = input.dim(0), l = input.dim(1), w = filters.dim(0), F = filters.dim(2);
  const auto geo = same_geometry(m, w, 1);
  BasicTensor<T> out({m, F});
  for (std::size_t t = 0; t < m; ++t) {
    T* o = out.data() + t * F;
    for (std::size_t f = 0; f < F; ++f) o[f] = bias[f];
    for (std::size_t d = 0; d < w; ++d) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + d) - static_cast<std::ptrdiff_t>(geo.pad_before);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(m)) continue;
      const T* x = input.data() + static_cast<std::size_t>(src) * l;
      const T* k = filters.data() + d * l * F;
      for (std::size_t c = 0; c < l; ++c) {
        const T xv = x[c];
        if (xv == T(0)) continue;
        const T* kc = k + c * F;
        for (std::size_t f = 0; f < F; ++f) o[f] += xv * kc[f];
      }
    }
  }
  apply_activation(out, act);
  return out;
}

/// grad_out must already have the activation mask applied.
template <typename T>
void conv1d_backward(const BasicTensor<T>& input, const BasicTensor<T>& filters, const BasicTensor<T>& grad_out,
                     BasicTensor<T>* grad_input, BasicTensor<T>* grad_filters, BasicTensor<T>* grad_bias) {
  const std::size_t m = input.dim(0), l = input.dim(1), w = filters.dim(0), F = filters.dim(2);
  const auto geo = same_geometry(m, w, 1);
  for (std::size_t t = 0; t < m; ++t) {
    const T* g = grad_out.data() + t * F;
    if (grad_bias) {
      for (std::size_t f = 0; f < F; ++f) (*grad_bias)[f] += g[f];
    }
    for (std::size_t d = 0; d < w; ++d) {
      const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + d) - static_cast<std::ptrdiff_t>(geo.pad_before);
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(m)) continue;
      const std::size_t row = static_cast<std::size_t>(src) * l;
      for (std::size_t c = 0; c < l; ++c) {
        const std::size_t kbase = (d * l + c) * F;
        if (grad_filters) {
          const T xv = input[row + c];
          if (xv != T(0)) {
            T* gk = grad_filters->data() + kbase;
            for (std::size_t f = 0; f < F; ++f) gk[f] += xv * g[f];
          }
        }
        if (grad_input) {
          const T* k = filters.data() + kbase;
          T acc = T(0);
          for (std::size_t f = 0; f < F; ++f) acc += k[f] * g[f];
          (*grad_input)[row + c] += acc;
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// global max-over-time pooling: [m x F] -> [F]

template <typename T>
BasicTensor<T> global_max_pool_1d(const BasicTensor<T>& input, std::vector<std::size_t>* argmax) {
  require(input.rank() == 2, "global_max_pool_1d: input must be rank 2 [m x F], got " + shape_string(input.shape()));
  const std::size_t m = input.dim(0), F = input.dim(1);
  BasicTensor<T> out({F});
  if (argmax) argmax->assign(F, 0);
  for (std::size_t f = 0; f < F; ++f) {
    std::size_t best = 0;
    for (std::size_t t = 1; t < m; ++t) {
      if (input[t * F + f] > input[best * F + f]) best = t;
    }
    out[f] = input[best * F + f];
    if (argmax) (*argmax)[f] = best * F + f;
  }
  return out;
}

// ---------------------------------------------------------------------------
// word-by-word dot products: [m x l] x [n x l] -> [m x n]

template <typename T>
BasicTensor<T> interaction(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require(a.rank() == 2 && b.rank() == 2, "interaction: inputs must be rank 2");
  require(a.dim(1) == b.dim(1), "interaction: embedding dimension mismatch (" + std::to_string(a.dim(1)) +
                                    " vs " + std::to_string(b.dim(1)) + ")");
  const std::size_t m = a.dim(0), n = b.dim(0), l = a.dim(1);
  BasicTensor<T> out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const T* x = a.data() + i * l;
    for (std::size_t j = 0; j < n; ++j) {
      const T* y = b.data() + j * l;
      T acc = T(0);
      for (std::size_t c = 0; c < l; ++c) acc += x[c] * y[c];
      out[i * n + j] = acc;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv2d: input [h x w x C], kernel [k x k x C x F], bias [F], stride s

template <typename T>
void check_conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel, const BasicTensor<T>& bias,
                  std::size_t stride) {
  require(stride >= 1, "conv2d: stride must be >= 1");
  require(input.rank() == 3, "conv2d: input must be rank 3 [h x w x C], got " + shape_string(input.shape()));
  require(kernel.rank() == 4 && kernel.dim(0) == kernel.dim(1),
          "conv2d: kernel must be square rank 4 [k x k x C x F], got " + shape_string(kernel.shape()));
  require(kernel.dim(2) == input.dim(2), "conv2d: channel count C mismatch: input has " +
                                             std::to_string(input.dim(2)) + ", kernel expects " +
                                             std::to_string(kernel.dim(2)));
  require(bias.rank() == 1 && bias.dim(0) == kernel.dim(3),
          "conv2d: bias length must equal feature maps F=" + std::to_string(kernel.dim(3)));
  const std::size_t k = kernel.dim(0);
  for (std::size_t axis = 0; axis < 2; ++axis) {
    const auto geo = same_geometry(input.dim(axis), k, stride);
    const std::size_t padded = std::max(input.dim(axis), (geo.out - 1) * stride + k);
    require(k <= padded, "conv2d: kernel " + std::to_string(k) + " exceeds padded extent " + std::to_string(padded));
  }
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel, const BasicTensor<T>& bias,
                      std::size_t stride, Activation act) {
  check_conv2d(input, kernel, bias, stride);
  const std::size_t H = input.dim(0), W = input.dim(1), C = input.dim(2);
  const std::size_t k = kernel.dim(0), F = kernel.dim(3);
  const auto gh = same_geometry(H, k, stride), gw = same_geometry(W, k, stride);
  BasicTensor<T> out({gh.out, gw.out, F});
  for (std::size_t i = 0; i < gh.out; ++i) {
    for (std::size_t j = 0; j < gw.out; ++j) {
      T* o = out.data() + (i * gw.out + j) * F;
      for (std::size_t f = 0; f < F; ++f) o[f] = bias[f];
      for (std::size_t a = 0; a < k; ++a) {
        const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i * stride + a) - static_cast<std::ptrdiff_t>(gh.pad_before);
        if (r < 0 || r >= static_cast<std::ptrdiff_t>(H)) continue;
        for (std::size_t b = 0; b < k; ++b) {
          const std::ptrdiff_t q = static_cast<std::ptrdiff_t>(j * stride + b) - static_cast<std::ptrdiff_t>(gw.pad_before);
          if (q < 0 || q >= static_cast<std::ptrdiff_t>(W)) continue;
          const T* x = input.data() + (static_cast<std::size_t>(r) * W + static_cast<std::size_t>(q)) * C;
          const T* kk = kernel.data() + (a * k + b) * C * F;
          for (std::size_t c = 0; c < C; ++c) {
            const T xv = x[c];
            if (xv == T(0)) continue;
            const T* kc = kk + c * F;
            for (std::size_t f = 0; f < F; ++f) o[f] += xv * kc[f];
          }
        }
      }
    }
  }
  apply_activation(out, act);
  return out;
}

template <typename T>
void conv2d_backward(const BasicTensor<T>& input, const BasicTensor<T>& kernel, std::size_t stride,
                     const BasicTensor<T>& grad_out, BasicTensor<T>* grad_input, BasicTensor<T>* grad_kernel,
                     BasicTensor<T>* grad_bias) {
  const std::size_t H = input.dim(0), W = input.dim(1), C = input.dim(2);
  const std::size_t k = kernel.dim(0), F = kernel.dim(3);
  const auto gh = same_geometry(H, k, stride), gw = same_geometry(W, k, stride);
  for (std::size_t i = 0; i < gh.out; ++i) {
    for (std::size_t j = 0; j < gw.out; ++j) {
      const T* g = grad_out.data() + (i * gw.out + j) * F;
      if (grad_bias) {
        for (std::size_t f = 0; f < F; ++f) (*grad_bias)[f] += g[f];
      }
      for (std::size_t a = 0; a < k; ++a) {
        const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(i * stride + a) - static_cast<std::ptrdiff_t>(gh.pad_before);
        if (r < 0 || r >= static_cast<std::ptrdiff_t>(H)) continue;
        for (std::size_t b = 0; b < k; ++b) {
          const std::ptrdiff_t q = static_cast<std::ptrdiff_t>(j * stride + b) - static_cast<std::ptrdiff_t>(gw.pad_before);
          if (q < 0 || q >= static_cast<std::ptrdiff_t>(W)) continue;
          const std::size_t xbase = (static_cast<std::size_t>(r) * W + static_cast<std::size_t>(q)) * C;
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t kbase = ((a * k + b) * C + c) * F;
            if (grad_kernel) {
              const T xv = input[xbase + c];
              if (xv != T(0)) {
                T* gk = grad_kernel->data() + kbase;
                for (std::size_t f = 0; f < F; ++f) gk[f] += xv * g[f];
              }
            }
            if (grad_input) {
              const T* kc = kernel.data() + kbase;
              T acc = T(0);
              for (std::size_t f = 0; f < F; ++f) acc += kc[f] * g[f];
              (*grad_input)[xbase + c] += acc;
            }
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// ceil-mode max pooling: [h x w x C] -> [ceil(h/s) x ceil(w/s) x C]

template <typename T>
BasicTensor<T> max_pool_2d(const BasicTensor<T>& input, std::size_t size, std::size_t stride,
                           std::vector<std::size_t>* argmax) {
  require(size > 0 && stride > 0, "max_pool_2d: pool size and stride must be positive");
  require(input.rank() == 3, "max_pool_2d: input must be rank 3 [h x w x C], got " + shape_string(input.shape()));
  const std::size_t H = input.dim(0), W = input.dim(1), C = input.dim(2);
  const std::size_t oh = ceil_div(H, stride), ow = ceil_div(W, stride);
  BasicTensor<T> out({oh, ow, C});
  if (argmax) argmax->assign(out.size(), 0);
  for (std::size_t i = 0; i < oh; ++i) {
    const std::size_t r_end = std::min(H, i * stride + size);
    for (std::size_t j = 0; j < ow; ++j) {
      const std::size_t q_end = std::min(W, j * stride + size);
      for (std::size_t c = 0; c < C; ++c) {
        std::size_t best = (i * stride * W + j * stride) * C + c;
        for (std::size_t r = i * stride; r < r_end; ++r) {
          for (std::size_t q = j * stride; q < q_end; ++q) {
            const std::size_t idx = (r * W + q) * C + c;
            if (input[idx] > input[best]) best = idx;
          }
        }
        const std::size_t o = (i * ow + j) * C + c;
        out[o] = input[best];
        if (argmax) (*argmax)[o] = best;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// affine: weight [r x q], input [q], bias [r] -> [r]

template <typename T>
BasicTensor<T> affine(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>* bias) {
  require(weight.rank() == 2, "affine: weight must be rank 2 [r x q], got " + shape_string(weight.shape()));
  require(input.rank() == 1 && input.dim(0) == weight.dim(1),
          "affine: input length " + std::to_string(input.size()) + " does not match weight columns q=" +
              std::to_string(weight.dim(1)));
  if (bias) {
    require(bias->rank() == 1 && bias->dim(0) == weight.dim(0),
            "affine: bias length must equal weight rows r=" + std::to_string(weight.dim(0)));
  }
  const std::size_t r = weight.dim(0), q = weight.dim(1);
  BasicTensor<T> out({r});
  for (std::size_t i = 0; i < r; ++i) {
    const T* wr = weight.data() + i * q;
    T acc = bias ? (*bias)[i] : T(0);
    for (std::size_t j = 0; j < q; ++j) acc += wr[j] * input[j];
    out[i] = acc;
  }
  return out;
}

// ---------------------------------------------------------------------------
// softmax with max subtraction

template <typename T>
std::vector<T> softmax(std::span<const T> logits) {
  std::vector<T> p(logits.size());
  const T mx = *std::max_element(logits.begin(), logits.end());
  T sum = T(0);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (T& v : p) v /= sum;
  return p;
}

/// log softmax, stable for large logits.
template <typename T>
std::vector<T> log_softmax(std::span<const T> logits) {
  const T mx = *std::max_element(logits.begin(), logits.end());
  T sum = T(0);
  for (T v : logits) sum += std::exp(v - mx);
  const T lse = mx + std::log(sum);
  std::vector<T> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

}  // namespace drtl::kernels
