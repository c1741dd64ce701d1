#pragma once

#include <cstddef>
#include <vector>

#include "hcn/tensor.hpp"

namespace hcn {

struct Stride {
  std::size_t h = 1;
  std::size_t w = 1;
};

// Explicit per-side zero padding. "Same" padding is the caller's job.
struct Padding {
  std::size_t top = 0;
  std::size_t bottom = 0;
  std::size_t left = 0;
  std::size_t right = 0;

  static Padding uniform(std::size_t p) { return {p, p, p, p}; }
};

template <typename T>
struct ConvParams {
  Tensor<T> filters;  // kh x kw x cin x cout
  Tensor<T> bias;     // cout
  Stride stride;
  Padding padding;

  std::size_t kernel_h() const { return filters.dim(0); }
  std::size_t kernel_w() const { return filters.dim(1); }
  std::size_t in_channels() const { return filters.dim(2); }
  std::size_t out_channels() const { return filters.dim(3); }

  // Zero-initialized parameters of the given geometry.
  static ConvParams zeros(std::size_t kh, std::size_t kw, std::size_t cin, std::size_t cout,
                          Stride stride = {}, Padding padding = {});
  void validate() const;
};

// Output spatial size of a convolution or pooling window; throws DimensionError
// when the window does not fit.
std::size_t conv_out_size(std::size_t in, std::size_t pad_lo, std::size_t pad_hi, std::size_t kernel,
                          std::size_t stride, const char* what);

// ---- forward operators (pure) -------------------------------------------------

// Cross-correlation (no kernel flip). x is H x W x C or N x H x W x C.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvParams<T>& p);

// Per-pixel maximum over channels; output has one channel.
template <typename T>
Tensor<T> channel_max(const Tensor<T>& x, std::vector<std::size_t>* argmax = nullptr);

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::size_t window, std::size_t stride,
                    std::vector<std::size_t>* argmax = nullptr);

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

// Channel-wise concatenation of two maps with equal spatial extent.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

// Rows [begin, begin+count) along the height axis of a rank-3 or rank-4 map.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t count);

// Stack maps along the height axis (inverse of slice_rows).
template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);

// Zero padding of a rank-3 or rank-4 map.
template <typename T>
Tensor<T> zero_pad(const Tensor<T>& x, const Padding& pad);

// Nearest-neighbour vertical upscale: output row r copies input row r / factor.
template <typename T>
Tensor<T> upscale_rows(const Tensor<T>& x, std::size_t factor);

// Global average pool N x H x W x C -> N x C.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

// x: N x D, weight: D x K, bias: K -> N x K.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

// Row-wise softmax of an N x K (or K) tensor.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

// Mean negative log-likelihood of `targets` under row-normalized `probs`.
// Throws ContractError if a row does not sum to 1.
template <typename T>
T cross_entropy(const Tensor<T>& probs, const std::vector<std::size_t>& targets);

template <typename T>
struct BatchNormParams {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  static BatchNormParams identity(std::size_t channels);
};

// Cached values of a training-mode batch norm needed for the backward pass.
template <typename T>
struct BatchNormCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;
};

// Training mode: normalizes with batch statistics over all but the last axis
// and, when `update_running` is set, folds them into the running statistics.
template <typename T>
Tensor<T> batch_norm_train(const Tensor<T>& x, BatchNormParams<T>& bn, BatchNormCache<T>* cache,
                           bool update_running);

template <typename T>
Tensor<T> batch_norm_eval(const Tensor<T>& x, const BatchNormParams<T>& bn);

// ---- backward kernels ---------------------------------------------------------

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& filters, const Stride& stride,
                     const Padding& pad, const Tensor<T>& grad_out, Tensor<T>* grad_x,
                     Tensor<T>* grad_filters, Tensor<T>* grad_bias);

template <typename T>
void batch_norm_backward(const BatchNormCache<T>& cache, const Tensor<T>& gamma, const Tensor<T>& grad_out,
                         Tensor<T>* grad_x, Tensor<T>* grad_gamma, Tensor<T>* grad_beta);

}  // namespace hcn
