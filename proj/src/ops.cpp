#include "hcn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace hcn {

namespace {

struct Dims4 {
  std::size_t n, h, w, c;
};

template <typename T>
Dims4 map_dims(const Tensor<T>& x, const char* what) {
  if (x.rank() == 3) return {1, x.dim(0), x.dim(1), x.dim(2)};
  if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
  throw DimensionError(std::string(what) + ": expected rank 3 or 4 map, got " + shape_string(x.shape()));
}

Shape map_shape(bool batched, const Dims4& d) {
  if (batched) return {d.n, d.h, d.w, d.c};
  return {d.h, d.w, d.c};
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b)
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

}  // namespace

std::size_t conv_out_size(std::size_t in, std::size_t pad_lo, std::size_t pad_hi, std::size_t kernel,
                          std::size_t stride, const char* what) {
  if (stride == 0) throw DimensionError(std::string(what) + ": stride must be >= 1");
  const std::size_t padded = in + pad_lo + pad_hi;
  if (kernel == 0 || kernel > padded)
    throw DimensionError(std::string(what) + ": window " + std::to_string(kernel) + " exceeds padded extent " +
                         std::to_string(padded));
  return (padded - kernel) / stride + 1;
}

template <typename T>
ConvParams<T> ConvParams<T>::zeros(std::size_t kh, std::size_t kw, std::size_t cin, std::size_t cout, Stride stride,
                                   Padding padding) {
  return ConvParams{Tensor<T>({kh, kw, cin, cout}), Tensor<T>({cout}), stride, padding};
}

template <typename T>
void ConvParams<T>::validate() const {
  if (filters.rank() != 4) throw DimensionError("conv filters must be rank 4 (kh, kw, cin, cout)");
  if (bias.rank() != 1 || bias.dim(0) != out_channels())
    throw DimensionError("conv bias length " + shape_string(bias.shape()) + " does not match cout " +
                         std::to_string(out_channels()));
  if (stride.h == 0 || stride.w == 0) throw DimensionError("conv stride must be >= 1");
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvParams<T>& p) {
  p.validate();
  const Dims4 d = map_dims(x, "conv2d");
  if (d.c != p.in_channels())
    throw DimensionError("conv2d: input has " + std::to_string(d.c) + " channels, filters expect " +
                         std::to_string(p.in_channels()));
  const std::size_t kh = p.kernel_h(), kw = p.kernel_w(), co = p.out_channels();
  const std::size_t oh = conv_out_size(d.h, p.padding.top, p.padding.bottom, kh, p.stride.h, "conv2d");
  const std::size_t ow = conv_out_size(d.w, p.padding.left, p.padding.right, kw, p.stride.w, "conv2d");
  Tensor<T> y(map_shape(x.rank() == 4, {d.n, oh, ow, co}));
  const T* xs = x.data().data();
  const T* ws = p.filters.data().data();
  const T* bs = p.bias.data().data();
  T* ys = y.data().data();
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        T* out = ys + ((n * oh + i) * ow + j) * co;
        std::copy(bs, bs + co, out);
        for (std::size_t a = 0; a < kh; ++a) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(i * p.stride.h + a) -
                                    static_cast<std::ptrdiff_t>(p.padding.top);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(d.h)) continue;
          for (std::size_t b = 0; b < kw; ++b) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(j * p.stride.w + b) -
                                      static_cast<std::ptrdiff_t>(p.padding.left);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(d.w)) continue;
            const T* in = xs + ((n * d.h + static_cast<std::size_t>(ih)) * d.w + static_cast<std::size_t>(iw)) * d.c;
            const T* wk = ws + (a * kw + b) * d.c * co;
            for (std::size_t ci = 0; ci < d.c; ++ci) {
              const T v = in[ci];
              const T* wrow = wk + ci * co;
              for (std::size_t o = 0; o < co; ++o) out[o] += v * wrow[o];
            }
          }
        }
      }
    }
  }
  y.require_finite("conv2d");
  return y;
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& filters, const Stride& stride, const Padding& pad,
                     const Tensor<T>& grad_out, Tensor<T>* grad_x, Tensor<T>* grad_filters, Tensor<T>* grad_bias) {
  const Dims4 d = map_dims(x, "conv2d_backward");
  const Dims4 g = map_dims(grad_out, "conv2d_backward");
  const std::size_t kh = filters.dim(0), kw = filters.dim(1), co = filters.dim(3);
  if (grad_x) *grad_x = Tensor<T>(x.shape());
  if (grad_filters) *grad_filters = Tensor<T>(filters.shape());
  if (grad_bias) *grad_bias = Tensor<T>({co});
  const T* xs = x.data().data();
  const T* ws = filters.data().data();
  const T* gs = grad_out.data().data();
  T* gx = grad_x ? grad_x->data().data() : nullptr;
  T* gw = grad_filters ? grad_filters->data().data() : nullptr;
  T* gb = grad_bias ? grad_bias->data().data() : nullptr;
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t i = 0; i < g.h; ++i) {
      for (std::size_t j = 0; j < g.w; ++j) {
        const T* go = gs + ((n * g.h + i) * g.w + j) * co;
        if (gb)
          for (std::size_t o = 0; o < co; ++o) gb[o] += go[o];
        for (std::size_t a = 0; a < kh; ++a) {
          const std::ptrdiff_t ih =
              static_cast<std::ptrdiff_t>(i * stride.h + a) - static_cast<std::ptrdiff_t>(pad.top);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(d.h)) continue;
          for (std::size_t b = 0; b < kw; ++b) {
            const std::ptrdiff_t iw =
                static_cast<std::ptrdiff_t>(j * stride.w + b) - static_cast<std::ptrdiff_t>(pad.left);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(d.w)) continue;
            const std::size_t in_off =
                ((n * d.h + static_cast<std::size_t>(ih)) * d.w + static_cast<std::size_t>(iw)) * d.c;
            const std::size_t w_off = (a * kw + b) * d.c * co;
            for (std::size_t ci = 0; ci < d.c; ++ci) {
              const T* wrow = ws + w_off + ci * co;
              if (gx) {
                T acc = 0;
                for (std::size_t o = 0; o < co; ++o) acc += go[o] * wrow[o];
                gx[in_off + ci] += acc;
              }
              if (gw) {
                const T v = xs[in_off + ci];
                T* gwrow = gw + w_off + ci * co;
                for (std::size_t o = 0; o < co; ++o) gwrow[o] += v * go[o];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> channel_max(const Tensor<T>& x, std::vector<std::size_t>* argmax) {
  const Dims4 d = map_dims(x, "channel_max");
  Tensor<T> y(map_shape(x.rank() == 4, {d.n, d.h, d.w, 1}));
  if (argmax) argmax->assign(y.size(), 0);
  for (std::size_t p = 0; p < y.size(); ++p) {
    const T* in = x.data().data() + p * d.c;
    std::size_t best = 0;
    for (std::size_t c = 1; c < d.c; ++c)
      if (in[c] > in[best]) best = c;
    y[p] = in[best];
    if (argmax) (*argmax)[p] = p * d.c + best;
  }
  return y;
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, std::size_t window, std::size_t stride, std::vector<std::size_t>* argmax) {
  const Dims4 d = map_dims(x, "maxpool2d");
  if (window > d.h || window > d.w)
    throw DimensionError("maxpool2d: window " + std::to_string(window) + " larger than map " +
                         shape_string(x.shape()));
  const std::size_t oh = conv_out_size(d.h, 0, 0, window, stride, "maxpool2d");
  const std::size_t ow = conv_out_size(d.w, 0, 0, window, stride, "maxpool2d");
  Tensor<T> y(map_shape(x.rank() == 4, {d.n, oh, ow, d.c}));
  if (argmax) argmax->assign(y.size(), 0);
  std::size_t out = 0;
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j)
        for (std::size_t c = 0; c < d.c; ++c, ++out) {
          std::size_t best = ((n * d.h + i * stride) * d.w + j * stride) * d.c + c;
          for (std::size_t a = 0; a < window; ++a)
            for (std::size_t b = 0; b < window; ++b) {
              const std::size_t idx = ((n * d.h + i * stride + a) * d.w + j * stride + b) * d.c + c;
              if (x[idx] > x[best]) best = idx;
            }
          y[out] = x[best];
          if (argmax) (*argmax)[out] = best;
        }
  return y;
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : slope * x[i];
  return y;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[i];
  y.require_finite("add");
  return y;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  Tensor<T> y(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] * factor;
  y.require_finite("scale");
  return y;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  const Dims4 da = map_dims(a, "concat_channels");
  const Dims4 db = map_dims(b, "concat_channels");
  if (a.rank() != b.rank() || da.n != db.n || da.h != db.h || da.w != db.w)
    throw DimensionError("concat_channels: spatial mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  Tensor<T> y(map_shape(a.rank() == 4, {da.n, da.h, da.w, da.c + db.c}));
  const std::size_t pixels = da.n * da.h * da.w;
  for (std::size_t p = 0; p < pixels; ++p) {
    T* out = y.data().data() + p * (da.c + db.c);
    std::copy_n(a.data().data() + p * da.c, da.c, out);
    std::copy_n(b.data().data() + p * db.c, db.c, out + da.c);
  }
  return y;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t count) {
  const Dims4 d = map_dims(x, "slice_rows");
  if (count == 0 || begin + count > d.h)
    throw DimensionError("slice_rows: rows [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                         ") outside height " + std::to_string(d.h));
  Tensor<T> y(map_shape(x.rank() == 4, {d.n, count, d.w, d.c}));
  const std::size_t row = d.w * d.c;
  for (std::size_t n = 0; n < d.n; ++n)
    std::copy_n(x.data().data() + (n * d.h + begin) * row, count * row, y.data().data() + n * count * row);
  return y;
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no parts");
  const Dims4 first = map_dims(parts.front(), "concat_rows");
  std::size_t total_h = 0;
  for (const auto& part : parts) {
    const Dims4 d = map_dims(part, "concat_rows");
    if (part.rank() != parts.front().rank() || d.n != first.n || d.w != first.w || d.c != first.c)
      throw DimensionError("concat_rows: part shape " + shape_string(part.shape()) + " incompatible with " +
                           shape_string(parts.front().shape()));
    total_h += d.h;
  }
  Tensor<T> y(map_shape(parts.front().rank() == 4, {first.n, total_h, first.w, first.c}));
  const std::size_t row = first.w * first.c;
  for (std::size_t n = 0; n < first.n; ++n) {
    std::size_t h0 = 0;
    for (const auto& part : parts) {
      const std::size_t ph = part.rank() == 4 ? part.dim(1) : part.dim(0);
      std::copy_n(part.data().data() + n * ph * row, ph * row, y.data().data() + (n * total_h + h0) * row);
      h0 += ph;
    }
  }
  return y;
}

template <typename T>
Tensor<T> zero_pad(const Tensor<T>& x, const Padding& pad) {
  const Dims4 d = map_dims(x, "zero_pad");
  const std::size_t oh = d.h + pad.top + pad.bottom, ow = d.w + pad.left + pad.right;
  Tensor<T> y(map_shape(x.rank() == 4, {d.n, oh, ow, d.c}));
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t i = 0; i < d.h; ++i)
      std::copy_n(x.data().data() + (n * d.h + i) * d.w * d.c, d.w * d.c,
                  y.data().data() + ((n * oh + i + pad.top) * ow + pad.left) * d.c);
  return y;
}

template <typename T>
Tensor<T> upscale_rows(const Tensor<T>& x, std::size_t factor) {
  if (factor == 0) throw DimensionError("upscale_rows: factor must be >= 1");
  const Dims4 d = map_dims(x, "upscale_rows");
  Tensor<T> y(map_shape(x.rank() == 4, {d.n, d.h * factor, d.w, d.c}));
  const std::size_t row = d.w * d.c;
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t r = 0; r < d.h * factor; ++r)
      std::copy_n(x.data().data() + (n * d.h + r / factor) * row, row,
                  y.data().data() + (n * d.h * factor + r) * row);
  return y;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  const Dims4 d = map_dims(x, "global_avg_pool");
  Tensor<T> y({d.n, d.c});
  const std::size_t hw = d.h * d.w;
  for (std::size_t n = 0; n < d.n; ++n) {
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t c = 0; c < d.c; ++c) y[n * d.c + c] += x[(n * hw + p) * d.c + c];
    for (std::size_t c = 0; c < d.c; ++c) y[n * d.c + c] /= static_cast<T>(hw);
  }
  return y;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || bias.rank() != 1)
    throw DimensionError("linear: expected x (N,D), weight (D,K), bias (K)");
  const std::size_t n = x.dim(0), din = x.dim(1), k = weight.dim(1);
  if (weight.dim(0) != din || bias.dim(0) != k)
    throw DimensionError("linear: shape mismatch x " + shape_string(x.shape()) + " weight " +
                         shape_string(weight.shape()) + " bias " + shape_string(bias.shape()));
  Tensor<T> y({n, k});
  for (std::size_t r = 0; r < n; ++r) {
    T* out = y.data().data() + r * k;
    std::copy_n(bias.data().data(), k, out);
    for (std::size_t i = 0; i < din; ++i) {
      const T v = x[r * din + i];
      const T* wrow = weight.data().data() + i * k;
      for (std::size_t o = 0; o < k; ++o) out[o] += v * wrow[o];
    }
  }
  y.require_finite("linear");
  return y;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  const std::size_t k = logits.shape().back();
  const std::size_t rows = logits.size() / k;
  Tensor<T> y(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = logits.data().data() + r * k;
    T* out = y.data().data() + r * k;
    const T mx = *std::max_element(in, in + k);
    T sum = 0;
    for (std::size_t i = 0; i < k; ++i) sum += (out[i] = std::exp(in[i] - mx));
    for (std::size_t i = 0; i < k; ++i) out[i] /= sum;
  }
  y.require_finite("softmax");
  return y;
}

template <typename T>
T cross_entropy(const Tensor<T>& probs, const std::vector<std::size_t>& targets) {
  const std::size_t k = probs.shape().back();
  const std::size_t rows = probs.size() / k;
  if (targets.size() != rows)
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(rows) + " rows");
  const T tol = std::is_same_v<T, float> ? T(1e-4) : T(1e-9);
  T loss = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* p = probs.data().data() + r * k;
    T sum = 0;
    for (std::size_t i = 0; i < k; ++i) {
      if (p[i] < T(0)) throw ContractError("cross_entropy: negative probability");
      sum += p[i];
    }
    if (std::abs(sum - T(1)) > tol)
      throw ContractError("cross_entropy: row " + std::to_string(r) + " is not normalized (sum " +
                          std::to_string(static_cast<double>(sum)) + ")");
    if (targets[r] >= k) throw ContractError("cross_entropy: target out of range");
    loss -= std::log(std::max(p[targets[r]], std::numeric_limits<T>::min()));
  }
  return loss / static_cast<T>(rows);
}

template <typename T>
BatchNormParams<T> BatchNormParams<T>::identity(std::size_t channels) {
  BatchNormParams bn;
  bn.gamma = Tensor<T>({channels}, T(1));
  bn.beta = Tensor<T>({channels});
  bn.running_mean = Tensor<T>({channels});
  bn.running_var = Tensor<T>({channels}, T(1));
  return bn;
}

template <typename T>
Tensor<T> batch_norm_train(const Tensor<T>& x, BatchNormParams<T>& bn, BatchNormCache<T>* cache,
                           bool update_running) {
  const std::size_t c = x.shape().back();
  if (bn.gamma.size() != c) throw DimensionError("batch_norm: channel mismatch");
  const std::size_t m = x.size() / c;
  std::vector<T> mean(c, T(0)), var(c, T(0));
  for (std::size_t p = 0; p < m; ++p)
    for (std::size_t k = 0; k < c; ++k) mean[k] += x[p * c + k];
  for (auto& v : mean) v /= static_cast<T>(m);
  for (std::size_t p = 0; p < m; ++p)
    for (std::size_t k = 0; k < c; ++k) {
      const T dv = x[p * c + k] - mean[k];
      var[k] += dv * dv;
    }
  for (auto& v : var) v /= static_cast<T>(m);
  std::vector<T> inv_std(c);
  for (std::size_t k = 0; k < c; ++k) inv_std[k] = T(1) / std::sqrt(var[k] + bn.eps);
  Tensor<T> y(x.shape());
  Tensor<T> xhat(x.shape());
  for (std::size_t p = 0; p < m; ++p)
    for (std::size_t k = 0; k < c; ++k) {
      const T h = (x[p * c + k] - mean[k]) * inv_std[k];
      xhat[p * c + k] = h;
      y[p * c + k] = bn.gamma[k] * h + bn.beta[k];
    }
  if (update_running) {
    const T unbias = m > 1 ? static_cast<T>(m) / static_cast<T>(m - 1) : T(1);
    for (std::size_t k = 0; k < c; ++k) {
      bn.running_mean[k] = (T(1) - bn.momentum) * bn.running_mean[k] + bn.momentum * mean[k];
      bn.running_var[k] = (T(1) - bn.momentum) * bn.running_var[k] + bn.momentum * var[k] * unbias;
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  y.require_finite("batch_norm");
  return y;
}

template <typename T>
Tensor<T> batch_norm_eval(const Tensor<T>& x, const BatchNormParams<T>& bn) {
  const std::size_t c = x.shape().back();
  if (bn.gamma.size() != c) throw DimensionError("batch_norm: channel mismatch");
  Tensor<T> y(x.shape());
  for (std::size_t k = 0; k < c; ++k) {
    const T s = bn.gamma[k] / std::sqrt(bn.running_var[k] + bn.eps);
    const T shift = bn.beta[k] - bn.running_mean[k] * s;
    for (std::size_t p = k; p < x.size(); p += c) y[p] = x[p] * s + shift;
  }
  y.require_finite("batch_norm");
  return y;
}

template <typename T>
void batch_norm_backward(const BatchNormCache<T>& cache, const Tensor<T>& gamma, const Tensor<T>& grad_out,
                         Tensor<T>* grad_x, Tensor<T>* grad_gamma, Tensor<T>* grad_beta) {
  const std::size_t c = gamma.size();
  const std::size_t m = grad_out.size() / c;
  std::vector<T> sum_g(c, T(0)), sum_gh(c, T(0));
  for (std::size_t p = 0; p < m; ++p)
    for (std::size_t k = 0; k < c; ++k) {
      const T g = grad_out[p * c + k];
      sum_g[k] += g;
      sum_gh[k] += g * cache.xhat[p * c + k];
    }
  if (grad_gamma) *grad_gamma = Tensor<T>({c}, std::vector<T>(sum_gh));
  if (grad_beta) *grad_beta = Tensor<T>({c}, std::vector<T>(sum_g));
  if (grad_x) {
    *grad_x = Tensor<T>(grad_out.shape());
    const T inv_m = T(1) / static_cast<T>(m);
    for (std::size_t p = 0; p < m; ++p)
      for (std::size_t k = 0; k < c; ++k) {
        const std::size_t i = p * c + k;
        (*grad_x)[i] = gamma[k] * cache.inv_std[k] *
                       (grad_out[i] - inv_m * sum_g[k] - cache.xhat[i] * inv_m * sum_gh[k]);
      }
  }
}

#define HCN_INSTANTIATE_OPS(T)                                                                                   \
  template struct ConvParams<T>;                                                                                 \
  template struct BatchNormParams<T>;                                                                            \
  template Tensor<T> conv2d(const Tensor<T>&, const ConvParams<T>&);                                             \
  template void conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Stride&, const Padding&,              \
                                const Tensor<T>&, Tensor<T>*, Tensor<T>*, Tensor<T>*);                           \
  template Tensor<T> channel_max(const Tensor<T>&, std::vector<std::size_t>*);                                   \
  template Tensor<T> maxpool2d(const Tensor<T>&, std::size_t, std::size_t, std::vector<std::size_t>*);           \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                                            \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                    \
  template Tensor<T> scale(const Tensor<T>&, T);                                                                 \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                                     \
  template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                                                 \
  template Tensor<T> zero_pad(const Tensor<T>&, const Padding&);                                                 \
  template Tensor<T> upscale_rows(const Tensor<T>&, std::size_t);                                                \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                                          \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> softmax(const Tensor<T>&);                                                                  \
  template T cross_entropy(const Tensor<T>&, const std::vector<std::size_t>&);                                   \
  template Tensor<T> batch_norm_train(const Tensor<T>&, BatchNormParams<T>&, BatchNormCache<T>*, bool);          \
  template Tensor<T> batch_norm_eval(const Tensor<T>&, const BatchNormParams<T>&);                               \
  template void batch_norm_backward(const BatchNormCache<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*,    \
                                    Tensor<T>*, Tensor<T>*);

HCN_INSTANTIATE_OPS(float)
HCN_INSTANTIATE_OPS(double)

#undef HCN_INSTANTIATE_OPS

}  // namespace hcn
