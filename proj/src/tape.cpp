#include "hcn/tape.hpp"

#include <cmath>
#include <string>

namespace hcn {

template <typename T>
void GradTape<T>::check_open() const {
  if (consumed_) throw ContractError("GradTape: tape already consumed by backward()");
}

template <typename T>
Var GradTape<T>::constant(Tensor<T> value) {
  check_open();
  nodes_.push_back(Node{std::move(value), false, std::nullopt, nullptr});
  return Var{nodes_.size() - 1};
}

template <typename T>
Var GradTape<T>::parameter(Tensor<T> value) {
  check_open();
  nodes_.push_back(Node{std::move(value), true, std::nullopt, nullptr});
  return Var{nodes_.size() - 1};
}

template <typename T>
Var GradTape<T>::record(Tensor<T> value, std::vector<Var> inputs,
                        std::function<void(GradTape&, const Tensor<T>&)> backward) {
  check_open();
  bool rg = false;
  for (Var v : inputs) rg = rg || nodes_.at(v.id).requires_grad;
  nodes_.push_back(Node{std::move(value), rg, std::nullopt, rg ? std::move(backward) : nullptr});
  return Var{nodes_.size() - 1};
}

template <typename T>
void GradTape<T>::accumulate(Var v, const Tensor<T>& g) {
  Node& n = nodes_[v.id];
  if (!n.requires_grad) return;
  if (g.shape() != n.value.shape())
    throw DimensionError("GradTape: gradient shape " + shape_string(g.shape()) + " does not match value " +
                         shape_string(n.value.shape()));
  if (!n.grad) {
    n.grad = g;
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) (*n.grad)[i] += g[i];
  }
}

template <typename T>
Var GradTape<T>::conv2d(Var x, Var filters, Var bias, Stride stride, Padding padding) {
  ConvParams<T> p{value(filters), value(bias), stride, padding};
  Tensor<T> y = hcn::conv2d(value(x), p);
  return record(std::move(y), {x, filters, bias}, [=](GradTape& t, const Tensor<T>& g) {
    Tensor<T> gx, gw, gb;
    conv2d_backward(t.value(x), t.value(filters), stride, padding, g, t.needs(x) ? &gx : nullptr,
                    t.needs(filters) ? &gw : nullptr, t.needs(bias) ? &gb : nullptr);
    if (t.needs(x)) t.accumulate(x, gx);
    if (t.needs(filters)) t.accumulate(filters, gw);
    if (t.needs(bias)) t.accumulate(bias, gb);
  });
}

template <typename T>
Var GradTape<T>::channel_max(Var x) {
  std::vector<std::size_t> argmax;
  Tensor<T> y = hcn::channel_max(value(x), &argmax);
  return record(std::move(y), {x}, [=, argmax = std::move(argmax)](GradTape& t, const Tensor<T>& g) {
    Tensor<T> gx(t.value(x).shape());
    for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
    t.accumulate(x, gx);
  });
}

template <typename T>
Var GradTape<T>::maxpool2d(Var x, std::size_t window, std::size_t stride) {
  std::vector<std::size_t> argmax;
  Tensor<T> y = hcn::maxpool2d(value(x), window, stride, &argmax);
  return record(std::move(y), {x}, [=, argmax = std::move(argmax)](GradTape& t, const Tensor<T>& g) {
    Tensor<T> gx(t.value(x).shape());
    for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
    t.accumulate(x, gx);
  });
}

template <typename T>
Var GradTape<T>::leaky_relu(Var x, T slope) {
  Tensor<T> y = hcn::leaky_relu(value(x), slope);
  return record(std::move(y), {x}, [=](GradTape& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(x);
    Tensor<T> gx(xv.shape());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = xv[i] > T(0) ? g[i] : slope * g[i];
    t.accumulate(x, gx);
  });
}

template <typename T>
Var GradTape<T>::batch_norm(Var x, Var gamma, Var beta, BatchNormParams<T>& stats, bool training) {
  BatchNormParams<T> bn = stats;
  bn.gamma = value(gamma);
  bn.beta = value(beta);
  if (!training) {
    Tensor<T> y = batch_norm_eval(value(x), bn);
    std::vector<T> scale_k(bn.gamma.size());
    for (std::size_t k = 0; k < scale_k.size(); ++k)
      scale_k[k] = T(1) / std::sqrt(bn.running_var[k] + bn.eps);
    Tensor<T> mean = bn.running_mean;
    return record(std::move(y), {x, gamma, beta}, [=](GradTape& t, const Tensor<T>& g) {
      const Tensor<T>& xv = t.value(x);
      const Tensor<T>& gm = t.value(gamma);
      const std::size_t c = gm.size();
      Tensor<T> gx(xv.shape()), gg({c}), gb({c});
      for (std::size_t i = 0; i < g.size(); ++i) {
        const std::size_t k = i % c;
        gx[i] = g[i] * gm[k] * scale_k[k];
        gg[k] += g[i] * (xv[i] - mean[k]) * scale_k[k];
        gb[k] += g[i];
      }
      t.accumulate(x, gx);
      t.accumulate(gamma, gg);
      t.accumulate(beta, gb);
    });
  }
  BatchNormCache<T> cache;
  Tensor<T> y = batch_norm_train(value(x), bn, &cache, true);
  stats.running_mean = bn.running_mean;
  stats.running_var = bn.running_var;
  return record(std::move(y), {x, gamma, beta}, [=, cache = std::move(cache)](GradTape& t, const Tensor<T>& g) {
    Tensor<T> gx, gg, gb;
    batch_norm_backward(cache, t.value(gamma), g, &gx, &gg, &gb);
    t.accumulate(x, gx);
    t.accumulate(gamma, gg);
    t.accumulate(beta, gb);
  });
}

template <typename T>
Var GradTape<T>::add(Var a, Var b) {
  Tensor<T> y = hcn::add(value(a), value(b));
  return record(std::move(y), {a, b}, [=](GradTape& t, const Tensor<T>& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <typename T>
Var GradTape<T>::concat_channels(Var a, Var b) {
  Tensor<T> y = hcn::concat_channels(value(a), value(b));
  const std::size_t ca = value(a).shape().back(), cb = value(b).shape().back();
  return record(std::move(y), {a, b}, [=](GradTape& t, const Tensor<T>& g) {
    Tensor<T> ga(t.value(a).shape()), gb(t.value(b).shape());
    const std::size_t pixels = ga.size() / ca;
    for (std::size_t p = 0; p < pixels; ++p) {
      for (std::size_t k = 0; k < ca; ++k) ga[p * ca + k] = g[p * (ca + cb) + k];
      for (std::size_t k = 0; k < cb; ++k) gb[p * cb + k] = g[p * (ca + cb) + ca + k];
    }
    t.accumulate(a, ga);
    t.accumulate(b, gb);
  });
}

namespace {
template <typename T>
std::size_t height_axis(const Tensor<T>& x) {
  return x.rank() == 4 ? 1 : 0;
}
}  // namespace

template <typename T>
Var GradTape<T>::slice_rows(Var x, std::size_t begin, std::size_t count) {
  Tensor<T> y = hcn::slice_rows(value(x), begin, count);
  return record(std::move(y), {x}, [=](GradTape& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(x);
    Tensor<T> gx(xv.shape());
    const std::size_t ax = height_axis(xv);
    const std::size_t h = xv.dim(ax), batch = ax == 1 ? xv.dim(0) : 1;
    const std::size_t row = xv.size() / (batch * h);
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t r = 0; r < count; ++r)
        for (std::size_t i = 0; i < row; ++i) gx[(n * h + begin + r) * row + i] = g[(n * count + r) * row + i];
    t.accumulate(x, gx);
  });
}

template <typename T>
Var GradTape<T>::zero_pad(Var x, Padding pad) {
  Tensor<T> y = hcn::zero_pad(value(x), pad);
  return record(std::move(y), {x}, [=](GradTape& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(x);
    const std::size_t ax = height_axis(xv);
    const std::size_t h = xv.dim(ax), w = xv.dim(ax + 1), c = xv.dim(ax + 2);
    const std::size_t batch = ax == 1 ? xv.dim(0) : 1;
    const std::size_t oh = h + pad.top + pad.bottom, ow = w + pad.left + pad.right;
    Tensor<T> gx(xv.shape());
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j)
          for (std::size_t k = 0; k < c; ++k)
            gx[((n * h + i) * w + j) * c + k] = g[((n * oh + i + pad.top) * ow + j + pad.left) * c + k];
    t.accumulate(x, gx);
  });
}

template <typename T>
Var GradTape<T>::upscale_rows(Var x, std::size_t factor) {
  Tensor<T> y = hcn::upscale_rows(value(x), factor);
  return record(std::move(y), {x}, [=](GradTape& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(x);
    const std::size_t ax = height_axis(xv);
    const std::size_t h = xv.dim(ax), batch = ax == 1 ? xv.dim(0) : 1;
    const std::size_t row = xv.size() / (batch * h);
    Tensor<T> gx(xv.shape());
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t r = 0; r < h * factor; ++r)
        for (std::size_t i = 0; i < row; ++i) gx[(n * h + r / factor) * row + i] += g[(n * h * factor + r) * row + i];
    t.accumulate(x, gx);
  });
}

template <typename T>
Var GradTape<T>::global_avg_pool(Var x) {
  Tensor<T> y = hcn::global_avg_pool(value(x));
  return record(std::move(y), {x}, [=](GradTape& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(x);
    const std::size_t n = g.dim(0), c = g.dim(1);
    const std::size_t hw = xv.size() / (n * c);
    Tensor<T> gx(xv.shape());
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t k = 0; k < c; ++k) gx[(b * hw + p) * c + k] = g[b * c + k] / static_cast<T>(hw);
    t.accumulate(x, gx);
  });
}

template <typename T>
Var GradTape<T>::linear(Var x, Var weight, Var bias) {
  Tensor<T> y = hcn::linear(value(x), value(weight), value(bias));
  return record(std::move(y), {x, weight, bias}, [=](GradTape& t, const Tensor<T>& g) {
    const Tensor<T>& xv = t.value(x);
    const Tensor<T>& wv = t.value(weight);
    const std::size_t n = xv.dim(0), din = xv.dim(1), k = wv.dim(1);
    Tensor<T> gx(xv.shape()), gw(wv.shape()), gb({k});
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t o = 0; o < k; ++o) gb[o] += g[r * k + o];
      for (std::size_t i = 0; i < din; ++i) {
        T acc = 0;
        for (std::size_t o = 0; o < k; ++o) {
          acc += g[r * k + o] * wv[i * k + o];
          gw[i * k + o] += xv[r * din + i] * g[r * k + o];
        }
        gx[r * din + i] = acc;
      }
    }
    t.accumulate(x, gx);
    t.accumulate(weight, gw);
    t.accumulate(bias, gb);
  });
}

template <typename T>
Var GradTape<T>::sum(Var x) {
  T s = 0;
  for (T v : value(x).data()) s += v;
  return record(Tensor<T>({1}, s), {x}, [=](GradTape& t, const Tensor<T>& g) {
    t.accumulate(x, Tensor<T>(t.value(x).shape(), g[0]));
  });
}

template <typename T>
Var GradTape<T>::weighted_sum(Var x, Tensor<T> weights) {
  if (weights.shape() != value(x).shape())
    throw DimensionError("weighted_sum: weights " + shape_string(weights.shape()) + " vs value " +
                         shape_string(value(x).shape()));
  T s = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * value(x)[i];
  return record(Tensor<T>({1}, s), {x}, [=, weights = std::move(weights)](GradTape& t, const Tensor<T>& g) {
    Tensor<T> gx(weights.shape());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = g[0] * weights[i];
    t.accumulate(x, gx);
  });
}

template <typename T>
Var GradTape<T>::softmax_cross_entropy(Var logits, std::vector<std::size_t> targets) {
  Tensor<T> probs = hcn::softmax(value(logits));
  const T loss = hcn::cross_entropy(probs, targets);
  return record(Tensor<T>({1}, loss), {logits},
                [=, probs = std::move(probs), targets = std::move(targets)](GradTape& t, const Tensor<T>& g) {
                  const std::size_t k = probs.shape().back();
                  const std::size_t rows = probs.size() / k;
                  Tensor<T> gl(probs.shape());
                  const T s = g[0] / static_cast<T>(rows);
                  for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t o = 0; o < k; ++o)
                      gl[r * k + o] = s * (probs[r * k + o] - (o == targets[r] ? T(1) : T(0)));
                  t.accumulate(logits, gl);
                });
}

template <typename T>
void GradTape<T>::backward(Var loss) {
  check_open();
  if (nodes_.at(loss.id).value.size() != 1) throw ContractError("GradTape: backward() needs a scalar loss");
  consumed_ = true;
  if (!nodes_[loss.id].requires_grad) return;
  nodes_[loss.id].grad = Tensor<T>({1}, T(1));
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || !n.grad) continue;
    n.backward(*this, *n.grad);
  }
}

template <typename T>
Tensor<T> GradTape<T>::gradient(Var v) const {
  if (!consumed_) throw ContractError("GradTape: gradient() requested before backward()");
  const Node& n = nodes_.at(v.id);
  if (n.grad) return *n.grad;
  return Tensor<T>(n.value.shape());
}

template class GradTape<float>;
template class GradTape<double>;

}  // namespace hcn
