#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

#include "hcn/ops.hpp"

namespace hcn {

// Handle to a value recorded on a GradTape.
struct Var {
  std::size_t id = 0;
};

// Reverse-mode recorder for one scalar-valued forward pass.
//
// Every operator stores its output plus whatever it needs for the backward
// pass. backward() may be called exactly once; afterwards the tape only serves
// gradient lookups and any further recording throws ContractError.
template <typename T>
class GradTape {
 public:
  // A value that receives no gradient.
  Var constant(Tensor<T> value);
  // A value whose gradient is wanted (parameters, or inputs for saliency).
  Var parameter(Tensor<T> value);

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  bool consumed() const noexcept { return consumed_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var conv2d(Var x, Var filters, Var bias, Stride stride, Padding padding);
  Var channel_max(Var x);
  Var maxpool2d(Var x, std::size_t window, std::size_t stride);
  Var leaky_relu(Var x, T slope);
  // Training mode uses batch statistics and updates `stats` running averages;
  // eval mode uses the running statistics in `stats`.
  Var batch_norm(Var x, Var gamma, Var beta, BatchNormParams<T>& stats, bool training);
  Var add(Var a, Var b);
  Var concat_channels(Var a, Var b);
  Var slice_rows(Var x, std::size_t begin, std::size_t count);
  Var zero_pad(Var x, Padding pad);
  Var upscale_rows(Var x, std::size_t factor);
  Var global_avg_pool(Var x);
  Var linear(Var x, Var weight, Var bias);

  // Scalar losses (shape {1}).
  Var sum(Var x);
  Var weighted_sum(Var x, Tensor<T> weights);
  Var softmax_cross_entropy(Var logits, std::vector<std::size_t> targets);

  // Propagates d(loss)/d(node) to every recorded node. Consumes the tape.
  void backward(Var loss);

  // Gradient of the loss with respect to `v`; zeros when `v` did not influence
  // the loss. Only valid after backward().
  Tensor<T> gradient(Var v) const;

 private:
  struct Node {
    Tensor<T> value;
    bool requires_grad = false;
    std::optional<Tensor<T>> grad;
    std::function<void(GradTape&, const Tensor<T>&)> backward;
  };

  Var record(Tensor<T> value, std::vector<Var> inputs, std::function<void(GradTape&, const Tensor<T>&)> backward);
  void accumulate(Var v, const Tensor<T>& g);
  bool needs(Var v) const { return nodes_[v.id].requires_grad; }
  void check_open() const;

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

extern template class GradTape<float>;
extern template class GradTape<double>;

}  // namespace hcn
