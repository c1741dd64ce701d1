#pragma once

// Finite-difference checks of every tape operator and of a small composed
// backbone. Shared by the unit tests and the acceptance binary.

#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "hcn/backbone.hpp"

namespace hcn::testing {

struct GradientCase {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Values bounded away from zero so kinks are not straddled by the stencil.
inline TensorD away_from_zero(Shape shape, std::mt19937_64& rng, double gap = 0.05) {
  TensorD t = random_tensor(std::move(shape), rng);
  for (auto& v : t.data()) v = v < 0 ? v - gap : v + gap;
  return t;
}

inline std::vector<GradientCase> operator_gradient_suite(unsigned seed = 42) {
  std::mt19937_64 rng(seed);
  std::vector<GradientCase> out;
  auto run = [&](const std::string& name, const Forward& f, std::vector<TensorD> inputs) {
    const auto r = grad_check(f, std::move(inputs));
    out.push_back({name, r.max_rel_error, r.checked});
  };
  using V = const std::vector<Var>&;
  using G = GradTape<double>&;

  run("conv2d", [](G t, V v) { return project(t, t.conv2d(v[0], v[1], v[2], {1, 1}, Padding::uniform(1))); },
      {random_tensor({2, 6, 6, 3}, rng), random_tensor({3, 3, 3, 4}, rng), random_tensor({4}, rng)});
  run("conv2d_strided",
      [](G t, V v) { return project(t, t.conv2d(v[0], v[1], v[2], {2, 1}, Padding{1, 0, 2, 1})); },
      {random_tensor({1, 7, 5, 2}, rng), random_tensor({3, 2, 2, 3}, rng), random_tensor({3}, rng)});
  run("channel_max", [](G t, V v) { return project(t, t.channel_max(v[0])); }, {random_tensor({1, 6, 6, 4}, rng)});
  run("maxpool2d", [](G t, V v) { return project(t, t.maxpool2d(v[0], 2, 2)); }, {random_tensor({2, 8, 8, 3}, rng)});
  run("maxpool2d_overlap", [](G t, V v) { return project(t, t.maxpool2d(v[0], 3, 1)); },
      {random_tensor({1, 5, 5, 2}, rng)});
  run("leaky_relu", [](G t, V v) { return project(t, t.leaky_relu(v[0], 0.1)); }, {away_from_zero({1, 6, 6, 4}, rng)});
  run("batch_norm_train",
      [](G t, V v) {
        auto stats = BatchNormParams<double>::identity(3);
        return project(t, t.batch_norm(v[0], v[1], v[2], stats, true));
      },
      {random_tensor({3, 4, 4, 3}, rng), random_tensor({3}, rng, 0.5, 1.5), random_tensor({3}, rng)});
  {
    auto stats = BatchNormParams<double>::identity(4);
    stats.running_mean = random_tensor({4}, rng);
    stats.running_var = random_tensor({4}, rng, 0.5, 2.0);
    run("batch_norm_eval",
        [stats](G t, V v) mutable { return project(t, t.batch_norm(v[0], v[1], v[2], stats, false)); },
        {random_tensor({2, 3, 3, 4}, rng), random_tensor({4}, rng, 0.5, 1.5), random_tensor({4}, rng)});
  }
  run("add", [](G t, V v) { return project(t, t.add(v[0], v[1])); },
      {random_tensor({1, 4, 4, 2}, rng), random_tensor({1, 4, 4, 2}, rng)});
  run("concat_channels", [](G t, V v) { return project(t, t.concat_channels(v[0], v[1])); },
      {random_tensor({1, 4, 4, 2}, rng), random_tensor({1, 4, 4, 3}, rng)});
  run("slice_rows", [](G t, V v) { return project(t, t.slice_rows(v[0], 2, 3)); }, {random_tensor({1, 6, 4, 2}, rng)});
  run("zero_pad", [](G t, V v) { return project(t, t.zero_pad(v[0], Padding{1, 2, 0, 3})); },
      {random_tensor({1, 3, 4, 2}, rng)});
  run("upscale_rows", [](G t, V v) { return project(t, t.upscale_rows(v[0], 3)); }, {random_tensor({1, 2, 4, 3}, rng)});
  run("global_avg_pool", [](G t, V v) { return project(t, t.global_avg_pool(v[0])); },
      {random_tensor({2, 4, 4, 3}, rng)});
  run("linear", [](G t, V v) { return project(t, t.linear(v[0], v[1], v[2])); },
      {random_tensor({3, 5}, rng), random_tensor({5, 4}, rng), random_tensor({4}, rng)});
  run("sum", [](G t, V v) { return t.sum(v[0]); }, {random_tensor({2, 3, 3, 2}, rng)});
  run("softmax_cross_entropy", [](G t, V v) { return t.softmax_cross_entropy(v[0], {0, 2, 1, 2}); },
      {random_tensor({4, 3}, rng, -2.0, 2.0)});
  run("conv_sum_fuse",
      [](G t, V v) {
        return project(t, t.add(t.conv2d(t.concat_channels(v[0], v[1]), v[2], v[3], {1, 1}, {}), v[0]));
      },
      {random_tensor({1, 4, 4, 3}, rng), random_tensor({1, 4, 4, 3}, rng), random_tensor({1, 1, 6, 3}, rng),
       random_tensor({3}, rng)});
  return out;
}

// Gradient of a projection of the logits of a two-conv backbone (batch norm in
// eval mode) with respect to the input and every parameter.
inline GradientCase backbone_gradient_check(unsigned seed = 43) {
  std::mt19937_64 rng(seed);
  backbone::BackboneSpec spec;
  spec.input_shape = {8, 8, 4};
  spec.classes = 3;
  spec.layers = {{backbone::LayerKind::Conv, 3, 4}, {backbone::LayerKind::MaxPool, 2, 0},
                 {backbone::LayerKind::Conv, 1, 3}};
  auto model = backbone::BackboneModel<double>::create(spec, seed);
  for (auto& blk : model.blocks) {
    blk.bn.running_mean = random_tensor(blk.bn.running_mean.shape(), rng, -0.2, 0.2);
    blk.bn.running_var = random_tensor(blk.bn.running_var.shape(), rng, 0.5, 2.0);
    blk.bn.gamma = random_tensor(blk.bn.gamma.shape(), rng, 0.5, 1.5);
    blk.bn.beta = random_tensor(blk.bn.beta.shape(), rng, -0.5, 0.5);
  }
  const TensorD x = random_tensor({2, 8, 8, 4}, rng);

  auto loss_of = [](backbone::BackboneModel<double>& m, const TensorD& input, std::vector<TensorD>* grads) {
    GradTape<double> tape;
    const Var in = tape.parameter(input);
    const auto rec = m.record(tape, in, false);
    const Var loss = project(tape, rec.logits, 5);
    const double value = tape.value(loss)[0];
    if (grads) {
      tape.backward(loss);
      grads->push_back(tape.gradient(in));
      for (auto v : rec.params) grads->push_back(tape.gradient(v));
    }
    return value;
  };

  std::vector<TensorD> analytic;
  loss_of(model, x, &analytic);

  GradientCase r{"backbone_2conv", 0.0, 0};
  const double eps = 1e-5, floor = 1e-6;
  auto compare = [&](double a, double numeric) {
    const double denom = std::max({std::abs(a), std::abs(numeric), floor});
    r.max_rel_error = std::max(r.max_rel_error, std::abs(a - numeric) / denom);
    ++r.checked;
  };
  TensorD xp = x;
  for (std::size_t i = 0; i < xp.size(); ++i) {
    const double orig = xp[i];
    xp[i] = orig + eps;
    const double up = loss_of(model, xp, nullptr);
    xp[i] = orig - eps;
    const double down = loss_of(model, xp, nullptr);
    xp[i] = orig;
    compare(analytic[0][i], (up - down) / (2 * eps));
  }
  auto params = model.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    TensorD& p = *params[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double orig = p[i];
      p[i] = orig + eps;
      const double up = loss_of(model, x, nullptr);
      p[i] = orig - eps;
      const double down = loss_of(model, x, nullptr);
      p[i] = orig;
      compare(analytic[k + 1][i], (up - down) / (2 * eps));
    }
  }
  return r;
}

}  // namespace hcn::testing
