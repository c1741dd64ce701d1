#include "hcn/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "hcn/errors.hpp"

namespace hcn::backbone {

// ---- spec ---------------------------------------------------------------------

BackboneSpec BackboneSpec::darknet_mini(const Shape& input_shape, std::size_t classes, std::size_t convs,
                                        std::size_t width) {
  BackboneSpec s;
  s.input_shape = input_shape;
  s.classes = classes;
  const bool can_pool = input_shape.size() == 3 && std::min(input_shape[0], input_shape[1]) >= 4;
  for (std::size_t i = 0; i < convs; ++i) {
    if (i == 3 && can_pool) s.layers.push_back({LayerKind::MaxPool, 2, 0});
    const std::size_t base = width << (i / 3);
    const bool wide = i % 3 != 1;
    s.layers.push_back({LayerKind::Conv, wide ? 3u : 1u, wide ? base : std::max<std::size_t>(1, base / 2)});
  }
  s.validate();
  return s;
}

Shape BackboneSpec::trunk_output_shape() const {
  if (input_shape.size() != 3) throw DimensionError("backbone: input shape must be H x W x C");
  std::size_t h = input_shape[0], w = input_shape[1], c = input_shape[2];
  for (const auto& l : layers) {
    if (l.kind == LayerKind::Conv) {
      c = l.out_channels;
    } else {
      if (l.kernel > h || l.kernel > w)
        throw DimensionError("backbone: pool window " + std::to_string(l.kernel) + " larger than " +
                             std::to_string(h) + "x" + std::to_string(w));
      h = conv_out_size(h, 0, 0, l.kernel, l.kernel, "backbone pool");
      w = conv_out_size(w, 0, 0, l.kernel, l.kernel, "backbone pool");
    }
  }
  return {h, w, c};
}

std::size_t BackboneSpec::conv_count() const {
  return static_cast<std::size_t>(
      std::count_if(layers.begin(), layers.end(), [](const LayerSpec& l) { return l.kind == LayerKind::Conv; }));
}

void BackboneSpec::validate() const {
  if (input_shape.size() != 3 || shape_size(input_shape) == 0)
    throw DimensionError("backbone: input shape must be a non-empty H x W x C");
  if (classes != 2 && classes != 3) throw ContractError("backbone: classes must be 2 or 3");
  if (conv_count() == 0) throw ContractError("backbone: need at least one conv layer");
  for (const auto& l : layers) {
    if (l.kernel == 0) throw ContractError("backbone: zero kernel");
    if (l.kind == LayerKind::Conv && (l.out_channels == 0 || l.kernel % 2 == 0))
      throw ContractError("backbone: conv layers need odd kernels and at least one output channel");
  }
  trunk_output_shape();
}

std::string BackboneSpec::describe() const {
  std::ostringstream os;
  os << input_shape.at(0) << ' ' << input_shape.at(1) << ' ' << input_shape.at(2) << ' ' << classes;
  for (const auto& l : layers) {
    if (l.kind == LayerKind::Conv)
      os << " conv:" << l.kernel << ':' << l.out_channels;
    else
      os << " pool:" << l.kernel;
  }
  return os.str();
}

BackboneSpec BackboneSpec::parse(const std::string& text) {
  std::istringstream is(text);
  BackboneSpec s;
  std::size_t h = 0, w = 0, c = 0;
  if (!(is >> h >> w >> c >> s.classes)) throw IoError("backbone spec: expected 'H W C classes'");
  s.input_shape = {h, w, c};
  std::string tok;
  while (is >> tok) {
    std::vector<std::size_t> nums;
    std::string kind = tok.substr(0, tok.find(':'));
    std::istringstream parts(tok.substr(std::min(tok.size(), kind.size() + 1)));
    std::string p;
    while (std::getline(parts, p, ':')) {
      try {
        nums.push_back(std::stoul(p));
      } catch (const std::exception&) {
        throw IoError("backbone spec: bad number in '" + tok + "'");
      }
    }
    if (kind == "conv" && nums.size() == 2)
      s.layers.push_back({LayerKind::Conv, nums[0], nums[1]});
    else if (kind == "pool" && nums.size() == 1)
      s.layers.push_back({LayerKind::MaxPool, nums[0], 0});
    else
      throw IoError("backbone spec: bad layer token '" + tok + "'");
  }
  s.validate();
  return s;
}

// ---- model --------------------------------------------------------------------

template <typename T>
BackboneModel<T> BackboneModel<T>::create(const BackboneSpec& spec, std::uint64_t seed) {
  spec.validate();
  BackboneModel m;
  m.spec = spec;
  m.seed = seed;
  Rng rng = derive_rng(seed, 7);
  std::size_t c = spec.input_shape[2];
  for (const auto& l : spec.layers) {
    if (l.kind != LayerKind::Conv) continue;
    const std::size_t p = l.kernel / 2;
    m.blocks.push_back({he_conv<T>(l.kernel, l.kernel, c, l.out_channels, Stride{1, 1}, Padding::uniform(p), rng),
                        BatchNormParams<T>::identity(l.out_channels)});
    c = l.out_channels;
  }
  he_linear<T>(c, spec.classes, rng, m.head_weight, m.head_bias);
  return m;
}

template <typename T>
Tensor<T> BackboneModel<T>::forward(const Tensor<T>& x) const {
  Tensor<T> h = x.rank() == 3 ? x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)}) : x;
  if (h.rank() != 4 || Shape(h.shape().begin() + 1, h.shape().end()) != spec.input_shape)
    throw DimensionError("backbone: input " + shape_string(x.shape()) + " does not match " +
                         shape_string(spec.input_shape));
  std::size_t b = 0;
  for (const auto& l : spec.layers) {
    if (l.kind == LayerKind::MaxPool) {
      h = maxpool2d(h, l.kernel, l.kernel);
      continue;
    }
    const auto& blk = blocks[b++];
    h = leaky_relu(batch_norm_eval(conv2d(h, blk.conv), blk.bn), static_cast<T>(kLeakySlope));
  }
  Tensor<T> logits = linear(global_avg_pool(h), head_weight, head_bias);
  logits.require_finite("backbone logits");
  return logits;
}

template <typename T>
Tensor<T> BackboneModel<T>::probabilities(const Tensor<T>& x) const {
  return softmax(forward(x));
}

template <typename T>
typename BackboneModel<T>::Recorded BackboneModel<T>::record(GradTape<T>& tape, Var input, bool training) {
  const Shape& in = tape.value(input).shape();
  if (in.size() != 4 || Shape(in.begin() + 1, in.end()) != spec.input_shape)
    throw DimensionError("backbone: input " + shape_string(in) + " does not match " + shape_string(spec.input_shape));
  Recorded r;
  Var h = input;
  std::size_t b = 0;
  for (const auto& l : spec.layers) {
    if (l.kind == LayerKind::MaxPool) {
      h = tape.maxpool2d(h, l.kernel, l.kernel);
      continue;
    }
    auto& blk = blocks[b++];
    const Var w = tape.parameter(blk.conv.filters);
    const Var bias = tape.parameter(blk.conv.bias);
    const Var gamma = tape.parameter(blk.bn.gamma);
    const Var beta = tape.parameter(blk.bn.beta);
    r.params.insert(r.params.end(), {w, bias, gamma, beta});
    h = tape.conv2d(h, w, bias, blk.conv.stride, blk.conv.padding);
    h = tape.batch_norm(h, gamma, beta, blk.bn, training);
    h = tape.leaky_relu(h, static_cast<T>(kLeakySlope));
  }
  r.last_conv = h;
  const Var hw = tape.parameter(head_weight);
  const Var hb = tape.parameter(head_bias);
  r.params.push_back(hw);
  r.params.push_back(hb);
  r.logits = tape.linear(tape.global_avg_pool(h), hw, hb);
  return r;
}

template <typename T>
std::vector<Tensor<T>*> BackboneModel<T>::parameters() {
  std::vector<Tensor<T>*> out;
  for (auto& blk : blocks) out.insert(out.end(), {&blk.conv.filters, &blk.conv.bias, &blk.bn.gamma, &blk.bn.beta});
  out.push_back(&head_weight);
  out.push_back(&head_bias);
  return out;
}

template <typename T>
std::vector<const Tensor<T>*> BackboneModel<T>::parameters() const {
  std::vector<const Tensor<T>*> out;
  for (auto* p : const_cast<BackboneModel*>(this)->parameters()) out.push_back(p);
  return out;
}

template <typename T>
void BackboneModel<T>::validate() const {
  spec.validate();
  if (blocks.size() != spec.conv_count())
    throw ContractError("backbone: " + std::to_string(blocks.size()) + " conv blocks for " +
                        std::to_string(spec.conv_count()) + " conv layers");
  std::size_t c = spec.input_shape[2], b = 0;
  for (const auto& l : spec.layers) {
    if (l.kind != LayerKind::Conv) continue;
    const auto& blk = blocks[b++];
    blk.conv.validate();
    if (blk.conv.kernel_h() != l.kernel || blk.conv.kernel_w() != l.kernel || blk.conv.in_channels() != c ||
        blk.conv.out_channels() != l.out_channels)
      throw DimensionError("backbone: conv block " + std::to_string(b - 1) + " does not match the spec");
    for (const auto* t : {&blk.bn.gamma, &blk.bn.beta, &blk.bn.running_mean, &blk.bn.running_var})
      if (t->size() != l.out_channels) throw DimensionError("backbone: batch norm size mismatch");
    c = l.out_channels;
  }
  if (head_weight.shape() != Shape{c, spec.classes} || head_bias.shape() != Shape{spec.classes})
    throw DimensionError("backbone: head shape mismatch");
  for (const auto* p : parameters())
    if (!p->all_finite()) throw NumericError("backbone: non-finite parameter");
}

// ---- optimisation -------------------------------------------------------------

template <typename T>
void adam_step(const std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& state,
               double lr, const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw DimensionError("adam: parameter and gradient counts differ");
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adam: state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i]->shape())
      throw DimensionError("adam: gradient " + std::to_string(i) + " has shape " + shape_string(grads[i].shape()));
    grads[i].require_finite("adam gradient");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    const auto g = grads[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = g[k];
      const double mk = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
      const double vk = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      p[k] = static_cast<T>(p[k] - lr * (mk / bc1) / (std::sqrt(vk / bc2) + cfg.eps));
    }
  }
}

void AugmentConfig::validate() const {
  if (rotation_deg < 0 || translate < 0 || flip_probability < 0 || flip_probability > 1 || zoom_min <= 0 ||
      zoom_max < zoom_min)
    throw ContractError("augment: invalid ranges");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0) || !std::isfinite(learning_rate)) throw ContractError("train: learning rate must be > 0");
  if (batch_size < 1) throw ContractError("train: batch size must be >= 1");
  if (decay_every < 1) throw ContractError("train: decay interval must be >= 1");
  if (decay_rate < 0 || !std::isfinite(decay_rate)) throw ContractError("train: decay rate must be >= 0");
  augment.validate();
}

double lr_schedule(std::size_t epoch, const TrainConfig& cfg) {
  const double steps = static_cast<double>(epoch / cfg.decay_every);
  switch (cfg.decay_mode) {
    case DecayMode::Exponential:
      return cfg.learning_rate * std::exp(-cfg.decay_rate * steps);
    case DecayMode::Multiplicative:
      return cfg.learning_rate * std::pow(1.0 - cfg.decay_rate, steps);
    case DecayMode::Factor:
      return cfg.learning_rate * std::pow(cfg.decay_rate, steps);
  }
  return cfg.learning_rate;
}

std::vector<std::vector<std::size_t>> bootstrap_batches(const std::vector<std::size_t>& labels, std::size_t classes,
                                                        std::size_t batch_size, std::size_t total_draws,
                                                        std::uint64_t seed) {
  if (batch_size == 0) throw ContractError("bootstrap: batch size must be >= 1");
  std::vector<std::vector<std::size_t>> members(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) throw ContractError("bootstrap: label " + std::to_string(labels[i]) + " out of range");
    members[labels[i]].push_back(i);
  }
  for (std::size_t k = 0; k < classes; ++k)
    if (members[k].empty()) throw ContractError("bootstrap: class " + std::to_string(k) + " has no samples");
  Rng rng = derive_rng(seed, 11);
  std::vector<std::vector<std::size_t>> batches;
  std::size_t rotate = 0;
  for (std::size_t drawn = 0; drawn < total_draws;) {
    const std::size_t b = std::min(batch_size, total_draws - drawn);
    std::vector<std::size_t> batch;
    batch.reserve(b);
    for (std::size_t j = 0; j < b; ++j) {
      const std::size_t k = (rotate + j) % classes;
      std::uniform_int_distribution<std::size_t> pick(0, members[k].size() - 1);
      batch.push_back(members[k][pick(rng)]);
    }
    rotate = (rotate + b) % classes;
    drawn += b;
    batches.push_back(std::move(batch));
  }
  return batches;
}

std::vector<std::vector<std::size_t>> shuffled_batches(std::size_t count, std::size_t batch_size, std::uint64_t seed) {
  if (batch_size == 0) throw ContractError("shuffle: batch size must be >= 1");
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = derive_rng(seed, 12);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < count; i += batch_size)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(count, i + batch_size)));
  return batches;
}

template <typename T>
Tensor<T> hflip(const Tensor<T>& image) {
  if (image.rank() != 3) throw DimensionError("hflip: expected H x W x C");
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  Tensor<T> out(image.shape());
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t k = 0; k < c; ++k) out.at(i, j, k) = image.at(i, w - 1 - j, k);
  return out;
}

template <typename T>
Tensor<T> augment(const Tensor<T>& image, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  if (image.rank() != 3) throw DimensionError("augment: expected H x W x C");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // Always draw all five numbers so the stream does not depend on the ranges.
  const double u_rot = unit(rng), u_tx = unit(rng), u_ty = unit(rng), u_flip = unit(rng), u_zoom = unit(rng);
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  const double theta = (2 * u_rot - 1) * cfg.rotation_deg * std::acos(-1.0) / 180.0;
  const double tx = (2 * u_tx - 1) * cfg.translate * static_cast<double>(w);
  const double ty = (2 * u_ty - 1) * cfg.translate * static_cast<double>(h);
  const bool flip = u_flip < cfg.flip_probability;
  const double zoom = cfg.zoom_min + u_zoom * (cfg.zoom_max - cfg.zoom_min);
  const double cx = (static_cast<double>(w) - 1) / 2, cy = (static_cast<double>(h) - 1) / 2;
  const double cs = std::cos(theta), sn = std::sin(theta);

  Tensor<T> out(image.shape());
  auto pixel = [&](std::ptrdiff_t i, std::ptrdiff_t j, std::size_t k) -> double {
    if (i < 0 || j < 0 || i >= static_cast<std::ptrdiff_t>(h) || j >= static_cast<std::ptrdiff_t>(w)) return 0.0;
    return image.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j), k);
  };
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const double dx = static_cast<double>(j) - cx - tx, dy = static_cast<double>(i) - cy - ty;
      double sx = theta == 0.0 ? dx : cs * dx + sn * dy;
      double sy = theta == 0.0 ? dy : -sn * dx + cs * dy;
      sx = sx / zoom + cx;
      sy = sy / zoom + cy;
      if (flip) sx = static_cast<double>(w) - 1 - sx;
      const double fx0 = std::floor(sx), fy0 = std::floor(sy);
      const double fx = sx - fx0, fy = sy - fy0;
      const auto x0 = static_cast<std::ptrdiff_t>(fx0), y0 = static_cast<std::ptrdiff_t>(fy0);
      for (std::size_t k = 0; k < c; ++k) {
        double v = (1 - fx) * (1 - fy) * pixel(y0, x0, k);
        if (fx > 0) v += fx * (1 - fy) * pixel(y0, x0 + 1, k);
        if (fy > 0) v += (1 - fx) * fy * pixel(y0 + 1, x0, k);
        if (fx > 0 && fy > 0) v += fx * fy * pixel(y0 + 1, x0 + 1, k);
        out.at(i, j, k) = static_cast<T>(v);
      }
    }
  return out;
}

template <typename T>
Tensor<T> stack(const std::vector<const Tensor<T>*>& samples) {
  if (samples.empty()) throw DimensionError("stack: no samples");
  const Shape& s = samples.front()->shape();
  Shape out_shape{samples.size()};
  out_shape.insert(out_shape.end(), s.begin(), s.end());
  std::vector<T> data;
  data.reserve(shape_size(out_shape));
  for (const auto* t : samples) {
    if (t->shape() != s) throw DimensionError("stack: sample shapes differ");
    data.insert(data.end(), t->storage().begin(), t->storage().end());
  }
  return Tensor<T>(out_shape, std::move(data));
}

template <typename T>
TrainResult<T> train_classifier(const std::vector<Tensor<T>>& inputs, const std::vector<std::size_t>& targets,
                                const BackboneSpec& spec, const TrainConfig& cfg) {
  cfg.validate();
  spec.validate();
  if (inputs.size() != targets.size()) throw DimensionError("train: inputs and targets differ in length");
  if (inputs.empty()) throw ContractError("train: no samples");
  std::vector<std::size_t> present(spec.classes, 0);
  for (auto t : targets) {
    if (t >= spec.classes) throw ContractError("train: target " + std::to_string(t) + " out of range");
    ++present[t];
  }
  for (std::size_t k = 0; k < spec.classes; ++k)
    if (present[k] == 0)
      throw ContractError("train: class " + std::to_string(k) + " has no samples (single-label data)");
  for (const auto& x : inputs)
    if (x.shape() != spec.input_shape)
      throw DimensionError("train: sample shape " + shape_string(x.shape()) + " does not match " +
                           shape_string(spec.input_shape));

  TrainResult<T> result{BackboneModel<T>::create(spec, cfg.seed), {}, {}};
  auto& model = result.model;
  AdamState<T> adam;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, cfg);
    Rng epoch_rng = derive_rng(cfg.seed, 1000 + epoch);
    const std::uint64_t batch_seed = epoch_rng();
    const auto batches = cfg.bootstrap
                             ? bootstrap_batches(targets, spec.classes, cfg.batch_size, inputs.size(), batch_seed)
                             : shuffled_batches(inputs.size(), cfg.batch_size, batch_seed);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& batch = batches[bi];
      std::vector<const Tensor<T>*> xs;
      std::vector<std::size_t> ys;
      for (auto i : batch) {
        xs.push_back(&inputs[i]);
        ys.push_back(targets[i]);
      }
      GradTape<T> tape;
      const Var in = tape.constant(stack(xs));
      const auto rec = model.record(tape, in, true);
      const Var loss = tape.softmax_cross_entropy(rec.logits, ys);
      const double l = tape.value(loss)[0];
      if (!std::isfinite(l))
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(bi));
      tape.backward(loss);
      std::vector<Tensor<T>> grads;
      for (auto v : rec.params) grads.push_back(tape.gradient(v));
      adam_step(model.parameters(), grads, adam, lr, cfg.adam);
      loss_sum += l;
      seen += batch.size();
    }
    result.loss_trace.push_back(loss_sum / static_cast<double>(batches.size()));
    result.samples_seen.push_back(seen);
    model.epochs_completed = epoch + 1;
    model.final_lr = lr;
  }
  return result;
}

template <typename T>
TrainResult<T> train_column(const std::vector<Tensor<T>>& maps, const std::vector<int>& encoded,
                            const BackboneSpec& spec, const TrainConfig& cfg) {
  if (spec.classes != 2) throw ContractError("train_column: column models have 2 logits");
  std::vector<std::size_t> targets;
  for (int e : encoded) {
    if (e != -1 && e != 1) throw ContractError("train_column: encoded labels must be -1 or +1");
    targets.push_back(e > 0 ? 1 : 0);
  }
  return train_classifier(maps, targets, spec, cfg);
}

template <typename T>
double accuracy(const BackboneModel<T>& model, const std::vector<Tensor<T>>& inputs,
                const std::vector<std::size_t>& targets) {
  if (inputs.size() != targets.size() || inputs.empty()) throw DimensionError("accuracy: bad input sizes");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto logits = model.forward(inputs[i]);
    const auto s = logits.data();
    hits += static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin()) == targets[i];
  }
  return static_cast<double>(hits) / static_cast<double>(inputs.size());
}

#define HCN_INSTANTIATE_BACKBONE(T)                                                                            \
  template struct BackboneModel<T>;                                                                            \
  template void adam_step(const std::vector<Tensor<T>*>&, const std::vector<Tensor<T>>&, AdamState<T>&, double, \
                          const AdamConfig&);                                                                  \
  template Tensor<T> augment(const Tensor<T>&, const AugmentConfig&, Rng&);                                    \
  template Tensor<T> hflip(const Tensor<T>&);                                                                  \
  template Tensor<T> stack(const std::vector<const Tensor<T>*>&);                                              \
  template TrainResult<T> train_classifier(const std::vector<Tensor<T>>&, const std::vector<std::size_t>&,     \
                                           const BackboneSpec&, const TrainConfig&);                           \
  template TrainResult<T> train_column(const std::vector<Tensor<T>>&, const std::vector<int>&,                 \
                                       const BackboneSpec&, const TrainConfig&);                               \
  template double accuracy(const BackboneModel<T>&, const std::vector<Tensor<T>>&,                             \
                           const std::vector<std::size_t>&);

HCN_INSTANTIATE_BACKBONE(float)
HCN_INSTANTIATE_BACKBONE(double)

#undef HCN_INSTANTIATE_BACKBONE

}  // namespace hcn::backbone
