#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hcn/init.hpp"
#include "hcn/ops.hpp"
#include "hcn/tape.hpp"

namespace hcn::backbone {

inline constexpr double kLeakySlope = 0.1;

enum class LayerKind { Conv, MaxPool };

// Conv layers use "same" padding (kernel / 2) and are followed by batch norm
// and a leaky ReLU. Max pools use window == stride.
struct LayerSpec {
  LayerKind kind = LayerKind::Conv;
  std::size_t kernel = 3;
  std::size_t out_channels = 0;  // conv only

  bool operator==(const LayerSpec&) const = default;
};

struct BackboneSpec {
  Shape input_shape;  // H x W x C of one sample
  std::vector<LayerSpec> layers;
  std::size_t classes = 2;

  // 3x3 / 1x1 alternation with one max pool after the first three convs.
  static BackboneSpec darknet_mini(const Shape& input_shape, std::size_t classes, std::size_t convs = 6,
                                   std::size_t width = 8);

  // Shape after the last layer, before the global-average-pool head.
  Shape trunk_output_shape() const;
  std::size_t conv_count() const;
  void validate() const;
  // "H W C classes" then one token per layer: conv:k:o or pool:k.
  std::string describe() const;
  static BackboneSpec parse(const std::string& text);
  bool operator==(const BackboneSpec&) const = default;
};

template <typename T>
struct ConvBlock {
  ConvParams<T> conv;
  BatchNormParams<T> bn;
};

template <typename T>
struct BackboneModel {
  BackboneSpec spec;
  std::vector<ConvBlock<T>> blocks;
  Tensor<T> head_weight;  // D x classes
  Tensor<T> head_bias;    // classes
  std::size_t epochs_completed = 0;
  double final_lr = 0.0;
  std::uint64_t seed = 0;

  static BackboneModel create(const BackboneSpec& spec, std::uint64_t seed);

  // Eval mode: running statistics, no state change. Accepts H x W x C or
  // N x H x W x C; returns N x classes logits.
  Tensor<T> forward(const Tensor<T>& x) const;
  // Softmax of forward().
  Tensor<T> probabilities(const Tensor<T>& x) const;

  struct Recorded {
    Var logits;
    Var last_conv;  // trunk output after the final activation
    std::vector<Var> params;
  };
  // Records the network on `tape`. Training mode uses batch statistics and
  // updates the running statistics of this model.
  Recorded record(GradTape<T>& tape, Var input, bool training);

  // Trainable tensors in a fixed order (conv filters, biases, gammas, betas, head).
  std::vector<Tensor<T>*> parameters();
  std::vector<const Tensor<T>*> parameters() const;
  void validate() const;
};

// ---- optimisation -------------------------------------------------------------

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::size_t step = 0;
};

// One bias-corrected Adam update of every tensor in `params`.
template <typename T>
void adam_step(const std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& state,
               double lr, const AdamConfig& cfg = {});

enum class DecayMode {
  Exponential,     // lr0 * exp(-rate * steps)
  Multiplicative,  // lr0 * (1 - rate)^steps
  Factor,          // lr0 * rate^steps
};

struct AugmentConfig {
  double rotation_deg = 15.0;
  double translate = 0.1;  // fraction of each axis
  double flip_probability = 0.5;
  double zoom_min = 0.9;
  double zoom_max = 1.1;

  static AugmentConfig none() { return {0.0, 0.0, 0.0, 1.0, 1.0}; }
  void validate() const;
};

struct TrainConfig {
  double learning_rate = 0.003;
  std::size_t batch_size = 32;
  std::size_t epochs = 40;
  double decay_rate = 0.00005;
  std::size_t decay_every = 3;
  DecayMode decay_mode = DecayMode::Exponential;
  AdamConfig adam;
  bool bootstrap = true;
  AugmentConfig augment;
  std::uint64_t seed = 1;

  void validate() const;
};

double lr_schedule(std::size_t epoch, const TrainConfig& cfg);

// Batches of indices into `labels`, drawn with replacement and stratified
// equally over `classes` classes. Batches hold batch_size draws except the last,
// which completes `total_draws`. When batch_size is not a multiple of the class
// count the leftover draws go to classes in rotating order.
std::vector<std::vector<std::size_t>> bootstrap_batches(const std::vector<std::size_t>& labels, std::size_t classes,
                                                        std::size_t batch_size, std::size_t total_draws,
                                                        std::uint64_t seed);

// Random permutation cut into batches; every sample once per epoch.
std::vector<std::vector<std::size_t>> shuffled_batches(std::size_t count, std::size_t batch_size, std::uint64_t seed);

// Rotation, translation, horizontal flip and zoom about the image centre with
// bilinear resampling and zero fill.
template <typename T>
Tensor<T> augment(const Tensor<T>& image, const AugmentConfig& cfg, Rng& rng);

template <typename T>
Tensor<T> hflip(const Tensor<T>& image);

// Stacks H x W x C samples into N x H x W x C.
template <typename T>
Tensor<T> stack(const std::vector<const Tensor<T>*>& samples);

template <typename T>
struct TrainResult {
  BackboneModel<T> model;
  std::vector<double> loss_trace;         // mean batch loss per epoch
  std::vector<std::size_t> samples_seen;  // per epoch
};

// Softmax cross-entropy training on class indices in [0, spec.classes).
template <typename T>
TrainResult<T> train_classifier(const std::vector<Tensor<T>>& inputs, const std::vector<std::size_t>& targets,
                                const BackboneSpec& spec, const TrainConfig& cfg);

// Binary column training; encoded -1 maps to logit 0 and +1 to logit 1.
template <typename T>
TrainResult<T> train_column(const std::vector<Tensor<T>>& maps, const std::vector<int>& encoded,
                            const BackboneSpec& spec, const TrainConfig& cfg);

template <typename T>
double accuracy(const BackboneModel<T>& model, const std::vector<Tensor<T>>& inputs,
                const std::vector<std::size_t>& targets);

}  // namespace hcn::backbone
