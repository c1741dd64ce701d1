#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hcn/init.hpp"
#include "hcn/ops.hpp"

namespace hcn::features {

inline constexpr std::size_t kStems = 4;
inline constexpr std::size_t kSplits = 3;
inline constexpr std::size_t kFrontKernel = 7;
inline constexpr std::size_t kFrontChannels = 48;
inline constexpr float kStemSlope = 0.1f;

// First convolution applied to the grayscale image: 7x7, stride 1, 48 maps,
// padding 3 on every side so the spatial size is kept.
template <typename T>
struct FrontConv {
  ConvParams<T> conv;

  static FrontConv random(Rng& rng);
  void validate() const;
};

enum class StemLayerKind { Conv, MaxPool, ResidualConv };

struct StemLayer {
  StemLayerKind kind = StemLayerKind::Conv;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t out_channels = 0;  // conv only; residual keeps its input width
};

// Layer list of one stem. Every conv is followed by a leaky ReLU; a residual
// conv adds its (same-shape) input back before the activation.
struct StemSpec {
  std::size_t stem_id = 0;
  std::size_t input_size = 24;  // stems take square inputs
  std::size_t out_size = 7;
  std::size_t out_channels = 16;
  std::vector<StemLayer> layers;

  // Shape produced by running the layers on an input_size x input_size x 1 map.
  Shape infer_output_shape() const;
  void validate() const;
  std::string describe() const;
  static StemSpec parse(const std::string& text);
};

// Four architecturally distinct stems for the given geometry. Each body ends in
// a "valid" projection conv whose kernel is chosen so the output is exactly
// out_size x out_size x out_channels.
std::array<StemSpec, kStems> default_stem_specs(std::size_t input_size, std::size_t out_size,
                                                std::size_t out_channels);

template <typename T>
struct Stem {
  StemSpec spec;
  std::vector<ConvParams<T>> convs;  // one per Conv / ResidualConv layer

  static Stem random(const StemSpec& spec, Rng& rng);
  Tensor<T> forward(const Tensor<T>& input) const;
};

// The four per-stem maps of one image.
template <typename T>
struct FeatureStack {
  std::array<Tensor<T>, kStems> maps;
  std::string source_id;
  std::optional<std::size_t> label;

  const Shape& shape() const { return maps[0].shape(); }
  void validate() const;
};

// ---- pipeline stages ----------------------------------------------------------

template <typename T>
Tensor<T> front_forward(const Tensor<T>& image, const FrontConv<T>& fc);

// Channel max followed by a lossless split into three horizontal strips
// (top to bottom).
template <typename T>
std::array<Tensor<T>, kSplits> pool1_split(const Tensor<T>& map48);

// Centred zero padding of `sub` to size x size.
template <typename T>
Tensor<T> pad_to_stem(const Tensor<T>& sub, std::size_t size);

// Convolution-sum fusion: concatenate (a, b) along channels, reduce back to F
// channels with a 1x1 convolution, then add `a`.
template <typename T>
Tensor<T> conv_sum_fuse(const Tensor<T>& a, const Tensor<T>& b, const ConvParams<T>& p);

// Left fold of conv_sum_fuse over the three sub-image maps of one stem followed
// by the reverse of pool1_split's height division (nearest-neighbour x3).
template <typename T>
Tensor<T> pool2_fuse_merge(const std::vector<Tensor<T>>& stem_maps, const ConvParams<T>& p);

// Weighted sum of the four maps, weight proportional to each map's mean
// forward-difference gradient magnitude; uniform if every map is flat.
template <typename T>
Tensor<T> gradient_sum_pool(const std::array<Tensor<T>, kStems>& maps, std::array<T, kStems>* weights = nullptr);

// Mean over all pixels and channels of sqrt(dx^2 + dy^2), forward differences,
// zero at the last row/column.
template <typename T>
T mean_gradient_magnitude(const Tensor<T>& map);

// Everything needed to turn an image into a FeatureStack.
template <typename T>
struct FeatureExtractor {
  std::size_t image_height = 24;
  std::size_t image_width = 24;
  FrontConv<T> front;
  std::array<Stem<T>, kStems> stems;
  std::array<ConvParams<T>, kStems> fusion;  // 1x1 x 2F x F per stem

  static FeatureExtractor create(std::size_t image_height, std::size_t image_width, std::size_t out_size,
                                 std::size_t out_channels, std::uint64_t seed);
  // Stem geometry used when the caller supplies its own specs.
  static FeatureExtractor create(std::size_t image_height, std::size_t image_width,
                                 const std::array<StemSpec, kStems>& specs, std::uint64_t seed);

  std::size_t stem_input_size() const;
  Shape feature_shape() const;
  void validate() const;
};

template <typename T>
FeatureStack<T> extract_features(const Tensor<T>& image, const FeatureExtractor<T>& fx);

std::size_t stem_input_size_for(std::size_t image_height, std::size_t image_width);

}  // namespace hcn::features
