#include "hcn/features.hpp"

#include <cmath>
#include <sstream>

namespace hcn::features {

template <typename T>
FrontConv<T> FrontConv<T>::random(Rng& rng) {
  return FrontConv{he_conv<T>(kFrontKernel, kFrontKernel, 1, kFrontChannels, {1, 1},
                              Padding::uniform(kFrontKernel / 2), rng)};
}

template <typename T>
void FrontConv<T>::validate() const {
  conv.validate();
  if (conv.kernel_h() != kFrontKernel || conv.kernel_w() != kFrontKernel)
    throw DimensionError("front conv kernel must be 7x7");
  if (conv.stride.h != 1 || conv.stride.w != 1) throw DimensionError("front conv stride must be 1x1");
  if (conv.in_channels() != 1) throw DimensionError("front conv expects a single grayscale channel");
  if (conv.out_channels() != kFrontChannels) throw DimensionError("front conv must produce 48 channels");
}

// ---- stem specs ---------------------------------------------------------------

Shape StemSpec::infer_output_shape() const {
  std::size_t size = input_size, channels = 1;
  for (const auto& l : layers) {
    switch (l.kind) {
      case StemLayerKind::Conv:
        size = conv_out_size(size, l.padding, l.padding, l.kernel, l.stride, "stem conv");
        channels = l.out_channels;
        break;
      case StemLayerKind::MaxPool:
        if (l.kernel > size) throw DimensionError("stem maxpool window larger than map");
        size = conv_out_size(size, 0, 0, l.kernel, l.stride, "stem maxpool");
        break;
      case StemLayerKind::ResidualConv:
        if (l.stride != 1 || 2 * l.padding + 1 != l.kernel)
          throw DimensionError("residual stem conv must preserve its input shape");
        break;
    }
  }
  return {size, size, channels};
}

void StemSpec::validate() const {
  if (layers.empty()) throw DimensionError("stem " + std::to_string(stem_id) + " has no layers");
  for (const auto& l : layers)
    if (l.kind == StemLayerKind::Conv && l.out_channels == 0)
      throw DimensionError("stem conv layer with zero output channels");
  const Shape got = infer_output_shape();
  const Shape want{out_size, out_size, out_channels};
  if (got != want)
    throw DimensionError("stem " + std::to_string(stem_id) + " produces " + shape_string(got) + ", declared " +
                         shape_string(want));
}

std::string StemSpec::describe() const {
  std::ostringstream os;
  os << stem_id << ' ' << input_size << ' ' << out_size << ' ' << out_channels;
  for (const auto& l : layers) {
    switch (l.kind) {
      case StemLayerKind::Conv:
        os << " conv:" << l.kernel << ':' << l.stride << ':' << l.padding << ':' << l.out_channels;
        break;
      case StemLayerKind::MaxPool:
        os << " pool:" << l.kernel << ':' << l.stride;
        break;
      case StemLayerKind::ResidualConv:
        os << " res:" << l.kernel << ':' << l.padding;
        break;
    }
  }
  return os.str();
}

StemSpec StemSpec::parse(const std::string& text) {
  std::istringstream is(text);
  StemSpec s;
  if (!(is >> s.stem_id >> s.input_size >> s.out_size >> s.out_channels))
    throw ContractError("malformed stem spec: " + text);
  s.layers.clear();
  std::string tok;
  while (is >> tok) {
    std::vector<std::size_t> nums;
    const auto colon = tok.find(':');
    const std::string kind = tok.substr(0, colon);
    std::istringstream fields(colon == std::string::npos ? "" : tok.substr(colon + 1));
    std::string f;
    while (std::getline(fields, f, ':')) nums.push_back(std::stoul(f));
    StemLayer l;
    if (kind == "conv" && nums.size() == 4) {
      l = {StemLayerKind::Conv, nums[0], nums[1], nums[2], nums[3]};
    } else if (kind == "pool" && nums.size() == 2) {
      l = {StemLayerKind::MaxPool, nums[0], nums[1], 0, 0};
    } else if (kind == "res" && nums.size() == 2) {
      l = {StemLayerKind::ResidualConv, nums[0], 1, nums[1], 0};
    } else {
      throw ContractError("malformed stem layer '" + tok + "'");
    }
    s.layers.push_back(l);
  }
  s.validate();
  return s;
}

namespace {

std::size_t body_size(StemSpec s) {
  return s.infer_output_shape()[0];
}

// Appends the projection conv that maps the body output onto out_size.
StemSpec finish(StemSpec s) {
  const std::size_t size = body_size(s);
  if (size < s.out_size)
    throw DimensionError("stem " + std::to_string(s.stem_id) + " body shrinks the input to " + std::to_string(size) +
                         ", below the declared output size " + std::to_string(s.out_size));
  s.layers.push_back({StemLayerKind::Conv, size - s.out_size + 1, 1, 0, s.out_channels});
  s.validate();
  return s;
}

// Largest pooling factor that keeps the body at least `target` wide.
std::size_t pool_factor(std::size_t size, std::size_t target) {
  std::size_t f = 1;
  while (size / (f + 1) >= target && f + 1 <= 8) ++f;
  return f;
}

}  // namespace

std::array<StemSpec, kStems> default_stem_specs(std::size_t input_size, std::size_t out_size,
                                                std::size_t out_channels) {
  const std::size_t width = std::max<std::size_t>(4, out_channels / 2);
  std::array<StemSpec, kStems> specs;
  for (std::size_t i = 0; i < kStems; ++i) specs[i] = {i, input_size, out_size, out_channels, {}};

  // 0: single 3x3 conv, pool, projection.
  {
    auto& s = specs[0];
    s.layers.push_back({StemLayerKind::Conv, 3, 1, 1, width});
    const std::size_t f = pool_factor(input_size, out_size + 1);
    if (f > 1) s.layers.push_back({StemLayerKind::MaxPool, f, f, 0, 0});
    s = finish(s);
  }
  // 1: 5x5 valid conv, pool, 3x3 conv, projection (deeper).
  {
    auto& s = specs[1];
    s.layers.push_back({StemLayerKind::Conv, 5, 1, 0, width});
    const std::size_t after = input_size - 4;
    const std::size_t f = pool_factor(after, out_size + 3);
    if (f > 1) s.layers.push_back({StemLayerKind::MaxPool, f, f, 0, 0});
    s.layers.push_back({StemLayerKind::Conv, 3, 1, 0, width + width / 2});
    s = finish(s);
  }
  // 2: strided 7x7 conv straight into the projection (wide, shallow).
  {
    auto& s = specs[2];
    std::size_t stride = 1;
    while ((input_size - 7) / (stride + 1) + 1 >= out_size + 2 && stride + 1 <= 8) ++stride;
    s.layers.push_back({StemLayerKind::Conv, 7, stride, 0, width});
    s = finish(s);
  }
  // 3: strided 3x3 conv, residual 3x3 block, projection.
  {
    auto& s = specs[3];
    std::size_t stride = 1;
    while ((input_size - 3) / (stride + 1) + 1 >= out_size + 1 && stride + 1 <= 8) ++stride;
    s.layers.push_back({StemLayerKind::Conv, 3, stride, 0, width});
    s.layers.push_back({StemLayerKind::ResidualConv, 3, 1, 1, 0});
    s = finish(s);
  }
  return specs;
}

template <typename T>
Stem<T> Stem<T>::random(const StemSpec& spec, Rng& rng) {
  spec.validate();
  Stem s{spec, {}};
  std::size_t channels = 1;
  for (const auto& l : spec.layers) {
    if (l.kind == StemLayerKind::Conv) {
      s.convs.push_back(he_conv<T>(l.kernel, l.kernel, channels, l.out_channels, {l.stride, l.stride},
                                   Padding::uniform(l.padding), rng));
      channels = l.out_channels;
    } else if (l.kind == StemLayerKind::ResidualConv) {
      auto p = he_conv<T>(l.kernel, l.kernel, channels, channels, {1, 1}, Padding::uniform(l.padding), rng);
      // Keep the residual branch small relative to the skip path.
      for (auto& v : p.filters.data()) v *= T(0.5);
      s.convs.push_back(std::move(p));
    }
  }
  return s;
}

template <typename T>
Tensor<T> Stem<T>::forward(const Tensor<T>& input) const {
  if (input.rank() != 3 || input.dim(0) != spec.input_size || input.dim(1) != spec.input_size)
    throw DimensionError("stem " + std::to_string(spec.stem_id) + " expects " + std::to_string(spec.input_size) +
                         "x" + std::to_string(spec.input_size) + " input, got " + shape_string(input.shape()));
  Tensor<T> x = input;
  std::size_t conv = 0;
  for (const auto& l : spec.layers) {
    switch (l.kind) {
      case StemLayerKind::Conv:
        x = leaky_relu(conv2d(x, convs.at(conv++)), T(kStemSlope));
        break;
      case StemLayerKind::MaxPool:
        x = maxpool2d(x, l.kernel, l.stride);
        break;
      case StemLayerKind::ResidualConv:
        x = leaky_relu(add(conv2d(x, convs.at(conv++)), x), T(kStemSlope));
        break;
    }
  }
  return x;
}

template <typename T>
void FeatureStack<T>::validate() const {
  for (const auto& m : maps)
    if (m.shape() != maps[0].shape())
      throw DimensionError("FeatureStack maps differ in shape: " + shape_string(m.shape()) + " vs " +
                           shape_string(maps[0].shape()));
}

// ---- stages -------------------------------------------------------------------

template <typename T>
Tensor<T> front_forward(const Tensor<T>& image, const FrontConv<T>& fc) {
  if (image.rank() != 3 || image.dim(2) != 1)
    throw DimensionError("front_forward: expected H x W x 1 image, got " + shape_string(image.shape()));
  if (image.dim(0) % kSplits != 0)
    throw ContractError("front_forward: image height " + std::to_string(image.dim(0)) +
                        " is not divisible by 3; resize first");
  fc.validate();
  return conv2d(image, fc.conv);
}

template <typename T>
std::array<Tensor<T>, kSplits> pool1_split(const Tensor<T>& map48) {
  if (map48.rank() != 3) throw DimensionError("pool1_split: expected a rank-3 map");
  if (map48.dim(0) % kSplits != 0)
    throw ContractError("pool1_split: height " + std::to_string(map48.dim(0)) + " is not divisible by 3");
  const Tensor<T> single = channel_max(map48);
  const std::size_t strip = single.dim(0) / kSplits;
  return {slice_rows(single, 0, strip), slice_rows(single, strip, strip), slice_rows(single, 2 * strip, strip)};
}

template <typename T>
Tensor<T> pad_to_stem(const Tensor<T>& sub, std::size_t size) {
  if (sub.rank() != 3) throw DimensionError("pad_to_stem: expected a rank-3 map");
  const std::size_t h = sub.dim(0), w = sub.dim(1);
  if (h > size || w > size)
    throw DimensionError("pad_to_stem: sub-image " + shape_string(sub.shape()) + " larger than stem input " +
                         std::to_string(size));
  const std::size_t top = (size - h) / 2, left = (size - w) / 2;
  return zero_pad(sub, Padding{top, size - h - top, left, size - w - left});
}

template <typename T>
Tensor<T> conv_sum_fuse(const Tensor<T>& a, const Tensor<T>& b, const ConvParams<T>& p) {
  if (a.shape() != b.shape())
    throw DimensionError("conv_sum_fuse: shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  p.validate();
  const std::size_t f = a.shape().back();
  if (p.kernel_h() != 1 || p.kernel_w() != 1 || p.in_channels() != 2 * f || p.out_channels() != f)
    throw DimensionError("conv_sum_fuse: parameters must be 1x1 x " + std::to_string(2 * f) + " x " +
                         std::to_string(f) + ", got filters " + shape_string(p.filters.shape()));
  if (p.stride.h != 1 || p.stride.w != 1 || p.padding.top || p.padding.bottom || p.padding.left || p.padding.right)
    throw DimensionError("conv_sum_fuse: 1x1 fusion conv must use stride 1 and no padding");
  return add(conv2d(concat_channels(a, b), p), a);
}

template <typename T>
Tensor<T> pool2_fuse_merge(const std::vector<Tensor<T>>& stem_maps, const ConvParams<T>& p) {
  if (stem_maps.size() != kSplits)
    throw ContractError("pool2_fuse_merge: expected 3 sub-image maps, got " + std::to_string(stem_maps.size()));
  Tensor<T> fused = conv_sum_fuse(stem_maps[0], stem_maps[1], p);
  fused = conv_sum_fuse(fused, stem_maps[2], p);
  return upscale_rows(fused, kSplits);
}

template <typename T>
T mean_gradient_magnitude(const Tensor<T>& map) {
  if (map.rank() != 3) throw DimensionError("mean_gradient_magnitude: expected a rank-3 map");
  const std::size_t h = map.dim(0), w = map.dim(1), c = map.dim(2);
  T total = 0;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t k = 0; k < c; ++k) {
        const T dx = j + 1 < w ? map.at(i, j + 1, k) - map.at(i, j, k) : T(0);
        const T dy = i + 1 < h ? map.at(i + 1, j, k) - map.at(i, j, k) : T(0);
        total += std::sqrt(dx * dx + dy * dy);
      }
  return total / static_cast<T>(map.size());
}

template <typename T>
Tensor<T> gradient_sum_pool(const std::array<Tensor<T>, kStems>& maps, std::array<T, kStems>* weights) {
  for (const auto& m : maps)
    if (m.shape() != maps[0].shape())
      throw DimensionError("gradient_sum_pool: shape mismatch " + shape_string(m.shape()) + " vs " +
                           shape_string(maps[0].shape()));
  std::array<T, kStems> w{};
  T total = 0;
  for (std::size_t k = 0; k < kStems; ++k) total += (w[k] = mean_gradient_magnitude(maps[k]));
  for (auto& v : w) v = total > T(0) ? v / total : T(1) / T(kStems);
  Tensor<T> out(maps[0].shape());
  for (std::size_t k = 0; k < kStems; ++k)
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += w[k] * maps[k][i];
  if (weights) *weights = w;
  return out;
}

std::size_t stem_input_size_for(std::size_t image_height, std::size_t image_width) {
  return std::max(image_height / kSplits, image_width);
}

template <typename T>
FeatureExtractor<T> FeatureExtractor<T>::create(std::size_t image_height, std::size_t image_width,
                                                const std::array<StemSpec, kStems>& specs, std::uint64_t seed) {
  if (image_height % kSplits != 0)
    throw ContractError("image height " + std::to_string(image_height) + " is not divisible by 3");
  FeatureExtractor fx;
  fx.image_height = image_height;
  fx.image_width = image_width;
  Rng front_rng = derive_rng(seed, 100);
  fx.front = FrontConv<T>::random(front_rng);
  for (std::size_t k = 0; k < kStems; ++k) {
    if (specs[k].input_size != fx.stem_input_size())
      throw DimensionError("stem " + std::to_string(k) + " input size " + std::to_string(specs[k].input_size) +
                           " does not match padded sub-image size " + std::to_string(fx.stem_input_size()));
    if (specs[k].out_size != specs[0].out_size || specs[k].out_channels != specs[0].out_channels)
      throw DimensionError("all stems must declare the same output shape");
    Rng stem_rng = derive_rng(seed, 101 + k);
    fx.stems[k] = Stem<T>::random(specs[k], stem_rng);
    const std::size_t f = specs[k].out_channels;
    fx.fusion[k] = he_conv<T>(1, 1, 2 * f, f, {1, 1}, {}, stem_rng);
  }
  return fx;
}

template <typename T>
FeatureExtractor<T> FeatureExtractor<T>::create(std::size_t image_height, std::size_t image_width,
                                                std::size_t out_size, std::size_t out_channels, std::uint64_t seed) {
  return create(image_height, image_width,
                default_stem_specs(stem_input_size_for(image_height, image_width), out_size, out_channels), seed);
}

template <typename T>
std::size_t FeatureExtractor<T>::stem_input_size() const {
  return stem_input_size_for(image_height, image_width);
}

template <typename T>
Shape FeatureExtractor<T>::feature_shape() const {
  const auto& s = stems[0].spec;
  return {s.out_size * kSplits, s.out_size, s.out_channels};
}

template <typename T>
void FeatureExtractor<T>::validate() const {
  front.validate();
  for (std::size_t k = 0; k < kStems; ++k) {
    stems[k].spec.validate();
    fusion[k].validate();
  }
}

template <typename T>
FeatureStack<T> extract_features(const Tensor<T>& image, const FeatureExtractor<T>& fx) {
  if (image.rank() != 3 || image.dim(0) != fx.image_height || image.dim(1) != fx.image_width)
    throw DimensionError("extract_features: image " + shape_string(image.shape()) + " does not match configured " +
                         std::to_string(fx.image_height) + "x" + std::to_string(fx.image_width));
  const auto strips = pool1_split(front_forward(image, fx.front));
  std::array<Tensor<T>, kSplits> padded;
  for (std::size_t s = 0; s < kSplits; ++s) padded[s] = pad_to_stem(strips[s], fx.stem_input_size());
  FeatureStack<T> out;
  for (std::size_t k = 0; k < kStems; ++k) {
    std::vector<Tensor<T>> per_split;
    for (const auto& sub : padded) per_split.push_back(fx.stems[k].forward(sub));
    out.maps[k] = pool2_fuse_merge(per_split, fx.fusion[k]);
  }
  out.validate();
  return out;
}

#define HCN_INSTANTIATE_FEATURES(T)                                                                        \
  template struct FrontConv<T>;                                                                            \
  template struct Stem<T>;                                                                                 \
  template struct FeatureStack<T>;                                                                         \
  template struct FeatureExtractor<T>;                                                                     \
  template Tensor<T> front_forward(const Tensor<T>&, const FrontConv<T>&);                                 \
  template std::array<Tensor<T>, kSplits> pool1_split(const Tensor<T>&);                                   \
  template Tensor<T> pad_to_stem(const Tensor<T>&, std::size_t);                                           \
  template Tensor<T> conv_sum_fuse(const Tensor<T>&, const Tensor<T>&, const ConvParams<T>&);              \
  template Tensor<T> pool2_fuse_merge(const std::vector<Tensor<T>>&, const ConvParams<T>&);                \
  template T mean_gradient_magnitude(const Tensor<T>&);                                                    \
  template Tensor<T> gradient_sum_pool(const std::array<Tensor<T>, kStems>&, std::array<T, kStems>*);      \
  template FeatureStack<T> extract_features(const Tensor<T>&, const FeatureExtractor<T>&);

HCN_INSTANTIATE_FEATURES(float)
HCN_INSTANTIATE_FEATURES(double)

#undef HCN_INSTANTIATE_FEATURES

}  // namespace hcn::features
