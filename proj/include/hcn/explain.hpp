#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hcn/backbone.hpp"

namespace hcn::explain {

struct SaliencyMap {
  TensorD map;  // H x W, values in [0, 1]
  std::size_t target_class = 0;
  std::size_t source_column = 0;
};

// Grad-CAM against the last conv layer: channel weights are the spatial mean
// of d(logit)/d(A), the map is ReLU(sum_k w_k A_k), bilinearly resized to
// out_h x out_w and divided by its maximum (an all-zero map stays zero).
template <typename T>
SaliencyMap gradcam(const backbone::BackboneModel<T>& model, const Tensor<T>& x, std::size_t class_index,
                    std::size_t out_h, std::size_t out_w);

// Same, resized to the input's spatial size.
template <typename T>
SaliencyMap gradcam(const backbone::BackboneModel<T>& model, const Tensor<T>& x, std::size_t class_index);

// Half-pixel-centre bilinear resize of an H x W map.
TensorD resize_bilinear(const TensorD& map, std::size_t out_h, std::size_t out_w);

struct RgbImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB
};

inline constexpr double kBlend = 0.4;

// Red (low) to yellow (high) heat colour in [0, 1]^3.
std::array<double, 3> heat_color(double s);

// Grayscale image (H x W x 1 in [0, 1]) blended with the heat colour of the
// saliency: out = (1 - a) * gray + a * heat(s) with a = kBlend * s.
RgbImage overlay(const SaliencyMap& s, const TensorF& image);

// "class,probability" lines plus the column the map was taken from.
std::string sidecar_text(const std::vector<std::string>& class_names, const std::vector<double>& probabilities,
                         std::size_t predicted, const SaliencyMap& s, const std::string& note);

}  // namespace hcn::explain
