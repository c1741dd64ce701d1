#include "hcn/explain.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "hcn/errors.hpp"

namespace hcn::explain {

TensorD resize_bilinear(const TensorD& map, std::size_t out_h, std::size_t out_w) {
  if (map.rank() != 2) throw DimensionError("resize_bilinear: expected H x W");
  const std::size_t h = map.dim(0), w = map.dim(1);
  TensorD out({out_h, out_w});
  auto coord = [](std::size_t o, std::size_t in, std::size_t outn) {
    const double s = (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(outn) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(in - 1));
  };
  for (std::size_t i = 0; i < out_h; ++i) {
    const double sy = coord(i, h, out_h);
    const auto y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t j = 0; j < out_w; ++j) {
      const double sx = coord(j, w, out_w);
      const auto x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - static_cast<double>(x0);
      out[i * out_w + j] = (1 - fy) * ((1 - fx) * map[y0 * w + x0] + fx * map[y0 * w + x1]) +
                           fy * ((1 - fx) * map[y1 * w + x0] + fx * map[y1 * w + x1]);
    }
  }
  return out;
}

template <typename T>
SaliencyMap gradcam(const backbone::BackboneModel<T>& model, const Tensor<T>& x, std::size_t class_index,
                    std::size_t out_h, std::size_t out_w) {
  if (model.blocks.empty()) throw ContractError("gradcam: model has no conv layer");
  if (class_index >= model.spec.classes)
    throw ContractError("gradcam: class " + std::to_string(class_index) + " out of range");
  if (x.rank() != 3) throw DimensionError("gradcam: expected a single H x W x C input");
  auto local = model;  // eval-mode recording does not change the model, but record() is non-const
  GradTape<T> tape;
  const Var in = tape.constant(x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)}));
  const auto rec = local.record(tape, in, false);
  Tensor<T> pick({1, model.spec.classes});
  pick[class_index] = T(1);
  tape.backward(tape.weighted_sum(rec.logits, pick));
  const Tensor<T>& a = tape.value(rec.last_conv);
  const Tensor<T> g = tape.gradient(rec.last_conv);
  const std::size_t h = a.dim(1), w = a.dim(2), c = a.dim(3);
  std::vector<double> alpha(c, 0.0);
  for (std::size_t p = 0; p < h * w; ++p)
    for (std::size_t k = 0; k < c; ++k) alpha[k] += g[p * c + k];
  for (auto& v : alpha) v /= static_cast<double>(h * w);
  TensorD cam({h, w});
  for (std::size_t p = 0; p < h * w; ++p) {
    double s = 0.0;
    for (std::size_t k = 0; k < c; ++k) s += alpha[k] * a[p * c + k];
    cam[p] = std::max(0.0, s);
  }
  TensorD up = resize_bilinear(cam, out_h, out_w);
  double mx = 0.0;
  for (double v : up.data()) mx = std::max(mx, v);
  if (mx > 0)
    for (auto& v : up.data()) v = std::clamp(v / mx, 0.0, 1.0);
  return {std::move(up), class_index, 0};
}

template <typename T>
SaliencyMap gradcam(const backbone::BackboneModel<T>& model, const Tensor<T>& x, std::size_t class_index) {
  if (x.rank() != 3) throw DimensionError("gradcam: expected a single H x W x C input");
  return gradcam(model, x, class_index, x.dim(0), x.dim(1));
}

std::array<double, 3> heat_color(double s) {
  return {1.0, std::clamp(s, 0.0, 1.0), 0.0};
}

RgbImage overlay(const SaliencyMap& s, const TensorF& image) {
  if (image.rank() != 3 || image.dim(2) != 1) throw DimensionError("overlay: expected an H x W x 1 image");
  if (s.map.dim(0) != image.dim(0) || s.map.dim(1) != image.dim(1))
    throw DimensionError("overlay: saliency " + shape_string(s.map.shape()) + " does not match image " +
                         shape_string(image.shape()));
  RgbImage out{image.dim(0), image.dim(1), {}};
  out.pixels.reserve(out.height * out.width * 3);
  for (std::size_t p = 0; p < out.height * out.width; ++p) {
    const double gray = std::clamp<double>(image[p], 0.0, 1.0);
    const double sal = std::clamp(s.map[p], 0.0, 1.0);
    const double a = kBlend * sal;
    const auto heat = heat_color(sal);
    for (double hc : heat) {
      const double v = (1 - a) * gray + a * hc;
      out.pixels.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
    }
  }
  return out;
}

std::string sidecar_text(const std::vector<std::string>& class_names, const std::vector<double>& probabilities,
                         std::size_t predicted, const SaliencyMap& s, const std::string& note) {
  std::ostringstream os;
  os << "class,probability\n";
  for (std::size_t k = 0; k < class_names.size() && k < probabilities.size(); ++k)
    os << class_names[k] << ',' << probabilities[k] << '\n';
  os << "predicted," << class_names.at(predicted) << '\n';
  os << "saliency_column," << s.source_column << '\n';
  os << "saliency_target," << s.target_class << '\n';
  if (!note.empty()) os << "note," << note << '\n';
  return os.str();
}

template SaliencyMap gradcam(const backbone::BackboneModel<float>&, const TensorF&, std::size_t, std::size_t,
                             std::size_t);
template SaliencyMap gradcam(const backbone::BackboneModel<double>&, const TensorD&, std::size_t, std::size_t,
                             std::size_t);
template SaliencyMap gradcam(const backbone::BackboneModel<float>&, const TensorF&, std::size_t);
template SaliencyMap gradcam(const backbone::BackboneModel<double>&, const TensorD&, std::size_t);

}  // namespace hcn::explain
