#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "hcn/errors.hpp"
#include "hcn/explain.hpp"

using namespace hcn;
using namespace hcn::backbone;
using namespace hcn::explain;
using hcn::testing::random_tensor;

namespace {

BackboneSpec one_conv_spec() {
  BackboneSpec s;
  s.input_shape = {5, 5, 2};
  s.classes = 2;
  s.layers = {{LayerKind::Conv, 1, 2}};
  return s;
}

}  // namespace

TEST_CASE("grad-cam of a mean-of-channel logit is that channel's positive part") {
  std::mt19937_64 rng(3);
  auto m = BackboneModel<double>::create(one_conv_spec(), 1);
  m.blocks[0].conv.filters = random_tensor({1, 1, 2, 2}, rng);
  m.blocks[0].conv.bias = random_tensor({2}, rng, -0.2, 0.2);
  m.head_weight = TensorD({2, 2}, std::vector<double>{1, 0, 0, 0});
  m.head_bias = TensorD({2});
  const TensorD x = random_tensor({5, 5, 2}, rng);

  // Oracle: channel 0 of the activation, computed directly.
  const auto& f = m.blocks[0].conv.filters;
  const double inv = 1.0 / std::sqrt(1.0 + m.blocks[0].bn.eps);
  TensorD expect({5, 5});
  double mx = 0.0;
  for (std::size_t p = 0; p < 25; ++p) {
    double a = (x[p * 2] * f[0] + x[p * 2 + 1] * f[2] + m.blocks[0].conv.bias[0]) * inv;
    a = a > 0 ? a : 0.1 * a;
    expect[p] = std::max(0.0, a);
    mx = std::max(mx, expect[p]);
  }
  REQUIRE(mx > 0);
  const auto s = gradcam(m, x, 0);
  REQUIRE(s.map.shape() == Shape{5, 5});
  for (std::size_t p = 0; p < 25; ++p) CHECK(std::abs(s.map[p] - expect[p] / mx) < 1e-12);
}

TEST_CASE("grad-cam invariants on random inputs") {
  const auto spec = BackboneSpec::darknet_mini({12, 12, 1}, 3, 4);
  auto m = BackboneModel<double>::create(spec, 5);
  std::mt19937_64 rng(8);
  for (int i = 0; i < 50; ++i) {
    const TensorD x = random_tensor({12, 12, 1}, rng, 0.0, 1.0);
    const auto s = gradcam(m, x, static_cast<std::size_t>(i % 3));
    CHECK(s.map.shape() == Shape{12, 12});
    double mx = 0.0;
    for (double v : s.map.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      mx = std::max(mx, v);
    }
    CHECK((mx == 0.0 || mx == 1.0));
  }
}

TEST_CASE("grad-cam ignores a constant logit shift") {
  const auto spec = BackboneSpec::darknet_mini({9, 9, 1}, 2, 3);
  auto m = BackboneModel<double>::create(spec, 2);
  std::mt19937_64 rng(1);
  const TensorD x = random_tensor({9, 9, 1}, rng);
  const auto before = gradcam(m, x, 1);
  for (auto& b : m.head_bias.data()) b += 3.5;
  CHECK(gradcam(m, x, 1).map == before.map);
}

TEST_CASE("zero input to a zero-bias network gives a zero map") {
  const auto spec = BackboneSpec::darknet_mini({6, 6, 1}, 2, 3);
  const auto m = BackboneModel<double>::create(spec, 4);
  const auto s = gradcam(m, TensorD({6, 6, 1}), 0);
  for (double v : s.map.data()) CHECK(v == 0.0);
}

TEST_CASE("grad-cam errors") {
  const auto spec = BackboneSpec::darknet_mini({6, 6, 1}, 2, 3);
  const auto m = BackboneModel<double>::create(spec, 4);
  CHECK_THROWS_AS(gradcam(m, TensorD({6, 6, 1}), 2), ContractError);
  auto empty = m;
  empty.blocks.clear();
  CHECK_THROWS_AS(gradcam(empty, TensorD({6, 6, 1}), 0), ContractError);
}

TEST_CASE("bilinear resize") {
  TensorD m({2, 2}, std::vector<double>{0, 1, 2, 3});
  CHECK(resize_bilinear(m, 2, 2) == m);
  const auto up = resize_bilinear(m, 4, 4);
  CHECK(up[0] == 0.0);
  CHECK(up[15] == 3.0);
  CHECK(up[1] == doctest::Approx(0.25));
  const auto c = resize_bilinear(TensorD({3, 3}, 0.7), 7, 5);
  for (double v : c.data()) CHECK(v == doctest::Approx(0.7));
}

TEST_CASE("overlay") {
  TensorF img({3, 4, 1});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i) / 11.0f;
  SaliencyMap zero{TensorD({3, 4}), 0, 0};
  const auto o = overlay(zero, img);
  CHECK(o.height == 3);
  CHECK(o.width == 4);
  REQUIRE(o.pixels.size() == 36);
  for (std::size_t p = 0; p < 12; ++p) {
    const auto g = static_cast<std::uint8_t>(std::lround(img[p] * 255.0));
    CHECK(o.pixels[3 * p] == g);
    CHECK(o.pixels[3 * p + 1] == g);
    CHECK(o.pixels[3 * p + 2] == g);
  }
  SaliencyMap hot{TensorD({3, 4}), 0, 0};
  hot.map[5] = 1.0;
  const auto h = overlay(hot, img);
  const double g = img[5];
  CHECK(h.pixels[15] == std::lround((0.6 * g + 0.4) * 255.0));
  CHECK(h.pixels[16] == std::lround((0.6 * g + 0.4) * 255.0));
  CHECK(h.pixels[17] == std::lround(0.6 * g * 255.0));
  CHECK_THROWS_AS(overlay(SaliencyMap{TensorD({2, 4}), 0, 0}, img), DimensionError);
  const auto text = sidecar_text({"a", "b"}, {0.25, 0.75}, 1, hot, "column 0");
  CHECK(text.find("b,0.75") != std::string::npos);
  CHECK(text.find("predicted,b") != std::string::npos);
}
