#include <doctest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "hcn/features.hpp"

using namespace hcn;
using namespace hcn::features;
using hcn::testing::random_tensor;

namespace {

ConvParams<double> fusion_params(std::size_t f, std::mt19937_64& rng) {
  return {random_tensor({1, 1, 2 * f, f}, rng), random_tensor({f}, rng), {}, {}};
}

}  // namespace

TEST_CASE("front conv geometry") {
  Rng rng(1);
  auto fc = FrontConv<double>::random(rng);
  CHECK_NOTHROW(fc.validate());
  CHECK(fc.conv.filters.shape() == Shape{7, 7, 1, 48});

  SUBCASE("zero image and bias give zero map") {
    const TensorD y = front_forward(TensorD({12, 12, 1}), fc);
    CHECK(y == TensorD({12, 12, 48}));
  }
  SUBCASE("impulse through a centred delta kernel") {
    auto delta = FrontConv<double>{ConvParams<double>::zeros(7, 7, 1, 48, {}, Padding::uniform(3))};
    for (std::size_t c = 0; c < 48; ++c) delta.conv.filters[((3 * 7 + 3) * 1) * 48 + c] = 1.0;
    TensorD img({9, 9, 1});
    img.at(4, 6, 0) = 1.0;
    const TensorD y = front_forward(img, delta);
    for (std::size_t h = 0; h < 9; ++h)
      for (std::size_t w = 0; w < 9; ++w) CHECK(y.at(h, w, 17) == (h == 4 && w == 6 ? 1.0 : 0.0));
  }
  SUBCASE("shape") {
    std::mt19937_64 r(2);
    CHECK(front_forward(random_tensor({12, 12, 1}, r), fc).shape() == Shape{12, 12, 48});
  }
  SUBCASE("height must be divisible by three") {
    CHECK_THROWS_AS(front_forward(TensorD({10, 12, 1}), fc), ContractError);
  }
}

TEST_CASE("pool1_split") {
  std::mt19937_64 rng(3);
  SUBCASE("round trip is exact") {
    const TensorD m = random_tensor({9, 6, 48}, rng);
    const auto parts = pool1_split(m);
    CHECK(concat_rows(std::vector<TensorD>(parts.begin(), parts.end())) == channel_max(m));
  }
  SUBCASE("H=6 strips hold rows 2k, 2k+1") {
    const TensorD m = random_tensor({6, 4, 5}, rng);
    const TensorD cm = channel_max(m);
    const auto parts = pool1_split(m);
    for (std::size_t k = 0; k < 3; ++k) {
      REQUIRE(parts[k].shape() == Shape{2, 4, 1});
      for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t w = 0; w < 4; ++w) CHECK(parts[k].at(r, w, 0) == cm.at(2 * k + r, w, 0));
    }
  }
  SUBCASE("direct slicing oracle on 9x6x48") {
    const TensorD m = random_tensor({9, 6, 48}, rng);
    const auto parts = pool1_split(m);
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t w = 0; w < 6; ++w) {
          double best = -1e300;
          for (std::size_t c = 0; c < 48; ++c) best = std::max(best, m.at(3 * k + r, w, c));
          CHECK(parts[k].at(r, w, 0) == best);
        }
  }
  CHECK_THROWS_AS(pool1_split(TensorD({8, 4, 2})), ContractError);
}

TEST_CASE("pad_to_stem") {
  std::mt19937_64 rng(4);
  const TensorD same = random_tensor({4, 4, 1}, rng);
  CHECK(pad_to_stem(same, 4) == same);

  const TensorD small = random_tensor({2, 2, 1}, rng);
  const TensorD padded = pad_to_stem(small, 4);
  double s0 = 0, s1 = 0;
  for (double v : small.data()) s0 += v;
  for (double v : padded.data()) s1 += v;
  CHECK(s0 == s1);
  for (std::size_t h = 0; h < 4; ++h)
    for (std::size_t w = 0; w < 4; ++w) {
      const bool inside = h >= 1 && h <= 2 && w >= 1 && w <= 2;
      CHECK(padded.at(h, w, 0) == (inside ? small.at(h - 1, w - 1, 0) : 0.0));
    }
  CHECK_THROWS_AS(pad_to_stem(random_tensor({5, 3, 1}, rng), 4), DimensionError);
}

TEST_CASE("conv_sum_fuse") {
  std::mt19937_64 rng(5);
  SUBCASE("zero parameters give the first argument") {
    const TensorD a = random_tensor({3, 3, 4}, rng), b = random_tensor({3, 3, 4}, rng);
    CHECK(conv_sum_fuse(a, b, ConvParams<double>::zeros(1, 1, 8, 4)) == a);
  }
  SUBCASE("selecting the first F channels doubles a") {
    const TensorD a = random_tensor({2, 3, 3}, rng);
    auto p = ConvParams<double>::zeros(1, 1, 6, 3);
    for (std::size_t c = 0; c < 3; ++c) p.filters[c * 3 + c] = 1.0;
    const TensorD y = conv_sum_fuse(a, a, p);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(2 * a[i]).epsilon(1e-15));
  }
  SUBCASE("scalar expansion oracle") {
    const TensorD a = random_tensor({2, 2, 1}, rng), b = random_tensor({2, 2, 1}, rng);
    const double w1 = 0.3, w2 = -1.2, c = 0.05;
    ConvParams<double> p{TensorD({1, 1, 2, 1}, {w1, w2}), TensorD({1}, c), {}, {}};
    const TensorD y = conv_sum_fuse(a, b, p);
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(y[i] - (w1 * a[i] + w2 * b[i] + c + a[i])) < 1e-12);
  }
  SUBCASE("shape is preserved and mismatches throw") {
    const TensorD a = random_tensor({5, 4, 3}, rng), b = random_tensor({5, 4, 3}, rng);
    CHECK(conv_sum_fuse(a, b, fusion_params(3, rng)).shape() == a.shape());
    CHECK_THROWS_AS(conv_sum_fuse(a, random_tensor({5, 4, 2}, rng), fusion_params(3, rng)), DimensionError);
    CHECK_THROWS_AS(conv_sum_fuse(a, b, fusion_params(2, rng)), DimensionError);
  }
}

TEST_CASE("pool2_fuse_merge") {
  std::mt19937_64 rng(6);
  const TensorD m1 = random_tensor({2, 2, 1}, rng), m2 = random_tensor({2, 2, 1}, rng),
                m3 = random_tensor({2, 2, 1}, rng);
  SUBCASE("zero parameters keep only the first map, upscaled") {
    const TensorD y = pool2_fuse_merge<double>({m1, m2, m3}, ConvParams<double>::zeros(1, 1, 2, 1));
    CHECK(y == upscale_rows(m1, 3));
    CHECK(pool2_fuse_merge<double>({m1, m1, m1}, ConvParams<double>::zeros(1, 1, 2, 1)) == upscale_rows(m1, 3));
  }
  SUBCASE("two-step hand fold") {
    const double w1 = 0.7, w2 = 0.2, c = -0.1;
    ConvParams<double> p{TensorD({1, 1, 2, 1}, {w1, w2}), TensorD({1}, c), {}, {}};
    const TensorD y = pool2_fuse_merge<double>({m1, m2, m3}, p);
    REQUIRE(y.shape() == Shape{6, 2, 1});
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t w = 0; w < 2; ++w) {
        const double f12 = w1 * m1.at(h, w, 0) + w2 * m2.at(h, w, 0) + c + m1.at(h, w, 0);
        const double f = w1 * f12 + w2 * m3.at(h, w, 0) + c + f12;
        for (std::size_t r = 0; r < 3; ++r) CHECK(std::abs(y.at(3 * h + r, w, 0) - f) < 1e-12);
      }
  }
  CHECK_THROWS_AS(pool2_fuse_merge<double>({m1, m2}, ConvParams<double>::zeros(1, 1, 2, 1)), ContractError);
}

TEST_CASE("stems are distinct and hit their declared shape") {
  for (auto [in, out, ch] : {std::tuple{24, 7, 16}, std::tuple{30, 5, 8}, std::tuple{84, 28, 32}}) {
    const auto specs = default_stem_specs(in, out, ch);
    for (std::size_t i = 0; i < kStems; ++i) {
      CHECK(specs[i].infer_output_shape() == Shape{std::size_t(out), std::size_t(out), std::size_t(ch)});
      for (std::size_t j = i + 1; j < kStems; ++j) CHECK(specs[i].describe() != specs[j].describe());
      CHECK(StemSpec::parse(specs[i].describe()).describe() == specs[i].describe());
    }
  }
  Rng rng(7);
  const auto specs = default_stem_specs(24, 7, 16);
  std::mt19937_64 r(8);
  for (const auto& spec : specs) {
    const auto stem = Stem<double>::random(spec, rng);
    CHECK(stem.forward(random_tensor({24, 24, 1}, r)).shape() == Shape{7, 7, 16});
  }
}

TEST_CASE("extract_features") {
  auto fx = FeatureExtractor<double>::create(24, 24, 7, 16, 42);
  std::mt19937_64 rng(9);
  const TensorD img = random_tensor({24, 24, 1}, rng, 0, 1);
  const auto stack = extract_features(img, fx);
  CHECK(stack.maps.size() == 4);
  for (const auto& m : stack.maps) CHECK(m.shape() == Shape{21, 7, 16});
  CHECK(fx.feature_shape() == Shape{21, 7, 16});

  SUBCASE("deterministic") {
    auto fx2 = FeatureExtractor<double>::create(24, 24, 7, 16, 42);
    const auto again = extract_features(img, fx2);
    for (std::size_t k = 0; k < 4; ++k) CHECK(again.maps[k] == stack.maps[k]);
  }
  SUBCASE("zero image with zero biases gives zero maps") {
    const auto z = extract_features(TensorD({24, 24, 1}), fx);
    for (const auto& m : z.maps) CHECK(m == TensorD({21, 7, 16}));
  }
}

TEST_CASE("gradient_sum_pool") {
  std::mt19937_64 rng(10);
  SUBCASE("identical maps") {
    const TensorD m = random_tensor({3, 3, 2}, rng);
    const TensorD y = gradient_sum_pool<double>({m, m, m, m});
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(m[i]).epsilon(1e-14));
  }
  SUBCASE("constant maps fall back to the mean") {
    std::array<double, 4> w{};
    const TensorD y = gradient_sum_pool<double>(
        {TensorD({2, 2, 1}, 1.0), TensorD({2, 2, 1}, 2.0), TensorD({2, 2, 1}, 3.0), TensorD({2, 2, 1}, 6.0)}, &w);
    for (double v : w) CHECK(v == 0.25);
    for (double v : y.data()) CHECK(v == doctest::Approx(3.0));
  }
  SUBCASE("one contrast map among constants") {
    // 2x2 map [[0,4],[0,0]]: forward-difference magnitudes are
    // (0,0): dx=4, dy=0 -> 4;  (0,1): dx=0 (edge), dy=-4 -> 4;  (1,0): dx=0, dy=0 -> 0;  (1,1): 0.
    // Mean = 8 / 4 = 2, the constants contribute 0, so the contrast map takes all the weight.
    TensorD contrast({2, 2, 1}, {0, 4, 0, 0});
    CHECK(mean_gradient_magnitude(contrast) == doctest::Approx(2.0));
    std::array<double, 4> w{};
    const TensorD y = gradient_sum_pool<double>({TensorD({2, 2, 1}, 5.0), contrast, TensorD({2, 2, 1}, 1.0),
                                                 TensorD({2, 2, 1}, -1.0)},
                                                &w);
    CHECK(w[1] == doctest::Approx(1.0));
    CHECK(y == contrast);
  }
  SUBCASE("weights are a distribution") {
    for (int t = 0; t < 20; ++t) {
      std::array<double, 4> w{};
      gradient_sum_pool<double>({random_tensor({4, 3, 2}, rng), random_tensor({4, 3, 2}, rng),
                                 random_tensor({4, 3, 2}, rng), random_tensor({4, 3, 2}, rng)},
                                &w);
      double s = 0;
      for (double v : w) {
        CHECK(v >= 0.0);
        s += v;
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
  CHECK_THROWS_AS(gradient_sum_pool<double>({TensorD({2, 2, 1}), TensorD({2, 2, 1}), TensorD({2, 2, 1}),
                                             TensorD({3, 2, 1})}),
                  DimensionError);
}
