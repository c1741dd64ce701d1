#pragma once

#include <cmath>
#include <random>

#include "hcn/ops.hpp"

namespace hcn {

using Rng = std::mt19937_64;

// He (fan-in scaled) normal initialization of a conv layer, zero bias.
template <typename T>
ConvParams<T> he_conv(std::size_t kh, std::size_t kw, std::size_t cin, std::size_t cout, Stride stride,
                      Padding padding, Rng& rng) {
  auto p = ConvParams<T>::zeros(kh, kw, cin, cout, stride, padding);
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(kh * kw * cin)));
  for (auto& v : p.filters.data()) v = static_cast<T>(dist(rng));
  return p;
}

// Dense layer D x K with He initialization, zero bias.
template <typename T>
void he_linear(std::size_t din, std::size_t dout, Rng& rng, Tensor<T>& weight, Tensor<T>& bias) {
  weight = Tensor<T>({din, dout});
  bias = Tensor<T>({dout});
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(din)));
  for (auto& v : weight.data()) v = static_cast<T>(dist(rng));
}

// Independent stream for component `index` derived from a master seed.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x48434eu};
  return Rng(seq);
}

}  // namespace hcn
