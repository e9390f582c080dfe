#pragma once

#include <random>
#include <string>
#include <vector>

#include "mtgnn/tensor.hpp"

namespace mtgnn {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

using ParameterList = std::vector<NamedTensor>;

/// Leaf tensor with entries drawn from U(-bound, bound), marked trainable.
inline Tensor uniform_parameter(Shape shape, double bound, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.mutable_data()) v = dist(rng);
  t.set_requires_grad(true);
  return t;
}

inline Tensor constant_parameter(Shape shape, double value) {
  Tensor t(std::move(shape), value);
  t.set_requires_grad(true);
  return t;
}

inline std::size_t count_scalars(const ParameterList& params) {
  std::size_t n = 0;
  for (const auto& p : params)
    if (p.tensor.requires_grad()) n += p.tensor.numel();
  return n;
}

}  // namespace mtgnn
