#pragma once

// Named parameter lists shared by the optimizer, checkpoints and precision
// conversion.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "atom/tensor.hpp"

namespace atom {

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

// Uniform in [-bound, bound].
template <typename T>
Tensor<T> uniform_param(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> values(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return Tensor<T>::parameter(std::move(shape), std::move(values));
}

template <typename T>
Tensor<T> zero_param(Shape shape) {
  std::vector<T> values(static_cast<std::size_t>(shape_numel(shape)), T(0));
  return Tensor<T>::parameter(std::move(shape), std::move(values));
}

// Copies values between lists that name the same tensors, converting
// precision. Throws on a missing name or a shape mismatch.
template <typename From, typename To>
void copy_param_values(const ParamList<From>& from, ParamList<To>& to) {
  for (auto& dst : to) {
    const NamedParam<From>* src = nullptr;
    for (const auto& candidate : from)
      if (candidate.name == dst.name) src = &candidate;
    if (!src) throw TensorError("no source parameter named " + dst.name);
    if (src->tensor.shape() != dst.tensor.shape())
      throw TensorError("shape mismatch copying " + dst.name + ": " + shape_to_string(src->tensor.shape()) +
                        " vs " + shape_to_string(dst.tensor.shape()));
    auto out = dst.tensor.mutable_data();
    auto in = src->tensor.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<To>(in[i]);
  }
}

template <typename T>
std::int64_t count_parameters(const ParamList<T>& params) {
  std::int64_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

}  // namespace atom
