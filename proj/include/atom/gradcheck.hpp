#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "atom/tensor.hpp"

namespace atom {

struct GradCheckOptions {
  double step = 1e-3;          // central difference half-width
  double abs_floor = 1e-6;     // denominator floor for near-zero gradients
  std::size_t samples_per_tensor = 0;  // 0 = every element
  std::size_t total_samples = 0;       // >0: additionally cap the overall count
  std::uint64_t seed = 7;
};

struct GradCheckEntry {
  std::string tensor;
  std::int64_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  std::string worst;
};

struct NamedTensor {
  std::string name;
  Tensor<double> tensor;
};

// Compares reverse-mode gradients of `loss` with central finite differences
// over the listed leaves. `loss` must rebuild the graph from current values.
GradCheckReport check_gradients(const std::function<Tensor<double>()>& loss,
                                std::span<NamedTensor> leaves, const GradCheckOptions& options = {});

double relative_error(double analytic, double numeric, double abs_floor);

}  // namespace atom
