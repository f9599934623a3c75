#include "atom/gradcheck.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace atom {

double relative_error(double analytic, double numeric, double abs_floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), abs_floor});
  return std::abs(analytic - numeric) / scale;
}

GradCheckReport check_gradients(const std::function<Tensor<double>()>& loss,
                                std::span<NamedTensor> leaves, const GradCheckOptions& options) {
  for (auto& leaf : leaves) leaf.tensor.zero_grad();
  {
    auto root = loss();
    backward(root);
  }

  std::mt19937_64 rng(options.seed);
  struct Probe {
    std::size_t leaf;
    std::int64_t index;
  };
  std::vector<Probe> probes;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    const auto n = leaves[k].tensor.numel();
    std::vector<std::int64_t> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), 0);
    if (options.samples_per_tensor > 0 && options.samples_per_tensor < all.size()) {
      std::shuffle(all.begin(), all.end(), rng);
      all.resize(options.samples_per_tensor);
      std::sort(all.begin(), all.end());
    }
    for (auto i : all) probes.push_back({k, i});
  }
  if (options.total_samples > 0 && probes.size() > options.total_samples) {
    std::shuffle(probes.begin(), probes.end(), rng);
    probes.resize(options.total_samples);
  }

  GradCheckReport report;
  for (const auto& probe : probes) {
    auto& leaf = leaves[probe.leaf];
    const auto grad = leaf.tensor.grad();
    const double analytic = grad.empty() ? 0.0 : grad[probe.index];
    auto values = leaf.tensor.mutable_data();
    const double original = values[probe.index];
    double plus = 0.0, minus = 0.0;
    {
      NoGradGuard no_grad;
      values[probe.index] = original + options.step;
      plus = loss().item();
      values[probe.index] = original - options.step;
      minus = loss().item();
      values[probe.index] = original;
    }
    const double numeric = (plus - minus) / (2.0 * options.step);
    GradCheckEntry entry{leaf.name, probe.index, analytic, numeric,
                         relative_error(analytic, numeric, options.abs_floor)};
    if (entry.rel_error > report.max_rel_error || report.entries.empty()) {
      report.max_rel_error = std::max(report.max_rel_error, entry.rel_error);
      report.worst = fmt::format("{}[{}] analytic={:.9g} numeric={:.9g}", entry.tensor, entry.index,
                                 entry.analytic, entry.numeric);
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace atom
