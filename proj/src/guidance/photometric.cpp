#include <fmt/format.h>

#include <cmath>

#include "atom/guidance.hpp"

namespace atom {

void validate_request(const GuidanceRequest& r) {
  using K = GuidanceError::Kind;
  if (r.width <= 0 || r.height <= 0)
    throw GuidanceError(K::invalid_request, fmt::format("guidance: bad image size {}x{}", r.width, r.height));
  const auto expected = static_cast<std::size_t>(r.width) * static_cast<std::size_t>(r.height) * 3;
  if (r.pixels.size() != expected)
    throw GuidanceError(K::invalid_request,
                        fmt::format("guidance: {} pixel values for a {}x{} image", r.pixels.size(), r.width, r.height));
  if (r.stage != 1 && r.stage != 2) throw GuidanceError(K::invalid_request, fmt::format("guidance: stage {}", r.stage));
  if (!(r.noise_lo >= 0.0 && r.noise_lo < r.noise_hi && r.noise_hi <= 1.0))
    throw GuidanceError(K::invalid_request, fmt::format("guidance: noise range ({}, {})", r.noise_lo, r.noise_hi));
  for (float v : r.pixels)
    if (!(v >= 0.0f && v <= 1.0f)) throw GuidanceError(K::invalid_request, fmt::format("guidance: pixel value {}", v));
}

GuidanceResponse photometric_guidance(const GuidanceRequest& request, std::span<const float> target) {
  validate_request(request);
  if (target.size() != request.pixels.size())
    throw GuidanceError(GuidanceError::Kind::shape_mismatch,
                        fmt::format("photometric guidance: target has {} values, image {}", target.size(),
                                    request.pixels.size()));
  const double n = static_cast<double>(request.pixels.size());
  GuidanceResponse out;
  out.grad.resize(request.pixels.size());
  double sq = 0.0;
  for (std::size_t i = 0; i < request.pixels.size(); ++i) {
    const double d = static_cast<double>(request.pixels[i]) - static_cast<double>(target[i]);
    sq += d * d;
    out.grad[i] = static_cast<float>(2.0 * d / n);
  }
  out.loss = sq / n;
  return out;
}

GuidanceResponse PhotometricGuidance::guide(const GuidanceRequest& request) {
  const auto& prompt = request.target_prompt.empty() ? request.prompt : request.target_prompt;
  const auto* target = targets_.find(prompt, request.target_view, request.width, request.height);
  if (!target)
    throw GuidanceError(GuidanceError::Kind::unknown_target,
                        fmt::format("photometric guidance: no target for '{}' view {} at {}x{}", prompt,
                                    request.target_view, request.width, request.height));
  return photometric_guidance(request, *target);
}

}  // namespace atom
