#pragma once

// Volumetric SDF rendering: logistic-CDF opacity between consecutive samples
// and front-to-back compositing.

#include <cstdint>

#include "atom/camera.hpp"
#include "atom/field.hpp"
#include "atom/tensor.hpp"
#include "atom/triplane.hpp"

namespace atom {

enum class ShadingMode { textureless, diffuse };

struct Shading {
  ShadingMode mode = ShadingMode::diffuse;
  Vec3 light{0, 0, 1};  // unit direction toward the light
  Vec3 background{1, 1, 1};
  double ambient = 0.1;
};

// albedo * (ambient + (1 - ambient) * max(0, n . l)); textureless uses white
// albedo. normals and albedo are [N, 3].
template <typename T>
Tensor<T> shade_lambert(const Tensor<T>& albedo, const Tensor<T>& normals, const Shading& shading);

// max((Phi(f0) - Phi(f1)) / Phi(f0), 0) with Phi(x) = 1 / (1 + exp(-s x)).
double alpha_from_sdf(double f0, double f1, double s);

// Learnable sharpness s = exp(10 v); v is stored instead of s.
template <typename T>
Tensor<T> sharpness_from_log(const Tensor<T>& v);
double initial_log_sharpness();  // s = 10

// sdf [R, n], s scalar -> alphas [R, n - 1]. The clamped branch passes no gradient.
template <typename T>
Tensor<T> neus_alpha(const Tensor<T>& sdf, const Tensor<T>& s);

// Rays whose transmittance increased, whose alpha left [0, 1], or whose
// weights summed past 1.
struct CompositeAudit {
  std::uint64_t rays = 0;
  std::uint64_t violations = 0;
  double max_weight_sum = 0.0;
};

// alphas [R, m], colors [R, m, 3] -> [R, 4]: rgb with (1 - opacity) * background
// added, then opacity = sum_i T_i alpha_i.
template <typename T>
Tensor<T> composite(const Tensor<T>& alphas, const Tensor<T>& colors, const Vec3& background,
                    CompositeAudit* audit = nullptr);

struct Stage1Options {
  int samples = 64;
  bool stratified = false;  // jitter within uniform bins
  std::uint64_t seed = 0;
  Shading shading;
  CompositeAudit* audit = nullptr;
};

template <typename T>
struct RenderOutput {
  Tensor<T> rgb;      // [H * W, 3]
  Tensor<T> opacity;  // [H * W]
  int width = 0;
  int height = 0;
};

template <typename T>
RenderOutput<T> render_stage1(const Triplane<T>& tp, const ImplicitHeads<T>& heads, const Tensor<T>& sharpness,
                              const Camera& cam, const Stage1Options& options);

}  // namespace atom
