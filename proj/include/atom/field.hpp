#pragma once

// Triplane-conditioned implicit heads: SDF, color and deformation MLPs over
// [triplane feature, positional encoding] of object-space points.

#include <cstdint>

#include "atom/params.hpp"
#include "atom/tensor.hpp"
#include "atom/triplane.hpp"

namespace atom {

struct HeadConfig {
  int hidden = 64;
  int octaves = 6;
  double half_extent = 1.0;    // object bound is the cube [-h, h]^3
  double sphere_radius = 0.5;  // SDF bias |p| - r
};

// Three linear layers with softplus between them.
template <typename T>
struct Mlp {
  Tensor<T> w1, b1, w2, b2, w3, b3;
};

// [p, sin(2^k pi p), cos(2^k pi p) for k < octaves]: points [N, 3] ->
// [N, 3 + 6 * octaves]. Each sin/cos group holds the three coordinates.
template <typename T>
Tensor<T> posenc(const Tensor<T>& points, int octaves);

// Sum of the bilinear samples of XY at (x, y), XZ at (x, z) and YZ at (y, z)
// after scaling points by 1 / half_extent. points [N, 3] -> [N, C].
template <typename T>
Tensor<T> query_triplane(const Triplane<T>& tp, const Tensor<T>& points, double half_extent);

template <typename T>
class ImplicitHeads {
 public:
  ImplicitHeads(const HeadConfig& config, int triplane_channels, std::uint64_t seed);

  const HeadConfig& config() const { return config_; }
  int input_width() const { return channels_ + 3 + 6 * config_.octaves; }

  // Shared head input [N, C + 3 + 6 * octaves]. Points are treated as constants.
  Tensor<T> features(const Triplane<T>& tp, const Tensor<T>& points) const;

  Tensor<T> sdf(const Tensor<T>& features, const Tensor<T>& points) const;  // [N]
  Tensor<T> color(const Tensor<T>& features) const;                         // [N, 3] in [0, 1]
  // Offsets bounded by half a cell edge per coordinate.
  Tensor<T> deform(const Tensor<T>& features, double cell_edge) const;      // [N, 3]

  // Unit SDF gradient at the points, built as a differentiable graph so that
  // shading losses reach the triplane and SDF weights.
  Tensor<T> sdf_normals(const Triplane<T>& tp, const Tensor<T>& points, const Tensor<T>& features) const;

  Mlp<T>& sdf_mlp() { return sdf_; }
  Mlp<T>& color_mlp() { return color_; }
  Mlp<T>& deform_mlp() { return deform_; }
  const Mlp<T>& sdf_mlp() const { return sdf_; }
  const Mlp<T>& color_mlp() const { return color_; }
  const Mlp<T>& deform_mlp() const { return deform_; }

  ParamList<T> parameters() const;
  ParamList<T> sdf_parameters() const;
  ParamList<T> color_parameters() const;
  ParamList<T> deform_parameters() const;

 private:
  HeadConfig config_;
  int channels_;
  Mlp<T> sdf_, color_, deform_;
};

template <typename T>
Tensor<T> mlp_forward(const Mlp<T>& mlp, const Tensor<T>& x);

}  // namespace atom
