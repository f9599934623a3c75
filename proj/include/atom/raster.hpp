#pragma once

// Z-buffered triangle rasterization of extracted meshes and differentiable
// shading of the visible fragments.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "atom/camera.hpp"
#include "atom/dmtet.hpp"
#include "atom/neus.hpp"

namespace atom {

struct Fragment {
  std::int32_t face = -1;  // -1: background
  std::array<double, 3> weights{0, 0, 0};  // perspective-correct barycentrics
  double depth = 0.0;                      // view-space depth
};

struct FragmentBuffer {
  int width = 0;
  int height = 0;
  std::vector<Fragment> pixels;  // row-major
  std::int64_t covered() const;
};

// A triangle projected to pixel space, oriented so that its signed area is
// positive. Faces behind the camera, edge-on or facing away are not visible.
struct ScreenTriangle {
  bool visible = false;
  std::array<std::array<double, 2>, 3> xy{};  // (col, row)
  std::array<double, 3> depth{};
  std::array<int, 3> order{0, 1, 2};  // mesh corner of each screen vertex
  double area = 0.0;                  // twice the signed area
};

ScreenTriangle project_triangle(const Camera& cam, const CameraBasis& basis, const std::array<Vec3, 3>& corners);

// Coverage of the pixel center (col + 0.5, row + 0.5) with a top-left style
// tie rule: a center on an edge shared by two triangles belongs to exactly one.
// On a hit fills face-independent fields of `out` (weights in mesh corner order, depth).
bool cover_pixel(const ScreenTriangle& tri, int col, int row, Fragment& out);

// positions: [M * 3] vertex coordinates. Nearest front-facing face per pixel;
// equal depths keep the lower face id.
FragmentBuffer rasterize(std::span<const double> positions, std::span<const std::array<std::int32_t, 3>> faces,
                         const Camera& cam);

template <typename T>
FragmentBuffer rasterize(const TriMesh<T>& mesh, const Camera& cam);

// Shades covered pixels with Lambert lighting of the face normal times the
// interpolated vertex color (white when textureless). Barycentrics are
// rebuilt from a ray-triangle intersection so gradients reach vertex
// positions; coverage itself passes no gradient.
template <typename T>
RenderOutput<T> shade_fragments(const FragmentBuffer& fragments, const TriMesh<T>& mesh, const Camera& cam,
                                const Shading& shading);

// Analytic antialiasing of silhouettes. For each horizontally or vertically
// adjacent pixel pair whose fragments differ, the nearer face's silhouette
// edge (a boundary edge, or one shared with a back-facing face) is intersected
// with the segment between the two pixel centers. If the crossing lies past the
// midpoint the far pixel takes that share of the near color, otherwise the near
// pixel gives it up. The crossing is differentiable in the edge's vertex
// positions, so coverage changes reach the geometry.
template <typename T>
Tensor<T> antialias(const Tensor<T>& rgb, const FragmentBuffer& fragments, const TriMesh<T>& mesh, const Camera& cam);

struct Stage2Options {
  Shading shading;
  bool with_deform = true;
  bool antialias = true;
};

template <typename T>
struct Stage2Output {
  RenderOutput<T> image;
  ExtractStatus status = ExtractStatus::ok;
  std::string warning;
  std::size_t faces = 0;
};

// extract -> rasterize -> shade.
template <typename T>
Stage2Output<T> render_stage2(const Triplane<T>& tp, const ImplicitHeads<T>& heads, const TetGrid& grid,
                              const Camera& cam, const Stage2Options& options);

}  // namespace atom
