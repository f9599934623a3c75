#pragma once

// Deformable tetrahedral grid and marching tetrahedra on its SDF zero set.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "atom/camera.hpp"
#include "atom/field.hpp"
#include "atom/tensor.hpp"
#include "atom/triplane.hpp"

namespace atom {

// Lattice of (R + 1)^3 points over [-h, h]^3, each cube split into six tets
// around its main diagonal. Vertex (i, j, k) has index i + (R + 1) * (j + (R + 1) * k).
struct TetGrid {
  int resolution = 0;
  double half_extent = 1.0;
  std::vector<Vec3> lattice;
  std::vector<std::array<std::int32_t, 4>> tets;  // positively oriented

  std::int64_t vertex_count() const { return static_cast<std::int64_t>(lattice.size()); }
  double cell_edge() const { return 2.0 * half_extent / resolution; }
  std::int32_t vertex_index(int i, int j, int k) const { return i + (resolution + 1) * (j + (resolution + 1) * k); }
};

// Throws std::invalid_argument for R < 1 or a non-positive extent.
TetGrid build_grid(int resolution, double half_extent = 1.0);

// det(b - a, c - a, d - a) / 6.
double signed_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d);

// Where a mesh vertex came from: the first tet that produced it and the
// lattice edge (a < b) it sits on.
struct EdgeProvenance {
  std::int32_t tet = 0;
  std::int32_t a = 0;
  std::int32_t b = 0;
};

template <typename T>
struct TriMesh {
  Tensor<T> positions;  // [M, 3]
  Tensor<T> colors;     // [M, 3]
  std::vector<std::array<std::int32_t, 3>> faces;  // counter-clockwise seen from the positive side
  std::vector<EdgeProvenance> provenance;
  std::size_t degenerate_faces = 0;  // zero-area faces kept for differentiability

  std::int64_t vertex_count() const { return static_cast<std::int64_t>(provenance.size()); }
  bool empty() const { return faces.empty(); }
};

// Per-vertex buffers of a grid. offsets and colors may be left undefined
// (treated as zero offsets and mid-gray).
template <typename T>
struct GridField {
  Tensor<T> sdf;      // [V]
  Tensor<T> offsets;  // [V, 3]
  Tensor<T> colors;   // [V, 3]
};

// Marching tetrahedra. sign(0) counts as positive; faces face positive SDF.
// Crossings on edge (a, b) interpolate deformed positions and colors at
// t = s_a / (s_a - s_b); one mesh vertex per lattice edge.
template <typename T>
TriMesh<T> march_tets(const TetGrid& grid, const GridField<T>& field);

// Triangles for one tet with the given sign pattern (bit i set when vertex i
// is negative). Entries are local edge ids into tet_edges().
struct TetCase {
  int count = 0;
  std::array<std::array<int, 3>, 2> tris{};
};
const std::array<TetCase, 16>& tet_case_table();
const std::array<std::array<int, 2>, 6>& tet_edges();

enum class ExtractStatus { ok, empty };

template <typename T>
struct Extraction {
  TriMesh<T> mesh;
  ExtractStatus status = ExtractStatus::ok;
  std::string warning;
  std::int64_t active_vertices = 0;  // vertices whose heads were evaluated with gradients
};

// Runs the SDF head on every lattice point, then deformation and color heads
// only on endpoints of sign-changing edges. Queries use undeformed positions.
// with_deform = false keeps offsets at zero and skips the deformation head.
template <typename T>
Extraction<T> extract(const Triplane<T>& tp, const ImplicitHeads<T>& heads, const TetGrid& grid,
                      bool with_deform = true);

}  // namespace atom
