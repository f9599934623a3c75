#include "atom/dmtet.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "atom/ops.hpp"

namespace atom {

namespace {

constexpr std::array<std::array<int, 2>, 6> kEdges{{{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}};

int edge_id(int u, int v) {
  if (u > v) std::swap(u, v);
  for (int e = 0; e < 6; ++e)
    if (kEdges[static_cast<std::size_t>(e)][0] == u && kEdges[static_cast<std::size_t>(e)][1] == v) return e;
  throw std::logic_error("edge_id: not a tet edge");
}

// Orients each triangle on the reference tet so its normal follows the
// gradient of the linear interpolant of +-1 vertex values.
std::array<TetCase, 16> build_case_table() {
  const std::array<Vec3, 4> ref{Vec3{0, 0, 0}, Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}};
  std::array<TetCase, 16> table{};
  for (int mask = 0; mask < 16; ++mask) {
    std::array<bool, 4> neg{};
    int negatives = 0;
    for (int i = 0; i < 4; ++i) {
      neg[static_cast<std::size_t>(i)] = (mask >> i) & 1;
      negatives += neg[static_cast<std::size_t>(i)];
    }
    TetCase c;
    if (negatives == 1 || negatives == 3) {
      int lone = 0;
      for (int i = 0; i < 4; ++i)
        if (neg[static_cast<std::size_t>(i)] == (negatives == 1)) lone = i;
      std::array<int, 3> tri{};
      int n = 0;
      for (int i = 0; i < 4; ++i)
        if (i != lone) tri[static_cast<std::size_t>(n++)] = edge_id(lone, i);
      c.count = 1;
      c.tris[0] = tri;
    } else if (negatives == 2) {
      // Vertex 0 and its same-sign partner x against y < z; quad cut along (0y, xz).
      int x = 0, y = -1, z = -1;
      for (int i = 1; i < 4; ++i) {
        if (neg[static_cast<std::size_t>(i)] == neg[0]) {
          x = i;
        } else if (y < 0) {
          y = i;
        } else {
          z = i;
        }
      }
      c.count = 2;
      c.tris[0] = {edge_id(0, y), edge_id(0, z), edge_id(x, z)};
      c.tris[1] = {edge_id(0, y), edge_id(x, z), edge_id(x, y)};
    }
    // Gradient of the linear field with f = -1 on negatives, +1 elsewhere.
    std::array<double, 4> f{};
    for (int i = 0; i < 4; ++i) f[static_cast<std::size_t>(i)] = neg[static_cast<std::size_t>(i)] ? -1.0 : 1.0;
    const Vec3 grad{f[1] - f[0], f[2] - f[0], f[3] - f[0]};
    for (int t = 0; t < c.count; ++t) {
      auto& tri = c.tris[static_cast<std::size_t>(t)];
      std::array<Vec3, 3> p{};
      for (int k = 0; k < 3; ++k) {
        const auto& e = kEdges[static_cast<std::size_t>(tri[static_cast<std::size_t>(k)])];
        p[static_cast<std::size_t>(k)] = (ref[static_cast<std::size_t>(e[0])] + ref[static_cast<std::size_t>(e[1])]) * 0.5;
      }
      if (dot(cross(p[1] - p[0], p[2] - p[0]), grad) < 0) std::swap(tri[1], tri[2]);
    }
    table[static_cast<std::size_t>(mask)] = c;
  }
  return table;
}

template <typename T>
int sign_mask(const T* s, const std::array<std::int32_t, 4>& tet) {
  int mask = 0;
  for (int i = 0; i < 4; ++i)
    if (s[tet[static_cast<std::size_t>(i)]] < T(0)) mask |= 1 << i;
  return mask;
}

void check_grid(const TetGrid& grid) {
  if (grid.resolution < 1 || grid.lattice.size() != static_cast<std::size_t>(std::pow(grid.resolution + 1, 3)))
    throw std::invalid_argument("tet grid is not built");
}

}  // namespace

const std::array<std::array<int, 2>, 6>& tet_edges() { return kEdges; }

const std::array<TetCase, 16>& tet_case_table() {
  static const auto table = build_case_table();
  return table;
}

double signed_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
  return dot(b - a, cross(c - a, d - a)) / 6.0;
}

TetGrid build_grid(int resolution, double half_extent) {
  if (resolution < 1) throw std::invalid_argument(fmt::format("build_grid: resolution {} < 1", resolution));
  if (!(half_extent > 0)) throw std::invalid_argument("build_grid: half extent must be positive");
  TetGrid grid;
  grid.resolution = resolution;
  grid.half_extent = half_extent;
  const int n = resolution + 1;
  grid.lattice.reserve(static_cast<std::size_t>(n) * n * n);
  const double step = grid.cell_edge();
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i)
        grid.lattice.push_back({-half_extent + i * step, -half_extent + j * step, -half_extent + k * step});

  // Kuhn split: one tet per axis order, walking corner (0,0,0) to (1,1,1).
  // Odd axis orders are negatively oriented and get two vertices swapped.
  constexpr std::array<std::array<int, 3>, 6> orders{{{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
  constexpr std::array<bool, 6> odd{false, true, true, false, false, true};
  grid.tets.reserve(static_cast<std::size_t>(6) * resolution * resolution * resolution);
  for (int k = 0; k < resolution; ++k)
    for (int j = 0; j < resolution; ++j)
      for (int i = 0; i < resolution; ++i)
        for (std::size_t o = 0; o < 6; ++o) {
          std::array<int, 3> c{i, j, k};
          std::array<std::int32_t, 4> tet{};
          tet[0] = grid.vertex_index(c[0], c[1], c[2]);
          for (int s = 0; s < 3; ++s) {
            ++c[static_cast<std::size_t>(orders[o][static_cast<std::size_t>(s)])];
            tet[static_cast<std::size_t>(s + 1)] = grid.vertex_index(c[0], c[1], c[2]);
          }
          if (odd[o]) std::swap(tet[2], tet[3]);
          grid.tets.push_back(tet);
        }
  return grid;
}

template <typename T>
TriMesh<T> march_tets(const TetGrid& grid, const GridField<T>& field) {
  check_grid(grid);
  const auto nv = grid.vertex_count();
  if (!field.sdf.defined() || field.sdf.numel() != nv)
    throw TensorError(fmt::format("march_tets: expected {} sdf values", nv));
  if (field.offsets.defined() && field.offsets.shape() != Shape{nv, 3})
    throw TensorError(fmt::format("march_tets: offsets must be [{}, 3]", nv));
  if (field.colors.defined() && field.colors.shape() != Shape{nv, 3})
    throw TensorError(fmt::format("march_tets: colors must be [{}, 3]", nv));
  const T* s = field.sdf.data().data();
  for (std::int64_t v = 0; v < nv; ++v)
    if (!std::isfinite(static_cast<double>(s[v]))) throw TensorError("march_tets: non-finite sdf value");

  const auto& table = tet_case_table();
  TriMesh<T> mesh;
  std::unordered_map<std::int64_t, std::int32_t> vertex_of_edge;
  std::vector<std::int64_t> ends_a, ends_b;

  // Register crossing edges first so vertex numbering depends only on which
  // edges cross, not on the direction of the sign change.
  std::vector<std::pair<std::int32_t, int>> active_tets;  // (tet, mask)
  for (std::size_t t = 0; t < grid.tets.size(); ++t) {
    const auto& tet = grid.tets[t];
    const int mask = sign_mask(s, tet);
    if (table[static_cast<std::size_t>(mask)].count == 0) continue;
    active_tets.emplace_back(static_cast<std::int32_t>(t), mask);
    for (const auto& e : kEdges) {
      std::int32_t a = tet[static_cast<std::size_t>(e[0])], b = tet[static_cast<std::size_t>(e[1])];
      if ((s[a] < T(0)) == (s[b] < T(0))) continue;
      if (a > b) std::swap(a, b);
      const auto key = static_cast<std::int64_t>(a) * nv + b;
      if (vertex_of_edge.try_emplace(key, static_cast<std::int32_t>(mesh.provenance.size())).second) {
        mesh.provenance.push_back({static_cast<std::int32_t>(t), a, b});
        ends_a.push_back(a);
        ends_b.push_back(b);
      }
    }
  }
  for (const auto& [t, mask] : active_tets) {
    const auto& tet = grid.tets[static_cast<std::size_t>(t)];
    const auto& c = table[static_cast<std::size_t>(mask)];
    for (int k = 0; k < c.count; ++k) {
      std::array<std::int32_t, 3> face{};
      for (int m = 0; m < 3; ++m) {
        const auto& e = kEdges[static_cast<std::size_t>(c.tris[static_cast<std::size_t>(k)][static_cast<std::size_t>(m)])];
        std::int32_t a = tet[static_cast<std::size_t>(e[0])], b = tet[static_cast<std::size_t>(e[1])];
        if (a > b) std::swap(a, b);
        face[static_cast<std::size_t>(m)] = vertex_of_edge.at(static_cast<std::int64_t>(a) * nv + b);
      }
      mesh.faces.push_back(face);
    }
  }

  const auto m = static_cast<std::int64_t>(ends_a.size());
  if (m == 0) {
    mesh.positions = Tensor<T>::zeros({0, 3});
    mesh.colors = Tensor<T>::zeros({0, 3});
    return mesh;
  }
  // t = s_a / (s_a - s_b); value = v_a + t (v_b - v_a).
  const auto sdf_col = reshape(field.sdf, {nv, 1});
  const auto sa = reshape(gather_rows(sdf_col, std::span<const std::int64_t>(ends_a)), {m});
  const auto sb = reshape(gather_rows(sdf_col, std::span<const std::int64_t>(ends_b)), {m});
  const auto t = div(sa, sub(sa, sb));
  auto lerp = [&](const Tensor<T>& values) {
    const auto va = gather_rows(values, std::span<const std::int64_t>(ends_a));
    const auto vb = gather_rows(values, std::span<const std::int64_t>(ends_b));
    return add(va, scale_rows(sub(vb, va), t));
  };

  std::vector<T> lattice(static_cast<std::size_t>(nv * 3));
  for (std::int64_t v = 0; v < nv; ++v)
    for (int a = 0; a < 3; ++a)
      lattice[static_cast<std::size_t>(v * 3 + a)] = static_cast<T>(grid.lattice[static_cast<std::size_t>(v)][static_cast<std::size_t>(a)]);
  auto base = Tensor<T>::from_vector({nv, 3}, std::move(lattice));
  mesh.positions = lerp(field.offsets.defined() ? add(base, field.offsets) : base);
  mesh.colors = field.colors.defined() ? lerp(field.colors) : Tensor<T>::full({m, 3}, T(0.5));

  const T* p = mesh.positions.data().data();
  for (const auto& f : mesh.faces) {
    Vec3 q[3];
    for (int k = 0; k < 3; ++k)
      for (int a = 0; a < 3; ++a) q[k][static_cast<std::size_t>(a)] = p[f[static_cast<std::size_t>(k)] * 3 + a];
    if (length(cross(q[1] - q[0], q[2] - q[0])) == 0.0) ++mesh.degenerate_faces;
  }
  return mesh;
}

template <typename T>
Extraction<T> extract(const Triplane<T>& tp, const ImplicitHeads<T>& heads, const TetGrid& grid, bool with_deform) {
  check_grid(grid);
  const auto nv = grid.vertex_count();
  auto points_of = [&](std::span<const std::int64_t> ids) {
    std::vector<T> pts(ids.size() * 3);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (int a = 0; a < 3; ++a)
        pts[i * 3 + static_cast<std::size_t>(a)] =
            static_cast<T>(grid.lattice[static_cast<std::size_t>(ids[i])][static_cast<std::size_t>(a)]);
    return Tensor<T>::from_vector({static_cast<std::int64_t>(ids.size()), 3}, std::move(pts));
  };

  // Classification pass, chunked to bound memory at large R.
  std::vector<T> sdf_all(static_cast<std::size_t>(nv));
  {
    NoGradGuard no_grad;
    constexpr std::int64_t chunk = 1 << 15;
    std::vector<std::int64_t> ids;
    for (std::int64_t start = 0; start < nv; start += chunk) {
      const auto end = std::min(nv, start + chunk);
      ids.resize(static_cast<std::size_t>(end - start));
      for (std::int64_t v = start; v < end; ++v) ids[static_cast<std::size_t>(v - start)] = v;
      const auto pts = points_of(ids);
      const auto values = heads.sdf(heads.features(tp, pts), pts).to_vector();
      std::copy(values.begin(), values.end(), sdf_all.begin() + start);
    }
  }

  std::vector<char> is_active(static_cast<std::size_t>(nv), 0);
  for (const auto& tet : grid.tets) {
    if (sign_mask(sdf_all.data(), tet) % 15 == 0) continue;
    for (auto v : tet) is_active[static_cast<std::size_t>(v)] = 1;
  }
  std::vector<std::int64_t> active;
  for (std::int64_t v = 0; v < nv; ++v)
    if (is_active[static_cast<std::size_t>(v)]) active.push_back(v);

  Extraction<T> out;
  out.active_vertices = static_cast<std::int64_t>(active.size());
  GridField<T> field;
  auto sdf_base = Tensor<T>::from_vector({nv}, sdf_all);
  if (active.empty()) {
    field.sdf = sdf_base;
  } else {
    const auto na = static_cast<std::int64_t>(active.size());
    const auto pts = points_of(active);
    const auto feats = heads.features(tp, pts);
    const auto sdf_active = heads.sdf(feats, pts);
    // Values stay bit-identical to the classification pass; gradients reach the active evaluation.
    const auto delta = reshape(sub(sdf_active, sdf_active.detach()), {na, 1});
    field.sdf = add(sdf_base, reshape(scatter_rows(delta, std::span<const std::int64_t>(active), nv), {nv}));
    field.colors = scatter_rows(heads.color(feats), std::span<const std::int64_t>(active), nv);
    if (with_deform)
      field.offsets = scatter_rows(heads.deform(feats, grid.cell_edge()), std::span<const std::int64_t>(active), nv);
  }
  out.mesh = march_tets(grid, field);
  if (out.mesh.empty()) {
    out.status = ExtractStatus::empty;
    out.warning = "extracted mesh is empty: the SDF has no sign change on the grid";
  }
  return out;
}

template TriMesh<float> march_tets(const TetGrid&, const GridField<float>&);
template TriMesh<double> march_tets(const TetGrid&, const GridField<double>&);
template Extraction<float> extract(const Triplane<float>&, const ImplicitHeads<float>&, const TetGrid&, bool);
template Extraction<double> extract(const Triplane<double>&, const ImplicitHeads<double>&, const TetGrid&, bool);

}  // namespace atom
