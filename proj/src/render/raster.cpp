#include "atom/raster.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <unordered_map>

#include "atom/ops.hpp"

namespace atom {

namespace {

using Point2 = std::array<double, 2>;

// Edge function of p against a -> b, evaluated with the endpoints in a fixed
// (lexicographic) order so that both triangles sharing an edge agree on the
// exact value up to sign.
double edge_function(const Point2& a, const Point2& b, const Point2& p) {
  const bool swap = b < a;
  const Point2& u = swap ? b : a;
  const Point2& v = swap ? a : b;
  const double e = (v[0] - u[0]) * (p[1] - u[1]) - (v[1] - u[1]) * (p[0] - u[0]);
  return swap ? -e : e;
}

// Exactly one of d and -d qualifies.
bool owns_edge(const Point2& a, const Point2& b) {
  const double dx = b[0] - a[0], dy = b[1] - a[1];
  return dy > 0 || (dy == 0 && dx < 0);
}

}  // namespace

std::int64_t FragmentBuffer::covered() const {
  return std::count_if(pixels.begin(), pixels.end(), [](const Fragment& f) { return f.face >= 0; });
}

ScreenTriangle project_triangle(const Camera& cam, const CameraBasis& basis, const std::array<Vec3, 3>& corners) {
  ScreenTriangle tri;
  const Vec3 normal = cross(corners[1] - corners[0], corners[2] - corners[0]);
  if (!(dot(normal, cam.eye - corners[0]) > 0)) return tri;
  std::array<Point2, 3> xy{};
  std::array<double, 3> depth{};
  for (std::size_t k = 0; k < 3; ++k)
    if (!project_point(cam, basis, corners[k], xy[k][0], xy[k][1], depth[k])) return tri;
  double area = (xy[1][0] - xy[0][0]) * (xy[2][1] - xy[0][1]) - (xy[1][1] - xy[0][1]) * (xy[2][0] - xy[0][0]);
  if (area == 0.0 || !std::isfinite(area)) return tri;
  tri.order = {0, 1, 2};
  if (area < 0) {
    tri.order = {0, 2, 1};
    area = -area;
  }
  for (std::size_t k = 0; k < 3; ++k) {
    tri.xy[k] = xy[static_cast<std::size_t>(tri.order[k])];
    tri.depth[k] = depth[static_cast<std::size_t>(tri.order[k])];
  }
  tri.area = area;
  tri.visible = true;
  return tri;
}

bool cover_pixel(const ScreenTriangle& tri, int col, int row, Fragment& out) {
  if (!tri.visible) return false;
  const Point2 p{col + 0.5, row + 0.5};
  std::array<double, 3> lambda{};
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& a = tri.xy[(i + 1) % 3];
    const auto& b = tri.xy[(i + 2) % 3];
    const double e = edge_function(a, b, p);
    if (e < 0 || (e == 0 && !owns_edge(a, b))) return false;
    lambda[i] = e;
  }
  const double total = lambda[0] + lambda[1] + lambda[2];
  if (!(total > 0)) return false;
  std::array<double, 3> q{};
  double qsum = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    q[i] = lambda[i] / total / tri.depth[i];
    qsum += q[i];
  }
  for (std::size_t i = 0; i < 3; ++i) out.weights[static_cast<std::size_t>(tri.order[i])] = q[i] / qsum;
  out.depth = 1.0 / qsum;
  return true;
}

FragmentBuffer rasterize(std::span<const double> positions, std::span<const std::array<std::int32_t, 3>> faces,
                         const Camera& cam) {
  const auto basis = camera_basis(cam);
  FragmentBuffer buf;
  buf.width = cam.width;
  buf.height = cam.height;
  buf.pixels.assign(static_cast<std::size_t>(cam.width) * cam.height, Fragment{});
  std::vector<double> zbuf(buf.pixels.size(), std::numeric_limits<double>::infinity());
  const auto vertices = static_cast<std::int64_t>(positions.size() / 3);
  for (std::size_t f = 0; f < faces.size(); ++f) {
    std::array<Vec3, 3> corners{};
    for (std::size_t k = 0; k < 3; ++k) {
      const auto v = faces[f][k];
      if (v < 0 || v >= vertices) throw std::out_of_range(fmt::format("rasterize: face {} references vertex {}", f, v));
      corners[k] = {positions[static_cast<std::size_t>(v) * 3], positions[static_cast<std::size_t>(v) * 3 + 1],
                    positions[static_cast<std::size_t>(v) * 3 + 2]};
    }
    const auto tri = project_triangle(cam, basis, corners);
    if (!tri.visible) continue;
    double lo[2] = {tri.xy[0][0], tri.xy[0][1]}, hi[2] = {lo[0], lo[1]};
    for (std::size_t k = 1; k < 3; ++k)
      for (int a = 0; a < 2; ++a) {
        lo[a] = std::min(lo[a], tri.xy[k][static_cast<std::size_t>(a)]);
        hi[a] = std::max(hi[a], tri.xy[k][static_cast<std::size_t>(a)]);
      }
    const int c0 = std::max(0, static_cast<int>(std::ceil(lo[0] - 0.5)));
    const int c1 = std::min(cam.width - 1, static_cast<int>(std::floor(hi[0] - 0.5)));
    const int r0 = std::max(0, static_cast<int>(std::ceil(lo[1] - 0.5)));
    const int r1 = std::min(cam.height - 1, static_cast<int>(std::floor(hi[1] - 0.5)));
    Fragment frag;
    frag.face = static_cast<std::int32_t>(f);
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c) {
        if (!cover_pixel(tri, c, r, frag)) continue;
        const auto idx = static_cast<std::size_t>(r) * cam.width + c;
        if (frag.depth < zbuf[idx]) {
          zbuf[idx] = frag.depth;
          buf.pixels[idx] = frag;
        }
      }
  }
  return buf;
}

template <typename T>
FragmentBuffer rasterize(const TriMesh<T>& mesh, const Camera& cam) {
  const auto p = mesh.positions.data();
  std::vector<double> positions(p.begin(), p.end());
  return rasterize(positions, mesh.faces, cam);
}

template <typename T>
RenderOutput<T> shade_fragments(const FragmentBuffer& fragments, const TriMesh<T>& mesh, const Camera& cam,
                                const Shading& shading) {
  if (fragments.width != cam.width || fragments.height != cam.height)
    throw std::invalid_argument("shade_fragments: fragment buffer does not match the camera");
  const auto hw = static_cast<std::int64_t>(fragments.pixels.size());
  std::vector<std::int64_t> pixel, corner[3];
  for (std::int64_t i = 0; i < hw; ++i) {
    const auto& f = fragments.pixels[static_cast<std::size_t>(i)];
    if (f.face < 0) continue;
    pixel.push_back(i);
    for (std::size_t k = 0; k < 3; ++k) corner[k].push_back(mesh.faces[static_cast<std::size_t>(f.face)][k]);
  }

  RenderOutput<T> out;
  out.width = cam.width;
  out.height = cam.height;
  std::vector<T> background(static_cast<std::size_t>(hw * 3)), coverage(static_cast<std::size_t>(hw), T(0));
  for (std::int64_t i = 0; i < hw; ++i)
    for (int k = 0; k < 3; ++k) background[static_cast<std::size_t>(i * 3 + k)] = static_cast<T>(shading.background[static_cast<std::size_t>(k)]);
  for (auto i : pixel) {
    coverage[static_cast<std::size_t>(i)] = T(1);
    for (int k = 0; k < 3; ++k) background[static_cast<std::size_t>(i * 3 + k)] = T(0);
  }
  out.opacity = Tensor<T>::from_vector({hw}, std::move(coverage));
  auto bg = Tensor<T>::from_vector({hw, 3}, std::move(background));
  if (pixel.empty()) {
    out.rgb = bg;
    return out;
  }

  const auto n = static_cast<std::int64_t>(pixel.size());
  const auto rays = make_rays(cam);
  std::vector<T> dirs(static_cast<std::size_t>(n * 3)), origins(static_cast<std::size_t>(n * 3));
  for (std::int64_t i = 0; i < n; ++i)
    for (int a = 0; a < 3; ++a) {
      dirs[static_cast<std::size_t>(i * 3 + a)] = static_cast<T>(rays.directions[static_cast<std::size_t>(pixel[static_cast<std::size_t>(i)])][static_cast<std::size_t>(a)]);
      origins[static_cast<std::size_t>(i * 3 + a)] = static_cast<T>(cam.eye[static_cast<std::size_t>(a)]);
    }
  const auto d = Tensor<T>::from_vector({n, 3}, std::move(dirs));
  const auto o = Tensor<T>::from_vector({n, 3}, std::move(origins));
  const auto v0 = gather_rows(mesh.positions, std::span<const std::int64_t>(corner[0]));
  const auto v1 = gather_rows(mesh.positions, std::span<const std::int64_t>(corner[1]));
  const auto v2 = gather_rows(mesh.positions, std::span<const std::int64_t>(corner[2]));

  // Moller-Trumbore barycentrics of the pixel-center ray.
  const auto e1 = sub(v1, v0);
  const auto e2 = sub(v2, v0);
  const auto pvec = cross3(d, e2);
  const auto det = sum_last(mul(e1, pvec));
  const auto tvec = sub(o, v0);
  const auto u = div(sum_last(mul(tvec, pvec)), det);
  const auto qvec = cross3(tvec, e1);
  const auto v = div(sum_last(mul(d, qvec)), det);
  const auto w0 = add_scalar(neg(add(u, v)), T(1));

  const auto normal = cross3(e1, e2);
  const auto unit = scale_rows(normal, div(Tensor<T>::full({n}, T(1)), sqrt(sum_last(square(normal)))));
  Tensor<T> albedo;
  if (shading.mode == ShadingMode::diffuse) {
    const auto c0 = gather_rows(mesh.colors, std::span<const std::int64_t>(corner[0]));
    const auto c1 = gather_rows(mesh.colors, std::span<const std::int64_t>(corner[1]));
    const auto c2 = gather_rows(mesh.colors, std::span<const std::int64_t>(corner[2]));
    albedo = add(add(scale_rows(c0, w0), scale_rows(c1, u)), scale_rows(c2, v));
  }
  const auto shaded = shade_lambert(albedo, unit, shading);
  out.rgb = add(scatter_rows(shaded, std::span<const std::int64_t>(pixel), hw), bg);
  return out;
}

template <typename T>
Tensor<T> antialias(const Tensor<T>& rgb, const FragmentBuffer& fragments, const TriMesh<T>& mesh, const Camera& cam) {
  if (fragments.width != cam.width || fragments.height != cam.height)
    throw std::invalid_argument("antialias: fragment buffer does not match the camera");
  if (mesh.faces.empty()) return rgb;
  const auto basis = camera_basis(cam);
  const auto pos = mesh.positions.data();
  const auto nv = static_cast<std::size_t>(mesh.vertex_count());
  auto vertex = [&](std::int32_t v) {
    const auto i = static_cast<std::size_t>(v) * 3;
    return Vec3{static_cast<double>(pos[i]), static_cast<double>(pos[i + 1]), static_cast<double>(pos[i + 2])};
  };
  std::vector<Point2> screen(nv);
  std::vector<char> projected(nv, 0);
  for (std::size_t v = 0; v < nv; ++v) {
    double depth = 0;
    projected[v] = project_point(cam, basis, vertex(static_cast<std::int32_t>(v)), screen[v][0], screen[v][1], depth);
  }
  std::vector<char> front(mesh.faces.size());
  std::unordered_map<std::uint64_t, std::array<std::int32_t, 2>> edges;
  edges.reserve(mesh.faces.size() * 2);
  auto key = [](std::int32_t a, std::int32_t b) {
    if (a > b) std::swap(a, b);
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
  };
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    const auto& t = mesh.faces[f];
    const Vec3 a = vertex(t[0]);
    front[f] = dot(cross(vertex(t[1]) - a, vertex(t[2]) - a), cam.eye - a) > 0;
    for (std::size_t k = 0; k < 3; ++k) {
      auto [it, fresh] = edges.try_emplace(key(t[k], t[(k + 1) % 3]), std::array<std::int32_t, 2>{static_cast<std::int32_t>(f), -1});
      if (!fresh) it->second[1] = static_cast<std::int32_t>(f);
    }
  }
  auto silhouette = [&](std::int32_t f, std::int32_t a, std::int32_t b) {
    const auto& adj = edges.at(key(a, b));
    const auto other = adj[0] == f ? adj[1] : adj[0];
    return other < 0 || !front[static_cast<std::size_t>(other)];
  };

  // Per pair: the near pixel, the other pixel, the crossing edge.
  std::vector<std::int64_t> near_px, far_px, ea, eb;
  std::vector<T> centers;  // near (x, y), far (x, y)
  const int w = cam.width, h = cam.height;
  auto consider = [&](int c0, int r0, int c1, int r1) {
    const auto i0 = static_cast<std::int64_t>(r0) * w + c0, i1 = static_cast<std::int64_t>(r1) * w + c1;
    const auto& f0 = fragments.pixels[static_cast<std::size_t>(i0)];
    const auto& f1 = fragments.pixels[static_cast<std::size_t>(i1)];
    if (f0.face == f1.face) return;
    const auto inf = std::numeric_limits<double>::infinity();
    const bool first = (f0.face >= 0 ? f0.depth : inf) <= (f1.face >= 0 ? f1.depth : inf);
    const auto& nf = first ? f0 : f1;
    const Point2 pn = first ? Point2{c0 + 0.5, r0 + 0.5} : Point2{c1 + 0.5, r1 + 0.5};
    const Point2 pf = first ? Point2{c1 + 0.5, r1 + 0.5} : Point2{c0 + 0.5, r0 + 0.5};
    const auto& tri = mesh.faces[static_cast<std::size_t>(nf.face)];
    double best = 2.0;
    std::int32_t ba = -1, bb = -1;
    for (std::size_t k = 0; k < 3; ++k) {
      const auto a = tri[k], b = tri[(k + 1) % 3];
      if (!projected[static_cast<std::size_t>(a)] || !projected[static_cast<std::size_t>(b)]) continue;
      const auto& pa = screen[static_cast<std::size_t>(a)];
      const auto& pb = screen[static_cast<std::size_t>(b)];
      const double dx = pb[0] - pa[0], dy = pb[1] - pa[1];
      const double sn = dx * (pn[1] - pa[1]) - dy * (pn[0] - pa[0]);
      const double sf = dx * (pf[1] - pa[1]) - dy * (pf[0] - pa[0]);
      if (!(sn * sf < 0)) continue;
      const double alpha = sn / (sn - sf);
      // The crossing must fall within the edge itself.
      const double qx = pn[0] + alpha * (pf[0] - pn[0]) - pa[0], qy = pn[1] + alpha * (pf[1] - pn[1]) - pa[1];
      const double along = (qx * dx + qy * dy) / (dx * dx + dy * dy);
      if (along < 0 || along > 1 || alpha >= best || !silhouette(nf.face, a, b)) continue;
      best = alpha;
      ba = a;
      bb = b;
    }
    if (ba < 0) return;
    near_px.push_back(first ? i0 : i1);
    far_px.push_back(first ? i1 : i0);
    ea.push_back(ba);
    eb.push_back(bb);
    for (double v : {pn[0], pn[1], pf[0], pf[1]}) centers.push_back(static_cast<T>(v));
  };
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      if (c + 1 < w) consider(c, r, c + 1, r);
      if (r + 1 < h) consider(c, r, c, r + 1);
    }
  if (near_px.empty()) return rgb;

  const auto n = static_cast<std::int64_t>(near_px.size());
  const auto cen = Tensor<T>::from_vector({n, 4}, std::move(centers));
  const double tan_half = std::tan(0.5 * cam.fov_y_deg * std::numbers::pi / 180.0);
  const double aspect = static_cast<double>(w) / h;
  // View-space rows (right, up, forward) of each vertex, then pixel coordinates.
  std::vector<T> frame(9), origin(3);
  for (std::size_t r = 0; r < 3; ++r) {
    frame[r * 3 + 0] = static_cast<T>(basis.right[r]);
    frame[r * 3 + 1] = static_cast<T>(basis.up[r]);
    frame[r * 3 + 2] = static_cast<T>(basis.forward[r]);
  }
  origin[0] = static_cast<T>(-dot(cam.eye, basis.right));
  origin[1] = static_cast<T>(-dot(cam.eye, basis.up));
  origin[2] = static_cast<T>(-dot(cam.eye, basis.forward));
  const auto frame_t = Tensor<T>::from_vector({3, 3}, std::move(frame));
  const auto origin_t = Tensor<T>::from_vector({3}, std::move(origin));
  auto to_pixels = [&](std::span<const std::int64_t> idx, Tensor<T>& px, Tensor<T>& py) {
    const auto view = add(matmul(gather_rows(mesh.positions, idx), frame_t), origin_t);
    const auto z = slice_last(view, 2, 1);
    px = reshape(add_scalar(mul_scalar(div(slice_last(view, 0, 1), z), static_cast<T>(0.5 * w / (tan_half * aspect))), static_cast<T>(0.5 * w)), {n});
    py = reshape(add_scalar(mul_scalar(div(slice_last(view, 1, 1), z), static_cast<T>(-0.5 * h / tan_half)), static_cast<T>(0.5 * h)), {n});
  };
  Tensor<T> ax, ay, bx, by;
  to_pixels(ea, ax, ay);
  to_pixels(eb, bx, by);
  const auto dx = sub(bx, ax), dy = sub(by, ay);
  auto side = [&](std::int64_t col) {
    const auto x = reshape(slice_last(cen, col, 1), {n});
    const auto y = reshape(slice_last(cen, col + 1, 1), {n});
    return sub(mul(dx, sub(y, ay)), mul(dy, sub(x, ax)));
  };
  const auto sn = side(0);
  const auto alpha = div(sn, sub(sn, side(2)));

  // Past the midpoint the far pixel is partly covered; before it the near one
  // is partly uncovered. Both move a pixel toward its neighbor.
  const auto av = alpha.data();
  std::vector<std::int64_t> target(static_cast<std::size_t>(n)), source(static_cast<std::size_t>(n));
  std::vector<T> sign(static_cast<std::size_t>(n)), offset(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) {
    const bool spill = av[i] > T(0.5);
    target[i] = spill ? far_px[i] : near_px[i];
    source[i] = spill ? near_px[i] : far_px[i];
    sign[i] = spill ? T(1) : T(-1);
    offset[i] = spill ? T(-0.5) : T(0.5);
  }
  const auto share = add(mul(alpha, Tensor<T>::from_vector({n}, std::move(sign))), Tensor<T>::from_vector({n}, std::move(offset)));
  const auto delta = sub(gather_rows(rgb, std::span<const std::int64_t>(source)), gather_rows(rgb, std::span<const std::int64_t>(target)));
  return add(rgb, scatter_rows(scale_rows(delta, share), std::span<const std::int64_t>(target), rgb.shape()[0]));
}

template <typename T>
Stage2Output<T> render_stage2(const Triplane<T>& tp, const ImplicitHeads<T>& heads, const TetGrid& grid,
                              const Camera& cam, const Stage2Options& options) {
  auto ex = extract(tp, heads, grid, options.with_deform);
  Stage2Output<T> out;
  out.status = ex.status;
  out.warning = ex.warning;
  out.faces = ex.mesh.faces.size();
  const auto fragments = ex.mesh.empty() ? FragmentBuffer{cam.width, cam.height,
                                                          std::vector<Fragment>(static_cast<std::size_t>(cam.width) * cam.height)}
                                         : rasterize(ex.mesh, cam);
  out.image = shade_fragments(fragments, ex.mesh, cam, options.shading);
  if (options.antialias) out.image.rgb = antialias(out.image.rgb, fragments, ex.mesh, cam);
  return out;
}

#define ATOM_INSTANTIATE(T)                                                                                     \
  template FragmentBuffer rasterize(const TriMesh<T>&, const Camera&);                                         \
  template RenderOutput<T> shade_fragments(const FragmentBuffer&, const TriMesh<T>&, const Camera&,             \
                                           const Shading&);                                                    \
  template Tensor<T> antialias(const Tensor<T>&, const FragmentBuffer&, const TriMesh<T>&, const Camera&);      \
  template Stage2Output<T> render_stage2(const Triplane<T>&, const ImplicitHeads<T>&, const TetGrid&,          \
                                         const Camera&, const Stage2Options&);
ATOM_INSTANTIATE(float)
ATOM_INSTANTIATE(double)
#undef ATOM_INSTANTIATE

}  // namespace atom
