#include <doctest.h>

#include <chrono>
#include <cmath>
#include <limits>
#include <random>

#include "atom/gradcheck.hpp"
#include "atom/ops.hpp"
#include "atom/raster.hpp"

using namespace atom;
using Td = Tensor<double>;

namespace {

TriMesh<double> make_mesh(std::vector<double> positions, std::vector<std::array<std::int32_t, 3>> faces,
                          std::vector<double> colors = {}) {
  TriMesh<double> mesh;
  const auto n = static_cast<std::int64_t>(positions.size() / 3);
  if (colors.empty()) colors.assign(positions.size(), 0.5);
  mesh.positions = Td::parameter({n, 3}, std::move(positions));
  mesh.colors = Td::parameter({n, 3}, std::move(colors));
  mesh.faces = std::move(faces);
  mesh.provenance.resize(static_cast<std::size_t>(n));
  return mesh;
}

// Every face against every pixel, no bounding boxes.
FragmentBuffer brute_force(const TriMesh<double>& mesh, const Camera& cam) {
  const auto basis = camera_basis(cam);
  FragmentBuffer buf{cam.width, cam.height, std::vector<Fragment>(static_cast<std::size_t>(cam.width) * cam.height)};
  const auto p = mesh.positions.to_vector();
  for (int r = 0; r < cam.height; ++r)
    for (int c = 0; c < cam.width; ++c) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        std::array<Vec3, 3> corners{};
        for (std::size_t k = 0; k < 3; ++k) {
          const auto v = static_cast<std::size_t>(mesh.faces[f][k]);
          corners[k] = {p[v * 3], p[v * 3 + 1], p[v * 3 + 2]};
        }
        Fragment frag;
        if (!cover_pixel(project_triangle(cam, basis, corners), c, r, frag)) continue;
        if (frag.depth < best) {
          best = frag.depth;
          frag.face = static_cast<std::int32_t>(f);
          buf.pixels[static_cast<std::size_t>(r) * cam.width + c] = frag;
        }
      }
    }
  return buf;
}

TriMesh<double> random_mesh(int triangles, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> center(-0.8, 0.8), jitter(-0.4, 0.4);
  std::vector<double> pos;
  std::vector<std::array<std::int32_t, 3>> faces;
  for (int t = 0; t < triangles; ++t) {
    const Vec3 c{center(rng), center(rng), center(rng)};
    for (int k = 0; k < 3; ++k)
      for (int a = 0; a < 3; ++a) pos.push_back(c[static_cast<std::size_t>(a)] + jitter(rng));
    faces.push_back({3 * t, 3 * t + 1, 3 * t + 2});
  }
  return make_mesh(std::move(pos), std::move(faces));
}

ScreenTriangle screen(std::array<std::array<double, 2>, 3> xy) {
  ScreenTriangle t;
  t.visible = true;
  t.xy = xy;
  t.depth = {1, 1, 1};
  t.area = (xy[1][0] - xy[0][0]) * (xy[2][1] - xy[0][1]) - (xy[1][1] - xy[0][1]) * (xy[2][0] - xy[0][0]);
  return t;
}

}  // namespace

TEST_CASE("full-frustum triangle and depth order") {
  Camera cam;
  cam.width = cam.height = 16;
  const auto big = make_mesh({0, -10, -10, 0, 10, -10, 0, 0, 20}, {{0, 1, 2}});
  const auto frags = rasterize(big, cam);
  for (const auto& f : frags.pixels) {
    CHECK(f.face == 0);
    CHECK(f.depth == doctest::Approx(3.0).epsilon(1e-12));
  }

  // Face 0 two units from the eye, face 1 one unit: face 1 wins.
  const auto stacked = make_mesh({1, -10, -10, 1, 10, -10, 1, 0, 20, 2, -10, -10, 2, 10, -10, 2, 0, 20}, {{0, 1, 2}, {3, 4, 5}});
  for (const auto& f : rasterize(stacked, cam).pixels) CHECK(f.face == 1);
  // Equal depth: lower face id.
  const auto twins = make_mesh({1, -10, -10, 1, 10, -10, 1, 0, 20}, {{0, 1, 2}, {0, 1, 2}});
  for (const auto& f : rasterize(twins, cam).pixels) CHECK(f.face == 0);
  // Back faces are culled.
  const auto back = make_mesh({0, -10, -10, 0, 0, 20, 0, 10, -10}, {{0, 1, 2}});
  CHECK(rasterize(back, cam).covered() == 0);
}

TEST_CASE("shared edges through pixel centers are owned once") {
  // Square [0.5, 5.5]^2 in pixel space split along its diagonal; the diagonal
  // passes through the centers (c + 0.5, c + 0.5).
  const auto a = screen({{{0.5, 0.5}, {5.5, 0.5}, {5.5, 5.5}}});
  const auto b = screen({{{0.5, 0.5}, {5.5, 5.5}, {0.5, 5.5}}});
  const auto a_flip = screen({{{0.5, 0.5}, {5.5, 5.5}, {5.5, 0.5}}});
  CHECK(a.area * b.area > 0);
  CHECK(a_flip.area < 0);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) {
      Fragment f;
      const int hits = int(cover_pixel(a, c, r, f)) + int(cover_pixel(b, c, r, f));
      const bool strictly_inside = c >= 1 && c <= 4 && r >= 1 && r <= 4;
      if (strictly_inside) CHECK(hits == 1);
      CHECK(hits <= 1);
    }
  // Fan of four triangles around a vertex on a pixel center.
  const std::array<double, 2> center{3.5, 3.5};
  const std::array<std::array<double, 2>, 4> rim{{{1.0, 1.0}, {6.0, 1.2}, {6.3, 6.0}, {0.7, 6.1}}};
  int hits = 0;
  for (int k = 0; k < 4; ++k) {
    auto t = screen({{center, rim[static_cast<std::size_t>(k)], rim[static_cast<std::size_t>((k + 1) % 4)]}});
    REQUIRE(t.area > 0);
    Fragment f;
    hits += cover_pixel(t, 3, 3, f);
  }
  CHECK(hits == 1);

  // Centroid on the pixel center with equal depths: weights 1/3.
  Fragment f;
  REQUIRE(cover_pixel(screen({{{1.5, 1.5}, {4.5, 1.5}, {1.5, 4.5}}}), 2, 2, f));
  for (double w : f.weights) CHECK(w == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("rasterize matches the brute-force oracle") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 12; ++trial) {
    const int tris = trial < 4 ? 1 + trial : (trial < 8 ? 20 + 10 * trial : 200);
    const int size = trial % 2 == 0 ? 16 : 32;
    const auto mesh = random_mesh(tris, rng);
    std::uniform_real_distribution<double> az(0, 360), el(-30, 60), fov(30, 70);
    const auto cam = orbit_camera(az(rng), el(rng), 3.0, fov(rng), size, size);
    const auto fast = rasterize(mesh, cam);
    const auto slow = brute_force(mesh, cam);
    const auto basis = camera_basis(cam);
    const auto rays = make_rays(cam);
    const auto p = mesh.positions.to_vector();
    for (std::size_t i = 0; i < fast.pixels.size(); ++i) {
      const auto& a = fast.pixels[i];
      const auto& b = slow.pixels[i];
      REQUIRE(a.face == b.face);
      if (a.face < 0) continue;
      for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(a.weights[k] - b.weights[k]) <= 1e-5);
      CHECK(std::abs(a.weights[0] + a.weights[1] + a.weights[2] - 1.0) < 1e-5);
      for (double w : a.weights) CHECK(w >= -1e-6);
      // The weighted corners project onto the pixel center.
      Vec3 q{0, 0, 0};
      for (std::size_t k = 0; k < 3; ++k) {
        const auto v = static_cast<std::size_t>(mesh.faces[static_cast<std::size_t>(a.face)][k]);
        q = q + Vec3{p[v * 3], p[v * 3 + 1], p[v * 3 + 2]} * a.weights[k];
      }
      double col = 0, row = 0, depth = 0;
      REQUIRE(project_point(cam, basis, q, col, row, depth));
      const double cc = static_cast<double>(i % static_cast<std::size_t>(size)) + 0.5;
      const double rr = static_cast<double>(i / static_cast<std::size_t>(size)) + 0.5;
      CHECK(std::abs(col - cc) < 0.5);
      CHECK(std::abs(row - rr) < 0.5);
      CHECK(depth == doctest::Approx(a.depth).epsilon(1e-9));
      // And onto the pixel's ray.
      const Vec3 off = q - cam.eye;
      CHECK(length(cross(off, rays.directions[i])) < 1e-9 * length(off) + 1e-12);
    }
  }
}

TEST_CASE("shading examples") {
  Camera cam;
  cam.width = cam.height = 8;
  cam.fov_y_deg = 30;
  const auto mesh = make_mesh({0, -2, -2, 0, 2, -2, 0, 0, 3}, {{0, 1, 2}}, {0.2, 0.6, 0.9, 0.2, 0.6, 0.9, 0.2, 0.6, 0.9});
  Shading sh;
  sh.light = {1, 0, 0};
  sh.ambient = 0.0;
  sh.background = {0.1, 0.2, 0.3};
  const auto frags = rasterize(mesh, cam);
  const auto img = shade_fragments(frags, mesh, cam, sh);
  const auto rgb = img.rgb.to_vector();
  const auto op = img.opacity.to_vector();
  for (std::size_t i = 0; i < frags.pixels.size(); ++i) {
    if (frags.pixels[i].face < 0) {
      CHECK(op[i] == 0.0);
      CHECK(rgb[i * 3] == 0.1);
      continue;
    }
    CHECK(op[i] == 1.0);
    CHECK(rgb[i * 3] == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(rgb[i * 3 + 1] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(rgb[i * 3 + 2] == doctest::Approx(0.9).epsilon(1e-12));
  }
  sh.mode = ShadingMode::textureless;
  const auto white = shade_fragments(frags, mesh, cam, sh).rgb.to_vector();
  for (std::size_t i = 0; i < frags.pixels.size(); ++i)
    if (frags.pixels[i].face >= 0) CHECK(white[i * 3 + 1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("vertex color gradients are barycentric weights") {
  std::mt19937_64 rng(12);
  const auto mesh = random_mesh(80, rng);
  const auto cam = orbit_camera(40, 20, 3.0, 50, 24, 24);
  Shading sh;
  sh.ambient = 1.0;  // shading factor 1
  const auto frags = rasterize(mesh, cam);
  REQUIRE(frags.covered() > 50);
  const auto img = shade_fragments(frags, mesh, cam, sh);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> seed(static_cast<std::size_t>(img.rgb.numel()));
  for (auto& s : seed) s = u(rng);
  backward_with(img.rgb, std::span<const double>(seed));
  std::vector<double> expected(static_cast<std::size_t>(mesh.colors.numel()), 0.0);
  for (std::size_t i = 0; i < frags.pixels.size(); ++i) {
    const auto& f = frags.pixels[i];
    if (f.face < 0) continue;
    for (std::size_t k = 0; k < 3; ++k) {
      const auto v = static_cast<std::size_t>(mesh.faces[static_cast<std::size_t>(f.face)][k]);
      for (std::size_t c = 0; c < 3; ++c) expected[v * 3 + c] += f.weights[k] * seed[i * 3 + c];
    }
  }
  const auto g = mesh.colors.grad();
  for (std::size_t i = 0; i < expected.size(); ++i) CHECK(std::abs(g[i] - expected[i]) < 1e-9);
}

TEST_CASE("one-triangle stage-2 scene passes finite differences") {
  Camera cam = orbit_camera(15, 10, 3.0, 35, 12, 12);
  auto mesh = make_mesh({0.1, -0.6, -0.5, -0.2, 0.7, -0.4, 0.05, 0.1, 0.6}, {{0, 1, 2}},
                        {0.9, 0.1, 0.3, 0.2, 0.8, 0.4, 0.5, 0.5, 0.1});
  Shading sh;
  sh.light = normalize(Vec3{1, 0.3, 0.5});
  sh.ambient = 0.2;
  const auto frags = rasterize(mesh, cam);
  REQUIRE(frags.covered() > 10);
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> wv(static_cast<std::size_t>(cam.width * cam.height * 3));
  for (auto& x : wv) x = u(rng);
  const auto w = Td::from_vector({cam.width * cam.height, 3}, wv);
  std::vector<NamedTensor> leaves{{"positions", mesh.positions}, {"colors", mesh.colors}};
  // Coverage is held fixed: finite differences reuse the fragment buffer.
  const auto report = check_gradients([&] { return sum(mul(shade_fragments(frags, mesh, cam, sh).rgb, w)); }, leaves);
  INFO(report.worst);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("antialiased half-plane: row coverage equals the edge position") {
  Camera cam;
  cam.eye = {0, 0, 3};
  cam.up = {0, 1, 0};
  cam.fov_y_deg = 30;
  cam.width = cam.height = 16;
  const double tan_half = std::tan(15.0 * std::acos(-1.0) / 180.0);
  Shading sh;
  sh.ambient = 1.0;
  sh.background = {0, 0, 0};
  for (const double e : {0.013, 0.2, -0.37, 0.5511}) {
    // Two front-facing triangles; only the right side x = e is on screen.
    auto mesh = make_mesh({-5, -5, 0, e, -5, 0, e, 5, 0, -5, 5, 0}, {{0, 1, 2}, {0, 2, 3}}, std::vector<double>(12, 1.0));
    const auto frags = rasterize(mesh, cam);
    const auto rgb = antialias(shade_fragments(frags, mesh, cam, sh).rgb, frags, mesh, cam);
    const auto v = rgb.to_vector();
    const double col = (e / 3.0 / tan_half + 1.0) * 0.5 * cam.width;
    for (int r = 0; r < cam.height; ++r) {
      double total = 0;
      for (int c = 0; c < cam.width; ++c) total += v[static_cast<std::size_t>((r * cam.width + c) * 3)];
      CHECK(total == doctest::Approx(col).epsilon(1e-9));
    }
    // d(coverage)/de summed over the image.
    backward(sum(slice_last(rgb, 0, 1)));
    const auto g = mesh.positions.grad();
    CHECK(g[3] + g[6] == doctest::Approx(cam.height * 0.5 * cam.width / (3.0 * tan_half)).epsilon(1e-9));
    CHECK(std::abs(g[0]) + std::abs(g[9]) < 1e-12);
  }
}

TEST_CASE("antialiasing leaves interior edges and flat images alone") {
  const auto cam = orbit_camera(40, 20, 3.0, 50, 24, 24);
  Shading sh;
  const auto grid = build_grid(12, 1.0);
  std::vector<double> sdf, colors;
  for (const auto& p : grid.lattice) {
    sdf.push_back(length(p) - 0.6);
    for (int c = 0; c < 3; ++c) colors.push_back(0.3 + 0.2 * c);
  }
  GridField<double> field;
  field.sdf = Td::from_vector({static_cast<std::int64_t>(sdf.size())}, sdf);
  field.colors = Td::from_vector({static_cast<std::int64_t>(sdf.size()), 3}, colors);
  const auto sphere = march_tets(grid, field);
  const auto frags = rasterize(sphere, cam);
  const auto base = shade_fragments(frags, sphere, cam, sh).rgb;
  const auto aa = antialias(base, frags, sphere, cam).to_vector();
  const auto b = base.to_vector();
  // Pixels away from the silhouette are untouched.
  int changed = 0;
  for (int r = 1; r + 1 < cam.height; ++r)
    for (int c = 1; c + 1 < cam.width; ++c) {
      const auto i = static_cast<std::size_t>(r * cam.width + c);
      bool border = false;
      for (const auto j : {i - 1, i + 1, i - static_cast<std::size_t>(cam.width), i + static_cast<std::size_t>(cam.width)})
        border |= (frags.pixels[j].face < 0) != (frags.pixels[i].face < 0);
      if (border) continue;
      if (frags.pixels[i].face >= 0) CHECK(aa[i * 3] == b[i * 3]);
    }
  for (std::size_t i = 0; i < aa.size(); ++i) changed += aa[i] != b[i];
  CHECK(changed > 0);
}

TEST_CASE("render_stage2 of the untrained sphere") {
  TriplaneConfig tcfg;
  tcfg.channels = 4;
  tcfg.resolution = 8;
  tcfg.blocks = 1;
  tcfg.embed_dim = 16;
  TriplaneGenerator<float> gen(tcfg, 1);
  ImplicitHeads<float> heads(HeadConfig{}, 4, 2);
  const auto tp = gen.generate(embed("a green cylinder under a halo", EmbeddingConfig{16, 16, 0}));
  const auto grid = build_grid(32);
  const auto cam = orbit_camera(-50, 25, 3.0, 35, 64, 64);
  Stage2Options opt;
  const auto out = render_stage2(tp, heads, grid, cam, opt);
  REQUIRE(out.status == ExtractStatus::ok);
  const auto basis = camera_basis(cam);
  const auto rays = make_rays(cam);
  const double radius = std::asin(0.5 / 3.0);
  const auto op = out.image.opacity.to_vector();
  int inside = 0, outside = 0;
  for (std::size_t i = 0; i < op.size(); ++i) {
    const double angle = std::acos(std::clamp(dot(rays.directions[i], basis.forward), -1.0, 1.0));
    if (angle < 0.97 * radius) {
      CHECK(op[i] == 1.0f);
      ++inside;
    } else if (angle > 1.03 * radius) {
      CHECK(op[i] == 0.0f);
      ++outside;
    }
  }
  CHECK(inside > 300);
  CHECK(outside > 1000);

  const auto again = render_stage2(tp, heads, grid, cam, opt);
  CHECK(again.image.rgb.to_vector() == out.image.rgb.to_vector());

  // Default export-scale grid and the large render size.
  const auto start = std::chrono::steady_clock::now();
  const auto big = render_stage2(tp, heads, build_grid(48), orbit_camera(0, 30, 3.0, 40, 512, 512), opt);
  CHECK(big.status == ExtractStatus::ok);
  CHECK(big.image.rgb.numel() == 512 * 512 * 3);
  MESSAGE("512x512 stage-2 render: " << std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()
                                     << " s");

  // Nothing to extract: background everywhere.
  opt.shading.background = {0.25, 0.5, 0.75};
  const auto empty = render_stage2(tp, heads, build_grid(4, 0.2), cam, opt);
  CHECK(empty.status == ExtractStatus::empty);
  CHECK(!empty.warning.empty());
  const auto rgb = empty.image.rgb.to_vector();
  for (std::size_t i = 0; i < rgb.size(); i += 3) CHECK(rgb[i + 2] == 0.75f);
}
