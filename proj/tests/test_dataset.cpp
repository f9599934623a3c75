#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <unistd.h>

#include <fmt/format.h>

#include "atom/dataset.hpp"
#include "atom/ops.hpp"

using namespace atom;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / fmt::format("atom_test_dataset_{}_{}", name, ::getpid());
  std::filesystem::remove_all(dir);
  return dir;
}

DatasetSpec small_spec() {
  DatasetSpec s;
  s.rows = 2;
  s.cols = 2;
  s.profiles = {{"a", 55.0, 12, 12}, {"b", 35.0, 16, 8}};
  return s;
}

// Dense fixed-step march; slow but independent of the sphere tracer.
bool brute_hit(const PromptEntry& e, const Vec3& o, const Vec3& d) {
  double t0 = 0, t1 = 0;
  if (!ray_box(o, d, 1.0, t0, t1)) return false;
  for (double t = t0; t <= t1; t += 5e-4)
    if (scene_sdf(e, o + d * t) < 0) return true;
  return false;
}

}  // namespace

TEST_CASE("grid sizes") {
  const auto g8 = make_compositional_grid(8, 8);
  CHECK(g8.seen().size() == 56);
  CHECK(g8.unseen().size() == 8);
  const auto g4 = make_compositional_grid(4, 4);
  CHECK(g4.seen().size() == 12);
  CHECK(g4.unseen().size() == 4);
}

TEST_CASE("bucket_of") {
  CHECK(bucket_of(0, 0) == 0);
  CHECK(bucket_of(0, 20) == 1);
  CHECK(bucket_of(0, 50) == 2);
  CHECK(bucket_of(44.9, 0) == 0);
  CHECK(bucket_of(45, 0) == 3);
  CHECK(bucket_of(90, 34.9) == 4);
  CHECK(bucket_of(180, 35) == 8);
  CHECK(bucket_of(270, -10) == 9);
  CHECK(bucket_of(-30, 0) == 0);
  CHECK(bucket_of(314.9, 0) == 9);
  CHECK(bucket_of(315, 0) == 0);
  CHECK(bucket_of(123, 60.1) == 12);
  CHECK(bucket_of(123, 60.0) == 5);

  for (std::uint64_t seed : {0ull, 7ull}) {
    const auto buckets = make_buckets(seed);
    REQUIRE(buckets.size() == static_cast<std::size_t>(kBucketCount));
    for (const auto& b : buckets) CHECK(bucket_of(b.azimuth, b.elevation) == b.id);
  }
  const auto b0 = make_buckets(0);
  CHECK(b0[0].direction == "front");
  CHECK(b0[3].direction == "side");
  CHECK(b0[6].direction == "back");
  CHECK(b0[9].direction == "side");
  CHECK(b0[12].direction == "overhead");
  CHECK(b0[12].elevation == 75.0);
}

TEST_CASE("scene_sdf parts") {
  const auto grid = make_compositional_grid(4, 4);
  const auto& sphere_hat = grid.prompts[0];  // red sphere wearing a hat
  std::array<float, 3> albedo{};
  CHECK(scene_sdf(sphere_hat, {0.6, 0, 0}, &albedo) == doctest::Approx(0.15).epsilon(1e-9));
  CHECK(albedo == body_catalog()[0].albedo);
  CHECK(scene_sdf(sphere_hat, {0, 0, 0}) == doctest::Approx(-0.45));
  // Inside the hat crown.
  CHECK(scene_sdf(sphere_hat, {0, 0, 0.6}, &albedo) < 0);
  CHECK(albedo == accessory_catalog()[0].albedo);
  // Cube body: corner direction extends past the inscribed sphere.
  const auto& cube = grid.prompts[4];
  CHECK(scene_sdf(cube, {0.35, 0.35, 0.0}) < 0);
  CHECK(scene_sdf(cube, {0.45, 0.0, 0.0}) > 0);
}

TEST_CASE("render_gbuffer matches a dense march") {
  const auto grid = make_compositional_grid(4, 4);
  for (int idx : {1, 6, 11}) {
    const auto& e = grid.prompts[static_cast<std::size_t>(idx)];
    const auto cam = orbit_camera(30, 20, 3, 50, 20, 20);
    const auto g = render_gbuffer(e, cam);
    const auto rays = make_rays(cam);
    int mismatches = 0, hits = 0;
    for (std::size_t i = 0; i < g.mask.size(); ++i) {
      const bool hit = brute_hit(e, rays.origins[i], rays.directions[i]);
      mismatches += hit != (g.mask[i] > 0.5f);
      hits += hit;
      if (g.mask[i] > 0.5f) {
        const Vec3 n{g.normal[i * 3], g.normal[i * 3 + 1], g.normal[i * 3 + 2]};
        CHECK(length(n) == doctest::Approx(1.0).epsilon(1e-5));
        CHECK(dot(n, rays.directions[i]) < 0.05);
      }
    }
    CHECK(hits > 20);
    CHECK(mismatches <= 2);
  }
}

TEST_CASE("sphere silhouette radius") {
  // Body 0 seen from below the hat: the silhouette is a disc of angular radius asin(0.45 / 3).
  const auto grid = make_compositional_grid(4, 4);
  const auto cam = orbit_camera(0, -20, 3, 40, 64, 64);
  const auto g = render_gbuffer(grid.prompts[0], cam);
  const auto rays = make_rays(cam);
  const double half = std::asin(0.45 / 3.0);
  for (std::size_t i = 0; i < g.mask.size(); ++i) {
    const double ang = std::acos(std::clamp(dot(rays.directions[i], normalize(cam.look_at - cam.eye)), -1.0, 1.0));
    // The hat sits above the body; only check the lower half of the frame.
    if (i / 64 < 32) continue;
    if (ang < 0.97 * half) CHECK(g.mask[i] == 1.0f);
    if (ang > 1.03 * half) CHECK(g.mask[i] == 0.0f);
  }
}

TEST_CASE("gbuffer files round-trip and reject corruption") {
  const auto dir = scratch_dir("io");
  std::filesystem::create_directories(dir);
  const auto grid = make_compositional_grid(4, 4);
  const auto g = render_gbuffer(grid.prompts[2], orbit_camera(10, 10, 3, 50, 9, 7));
  write_gbuffer(g, dir / "x.gbuf");
  const auto r = read_gbuffer(dir / "x.gbuf");
  CHECK(r.width == 9);
  CHECK(r.height == 7);
  CHECK(r.mask == g.mask);
  CHECK(r.normal == g.normal);
  CHECK(r.albedo == g.albedo);
  CHECK(std::filesystem::file_size(dir / "x.gbuf") == 8 + 12 + 9 * 7 * 7 * 4);

  std::filesystem::resize_file(dir / "x.gbuf", 100);
  CHECK_THROWS_AS(read_gbuffer(dir / "x.gbuf"), DatasetError);
  CHECK_THROWS_WITH_AS(read_gbuffer(dir / "nope.gbuf"), doctest::Contains("nope.gbuf"), DatasetError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("shade_gbuffer matches shade_lambert") {
  const auto grid = make_compositional_grid(4, 4);
  const auto cam = orbit_camera(60, 30, 3, 50, 16, 16);
  const auto g = render_gbuffer(grid.prompts[5], cam);
  const auto n = g.mask.size();
  std::vector<double> alb(n * 3), nrm(n * 3);
  for (std::size_t i = 0; i < n * 3; ++i) {
    alb[i] = g.albedo[i];
    nrm[i] = g.normal[i];
  }
  for (auto mode : {ShadingMode::textureless, ShadingMode::diffuse}) {
    const auto s = view_shading(mode, cam);
    CHECK(length(s.light) == doctest::Approx(1.0));
    const auto img = shade_gbuffer(g, s);
    const auto ref = shade_lambert(Tensor<double>::from_vector({static_cast<std::int64_t>(n), 3}, alb),
                                   Tensor<double>::from_vector({static_cast<std::int64_t>(n), 3}, nrm), s)
                         .to_vector();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t a = 0; a < 3; ++a) {
        const double want = g.mask[i] > 0.5f ? ref[i * 3 + a] : s.background[a];
        CHECK(img[i * 3 + a] == doctest::Approx(want).epsilon(1e-6));
      }
  }
}

TEST_CASE("build, load, audit and targets") {
  const auto dir = scratch_dir("build");
  const auto spec = small_spec();
  build_dataset(spec, dir);
  const auto d = Dataset::load(dir);
  CHECK(d.grid().prompts.size() == 4);
  CHECK(d.buckets().size() == static_cast<std::size_t>(kBucketCount));
  CHECK(d.profile_index("b") == 1);
  CHECK_THROWS_AS(d.profile_index("c"), DatasetError);
  CHECK(d.prompt_index(d.grid().prompts[3].prompt) == 3);
  CHECK(d.prompt_index("a teapot") == -1);

  const auto report = audit_coverage(d);
  CHECK(report.complete());
  CHECK(report.views == 4 * 2 * 13);

  // Stored views equal a fresh render of the bucket camera.
  const auto cam = d.camera(4, 1);
  CHECK(cam.width == 16);
  CHECK(cam.height == 8);
  const auto fresh = render_gbuffer(d.grid().prompts[2], cam);
  CHECK(d.gbuffer(2, 4, 1).mask == fresh.mask);
  CHECK(d.gbuffer(2, 4, 1).albedo == fresh.albedo);

  DatasetTargets targets(d);
  const auto key = DatasetTargets::view_key(4, 1, ShadingMode::diffuse);
  const auto* t = targets.find(d.grid().prompts[2].prompt, key, 16, 8);
  REQUIRE(t != nullptr);
  CHECK(*t == shade_gbuffer(fresh, view_shading(ShadingMode::diffuse, cam)));
  CHECK(targets.find(d.grid().prompts[2].prompt, key, 12, 12) == nullptr);
  CHECK(targets.find("a teapot", key, 16, 8) == nullptr);
  CHECK(targets.find(d.grid().prompts[2].prompt, DatasetTargets::view_key(13, 0, ShadingMode::diffuse), 12, 12) == nullptr);

  // Photometric guidance through the dataset targets.
  PhotometricGuidance oracle(targets);
  GuidanceRequest req;
  req.prompt = d.grid().prompts[2].prompt;
  req.width = 16;
  req.height = 8;
  req.pixels = *t;
  req.target_prompt = req.prompt;
  req.target_view = key;
  const auto resp = oracle.guide(req);
  for (float v : resp.grad) CHECK(v == 0.0f);

  // A removed view file breaks the audit and names the file on access.
  std::filesystem::remove(dir / "p01_b12_a.gbuf");
  const auto d2 = Dataset::load(dir);
  const auto broken = audit_coverage(d2);
  CHECK_FALSE(broken.complete());
  REQUIRE(broken.missing.size() == 1);
  CHECK(broken.missing[0].find("overhead") != std::string::npos);
  CHECK_THROWS_WITH_AS(d2.gbuffer(1, 12, 0), doctest::Contains("p01_b12_a.gbuf"), DatasetError);

  std::filesystem::remove(dir / "manifest.json");
  CHECK_THROWS_WITH_AS(Dataset::load(dir), doctest::Contains("manifest.json"), DatasetError);
  std::filesystem::remove_all(dir);
}
