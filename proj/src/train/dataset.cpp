#include "atom/dataset.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <random>

#include "atom/binary_io.hpp"
#include "atom/embedding.hpp"
#include "atom/hash.hpp"

namespace atom {

namespace {

using nlohmann::json;

constexpr char kGbufMagic[8] = {'A', 'T', 'O', 'M', 'G', 'B', 'U', 'F'};
constexpr std::uint32_t kGbufVersion = 1;
constexpr int kManifestVersion = 1;

double len2(double x, double y) { return std::sqrt(x * x + y * y); }

double sd_box(const Vec3& p, const Vec3& half) {
  const Vec3 q{std::abs(p[0]) - half[0], std::abs(p[1]) - half[1], std::abs(p[2]) - half[2]};
  const Vec3 outside{std::max(q[0], 0.0), std::max(q[1], 0.0), std::max(q[2], 0.0)};
  return length(outside) + std::min(std::max(q[0], std::max(q[1], q[2])), 0.0);
}

// Axis along z.
double sd_cylinder(const Vec3& p, double radius, double half_height) {
  const double dx = len2(p[0], p[1]) - radius, dz = std::abs(p[2]) - half_height;
  return std::min(std::max(dx, dz), 0.0) + len2(std::max(dx, 0.0), std::max(dz, 0.0));
}

// Ring in the xy plane.
double sd_torus(const Vec3& p, double major, double minor) { return len2(len2(p[0], p[1]) - major, p[2]) - minor; }

// Cone along z over [-h, h], base radius r at -h, tip at +h.
double sd_cone(const Vec3& p, double h, double r) {
  const double qx = len2(p[0], p[1]), qy = p[2];
  const double k1x = 0.0, k1y = h, k2x = -r, k2y = 2.0 * h;
  const double cax = qx - std::min(qx, qy < 0.0 ? r : 0.0), cay = std::abs(qy) - h;
  const double t = std::clamp(((k1x - qx) * k2x + (k1y - qy) * k2y) / (k2x * k2x + k2y * k2y), 0.0, 1.0);
  const double cbx = qx - k1x + k2x * t, cby = qy - k1y + k2y * t;
  const double s = (cbx < 0.0 && cay < 0.0) ? -1.0 : 1.0;
  return s * std::sqrt(std::min(cax * cax + cay * cay, cbx * cbx + cby * cby));
}

// Radial distance scaled by the smallest radius; exact on spheres.
double sd_superquadric(const Vec3& p, const BodySpec& b) {
  const double ax = std::abs(p[0]) / b.radii[0], ay = std::abs(p[1]) / b.radii[1], az = std::abs(p[2]) / b.radii[2];
  const double r = std::sqrt(ax * ax + ay * ay + az * az);
  if (r < 1e-12) return -std::min({b.radii[0], b.radii[1], b.radii[2]});
  // Evaluate on the unit-norm direction so the powers stay in range.
  const double ux = ax / r, uy = ay / r, uz = az / r;
  const double xy = std::pow(std::pow(ux, 2.0 / b.e_horizontal) + std::pow(uy, 2.0 / b.e_horizontal), b.e_horizontal / b.e_vertical);
  const double f = std::pow(xy + std::pow(uz, 2.0 / b.e_vertical), b.e_vertical / 2.0);
  return (r * f - 1.0) * std::min({b.radii[0], b.radii[1], b.radii[2]});
}

double accessory_sdf(AccessoryKind kind, const Vec3& p, double top, double bottom) {
  switch (kind) {
    case AccessoryKind::hat:
      return std::min(sd_cylinder(p - Vec3{0, 0, top + 0.02}, 0.30, 0.02), sd_cylinder(p - Vec3{0, 0, top + 0.14}, 0.17, 0.10));
    case AccessoryKind::ball:
      return length(p - Vec3{0.0, 0.62, 0.0}) - 0.18;
    case AccessoryKind::box:
      return sd_box(p - Vec3{0.0, -0.62, 0.05}, {0.15, 0.15, 0.15});
    case AccessoryKind::ring:
      return sd_torus(p, 0.66, 0.05);
    case AccessoryKind::slab:
      return sd_box(p - Vec3{0, 0, bottom - 0.08}, {0.6, 0.6, 0.06});
    case AccessoryKind::halo:
      return sd_torus(p - Vec3{0, 0, top + 0.2}, 0.25, 0.04);
    case AccessoryKind::pillar:
      return sd_cylinder(p - Vec3{-0.5, 0.5, 0.0}, 0.1, 0.6);
    case AccessoryKind::cone:
      return sd_cone(p - Vec3{0, 0, top + 0.15}, 0.15, 0.22);
  }
  return 1e9;
}

Vec3 scene_normal(const PromptEntry& e, const Vec3& p) {
  constexpr double h = 1e-5;
  Vec3 n{};
  for (std::size_t a = 0; a < 3; ++a) {
    Vec3 lo = p, hi = p;
    lo[a] -= h;
    hi[a] += h;
    n[a] = scene_sdf(e, hi) - scene_sdf(e, lo);
  }
  const double l = length(n);
  return l > 0 ? n * (1.0 / l) : Vec3{0, 0, 1};
}

std::string view_file(int prompt, int bucket, const std::string& profile) {
  return fmt::format("p{:02d}_b{:02d}_{}.gbuf", prompt, bucket, profile);
}

}  // namespace

double scene_sdf(const PromptEntry& entry, const Vec3& p, std::array<float, 3>* albedo) {
  const auto& body = body_catalog().at(static_cast<std::size_t>(entry.body));
  const auto& acc = accessory_catalog().at(static_cast<std::size_t>(entry.accessory));
  const double db = sd_superquadric(p, body);
  const double da = accessory_sdf(acc.kind, p, body.radii[2], -body.radii[2]);
  if (albedo) *albedo = db <= da ? body.albedo : acc.albedo;
  return std::min(db, da);
}

GBuffer render_gbuffer(const PromptEntry& entry, const Camera& cam) {
  const auto rays = make_rays(cam);
  GBuffer g;
  g.width = cam.width;
  g.height = cam.height;
  const auto n = static_cast<std::size_t>(cam.width) * static_cast<std::size_t>(cam.height);
  g.mask.assign(n, 0.0f);
  g.normal.assign(n * 3, 0.0f);
  g.albedo.assign(n * 3, 0.0f);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3& o = rays.origins[i];
    const Vec3& d = rays.directions[i];
    double t0 = 0, t1 = 0;
    if (!ray_box(o, d, 1.0, t0, t1)) continue;
    // Sphere tracing with a floor on the step; a sign change is refined by bisection.
    double t = t0;
    double prev_t = t, prev_f = scene_sdf(entry, o + d * t);
    if (prev_f < 0) continue;  // starts inside: the camera never does
    bool hit = false;
    while (t < t1) {
      t += std::max(0.5 * prev_f, 0.002);
      const double f = scene_sdf(entry, o + d * std::min(t, t1));
      if (f < 0) {
        double lo = prev_t, hi = std::min(t, t1);
        for (int it = 0; it < 40; ++it) {
          const double mid = 0.5 * (lo + hi);
          (scene_sdf(entry, o + d * mid) < 0 ? hi : lo) = mid;
        }
        t = hi;
        hit = true;
        break;
      }
      prev_t = t;
      prev_f = f;
    }
    if (!hit) continue;
    const Vec3 p = o + d * t;
    std::array<float, 3> albedo{};
    scene_sdf(entry, p, &albedo);
    const Vec3 nrm = scene_normal(entry, p);
    g.mask[i] = 1.0f;
    for (std::size_t a = 0; a < 3; ++a) {
      g.normal[i * 3 + a] = static_cast<float>(nrm[a]);
      g.albedo[i * 3 + a] = albedo[a];
    }
  }
  return g;
}

void write_gbuffer(const GBuffer& g, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError(fmt::format("cannot write {}", path.string()));
  out.write(kGbufMagic, sizeof kGbufMagic);
  le::put<std::uint32_t>(out, kGbufVersion);
  le::put<std::uint32_t>(out, static_cast<std::uint32_t>(g.width));
  le::put<std::uint32_t>(out, static_cast<std::uint32_t>(g.height));
  const auto n = static_cast<std::size_t>(g.width) * static_cast<std::size_t>(g.height);
  std::vector<float> px(n * 7);
  for (std::size_t i = 0; i < n; ++i) {
    px[i * 7] = g.mask[i];
    for (std::size_t a = 0; a < 3; ++a) {
      px[i * 7 + 1 + a] = g.normal[i * 3 + a];
      px[i * 7 + 4 + a] = g.albedo[i * 3 + a];
    }
  }
  le::put_floats(out, px.data(), px.size());
  if (!out) throw DatasetError(fmt::format("write failed: {}", path.string()));
}

GBuffer read_gbuffer(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError(fmt::format("missing view file {}", path.string()));
  try {
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || !std::equal(magic, magic + 8, kGbufMagic)) throw DatasetError(fmt::format("{}: not a G-buffer file", path.string()));
    if (le::get<std::uint32_t>(in) != kGbufVersion) throw DatasetError(fmt::format("{}: unsupported version", path.string()));
    GBuffer g;
    g.width = static_cast<int>(le::get<std::uint32_t>(in));
    g.height = static_cast<int>(le::get<std::uint32_t>(in));
    if (g.width <= 0 || g.height <= 0 || g.width > 16384 || g.height > 16384)
      throw DatasetError(fmt::format("{}: bad size", path.string()));
    const auto n = static_cast<std::size_t>(g.width) * static_cast<std::size_t>(g.height);
    std::vector<float> px(n * 7);
    le::get_floats(in, px.data(), px.size());
    g.mask.resize(n);
    g.normal.resize(n * 3);
    g.albedo.resize(n * 3);
    for (std::size_t i = 0; i < n; ++i) {
      g.mask[i] = px[i * 7];
      for (std::size_t a = 0; a < 3; ++a) {
        g.normal[i * 3 + a] = px[i * 7 + 1 + a];
        g.albedo[i * 3 + a] = px[i * 7 + 4 + a];
      }
    }
    return g;
  } catch (const std::runtime_error& e) {
    if (dynamic_cast<const DatasetError*>(&e)) throw;
    throw DatasetError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

Shading view_shading(ShadingMode mode, const Camera& cam) {
  Shading s;
  s.mode = mode;
  s.light = normalize(normalize(cam.eye - cam.look_at) + Vec3{0, 0, 0.5});
  s.background = {0.5, 0.5, 0.5};
  s.ambient = 0.2;
  return s;
}

std::vector<float> shade_gbuffer(const GBuffer& g, const Shading& shading) {
  const auto n = g.mask.size();
  std::vector<float> img(n * 3);
  for (std::size_t i = 0; i < n; ++i) {
    if (g.mask[i] < 0.5f) {
      for (std::size_t a = 0; a < 3; ++a) img[i * 3 + a] = static_cast<float>(shading.background[a]);
      continue;
    }
    double ndl = 0.0;
    for (std::size_t a = 0; a < 3; ++a) ndl += g.normal[i * 3 + a] * shading.light[a];
    const double factor = shading.ambient + (1.0 - shading.ambient) * std::max(ndl, 0.0);
    for (std::size_t a = 0; a < 3; ++a)
      img[i * 3 + a] = static_cast<float>(factor * (shading.mode == ShadingMode::textureless ? 1.0 : g.albedo[i * 3 + a]));
  }
  return img;
}

int bucket_of(double azimuth_deg, double elevation_deg) {
  if (elevation_deg > 60.0) return kBucketCount - 1;
  double a = std::fmod(azimuth_deg + 45.0, 360.0);
  if (a < 0) a += 360.0;
  const int sector = std::min(3, static_cast<int>(a / 90.0));
  const int band = elevation_deg < 10.0 ? 0 : (elevation_deg < 35.0 ? 1 : 2);
  return sector * 3 + band;
}

std::vector<ViewBucket> make_buckets(std::uint64_t seed) {
  std::mt19937_64 rng(mix64(seed ^ fnv1a64("view buckets")));
  std::uniform_real_distribution<double> jaz(-10.0, 10.0), jel(-4.0, 4.0);
  constexpr double band_center[3] = {0.0, 22.5, 47.5};
  std::vector<ViewBucket> out;
  for (int sector = 0; sector < 4; ++sector)
    for (int band = 0; band < 3; ++band) {
      ViewBucket b;
      b.id = sector * 3 + band;
      b.azimuth = 90.0 * sector + (seed ? jaz(rng) : 0.0);
      b.elevation = band_center[band] + (seed ? jel(rng) : 0.0);
      out.push_back(b);
    }
  out.push_back({kBucketCount - 1, 0.0, 75.0 + (seed ? jel(rng) : 0.0), ""});
  for (auto& b : out) {
    const auto p = directional_prompt("x", b.azimuth, b.elevation);
    b.direction = p.substr(p.find(", ") + 2);
    b.direction = b.direction.substr(0, b.direction.find(' '));
  }
  return out;
}

void build_dataset(const DatasetSpec& spec, const std::filesystem::path& dir) {
  const auto grid = make_compositional_grid(spec.rows, spec.cols);
  if (spec.profiles.empty()) throw DatasetError("dataset needs at least one view profile");
  std::filesystem::create_directories(dir);
  const auto buckets = make_buckets(spec.seed);
  json manifest;
  manifest["version"] = kManifestVersion;
  manifest["rows"] = spec.rows;
  manifest["cols"] = spec.cols;
  manifest["seed"] = spec.seed;
  manifest["distance"] = spec.distance;
  for (const auto& p : spec.profiles)
    manifest["profiles"].push_back({{"name", p.name}, {"fov_y_deg", p.fov_y_deg}, {"width", p.width}, {"height", p.height}});
  for (const auto& b : buckets)
    manifest["buckets"].push_back({{"id", b.id}, {"azimuth", b.azimuth}, {"elevation", b.elevation}, {"direction", b.direction}});
  for (std::size_t i = 0; i < grid.prompts.size(); ++i) {
    const auto& e = grid.prompts[i];
    manifest["prompts"].push_back({{"prompt", e.prompt}, {"body", e.body}, {"accessory", e.accessory}, {"seen", e.seen}});
    for (const auto& b : buckets)
      for (std::size_t pr = 0; pr < spec.profiles.size(); ++pr) {
        const auto& prof = spec.profiles[pr];
        const auto cam = orbit_camera(b.azimuth, b.elevation, spec.distance, prof.fov_y_deg, prof.width, prof.height);
        const auto file = view_file(static_cast<int>(i), b.id, prof.name);
        write_gbuffer(render_gbuffer(e, cam), dir / file);
        manifest["views"].push_back({{"prompt", i}, {"bucket", b.id}, {"profile", pr}, {"file", file}});
      }
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw DatasetError(fmt::format("cannot write {}", (dir / "manifest.json").string()));
  out << manifest.dump(1) << '\n';
}

Dataset Dataset::load(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw DatasetError(fmt::format("missing dataset manifest {}", path.string()));
  const auto j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw DatasetError(fmt::format("{}: invalid JSON", path.string()));
  Dataset d;
  d.dir_ = dir;
  try {
    if (j.at("version").get<int>() != kManifestVersion) throw DatasetError(fmt::format("{}: unsupported version", path.string()));
    d.spec_.rows = j.at("rows").get<int>();
    d.spec_.cols = j.at("cols").get<int>();
    d.spec_.seed = j.at("seed").get<std::uint64_t>();
    d.spec_.distance = j.at("distance").get<double>();
    d.spec_.profiles.clear();
    for (const auto& p : j.at("profiles"))
      d.spec_.profiles.push_back({p.at("name").get<std::string>(), p.at("fov_y_deg").get<double>(), p.at("width").get<int>(),
                                  p.at("height").get<int>()});
    d.grid_ = make_compositional_grid(d.spec_.rows, d.spec_.cols);
    const auto& prompts = j.at("prompts");
    if (prompts.size() != d.grid_.prompts.size()) throw DatasetError(fmt::format("{}: prompt count mismatch", path.string()));
    for (std::size_t i = 0; i < prompts.size(); ++i)
      if (prompts[i].at("prompt").get<std::string>() != d.grid_.prompts[i].prompt)
        throw DatasetError(fmt::format("{}: prompt {} does not match the grid", path.string(), i));
    for (const auto& b : j.at("buckets"))
      d.buckets_.push_back({b.at("id").get<int>(), b.at("azimuth").get<double>(), b.at("elevation").get<double>(),
                            b.at("direction").get<std::string>()});
    if (d.buckets_.size() != static_cast<std::size_t>(kBucketCount))
      throw DatasetError(fmt::format("{}: expected {} buckets", path.string(), kBucketCount));
    for (const auto& v : j.at("views"))
      d.files_[{v.at("prompt").get<int>(), v.at("bucket").get<int>(), v.at("profile").get<int>()}] = v.at("file").get<std::string>();
  } catch (const json::exception& e) {
    throw DatasetError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return d;
}

int Dataset::profile_index(const std::string& name) const {
  for (std::size_t i = 0; i < spec_.profiles.size(); ++i)
    if (spec_.profiles[i].name == name) return static_cast<int>(i);
  throw DatasetError(fmt::format("dataset {} has no view profile '{}'", dir_.string(), name));
}

int Dataset::prompt_index(const std::string& prompt) const {
  for (std::size_t i = 0; i < grid_.prompts.size(); ++i)
    if (grid_.prompts[i].prompt == prompt) return static_cast<int>(i);
  return -1;
}

Camera Dataset::camera(int bucket, int profile) const {
  const auto& b = buckets_.at(static_cast<std::size_t>(bucket));
  const auto& p = spec_.profiles.at(static_cast<std::size_t>(profile));
  return orbit_camera(b.azimuth, b.elevation, spec_.distance, p.fov_y_deg, p.width, p.height);
}

bool Dataset::has_view(int prompt, int bucket, int profile) const { return files_.count({prompt, bucket, profile}) > 0; }

const GBuffer& Dataset::gbuffer(int prompt, int bucket, int profile) const {
  const std::array<int, 3> key{prompt, bucket, profile};
  std::lock_guard lock(*mutex_);
  if (auto it = cache_.find(key); it != cache_.end()) return *it->second;
  const auto f = files_.find(key);
  if (f == files_.end()) throw DatasetError(fmt::format("dataset has no view for prompt {} bucket {} profile {}", prompt, bucket, profile));
  auto g = std::make_shared<GBuffer>(read_gbuffer(dir_ / f->second));
  const auto& p = spec_.profiles.at(static_cast<std::size_t>(profile));
  if (g->width != p.width || g->height != p.height) throw DatasetError(fmt::format("{}: size does not match its profile", f->second));
  return *cache_.emplace(key, std::move(g)).first->second;
}

CoverageReport audit_coverage(const Dataset& d) {
  CoverageReport r;
  for (std::size_t i = 0; i < d.grid().prompts.size(); ++i)
    for (std::size_t pr = 0; pr < d.spec().profiles.size(); ++pr)
      for (const char* dir : {"front", "side", "back", "overhead"}) {
        bool found = false;
        for (const auto& b : d.buckets())
          if (b.direction == dir && d.has_view(static_cast<int>(i), b.id, static_cast<int>(pr)) &&
              std::filesystem::exists(d.dir() / view_file(static_cast<int>(i), b.id, d.spec().profiles[pr].name))) {
            found = true;
            ++r.views;
          }
        if (!found) r.missing.push_back(fmt::format("{} / {} / {}", d.grid().prompts[i].prompt, d.spec().profiles[pr].name, dir));
      }
  return r;
}

const std::vector<float>& DatasetTargets::image(int prompt, int bucket, int profile, ShadingMode mode) const {
  const std::array<int, 4> key{prompt, bucket, profile, mode == ShadingMode::diffuse ? 1 : 0};
  {
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  }
  const auto& g = dataset_.gbuffer(prompt, bucket, profile);
  auto img = shade_gbuffer(g, view_shading(mode, dataset_.camera(bucket, profile)));
  std::lock_guard lock(mutex_);
  return cache_.emplace(key, std::move(img)).first->second;
}

const std::vector<float>* DatasetTargets::find(const std::string& prompt, int view, int width, int height) const {
  const int p = dataset_.prompt_index(prompt);
  if (p < 0 || view < 0) return nullptr;
  const auto mode = view % 2 ? ShadingMode::diffuse : ShadingMode::textureless;
  const int profile = (view / 2) % 16, bucket = view / 32;
  if (bucket >= kBucketCount || profile >= static_cast<int>(dataset_.spec().profiles.size())) return nullptr;
  const auto& prof = dataset_.spec().profiles[static_cast<std::size_t>(profile)];
  if (prof.width != width || prof.height != height || !dataset_.has_view(p, bucket, profile)) return nullptr;
  return &image(p, bucket, profile, mode);
}

}  // namespace atom
