#pragma once

// Procedural target views for the compositional grid. Each prompt is a
// superquadric body plus one accessory primitive; its views are stored as
// G-buffers (coverage, normal, albedo) so a target image can be produced for
// either shading mode.
//
// Directory layout: manifest.json plus one .gbuf file per (prompt, bucket,
// profile). .gbuf: "ATOMGBUF", u32 version, u32 width, u32 height, then per
// pixel 7 little-endian f32 (mask, nx, ny, nz, r, g, b).

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "atom/camera.hpp"
#include "atom/corpus.hpp"
#include "atom/guidance.hpp"
#include "atom/neus.hpp"

namespace atom {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Signed distance (approximate inside the superquadric) to the prompt's
// scene; `albedo` receives the color of the closest part.
double scene_sdf(const PromptEntry& entry, const Vec3& p, std::array<float, 3>* albedo = nullptr);

struct GBuffer {
  int width = 0;
  int height = 0;
  std::vector<float> mask;    // 1 where the pixel-center ray hits
  std::vector<float> normal;  // [H * W * 3]
  std::vector<float> albedo;  // [H * W * 3]
};

GBuffer render_gbuffer(const PromptEntry& entry, const Camera& cam);
void write_gbuffer(const GBuffer& g, const std::filesystem::path& path);
GBuffer read_gbuffer(const std::filesystem::path& path);

// Shading used for training renders and targets alike: a light from the
// camera side tilted upward, gray background.
Shading view_shading(ShadingMode mode, const Camera& cam);
// Lambert image [H * W * 3] of a G-buffer; matches shade_lambert.
std::vector<float> shade_gbuffer(const GBuffer& g, const Shading& shading);

// Four azimuth sectors centered on 0, 90, 180 and 270 degrees times three
// elevation bands (below 10, below 35, up to 60), plus one overhead bucket
// above 60 degrees.
inline constexpr int kBucketCount = 13;
int bucket_of(double azimuth_deg, double elevation_deg);

struct ViewBucket {
  int id = 0;
  double azimuth = 0.0;    // reference camera
  double elevation = 0.0;
  std::string direction;   // "front", "side", "back" or "overhead"
};

struct ViewProfile {
  std::string name;
  double fov_y_deg = 50.0;
  int width = 64;
  int height = 64;
};

struct DatasetSpec {
  int rows = 4;
  int cols = 4;
  std::uint64_t seed = 0;  // jitters reference cameras inside their buckets; 0 = centers
  double distance = 3.0;
  std::vector<ViewProfile> profiles{{"stage1", 55.0, 64, 64}, {"stage2", 35.0, 128, 128}};
};

std::vector<ViewBucket> make_buckets(std::uint64_t seed);

// Renders and writes every view. Creates `dir` when needed.
void build_dataset(const DatasetSpec& spec, const std::filesystem::path& dir);

class Dataset {
 public:
  // Throws DatasetError naming the missing path or the malformed entry.
  static Dataset load(const std::filesystem::path& dir);

  const DatasetSpec& spec() const { return spec_; }
  const CompositionalGrid& grid() const { return grid_; }
  const std::vector<ViewBucket>& buckets() const { return buckets_; }
  const std::filesystem::path& dir() const { return dir_; }

  int profile_index(const std::string& name) const;  // throws DatasetError
  int prompt_index(const std::string& prompt) const;  // -1 when absent
  Camera camera(int bucket, int profile) const;
  bool has_view(int prompt, int bucket, int profile) const;
  // Loaded on first use and cached.
  const GBuffer& gbuffer(int prompt, int bucket, int profile) const;

 private:
  DatasetSpec spec_;
  CompositionalGrid grid_;
  std::vector<ViewBucket> buckets_;
  std::filesystem::path dir_;
  std::map<std::array<int, 3>, std::string> files_;
  mutable std::map<std::array<int, 3>, std::shared_ptr<GBuffer>> cache_;
  std::unique_ptr<std::mutex> mutex_ = std::make_unique<std::mutex>();
};

struct CoverageReport {
  std::size_t views = 0;
  std::vector<std::string> missing;  // "prompt / profile / direction"
  bool complete() const { return missing.empty(); }
};

// Every prompt needs at least one view per direction and profile.
CoverageReport audit_coverage(const Dataset& dataset);

// Target images for the photometric oracle. The view key packs
// (bucket, profile, shading mode); see view_key().
class DatasetTargets : public TargetViews {
 public:
  explicit DatasetTargets(const Dataset& dataset) : dataset_(dataset) {}
  static int view_key(int bucket, int profile, ShadingMode mode) {
    return (bucket * 16 + profile) * 2 + (mode == ShadingMode::diffuse ? 1 : 0);
  }
  const std::vector<float>* find(const std::string& prompt, int view, int width, int height) const override;
  // Image for a prompt index directly.
  const std::vector<float>& image(int prompt, int bucket, int profile, ShadingMode mode) const;

 private:
  const Dataset& dataset_;
  mutable std::map<std::array<int, 4>, std::vector<float>> cache_;
  mutable std::mutex mutex_;
};

}  // namespace atom
