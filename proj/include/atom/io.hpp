#pragma once

// File formats and run configuration for the command-line tool.
//
// PLY: binary_little_endian 1.0; vertex x, y, z float and red, green, blue
// uchar (round(255 c)); face "list uchar int vertex_indices".
// PPM: P6, maxval 255, row-major RGB, round(255 v).

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "atom/dataset.hpp"
#include "atom/dmtet.hpp"
#include "atom/trainer.hpp"

namespace atom {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// round(255 v) after clamping to [0, 1].
std::uint8_t to_byte(double v);

struct PlyMesh {
  std::vector<float> positions;  // [V * 3]
  std::vector<std::uint8_t> colors;  // [V * 3]
  std::vector<std::array<std::int32_t, 3>> faces;
};

void write_ply(const PlyMesh& mesh, const std::filesystem::path& path);
void write_ply(const TriMesh<float>& mesh, const std::filesystem::path& path);
// Reads what write_ply produces (binary little-endian, triangles only).
PlyMesh read_ply(const std::filesystem::path& path);

struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // [H * W * 3]
};

// rgb [H * W * 3] with values in [0, 1].
void write_ppm(std::span<const float> rgb, int width, int height, const std::filesystem::path& path);
Image read_ppm(const std::filesystem::path& path);

struct ExportOptions {
  int grid_resolution = 48;
};

struct DatasetOptions {
  int rows = 4;
  int cols = 4;
  std::uint64_t seed = 0;
  double stage1_fov = 55.0;
  double stage2_fov = 35.0;
  int eval_resolution = 128;  // "eval" profile, stage-2 FOV
};

// Training config plus paths and run-level switches, flattened into one
// JSON object.
struct RunConfig {
  TrainConfig train;
  std::filesystem::path dataset_dir = "data";
  std::filesystem::path checkpoint_dir = "checkpoints";
  std::filesystem::path output_dir = "out";
  std::string guidance = "oracle";  // oracle | [tcp:]host:port | stdio:command
  int guidance_timeout_ms = 30000;
  int checkpoint_every = 100;  // steps; 0 disables periodic checkpoints
  int log_every = 10;
  DatasetOptions dataset;
  ExportOptions export_options;

  // Profiles named after the stage profiles at the stage resolutions, plus
  // "eval"; distance from train.cameras.
  DatasetSpec dataset_spec() const;
};

// Unknown keys throw ConfigError naming the key. Empty seen/unseen lists are
// filled from the compositional grid of the dataset section.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);

}  // namespace atom
