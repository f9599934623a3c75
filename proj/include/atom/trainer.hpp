#pragma once

// Two-stage amortized training: stage 1 renders the field volumetrically,
// stage 2 extracts a mesh and rasterizes it. Every step samples a prompt batch
// (uniform, with replacement over the seen prompts), one camera per prompt,
// asks the guidance for pixel gradients and applies one Adam update.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "atom/camera.hpp"
#include "atom/dataset.hpp"
#include "atom/dmtet.hpp"
#include "atom/guidance.hpp"
#include "atom/model.hpp"

namespace atom {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StageConfig {
  int iterations = 0;
  int resolution = 64;  // square renders
  int samples = 32;     // per ray, stage 1 only
  double lr = 4e-4;
  int batch = 16;
  double fov_lo = 40.0;
  double fov_hi = 70.0;
  double noise_lo = 0.2;  // forwarded to the guidance
  double noise_hi = 0.98;
};

struct CameraRange {
  double distance = 3.0;
  double azimuth_lo = 0.0;
  double azimuth_hi = 360.0;
  double elevation_lo = -10.0;
  double elevation_hi = 60.0;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
};

struct TrainConfig {
  ModelConfig model;
  std::vector<std::string> seen;
  std::vector<std::string> unseen;
  StageConfig stage1{3000, 64, 32, 4e-4, 16, 40.0, 70.0, 0.2, 0.98};
  StageConfig stage2{1500, 128, 0, 2e-4, 16, 30.0, 40.0, 0.02, 0.5};
  int grid_resolution = 48;  // DMTet lattice cells per axis
  CameraRange cameras;
  AdamConfig adam;
  std::uint64_t seed = 0;
  double diffuse_fraction = 0.5;  // share of samples shaded with albedo
  // Dataset profiles used for camera snapping in oracle mode.
  std::string stage1_profile = "stage1";
  std::string stage2_profile = "stage2";

  const StageConfig& stage(int s) const { return s == 1 ? stage1 : stage2; }
  StageConfig& stage(int s) { return s == 1 ? stage1 : stage2; }
  // Throws ConfigError.
  void validate() const;
};

// Strict JSON mapping: unknown keys throw ConfigError naming the key path.
nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);
// FNV-1a of the compact JSON dump.
std::uint64_t config_hash(const TrainConfig& cfg);

// Rejects keys of `j` outside `allowed`; `where` prefixes the message.
void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where);

struct CameraSample {
  Camera camera;
  double azimuth = 0.0;
  double elevation = 0.0;
};

// Eye on the sphere of radius cfg.cameras.distance looking at the origin.
CameraSample sample_camera(const TrainConfig& cfg, int stage, std::mt19937_64& rng);

// Per-step generator; depends only on (seed, stage, step).
std::mt19937_64 step_rng(std::uint64_t seed, int stage, std::int64_t step);

struct SampleDraw {
  int prompt = 0;  // index into cfg.seen
  CameraSample view;
  ShadingMode mode = ShadingMode::diffuse;
  std::uint64_t jitter_seed = 0;
};

// Draw order inside one step: prompt, camera, shading, jitter seed, per sample.
std::vector<SampleDraw> draw_batch(const TrainConfig& cfg, int stage, std::mt19937_64& rng);

class Adam {
 public:
  Adam() = default;
  Adam(ParamList<float> params, AdamConfig config);

  // Applies one update from the accumulated gradients and clears them.
  void step(double lr);
  void zero_grad();
  std::int64_t steps() const { return t_; }
  const ParamList<float>& params() const { return params_; }

  // Moment buffers by parameter name, for checkpoints.
  std::map<std::string, std::vector<float>>& first() { return m_; }
  std::map<std::string, std::vector<float>>& second() { return v_; }
  const std::map<std::string, std::vector<float>>& first() const { return m_; }
  const std::map<std::string, std::vector<float>>& second() const { return v_; }
  void set_steps(std::int64_t t) { t_ = t; }

 private:
  ParamList<float> params_;
  AdamConfig config_;
  std::map<std::string, std::vector<float>> m_, v_;
  std::int64_t t_ = 0;
};

// Scalar whose gradient with respect to rgb is exactly scale * grad.
template <typename T>
Tensor<T> surrogate_loss(const Tensor<T>& rgb, std::span<const float> grad, double scale);

struct StepReport {
  int stage = 1;
  std::int64_t step = 0;  // index of this step within its stage
  double loss = 0.0;      // mean guidance loss over the batch when reported
  double lr = 0.0;
  bool skipped = false;
  std::string reason;
  int empty_samples = 0;
};

class Trainer {
 public:
  // `dataset` enables camera snapping to bucket reference views and target
  // view keys for the photometric oracle.
  Trainer(TrainConfig cfg, Guidance& guidance, const Dataset* dataset = nullptr);

  // Resets Adam to the parameter set of `stage` and the step counter to 0.
  // Entering stage 2 keeps the weights of stage 1.
  void begin_stage(int stage);
  StepReport step();
  // Runs until the stage has cfg.stage(s).iterations steps. `log` sees every step.
  void run(const std::function<void(const StepReport&)>& log = {});

  int stage() const { return stage_; }
  std::int64_t step_index() const { return step_; }
  double lr_scale() const { return lr_scale_; }
  std::uint64_t skipped_steps() const { return skipped_; }
  std::uint64_t empty_samples() const { return empty_; }
  const TrainConfig& config() const { return cfg_; }
  Model<float>& model() { return model_; }
  const Model<float>& model() const { return model_; }
  const TetGrid& grid() const { return grid_; }
  // Every stage-1 ray rendered from now on is recorded here; nullptr stops.
  void set_audit(CompositeAudit* audit) { audit_ = audit; }

  void save(const std::filesystem::path& path) const;
  // Restores weights, optimizer moments, stage and counters. The stored
  // config must hash to the same value as this trainer's.
  void load(const std::filesystem::path& path);

 private:
  StepReport step_impl();
  int profile_for(int stage) const;

  TrainConfig cfg_;
  Guidance& guidance_;
  const Dataset* dataset_;
  Model<float> model_;
  TetGrid grid_;
  Adam adam_;
  int stage_ = 1;
  std::int64_t step_ = 0;
  double lr_scale_ = 1.0;
  int consecutive_skips_ = 0;
  std::uint64_t skipped_ = 0;
  std::uint64_t empty_ = 0;
  CompositeAudit* audit_ = nullptr;
};

// Checkpoint file: "ATOMCKPT", u32 version, u32 JSON length + UTF-8 JSON,
// u32 buffer count, then per buffer u32 name length, name, u64 value count
// and little-endian f32 values.
struct CheckpointData {
  nlohmann::json meta;
  std::map<std::string, std::vector<float>> buffers;
};
void write_checkpoint(const CheckpointData& data, const std::filesystem::path& path);
CheckpointData read_checkpoint(const std::filesystem::path& path);

// Weights-only view of a checkpoint.
Model<float> load_model(const std::filesystem::path& path, TrainConfig* cfg = nullptr);

struct InferResult {
  TriMesh<float> mesh;
  double elapsed_ms = 0.0;
};

// embed -> triplane -> extract, without building a graph.
InferResult infer(const Model<float>& model, const std::string& prompt, const TetGrid& grid);

// Peak 1.0 PSNR of two images in [0, 1].
double psnr(std::span<const float> a, std::span<const float> b);

enum class Renderer { volumetric, mesh };

struct EvalOptions {
  Renderer renderer = Renderer::mesh;
  int profile = 0;
  int samples = 32;          // volumetric only
  int grid_resolution = 48;  // mesh only
  ShadingMode mode = ShadingMode::diffuse;
  std::vector<int> buckets;  // empty = all
};

// Image of `prompt` under a dataset camera, no graph.
std::vector<float> render_view(const Model<float>& model, const std::string& prompt, const Camera& cam,
                               const EvalOptions& options, const TetGrid* grid = nullptr);

// Mean PSNR over the chosen buckets of one prompt.
double evaluate_prompt(const Model<float>& model, const Dataset& dataset, const DatasetTargets& targets,
                       int prompt_index, const EvalOptions& options);

}  // namespace atom
