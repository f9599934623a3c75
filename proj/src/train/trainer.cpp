#include "atom/trainer.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>

#include "atom/binary_io.hpp"
#include "atom/hash.hpp"
#include "atom/ops.hpp"
#include "atom/raster.hpp"

namespace atom {

namespace {

using nlohmann::json;

constexpr char kCkptMagic[8] = {'A', 'T', 'O', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCkptVersion = 1;

template <typename V>
void read_key(const json& j, const char* key, V& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception&) {
    throw ConfigError(fmt::format("config: {}{} has the wrong type", where, key));
  }
}

json stage_json(const StageConfig& s) {
  return {{"iterations", s.iterations}, {"resolution", s.resolution}, {"samples", s.samples},
          {"lr", s.lr},                 {"batch", s.batch},           {"fov_lo", s.fov_lo},
          {"fov_hi", s.fov_hi},         {"noise_lo", s.noise_lo},     {"noise_hi", s.noise_hi}};
}

void stage_from(const json& j, StageConfig& s, const std::string& where) {
  reject_unknown_keys(j, {"iterations", "resolution", "samples", "lr", "batch", "fov_lo", "fov_hi", "noise_lo", "noise_hi"},
                      where);
  read_key(j, "iterations", s.iterations, where);
  read_key(j, "resolution", s.resolution, where);
  read_key(j, "samples", s.samples, where);
  read_key(j, "lr", s.lr, where);
  read_key(j, "batch", s.batch, where);
  read_key(j, "fov_lo", s.fov_lo, where);
  read_key(j, "fov_hi", s.fov_hi, where);
  read_key(j, "noise_lo", s.noise_lo, where);
  read_key(j, "noise_hi", s.noise_hi, where);
}

const json& object_at(const json& j, const char* key, const std::string& where) {
  const auto& v = j.at(key);
  if (!v.is_object()) throw ConfigError(fmt::format("config: {}{} must be an object", where, key));
  return v;
}

std::string hex64(std::uint64_t v) { return fmt::format("{:016x}", v); }

bool all_finite(std::span<const float> v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

}  // namespace

void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(fmt::format("config: {} must be an object", where.empty() ? "top level" : where));
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw ConfigError(fmt::format("config: unknown key '{}{}'", where, key));
  }
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
  if (seen.empty()) fail("seen prompt list is empty");
  const std::set<std::string> s(seen.begin(), seen.end());
  for (const auto& u : unseen)
    if (s.count(u)) fail(fmt::format("prompt '{}' is both seen and unseen", u));
  for (int st : {1, 2}) {
    const auto& c = stage(st);
    if (c.iterations < 0) fail(fmt::format("stage{}.iterations < 0", st));
    if (c.resolution < 1) fail(fmt::format("stage{}.resolution < 1", st));
    if (c.batch < 1) fail(fmt::format("stage{}.batch < 1", st));
    if (!(c.lr > 0)) fail(fmt::format("stage{}.lr must be positive", st));
    if (!(c.fov_lo > 0 && c.fov_lo <= c.fov_hi && c.fov_hi < 180)) fail(fmt::format("stage{} FOV range", st));
    if (!(c.noise_lo >= 0 && c.noise_lo < c.noise_hi && c.noise_hi <= 1)) fail(fmt::format("stage{} noise range", st));
  }
  if (stage1.samples < 2) fail("stage1.samples < 2");
  if (stage1.resolution > stage2.resolution) fail("stage1.resolution exceeds stage2.resolution");
  if (grid_resolution < 1) fail("grid_resolution < 1");
  if (!(cameras.distance > std::sqrt(3.0) * model.heads.half_extent)) fail("camera distance inside the object bound");
  if (!(cameras.azimuth_lo <= cameras.azimuth_hi)) fail("azimuth range");
  if (!(cameras.elevation_lo <= cameras.elevation_hi && cameras.elevation_lo >= -89 && cameras.elevation_hi <= 89))
    fail("elevation range");
  if (!(adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.eps > 0)) fail("adam");
  if (!(diffuse_fraction >= 0 && diffuse_fraction <= 1)) fail("diffuse_fraction");
}

json to_json(const TrainConfig& c) {
  const auto& m = c.model;
  json j;
  j["model"] = {
      {"embedding", {{"max_tokens", m.embedding.max_tokens}, {"dim", m.embedding.dim}, {"seed", m.embedding.seed}}},
      {"triplane",
       {{"channels", m.triplane.channels},
        {"resolution", m.triplane.resolution},
        {"blocks", m.triplane.blocks},
        {"heads", m.triplane.heads},
        {"aware_kernel", m.triplane.aware_kernel},
        {"outer_residual", m.triplane.outer_residual}}},
      {"heads",
       {{"hidden", m.heads.hidden},
        {"octaves", m.heads.octaves},
        {"half_extent", m.heads.half_extent},
        {"sphere_radius", m.heads.sphere_radius}}}};
  j["seen"] = c.seen;
  j["unseen"] = c.unseen;
  j["stage1"] = stage_json(c.stage1);
  j["stage2"] = stage_json(c.stage2);
  j["grid_resolution"] = c.grid_resolution;
  j["cameras"] = {{"distance", c.cameras.distance},
                  {"azimuth_lo", c.cameras.azimuth_lo},
                  {"azimuth_hi", c.cameras.azimuth_hi},
                  {"elevation_lo", c.cameras.elevation_lo},
                  {"elevation_hi", c.cameras.elevation_hi}};
  j["adam"] = {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}};
  j["seed"] = c.seed;
  j["diffuse_fraction"] = c.diffuse_fraction;
  j["stage1_profile"] = c.stage1_profile;
  j["stage2_profile"] = c.stage2_profile;
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  reject_unknown_keys(j, {"model", "seen", "unseen", "stage1", "stage2", "grid_resolution", "cameras", "adam", "seed",
                          "diffuse_fraction", "stage1_profile", "stage2_profile"},
                      "");
  if (j.contains("model")) {
    const auto& m = object_at(j, "model", "");
    reject_unknown_keys(m, {"embedding", "triplane", "heads"}, "model.");
    if (m.contains("embedding")) {
      const auto& e = object_at(m, "embedding", "model.");
      reject_unknown_keys(e, {"max_tokens", "dim", "seed"}, "model.embedding.");
      read_key(e, "max_tokens", c.model.embedding.max_tokens, "model.embedding.");
      read_key(e, "dim", c.model.embedding.dim, "model.embedding.");
      read_key(e, "seed", c.model.embedding.seed, "model.embedding.");
    }
    if (m.contains("triplane")) {
      const auto& t = object_at(m, "triplane", "model.");
      reject_unknown_keys(t, {"channels", "resolution", "blocks", "heads", "aware_kernel", "outer_residual"}, "model.triplane.");
      read_key(t, "channels", c.model.triplane.channels, "model.triplane.");
      read_key(t, "resolution", c.model.triplane.resolution, "model.triplane.");
      read_key(t, "blocks", c.model.triplane.blocks, "model.triplane.");
      read_key(t, "heads", c.model.triplane.heads, "model.triplane.");
      read_key(t, "aware_kernel", c.model.triplane.aware_kernel, "model.triplane.");
      read_key(t, "outer_residual", c.model.triplane.outer_residual, "model.triplane.");
    }
    if (m.contains("heads")) {
      const auto& h = object_at(m, "heads", "model.");
      reject_unknown_keys(h, {"hidden", "octaves", "half_extent", "sphere_radius"}, "model.heads.");
      read_key(h, "hidden", c.model.heads.hidden, "model.heads.");
      read_key(h, "octaves", c.model.heads.octaves, "model.heads.");
      read_key(h, "half_extent", c.model.heads.half_extent, "model.heads.");
      read_key(h, "sphere_radius", c.model.heads.sphere_radius, "model.heads.");
    }
  }
  read_key(j, "seen", c.seen, "");
  read_key(j, "unseen", c.unseen, "");
  if (j.contains("stage1")) stage_from(object_at(j, "stage1", ""), c.stage1, "stage1.");
  if (j.contains("stage2")) stage_from(object_at(j, "stage2", ""), c.stage2, "stage2.");
  read_key(j, "grid_resolution", c.grid_resolution, "");
  if (j.contains("cameras")) {
    const auto& cam = object_at(j, "cameras", "");
    reject_unknown_keys(cam, {"distance", "azimuth_lo", "azimuth_hi", "elevation_lo", "elevation_hi"}, "cameras.");
    read_key(cam, "distance", c.cameras.distance, "cameras.");
    read_key(cam, "azimuth_lo", c.cameras.azimuth_lo, "cameras.");
    read_key(cam, "azimuth_hi", c.cameras.azimuth_hi, "cameras.");
    read_key(cam, "elevation_lo", c.cameras.elevation_lo, "cameras.");
    read_key(cam, "elevation_hi", c.cameras.elevation_hi, "cameras.");
  }
  if (j.contains("adam")) {
    const auto& a = object_at(j, "adam", "");
    reject_unknown_keys(a, {"beta1", "beta2", "eps"}, "adam.");
    read_key(a, "beta1", c.adam.beta1, "adam.");
    read_key(a, "beta2", c.adam.beta2, "adam.");
    read_key(a, "eps", c.adam.eps, "adam.");
  }
  read_key(j, "seed", c.seed, "");
  read_key(j, "diffuse_fraction", c.diffuse_fraction, "");
  read_key(j, "stage1_profile", c.stage1_profile, "");
  read_key(j, "stage2_profile", c.stage2_profile, "");
  c.model.triplane.embed_dim = c.model.embedding.dim;
  return c;
}

std::uint64_t config_hash(const TrainConfig& cfg) { return fnv1a64(to_json(cfg).dump()); }

CameraSample sample_camera(const TrainConfig& cfg, int stage, std::mt19937_64& rng) {
  const auto& st = cfg.stage(stage);
  const auto& r = cfg.cameras;
  std::uniform_real_distribution<double> az(r.azimuth_lo, r.azimuth_hi), el(r.elevation_lo, r.elevation_hi),
      fov(st.fov_lo, st.fov_hi);
  CameraSample s;
  s.azimuth = az(rng);
  s.elevation = el(rng);
  s.camera = orbit_camera(s.azimuth, s.elevation, r.distance, fov(rng), st.resolution, st.resolution);
  return s;
}

std::mt19937_64 step_rng(std::uint64_t seed, int stage, std::int64_t step) {
  return std::mt19937_64(mix64(mix64(seed) ^ mix64((static_cast<std::uint64_t>(stage) << 48) ^ static_cast<std::uint64_t>(step))));
}

std::vector<SampleDraw> draw_batch(const TrainConfig& cfg, int stage, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, static_cast<int>(cfg.seen.size()) - 1);
  std::bernoulli_distribution diffuse(cfg.diffuse_fraction);
  std::vector<SampleDraw> out(static_cast<std::size_t>(cfg.stage(stage).batch));
  for (auto& d : out) {
    d.prompt = pick(rng);
    d.view = sample_camera(cfg, stage, rng);
    d.mode = diffuse(rng) ? ShadingMode::diffuse : ShadingMode::textureless;
    d.jitter_seed = rng();
  }
  return out;
}

Adam::Adam(ParamList<float> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_[p.name].assign(static_cast<std::size_t>(p.tensor.numel()), 0.0f);
    v_[p.name].assign(static_cast<std::size_t>(p.tensor.numel()), 0.0f);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void Adam::step(double lr) {
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_)), c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (auto& p : params_) {
    auto& m = m_.at(p.name);
    auto& v = v_.at(p.name);
    const auto g = p.tensor.grad();
    if (g.empty()) continue;  // untouched this step: no update, moments frozen
    auto w = p.tensor.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      m[i] = static_cast<float>(b1 * m[i] + (1.0 - b1) * gi);
      v[i] = static_cast<float>(b2 * v[i] + (1.0 - b2) * gi * gi);
      const double mh = m[i] / c1, vh = v[i] / c2;
      w[i] = static_cast<float>(w[i] - lr * mh / (std::sqrt(vh) + config_.eps));
    }
  }
  zero_grad();
}

template <typename T>
Tensor<T> surrogate_loss(const Tensor<T>& rgb, std::span<const float> grad, double scale) {
  std::vector<T> g(grad.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<T>(scale * grad[i]);
  return inject_gradient(rgb, std::span<const T>(g));
}

template Tensor<float> surrogate_loss(const Tensor<float>&, std::span<const float>, double);
template Tensor<double> surrogate_loss(const Tensor<double>&, std::span<const float>, double);

Trainer::Trainer(TrainConfig cfg, Guidance& guidance, const Dataset* dataset)
    : cfg_(std::move(cfg)),
      guidance_(guidance),
      dataset_(dataset),
      model_((cfg_.validate(), cfg_.model), cfg_.seed),
      grid_(build_grid(cfg_.grid_resolution, cfg_.model.heads.half_extent)) {
  cfg_.model = model_.config;
  if (dataset_) {
    for (int s : {1, 2}) {
      const auto& p = dataset_->spec().profiles.at(static_cast<std::size_t>(profile_for(s)));
      if (p.width != cfg_.stage(s).resolution || p.height != cfg_.stage(s).resolution)
        throw ConfigError(fmt::format("config: stage{} resolution {} does not match dataset profile '{}' ({}x{})", s,
                                      cfg_.stage(s).resolution, p.name, p.width, p.height));
    }
    for (const auto& p : cfg_.seen)
      if (dataset_->prompt_index(p) < 0) throw ConfigError(fmt::format("config: seen prompt '{}' is not in the dataset", p));
  }
  begin_stage(1);
}

int Trainer::profile_for(int stage) const {
  return dataset_->profile_index(stage == 1 ? cfg_.stage1_profile : cfg_.stage2_profile);
}

void Trainer::begin_stage(int stage) {
  if (stage != 1 && stage != 2) throw ConfigError(fmt::format("no stage {}", stage));
  stage_ = stage;
  step_ = 0;
  lr_scale_ = 1.0;
  consecutive_skips_ = 0;
  adam_ = Adam(stage == 1 ? model_.stage1_parameters() : model_.stage2_parameters(), cfg_.adam);
}

StepReport Trainer::step() {
  auto r = step_impl();
  ++step_;
  return r;
}

StepReport Trainer::step_impl() {
  StepReport rep;
  rep.stage = stage_;
  rep.step = step_;
  rep.lr = cfg_.stage(stage_).lr * lr_scale_;
  const auto& st = cfg_.stage(stage_);
  auto rng = step_rng(cfg_.seed, stage_, step_);
  const auto draws = draw_batch(cfg_, stage_, rng);
  for (auto& p : model_.parameters()) p.tensor.zero_grad();

  auto skip = [&](std::string reason, bool count_nonfinite) {
    for (auto& p : model_.parameters()) p.tensor.zero_grad();
    rep.skipped = true;
    rep.reason = std::move(reason);
    ++skipped_;
    if (count_nonfinite && ++consecutive_skips_ >= 3) {
      lr_scale_ *= 0.5;
      consecutive_skips_ = 0;
    }
    return rep;
  };

  const double scale = 1.0 / static_cast<double>(draws.size());
  double loss_sum = 0.0;
  int used = 0;
  for (const auto& d : draws) {
    const auto& prompt = cfg_.seen[static_cast<std::size_t>(d.prompt)];
    Camera cam = d.view.camera;
    GuidanceRequest req;
    if (dataset_) {
      const int bucket = bucket_of(d.view.azimuth, d.view.elevation);
      const int profile = profile_for(stage_);
      cam = dataset_->camera(bucket, profile);
      req.target_view = DatasetTargets::view_key(bucket, profile, d.mode);
    }
    const auto shading = view_shading(d.mode, cam);
    const auto tp = model_.triplane(prompt);
    Tensor<float> rgb;
    if (stage_ == 1) {
      Stage1Options o;
      o.audit = audit_;
      o.samples = st.samples;
      o.stratified = true;
      o.seed = d.jitter_seed;
      o.shading = shading;
      rgb = render_stage1(tp, model_.heads, model_.sharpness(), cam, o).rgb;
    } else {
      auto out = render_stage2(tp, model_.heads, grid_, cam, Stage2Options{shading, true});
      if (out.status == ExtractStatus::empty) {
        ++rep.empty_samples;
        ++empty_;
        continue;
      }
      rgb = out.image.rgb;
    }
    req.prompt = directional_prompt(prompt, d.view.azimuth, d.view.elevation);
    req.width = cam.width;
    req.height = cam.height;
    req.pixels = rgb.to_vector();
    if (!all_finite(req.pixels)) return skip("non-finite render", true);
    for (auto& v : req.pixels) v = std::clamp(v, 0.0f, 1.0f);
    req.stage = stage_;
    req.noise_lo = st.noise_lo;
    req.noise_hi = st.noise_hi;
    req.target_prompt = prompt;
    GuidanceResponse resp;
    try {
      resp = guidance_.guide(req);
    } catch (const GuidanceError& e) {
      if (e.kind() == GuidanceError::Kind::shape_mismatch) return skip(e.what(), false);
      throw;
    }
    if (resp.grad.size() != req.pixels.size()) return skip("guidance gradient has the wrong size", false);
    double sq = 0.0;
    for (float g : resp.grad) sq += 0.5 * static_cast<double>(g) * g;
    const double loss = resp.loss.value_or(sq);
    if (!std::isfinite(loss) || !all_finite(resp.grad)) return skip("non-finite loss", true);
    backward(surrogate_loss(rgb, resp.grad, scale));
    loss_sum += loss;
    ++used;
  }
  if (used == 0) return skip("every sample had an empty mesh", false);
  for (const auto& p : adam_.params())
    if (!all_finite(p.tensor.grad())) return skip("non-finite gradient", true);
  consecutive_skips_ = 0;
  rep.loss = loss_sum / used;
  adam_.step(rep.lr);
  return rep;
}

void Trainer::run(const std::function<void(const StepReport&)>& log) {
  while (step_ < cfg_.stage(stage_).iterations) {
    const auto r = step();
    if (log) log(r);
  }
}

void Trainer::save(const std::filesystem::path& path) const {
  CheckpointData d;
  d.meta = {{"config", to_json(cfg_)},
            {"config_hash", hex64(config_hash(cfg_))},
            {"stage", stage_},
            {"step", step_},
            {"adam_steps", adam_.steps()},
            {"lr_scale", lr_scale_},
            {"consecutive_skips", consecutive_skips_},
            {"skipped", skipped_},
            {"empty_samples", empty_}};
  for (const auto& p : model_.parameters()) d.buffers["param/" + p.name] = p.tensor.to_vector();
  for (const auto& [name, m] : adam_.first()) d.buffers["adam.m/" + name] = m;
  for (const auto& [name, v] : adam_.second()) d.buffers["adam.v/" + name] = v;
  write_checkpoint(d, path);
}

namespace {

void restore_params(const CheckpointData& d, const ParamList<float>& params, const std::string& path) {
  for (const auto& p : params) {
    const auto it = d.buffers.find("param/" + p.name);
    if (it == d.buffers.end()) throw CheckpointError(fmt::format("{}: missing buffer param/{}", path, p.name));
    if (it->second.size() != static_cast<std::size_t>(p.tensor.numel()))
      throw CheckpointError(fmt::format("{}: buffer param/{} has {} values, expected {}", path, p.name, it->second.size(),
                                        p.tensor.numel()));
    auto w = Tensor<float>(p.tensor).mutable_data();
    std::copy(it->second.begin(), it->second.end(), w.begin());
  }
}

}  // namespace

void Trainer::load(const std::filesystem::path& path) {
  const auto d = read_checkpoint(path);
  try {
    if (d.meta.at("config_hash").get<std::string>() != hex64(config_hash(cfg_)))
      throw CheckpointError(fmt::format("{}: checkpoint was written with a different config", path.string()));
    restore_params(d, model_.parameters(), path.string());
    begin_stage(d.meta.at("stage").get<int>());
    step_ = d.meta.at("step").get<std::int64_t>();
    lr_scale_ = d.meta.at("lr_scale").get<double>();
    consecutive_skips_ = d.meta.at("consecutive_skips").get<int>();
    skipped_ = d.meta.at("skipped").get<std::uint64_t>();
    empty_ = d.meta.at("empty_samples").get<std::uint64_t>();
    adam_.set_steps(d.meta.at("adam_steps").get<std::int64_t>());
    for (auto* moments : {&adam_.first(), &adam_.second()}) {
      const std::string prefix = moments == &adam_.first() ? "adam.m/" : "adam.v/";
      for (auto& [name, buf] : *moments) {
        const auto it = d.buffers.find(prefix + name);
        if (it == d.buffers.end() || it->second.size() != buf.size())
          throw CheckpointError(fmt::format("{}: missing or mis-sized buffer {}{}", path.string(), prefix, name));
        buf = it->second;
      }
    }
  } catch (const json::exception& e) {
    throw CheckpointError(fmt::format("{}: bad metadata: {}", path.string(), e.what()));
  }
}

void write_checkpoint(const CheckpointData& d, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError(fmt::format("cannot write checkpoint {}", path.string()));
  out.write(kCkptMagic, sizeof kCkptMagic);
  le::put<std::uint32_t>(out, kCkptVersion);
  const auto meta = d.meta.dump();
  le::put<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));
  le::put<std::uint32_t>(out, static_cast<std::uint32_t>(d.buffers.size()));
  for (const auto& [name, values] : d.buffers) {
    le::put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    le::put<std::uint64_t>(out, values.size());
    le::put_floats(out, values.data(), values.size());
  }
  if (!out) throw CheckpointError(fmt::format("write failed: {}", path.string()));
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(fmt::format("missing checkpoint {}", path.string()));
  const auto size = std::filesystem::file_size(path);
  try {
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || !std::equal(magic, magic + 8, kCkptMagic)) throw CheckpointError(fmt::format("{}: not a checkpoint", path.string()));
    const auto version = le::get<std::uint32_t>(in);
    if (version != kCkptVersion) throw CheckpointError(fmt::format("{}: unsupported checkpoint version {}", path.string(), version));
    const auto meta_len = le::get<std::uint32_t>(in);
    if (meta_len > size) throw CheckpointError(fmt::format("{}: truncated", path.string()));
    std::string meta(meta_len, '\0');
    in.read(meta.data(), meta_len);
    CheckpointData d;
    d.meta = json::parse(meta, nullptr, false);
    if (!in || d.meta.is_discarded()) throw CheckpointError(fmt::format("{}: bad metadata", path.string()));
    const auto count = le::get<std::uint32_t>(in);
    for (std::uint32_t b = 0; b < count; ++b) {
      const auto name_len = le::get<std::uint32_t>(in);
      if (name_len > 4096) throw CheckpointError(fmt::format("{}: bad buffer name", path.string()));
      std::string name(name_len, '\0');
      in.read(name.data(), name_len);
      const auto n = le::get<std::uint64_t>(in);
      if (n * 4 > size) throw CheckpointError(fmt::format("{}: truncated buffer {}", path.string(), name));
      std::vector<float> values(n);
      le::get_floats(in, values.data(), n);
      d.buffers.emplace(std::move(name), std::move(values));
    }
    return d;
  } catch (const std::runtime_error& e) {
    if (dynamic_cast<const CheckpointError*>(&e)) throw;
    throw CheckpointError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

Model<float> load_model(const std::filesystem::path& path, TrainConfig* cfg_out) {
  const auto d = read_checkpoint(path);
  TrainConfig cfg;
  try {
    cfg = train_config_from_json(d.meta.at("config"));
  } catch (const json::exception& e) {
    throw CheckpointError(fmt::format("{}: bad metadata: {}", path.string(), e.what()));
  } catch (const ConfigError& e) {
    throw CheckpointError(fmt::format("{}: {}", path.string(), e.what()));
  }
  Model<float> model(cfg.model, cfg.seed);
  restore_params(d, model.parameters(), path.string());
  if (cfg_out) *cfg_out = cfg;
  return model;
}

InferResult infer(const Model<float>& model, const std::string& prompt, const TetGrid& grid) {
  const auto t0 = std::chrono::steady_clock::now();
  NoGradGuard no_grad;
  const auto tp = model.triplane(prompt);
  InferResult r;
  r.mesh = extract(tp, model.heads, grid, true).mesh;
  r.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

double psnr(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("psnr: size mismatch");
  double sq = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    sq += d * d;
  }
  const double mse = sq / static_cast<double>(a.size());
  return mse <= 0.0 ? 100.0 : -10.0 * std::log10(mse);
}

std::vector<float> render_view(const Model<float>& model, const std::string& prompt, const Camera& cam,
                               const EvalOptions& options, const TetGrid* grid) {
  NoGradGuard no_grad;
  const auto tp = model.triplane(prompt);
  const auto shading = view_shading(options.mode, cam);
  std::vector<float> img;
  if (options.renderer == Renderer::volumetric) {
    Stage1Options o;
    o.samples = options.samples;
    o.shading = shading;
    img = render_stage1(tp, model.heads, model.sharpness(), cam, o).rgb.to_vector();
  } else {
    std::optional<TetGrid> own;
    if (!grid) grid = &own.emplace(build_grid(options.grid_resolution, model.heads.config().half_extent));
    img = render_stage2(tp, model.heads, *grid, cam, Stage2Options{shading, true}).image.rgb.to_vector();
  }
  for (auto& v : img) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

double evaluate_prompt(const Model<float>& model, const Dataset& dataset, const DatasetTargets& targets, int prompt_index,
                       const EvalOptions& options) {
  std::vector<int> buckets = options.buckets;
  if (buckets.empty())
    for (int b = 0; b < kBucketCount; ++b) buckets.push_back(b);
  std::optional<TetGrid> grid;
  if (options.renderer == Renderer::mesh) grid.emplace(build_grid(options.grid_resolution, model.heads.config().half_extent));
  const auto& prompt = dataset.grid().prompts.at(static_cast<std::size_t>(prompt_index)).prompt;
  double total = 0.0;
  for (int b : buckets) {
    const auto cam = dataset.camera(b, options.profile);
    const auto img = render_view(model, prompt, cam, options, grid ? &*grid : nullptr);
    total += psnr(img, targets.image(prompt_index, b, options.profile, options.mode));
  }
  return total / static_cast<double>(buckets.size());
}

}  // namespace atom
