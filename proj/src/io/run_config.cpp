#include <fmt/format.h>

#include <fstream>

#include "atom/corpus.hpp"
#include "atom/io.hpp"

namespace atom {

using nlohmann::json;

namespace {

constexpr const char* kRunKeys[] = {"dataset_dir", "checkpoint_dir",   "output_dir", "guidance", "guidance_timeout_ms",
                                    "checkpoint_every", "log_every", "dataset",    "export"};

template <typename V>
void take(const json& j, const char* key, V& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception&) {
    throw ConfigError(fmt::format("config: {}{} has the wrong type", where, key));
  }
}

void take_path(const json& j, const char* key, std::filesystem::path& out) {
  std::string s = out.string();
  take(j, key, s, "");
  out = s;
}

}  // namespace

DatasetSpec RunConfig::dataset_spec() const {
  DatasetSpec spec;
  spec.rows = dataset.rows;
  spec.cols = dataset.cols;
  spec.seed = dataset.seed;
  spec.distance = train.cameras.distance;
  spec.profiles = {{train.stage1_profile, dataset.stage1_fov, train.stage1.resolution, train.stage1.resolution},
                   {train.stage2_profile, dataset.stage2_fov, train.stage2.resolution, train.stage2.resolution},
                   {"eval", dataset.stage2_fov, dataset.eval_resolution, dataset.eval_resolution}};
  return spec;
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  RunConfig c;
  json train_part = json::object();
  for (const auto& [key, value] : j.items()) {
    if (std::find(std::begin(kRunKeys), std::end(kRunKeys), key) == std::end(kRunKeys)) train_part[key] = value;
  }
  take_path(j, "dataset_dir", c.dataset_dir);
  take_path(j, "checkpoint_dir", c.checkpoint_dir);
  take_path(j, "output_dir", c.output_dir);
  take(j, "guidance", c.guidance, "");
  take(j, "guidance_timeout_ms", c.guidance_timeout_ms, "");
  take(j, "checkpoint_every", c.checkpoint_every, "");
  take(j, "log_every", c.log_every, "");
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    reject_unknown_keys(d, {"rows", "cols", "seed", "stage1_fov", "stage2_fov", "eval_resolution"}, "dataset.");
    take(d, "rows", c.dataset.rows, "dataset.");
    take(d, "cols", c.dataset.cols, "dataset.");
    take(d, "seed", c.dataset.seed, "dataset.");
    take(d, "stage1_fov", c.dataset.stage1_fov, "dataset.");
    take(d, "stage2_fov", c.dataset.stage2_fov, "dataset.");
    take(d, "eval_resolution", c.dataset.eval_resolution, "dataset.");
  }
  if (j.contains("export")) {
    const auto& e = j.at("export");
    reject_unknown_keys(e, {"grid_resolution"}, "export.");
    take(e, "grid_resolution", c.export_options.grid_resolution, "export.");
  }
  // Unknown keys surface here, named by the training parser.
  c.train = train_config_from_json(train_part);

  if (c.dataset.rows < 1 || c.dataset.cols < 1) throw ConfigError("config: dataset grid must be at least 1x1");
  if (c.dataset.eval_resolution < 1) throw ConfigError("config: dataset.eval_resolution < 1");
  if (c.export_options.grid_resolution < 1) throw ConfigError("config: export.grid_resolution < 1");
  if (c.guidance_timeout_ms <= 0) throw ConfigError("config: guidance_timeout_ms must be positive");
  if (c.checkpoint_every < 0 || c.log_every < 0) throw ConfigError("config: checkpoint_every/log_every < 0");
  try {
    (void)parse_guidance_address(c.guidance);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(fmt::format("config: guidance: {}", e.what()));
  }
  if (c.train.seen.empty() && c.train.unseen.empty()) {
    const auto grid = make_compositional_grid(c.dataset.rows, c.dataset.cols);
    for (const auto& p : grid.seen()) c.train.seen.push_back(p.prompt);
    for (const auto& p : grid.unseen()) c.train.unseen.push_back(p.prompt);
  }
  c.train.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("config: cannot open {}", path.string()));
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("config: {}: {}", path.string(), e.what()));
  }
  return run_config_from_json(j);
}

json to_json(const RunConfig& c) {
  json j = to_json(c.train);
  j["dataset_dir"] = c.dataset_dir.string();
  j["checkpoint_dir"] = c.checkpoint_dir.string();
  j["output_dir"] = c.output_dir.string();
  j["guidance"] = c.guidance;
  j["guidance_timeout_ms"] = c.guidance_timeout_ms;
  j["checkpoint_every"] = c.checkpoint_every;
  j["log_every"] = c.log_every;
  j["dataset"] = {{"rows", c.dataset.rows},
                  {"cols", c.dataset.cols},
                  {"seed", c.dataset.seed},
                  {"stage1_fov", c.dataset.stage1_fov},
                  {"stage2_fov", c.dataset.stage2_fov},
                  {"eval_resolution", c.dataset.eval_resolution}};
  j["export"] = {{"grid_resolution", c.export_options.grid_resolution}};
  return j;
}

}  // namespace atom
