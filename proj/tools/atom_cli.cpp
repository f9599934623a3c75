// atom: command-line front end.
//
// Exit status: 0 success, 1 user error (bad flags, config, missing files),
// 2 internal error or failed self-check.

#include <malloc.h>

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fmt/format.h>
#include <iostream>

#include "atom/corpus.hpp"
#include "atom/io.hpp"
#include "atom/selfcheck.hpp"

namespace {

using namespace atom;

struct UserError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::unique_ptr<Guidance> open_guidance(const RunConfig& cfg, const DatasetTargets* targets) {
  const auto addr_text = effective_guidance_address(cfg.guidance);
  GuidanceAddress addr;
  try {
    addr = parse_guidance_address(addr_text);
  } catch (const std::invalid_argument& e) {
    throw UserError(fmt::format("guidance address '{}': {}", addr_text, e.what()));
  }
  if (addr.mode == GuidanceAddress::Mode::oracle) {
    if (!targets) throw UserError("the photometric oracle needs a dataset");
    return std::make_unique<PhotometricGuidance>(*targets);
  }
  return make_remote_guidance(addr, std::chrono::milliseconds(cfg.guidance_timeout_ms));
}

std::pair<double, double> parse_view(const std::string& text) {
  double az = 0, el = 0;
  char extra = 0;
  if (std::sscanf(text.c_str(), "%lf,%lf%c", &az, &el, &extra) != 2)
    throw UserError(fmt::format("--view expects AZIMUTH,ELEVATION in degrees, got '{}'", text));
  if (el < -89 || el > 89) throw UserError("--view elevation must lie in [-89, 89]");
  return {az, el};
}

void ensure_parent(const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
}

int cmd_dataset_build(const std::string& config, const std::string& out) {
  const auto cfg = load_run_config(config);
  const std::filesystem::path dir = out.empty() ? cfg.dataset_dir : std::filesystem::path(out);
  const auto t0 = std::chrono::steady_clock::now();
  build_dataset(cfg.dataset_spec(), dir);
  const auto ds = Dataset::load(dir);
  const auto audit = audit_coverage(ds);
  if (!audit.complete()) throw std::runtime_error("dataset audit failed after build: " + audit.missing.front());
  fmt::print("dataset: {} prompts x {} buckets x {} profiles -> {} ({:.1f} s)\n", ds.grid().prompts.size(),
             ds.buckets().size(), ds.spec().profiles.size(), dir.string(),
             std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return 0;
}

int cmd_train(const std::string& config, const std::string& stage_flag, const std::string& resume) {
  const auto cfg = load_run_config(config);
  const int first = stage_flag == "2" ? 2 : 1;
  const int last = stage_flag == "1" ? 1 : 2;
  // The oracle needs targets; remote guidance still snaps cameras when a dataset exists.
  std::optional<Dataset> dataset;
  const bool oracle =
      parse_guidance_address(effective_guidance_address(cfg.guidance)).mode == GuidanceAddress::Mode::oracle;
  if (oracle || std::filesystem::exists(cfg.dataset_dir / "manifest.json")) dataset = Dataset::load(cfg.dataset_dir);
  std::optional<DatasetTargets> targets;
  if (dataset) targets.emplace(*dataset);
  auto guidance = open_guidance(cfg, targets ? &*targets : nullptr);

  Trainer trainer(cfg.train, *guidance, dataset ? &*dataset : nullptr);
  std::filesystem::create_directories(cfg.checkpoint_dir);
  if (!resume.empty()) {
    trainer.load(resume);
    if (trainer.stage() > last)
      throw UserError(fmt::format("{} is a stage-{} checkpoint; nothing to do for --stage {}", resume, trainer.stage(), stage_flag));
    if (trainer.stage() < first) trainer.begin_stage(first);
    fmt::print("resumed {} at stage {} step {}\n", resume, trainer.stage(), trainer.step_index());
  } else {
    trainer.begin_stage(first);
  }
  const auto latest = cfg.checkpoint_dir / "latest.ckpt";
  const auto t0 = std::chrono::steady_clock::now();
  while (true) {
    const int st = trainer.stage();
    trainer.run([&](const StepReport& r) {
      const bool log_now = cfg.log_every > 0 && ((r.step + 1) % cfg.log_every == 0 || r.skipped);
      if (log_now)
        fmt::print("stage {} step {:>6} loss {:.6f} lr {:.3g}{}{} [{:.0f} s]\n", r.stage, r.step + 1, r.loss, r.lr,
                   r.skipped ? " skipped: " : "", r.reason,
                   std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      if (cfg.checkpoint_every > 0 && (r.step + 1) % cfg.checkpoint_every == 0) trainer.save(latest);
      std::fflush(stdout);
    });
    const auto done = cfg.checkpoint_dir / fmt::format("stage{}.ckpt", st);
    trainer.save(done);
    trainer.save(latest);
    fmt::print("stage {} done: {} steps, {} skipped, {} empty samples -> {}\n", st, trainer.step_index(),
               trainer.skipped_steps(), trainer.empty_samples(), done.string());
    if (st >= last) break;
    trainer.begin_stage(st + 1);
  }
  return 0;
}

struct Loaded {
  Model<float> model;
  TrainConfig cfg;
};

Loaded load(const std::string& checkpoint) {
  TrainConfig cfg;
  auto model = load_model(checkpoint, &cfg);
  return {std::move(model), std::move(cfg)};
}

int cmd_infer(const std::string& checkpoint, const std::string& prompt, const std::string& out, int grid_res) {
  const auto l = load(checkpoint);
  const auto grid = build_grid(grid_res > 0 ? grid_res : l.cfg.grid_resolution, l.cfg.model.heads.half_extent);
  const auto r = infer(l.model, prompt, grid);
  ensure_parent(out);
  write_ply(r.mesh, out);
  fmt::print("{} vertices, {} faces -> {}\nelapsed {:.1f} ms\n", r.mesh.vertex_count(), r.mesh.faces.size(), out,
             r.elapsed_ms);
  return 0;
}

int cmd_export(const std::string& checkpoint, const std::string& prompt, const std::string& out, int grid_res) {
  const auto l = load(checkpoint);
  const auto grid = build_grid(grid_res > 0 ? grid_res : l.cfg.grid_resolution, l.cfg.model.heads.half_extent);
  const auto r = infer(l.model, prompt, grid);
  if (r.mesh.empty()) std::cerr << "warning: empty mesh for '" << prompt << "'\n";
  ensure_parent(out);
  write_ply(r.mesh, out);
  fmt::print("{}\n", out);
  return 0;
}

int cmd_render(const std::string& checkpoint, const std::string& prompt, const std::string& view, const std::string& out,
               const std::string& renderer, int resolution, double fov, double distance, int grid_res) {
  const auto l = load(checkpoint);
  const auto [az, el] = parse_view(view);
  const auto cam = orbit_camera(az, el, distance > 0 ? distance : l.cfg.cameras.distance, fov, resolution, resolution);
  EvalOptions opts;
  opts.renderer = renderer == "volume" ? Renderer::volumetric : Renderer::mesh;
  opts.samples = l.cfg.stage1.samples;
  opts.grid_resolution = grid_res > 0 ? grid_res : l.cfg.grid_resolution;
  const auto grid = build_grid(opts.grid_resolution, l.cfg.model.heads.half_extent);
  const auto rgb = render_view(l.model, prompt, cam, opts, &grid);
  ensure_parent(out);
  write_ppm(rgb, resolution, resolution, out);
  fmt::print("{}\n", out);
  return 0;
}

int cmd_gradcheck(bool ops_only) {
  SelfCheckOptions o;
  o.stage1 = o.stage2 = !ops_only;
  o.progress = [](const SelfCheckResult& r) {
    fmt::print("{:<30} max rel err {:.3e}  ({} entries{}{})\n", r.name, r.max_rel_error, r.evaluations,
               r.worst.empty() ? "" : ", worst ", r.worst);
    std::fflush(stdout);
  };
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = run_selfcheck(o);
  double worst = 0.0;
  for (const auto& r : results) worst = std::max(worst, r.max_rel_error);
  const bool ok = worst < 1e-3;
  fmt::print("max relative error {:.3e} over {} checks in {:.1f} s: {}\n", worst, results.size(),
             std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), ok ? "ok" : "FAILED");
  return ok ? 0 : 2;
}

int cmd_bench(const std::string& checkpoint, int runs, int grid_res) {
  std::optional<Loaded> l;
  if (!checkpoint.empty()) l = load(checkpoint);
  const Model<float> fresh(ModelConfig{}, 0);
  const auto& model = l ? l->model : fresh;
  const auto& mc = model.config;
  const auto grid = build_grid(grid_res, mc.heads.half_extent);
  const auto prompts = make_compositional_grid(4, 4).prompts;
  std::vector<double> ms;
  for (int i = 0; i < runs; ++i)
    ms.push_back(infer(model, prompts[static_cast<std::size_t>(i) % prompts.size()].prompt, grid).elapsed_ms);
  auto sorted = ms;
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted.size() % 2 ? sorted[sorted.size() / 2]
                                          : 0.5 * (sorted[sorted.size() / 2 - 1] + sorted[sorted.size() / 2]);
  fmt::print("infer C_T={} planes {}x{} R={}: median {:.1f} ms over {} runs (min {:.1f}, max {:.1f})\n",
             mc.triplane.channels, mc.triplane.resolution, mc.triplane.resolution, grid_res, median, runs, sorted.front(),
             sorted.back());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_ARENA_MAX, 1);

  CLI::App app{"atom: amortized text-to-mesh training and inference"};
  app.require_subcommand(1);

  auto* dataset = app.add_subcommand("dataset", "Synthetic target dataset");
  dataset->require_subcommand(1);
  auto* dataset_build = dataset->add_subcommand("build", "Render the compositional grid's target views");
  std::string config, out, infer_out, render_out, export_out, stage = "both", resume, checkpoint, prompt, view, renderer = "mesh";
  int grid_res = 0, resolution = 128, runs = 10;
  double fov = 35.0, distance = 0.0;
  bool ops_only = false;
  dataset_build->add_option("--config", config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  dataset_build->add_option("--out", out, "Output directory (default: dataset_dir from the config)");

  auto* train = app.add_subcommand("train", "Train the model");
  train->add_option("--config", config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  train->add_option("--stage", stage, "1, 2 or both")->check(CLI::IsMember({"1", "2", "both"}));
  train->add_option("--resume", resume, "Checkpoint to continue from")->check(CLI::ExistingFile);

  auto* infer_cmd = app.add_subcommand("infer", "Prompt -> mesh, timed");
  infer_cmd->add_option("--prompt", prompt, "Text prompt")->required();
  infer_cmd->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--out", infer_out, "PLY path")->default_val("infer.ply");
  infer_cmd->add_option("--grid", grid_res, "Tet grid resolution (default: from checkpoint)");

  auto* render = app.add_subcommand("render", "Render one view to PPM");
  render->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  render->add_option("--view", view, "AZIMUTH,ELEVATION in degrees")->required();
  render->add_option("--prompt", prompt, "Text prompt")->required();
  render->add_option("--out", render_out, "PPM path")->default_val("render.ppm");
  render->add_option("--renderer", renderer, "mesh or volume")->check(CLI::IsMember({"mesh", "volume"}));
  render->add_option("--resolution", resolution, "Square image size")->check(CLI::Range(1, 4096));
  render->add_option("--fov", fov, "Vertical field of view, degrees")->check(CLI::Range(1.0, 179.0));
  render->add_option("--distance", distance, "Camera distance (default: from checkpoint)");
  render->add_option("--grid", grid_res, "Tet grid resolution (default: from checkpoint)");

  auto* export_cmd = app.add_subcommand("export", "Write a prompt's mesh as PLY");
  export_cmd->add_option("--prompt", prompt, "Text prompt")->required();
  export_cmd->add_option("--out", export_out, "PLY path")->required();
  export_cmd->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  export_cmd->add_option("--grid", grid_res, "Tet grid resolution (default: from checkpoint)");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every op and both pipelines");
  gradcheck->add_flag("--ops-only", ops_only, "Skip the pipeline checks");

  auto* bench = app.add_subcommand("bench", "Inference latency");
  bench->add_option("--checkpoint", checkpoint, "Checkpoint (default: fresh desk-config weights)")->check(CLI::ExistingFile);
  bench->add_option("--runs", runs, "Timed runs")->check(CLI::Range(1, 1000));
  bench->add_option("--grid", grid_res, "Tet grid resolution")->default_val(48)->check(CLI::Range(1, 256));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*dataset_build) return cmd_dataset_build(config, out);
    if (*train) return cmd_train(config, stage, resume);
    if (*infer_cmd) return cmd_infer(checkpoint, prompt, infer_out, grid_res);
    if (*render) return cmd_render(checkpoint, prompt, view, render_out, renderer, resolution, fov, distance, grid_res);
    if (*export_cmd) return cmd_export(checkpoint, prompt, export_out, grid_res);
    if (*gradcheck) return cmd_gradcheck(ops_only);
    if (*bench) return cmd_bench(checkpoint, runs, grid_res);
  } catch (const UserError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DatasetError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const GuidanceError& e) {
    std::cerr << "guidance error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
