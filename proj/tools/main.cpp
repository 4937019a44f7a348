// Command-line front end: bake, train, render, eval, and report runs driven
// by a JSON run configuration, plus init for a self-contained demo kit.
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "camo/assets.hpp"
#include "camo/common.hpp"
#include "camo/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config, "Run configuration JSON")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--out", args.out, "Override the configured output directory");
  cmd->add_option("--seed", args.seed, "Override the configured seed");
}

camo::RunConfig load_config(const CommonArgs& args) {
  camo::RunConfig cfg = camo::load_run_config(args.config);
  if (!args.out.empty()) cfg.output_dir = args.out;
  if (args.seed) cfg.optim.seed = *args.seed;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sticker-camouflage toolkit: bake UV masks, optimize adversarial textures "
               "through the built-in renderer and detector, and evaluate robustness"};
  app.set_version_flag("--version", camo::version_string());
  app.require_subcommand(1);

  // init
  auto* init = app.add_subcommand(
      "init", "Write the procedural demo assets and a runnable configuration");
  std::string init_out, init_preset = "desk", init_mode;
  std::uint64_t init_seed = 0;
  init->add_option("--out", init_out, "Directory for assets, config, and run outputs")
      ->required();
  init->add_option("--preset", init_preset, "Configuration preset")
      ->check(CLI::IsMember({"desk", "paper"}));
  init->add_option("--mode", init_mode, "Optimization mode override")
      ->check(CLI::IsMember({"one-step", "diffusion"}));
  init->add_option("--seed", init_seed, "Seed for plates and the run");
  init->callback([&] {
    const camo::AssetPaths assets =
        camo::write_assets((fs::path(init_out) / "assets").string(), init_seed);
    camo::RunConfig cfg = camo::RunConfig::preset(init_preset);
    cfg.mesh_path = assets.mesh;
    cfg.selection_path = assets.local_selection;
    cfg.base_texture_path = assets.base_texture;
    cfg.palette_path = assets.palette;
    cfg.backgrounds_dir = assets.backgrounds_dir;
    cfg.output_dir = (fs::path(init_out) / "run").string();
    cfg.optim.seed = init_seed;
    if (!init_mode.empty()) cfg.mode = init_mode;
    const std::string cfg_path = (fs::path(init_out) / "config.json").string();
    camo::save_run_config(cfg, cfg_path);
    std::printf("assets: %s\nconfig: %s\n", assets.mesh.c_str(), cfg_path.c_str());
  });

  // bake
  auto* bake = app.add_subcommand("bake", "Bake the selection mask and sticker preview");
  CommonArgs bake_args;
  add_common(bake, bake_args);
  bake->callback([&] {
    const camo::BakeResult result = camo::cmd_bake(load_config(bake_args));
    std::printf("mask: %s\nsticker: %s\n", result.mask_path.c_str(),
                result.sticker_path.c_str());
  });

  // train
  auto* train = app.add_subcommand("train", "Run the configured texture optimization");
  CommonArgs train_args;
  add_common(train, train_args);
  train->callback([&] {
    const camo::RunConfig cfg = load_config(train_args);
    const camo::RunManifest manifest = camo::cmd_train(cfg);
    std::printf("final texture: %s\nloss log: %s\nmanifest: %s\n",
                manifest.final_texture.c_str(), manifest.loss_csv.c_str(),
                (fs::path(cfg.output_dir) / "manifest.json").string().c_str());
  });

  // render
  auto* render = app.add_subcommand("render", "Render textured views as PNG");
  CommonArgs render_args;
  add_common(render, render_args);
  std::string render_texture, render_background, render_out = "render.png";
  std::string render_silhouette, render_montage;
  std::string render_grid = "desk";
  double elevation = 20.0, azimuth = 40.0, distance = 4.0;
  render->add_option("--texture", render_texture, "Texture PNG (default: mesh base paint)");
  render->add_option("--background", render_background,
                     "Background image (default: plain mid-gray)");
  render->add_option("--elevation", elevation, "Camera elevation, degrees");
  render->add_option("--azimuth", azimuth, "Camera azimuth, degrees");
  render->add_option("--distance", distance, "Camera distance");
  render->add_option("--out-png", render_out, "Output PNG path");
  render->add_option("--silhouette-png", render_silhouette, "Also write the target mask");
  render->add_option("--montage-png", render_montage,
                     "Instead of one view, tile every sweep-grid pose into this PNG");
  render->add_option("--grid", render_grid, "Pose grid for --montage-png")
      ->check(CLI::IsMember({"desk", "paper"}));
  render->callback([&] {
    const camo::RunConfig cfg = load_config(render_args);
    if (!render_montage.empty()) {
      camo::cmd_render_grid(cfg, render_texture, render_grid, render_background,
                            render_montage, render_silhouette);
      std::printf("montage: %s\n", render_montage.c_str());
    } else {
      const camo::ScenePose pose{elevation, azimuth, distance};
      camo::cmd_render(cfg, render_texture, pose, render_background, render_out,
                       render_silhouette);
      std::printf("render: %s\n", render_out.c_str());
    }
  });

  // eval
  auto* eval = app.add_subcommand("eval", "Run a robustness or concealment sweep");
  CommonArgs eval_args;
  add_common(eval, eval_args);
  std::string sweep, eval_grid = "desk";
  std::vector<std::string> eval_textures, eval_scenes;
  eval->add_option("--sweep", sweep, "pose | occlusion | reflectance | concealment")
      ->required();
  eval->add_option("--texture", eval_textures, "Texture PNG(s) to evaluate")->required();
  eval->add_option("--grid", eval_grid, "Pose grid preset")
      ->check(CLI::IsMember({"desk", "paper"}));
  eval->add_option("--scenes", eval_scenes, "Background class filter, e.g. grass,desert")
      ->delimiter(',');
  eval->callback([&] {
    const auto files =
        camo::cmd_eval(load_config(eval_args), eval_textures, sweep, eval_grid, eval_scenes);
    for (const auto& f : files) std::printf("report: %s\n", f.c_str());
  });

  // report
  auto* report = app.add_subcommand(
      "report", "Merge measured reports with the published reference rows");
  CommonArgs report_args;
  add_common(report, report_args);
  report->callback([&] {
    const std::string summary = camo::cmd_report(load_config(report_args));
    std::printf("summary: %s\n", summary.c_str());
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const camo::Error& e) {
    std::string msg = e.what();
    const std::string prefix = e.module_name() + ": ";
    if (msg.rfind(prefix, 0) == 0) msg = msg.substr(prefix.size());
    std::fprintf(stderr, "error [%s]: %s\n", e.module_name().c_str(), msg.c_str());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
