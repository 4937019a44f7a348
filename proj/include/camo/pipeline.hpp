// Run orchestration: configuration files, dataset ingestion, output-directory
// ownership, training/evaluation commands, and manifest persistence.
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "camo/assets.hpp"
#include "camo/detect.hpp"
#include "camo/evaluate.hpp"
#include "camo/geometry.hpp"
#include "camo/losses.hpp"
#include "camo/render.hpp"
#include "camo/texgen.hpp"

namespace camo {

struct DetectorSettings {
  std::string name = "toy";
  std::string weights;    // empty + "toy" = train one in-run and save it
  int resolution = 64;    // toy input resolution, multiple of 32
  int train_scenes = 150; // in-run toy training data size
  int train_epochs = 10;
};

struct OptimSettings {
  double lr = 1e-3;         // generator Adam step size
  double step_size = 1e-2;  // direct texel step magnitude
  int epochs = 10;
  std::uint64_t seed = 0;
};

struct TrainSettings {
  int scenes_per_epoch = 8;
  double blend_lambda = 1.0;
  std::vector<double> reflectance_jitter;  // EOT pool for env.diffuse_color
};

struct RunConfig {
  int schema_version = 1;
  std::string mesh_path;
  std::string selection_path;
  std::string base_texture_path;  // optional; mid-gray when empty
  int texture_resolution = 480;
  PoseRanges poses;
  Environment env;
  LossConfig loss;           // palette left empty here; loaded from palette_path
  std::string palette_path;
  OptimSettings optim;
  std::string mode = "diffusion";  // "one-step" | "diffusion"
  DetectorSettings detector;
  int diffusion_steps = 10;
  double diffusion_sigma = 0.5;
  std::vector<int> diffusion_channels{32, 64, 128};
  TrainSettings train;
  std::string backgrounds_dir;
  std::string output_dir;

  DiffusionConfig diffusion_config() const;
  void validate(bool check_paths) const;  // throws Error("pipeline", ...)
  std::uint64_t hash() const;             // over the canonical serialized form

  // "desk": minutes-scale toy setup. "paper": full-scale settings; the
  // published tables' configuration, not something CI ever runs.
  static RunConfig preset(const std::string& name);
};

RunConfig load_run_config(const std::string& path);
void save_run_config(const RunConfig& cfg, const std::string& path);

struct RunManifest {
  std::uint64_t config_hash = 0;
  std::string code_version;
  std::uint64_t seed = 0;
  std::string detector_weights;
  std::vector<std::string> checkpoints;
  std::string loss_csv;
  std::string final_texture;
  std::string final_mask;
  std::string sticker;
  std::vector<std::string> reports;
};

// Written atomically (temp file + rename); refuses to record missing files.
void save_manifest(const RunManifest& manifest, const std::string& path);
RunManifest load_manifest(const std::string& path);

// Exclusive ownership of an output directory for the lifetime of the object.
// A second lock on the same directory throws.
class OutputLock {
 public:
  explicit OutputLock(const std::string& dir);
  ~OutputLock();
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  std::string path_;
  int fd_ = -1;
};

struct LabeledBackground {
  Image image;
  std::string label;  // grass | desert | highway | other
  std::string path;
};

// Recursively loads image files; the label is the immediate subdirectory
// name when it is a known scene class, else "other". Deterministic order.
std::vector<LabeledBackground> load_backgrounds(const std::string& dir);

// Deterministic pose + background draws shared by detector pretraining,
// attack training, and held-out evaluation (distinct stream names).
std::vector<AttackScene> sample_attack_scenes(int count, const PoseRanges& ranges,
                                              const std::vector<LabeledBackground>& backgrounds,
                                              std::uint64_t seed,
                                              const std::string& stream_name);

// Composited detector-training scenes; roughly one in five is a pure
// background negative. Ground truth comes from the projected mesh box.
std::vector<LabeledScene> synth_detector_scenes(const TriMesh& mesh, const Image& texture,
                                                const Environment& env, int count,
                                                const PoseRanges& ranges,
                                                const std::vector<LabeledBackground>& backgrounds,
                                                int resolution, std::uint64_t seed);

// Loads cfg.detector: explicit weights when given, otherwise trains the toy
// detector on raw-mesh scenes (AP gate applies) and saves the weights under
// the output directory.
std::shared_ptr<Detector> resolve_detector(const RunConfig& cfg, const TriMesh& mesh,
                                           const Image& base_texture,
                                           const std::vector<LabeledBackground>& backgrounds,
                                           std::string* weights_path_out);

struct BakeResult {
  std::string mask_path;
  std::string sticker_path;
  std::string manifest_path;
};

// Bakes the selection mask at the configured texture resolution and exports
// the base-texture sticker preview.
BakeResult cmd_bake(const RunConfig& cfg);

// Full optimization run: resolve detector, build scenes, run the selected
// mode, write loss CSV + checkpoints + final texture/mask/sticker, manifest.
RunManifest cmd_train(const RunConfig& cfg);

// One textured render composited over a background (plain mid-gray when the
// path is empty), written as PNG. silhouette_png, when nonempty, gets the
// target mask of the same view.
void cmd_render(const RunConfig& cfg, const std::string& texture_path, const ScenePose& pose,
                const std::string& background_path, const std::string& out_png,
                const std::string& silhouette_png = "");

// Tiled render over the sweep-grid poses (one row per distance x pitch, one
// column per azimuth) for visual inspection; grid is "desk" or "paper".
// silhouette_png, when nonempty, gets the matching silhouette tiles.
void cmd_render_grid(const RunConfig& cfg, const std::string& texture_path,
                     const std::string& grid, const std::string& background_path,
                     const std::string& out_png, const std::string& silhouette_png = "");

// Runs one sweep ("pose", "occlusion", "reflectance", "concealment") for the
// given texture(s) and writes CSV + JSON under <output>/reports. Concealment
// reports per-scene-class CSIM/SSIM for every texture given. grid is "desk"
// (coarse) or "paper" (the full-scale pose grid); scene_filter keeps only
// backgrounds with the listed class labels (empty keeps all).
std::vector<std::string> cmd_eval(const RunConfig& cfg,
                                  const std::vector<std::string>& texture_paths,
                                  const std::string& sweep, const std::string& grid = "desk",
                                  const std::vector<std::string>& scene_filter = {});

// Merges every report CSV under <output>/reports with the published
// full-scale reference rows into one summary (JSON + readable text).
std::string cmd_report(const RunConfig& cfg);

}  // namespace camo
