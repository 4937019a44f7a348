#include "camo/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <utility>

#include <json.hpp>

#include "camo/common.hpp"
#include "camo/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace camo {

namespace {

std::string hex_u64(std::uint64_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << v;
  return os.str();
}

std::uint64_t parse_hex_u64(const std::string& s, const std::string& what) {
  try {
    std::size_t pos = 0;
    const std::uint64_t v = std::stoull(s, &pos, 16);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error("pipeline", what + " is not a hex integer: '" + s + "'");
  }
}

json vec3_to_json(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

Eigen::Vector3d vec3_from_json(const json& j, const std::string& key) {
  if (!j.is_array() || j.size() != 3)
    throw Error("pipeline", "config field '" + key + "' must be a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json range_to_json(const std::array<double, 2>& r) { return json::array({r[0], r[1]}); }

std::array<double, 2> range_from_json(const json& j, const std::string& key) {
  if (!j.is_array() || j.size() != 2)
    throw Error("pipeline", "config field '" + key + "' must be a 2-element array");
  return {j[0].get<double>(), j[1].get<double>()};
}

json config_to_json(const RunConfig& cfg) {
  json j;
  j["schema_version"] = cfg.schema_version;
  j["paths"] = {{"mesh", cfg.mesh_path},
                {"selection", cfg.selection_path},
                {"base_texture", cfg.base_texture_path},
                {"palette", cfg.palette_path},
                {"backgrounds", cfg.backgrounds_dir},
                {"output", cfg.output_dir}};
  j["texture_resolution"] = cfg.texture_resolution;
  j["poses"] = {{"elevation", range_to_json(cfg.poses.elevation)},
                {"azimuth", range_to_json(cfg.poses.azimuth)},
                {"distance", range_to_json(cfg.poses.distance)}};
  j["environment"] = {{"ambient", vec3_to_json(cfg.env.ambient)},
                      {"diffuse_color", cfg.env.diffuse_color},
                      {"specular", vec3_to_json(cfg.env.specular)},
                      {"shininess", cfg.env.shininess},
                      {"light_direction", vec3_to_json(cfg.env.light_direction)}};
  j["loss"] = {{"alpha", cfg.loss.alpha}, {"beta", cfg.loss.beta}, {"gamma", cfg.loss.gamma},
               {"mu", cfg.loss.mu},       {"tau", cfg.loss.tau},   {"c_ru", cfg.loss.c_ru}};
  j["optimizer"] = {{"lr", cfg.optim.lr},
                    {"step_size", cfg.optim.step_size},
                    {"epochs", cfg.optim.epochs},
                    {"seed", cfg.optim.seed}};
  j["mode"] = cfg.mode;
  j["detector"] = {{"name", cfg.detector.name},
                   {"weights", cfg.detector.weights},
                   {"resolution", cfg.detector.resolution},
                   {"train_scenes", cfg.detector.train_scenes},
                   {"train_epochs", cfg.detector.train_epochs}};
  j["diffusion"] = {{"steps", cfg.diffusion_steps},
                    {"sigma_last", cfg.diffusion_sigma},
                    {"channels", cfg.diffusion_channels}};
  j["train"] = {{"scenes_per_epoch", cfg.train.scenes_per_epoch},
                {"blend_lambda", cfg.train.blend_lambda},
                {"reflectance_jitter", cfg.train.reflectance_jitter}};
  return j;
}

RunConfig config_from_json(const json& j) {
  RunConfig cfg;
  cfg.schema_version = j.at("schema_version").get<int>();
  if (cfg.schema_version != 1)
    throw Error("pipeline",
                "unsupported config schema_version " + std::to_string(cfg.schema_version));
  const json& paths = j.at("paths");
  cfg.mesh_path = paths.at("mesh").get<std::string>();
  cfg.selection_path = paths.at("selection").get<std::string>();
  cfg.base_texture_path = paths.at("base_texture").get<std::string>();
  cfg.palette_path = paths.at("palette").get<std::string>();
  cfg.backgrounds_dir = paths.at("backgrounds").get<std::string>();
  cfg.output_dir = paths.at("output").get<std::string>();
  cfg.texture_resolution = j.at("texture_resolution").get<int>();
  const json& poses = j.at("poses");
  cfg.poses.elevation = range_from_json(poses.at("elevation"), "poses.elevation");
  cfg.poses.azimuth = range_from_json(poses.at("azimuth"), "poses.azimuth");
  cfg.poses.distance = range_from_json(poses.at("distance"), "poses.distance");
  const json& env = j.at("environment");
  cfg.env.ambient = vec3_from_json(env.at("ambient"), "environment.ambient");
  cfg.env.diffuse_color = env.at("diffuse_color").get<double>();
  cfg.env.specular = vec3_from_json(env.at("specular"), "environment.specular");
  cfg.env.shininess = env.at("shininess").get<double>();
  cfg.env.light_direction =
      vec3_from_json(env.at("light_direction"), "environment.light_direction");
  const json& loss = j.at("loss");
  cfg.loss.alpha = loss.at("alpha").get<double>();
  cfg.loss.beta = loss.at("beta").get<double>();
  cfg.loss.gamma = loss.at("gamma").get<double>();
  cfg.loss.mu = loss.at("mu").get<double>();
  cfg.loss.tau = loss.at("tau").get<double>();
  cfg.loss.c_ru = loss.at("c_ru").get<double>();
  const json& optim = j.at("optimizer");
  cfg.optim.lr = optim.at("lr").get<double>();
  cfg.optim.step_size = optim.at("step_size").get<double>();
  cfg.optim.epochs = optim.at("epochs").get<int>();
  cfg.optim.seed = optim.at("seed").get<std::uint64_t>();
  cfg.mode = j.at("mode").get<std::string>();
  const json& det = j.at("detector");
  cfg.detector.name = det.at("name").get<std::string>();
  cfg.detector.weights = det.at("weights").get<std::string>();
  cfg.detector.resolution = det.at("resolution").get<int>();
  cfg.detector.train_scenes = det.at("train_scenes").get<int>();
  cfg.detector.train_epochs = det.at("train_epochs").get<int>();
  const json& diff = j.at("diffusion");
  cfg.diffusion_steps = diff.at("steps").get<int>();
  cfg.diffusion_sigma = diff.at("sigma_last").get<double>();
  cfg.diffusion_channels = diff.at("channels").get<std::vector<int>>();
  const json& train = j.at("train");
  cfg.train.scenes_per_epoch = train.at("scenes_per_epoch").get<int>();
  cfg.train.blend_lambda = train.at("blend_lambda").get<double>();
  cfg.train.reflectance_jitter = train.at("reflectance_jitter").get<std::vector<double>>();
  return cfg;
}

void require_finite(double v, const std::string& name) {
  if (!std::isfinite(v)) throw Error("pipeline", "config field '" + name + "' is not finite");
}

void require_range(const std::array<double, 2>& r, const std::string& name) {
  require_finite(r[0], name);
  require_finite(r[1], name);
  if (r[0] > r[1]) throw Error("pipeline", "config range '" + name + "' has lo > hi");
}

void atomic_write_text(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw Error("pipeline", "cannot write " + tmp);
    os << text;
    if (!os) throw Error("pipeline", "short write to " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error("pipeline", "cannot move " + tmp + " into place: " + ec.message());
}

}  // namespace

DiffusionConfig RunConfig::diffusion_config() const {
  DiffusionConfig dc = DiffusionConfig::defaults(diffusion_steps, diffusion_sigma);
  dc.generator_channels = diffusion_channels;
  return dc;
}

void RunConfig::validate(bool check_paths) const {
  if (schema_version != 1)
    throw Error("pipeline", "unsupported config schema_version " + std::to_string(schema_version));
  if (mode != "one-step" && mode != "diffusion")
    throw Error("pipeline", "mode must be 'one-step' or 'diffusion', got '" + mode + "'");
  if (texture_resolution < 8)
    throw Error("pipeline", "texture resolution must be at least 8");
  if (mode == "diffusion" && texture_resolution % 8 != 0)
    throw Error("pipeline", "diffusion mode needs a texture resolution divisible by 8");

  require_range(poses.elevation, "poses.elevation");
  require_range(poses.azimuth, "poses.azimuth");
  require_range(poses.distance, "poses.distance");
  if (poses.elevation[0] < -90.0 || poses.elevation[1] > 90.0)
    throw Error("pipeline", "poses.elevation must stay within [-90, 90]");
  if (poses.distance[0] <= 0.0)
    throw Error("pipeline", "poses.distance must be positive");
  env.validate();

  const std::pair<const char*, double> weights[] = {
      {"loss.alpha", loss.alpha}, {"loss.beta", loss.beta}, {"loss.gamma", loss.gamma},
      {"loss.mu", loss.mu},       {"loss.tau", loss.tau}};
  for (const auto& [name, v] : weights) {
    require_finite(v, name);
    if (v < 0.0) throw Error("pipeline", std::string("config field '") + name + "' is negative");
  }
  require_finite(loss.c_ru, "loss.c_ru");
  if (loss.c_ru <= 0.0 || loss.c_ru >= 0.5)
    throw Error("pipeline", "loss.c_ru must lie in (0, 0.5)");

  require_finite(optim.lr, "optimizer.lr");
  if (optim.lr <= 0.0) throw Error("pipeline", "optimizer.lr must be positive");
  require_finite(optim.step_size, "optimizer.step_size");
  if (optim.step_size == 0.0) throw Error("pipeline", "optimizer.step_size must be nonzero");
  if (optim.epochs < 0) throw Error("pipeline", "optimizer.epochs must be >= 0");

  if (detector.name.empty()) throw Error("pipeline", "detector.name is empty");
  if (detector.resolution < 32 || detector.resolution % 32 != 0)
    throw Error("pipeline", "detector.resolution must be a positive multiple of 32");
  if (detector.weights.empty()) {
    if (detector.train_scenes < 10)
      throw Error("pipeline", "detector.train_scenes must be >= 10 for in-run training");
    if (detector.train_epochs < 1)
      throw Error("pipeline", "detector.train_epochs must be >= 1 for in-run training");
  }

  try {
    diffusion_config().validate();
  } catch (const Error& e) {
    throw Error("pipeline", std::string("diffusion settings rejected: ") + e.what());
  }

  if (train.scenes_per_epoch < 1)
    throw Error("pipeline", "train.scenes_per_epoch must be >= 1");
  require_finite(train.blend_lambda, "train.blend_lambda");
  if (train.blend_lambda < 0.0 || train.blend_lambda > 1.0)
    throw Error("pipeline", "train.blend_lambda must lie in [0, 1]");
  for (double v : train.reflectance_jitter) {
    require_finite(v, "train.reflectance_jitter");
    if (v <= 0.0) throw Error("pipeline", "train.reflectance_jitter entries must be positive");
  }

  if (!check_paths) return;
  const std::pair<const char*, const std::string*> required[] = {
      {"mesh", &mesh_path}, {"selection", &selection_path}, {"palette", &palette_path}};
  for (const auto& [what, path] : required) {
    if (path->empty())
      throw Error("pipeline", std::string("config path '") + what + "' is empty");
    if (!fs::exists(*path))
      throw Error("pipeline", std::string(what) + " file not found: " + *path);
  }
  if (!base_texture_path.empty() && !fs::exists(base_texture_path))
    throw Error("pipeline", "base texture file not found: " + base_texture_path);
  if (backgrounds_dir.empty() || !fs::is_directory(backgrounds_dir))
    throw Error("pipeline", "backgrounds directory not found: " + backgrounds_dir);
  if (!detector.weights.empty() && !fs::exists(detector.weights))
    throw Error("pipeline", "detector weights not found: " + detector.weights);
  if (output_dir.empty()) throw Error("pipeline", "output directory is not set");
}

std::uint64_t RunConfig::hash() const { return fnv1a(config_to_json(*this).dump()); }

RunConfig RunConfig::preset(const std::string& name) {
  RunConfig cfg;
  if (name == "desk") {
    cfg.texture_resolution = 48;
    cfg.poses.elevation = {15.0, 45.0};
    cfg.poses.azimuth = {0.0, 360.0};
    cfg.poses.distance = {3.2, 5.0};
    cfg.detector.resolution = 64;
    cfg.detector.train_scenes = 150;
    cfg.detector.train_epochs = 10;
    cfg.diffusion_steps = 6;
    cfg.diffusion_channels = {16, 32, 64};
    cfg.train.scenes_per_epoch = 8;
  } else if (name == "paper") {
    cfg.texture_resolution = 480;
    cfg.poses.elevation = {0.0, 50.0};
    cfg.poses.azimuth = {0.0, 360.0};
    cfg.poses.distance = {5.0, 50.0};
    cfg.detector.resolution = 128;
    cfg.detector.train_scenes = 500;
    cfg.detector.train_epochs = 30;
    cfg.diffusion_steps = 10;
    cfg.diffusion_channels = {32, 64, 128};
    cfg.train.scenes_per_epoch = 16;
  } else {
    throw Error("pipeline", "unknown preset '" + name + "' (valid: desk, paper)");
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("pipeline", "cannot open config: " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw Error("pipeline", "config parse failure in " + path + ": " + e.what());
  }
  try {
    return config_from_json(j);
  } catch (const json::exception& e) {
    throw Error("pipeline", "config field failure in " + path + ": " + e.what());
  }
}

void save_run_config(const RunConfig& cfg, const std::string& path) {
  atomic_write_text(path, config_to_json(cfg).dump(2) + "\n");
}

void save_manifest(const RunManifest& manifest, const std::string& path) {
  const auto require = [](const std::string& p, const char* what) {
    if (p.empty())
      throw Error("pipeline", std::string("manifest field '") + what + "' is empty");
    if (!fs::exists(p))
      throw Error("pipeline", std::string("manifest refers to a missing file: ") + p);
  };
  require(manifest.detector_weights, "detector_weights");
  require(manifest.loss_csv, "loss_csv");
  require(manifest.final_texture, "final_texture");
  require(manifest.final_mask, "final_mask");
  require(manifest.sticker, "sticker");
  for (const auto& p : manifest.checkpoints)
    if (!fs::exists(p)) throw Error("pipeline", "manifest refers to a missing checkpoint: " + p);
  for (const auto& p : manifest.reports)
    if (!fs::exists(p)) throw Error("pipeline", "manifest refers to a missing report: " + p);

  json j;
  j["config_hash"] = hex_u64(manifest.config_hash);
  j["code_version"] = manifest.code_version;
  j["seed"] = manifest.seed;
  j["detector_weights"] = manifest.detector_weights;
  j["checkpoints"] = manifest.checkpoints;
  j["loss_csv"] = manifest.loss_csv;
  j["final_texture"] = manifest.final_texture;
  j["final_mask"] = manifest.final_mask;
  j["sticker"] = manifest.sticker;
  j["reports"] = manifest.reports;
  atomic_write_text(path, j.dump(2) + "\n");
}

RunManifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("pipeline", "cannot open manifest: " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw Error("pipeline", "manifest parse failure in " + path + ": " + e.what());
  }
  RunManifest m;
  try {
    m.config_hash = parse_hex_u64(j.at("config_hash").get<std::string>(), "config_hash");
    m.code_version = j.at("code_version").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.detector_weights = j.at("detector_weights").get<std::string>();
    m.checkpoints = j.at("checkpoints").get<std::vector<std::string>>();
    m.loss_csv = j.at("loss_csv").get<std::string>();
    m.final_texture = j.at("final_texture").get<std::string>();
    m.final_mask = j.at("final_mask").get<std::string>();
    m.sticker = j.at("sticker").get<std::string>();
    m.reports = j.at("reports").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw Error("pipeline", "manifest field failure in " + path + ": " + e.what());
  }
  return m;
}

OutputLock::OutputLock(const std::string& dir) {
  if (dir.empty()) throw Error("pipeline", "output directory is not set");
  fs::create_directories(dir);
  path_ = (fs::path(dir) / ".lock").string();
  fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd_ < 0)
    throw Error("pipeline", "output directory is locked by another run: " + path_ +
                                " (remove the file if the owner is gone)");
  const std::string line = std::to_string(static_cast<long>(::getpid())) + "\n";
  if (::write(fd_, line.data(), line.size()) < 0) {
    // The lock still holds; the pid note is best effort.
  }
}

OutputLock::~OutputLock() {
  if (fd_ >= 0) {
    ::close(fd_);
    ::unlink(path_.c_str());
  }
}

std::vector<LabeledBackground> load_backgrounds(const std::string& dir) {
  if (!fs::is_directory(dir))
    throw Error("pipeline", "backgrounds directory not found: " + dir);
  std::vector<std::string> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp")
      files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error("pipeline", "no background images under " + dir);

  std::vector<LabeledBackground> out;
  out.reserve(files.size());
  for (const auto& f : files) {
    LabeledBackground bg;
    bg.path = f;
    bg.image = load_image(f);
    if (bg.image.channels != 3)
      throw Error("pipeline", "background must be RGB: " + f);
    const std::string parent = fs::path(f).parent_path().filename().string();
    bg.label = (parent == "grass" || parent == "desert" || parent == "highway") ? parent : "other";
    out.push_back(std::move(bg));
  }
  return out;
}

std::vector<AttackScene> sample_attack_scenes(int count, const PoseRanges& ranges,
                                              const std::vector<LabeledBackground>& backgrounds,
                                              std::uint64_t seed,
                                              const std::string& stream_name) {
  if (count < 1) throw Error("pipeline", "scene count must be >= 1");
  if (backgrounds.empty()) throw Error("pipeline", "no backgrounds to sample from");
  Rng rng = Rng::stream(seed, stream_name);
  std::vector<AttackScene> scenes;
  scenes.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    AttackScene s;
    s.pose = sample_pose(ranges, rng);
    const int bi = rng.uniform_int(0, static_cast<int>(backgrounds.size()) - 1);
    s.background = backgrounds[static_cast<std::size_t>(bi)].image;
    scenes.push_back(std::move(s));
  }
  return scenes;
}

std::vector<LabeledScene> synth_detector_scenes(const TriMesh& mesh, const Image& texture,
                                                const Environment& env, int count,
                                                const PoseRanges& ranges,
                                                const std::vector<LabeledBackground>& backgrounds,
                                                int resolution, std::uint64_t seed) {
  if (count < 1) throw Error("pipeline", "scene count must be >= 1");
  if (backgrounds.empty()) throw Error("pipeline", "no backgrounds to sample from");
  mesh.validate();
  env.validate();
  Rng rng = Rng::stream(seed, "detector-scenes");
  std::vector<LabeledScene> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const bool negative = rng.uniform() < 0.2;
    const int bi = rng.uniform_int(0, static_cast<int>(backgrounds.size()) - 1);
    Image canvas = resize_bilinear(backgrounds[static_cast<std::size_t>(bi)].image, resolution,
                                   resolution);
    LabeledScene scene;
    if (negative) {
      scene.image = std::move(canvas);
      scene.has_target = false;
    } else {
      const ScenePose pose = sample_pose(ranges, rng);
      const FragmentMap frags = rasterize(mesh, pose, resolution, resolution);
      const RenderOutput shaded = shade_phong(frags, mesh, texture, env);
      scene.image = composite(shaded, canvas);
      scene.has_target = true;
      scene.gt = project_gt_box(mesh, pose, resolution, resolution);
    }
    out.push_back(std::move(scene));
  }
  return out;
}

std::shared_ptr<Detector> resolve_detector(const RunConfig& cfg, const TriMesh& mesh,
                                           const Image& base_texture,
                                           const std::vector<LabeledBackground>& backgrounds,
                                           std::string* weights_path_out) {
  if (!cfg.detector.weights.empty()) {
    if (weights_path_out) *weights_path_out = cfg.detector.weights;
    return make_detector(cfg.detector.name, cfg.detector.weights);
  }
  if (cfg.detector.name != "toy")
    throw Error("pipeline", "detector '" + cfg.detector.name +
                                "' needs a weights path; only the toy detector trains in-run");
  const auto scenes =
      synth_detector_scenes(mesh, base_texture, cfg.env, cfg.detector.train_scenes, cfg.poses,
                            backgrounds, cfg.detector.resolution, cfg.optim.seed);
  ToyTrainReport report;
  ToyDetector toy = toy_detector_train(scenes, cfg.detector.train_epochs, cfg.optim.seed, 1e-3,
                                       0.2, 0.9, &report);
  fs::create_directories(cfg.output_dir);
  const std::string path = (fs::path(cfg.output_dir) / "toy_detector.weights").string();
  toy.save(path);
  if (weights_path_out) *weights_path_out = path;
  return std::make_shared<ToyDetector>(std::move(toy));
}

namespace {

struct RunInputs {
  TriMesh mesh;
  FaceSelection selection;
  RegionMask mask;     // at the configured texture resolution
  Image base_texture;  // RGB, same resolution
};

RunInputs load_inputs(const RunConfig& cfg) {
  RunInputs in;
  in.mesh = load_mesh(cfg.mesh_path);
  in.mesh.validate();
  in.selection = load_face_selection(cfg.selection_path);
  if (in.selection.empty())
    throw Error("pipeline", "empty camouflage region: " + cfg.selection_path);
  in.selection.validate(in.mesh);
  in.mask = bake_region_mask(in.mesh, in.selection, cfg.texture_resolution,
                             cfg.texture_resolution);

  Image base;
  if (!cfg.base_texture_path.empty()) base = load_image(cfg.base_texture_path);
  else if (!in.mesh.base_texture.empty()) base = in.mesh.base_texture;
  else base = Image(cfg.texture_resolution, cfg.texture_resolution, 3, 0.5);
  if (base.channels != 3)
    throw Error("pipeline", "base texture must be RGB: " + cfg.base_texture_path);
  if (base.height != cfg.texture_resolution || base.width != cfg.texture_resolution)
    base = resize_bilinear(base, cfg.texture_resolution, cfg.texture_resolution);
  in.base_texture = std::move(base);
  return in;
}

LossConfig loss_with_palette(const RunConfig& cfg) {
  LossConfig loss = cfg.loss;
  loss.palette = load_palette(cfg.palette_path);
  loss.validate();
  return loss;
}

// Texture argument fallbacks: explicit path, then the mesh's own texture,
// then flat mid-gray.
Image render_texture_arg(const RunConfig& cfg, const TriMesh& mesh, const std::string& path) {
  Image texture;
  if (!path.empty()) {
    if (!fs::exists(path)) throw Error("pipeline", "texture file not found: " + path);
    texture = load_image(path);
  } else if (!mesh.base_texture.empty()) {
    texture = mesh.base_texture;
  } else {
    texture = Image(cfg.texture_resolution, cfg.texture_resolution, 3, 0.5);
  }
  if (texture.channels != 3) throw Error("pipeline", "texture must be RGB: " + path);
  return texture;
}

Image render_background_arg(const std::string& path, int res) {
  if (path.empty()) return Image(res, res, 3, 0.5);
  if (!fs::exists(path)) throw Error("pipeline", "background file not found: " + path);
  const Image bg = load_image(path);
  if (bg.channels != 3) throw Error("pipeline", "background must be RGB: " + path);
  return resize_bilinear(bg, res, res);
}

void save_to(const Image& img, const std::string& path, bool mask) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  if (mask) save_mask_png(img, path);
  else save_png8(img, path);
}

void write_loss_csv(const std::string& path, const TrainLog& log, int scenes_per_epoch,
                    std::uint64_t seed, std::uint64_t config_hash, const std::string& mode) {
  std::ofstream os(path);
  if (!os) throw Error("pipeline", "cannot write " + path);
  os << "# seed=" << seed << " config=" << hex_u64(config_hash) << " mode=" << mode << "\n";
  os << "step,epoch,l_iou,l_obj,l_adv,l_tv,l_nps,l_cr,total\n";
  os << std::setprecision(17);
  for (std::size_t i = 0; i < log.steps.size(); ++i) {
    const LossReport& r = log.steps[i];
    os << (i + 1) << "," << (i / static_cast<std::size_t>(scenes_per_epoch) + 1) << "," << r.l_iou
       << "," << r.l_obj << "," << r.l_adv << "," << r.l_tv << "," << r.l_nps << "," << r.l_cr
       << "," << r.total << "\n";
  }
  if (!os) throw Error("pipeline", "short write to " + path);
}

}  // namespace

BakeResult cmd_bake(const RunConfig& cfg) {
  cfg.validate(true);
  OutputLock lock(cfg.output_dir);
  const RunInputs in = load_inputs(cfg);
  if (in.mask.nonzero_count() == 0)
    throw Error("pipeline", "selection bakes to an empty mask at resolution " +
                                std::to_string(cfg.texture_resolution));

  BakeResult out;
  out.mask_path = (fs::path(cfg.output_dir) / "region_mask.png").string();
  out.sticker_path = (fs::path(cfg.output_dir) / "sticker_preview.png").string();
  out.manifest_path = (fs::path(cfg.output_dir) / "bake.json").string();
  save_mask_png(in.mask.mask, out.mask_path);
  export_sticker(in.base_texture, in.mask, out.sticker_path);

  json j;
  j["config_hash"] = hex_u64(cfg.hash());
  j["mask"] = out.mask_path;
  j["sticker"] = out.sticker_path;
  j["selected_faces"] = in.selection.face_ids.size();
  j["mask_pixels"] = in.mask.nonzero_count();
  atomic_write_text(out.manifest_path, j.dump(2) + "\n");
  return out;
}

RunManifest cmd_train(const RunConfig& cfg) {
  cfg.validate(true);
  OutputLock lock(cfg.output_dir);
  const RunInputs in = load_inputs(cfg);
  if (in.mask.nonzero_count() == 0)
    throw Error("pipeline", "selection bakes to an empty mask at resolution " +
                                std::to_string(cfg.texture_resolution));
  const LossConfig loss = loss_with_palette(cfg);
  const auto backgrounds = load_backgrounds(cfg.backgrounds_dir);

  RunManifest manifest;
  manifest.config_hash = cfg.hash();
  manifest.code_version = version_string();
  manifest.seed = cfg.optim.seed;
  save_run_config(cfg, (fs::path(cfg.output_dir) / "config.json").string());

  const auto detector = resolve_detector(cfg, in.mesh, in.base_texture, backgrounds,
                                         &manifest.detector_weights);
  if (!detector->differentiable())
    throw Error("pipeline", "detector '" + detector->name() +
                                "' exposes no gradients; training needs a differentiable one");

  const auto scenes = sample_attack_scenes(cfg.train.scenes_per_epoch, cfg.poses, backgrounds,
                                           cfg.optim.seed, "attack-scenes");

  AttackOptions opts;
  opts.env = cfg.env;
  opts.lr = cfg.optim.lr;
  opts.step_size = cfg.optim.step_size;
  opts.blend_lambda = cfg.train.blend_lambda;
  opts.reflectance_jitter = cfg.train.reflectance_jitter;
  const std::string ckpt_dir = (fs::path(cfg.output_dir) / "checkpoints").string();
  opts.checkpoint_dir = ckpt_dir;

  TrainLog log;
  Image final_texture;
  if (cfg.mode == "diffusion") {
    GeneratorState state(in.base_texture, in.mask, cfg.diffusion_config(), cfg.optim.seed);
    log = train_diffusion(state, in.mesh, scenes, *detector, loss, cfg.optim.epochs, opts);
    final_texture = diffusion_generate(state, cfg.optim.seed).texels;
    for (int e = 1; e <= cfg.optim.epochs; ++e)
      manifest.checkpoints.push_back(
          (fs::path(ckpt_dir) / ("generator_epoch_" + std::to_string(e) + ".ckpt")).string());
  } else {
    AdvTexture texture = init_texture(cfg.texture_resolution, cfg.texture_resolution,
                                      in.base_texture, in.mask, cfg.optim.seed);
    log = train_one_step(texture, in.mesh, scenes, *detector, loss, cfg.optim.epochs, opts);
    final_texture = texture.texels;
    for (int e = 1; e <= cfg.optim.epochs; ++e)
      manifest.checkpoints.push_back(
          (fs::path(ckpt_dir) / ("texture_epoch_" + std::to_string(e) + ".png")).string());
  }

  manifest.loss_csv = (fs::path(cfg.output_dir) / "loss_log.csv").string();
  write_loss_csv(manifest.loss_csv, log, cfg.train.scenes_per_epoch, cfg.optim.seed,
                 manifest.config_hash, cfg.mode);
  manifest.final_texture = (fs::path(cfg.output_dir) / "final_texture.png").string();
  save_png16(final_texture, manifest.final_texture);
  manifest.final_mask = (fs::path(cfg.output_dir) / "final_mask.png").string();
  save_mask_png(in.mask.mask, manifest.final_mask);
  manifest.sticker = (fs::path(cfg.output_dir) / "sticker.png").string();
  export_sticker(final_texture, in.mask, manifest.sticker);
  save_manifest(manifest, (fs::path(cfg.output_dir) / "manifest.json").string());
  return manifest;
}

void cmd_render(const RunConfig& cfg, const std::string& texture_path, const ScenePose& pose,
                const std::string& background_path, const std::string& out_png,
                const std::string& silhouette_png) {
  if (cfg.mesh_path.empty() || !fs::exists(cfg.mesh_path))
    throw Error("pipeline", "mesh file not found: " + cfg.mesh_path);
  cfg.env.validate();
  TriMesh mesh = load_mesh(cfg.mesh_path);
  mesh.validate();
  const Image texture = render_texture_arg(cfg, mesh, texture_path);

  const int res = cfg.detector.resolution;
  const FragmentMap frags = rasterize(mesh, pose, res, res);
  const RenderOutput shaded = shade_phong(frags, mesh, texture, cfg.env);
  const Image background = render_background_arg(background_path, res);
  save_to(composite(shaded, background), out_png, false);
  if (!silhouette_png.empty()) save_to(shaded.silhouette, silhouette_png, true);
}

namespace {

// Integer pixel rectangle of a box, clipped to the image.
Image crop_box(const Image& img, const Box& box) {
  const int x1 = std::clamp(static_cast<int>(std::floor(box.x1)), 0, img.width);
  const int y1 = std::clamp(static_cast<int>(std::floor(box.y1)), 0, img.height);
  const int x2 = std::clamp(static_cast<int>(std::ceil(box.x2)), 0, img.width);
  const int y2 = std::clamp(static_cast<int>(std::ceil(box.y2)), 0, img.height);
  Image out(std::max(0, y2 - y1), std::max(0, x2 - x1), img.channels, 0.0);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < out.channels; ++c) out.at(y, x, c) = img.at(y1 + y, x1 + x, c);
  return out;
}

// Mean target-crop similarity against the clean background, per scene class
// and per texture. Poses cover the sweep distances and pitches at four
// azimuths; invisible targets and sub-2x2 crops are skipped.
EvalReport concealment_eval(const TriMesh& mesh,
                            const std::vector<std::pair<std::string, Image>>& textures,
                            const Environment& env,
                            const std::vector<LabeledBackground>& backgrounds,
                            const SweepGrid& grid, const Detector& detector) {
  grid.validate();
  const int res = detector.input_resolution();
  std::map<std::string, std::vector<const LabeledBackground*>> by_class;
  for (const auto& bg : backgrounds) by_class[bg.label].push_back(&bg);

  std::vector<ScenePose> poses;
  for (double d : grid.distances)
    for (double p : grid.pitches)
      for (double a : {0.0, 90.0, 180.0, 270.0}) poses.push_back({p, a, d});

  EvalReport report;
  for (const auto& [stem, texture] : textures) {
    for (const auto& [label, plates] : by_class) {
      double csim_sum = 0.0, ssim_sum = 0.0;
      long n = 0;
      for (const LabeledBackground* plate : plates) {
        const Image canvas = resize_bilinear(plate->image, res, res);
        for (const ScenePose& pose : poses) {
          GroundTruth gt;
          try {
            gt = project_gt_box(mesh, pose, res, res);
          } catch (const Error&) {
            continue;
          }
          const FragmentMap frags = rasterize(mesh, pose, res, res);
          if (frags.covered_count() == 0) continue;
          const RenderOutput shaded = shade_phong(frags, mesh, texture, env);
          const Image scene = composite(shaded, canvas);
          const Image scene_crop = crop_box(scene, gt.box);
          if (scene_crop.height < 2 || scene_crop.width < 2) continue;
          const Image clean_crop = crop_box(canvas, gt.box);
          csim_sum += csim(scene_crop, clean_crop);
          ssim_sum += ssim(scene_crop, clean_crop);
          n += 1;
        }
      }
      if (n == 0) continue;
      report.add("csim", label + "/" + stem, csim_sum / static_cast<double>(n), n);
      report.add("ssim", label + "/" + stem, ssim_sum / static_cast<double>(n), n);
    }
  }
  if (report.rows.empty())
    throw Error("pipeline", "concealment sweep produced no visible target crops");
  return report;
}

std::shared_ptr<Detector> eval_detector(const RunConfig& cfg) {
  if (!cfg.detector.weights.empty())
    return make_detector(cfg.detector.name, cfg.detector.weights);
  const fs::path trained = fs::path(cfg.output_dir) / "toy_detector.weights";
  if (cfg.detector.name == "toy" && fs::exists(trained))
    return make_detector("toy", trained.string());
  throw Error("pipeline",
              "no detector weights available; train first or set detector.weights");
}

SweepGrid sweep_grid_preset(const std::string& name) {
  SweepGrid grid;  // defaults are the desk grid
  if (name == "desk") return grid;
  if (name == "paper") {
    grid.distances = {5, 10, 20, 30, 40, 50};
    grid.pitches = {0, 10, 20, 30, 40, 50};
    grid.azimuth_step = 3.0;
    return grid;
  }
  throw Error("pipeline", "unknown sweep grid '" + name + "' (valid: desk, paper)");
}

std::vector<LabeledBackground> filter_backgrounds(std::vector<LabeledBackground> backgrounds,
                                                  const std::vector<std::string>& keep) {
  if (keep.empty()) return backgrounds;
  std::vector<LabeledBackground> kept;
  for (auto& bg : backgrounds)
    if (std::find(keep.begin(), keep.end(), bg.label) != keep.end())
      kept.push_back(std::move(bg));
  if (kept.empty()) throw Error("pipeline", "scene filter matched no backgrounds");
  return kept;
}

}  // namespace

std::vector<std::string> cmd_eval(const RunConfig& cfg,
                                  const std::vector<std::string>& texture_paths,
                                  const std::string& sweep, const std::string& grid_name,
                                  const std::vector<std::string>& scene_filter) {
  if (sweep != "pose" && sweep != "occlusion" && sweep != "reflectance" &&
      sweep != "concealment")
    throw Error("pipeline", "unknown sweep '" + sweep +
                                "' (valid: pose, occlusion, reflectance, concealment)");
  cfg.validate(true);
  if (texture_paths.empty()) throw Error("pipeline", "eval needs at least one texture path");

  TriMesh mesh = load_mesh(cfg.mesh_path);
  mesh.validate();
  std::vector<std::pair<std::string, Image>> textures;
  for (const auto& p : texture_paths) {
    if (!fs::exists(p)) throw Error("pipeline", "texture file not found: " + p);
    Image img = load_image(p);
    if (img.channels != 3) throw Error("pipeline", "texture must be RGB: " + p);
    textures.emplace_back(fs::path(p).stem().string(), std::move(img));
  }
  const auto detector = eval_detector(cfg);
  const SweepGrid grid = sweep_grid_preset(grid_name);

  EvalReport report;
  if (sweep == "concealment") {
    const auto backgrounds =
        filter_backgrounds(load_backgrounds(cfg.backgrounds_dir), scene_filter);
    report = concealment_eval(mesh, textures, cfg.env, backgrounds, grid, *detector);
  } else {
    std::vector<Image> plates;
    if (sweep != "pose") {
      for (const auto& bg :
           filter_backgrounds(load_backgrounds(cfg.backgrounds_dir), scene_filter))
        plates.push_back(bg.image);
    }
    for (const auto& [stem, texture] : textures) {
      EvalReport one;
      if (sweep == "pose") one = pose_sweep(mesh, texture, cfg.env, grid, *detector);
      else if (sweep == "occlusion")
        one = occlusion_sweep(mesh, texture, cfg.env, plates, grid, *detector);
      else
        one = reflectance_sweep(mesh, texture, cfg.env, plates, grid, grid.reflectances,
                                *detector);
      for (const auto& row : one.rows) {
        const std::string cell = textures.size() > 1 ? stem + "/" + row.cell : row.cell;
        report.add(row.metric, cell, row.value, row.image_count, row.source);
      }
    }
  }

  OutputLock lock(cfg.output_dir);
  const fs::path reports_dir = fs::path(cfg.output_dir) / "reports";
  fs::create_directories(reports_dir);
  const std::string csv_path = (reports_dir / (sweep + ".csv")).string();
  const std::string json_path = (reports_dir / (sweep + ".json")).string();
  report.write_csv(csv_path);
  report.write_summary_json(json_path);
  return {csv_path, json_path};
}

void cmd_render_grid(const RunConfig& cfg, const std::string& texture_path,
                     const std::string& grid_name, const std::string& background_path,
                     const std::string& out_png, const std::string& silhouette_png) {
  if (cfg.mesh_path.empty() || !fs::exists(cfg.mesh_path))
    throw Error("pipeline", "mesh file not found: " + cfg.mesh_path);
  cfg.env.validate();
  const SweepGrid grid = sweep_grid_preset(grid_name);
  grid.validate();
  TriMesh mesh = load_mesh(cfg.mesh_path);
  mesh.validate();
  const Image texture = render_texture_arg(cfg, mesh, texture_path);

  const int res = cfg.detector.resolution;
  const Image background = render_background_arg(background_path, res);
  const auto azimuths = grid.azimuths();
  const int rows = static_cast<int>(grid.distances.size() * grid.pitches.size());
  const int cols = static_cast<int>(azimuths.size());
  Image sheet(rows * res, cols * res, 3, 0.0);
  Image sil_sheet(rows * res, cols * res, 1, 0.0);

  for (std::size_t di = 0; di < grid.distances.size(); ++di)
    for (std::size_t pi = 0; pi < grid.pitches.size(); ++pi)
      for (std::size_t ai = 0; ai < azimuths.size(); ++ai) {
        const ScenePose pose{grid.pitches[pi], azimuths[ai], grid.distances[di]};
        const FragmentMap frags = rasterize(mesh, pose, res, res);
        const RenderOutput shaded = shade_phong(frags, mesh, texture, cfg.env);
        const Image tile = composite(shaded, background);
        const int oy = static_cast<int>(di * grid.pitches.size() + pi) * res;
        const int ox = static_cast<int>(ai) * res;
        for (int y = 0; y < res; ++y)
          for (int x = 0; x < res; ++x) {
            for (int c = 0; c < 3; ++c) sheet.at(oy + y, ox + x, c) = tile.at(y, x, c);
            sil_sheet.at(oy + y, ox + x, 0) = shaded.silhouette.at(y, x, 0);
          }
      }
  save_to(sheet, out_png, false);
  if (!silhouette_png.empty()) save_to(sil_sheet, silhouette_png, true);
}

namespace {

// Full-scale results from the published evaluation, for side-by-side reading
// next to locally measured rows. Counts are kept only where published.
void append_reference_rows(EvalReport& report) {
  const std::string src = "published reference (full scale)";
  const auto ref = [&](const std::string& metric, const std::string& cell, double value,
                       long n) { report.add(metric, "reference/" + cell, value, n, src); };

  ref("ap50", "victim/raw", 0.979, 0);
  ref("ap50", "victim/camo", 0.088, 0);
  ref("ap50", "victim/mean-drop", 0.716, 0);

  ref("ap50", "mode/gradient-local", 0.565, 0);
  ref("ap50", "mode/gradient-global", 0.493, 0);
  ref("ap50", "mode/diffuse-local", 0.415, 0);
  ref("ap50", "mode/diffuse-global", 0.088, 0);

  const double camo_refl[] = {97.91, 97.71, 97.08, 96.25, 96.87};
  const double raw_refl[] = {1.67, 1.67, 1.25, 0.00, 0.83};
  const int refl[] = {1, 3, 5, 10, 15};
  for (int i = 0; i < 5; ++i) {
    ref("asr", "reflectance/camo/r=" + std::to_string(refl[i]), camo_refl[i], 480);
    ref("asr", "reflectance/raw/r=" + std::to_string(refl[i]), raw_refl[i], 480);
  }

  const char* ranges[] = {"none", "small", "middle", "large"};
  const int dists[] = {5, 10, 15, 20};
  const double occl_camo[4][4] = {{100, 100, 100, 98.33},
                                  {100, 100, 100, 99.45},
                                  {100, 100, 100, 100},
                                  {100, 100, 100, 100}};
  const double occl_raw[4][4] = {{1.67, 0.00, 0.00, 0.00},
                                 {18.06, 3.05, 4.17, 7.23},
                                 {44.45, 30.39, 39.67, 56.67},
                                 {86.12, 82.23, 84.34, 89.37}};
  for (int r = 0; r < 4; ++r)
    for (int d = 0; d < 4; ++d) {
      const std::string cell =
          std::string(ranges[r]) + "/d=" + std::to_string(dists[d]);
      ref("asr", "occlusion/camo/" + cell, occl_camo[r][d], 0);
      ref("asr", "occlusion/raw/" + cell, occl_raw[r][d], 0);
    }

  const char* classes[] = {"desert", "grass", "highway"};
  const double conceal_none[] = {0.50, 0.35, 0.77};
  const double conceal_raw[] = {91.08, 92.59, 87.86};
  const double conceal_color[] = {83.56, 87.27, 84.89};
  for (int i = 0; i < 3; ++i) {
    ref("asr", std::string("concealment/") + classes[i] + "/none", conceal_none[i], 0);
    ref("asr", std::string("concealment/") + classes[i] + "/camou-raw", conceal_raw[i], 0);
    ref("asr", std::string("concealment/") + classes[i] + "/camou-color", conceal_color[i], 0);
  }

  ref("asr", "pose/raw/d=40", 2.92, 4320);
  ref("asr", "pose/raw/d=50", 15.14, 4320);
  ref("asr", "pose/camo/min-over-azimuth", 70.83, 4320);
}

void write_text_summary(const EvalReport& report, const std::string& path) {
  std::size_t metric_w = 6, cell_w = 4, source_w = 6;
  for (const auto& row : report.rows) {
    metric_w = std::max(metric_w, row.metric.size());
    cell_w = std::max(cell_w, row.cell.size());
    source_w = std::max(source_w, row.source.size());
  }
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(metric_w) + 2) << "metric"
     << std::setw(static_cast<int>(cell_w) + 2) << "cell" << std::setw(14) << "value"
     << std::setw(10) << "images" << "source\n";
  for (const auto& row : report.rows) {
    std::ostringstream value;
    value << std::fixed << std::setprecision(4) << row.value;
    os << std::left << std::setw(static_cast<int>(metric_w) + 2) << row.metric
       << std::setw(static_cast<int>(cell_w) + 2) << row.cell << std::setw(14) << value.str()
       << std::setw(10) << row.image_count << row.source << "\n";
  }
  atomic_write_text(path, os.str());
}

}  // namespace

std::string cmd_report(const RunConfig& cfg) {
  if (cfg.output_dir.empty()) throw Error("pipeline", "output directory is not set");
  fs::create_directories(cfg.output_dir);

  std::vector<std::string> csvs;
  const fs::path reports_dir = fs::path(cfg.output_dir) / "reports";
  if (fs::is_directory(reports_dir))
    for (const auto& entry : fs::directory_iterator(reports_dir))
      if (entry.is_regular_file() && entry.path().extension() == ".csv")
        csvs.push_back(entry.path().string());
  std::sort(csvs.begin(), csvs.end());

  EvalReport merged;
  for (const auto& p : csvs) {
    const EvalReport one = EvalReport::read_csv(p);
    const std::string stem = fs::path(p).stem().string();
    for (const auto& row : one.rows)
      merged.add(row.metric, stem + "/" + row.cell, row.value, row.image_count, row.source);
  }
  append_reference_rows(merged);

  const std::string json_path = (fs::path(cfg.output_dir) / "report_summary.json").string();
  merged.write_summary_json(json_path);
  write_text_summary(merged, (fs::path(cfg.output_dir) / "report_summary.txt").string());
  return json_path;
}

}  // namespace camo
