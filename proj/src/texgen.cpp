#include "camo/texgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace camo {

namespace {

constexpr int kKernel = 3;
constexpr int kGroups = 4;
constexpr double kLeakySlope = 0.1;
constexpr char kCheckpointMagic[] = "camokit-generator-v1";

void check_rgb(const Image& img, const char* what) {
  if (img.empty() || img.channels != 3)
    throw Error("texgen", std::string(what) + " must be a nonempty RGB image");
}

void check_mask_shape(const RegionMask& mask, int height, int width) {
  if (mask.mask.channels != 1 || mask.height() != height || mask.width() != width)
    throw Error("texgen", "mask must be single-channel at the texture resolution");
}

}  // namespace

DiffusionConfig DiffusionConfig::defaults(int steps, double sigma_last) {
  if (steps < 1) throw Error("texgen", "chain needs at least one step");
  if (!std::isfinite(sigma_last) || sigma_last < 0.0)
    throw Error("texgen", "sigma_last must be finite and >= 0");
  DiffusionConfig cfg;
  cfg.steps = steps;
  cfg.sigma_schedule.resize(static_cast<std::size_t>(steps));
  const double ratio = 1.0 / std::sqrt(2.0);
  for (int k = 1; k <= steps; ++k)
    cfg.sigma_schedule[static_cast<std::size_t>(k - 1)] = sigma_last * std::pow(ratio, steps - k);
  return cfg;
}

void DiffusionConfig::validate() const {
  if (steps < 1) throw Error("texgen", "chain needs at least one step");
  if (static_cast<int>(sigma_schedule.size()) != steps)
    throw Error("texgen", "sigma schedule length must equal the step count");
  for (double s : sigma_schedule)
    if (!std::isfinite(s) || s < 0.0)
      throw Error("texgen", "sigma values must be finite and >= 0");
  for (std::size_t i = 1; i < sigma_schedule.size(); ++i)
    if (sigma_schedule[i] < sigma_schedule[i - 1])
      throw Error("texgen",
                  "sigma schedule must be non-decreasing in k; the chain anneals from k = "
                  "steps down to 1");
  if (generator_channels.size() != 3)
    throw Error("texgen", "generator takes exactly three down-path widths");
  for (int c : generator_channels)
    if (c < 4 || c % 4 != 0)
      throw Error("texgen", "generator widths must be positive multiples of 4");
}

std::uint64_t DiffusionConfig::hash() const {
  std::ostringstream ss;
  ss << std::hexfloat << "steps=" << steps << ";sigma=";
  for (double s : sigma_schedule) ss << s << ',';
  ss << ";ch=";
  for (int c : generator_channels) ss << c << ',';
  return fnv1a(ss.str());
}

GeneratorState::GeneratorState(const Image& base, const RegionMask& mask_in,
                               const DiffusionConfig& config_in, std::uint64_t seed_in)
    : config(config_in), seed(seed_in) {
  config.validate();
  check_rgb(base, "base texture");
  if (mask_in.mask.channels != 1 || mask_in.height() <= 0 || mask_in.width() <= 0)
    throw Error("texgen", "mask must be a nonempty single-channel image");
  if (mask_in.height() % 8 != 0 || mask_in.width() % 8 != 0)
    throw Error("texgen", "texture resolution must be divisible by 8");
  if (mask_in.nonzero_count() == 0)
    throw Error("texgen", "mask has no set pixels, nothing to generate");
  height = mask_in.height();
  width = mask_in.width();
  mask = mask_in;
  base_texture = resize_bilinear(base, height, width);
  noise_rng = Rng::stream(seed, "texgen-noise");

  Rng rng = Rng::stream(seed, "generator-init");
  auto normal_leaf = [&](ad::Shape shape, double stddev) {
    ad::Array v(ad::shape_size(shape));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = stddev * rng.normal();
    return ad::leaf(std::move(shape), std::move(v));
  };
  auto fill_leaf = [&](ad::Shape shape, double value) {
    return ad::leaf(std::move(shape), ad::Array::Constant(ad::shape_size(shape), value));
  };
  auto conv_block = [&](int ci, int co) {
    const double stddev = std::sqrt(2.0 / (ci * kKernel * kKernel));
    params.push_back(normal_leaf({co, ci, kKernel, kKernel}, stddev));  // conv weight
    params.push_back(fill_leaf({co}, 0.0));                            // conv bias
    params.push_back(fill_leaf({co}, 1.0));                            // norm gain
    params.push_back(fill_leaf({co}, 0.0));                            // norm shift
  };

  const auto& ch = config.generator_channels;
  conv_block(3, ch[0]);             // down, stride 2
  conv_block(ch[0], ch[1]);         // down, stride 2
  conv_block(ch[1], ch[2]);         // down, stride 2
  conv_block(ch[2] + ch[1], ch[1]); // up, after skip concat
  conv_block(ch[1] + ch[0], ch[0]); // up, after skip concat
  conv_block(ch[0] + 3, ch[0]);     // up, after input concat
  const double out_std = std::sqrt(2.0 / (ch[0] * kKernel * kKernel));
  params.push_back(normal_leaf({3, ch[0], kKernel, kKernel}, out_std));  // output conv
  params.push_back(fill_leaf({3}, 0.0));
}

std::uint64_t GeneratorState::config_hash() const {
  std::ostringstream ss;
  ss << height << 'x' << width;
  return fnv1a(ss.str(), config.hash());
}

ad::Ptr generator_forward(const GeneratorState& state, const ad::Ptr& input) {
  if (state.params.empty()) throw Error("texgen", "generator state is uninitialized");
  if (input->shape != ad::Shape{3, state.height, state.width})
    throw Error("texgen", "generator expects a [3," + std::to_string(state.height) + "," +
                              std::to_string(state.width) + "] tensor");
  const auto& P = state.params;
  std::size_t p = 0;
  auto block = [&](const ad::Ptr& x, int stride) {
    auto y = ad::conv2d(x, P[p], P[p + 1], stride, 1);
    y = ad::group_norm(y, P[p + 2], P[p + 3], kGroups);
    y = ad::leaky_relu(y, kLeakySlope);
    p += 4;
    return y;
  };
  const auto x0 = block(input, 2);                                          // [c0, H/2]
  const auto x1 = block(x0, 2);                                             // [c1, H/4]
  const auto x2 = block(x1, 2);                                             // [c2, H/8]
  const auto u2 = block(ad::concat_channels(ad::upsample_nearest2x(x2), x1), 1);
  const auto u1 = block(ad::concat_channels(ad::upsample_nearest2x(u2), x0), 1);
  const auto u0 = block(ad::concat_channels(ad::upsample_nearest2x(u1), input), 1);
  return ad::conv2d(u0, P[p], P[p + 1], /*stride=*/1, /*pad=*/1);           // [3, H]
}

ad::Ptr diffusion_chain(const GeneratorState& state, Rng& rng) {
  if (state.params.empty()) throw Error("texgen", "generator state is uninitialized");
  const ad::Shape shape{3, state.height, state.width};
  const Eigen::Index n = ad::shape_size(shape);

  ad::Array start(n);
  for (Eigen::Index i = 0; i < n; ++i) start[i] = rng.normal();
  ad::Ptr t = ad::constant(shape, std::move(start));

  for (int k = state.config.steps; k >= 1; --k) {
    const double sig = state.config.sigma_schedule[static_cast<std::size_t>(k - 1)];
    ad::Array eps(n);
    for (Eigen::Index i = 0; i < n; ++i) eps[i] = sig * rng.normal();
    t = generator_forward(state, ad::add(t, ad::constant(shape, std::move(eps))));
    if (!t->value.allFinite())
      throw Error("texgen", "non-finite activation at chain step " + std::to_string(k));
  }
  return ad::sigmoid(t);
}

AdvTexture diffusion_generate(const GeneratorState& state, std::uint64_t seed) {
  Rng rng = Rng::stream(seed, "diffusion-generate");
  const auto node = diffusion_chain(state, rng);
  const Image gen = ad::image_from_tensor(*node);

  AdvTexture out;
  out.seed = seed;
  out.mask = state.mask;
  out.texels = state.base_texture;
  for (int y = 0; y < state.height; ++y)
    for (int x = 0; x < state.width; ++x) {
      if (state.mask.mask.at(y, x, 0) <= 0.5) continue;
      for (int c = 0; c < 3; ++c) out.texels.at(y, x, c) = gen.at(y, x, c);
    }
  return out;
}

AdvTexture init_texture(int height, int width, const Image& base, const RegionMask& mask,
                        std::uint64_t seed) {
  if (height <= 0 || width <= 0) throw Error("texgen", "texture resolution must be positive");
  check_rgb(base, "base texture");
  check_mask_shape(mask, height, width);

  AdvTexture out;
  out.seed = seed;
  out.mask = mask;
  out.texels = resize_bilinear(base, height, width);
  Rng rng = Rng::stream(seed, "texture-init");
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      if (mask.mask.at(y, x, 0) <= 0.5) continue;
      for (int c = 0; c < 3; ++c) out.texels.at(y, x, c) = rng.uniform();
    }
  return out;
}

namespace {

struct LossNode {
  ad::Ptr total;
  LossReport report;
};

// Blend -> render -> composite -> detect -> weighted objective, all on the
// graph rooted at texture_node ([3,H,W] at the mask resolution).
LossNode attack_loss_node(const ad::Ptr& texture_node, const Image& base, const RegionMask& mask,
                          const TriMesh& mesh, const AttackScene& scene, const Detector& detector,
                          const LossConfig& cfg, const Environment& env, double lambda) {
  const int res = detector.input_resolution();
  const auto blended = blend_textures_ad(base, texture_node, mask, lambda);
  const FragmentMap frags = rasterize(mesh, scene.pose, res, res);
  std::vector<int> pixels;
  const auto covered = shade_phong_ad(frags, mesh, blended, env, &pixels);
  const Image bg = resize_bilinear(scene.background, res, res);
  const auto image = composite_ad(covered, pixels, bg);

  const DiffDetections dets = detector.detect_ad(image);
  const GroundTruth gt = project_gt_box(mesh, scene.pose, res, res);
  const DiffAdvLoss adv = adv_loss_ad(dets, gt, cfg);

  const auto tv = tv_loss_ad(texture_node, mask);
  const auto nps = nps_loss_ad(texture_node, mask, cfg.palette);
  const Eigen::Vector3d c_r = background_mean_color(bg, gt.box);
  const auto cr = cr_loss_ad(texture_node, mask, c_r, cfg.c_ru);

  const auto total =
      ad::add(adv.value, ad::add(ad::scale(tv, cfg.gamma),
                                 ad::add(ad::scale(nps, cfg.mu), ad::scale(cr, cfg.tau))));

  LossReport parts;
  parts.l_iou = adv.l_iou;
  parts.l_obj = adv.l_obj;
  parts.l_adv = adv.l_adv;
  parts.l_tv = tv->value[0];
  parts.l_nps = nps->value[0];
  parts.l_cr = cr->value[0];
  LossReport report = total_loss(parts, cfg);  // names any non-finite part
  report.total = total->value[0];              // the quantity actually optimized
  return {total, report};
}

void validate_scenes(const std::vector<AttackScene>& scenes) {
  if (scenes.empty()) throw Error("texgen", "training needs at least one scene");
  for (const auto& s : scenes) {
    check_rgb(s.background, "scene background");
    if (!(s.pose.distance > 0.0)) throw Error("texgen", "scene pose distance must be positive");
  }
}

void validate_options(const AttackOptions& opts) {
  opts.env.validate();
  if (!std::isfinite(opts.lr) || opts.lr <= 0.0)
    throw Error("texgen", "learning rate must be positive");
  if (!(opts.blend_lambda >= 0.0 && opts.blend_lambda <= 1.0))
    throw Error("texgen", "blend lambda must lie in [0,1]");
  for (double r : opts.reflectance_jitter)
    if (!std::isfinite(r) || r <= 0.0)
      throw Error("texgen", "reflectance jitter values must be positive");
}

Environment jittered_env(const AttackOptions& opts, Rng& rng) {
  Environment env = opts.env;
  if (!opts.reflectance_jitter.empty()) {
    const int i = rng.uniform_int(0, static_cast<int>(opts.reflectance_jitter.size()) - 1);
    env.diffuse_color = opts.reflectance_jitter[static_cast<std::size_t>(i)];
  }
  return env;
}

// Re-attributes a failure to its optimization step, keeping the module name.
[[noreturn]] void rethrow_with_step(const Error& e, long long step, int epoch) {
  std::string msg = e.what();
  const std::string prefix = e.module_name() + ": ";
  if (msg.rfind(prefix, 0) == 0) msg = msg.substr(prefix.size());
  throw Error(e.module_name(), "optimization step " + std::to_string(step) + " (epoch " +
                                   std::to_string(epoch) + "): " + msg);
}

}  // namespace

SceneEval eval_attack_loss(const Image& texels, const Image& base, const RegionMask& mask,
                           const TriMesh& mesh, const AttackScene& scene,
                           const Detector& detector, const LossConfig& loss_cfg,
                           const Environment& env, double blend_lambda) {
  loss_cfg.validate();
  env.validate();
  check_rgb(texels, "texture");
  check_mask_shape(mask, texels.height, texels.width);

  const auto leaf = ad::tensor_from_image(texels, /*requires_grad=*/true);
  const LossNode loss =
      attack_loss_node(leaf, base, mask, mesh, scene, detector, loss_cfg, env, blend_lambda);
  ad::backward(loss.total);

  SceneEval out;
  out.report = loss.report;
  out.texture_grad = Image(texels.height, texels.width, 3, 0.0);
  if (leaf->grad.size() == leaf->value.size()) {
    const Eigen::Index plane = static_cast<Eigen::Index>(texels.height) * texels.width;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < texels.height; ++y)
        for (int x = 0; x < texels.width; ++x)
          out.texture_grad.at(y, x, c) =
              leaf->grad[c * plane + static_cast<Eigen::Index>(y) * texels.width + x];
  }
  return out;
}

AdvTexture one_step_update(const AdvTexture& texture, const Image& grad, double v, bool ascend) {
  check_rgb(texture.texels, "texture");
  check_mask_shape(texture.mask, texture.texels.height, texture.texels.width);
  if (!texture.texels.same_shape(grad))
    throw Error("texgen", "gradient resolution must match the texture");
  if (!std::isfinite(v) || v == 0.0)
    throw Error("texgen", "step size must be finite and nonzero");
  for (double g : grad.pix)
    if (!std::isfinite(g)) throw Error("texgen", "gradient contains non-finite values");

  // |v| guards callers that pass a signed step; the orientation is fixed by
  // `ascend`, not by the sign of v.
  const double step = (ascend ? 1.0 : -1.0) * std::abs(v);
  AdvTexture out = texture;
  for (int y = 0; y < grad.height; ++y)
    for (int x = 0; x < grad.width; ++x) {
      if (texture.mask.mask.at(y, x, 0) <= 0.5) continue;
      for (int c = 0; c < 3; ++c)
        out.texels.at(y, x, c) = clamp01(texture.texels.at(y, x, c) + step * grad.at(y, x, c));
    }
  return out;
}

TrainLog train_one_step(AdvTexture& texture, const TriMesh& mesh,
                        const std::vector<AttackScene>& scenes, const Detector& detector,
                        const LossConfig& loss_cfg, int epochs, const AttackOptions& opts) {
  loss_cfg.validate();
  validate_scenes(scenes);
  validate_options(opts);
  mesh.validate();
  check_rgb(texture.texels, "texture");
  check_mask_shape(texture.mask, texture.texels.height, texture.texels.width);
  if (texture.mask.nonzero_count() == 0)
    throw Error("texgen", "mask has no set pixels, nothing to optimize");
  if (epochs < 0) throw Error("texgen", "epoch count must be >= 0");

  Rng env_rng = Rng::stream(texture.seed, "one-step-env");
  TrainLog log;
  for (int e = 0; e < epochs; ++e) {
    double total_sum = 0.0;
    for (const auto& scene : scenes) {
      try {
        const Environment env = jittered_env(opts, env_rng);
        // Unmasked texels equal the base texture at all times, so the current
        // texels double as the blend base.
        const SceneEval ev = eval_attack_loss(texture.texels, texture.texels, texture.mask, mesh,
                                              scene, detector, loss_cfg, env, opts.blend_lambda);
        texture = one_step_update(texture, ev.texture_grad, opts.step_size, opts.ascend);
        log.steps.push_back(ev.report);
        total_sum += ev.report.total;
      } catch (const Error& err) {
        rethrow_with_step(err, static_cast<long long>(log.steps.size()) + 1, e + 1);
      }
    }
    log.epoch_mean_total.push_back(total_sum / static_cast<double>(scenes.size()));

    if (!opts.checkpoint_dir.empty()) {
      std::filesystem::create_directories(opts.checkpoint_dir);
      save_png16(texture.texels,
                 opts.checkpoint_dir + "/texture_epoch_" + std::to_string(e + 1) + ".png");
    }
  }
  return log;
}

TrainLog train_diffusion(GeneratorState& state, const TriMesh& mesh,
                         const std::vector<AttackScene>& scenes, const Detector& detector,
                         const LossConfig& loss_cfg, int epochs, const AttackOptions& opts) {
  loss_cfg.validate();
  validate_scenes(scenes);
  validate_options(opts);
  mesh.validate();
  if (state.params.empty()) throw Error("texgen", "generator state is uninitialized");
  if (epochs < 0) throw Error("texgen", "epoch count must be >= 0");
  if (!detector.differentiable())
    throw Error("texgen", "detector '" + detector.name() +
                              "' is not differentiable; use one-step mode or the toy detector");

  state.opt.lr = opts.lr;
  TrainLog log;
  for (int e = 0; e < epochs; ++e) {
    double total_sum = 0.0;
    for (const auto& scene : scenes) {
      try {
        // Draw order is fixed (env jitter, then chain noise) so checkpointed
        // runs resume on the identical stream.
        const Environment env = jittered_env(opts, state.noise_rng);
        const auto texture_node = diffusion_chain(state, state.noise_rng);
        const LossNode loss = attack_loss_node(texture_node, state.base_texture, state.mask, mesh,
                                               scene, detector, loss_cfg, env, opts.blend_lambda);
        ad::backward(loss.total);
        ad::adam_step(state.params, state.opt);
        state.step += 1;
        log.steps.push_back(loss.report);
        total_sum += loss.report.total;
      } catch (const Error& err) {
        rethrow_with_step(err, state.step + 1, e + 1);
      }
    }
    log.epoch_mean_total.push_back(total_sum / static_cast<double>(scenes.size()));

    if (!opts.checkpoint_dir.empty()) {
      std::filesystem::create_directories(opts.checkpoint_dir);
      const long long done = state.step / static_cast<long long>(scenes.size());
      state.save(opts.checkpoint_dir + "/generator_epoch_" + std::to_string(done) + ".ckpt");
    }
  }
  return log;
}

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4] = {0, 0, 0, 0};
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_u64(std::ostream& os, std::uint64_t v) {
  write_u32(os, static_cast<std::uint32_t>(v));
  write_u32(os, static_cast<std::uint32_t>(v >> 32));
}

std::uint64_t read_u64(std::istream& is) {
  const std::uint64_t lo = read_u32(is);
  const std::uint64_t hi = read_u32(is);
  return lo | (hi << 32);
}

void write_doubles(std::ostream& os, const double* data, std::size_t n) {
  write_u32(os, static_cast<std::uint32_t>(n));
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
}

void read_doubles(std::istream& is, double* data, std::size_t expect, const std::string& path) {
  if (read_u32(is) != expect)
    throw Error("texgen", "checkpoint block size mismatch: " + path);
  is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(expect * sizeof(double)));
}

void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
  const auto n = read_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  return s;
}

void write_image(std::ostream& os, const Image& img) {
  write_u32(os, static_cast<std::uint32_t>(img.height));
  write_u32(os, static_cast<std::uint32_t>(img.width));
  write_u32(os, static_cast<std::uint32_t>(img.channels));
  write_doubles(os, img.pix.data(), img.pix.size());
}

Image read_image(std::istream& is, const std::string& path) {
  const int h = static_cast<int>(read_u32(is));
  const int w = static_cast<int>(read_u32(is));
  const int c = static_cast<int>(read_u32(is));
  if (h <= 0 || w <= 0 || c <= 0 || h > 1 << 16 || w > 1 << 16 || c > 4)
    throw Error("texgen", "corrupt checkpoint image block: " + path);
  Image img(h, w, c);
  read_doubles(is, img.pix.data(), img.pix.size(), path);
  return img;
}

}  // namespace

void GeneratorState::save(const std::string& path) const {
  if (params.empty()) throw Error("texgen", "generator state is uninitialized");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("texgen", "cannot write checkpoint: " + path);
  os << kCheckpointMagic << '\n';
  write_u64(os, config_hash());

  write_u32(os, static_cast<std::uint32_t>(config.steps));
  write_doubles(os, config.sigma_schedule.data(), config.sigma_schedule.size());
  write_u32(os, static_cast<std::uint32_t>(config.generator_channels.size()));
  for (int c : config.generator_channels) write_u32(os, static_cast<std::uint32_t>(c));

  write_u32(os, static_cast<std::uint32_t>(height));
  write_u32(os, static_cast<std::uint32_t>(width));
  write_u64(os, seed);
  write_u64(os, static_cast<std::uint64_t>(step));
  write_image(os, base_texture);
  write_image(os, mask.mask);

  write_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    write_u32(os, static_cast<std::uint32_t>(p->shape.size()));
    for (int d : p->shape) write_u32(os, static_cast<std::uint32_t>(d));
    write_doubles(os, p->value.data(), static_cast<std::size_t>(p->value.size()));
  }

  const double hyper[4] = {opt.lr, opt.beta1, opt.beta2, opt.eps};
  write_doubles(os, hyper, 4);
  write_u64(os, static_cast<std::uint64_t>(opt.t));
  write_u32(os, static_cast<std::uint32_t>(opt.m.size()));
  for (const auto& m : opt.m) write_doubles(os, m.data(), static_cast<std::size_t>(m.size()));
  write_u32(os, static_cast<std::uint32_t>(opt.v.size()));
  for (const auto& v : opt.v) write_doubles(os, v.data(), static_cast<std::size_t>(v.size()));

  std::ostringstream rng_text;
  noise_rng.save(rng_text);
  write_string(os, rng_text.str());
  write_string(os, "end");
  if (!os) throw Error("texgen", "write failed: " + path);
}

GeneratorState GeneratorState::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("texgen", "cannot open checkpoint: " + path);
  std::string magic;
  std::getline(is, magic);
  if (magic != kCheckpointMagic)
    throw Error("texgen", "unrecognized checkpoint format: " + path);
  const std::uint64_t stored_hash = read_u64(is);

  DiffusionConfig cfg;
  cfg.steps = static_cast<int>(read_u32(is));
  if (cfg.steps < 1 || cfg.steps > 1 << 16)
    throw Error("texgen", "corrupt checkpoint: " + path);
  cfg.sigma_schedule.resize(static_cast<std::size_t>(cfg.steps));
  read_doubles(is, cfg.sigma_schedule.data(), cfg.sigma_schedule.size(), path);
  const auto nch = read_u32(is);
  if (nch != 3) throw Error("texgen", "corrupt checkpoint: " + path);
  cfg.generator_channels.resize(nch);
  for (auto& c : cfg.generator_channels) c = static_cast<int>(read_u32(is));
  cfg.validate();

  const int h = static_cast<int>(read_u32(is));
  const int w = static_cast<int>(read_u32(is));
  const std::uint64_t seed = read_u64(is);
  const auto step = static_cast<std::int64_t>(read_u64(is));
  const Image base = read_image(is, path);
  RegionMask mask;
  mask.mask = read_image(is, path);
  if (!is || base.height != h || base.width != w || mask.height() != h || mask.width() != w)
    throw Error("texgen", "corrupt checkpoint: " + path);

  GeneratorState st(base, mask, cfg, seed);
  if (st.config_hash() != stored_hash)
    throw Error("texgen", "checkpoint config hash mismatch: " + path);
  st.step = step;

  const auto count = read_u32(is);
  if (count != st.params.size())
    throw Error("texgen", "checkpoint parameter count mismatch: " + path);
  for (auto& p : st.params) {
    const auto ndim = read_u32(is);
    ad::Shape shape(ndim);
    for (auto& d : shape) d = static_cast<int>(read_u32(is));
    if (shape != p->shape) throw Error("texgen", "checkpoint parameter shape mismatch: " + path);
    read_doubles(is, p->value.data(), static_cast<std::size_t>(p->value.size()), path);
  }

  double hyper[4] = {0, 0, 0, 0};
  read_doubles(is, hyper, 4, path);
  st.opt.lr = hyper[0];
  st.opt.beta1 = hyper[1];
  st.opt.beta2 = hyper[2];
  st.opt.eps = hyper[3];
  st.opt.t = static_cast<std::int64_t>(read_u64(is));
  const auto mcount = read_u32(is);
  if (st.opt.t > 0 && mcount != st.params.size())
    throw Error("texgen", "checkpoint optimizer moment mismatch: " + path);
  st.opt.m.resize(mcount);
  for (std::size_t i = 0; i < mcount; ++i) {
    st.opt.m[i].resize(st.params[i]->value.size());
    read_doubles(is, st.opt.m[i].data(), static_cast<std::size_t>(st.opt.m[i].size()), path);
  }
  const auto vcount = read_u32(is);
  if (vcount != mcount) throw Error("texgen", "checkpoint optimizer moment mismatch: " + path);
  st.opt.v.resize(vcount);
  for (std::size_t i = 0; i < vcount; ++i) {
    st.opt.v[i].resize(st.params[i]->value.size());
    read_doubles(is, st.opt.v[i].data(), static_cast<std::size_t>(st.opt.v[i].size()), path);
  }

  std::istringstream rng_text(read_string(is));
  st.noise_rng.load(rng_text);
  if (read_string(is) != "end" || !is)
    throw Error("texgen", "truncated checkpoint: " + path);
  return st;
}

}  // namespace camo
