// Adversarial texture generation: direct gradient steps on texels and an
// iterative noise-to-texture generator trained end to end through the
// renderer and the detector.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "camo/ad.hpp"
#include "camo/detect.hpp"
#include "camo/geometry.hpp"
#include "camo/image.hpp"
#include "camo/losses.hpp"
#include "camo/render.hpp"
#include "camo/rng.hpp"

namespace camo {

// Texture under optimization. Unmasked texels always hold base-texture
// values; every update touches masked texels only.
struct AdvTexture {
  Image texels;     // HxWx3 in [0,1]
  RegionMask mask;  // same resolution
  std::uint64_t seed = 0;
};

struct DiffusionConfig {
  int steps = 10;                      // chain length K >= 1
  std::vector<double> sigma_schedule;  // sigma_k at index k-1, non-decreasing in k
  std::vector<int> generator_channels{32, 64, 128};  // down-path widths

  // sigma_k = sigma_last * (1/sqrt(2))^(steps - k): the chain starts at the
  // noisiest step k = K and anneals toward the output end k = 1.
  static DiffusionConfig defaults(int steps = 10, double sigma_last = 0.5);

  void validate() const;       // throws Error("texgen", ...)
  std::uint64_t hash() const;  // stable content hash, stored in checkpoints
};

// Generator parameters plus everything needed to resume training bitwise:
// Adam moments, the step counter, and the training-time noise stream.
struct GeneratorState {
  DiffusionConfig config;
  int height = 0;      // texture resolution; both sides divisible by 8
  int width = 0;
  Image base_texture;  // resampled to (height, width) at construction
  RegionMask mask;
  std::uint64_t seed = 0;
  std::vector<ad::Ptr> params;
  ad::AdamState opt;
  std::int64_t step = 0;  // optimization steps taken so far
  Rng noise_rng;          // chain noise during training; serialized

  GeneratorState() = default;
  GeneratorState(const Image& base, const RegionMask& mask, const DiffusionConfig& config,
                 std::uint64_t seed);

  std::uint64_t config_hash() const;  // config plus texture resolution

  // Versioned binary checkpoint. load() refuses truncated or edited files
  // and files whose stored hash disagrees with their stored config.
  void save(const std::string& path) const;
  static GeneratorState load(const std::string& path);
};

// One training scene: a camera pose over a background plate. The target box
// is recomputed per render resolution by projecting the mesh.
struct AttackScene {
  ScenePose pose;
  Image background;  // RGB, any resolution
};

struct AttackOptions {
  Environment env;
  double lr = 1e-3;        // Adam step size for generator training
  double step_size = 1e-2; // texel step magnitude |v| for direct updates
  double blend_lambda = 1.0;
  bool ascend = false;     // flip the direct update toward loss increase
  std::string checkpoint_dir;  // per-epoch checkpoints when nonempty
  // Per-step pool for env.diffuse_color; one entry is drawn per optimization
  // step so the texture trains over varying reflectance. Empty = fixed env.
  std::vector<double> reflectance_jitter;
};

struct TrainLog {
  std::vector<LossReport> steps;         // one entry per optimization step
  std::vector<double> epoch_mean_total;  // mean total loss per epoch
};

// Masked texels iid uniform [0,1] from the seed; unmasked texels copied from
// base (resampled to the mask resolution when needed).
AdvTexture init_texture(int height, int width, const Image& base, const RegionMask& mask,
                        std::uint64_t seed);

// Encoder-decoder forward pass with skip connections; input and output are
// [3,H,W]. Exposed so tests and custom chains can drive single steps.
ad::Ptr generator_forward(const GeneratorState& state, const ad::Ptr& input);

// Runs the chain T_{k-1} = G(T_k + eps_k) for k = K..1 from fresh noise
// drawn from rng, then squashes through a sigmoid. Returns the full-
// resolution [3,H,W] texture node. Throws on non-finite activations, naming
// the chain step.
ad::Ptr diffusion_chain(const GeneratorState& state, Rng& rng);

// Standalone sampling: chain seeded from `seed`, squashed, gated by the
// mask (unmasked texels come from the base texture).
AdvTexture diffusion_generate(const GeneratorState& state, std::uint64_t seed);

// Single-scene objective: blend the texture over the base, render the mesh
// under scene.pose, composite over the background, detect, and assemble the
// composite loss. texture_grad is d(total)/d(texels) at the input point.
struct SceneEval {
  LossReport report;
  Image texture_grad;
};
SceneEval eval_attack_loss(const Image& texels, const Image& base, const RegionMask& mask,
                           const TriMesh& mesh, const AttackScene& scene,
                           const Detector& detector, const LossConfig& loss_cfg,
                           const Environment& env, double blend_lambda = 1.0);

// texels - |v| * grad on masked texels, clamped to [0,1]; unmasked texels
// are untouched. The sign of v is ignored so the update always moves against
// the gradient; `ascend` flips it for experiments that want the raw signed
// step. Throws on shape mismatch, non-finite grad, or v == 0.
AdvTexture one_step_update(const AdvTexture& texture, const Image& grad, double v,
                           bool ascend = false);

// Direct-gradient training: one scene per step, evaluate the objective at
// the current texels, apply one_step_update. Works with any detector.
TrainLog train_one_step(AdvTexture& texture, const TriMesh& mesh,
                        const std::vector<AttackScene>& scenes, const Detector& detector,
                        const LossConfig& loss_cfg, int epochs, const AttackOptions& opts);

// Generator training: one scene per step, sample the chain, blend, render,
// detect, backpropagate the composite loss into the generator parameters and
// take an Adam step. Requires a differentiable detector; writes per-epoch
// checkpoints when opts.checkpoint_dir is set.
TrainLog train_diffusion(GeneratorState& state, const TriMesh& mesh,
                         const std::vector<AttackScene>& scenes, const Detector& detector,
                         const LossConfig& loss_cfg, int epochs, const AttackOptions& opts);

}  // namespace camo
