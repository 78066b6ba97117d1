#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "duomo/augment.hpp"
#include "duomo/backbone.hpp"
#include "duomo/body.hpp"
#include "duomo/condition.hpp"
#include "duomo/diffusion.hpp"
#include "duomo/motion.hpp"
#include "duomo/synth.hpp"

// Losses, normalization, checkpoints, and the two training loops: the
// camera-space model first, then the world-space model conditioned on the
// frozen camera model's lifted estimates.
namespace duomo::training {

using diffusion::Tensor;

// Per-channel statistics for the diffusion variables. The first world frame
// carries an absolute position (the anchored velocity), so it gets its own
// statistics.
struct NormStats {
  Eigen::VectorXd p_mean, p_std;  // V*3 mesh channels, vertex-major xyz
  Eigen::Vector3d r_mean = Eigen::Vector3d::Zero();  // camera root
  Eigen::Vector3d r_std = Eigen::Vector3d::Ones();
  Eigen::Vector3d v_mean = Eigen::Vector3d::Zero();  // world velocity, t >= 2
  Eigen::Vector3d v_std = Eigen::Vector3d::Ones();
  Eigen::Vector3d v1_mean = Eigen::Vector3d::Zero();  // anchored first frame
  Eigen::Vector3d v1_std = Eigen::Vector3d::Ones();

  void validate() const;  // every std > 1e-6
};

NormStats compute_norm_stats(const synth::Dataset& ds,
                             const body::JointRegressor& reg);

// Row t = [flattened root-centered mesh | root channel (r or v)].
Tensor sequence_to_tensor(const motion::MotionSequence& seq);
motion::MotionSequence tensor_to_sequence(const Tensor& x, int vertices,
                                          motion::FrameTag tag, double fps);

Tensor normalize(const Tensor& x, const NormStats& stats,
                 motion::FrameTag tag);
Tensor denormalize(const Tensor& x, const NormStats& stats,
                   motion::FrameTag tag);

struct LossWeights {
  double vertices = 1.0;
  double root = 1.0;     // camera r / world v
  double joints = 1.0;   // camera model only
  double contact = 1.0;  // world model only
};

struct LossComponents {
  double total = 0.0;
  double vertices = 0.0;
  double root = 0.0;
  double joints = 0.0;
  double contact = 0.0;
};

// Mean per-frame/per-vertex L1 terms in physical units.
LossComponents camera_loss(const motion::MotionSequence& pred,
                           const motion::MotionSequence& gt,
                           const body::JointRegressor& reg,
                           const LossWeights& w = {});
LossComponents world_loss(const motion::MotionSequence& pred,
                          const motion::MotionSequence& gt,
                          const body::ContactLabels& contacts,
                          const body::BodyModel& model,
                          const LossWeights& w = {});

struct LossVar {
  nn::Var total;
  LossComponents parts;
};

// Differentiable losses over a normalized prediction tensor; denormalization
// happens inside so the value matches the physical-unit losses above.
LossVar camera_loss_var(const nn::Var& pred_norm, const NormStats& stats,
                        const motion::MotionSequence& gt,
                        const body::JointRegressor& reg,
                        const LossWeights& w = {});
LossVar world_loss_var(const nn::Var& pred_norm, const NormStats& stats,
                       const motion::MotionSequence& gt,
                       const body::ContactLabels& contacts,
                       const body::BodyModel& model, const LossWeights& w = {});

struct TrainConfig {
  int steps = 2000;
  int batch = 8;
  int window = 48;  // frames per training sample
  float lr = 1e-4f;
  float weight_decay = 0.01f;
  bool cosine_lr_decay = true;
  double estimation_mode_prob = 0.5;
  double height_dropout = 0.5;
  int diffusion_steps = 1000;
  diffusion::ScheduleFamily schedule = diffusion::ScheduleFamily::Cosine;
  backbone::BackboneConfig backbone;  // desk-scale by default, see ctor
  int condition_width = 64;
  double conf_thresh = 0.5;
  AugmentSpec augment;  // extra on-the-fly keypoint augmentation
  bool image_features = false;
  LossWeights weights;
  int val_every = 200;
  int val_sequences = 4;
  int log_every = 50;
  uint64_t seed = 1;
  // World-model loop:
  int cond_ddim_steps = 4;  // frozen camera model sampling inside the loop
  double track_sigma_rot = 0.0;   // perturb lifting tracks during training
  double track_sigma_trans = 0.0;

  TrainConfig() {
    backbone.layers = 2;
    backbone.width = 64;
    backbone.heads = 4;
    backbone.ff_width = 128;
    backbone.window_radius = 16;
  }

  void validate() const;
  uint64_t config_hash() const;
};

enum class ModelKind : uint8_t { Camera, World };

struct Checkpoint {
  uint32_t version = 1;
  ModelKind kind = ModelKind::Camera;
  uint64_t config_hash = 0;
  uint64_t body_hash = 0;
  int vertices = 0;
  backbone::BackboneConfig backbone;
  int condition_width = 0;
  double conf_thresh = 0.5;
  int diffusion_steps = 1000;
  diffusion::ScheduleFamily schedule = diffusion::ScheduleFamily::Cosine;
  bool image_features = false;
  NormStats stats;
  std::vector<uint8_t> params;     // named tensors
  std::vector<uint8_t> opt_state;  // Adam moments, empty when absent
  int64_t adam_step = 0;
  int64_t step = 0;
  std::string rng_state;  // serialized mt19937_64
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// A denoiser plus its condition pathway sharing one parameter store.
struct CameraModel {
  backbone::BackboneConfig config;
  NormStats stats;
  diffusion::DiffusionSchedule schedule;
  nn::ParamStore params;
  std::unique_ptr<backbone::Denoiser> denoiser;
  std::unique_ptr<condition::KeypointEncoder> encoder;
  std::unique_ptr<condition::ConvImageProvider> image;  // may be null
  int vertices = 0;
  double conf_thresh = 0.5;
};

struct WorldModel {
  backbone::BackboneConfig config;
  NormStats stats;
  diffusion::DiffusionSchedule schedule;
  nn::ParamStore params;
  std::unique_ptr<backbone::Denoiser> denoiser;
  std::unique_ptr<condition::LiftedMotionEncoder> encoder;
  int vertices = 0;
};

std::unique_ptr<CameraModel> make_camera_model(int vertices,
                                               const TrainConfig& cfg);
std::unique_ptr<CameraModel> camera_model_from_checkpoint(
    const Checkpoint& ck);
std::unique_ptr<WorldModel> make_world_model(int vertices,
                                             const TrainConfig& cfg);
std::unique_ptr<WorldModel> world_model_from_checkpoint(const Checkpoint& ck);

// DDIM sampling of a camera-space sequence conditioned on keypoints.
motion::MotionSequence sample_camera_motion(
    const CameraModel& m, const std::vector<condition::KeypointFrame>& frames,
    const std::vector<geom::Intrinsics>& intrinsics,
    std::optional<double> height, double fps, int ddim_steps,
    std::mt19937_64& rng,
    const diffusion::GuidanceSpec& guidance = {});

// DDIM sampling of a world-space sequence conditioned on a lifted estimate.
motion::MotionSequence sample_world_motion(
    const WorldModel& m, const std::vector<geom::Points>& lifted_meshes,
    const Eigen::Matrix<double, Eigen::Dynamic, 3>& lifted_roots,
    const std::vector<bool>& visibility, std::optional<double> height,
    double fps, int ddim_steps, std::mt19937_64& rng,
    const diffusion::GuidanceSpec& guidance = {});

struct LogRecord {
  int64_t step = 0;
  LossComponents train;
  double val_loss = -1.0;  // -1 when not evaluated at this step
  double lr_scale = 1.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LogRecord> log;
  double step0_val = 0.0;
  double final_val = 0.0;
  bool diverged = false;
  uint64_t frozen_hash_before = 0;  // world training only
  uint64_t frozen_hash_after = 0;
};

TrainResult train_camera_model(const synth::Dataset& ds,
                               const body::BodyModel& model,
                               const TrainConfig& cfg,
                               const Checkpoint* resume = nullptr);

// Trains the world model with the frozen camera model in the loop; throws if
// the camera checkpoint's body hash mismatches or its parameters change.
TrainResult train_world_model(const synth::Dataset& ds,
                              const body::BodyModel& model,
                              const Checkpoint& camera_ckpt,
                              const TrainConfig& cfg,
                              const Checkpoint* resume = nullptr);

}  // namespace duomo::training
