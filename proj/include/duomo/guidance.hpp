#pragma once

#include <optional>
#include <random>
#include <vector>

#include "duomo/condition.hpp"
#include "duomo/diffusion.hpp"
#include "duomo/geometry.hpp"
#include "duomo/motion.hpp"
#include "duomo/training.hpp"

// Test-time guidance for the world-space sampler: occlusion-segment
// detection, the reprojection and displacement losses with analytic
// gradients, and the full two-stage guided reconstruction.
namespace duomo::guidance {

// Boundary pair of a long occlusion: the last visible frame before the gap
// and the first visible frame after it.
struct OcclusionSegment {
  int last_visible = 0;
  int first_visible = 0;
};
using OcclusionSegments = std::vector<OcclusionSegment>;

// Maximal invisible runs strictly longer than min_gap_seconds. Runs touching
// either end of the sequence have no anchor and are excluded.
OcclusionSegments find_occlusions(const std::vector<bool>& visibility,
                                  double min_gap_seconds, double fps);

enum class GuidanceNorm { SmoothL1, L2 };

inline constexpr double kReprojDeltaPx = 1.0;   // smooth-L1 transition
inline constexpr double kDisplaceDeltaM = 0.01;

// Sum over frames and confident keypoints of the robust distance between the
// detected pixels and the projected world vertices (world -> camera via
// g_t^-1, full pinhole). Invalid projections and low-confidence points are
// excluded.
double reprojection_loss(const motion::MotionSequence& world,
                         const geom::CameraTrack& track,
                         const std::vector<condition::KeypointFrame>& keypoints,
                         double conf_thresh,
                         GuidanceNorm norm = GuidanceNorm::SmoothL1);

// Per-frame mean pixel distance over confident, validly projected keypoints
// (0 where none); a diagnostic, not a loss.
Eigen::VectorXd reprojection_residuals(
    const motion::MotionSequence& world, const geom::CameraTrack& track,
    const std::vector<condition::KeypointFrame>& keypoints,
    double conf_thresh);

// Sum over segments of the robust norm of (anchor displacement minus the
// velocity integrated over t = i+1 .. j). Anchors are the per-frame world
// roots of the lifted camera estimate. With `average_anchors`, each endpoint
// is replaced by the mean over the three frames around it.
double displacement_loss(
    const Eigen::Matrix<double, Eigen::Dynamic, 3>& velocities,
    const Eigen::Matrix<double, Eigen::Dynamic, 3>& anchors,
    const OcclusionSegments& occ, GuidanceNorm norm = GuidanceNorm::SmoothL1,
    bool average_anchors = false);

// Per-segment plain displacement gap, meters.
Eigen::VectorXd displacement_residuals(
    const Eigen::Matrix<double, Eigen::Dynamic, 3>& velocities,
    const Eigen::Matrix<double, Eigen::Dynamic, 3>& anchors,
    const OcclusionSegments& occ, bool average_anchors = false);

// Guidance terms over the *normalized* world tensor the sampler works in;
// denormalization happens inside and gradients are analytic. Both are scaled
// to a per-observation mean so weights act as step sizes independent of the
// sequence length.
diffusion::GuidanceTerm make_reprojection_term(
    const training::NormStats& stats, int vertices, const geom::CameraTrack& track,
    const std::vector<condition::KeypointFrame>& keypoints, double conf_thresh,
    double weight, double active_begin, GuidanceNorm norm);

diffusion::GuidanceTerm make_displacement_term(
    const training::NormStats& stats, int vertices,
    const Eigen::Matrix<double, Eigen::Dynamic, 3>& anchors,
    const OcclusionSegments& occ, double weight, double active_begin,
    GuidanceNorm norm, bool average_anchors);

struct GuidanceOptions {
  bool reprojection = true;
  bool displacement = true;
  double reprojection_weight = 0.02;
  double displacement_weight = 0.05;
  double active_begin = 0.2;  // active on the last 80% of the reverse pass
  double min_gap_seconds = 2.0;
  GuidanceNorm norm = GuidanceNorm::SmoothL1;
  bool average_anchors = false;
  int ddim_steps = 50;
};

struct ReconstructionResult {
  motion::MotionSequence world;   // final guided world-space motion
  motion::MotionSequence camera;  // stage-1 camera-space estimate
  motion::MotionSequence lifted;  // stage-1 estimate lifted to world
  std::vector<bool> visibility;
  OcclusionSegments occlusions;
  Eigen::VectorXd reproj_residuals_px;     // per frame
  Eigen::VectorXd displacement_residuals_m;  // per segment
};

// Stage 1: sample the camera model and lift through the known track.
// Stage 2: guided DDIM sampling of the world model conditioned on the lifted
// estimate. The track must start at the identity pose.
ReconstructionResult guided_reconstruct(
    const training::Checkpoint& camera_ckpt,
    const training::Checkpoint& world_ckpt, const body::BodyModel& model,
    const std::vector<condition::KeypointFrame>& keypoints,
    const geom::CameraTrack& track, std::optional<double> height,
    const GuidanceOptions& opts, std::mt19937_64& rng);

}  // namespace duomo::guidance
