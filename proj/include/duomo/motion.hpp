#pragma once

#include <vector>

#include "duomo/body.hpp"
#include "duomo/geometry.hpp"

// Motion sequences in their camera-space (P, r) and world-space (P, v)
// decompositions, and the lifting transform between them.
namespace duomo::motion {

using geom::CameraTrack;
using geom::Points;

enum class FrameTag { Camera, World };

struct MotionSequence {
  std::vector<Points> mesh;                   // T frames of root-centered P
  Eigen::Matrix<double, Eigen::Dynamic, 3> root;  // r (camera) or v (world)
  FrameTag tag = FrameTag::Camera;
  double fps = 30.0;

  int frames() const { return static_cast<int>(mesh.size()); }
  int vertices() const {
    return mesh.empty() ? 0 : static_cast<int>(mesh[0].rows());
  }
  // Zero-root invariant: the regressed pelvis of every P frame is ~0.
  void validate(const body::JointRegressor& reg, double tol = 1e-5) const;
};

struct Decomposition {
  std::vector<Points> P;
  Eigen::Matrix<double, Eigen::Dynamic, 3> r;
};

// Splits absolute meshes into root-centered meshes plus the regressed pelvis
// trajectory. recompose is the exact inverse.
Decomposition decompose(const std::vector<Points>& meshes,
                        const body::JointRegressor& reg);
std::vector<Points> recompose(const std::vector<Points>& P,
                              const Eigen::Matrix<double, Eigen::Dynamic, 3>& r);

// v1 = r1 (anchored against the implicit r0 = world origin), vt = rt - rt-1.
Eigen::Matrix<double, Eigen::Dynamic, 3> positions_to_velocities(
    const Eigen::Matrix<double, Eigen::Dynamic, 3>& r);
Eigen::Matrix<double, Eigen::Dynamic, 3> integrate_velocities(
    const Eigen::Matrix<double, Eigen::Dynamic, 3>& v);

MotionSequence make_camera_sequence(const std::vector<Points>& meshes,
                                    const body::JointRegressor& reg,
                                    double fps);
MotionSequence make_world_sequence(const std::vector<Points>& meshes,
                                   const body::JointRegressor& reg,
                                   double fps);

// Absolute per-frame meshes for either representation.
std::vector<Points> absolute_meshes(const MotionSequence& seq);
// Absolute root trajectory (r for camera, integrated v for world).
Eigen::Matrix<double, Eigen::Dynamic, 3> absolute_roots(
    const MotionSequence& seq);

// Requires a camera-tagged sequence and g1 = identity.
MotionSequence lift(const MotionSequence& cam_motion, const CameraTrack& track,
                    const body::JointRegressor& reg);
MotionSequence unlift(const MotionSequence& world_motion,
                      const CameraTrack& track,
                      const body::JointRegressor& reg);

// Re-expresses a track so that g1 = identity exactly (per-video world frame).
CameraTrack rebase_track(const CameraTrack& track);

body::ContactLabels label_contacts(const MotionSequence& world_motion,
                                   const body::BodyModel& model);

}  // namespace duomo::motion
