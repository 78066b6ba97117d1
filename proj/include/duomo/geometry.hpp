#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cstdint>
#include <vector>

// Rigid-body math, pinhole projection, Procrustes alignment and camera
// trajectory utilities shared by every other module. All quantities are in
// meters / pixels, double precision.
namespace duomo::geom {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3>;  // N x 3

// SE(3) pose. R maps local to parent coordinates, t is the origin offset.
struct RigidPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidPose identity() { return RigidPose{}; }

  // Throws std::invalid_argument if R is not orthonormal with det +1.
  void validate(double tol = 1e-6) const;

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  RigidPose inverse() const;
  RigidPose compose(const RigidPose& other) const;  // this ∘ other
  bool is_identity(double tol = 1e-6) const;
};

struct Intrinsics {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
  void validate() const;  // fx, fy > 0
};

// Per-frame camera-to-world poses and intrinsics.
struct CameraTrack {
  std::vector<RigidPose> poses;
  std::vector<Intrinsics> intrinsics;
  double fps = 30.0;

  int frames() const { return static_cast<int>(poses.size()); }
};

struct ProjectionResult {
  Eigen::Matrix<double, Eigen::Dynamic, 2> pixels;  // N x 2
  std::vector<bool> valid;  // false when z <= z_min (behind / at camera)
};

// Minimum depth for a projection to count as valid.
inline constexpr double kProjectZMin = 1e-4;

Points apply_pose(const RigidPose& pose, const Points& points);
RigidPose inverse_pose(const RigidPose& pose);

ProjectionResult project(const Intrinsics& K, const Points& points_cam,
                         double z_min = kProjectZMin);

// Homogeneous rays K^-1 (u, v, 1); deliberately not unit-normalized.
Points pixels_to_rays(const Intrinsics& K,
                      const Eigen::Matrix<double, Eigen::Dynamic, 2>& pixels);

// NeRF-style encoding: columns are [sin(2^k pi x), cos(2^k pi x)] for
// k = 0..bands-1, each block D wide. Output is N x (D * 2 * bands).
Eigen::MatrixXd positional_encode(const Eigen::MatrixXd& x, int bands);

struct Alignment {
  RigidPose pose;      // target ≈ scale * R * source + t
  double scale = 1.0;
  Points aligned;      // transformed source
  double residual_rms = 0.0;
};

// Least-squares similarity (or rigid) alignment via SVD with Kabsch
// reflection correction. Throws on degenerate point sets.
Alignment procrustes_align(const Points& source, const Points& target,
                           bool with_scale);

Mat3 so3_exp(const Vec3& omega);
Vec3 so3_log(const Mat3& R);

// Accumulating per-frame noise: rotations drift by a right-composed product
// of so(3) perturbations, translations by a Euclidean random walk.
CameraTrack perturb_trajectory(const CameraTrack& track, double sigma_rot,
                               double sigma_trans, uint64_t seed);

}  // namespace duomo::geom
