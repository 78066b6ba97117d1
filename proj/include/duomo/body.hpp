#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "duomo/geometry.hpp"

// Toy parametric body: a 16-joint kinematic chain with vertices procedurally
// placed on capsules around the bones, plus the joint / sparse-mesh
// regressors and ground-contact labeling.
namespace duomo::body {

using geom::Mat3;
using geom::Points;
using geom::Vec3;

enum class VertexGroup : uint8_t {
  Pelvis,
  Torso,
  Head,
  LeftArm,
  RightArm,
  LeftLeg,
  RightLeg,
  LeftFoot,
  RightFoot,
};

const char* group_name(VertexGroup g);

// Joint indices of the toy skeleton.
enum Joint : int {
  kPelvis = 0,
  kSpine,
  kNeck,
  kHead,
  kLeftHip,
  kLeftKnee,
  kLeftAnkle,
  kLeftToe,
  kRightHip,
  kRightKnee,
  kRightAnkle,
  kRightToe,
  kLeftShoulder,
  kLeftElbow,
  kRightShoulder,
  kRightElbow,
  kJointCount  // 16
};

struct BodyModel {
  Points template_vertices;          // V x 3, rest pose, feet on y = 0
  std::vector<int> parents;          // J, -1 at the pelvis root
  Points rest_joints;                // J x 3 rest-pose joint positions
  Eigen::MatrixXd skin_weights;      // V x J, rows sum to 1
  std::vector<VertexGroup> groups;   // V

  int joints() const { return static_cast<int>(parents.size()); }
  int vertices() const { return static_cast<int>(template_vertices.rows()); }

  void validate() const;
  double rest_height() const;  // vertical extent of the template
  std::vector<int> group_vertices(VertexGroup g) const;
};

struct BodyParams {
  Eigen::MatrixXd joint_rotations;  // J x 3 axis-angle, radians
  double shape_scale = 1.0;         // height multiplier, in [0.5, 2.0]
  Vec3 root_translation = Vec3::Zero();
  Vec3 root_orientation = Vec3::Zero();  // axis-angle

  static BodyParams rest(int joints);
  void validate(int joints) const;
  Eigen::VectorXd flatten() const;  // J*3 + 1 + 3 + 3
  static BodyParams unflatten(const Eigen::VectorXd& x, int joints);
  static int dof(int joints) { return joints * 3 + 7; }
};

struct JointRegressor {
  Eigen::MatrixXd weights;  // J x V, rows nonnegative, sum to 1, <= 16 nnz
  void validate() const;
};

struct SparseRegressor {
  Eigen::MatrixXd weights;  // V_sparse x V_dense, <= 8 nnz per row
  void validate() const;
};

// Builds the default body with `vertices` capsule samples (>= 48).
BodyModel make_toy_body(int vertices = 96);

// Inverse-distance weights over the nearest template vertices per joint.
JointRegressor make_joint_regressor(const BodyModel& model, int k = 8);

// Per-joint global transforms, as produced by forward kinematics or built
// directly by the synthetic motion generator.
struct JointFrames {
  std::vector<Mat3> rotation;  // J
  Points position;             // J x 3
};

JointFrames forward_kinematics(const BodyModel& model,
                               const BodyParams& params);

// Linear blend skinning from global joint frames. `scale` must match the
// scale used to produce the frames.
Points skin(const BodyModel& model, const JointFrames& frames, double scale);

Points pose_body(const BodyModel& model, const BodyParams& params);

Points regress_joints(const JointRegressor& reg, const Points& mesh);

struct SparseRegressorFit {
  SparseRegressor regressor;
  double train_error = 0.0;    // mean per-vertex reconstruction error, meters
  double heldout_error = 0.0;  // on the held-out pairs
};

// Per-sparse-vertex nonnegative least squares over the k nearest dense
// vertices, fit on paired meshes. The last `heldout` pairs are kept for
// error reporting only.
SparseRegressorFit fit_sparse_regressor(const std::vector<Points>& dense,
                                        const std::vector<Points>& sparse,
                                        int k = 8, int heldout = 4);

Points apply_sparse_regressor(const SparseRegressor& reg, const Points& dense);

// Per-frame [left, right] foot contact flags.
using ContactLabels = std::vector<std::array<bool, 2>>;

inline constexpr double kContactHeightThresh = 0.03;        // meters
inline constexpr double kContactSpeedThresh30 = 0.02;       // m/frame at 30fps

// A foot is in contact when its lowest vertex is within h_thresh of the
// y = 0 ground plane and its mean vertex speed is below the (fps-scaled)
// speed threshold.
ContactLabels label_contacts(const std::vector<Points>& world_meshes,
                             const BodyModel& model, double fps,
                             double h_thresh = kContactHeightThresh,
                             double v_thresh30 = kContactSpeedThresh30);

}  // namespace duomo::body
