#include "duomo/motion.hpp"

#include <stdexcept>

namespace duomo::motion {

namespace {

int pelvis_row(const body::JointRegressor& reg) {
  (void)reg;
  return body::kPelvis;
}

}  // namespace

void MotionSequence::validate(const body::JointRegressor& reg,
                              double tol) const {
  if (frames() < 1) {
    throw std::invalid_argument("MotionSequence: T must be >= 1");
  }
  if (root.rows() != frames()) {
    throw std::invalid_argument("MotionSequence: root length mismatch");
  }
  const Eigen::RowVectorXd w = reg.weights.row(pelvis_row(reg));
  for (const auto& p : mesh) {
    if ((w * p).cwiseAbs().maxCoeff() > tol) {
      throw std::invalid_argument("MotionSequence: mesh is not root-centered");
    }
  }
}

Decomposition decompose(const std::vector<Points>& meshes,
                        const body::JointRegressor& reg) {
  Decomposition out;
  const int t_count = static_cast<int>(meshes.size());
  out.P.reserve(meshes.size());
  out.r.resize(t_count, 3);
  const Eigen::RowVectorXd w = reg.weights.row(pelvis_row(reg));
  for (int t = 0; t < t_count; ++t) {
    const Eigen::RowVector3d pelvis = w * meshes[static_cast<size_t>(t)];
    out.r.row(t) = pelvis;
    out.P.push_back(meshes[static_cast<size_t>(t)].rowwise() - pelvis);
  }
  return out;
}

std::vector<Points> recompose(
    const std::vector<Points>& P,
    const Eigen::Matrix<double, Eigen::Dynamic, 3>& r) {
  if (static_cast<Eigen::Index>(P.size()) != r.rows()) {
    throw std::invalid_argument("recompose: length mismatch");
  }
  std::vector<Points> out;
  out.reserve(P.size());
  for (size_t t = 0; t < P.size(); ++t) {
    out.push_back(P[t].rowwise() + r.row(static_cast<Eigen::Index>(t)));
  }
  return out;
}

Eigen::Matrix<double, Eigen::Dynamic, 3> positions_to_velocities(
    const Eigen::Matrix<double, Eigen::Dynamic, 3>& r) {
  Eigen::Matrix<double, Eigen::Dynamic, 3> v(r.rows(), 3);
  if (r.rows() == 0) return v;
  v.row(0) = r.row(0);
  for (Eigen::Index t = 1; t < r.rows(); ++t) {
    v.row(t) = r.row(t) - r.row(t - 1);
  }
  return v;
}

Eigen::Matrix<double, Eigen::Dynamic, 3> integrate_velocities(
    const Eigen::Matrix<double, Eigen::Dynamic, 3>& v) {
  Eigen::Matrix<double, Eigen::Dynamic, 3> r(v.rows(), 3);
  Eigen::RowVector3d acc = Eigen::RowVector3d::Zero();
  for (Eigen::Index t = 0; t < v.rows(); ++t) {
    acc += v.row(t);
    r.row(t) = acc;
  }
  return r;
}

MotionSequence make_camera_sequence(const std::vector<Points>& meshes,
                                    const body::JointRegressor& reg,
                                    double fps) {
  auto d = decompose(meshes, reg);
  MotionSequence seq;
  seq.mesh = std::move(d.P);
  seq.root = std::move(d.r);
  seq.tag = FrameTag::Camera;
  seq.fps = fps;
  return seq;
}

MotionSequence make_world_sequence(const std::vector<Points>& meshes,
                                   const body::JointRegressor& reg,
                                   double fps) {
  auto d = decompose(meshes, reg);
  MotionSequence seq;
  seq.mesh = std::move(d.P);
  seq.root = positions_to_velocities(d.r);
  seq.tag = FrameTag::World;
  seq.fps = fps;
  return seq;
}

Eigen::Matrix<double, Eigen::Dynamic, 3> absolute_roots(
    const MotionSequence& seq) {
  return seq.tag == FrameTag::World ? integrate_velocities(seq.root) : seq.root;
}

std::vector<Points> absolute_meshes(const MotionSequence& seq) {
  return recompose(seq.mesh, absolute_roots(seq));
}

CameraTrack rebase_track(const CameraTrack& track) {
  if (track.frames() == 0) return track;
  CameraTrack out = track;
  const geom::RigidPose g1_inv = track.poses[0].inverse();
  for (auto& g : out.poses) {
    g = g1_inv.compose(g);
  }
  return out;
}

namespace {

void check_lift_args(const MotionSequence& seq, const CameraTrack& track,
                     FrameTag expected) {
  if (seq.tag != expected) {
    throw std::invalid_argument("lift/unlift: wrong coordinate-frame tag");
  }
  if (seq.frames() != track.frames()) {
    throw std::invalid_argument("lift/unlift: sequence/track length mismatch");
  }
  if (!track.poses.empty() && !track.poses[0].is_identity()) {
    throw std::invalid_argument("lift/unlift: track must satisfy g1 = identity");
  }
}

}  // namespace

MotionSequence lift(const MotionSequence& cam_motion, const CameraTrack& track,
                    const body::JointRegressor& reg) {
  check_lift_args(cam_motion, track, FrameTag::Camera);
  std::vector<Points> world(static_cast<size_t>(cam_motion.frames()));
  const auto cam_meshes = absolute_meshes(cam_motion);
  for (int t = 0; t < cam_motion.frames(); ++t) {
    world[static_cast<size_t>(t)] = geom::apply_pose(
        track.poses[static_cast<size_t>(t)], cam_meshes[static_cast<size_t>(t)]);
  }
  return make_world_sequence(world, reg, cam_motion.fps);
}

MotionSequence unlift(const MotionSequence& world_motion,
                      const CameraTrack& track,
                      const body::JointRegressor& reg) {
  check_lift_args(world_motion, track, FrameTag::World);
  std::vector<Points> cam(static_cast<size_t>(world_motion.frames()));
  const auto world_meshes = absolute_meshes(world_motion);
  for (int t = 0; t < world_motion.frames(); ++t) {
    cam[static_cast<size_t>(t)] =
        geom::apply_pose(track.poses[static_cast<size_t>(t)].inverse(),
                         world_meshes[static_cast<size_t>(t)]);
  }
  return make_camera_sequence(cam, reg, world_motion.fps);
}

body::ContactLabels label_contacts(const MotionSequence& world_motion,
                                   const body::BodyModel& model) {
  if (world_motion.tag != FrameTag::World) {
    throw std::invalid_argument("label_contacts: expects world-space motion");
  }
  return body::label_contacts(absolute_meshes(world_motion), model,
                              world_motion.fps);
}

}  // namespace duomo::motion
