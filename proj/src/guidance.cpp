#include "duomo/guidance.hpp"

#include <cmath>
#include <stdexcept>

#include "duomo/synth.hpp"

namespace duomo::guidance {

using diffusion::Tensor;
using geom::Points;
using motion::FrameTag;
using motion::MotionSequence;

namespace {

double robust(double d, double delta, GuidanceNorm norm) {
  if (norm == GuidanceNorm::L2) return d * d;
  return d <= delta ? d * d / (2.0 * delta) : d - 0.5 * delta;
}

double robust_deriv(double d, double delta, GuidanceNorm norm) {
  if (norm == GuidanceNorm::L2) return 2.0 * d;
  return d <= delta ? d / delta : 1.0;
}

void check_reproj_shapes(int frames, int vertices,
                         const geom::CameraTrack& track,
                         const std::vector<condition::KeypointFrame>& kps) {
  if (track.frames() != frames ||
      static_cast<int>(kps.size()) != frames) {
    throw std::invalid_argument("reprojection: frame count mismatch");
  }
  for (const auto& f : kps) {
    if (f.count() != vertices) {
      throw std::invalid_argument("reprojection: keypoint count mismatch");
    }
  }
}

// Sum of robust pixel distances over confident, validly projected points.
// When `grad` is non-null it receives dLoss/d(absolute world point), one
// V x 3 block per frame.
double reproj_core(const std::vector<Points>& abs_meshes,
                   const geom::CameraTrack& track,
                   const std::vector<condition::KeypointFrame>& kps,
                   double conf_thresh, GuidanceNorm norm,
                   std::vector<Points>* grad) {
  const int t_count = static_cast<int>(abs_meshes.size());
  double loss = 0.0;
  if (grad) grad->clear();
  for (int t = 0; t < t_count; ++t) {
    const geom::RigidPose inv = track.poses[size_t(t)].inverse();
    const Points cam = geom::apply_pose(inv, abs_meshes[size_t(t)]);
    const auto& k = track.intrinsics[size_t(t)];
    const auto proj = geom::project(k, cam);
    Points g;
    if (grad) g = Points::Zero(cam.rows(), 3);
    for (int v = 0; v < cam.rows(); ++v) {
      if (kps[size_t(t)].confidence(v) < conf_thresh) continue;
      if (!proj.valid[size_t(v)]) continue;
      const Eigen::Vector2d r =
          proj.pixels.row(v).transpose() -
          kps[size_t(t)].pixels.row(v).transpose();
      const double d = r.norm();
      loss += robust(d, kReprojDeltaPx, norm);
      if (grad && d > 0.0) {
        const double f = robust_deriv(d, kReprojDeltaPx, norm) / d;
        const double x = cam(v, 0), y = cam(v, 1), z = cam(v, 2);
        geom::Vec3 dcam;
        dcam(0) = f * r(0) * k.fx / z;
        dcam(1) = f * r(1) * k.fy / z;
        dcam(2) = -f * (r(0) * k.fx * x + r(1) * k.fy * y) / (z * z);
        g.row(v) = (inv.rotation.transpose() * dcam).transpose();
      }
    }
    if (grad) grad->push_back(std::move(g));
  }
  return loss;
}

Eigen::Vector3d anchor_at(
    const Eigen::Matrix<double, Eigen::Dynamic, 3>& anchors, int i,
    bool average) {
  if (!average) return anchors.row(i).transpose();
  const int lo = std::max(0, i - 1);
  const int hi = std::min(int(anchors.rows()) - 1, i + 1);
  return anchors.middleRows(lo, hi - lo + 1).colwise().mean().transpose();
}

void check_segments(const OcclusionSegments& occ, int frames) {
  for (const auto& s : occ) {
    if (s.last_visible < 0 || s.first_visible >= frames ||
        s.last_visible >= s.first_visible) {
      throw std::invalid_argument(
          "displacement: segment endpoint outside the sequence");
    }
  }
}

// Loss plus optional gradient with respect to the velocity rows.
double displace_core(const Eigen::Matrix<double, Eigen::Dynamic, 3>& vel,
                     const Eigen::Matrix<double, Eigen::Dynamic, 3>& anchors,
                     const OcclusionSegments& occ, GuidanceNorm norm,
                     bool average_anchors,
                     Eigen::Matrix<double, Eigen::Dynamic, 3>* grad) {
  if (anchors.rows() != vel.rows()) {
    throw std::invalid_argument("displacement: anchor/velocity length mismatch");
  }
  check_segments(occ, int(vel.rows()));
  if (grad) grad->setZero(vel.rows(), 3);
  double loss = 0.0;
  for (const auto& s : occ) {
    const Eigen::Vector3d gap =
        anchor_at(anchors, s.first_visible, average_anchors) -
        anchor_at(anchors, s.last_visible, average_anchors);
    Eigen::Vector3d integrated = Eigen::Vector3d::Zero();
    for (int t = s.last_visible + 1; t <= s.first_visible; ++t) {
      integrated += vel.row(t).transpose();
    }
    const Eigen::Vector3d e = gap - integrated;
    const double d = e.norm();
    loss += robust(d, kDisplaceDeltaM, norm);
    if (grad && d > 0.0) {
      const Eigen::Vector3d dv =
          -robust_deriv(d, kDisplaceDeltaM, norm) * e / d;
      for (int t = s.last_visible + 1; t <= s.first_visible; ++t) {
        grad->row(t) += dv.transpose();
      }
    }
  }
  return loss;
}

}  // namespace

OcclusionSegments find_occlusions(const std::vector<bool>& visibility,
                                  double min_gap_seconds, double fps) {
  if (min_gap_seconds < 0.0 || fps <= 0.0) {
    throw std::invalid_argument("find_occlusions: bad threshold");
  }
  OcclusionSegments out;
  const int t_count = static_cast<int>(visibility.size());
  int run_start = -1;
  for (int t = 0; t <= t_count; ++t) {
    const bool invisible = t < t_count && !visibility[size_t(t)];
    if (invisible && run_start < 0) run_start = t;
    if (!invisible && run_start >= 0) {
      const int run_len = t - run_start;
      // Runs touching either boundary have no anchor on that side.
      if (run_start > 0 && t < t_count &&
          double(run_len) > min_gap_seconds * fps) {
        out.push_back({run_start - 1, t});
      }
      run_start = -1;
    }
  }
  return out;
}

double reprojection_loss(const MotionSequence& world,
                         const geom::CameraTrack& track,
                         const std::vector<condition::KeypointFrame>& keypoints,
                         double conf_thresh, GuidanceNorm norm) {
  if (world.tag != FrameTag::World) {
    throw std::invalid_argument("reprojection: world-tagged motion expected");
  }
  check_reproj_shapes(world.frames(), world.vertices(), track, keypoints);
  return reproj_core(motion::absolute_meshes(world), track, keypoints,
                     conf_thresh, norm, nullptr);
}

Eigen::VectorXd reprojection_residuals(
    const MotionSequence& world, const geom::CameraTrack& track,
    const std::vector<condition::KeypointFrame>& keypoints,
    double conf_thresh) {
  if (world.tag != FrameTag::World) {
    throw std::invalid_argument("reprojection: world-tagged motion expected");
  }
  check_reproj_shapes(world.frames(), world.vertices(), track, keypoints);
  const auto abs = motion::absolute_meshes(world);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(world.frames());
  for (int t = 0; t < world.frames(); ++t) {
    const geom::RigidPose inv = track.poses[size_t(t)].inverse();
    const auto proj =
        geom::project(track.intrinsics[size_t(t)],
                      geom::apply_pose(inv, abs[size_t(t)]));
    double acc = 0.0;
    int n = 0;
    for (int v = 0; v < world.vertices(); ++v) {
      if (keypoints[size_t(t)].confidence(v) < conf_thresh) continue;
      if (!proj.valid[size_t(v)]) continue;
      acc += (proj.pixels.row(v) - keypoints[size_t(t)].pixels.row(v)).norm();
      ++n;
    }
    if (n > 0) out(t) = acc / n;
  }
  return out;
}

double displacement_loss(
    const Eigen::Matrix<double, Eigen::Dynamic, 3>& velocities,
    const Eigen::Matrix<double, Eigen::Dynamic, 3>& anchors,
    const OcclusionSegments& occ, GuidanceNorm norm, bool average_anchors) {
  return displace_core(velocities, anchors, occ, norm, average_anchors,
                       nullptr);
}

Eigen::VectorXd displacement_residuals(
    const Eigen::Matrix<double, Eigen::Dynamic, 3>& velocities,
    const Eigen::Matrix<double, Eigen::Dynamic, 3>& anchors,
    const OcclusionSegments& occ, bool average_anchors) {
  if (anchors.rows() != velocities.rows()) {
    throw std::invalid_argument("displacement: anchor/velocity length mismatch");
  }
  check_segments(occ, int(velocities.rows()));
  Eigen::VectorXd out(Eigen::Index(occ.size()));
  for (size_t i = 0; i < occ.size(); ++i) {
    const auto& s = occ[i];
    Eigen::Vector3d integrated = Eigen::Vector3d::Zero();
    for (int t = s.last_visible + 1; t <= s.first_visible; ++t) {
      integrated += velocities.row(t).transpose();
    }
    out(Eigen::Index(i)) =
        (anchor_at(anchors, s.first_visible, average_anchors) -
         anchor_at(anchors, s.last_visible, average_anchors) - integrated)
            .norm();
  }
  return out;
}

namespace {

// Shared unpacking of a normalized world tensor into physical pieces, and
// repacking of a physical gradient into normalized-space.
struct TensorBridge {
  training::NormStats stats;
  int vertices;

  Tensor to_phys(const Tensor& x) const {
    return training::denormalize(x, stats, FrameTag::World);
  }
  Tensor grad_to_norm(const Tensor& grad_phys) const {
    // phys = norm .* scale + shift, so dL/dnorm = dL/dphys .* scale.
    Tensor g = grad_phys;
    const int pd = vertices * 3;
    for (int t = 0; t < g.rows(); ++t) {
      for (int c = 0; c < pd; ++c) g(t, c) *= stats.p_std(c);
      for (int c = 0; c < 3; ++c) {
        const double sd =
            (t == 0) ? stats.v1_std(c) : stats.v_std(c);
        g(t, pd + c) *= sd;
      }
    }
    return g;
  }
};

}  // namespace

diffusion::GuidanceTerm make_reprojection_term(
    const training::NormStats& stats, int vertices,
    const geom::CameraTrack& track,
    const std::vector<condition::KeypointFrame>& keypoints, double conf_thresh,
    double weight, double active_begin, GuidanceNorm norm) {
  long count = 0;
  for (const auto& f : keypoints) {
    count += (f.confidence.array() >= conf_thresh).count();
  }
  const double inv_count = 1.0 / double(std::max(1L, count));
  const TensorBridge bridge{stats, vertices};

  auto unpack = [bridge](const Tensor& x, std::vector<Points>& abs,
                         Eigen::Matrix<double, Eigen::Dynamic, 3>& roots) {
    const Tensor phys = bridge.to_phys(x);
    const int v = bridge.vertices;
    roots.resize(phys.rows(), 3);
    double cx = 0.0, cy = 0.0, cz = 0.0;
    for (int t = 0; t < phys.rows(); ++t) {
      cx += phys(t, v * 3 + 0);
      cy += phys(t, v * 3 + 1);
      cz += phys(t, v * 3 + 2);
      roots.row(t) << cx, cy, cz;
      Points m(v, 3);
      for (int vi = 0; vi < v; ++vi) {
        m.row(vi) = phys.block<1, 3>(t, vi * 3) + roots.row(t);
      }
      abs.push_back(std::move(m));
    }
  };

  diffusion::GuidanceTerm term;
  term.weight = weight;
  term.active_begin = active_begin;
  term.loss = [=](const Tensor& x) -> double {
    std::vector<Points> abs;
    Eigen::Matrix<double, Eigen::Dynamic, 3> roots;
    unpack(x, abs, roots);
    return inv_count *
           reproj_core(abs, track, keypoints, conf_thresh, norm, nullptr);
  };
  term.grad = [=](const Tensor& x) -> Tensor {
    std::vector<Points> abs;
    Eigen::Matrix<double, Eigen::Dynamic, 3> roots;
    unpack(x, abs, roots);
    std::vector<Points> gx;
    reproj_core(abs, track, keypoints, conf_thresh, norm, &gx);
    const int v = vertices;
    Tensor gp = Tensor::Zero(x.rows(), x.cols());
    Eigen::Vector3d carry = Eigen::Vector3d::Zero();
    for (int t = int(x.rows()) - 1; t >= 0; --t) {
      Eigen::Vector3d root_g = Eigen::Vector3d::Zero();
      for (int vi = 0; vi < v; ++vi) {
        gp.block<1, 3>(t, vi * 3) = gx[size_t(t)].row(vi);
        root_g += gx[size_t(t)].row(vi).transpose();
      }
      carry += root_g;  // velocity at t feeds every root from t onward
      gp.block<1, 3>(t, v * 3) = carry.transpose();
    }
    return inv_count * bridge.grad_to_norm(gp);
  };
  return term;
}

diffusion::GuidanceTerm make_displacement_term(
    const training::NormStats& stats, int vertices,
    const Eigen::Matrix<double, Eigen::Dynamic, 3>& anchors,
    const OcclusionSegments& occ, double weight, double active_begin,
    GuidanceNorm norm, bool average_anchors) {
  const double inv_count = 1.0 / double(std::max<size_t>(1, occ.size()));
  const TensorBridge bridge{stats, vertices};

  auto velocities = [bridge](const Tensor& x) {
    const Tensor phys = bridge.to_phys(x);
    return Eigen::Matrix<double, Eigen::Dynamic, 3>(
        phys.rightCols(3));
  };

  diffusion::GuidanceTerm term;
  term.weight = weight;
  term.active_begin = active_begin;
  term.loss = [=](const Tensor& x) -> double {
    return inv_count * displace_core(velocities(x), anchors, occ, norm,
                                     average_anchors, nullptr);
  };
  term.grad = [=](const Tensor& x) -> Tensor {
    Eigen::Matrix<double, Eigen::Dynamic, 3> gv;
    displace_core(velocities(x), anchors, occ, norm, average_anchors, &gv);
    Tensor gp = Tensor::Zero(x.rows(), x.cols());
    gp.rightCols(3) = gv;
    return inv_count * bridge.grad_to_norm(gp);
  };
  return term;
}

ReconstructionResult guided_reconstruct(
    const training::Checkpoint& camera_ckpt,
    const training::Checkpoint& world_ckpt, const body::BodyModel& model,
    const std::vector<condition::KeypointFrame>& keypoints,
    const geom::CameraTrack& track, std::optional<double> height,
    const GuidanceOptions& opts, std::mt19937_64& rng) {
  if (keypoints.empty()) {
    throw std::invalid_argument("reconstruct: empty video");
  }
  if (track.frames() != static_cast<int>(keypoints.size())) {
    throw std::invalid_argument("reconstruct: track/keypoint length mismatch");
  }
  if (!track.poses[0].is_identity()) {
    throw std::invalid_argument("reconstruct: track must start at identity");
  }
  const uint64_t body_hash = synth::body_config_hash(model);
  if (camera_ckpt.body_hash != body_hash || world_ckpt.body_hash != body_hash) {
    throw std::runtime_error("reconstruct: checkpoint body hash mismatch");
  }
  if (opts.ddim_steps < 1) {
    throw std::invalid_argument("reconstruct: bad DDIM step count");
  }

  const auto cam_model = training::camera_model_from_checkpoint(camera_ckpt);
  const auto world_model = training::world_model_from_checkpoint(world_ckpt);
  const auto reg = body::make_joint_regressor(model);

  ReconstructionResult res;
  res.camera =
      sample_camera_motion(*cam_model, keypoints, track.intrinsics, height,
                           track.fps, opts.ddim_steps, rng);
  const int min_count = condition::default_min_count(cam_model->vertices);
  res.visibility.reserve(keypoints.size());
  for (const auto& f : keypoints) {
    res.visibility.push_back(
        condition::frame_visibility(f, cam_model->conf_thresh, min_count));
  }
  res.lifted = motion::lift(res.camera, track, reg);
  const auto anchors = motion::absolute_roots(res.lifted);
  res.occlusions =
      find_occlusions(res.visibility, opts.min_gap_seconds, track.fps);

  diffusion::GuidanceSpec spec;
  if (opts.reprojection) {
    spec.terms.push_back(make_reprojection_term(
        world_model->stats, world_model->vertices, track, keypoints,
        cam_model->conf_thresh, opts.reprojection_weight, opts.active_begin,
        opts.norm));
  }
  if (opts.displacement && !res.occlusions.empty()) {
    spec.terms.push_back(make_displacement_term(
        world_model->stats, world_model->vertices, anchors, res.occlusions,
        opts.displacement_weight, opts.active_begin, opts.norm,
        opts.average_anchors));
  }

  res.world = sample_world_motion(*world_model, res.lifted.mesh, anchors,
                                  res.visibility, height, track.fps,
                                  opts.ddim_steps, rng, spec);

  res.reproj_residuals_px = reprojection_residuals(
      res.world, track, keypoints, cam_model->conf_thresh);
  res.displacement_residuals_m =
      displacement_residuals(res.world.root, anchors, res.occlusions,
                             opts.average_anchors);
  return res;
}

}  // namespace duomo::guidance
