#include "duomo/geometry.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <random>
#include <stdexcept>

namespace duomo::geom {

void RigidPose::validate(double tol) const {
  const double ortho = (rotation.transpose() * rotation - Mat3::Identity())
                           .cwiseAbs()
                           .maxCoeff();
  if (ortho > tol) {
    throw std::invalid_argument("RigidPose: rotation is not orthonormal");
  }
  if (std::abs(rotation.determinant() - 1.0) > tol) {
    throw std::invalid_argument("RigidPose: rotation determinant != +1");
  }
}

RigidPose RigidPose::inverse() const {
  RigidPose inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(rotation.transpose() * translation);
  return inv;
}

RigidPose RigidPose::compose(const RigidPose& other) const {
  RigidPose out;
  out.rotation = rotation * other.rotation;
  out.translation = rotation * other.translation + translation;
  return out;
}

bool RigidPose::is_identity(double tol) const {
  return (rotation - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
         translation.cwiseAbs().maxCoeff() <= tol;
}

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw std::invalid_argument("Intrinsics: focal lengths must be positive");
  }
}

Points apply_pose(const RigidPose& pose, const Points& points) {
  pose.validate();
  Points out(points.rows(), 3);
  out = points * pose.rotation.transpose();
  out.rowwise() += pose.translation.transpose();
  return out;
}

RigidPose inverse_pose(const RigidPose& pose) {
  pose.validate();
  return pose.inverse();
}

ProjectionResult project(const Intrinsics& K, const Points& points_cam,
                         double z_min) {
  K.validate();
  const auto n = points_cam.rows();
  ProjectionResult res;
  res.pixels.resize(n, 2);
  res.valid.assign(static_cast<size_t>(n), false);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double z = points_cam(i, 2);
    if (z > z_min) {
      res.pixels(i, 0) = K.fx * points_cam(i, 0) / z + K.cx;
      res.pixels(i, 1) = K.fy * points_cam(i, 1) / z + K.cy;
      res.valid[static_cast<size_t>(i)] = true;
    } else {
      res.pixels(i, 0) = 0.0;
      res.pixels(i, 1) = 0.0;
    }
  }
  return res;
}

Points pixels_to_rays(const Intrinsics& K,
                      const Eigen::Matrix<double, Eigen::Dynamic, 2>& pixels) {
  K.validate();
  Points rays(pixels.rows(), 3);
  rays.col(0) = (pixels.col(0).array() - K.cx) / K.fx;
  rays.col(1) = (pixels.col(1).array() - K.cy) / K.fy;
  rays.col(2).setOnes();
  return rays;
}

Eigen::MatrixXd positional_encode(const Eigen::MatrixXd& x, int bands) {
  if (bands < 1) {
    throw std::invalid_argument("positional_encode: bands must be >= 1");
  }
  const auto n = x.rows();
  const auto d = x.cols();
  Eigen::MatrixXd out(n, d * 2 * bands);
  double freq = M_PI;
  for (int k = 0; k < bands; ++k) {
    out.middleCols(2 * k * d, d) = (x.array() * freq).sin();
    out.middleCols((2 * k + 1) * d, d) = (x.array() * freq).cos();
    freq *= 2.0;
  }
  return out;
}

Alignment procrustes_align(const Points& source, const Points& target,
                           bool with_scale) {
  if (source.rows() != target.rows()) {
    throw std::invalid_argument("procrustes_align: size mismatch");
  }
  if (source.rows() < 3) {
    throw std::invalid_argument("procrustes_align: need at least 3 points");
  }
  const Eigen::RowVector3d mu_s = source.colwise().mean();
  const Eigen::RowVector3d mu_t = target.colwise().mean();
  const Points cs = source.rowwise() - mu_s;
  const Points ct = target.rowwise() - mu_t;

  const Mat3 cov = ct.transpose() * cs;
  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d sv = svd.singularValues();
  if (sv(1) <= 1e-12 * std::max(sv(0), 1e-300)) {
    throw std::invalid_argument("procrustes_align: degenerate configuration");
  }

  Mat3 d = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) {
    d(2, 2) = -1.0;  // Kabsch reflection correction
  }
  const Mat3 rot = svd.matrixU() * d * svd.matrixV().transpose();

  double scale = 1.0;
  if (with_scale) {
    const double var_s = cs.squaredNorm();
    if (var_s <= 0.0) {
      throw std::invalid_argument("procrustes_align: zero-variance source");
    }
    scale = (sv.asDiagonal() * d).trace() / var_s;
  }

  Alignment out;
  out.pose.rotation = rot;
  out.pose.translation = mu_t.transpose() - scale * rot * mu_s.transpose();
  out.scale = scale;
  out.aligned = (scale * (source * rot.transpose())).rowwise() +
                out.pose.translation.transpose();
  out.residual_rms =
      std::sqrt((out.aligned - target).squaredNorm() / double(target.rows()));
  return out;
}

Mat3 so3_exp(const Vec3& omega) {
  const double theta = omega.norm();
  if (theta < 1e-12) {
    Mat3 w;
    w << 0, -omega.z(), omega.y(), omega.z(), 0, -omega.x(), -omega.y(),
        omega.x(), 0;
    return Mat3::Identity() + w;  // first-order near zero
  }
  return Eigen::AngleAxisd(theta, omega / theta).toRotationMatrix();
}

Vec3 so3_log(const Mat3& R) {
  Eigen::AngleAxisd aa(R);
  return aa.angle() * aa.axis();
}

CameraTrack perturb_trajectory(const CameraTrack& track, double sigma_rot,
                               double sigma_trans, uint64_t seed) {
  if (sigma_rot < 0.0 || sigma_trans < 0.0) {
    throw std::invalid_argument("perturb_trajectory: negative sigma");
  }
  if (sigma_rot == 0.0 && sigma_trans == 0.0) {
    return track;
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  CameraTrack out = track;
  Mat3 drift_rot = Mat3::Identity();
  Vec3 drift_trans = Vec3::Zero();
  for (int t = 0; t < track.frames(); ++t) {
    if (sigma_rot > 0.0) {
      const Vec3 xi(sigma_rot * gauss(rng), sigma_rot * gauss(rng),
                    sigma_rot * gauss(rng));
      drift_rot = drift_rot * so3_exp(xi);
      out.poses[static_cast<size_t>(t)].rotation =
          track.poses[static_cast<size_t>(t)].rotation * drift_rot;
    }
    if (sigma_trans > 0.0) {
      const Vec3 eps(sigma_trans * gauss(rng), sigma_trans * gauss(rng),
                     sigma_trans * gauss(rng));
      drift_trans += eps;
      out.poses[static_cast<size_t>(t)].translation =
          track.poses[static_cast<size_t>(t)].translation + drift_trans;
    }
  }
  return out;
}

}  // namespace duomo::geom
