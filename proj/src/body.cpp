#include "duomo/body.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace duomo::body {

const char* group_name(VertexGroup g) {
  switch (g) {
    case VertexGroup::Pelvis: return "pelvis";
    case VertexGroup::Torso: return "torso";
    case VertexGroup::Head: return "head";
    case VertexGroup::LeftArm: return "left_arm";
    case VertexGroup::RightArm: return "right_arm";
    case VertexGroup::LeftLeg: return "left_leg";
    case VertexGroup::RightLeg: return "right_leg";
    case VertexGroup::LeftFoot: return "left_foot";
    case VertexGroup::RightFoot: return "right_foot";
  }
  return "?";
}

void BodyModel::validate() const {
  const int v = vertices();
  const int j = joints();
  if (skin_weights.rows() != v || skin_weights.cols() != j ||
      static_cast<int>(groups.size()) != v || rest_joints.rows() != j) {
    throw std::invalid_argument("BodyModel: inconsistent dimensions");
  }
  if (parents[0] != -1) {
    throw std::invalid_argument("BodyModel: joint 0 must be the root");
  }
  for (int i = 1; i < j; ++i) {
    if (parents[static_cast<size_t>(i)] < 0 ||
        parents[static_cast<size_t>(i)] >= i) {
      throw std::invalid_argument("BodyModel: parents must form a tree");
    }
  }
  for (int i = 0; i < v; ++i) {
    if (skin_weights.row(i).minCoeff() < -1e-9 ||
        std::abs(skin_weights.row(i).sum() - 1.0) > 1e-6) {
      throw std::invalid_argument("BodyModel: bad skinning weight row");
    }
  }
  if (group_vertices(VertexGroup::Head).empty() ||
      group_vertices(VertexGroup::LeftFoot).empty() ||
      group_vertices(VertexGroup::RightFoot).empty()) {
    throw std::invalid_argument("BodyModel: head/foot groups must be non-empty");
  }
}

double BodyModel::rest_height() const {
  return template_vertices.col(1).maxCoeff() -
         template_vertices.col(1).minCoeff();
}

std::vector<int> BodyModel::group_vertices(VertexGroup g) const {
  std::vector<int> out;
  for (int i = 0; i < vertices(); ++i) {
    if (groups[static_cast<size_t>(i)] == g) out.push_back(i);
  }
  return out;
}

BodyParams BodyParams::rest(int joints) {
  BodyParams p;
  p.joint_rotations = Eigen::MatrixXd::Zero(joints, 3);
  return p;
}

void BodyParams::validate(int joints) const {
  if (joint_rotations.rows() != joints || joint_rotations.cols() != 3) {
    throw std::invalid_argument("BodyParams: wrong rotation shape");
  }
  if (shape_scale < 0.5 || shape_scale > 2.0) {
    throw std::invalid_argument("BodyParams: shape scale out of [0.5, 2.0]");
  }
}

Eigen::VectorXd BodyParams::flatten() const {
  const int j = static_cast<int>(joint_rotations.rows());
  Eigen::VectorXd x(dof(j));
  for (int i = 0; i < j; ++i) x.segment<3>(i * 3) = joint_rotations.row(i);
  x(j * 3) = shape_scale;
  x.segment<3>(j * 3 + 1) = root_translation;
  x.segment<3>(j * 3 + 4) = root_orientation;
  return x;
}

BodyParams BodyParams::unflatten(const Eigen::VectorXd& x, int joints) {
  if (x.size() != dof(joints)) {
    throw std::invalid_argument("BodyParams: wrong flat size");
  }
  BodyParams p;
  p.joint_rotations.resize(joints, 3);
  for (int i = 0; i < joints; ++i) {
    p.joint_rotations.row(i) = x.segment<3>(i * 3);
  }
  p.shape_scale = x(joints * 3);
  p.root_translation = x.segment<3>(joints * 3 + 1);
  p.root_orientation = x.segment<3>(joints * 3 + 4);
  return p;
}

void JointRegressor::validate() const {
  for (Eigen::Index i = 0; i < weights.rows(); ++i) {
    if (weights.row(i).minCoeff() < -1e-9 ||
        std::abs(weights.row(i).sum() - 1.0) > 1e-6) {
      throw std::invalid_argument("JointRegressor: bad row");
    }
    if ((weights.row(i).array() > 1e-12).count() > 16) {
      throw std::invalid_argument("JointRegressor: row exceeds 16 nonzeros");
    }
  }
}

void SparseRegressor::validate() const {
  for (Eigen::Index i = 0; i < weights.rows(); ++i) {
    if (weights.row(i).minCoeff() < -1e-9 ||
        std::abs(weights.row(i).sum() - 1.0) > 1e-6) {
      throw std::invalid_argument("SparseRegressor: bad row");
    }
    if ((weights.row(i).array() > 1e-12).count() > 8) {
      throw std::invalid_argument("SparseRegressor: row exceeds 8 nonzeros");
    }
  }
}

namespace {

struct Segment {
  int bind_joint;
  Vec3 from, to;
  double radius;
  VertexGroup group;
  double share;  // relative vertex budget
};

}  // namespace

BodyModel make_toy_body(int vertices) {
  if (vertices < 48) {
    throw std::invalid_argument("make_toy_body: need at least 48 vertices");
  }
  BodyModel m;
  m.parents = {-1, kPelvis, kSpine, kNeck,
               kPelvis, kLeftHip, kLeftKnee, kLeftAnkle,
               kPelvis, kRightHip, kRightKnee, kRightAnkle,
               kSpine, kLeftShoulder, kSpine, kRightShoulder};

  m.rest_joints.resize(kJointCount, 3);
  m.rest_joints.row(kPelvis) = Vec3(0.00, 0.950, 0.00);
  m.rest_joints.row(kSpine) = Vec3(0.00, 1.250, 0.00);
  m.rest_joints.row(kNeck) = Vec3(0.00, 1.500, 0.00);
  m.rest_joints.row(kHead) = Vec3(0.00, 1.620, 0.00);
  m.rest_joints.row(kLeftHip) = Vec3(0.10, 0.900, 0.00);
  m.rest_joints.row(kLeftKnee) = Vec3(0.10, 0.500, 0.00);
  m.rest_joints.row(kLeftAnkle) = Vec3(0.10, 0.080, 0.00);
  m.rest_joints.row(kLeftToe) = Vec3(0.10, 0.035, 0.16);
  m.rest_joints.row(kRightHip) = Vec3(-0.10, 0.900, 0.00);
  m.rest_joints.row(kRightKnee) = Vec3(-0.10, 0.500, 0.00);
  m.rest_joints.row(kRightAnkle) = Vec3(-0.10, 0.080, 0.00);
  m.rest_joints.row(kRightToe) = Vec3(-0.10, 0.035, 0.16);
  m.rest_joints.row(kLeftShoulder) = Vec3(0.19, 1.460, 0.00);
  m.rest_joints.row(kLeftElbow) = Vec3(0.21, 1.160, 0.00);
  m.rest_joints.row(kRightShoulder) = Vec3(-0.19, 1.460, 0.00);
  m.rest_joints.row(kRightElbow) = Vec3(-0.21, 1.160, 0.00);

  auto jp = [&](int j) -> Vec3 { return m.rest_joints.row(j); };
  const Vec3 head_top(0.0, 1.74, 0.0);
  const Vec3 l_hand(0.22, 0.88, 0.0), r_hand(-0.22, 0.88, 0.0);
  const Vec3 l_toe_tip(0.10, 0.030, 0.21), r_toe_tip(-0.10, 0.030, 0.21);
  const Vec3 l_heel(0.10, 0.035, -0.06), r_heel(-0.10, 0.035, -0.06);

  const std::vector<Segment> segs = {
      {kPelvis, jp(kLeftHip), jp(kRightHip), 0.11, VertexGroup::Pelvis, 1.2},
      {kPelvis, jp(kPelvis), jp(kSpine), 0.12, VertexGroup::Torso, 1.4},
      {kSpine, jp(kSpine), jp(kNeck), 0.13, VertexGroup::Torso, 1.3},
      {kNeck, jp(kNeck), jp(kHead), 0.06, VertexGroup::Head, 0.6},
      {kHead, jp(kHead), head_top, 0.09, VertexGroup::Head, 1.0},
      {kLeftHip, jp(kLeftHip), jp(kLeftKnee), 0.07, VertexGroup::LeftLeg, 1.2},
      {kLeftKnee, jp(kLeftKnee), jp(kLeftAnkle), 0.05, VertexGroup::LeftLeg, 1.2},
      {kLeftAnkle, l_heel, jp(kLeftToe), 0.030, VertexGroup::LeftFoot, 0.9},
      {kLeftToe, jp(kLeftToe), l_toe_tip, 0.028, VertexGroup::LeftFoot, 0.5},
      {kRightHip, jp(kRightHip), jp(kRightKnee), 0.07, VertexGroup::RightLeg, 1.2},
      {kRightKnee, jp(kRightKnee), jp(kRightAnkle), 0.05, VertexGroup::RightLeg, 1.2},
      {kRightAnkle, r_heel, jp(kRightToe), 0.030, VertexGroup::RightFoot, 0.9},
      {kRightToe, jp(kRightToe), r_toe_tip, 0.028, VertexGroup::RightFoot, 0.5},
      {kLeftShoulder, jp(kLeftShoulder), jp(kLeftElbow), 0.045, VertexGroup::LeftArm, 1.0},
      {kLeftElbow, jp(kLeftElbow), l_hand, 0.040, VertexGroup::LeftArm, 1.0},
      {kRightShoulder, jp(kRightShoulder), jp(kRightElbow), 0.045, VertexGroup::RightArm, 1.0},
      {kRightElbow, jp(kRightElbow), r_hand, 0.040, VertexGroup::RightArm, 1.0},
  };

  // Allocate vertex counts per segment: two guaranteed, rest by share.
  const int nseg = static_cast<int>(segs.size());
  std::vector<int> count(static_cast<size_t>(nseg), 2);
  int remaining = vertices - 2 * nseg;
  const double total_share =
      std::accumulate(segs.begin(), segs.end(), 0.0,
                      [](double a, const Segment& s) { return a + s.share; });
  std::vector<double> want(static_cast<size_t>(nseg));
  for (int i = 0; i < nseg; ++i) {
    want[static_cast<size_t>(i)] =
        remaining * segs[static_cast<size_t>(i)].share / total_share;
  }
  std::vector<double> frac(static_cast<size_t>(nseg));
  int assigned = 0;
  for (int i = 0; i < nseg; ++i) {
    const int w = static_cast<int>(std::floor(want[static_cast<size_t>(i)]));
    count[static_cast<size_t>(i)] += w;
    frac[static_cast<size_t>(i)] = want[static_cast<size_t>(i)] - w;
    assigned += w;
  }
  // Distribute the rounding leftovers by largest fraction.
  std::vector<int> order(static_cast<size_t>(nseg));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return frac[static_cast<size_t>(a)] > frac[static_cast<size_t>(b)];
  });
  for (int i = 0; i < remaining - assigned; ++i) {
    count[static_cast<size_t>(order[static_cast<size_t>(i)])] += 1;
  }

  m.template_vertices.resize(vertices, 3);
  m.skin_weights = Eigen::MatrixXd::Zero(vertices, kJointCount);
  m.groups.resize(static_cast<size_t>(vertices));

  constexpr double kGoldenAngle = 2.39996322972865332;
  int vi = 0;
  for (int si = 0; si < nseg; ++si) {
    const Segment& seg = segs[static_cast<size_t>(si)];
    Vec3 axis = seg.to - seg.from;
    const double len = axis.norm();
    axis /= std::max(len, 1e-9);
    // Orthonormal frame around the axis.
    Vec3 u = std::abs(axis.y()) < 0.9 ? axis.cross(Vec3::UnitY())
                                      : axis.cross(Vec3::UnitX());
    u.normalize();
    const Vec3 w = axis.cross(u);
    const int n = count[static_cast<size_t>(si)];
    for (int i = 0; i < n; ++i, ++vi) {
      const double s = (i + 0.5) / n;
      const double phi = (vi + 1) * kGoldenAngle;
      m.template_vertices.row(vi) =
          (seg.from + s * len * axis +
           seg.radius * (std::cos(phi) * u + std::sin(phi) * w))
              .transpose();
      m.skin_weights(vi, seg.bind_joint) = 1.0;
      m.groups[static_cast<size_t>(vi)] = seg.group;
    }
  }

  // Rest the template on the ground plane.
  const double min_y = m.template_vertices.col(1).minCoeff();
  m.template_vertices.col(1).array() -= min_y;
  m.rest_joints.col(1).array() -= min_y;

  m.validate();
  return m;
}

JointRegressor make_joint_regressor(const BodyModel& model, int k) {
  const int v = model.vertices();
  const int j = model.joints();
  k = std::min(k, v);
  JointRegressor reg;
  reg.weights = Eigen::MatrixXd::Zero(j, v);
  for (int ji = 0; ji < j; ++ji) {
    const Vec3 p = model.rest_joints.row(ji);
    std::vector<std::pair<double, int>> d(static_cast<size_t>(v));
    for (int i = 0; i < v; ++i) {
      d[static_cast<size_t>(i)] = {
          (model.template_vertices.row(i).transpose() - p).norm(), i};
    }
    std::partial_sort(d.begin(), d.begin() + k, d.end());
    double sum = 0.0;
    for (int i = 0; i < k; ++i) {
      const double w = 1.0 / (d[static_cast<size_t>(i)].first + 1e-3);
      reg.weights(ji, d[static_cast<size_t>(i)].second) = w;
      sum += w;
    }
    reg.weights.row(ji) /= sum;
  }
  reg.validate();
  return reg;
}

JointFrames forward_kinematics(const BodyModel& model,
                               const BodyParams& params) {
  params.validate(model.joints());
  const int j = model.joints();
  const double s = params.shape_scale;
  JointFrames f;
  f.rotation.resize(static_cast<size_t>(j));
  f.position.resize(j, 3);

  f.rotation[0] = geom::so3_exp(params.joint_rotations.row(0));
  f.position.row(0) = s * model.rest_joints.row(0);
  for (int i = 1; i < j; ++i) {
    const int p = model.parents[static_cast<size_t>(i)];
    const Vec3 offset =
        s * (model.rest_joints.row(i) - model.rest_joints.row(p)).transpose();
    f.position.row(i) = f.position.row(p) +
                        (f.rotation[static_cast<size_t>(p)] * offset).transpose();
    f.rotation[static_cast<size_t>(i)] =
        f.rotation[static_cast<size_t>(p)] *
        geom::so3_exp(params.joint_rotations.row(i));
  }

  // Root rigid transform, applied about the origin after local posing.
  const Mat3 root_rot = geom::so3_exp(params.root_orientation);
  for (int i = 0; i < j; ++i) {
    f.position.row(i) = (root_rot * f.position.row(i).transpose() +
                         params.root_translation)
                            .transpose();
    f.rotation[static_cast<size_t>(i)] = root_rot * f.rotation[static_cast<size_t>(i)];
  }
  return f;
}

Points skin(const BodyModel& model, const JointFrames& frames, double scale) {
  const int v = model.vertices();
  Points out = Points::Zero(v, 3);
  for (int i = 0; i < v; ++i) {
    const Vec3 rest = scale * model.template_vertices.row(i).transpose();
    Vec3 acc = Vec3::Zero();
    for (int ji = 0; ji < model.joints(); ++ji) {
      const double w = model.skin_weights(i, ji);
      if (w == 0.0) continue;
      const Vec3 pivot = scale * model.rest_joints.row(ji).transpose();
      acc += w * (frames.rotation[static_cast<size_t>(ji)] * (rest - pivot) +
                  frames.position.row(ji).transpose());
    }
    out.row(i) = acc.transpose();
  }
  return out;
}

Points pose_body(const BodyModel& model, const BodyParams& params) {
  return skin(model, forward_kinematics(model, params), params.shape_scale);
}

Points regress_joints(const JointRegressor& reg, const Points& mesh) {
  if (reg.weights.cols() != mesh.rows()) {
    throw std::invalid_argument("regress_joints: dimension mismatch");
  }
  return reg.weights * mesh;
}

namespace {

// Lawson-Hanson nonnegative least squares; fine for the small systems here.
Eigen::VectorXd nnls(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
  const int n = static_cast<int>(A.cols());
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  std::vector<bool> passive(static_cast<size_t>(n), false);
  Eigen::VectorXd w = A.transpose() * (b - A * x);
  const double tol = 1e-10 * A.cwiseAbs().maxCoeff() * b.cwiseAbs().maxCoeff();

  for (int outer = 0; outer < 3 * n; ++outer) {
    int best = -1;
    double best_w = tol;
    for (int i = 0; i < n; ++i) {
      if (!passive[static_cast<size_t>(i)] && w(i) > best_w) {
        best = i;
        best_w = w(i);
      }
    }
    if (best < 0) break;
    passive[static_cast<size_t>(best)] = true;

    for (int inner = 0; inner < 3 * n; ++inner) {
      std::vector<int> idx;
      for (int i = 0; i < n; ++i) {
        if (passive[static_cast<size_t>(i)]) idx.push_back(i);
      }
      Eigen::MatrixXd Ap(A.rows(), static_cast<Eigen::Index>(idx.size()));
      for (size_t c = 0; c < idx.size(); ++c) {
        Ap.col(static_cast<Eigen::Index>(c)) = A.col(idx[c]);
      }
      const Eigen::VectorXd z = Ap.colPivHouseholderQr().solve(b);
      double alpha = 1.0;
      bool all_pos = true;
      for (size_t c = 0; c < idx.size(); ++c) {
        if (z(static_cast<Eigen::Index>(c)) <= 0.0) {
          all_pos = false;
          const double xi = x(idx[c]);
          const double zi = z(static_cast<Eigen::Index>(c));
          alpha = std::min(alpha, xi / (xi - zi));
        }
      }
      if (all_pos) {
        x.setZero();
        for (size_t c = 0; c < idx.size(); ++c) {
          x(idx[c]) = z(static_cast<Eigen::Index>(c));
        }
        break;
      }
      for (size_t c = 0; c < idx.size(); ++c) {
        x(idx[c]) += alpha * (z(static_cast<Eigen::Index>(c)) - x(idx[c]));
        if (x(idx[c]) <= 1e-12) {
          x(idx[c]) = 0.0;
          passive[static_cast<size_t>(idx[c])] = false;
        }
      }
    }
    w = A.transpose() * (b - A * x);
  }
  return x;
}

double mean_vertex_error(const SparseRegressor& reg,
                         const std::vector<Points>& dense,
                         const std::vector<Points>& sparse, size_t begin,
                         size_t end) {
  double err = 0.0;
  int count = 0;
  for (size_t i = begin; i < end; ++i) {
    const Points rec = reg.weights * dense[i];
    err += (rec - sparse[i]).rowwise().norm().sum();
    count += static_cast<int>(sparse[i].rows());
  }
  return count > 0 ? err / count : 0.0;
}

}  // namespace

Points apply_sparse_regressor(const SparseRegressor& reg, const Points& dense) {
  if (reg.weights.cols() != dense.rows()) {
    throw std::invalid_argument("apply_sparse_regressor: dimension mismatch");
  }
  return reg.weights * dense;
}

SparseRegressorFit fit_sparse_regressor(const std::vector<Points>& dense,
                                        const std::vector<Points>& sparse,
                                        int k, int heldout) {
  if (dense.size() != sparse.size() || dense.size() < 20) {
    throw std::invalid_argument(
        "fit_sparse_regressor: need at least 20 paired meshes");
  }
  const size_t n_train = dense.size() - static_cast<size_t>(heldout);
  const int vd = static_cast<int>(dense[0].rows());
  const int vs = static_cast<int>(sparse[0].rows());
  k = std::min(k, vd);

  Points dense_mean = Points::Zero(vd, 3);
  Points sparse_mean = Points::Zero(vs, 3);
  for (size_t i = 0; i < n_train; ++i) {
    dense_mean += dense[i];
    sparse_mean += sparse[i];
  }
  dense_mean /= static_cast<double>(n_train);
  sparse_mean /= static_cast<double>(n_train);

  SparseRegressorFit fit;
  fit.regressor.weights = Eigen::MatrixXd::Zero(vs, vd);
  for (int si = 0; si < vs; ++si) {
    std::vector<std::pair<double, int>> d(static_cast<size_t>(vd));
    for (int i = 0; i < vd; ++i) {
      d[static_cast<size_t>(i)] = {
          (dense_mean.row(i) - sparse_mean.row(si)).norm(), i};
    }
    std::partial_sort(d.begin(), d.begin() + k, d.end());

    Eigen::MatrixXd A(3 * static_cast<Eigen::Index>(n_train), k);
    Eigen::VectorXd b(3 * static_cast<Eigen::Index>(n_train));
    for (size_t m = 0; m < n_train; ++m) {
      for (int c = 0; c < k; ++c) {
        A.block<3, 1>(3 * static_cast<Eigen::Index>(m), c) =
            dense[m].row(d[static_cast<size_t>(c)].second).transpose();
      }
      b.segment<3>(3 * static_cast<Eigen::Index>(m)) =
          sparse[m].row(si).transpose();
    }
    Eigen::VectorXd wsol = nnls(A, b);
    double sum = wsol.sum();
    if (sum < 1e-8) {
      wsol.setZero();
      wsol(0) = 1.0;  // fall back to the nearest dense vertex
      sum = 1.0;
    }
    wsol /= sum;
    for (int c = 0; c < k; ++c) {
      if (wsol(c) > 1e-12) {
        fit.regressor.weights(si, d[static_cast<size_t>(c)].second) = wsol(c);
      }
    }
    // Renormalize after pruning tiny weights.
    fit.regressor.weights.row(si) /= fit.regressor.weights.row(si).sum();
  }
  fit.regressor.validate();
  fit.train_error = mean_vertex_error(fit.regressor, dense, sparse, 0, n_train);
  fit.heldout_error =
      mean_vertex_error(fit.regressor, dense, sparse, n_train, dense.size());
  return fit;
}

ContactLabels label_contacts(const std::vector<Points>& world_meshes,
                             const BodyModel& model, double fps,
                             double h_thresh, double v_thresh30) {
  const auto left = model.group_vertices(VertexGroup::LeftFoot);
  const auto right = model.group_vertices(VertexGroup::RightFoot);
  const double v_thresh = v_thresh30 * 30.0 / fps;
  const int t_count = static_cast<int>(world_meshes.size());
  ContactLabels labels(static_cast<size_t>(t_count));

  auto foot_state = [&](const std::vector<int>& verts, int t) {
    const Points& cur = world_meshes[static_cast<size_t>(t)];
    const int prev = t > 0 ? t - 1 : std::min(t + 1, t_count - 1);
    const Points& other = world_meshes[static_cast<size_t>(prev)];
    double min_y = std::numeric_limits<double>::max();
    double speed = 0.0;
    for (int v : verts) {
      min_y = std::min(min_y, cur(v, 1));
      speed += (cur.row(v) - other.row(v)).norm();
    }
    speed /= static_cast<double>(verts.size());
    if (t_count == 1) speed = 0.0;
    return min_y <= h_thresh && speed <= v_thresh;
  };

  for (int t = 0; t < t_count; ++t) {
    labels[static_cast<size_t>(t)] = {foot_state(left, t), foot_state(right, t)};
  }
  return labels;
}

}  // namespace duomo::body
