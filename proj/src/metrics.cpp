#include "duomo/metrics.hpp"

#include <Eigen/SVD>
#include <cmath>
#include <stdexcept>

namespace duomo::metrics {

namespace {

constexpr double kMm = 1000.0;

void check_pair(const std::vector<Points>& pred, const std::vector<Points>& gt,
                const char* who) {
  if (pred.size() != gt.size() || pred.empty()) {
    throw std::invalid_argument(std::string(who) + ": frame count mismatch");
  }
  for (size_t t = 0; t < pred.size(); ++t) {
    if (pred[t].rows() != gt[t].rows()) {
      throw std::invalid_argument(std::string(who) + ": shape mismatch");
    }
  }
}

double mean_row_error(const Points& a, const Points& b) {
  return (a - b).rowwise().norm().mean();
}

// Segment errors are RMS so that the least-squares whole-segment alignment
// is provably never beaten by the two-frame one.
double rms_row_error(const Points& a, const Points& b) {
  return std::sqrt((a - b).squaredNorm() / double(a.rows()));
}

// Least-squares alignment that tolerates rank-deficient (collinear or
// coincident) point sets: the rotation is still a minimizer, it is just not
// unique. Same convention as geom::procrustes_align otherwise.
struct LenientAlign {
  geom::Mat3 rotation = geom::Mat3::Identity();
  geom::Vec3 translation = geom::Vec3::Zero();
  double scale = 1.0;

  Points apply(const Points& p) const {
    return (scale * (p * rotation.transpose())).rowwise() +
           translation.transpose();
  }
};

LenientAlign align_lenient(const Points& source, const Points& target,
                           bool with_scale) {
  const Eigen::RowVector3d mu_s = source.colwise().mean();
  const Eigen::RowVector3d mu_t = target.colwise().mean();
  const Points cs = source.rowwise() - mu_s;
  const Points ct = target.rowwise() - mu_t;

  const geom::Mat3 cov = ct.transpose() * cs;
  Eigen::JacobiSVD<geom::Mat3> svd(cov,
                                   Eigen::ComputeFullU | Eigen::ComputeFullV);
  geom::Mat3 d = geom::Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) {
    d(2, 2) = -1.0;
  }

  LenientAlign out;
  out.rotation = svd.matrixU() * d * svd.matrixV().transpose();
  if (with_scale) {
    const double var_s = cs.squaredNorm();
    if (var_s <= 1e-300) {
      throw std::invalid_argument("align: zero-variance source");
    }
    out.scale = (svd.singularValues().asDiagonal() * d).trace() / var_s;
  }
  out.translation =
      mu_t.transpose() - out.scale * out.rotation * mu_s.transpose();
  return out;
}

Points stack_frames(const std::vector<Points>& frames, int begin, int count) {
  const int rows = static_cast<int>(frames[begin].rows());
  Points out(count * rows, 3);
  for (int i = 0; i < count; ++i) {
    out.middleRows(i * rows, rows) = frames[begin + i];
  }
  return out;
}

double path_length(const Trajectory& r) {
  double len = 0.0;
  for (int t = 1; t < r.rows(); ++t) {
    len += (r.row(t) - r.row(t - 1)).norm();
  }
  return len;
}

}  // namespace

void EvalConfig::validate() const {
  if (segment_len < 2) {
    throw std::invalid_argument("EvalConfig: segment_len must be >= 2");
  }
}

double pa_mpjpe(const std::vector<Points>& pred, const std::vector<Points>& gt,
                const body::JointRegressor& reg) {
  check_pair(pred, gt, "pa_mpjpe");
  double sum = 0.0;
  for (size_t t = 0; t < pred.size(); ++t) {
    const Points jp = body::regress_joints(reg, pred[t]);
    const Points jg = body::regress_joints(reg, gt[t]);
    const auto a = align_lenient(jp, jg, /*with_scale=*/true);
    sum += mean_row_error(a.apply(jp), jg);
  }
  return kMm * sum / double(pred.size());
}

namespace {

double pelvis_aligned_error(const std::vector<Points>& pred,
                            const std::vector<Points>& gt,
                            const body::JointRegressor& reg, bool on_joints) {
  double sum = 0.0;
  for (size_t t = 0; t < pred.size(); ++t) {
    const Points jp = body::regress_joints(reg, pred[t]);
    const Points jg = body::regress_joints(reg, gt[t]);
    const Eigen::RowVector3d shift =
        jg.row(body::kPelvis) - jp.row(body::kPelvis);
    if (on_joints) {
      sum += mean_row_error(Points(jp.rowwise() + shift), jg);
    } else {
      sum += mean_row_error(Points(pred[t].rowwise() + shift), gt[t]);
    }
  }
  return kMm * sum / double(pred.size());
}

}  // namespace

double mpjpe(const std::vector<Points>& pred, const std::vector<Points>& gt,
             const body::JointRegressor& reg) {
  check_pair(pred, gt, "mpjpe");
  return pelvis_aligned_error(pred, gt, reg, /*on_joints=*/true);
}

double pve(const std::vector<Points>& pred, const std::vector<Points>& gt,
           const body::JointRegressor& reg) {
  check_pair(pred, gt, "pve");
  return pelvis_aligned_error(pred, gt, reg, /*on_joints=*/false);
}

namespace {

// Per-segment WA/W errors plus the per-frame error under the two-frame
// alignment (frames in a dropped sub-two-frame tail are left uncovered).
struct WaWDetail {
  SegmentErrors segments;
  Eigen::VectorXd w_per_frame_mm;
  std::vector<bool> covered;
};

WaWDetail wa_w_detail(const std::vector<Points>& pred,
                      const std::vector<Points>& gt,
                      const body::JointRegressor& reg, const EvalConfig& cfg) {
  const int T = static_cast<int>(pred.size());
  std::vector<Points> jp(T), jg(T);
  for (int t = 0; t < T; ++t) {
    jp[t] = body::regress_joints(reg, pred[t]);
    jg[t] = body::regress_joints(reg, gt[t]);
  }

  WaWDetail out;
  out.w_per_frame_mm = Eigen::VectorXd::Zero(T);
  out.covered.assign(T, false);
  for (int begin = 0; begin < T; begin += cfg.segment_len) {
    const int len = std::min(cfg.segment_len, T - begin);
    if (len < 2) break;  // tail too short to align
    const Points sp = stack_frames(jp, begin, len);
    const Points sg = stack_frames(jg, begin, len);

    const auto wa = align_lenient(sp, sg, cfg.wa_with_scale);
    out.segments.wa_mm.push_back(kMm * rms_row_error(wa.apply(sp), sg));

    const auto w = align_lenient(stack_frames(jp, begin, 2),
                                 stack_frames(jg, begin, 2), cfg.w_with_scale);
    double seg_sq = 0.0;
    for (int i = 0; i < len; ++i) {
      const double err = kMm * rms_row_error(w.apply(jp[begin + i]),
                                             jg[begin + i]);
      out.w_per_frame_mm(begin + i) = err;
      out.covered[begin + i] = true;
      seg_sq += err * err;
    }
    out.segments.w_mm.push_back(std::sqrt(seg_sq / double(len)));
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / double(v.size());
}

}  // namespace

std::pair<double, double> wa_w_mpjpe(const std::vector<Points>& pred,
                                     const std::vector<Points>& gt,
                                     const body::JointRegressor& reg,
                                     const EvalConfig& cfg,
                                     SegmentErrors* segments) {
  check_pair(pred, gt, "wa_w_mpjpe");
  cfg.validate();
  if (pred.size() < 2) {
    throw std::invalid_argument("wa_w_mpjpe: need at least 2 frames");
  }
  const auto detail = wa_w_detail(pred, gt, reg, cfg);
  if (segments) *segments = detail.segments;
  return {mean_of(detail.segments.wa_mm), mean_of(detail.segments.w_mm)};
}

RteResult rte(const Trajectory& pred_root, const Trajectory& gt_root,
              RteNorm norm) {
  if (pred_root.rows() != gt_root.rows()) {
    throw std::invalid_argument("rte: trajectory length mismatch");
  }
  if (pred_root.rows() < 3) {
    throw std::invalid_argument("rte: need at least 3 frames");
  }
  const auto a = align_lenient(pred_root, gt_root, /*with_scale=*/false);
  const double mean_err = mean_row_error(a.apply(pred_root), gt_root);

  const double denom = norm == RteNorm::PathLength
                           ? path_length(gt_root)
                           : (gt_root.row(gt_root.rows() - 1) - gt_root.row(0))
                                 .norm();
  RteResult out;
  if (denom < 1e-9) {
    out.value = kMm * mean_err;  // absolute fallback, millimeters
    out.degenerate = true;
  } else {
    out.value = 100.0 * mean_err / denom;
  }
  return out;
}

double jitter(const std::vector<Points>& pred, const body::JointRegressor& reg,
              double fps) {
  if (pred.size() < 4) {
    throw std::invalid_argument("jitter: need at least 4 frames");
  }
  const int T = static_cast<int>(pred.size());
  std::vector<Points> j(T);
  for (int t = 0; t < T; ++t) j[t] = body::regress_joints(reg, pred[t]);

  const double f3 = fps * fps * fps;
  double sum = 0.0;
  for (int t = 0; t + 3 < T; ++t) {
    const Points jerk = (j[t + 3] - 3.0 * j[t + 2] + 3.0 * j[t + 1] - j[t]) * f3;
    sum += jerk.rowwise().norm().mean();
  }
  return sum / double(T - 3);
}

FootSlidingResult foot_sliding(const std::vector<Points>& pred,
                               const body::ContactLabels& contacts,
                               const body::BodyModel& model) {
  const std::array<std::vector<int>, 2> feet = {
      model.group_vertices(body::VertexGroup::LeftFoot),
      model.group_vertices(body::VertexGroup::RightFoot)};

  FootSlidingResult out;
  const size_t T = std::min(pred.size(), contacts.size());
  double sum = 0.0;
  int events = 0;
  for (size_t t = 0; t + 1 < T; ++t) {
    for (int f = 0; f < 2; ++f) {
      if (!contacts[t][f] || !contacts[t + 1][f]) continue;
      double disp = 0.0;
      for (int v : feet[f]) {
        const Eigen::RowVector3d d = pred[t + 1].row(v) - pred[t].row(v);
        disp += std::hypot(d.x(), d.z());  // horizontal component only
      }
      sum += disp / double(feet[f].size());
      ++events;
    }
  }
  if (events > 0) {
    out.mm_per_frame = kMm * sum / double(events);
    out.has_contacts = true;
  }
  return out;
}

std::vector<std::pair<std::string, double>> EvalReport::named() const {
  std::vector<std::pair<std::string, double>> out = {
      {"PA-MPJPE (mm)", pa_mpjpe_mm},
      {"MPJPE (mm)", mpjpe_mm},
      {"PVE (mm)", pve_mm},
      {"WA-MPJPE (mm)", wa_mpjpe_mm},
      {"W-MPJPE (mm)", w_mpjpe_mm},
      {rte.degenerate ? "RTE (mm, degenerate path)" : "RTE (%)", rte.value},
      {"Jitter (m/s^3)", jitter_m_s3},
      {"Foot sliding (mm/frame)", foot_sliding.mm_per_frame},
  };
  if (has_occlusion) {
    out.emplace_back("W-MPJPE-Occ (mm)", w_mpjpe_occ_mm);
    out.emplace_back(
        rte_occ.degenerate ? "RTE-Occ (mm, degenerate path)" : "RTE-Occ (%)",
        rte_occ.value);
  }
  return out;
}

void EvalReport::validate() const {
  for (const auto& [name, value] : named()) {
    if (!std::isfinite(value) || value < 0.0) {
      throw std::runtime_error("EvalReport: bad value for " + name);
    }
  }
  for (double v : segments.wa_mm) {
    if (!std::isfinite(v) || v < 0.0) {
      throw std::runtime_error("EvalReport: bad segment value");
    }
  }
}

EvalReport evaluate(const motion::MotionSequence& pred,
                    const motion::MotionSequence& gt,
                    const std::vector<bool>& visibility,
                    const body::BodyModel& model,
                    const body::JointRegressor& reg, const EvalConfig& cfg) {
  cfg.validate();
  const int T = pred.frames();
  if (T != gt.frames() || T == 0 || pred.vertices() != gt.vertices()) {
    throw std::invalid_argument("evaluate: sequence shape mismatch");
  }
  if (pred.fps != gt.fps) {
    throw std::invalid_argument("evaluate: fps mismatch");
  }
  if (!visibility.empty() && static_cast<int>(visibility.size()) != T) {
    throw std::invalid_argument("evaluate: visibility length mismatch");
  }

  const auto abs_pred = motion::absolute_meshes(pred);
  const auto abs_gt = motion::absolute_meshes(gt);

  EvalReport rep;
  rep.pa_mpjpe_mm = pa_mpjpe(abs_pred, abs_gt, reg);
  rep.mpjpe_mm = mpjpe(abs_pred, abs_gt, reg);
  rep.pve_mm = pve(abs_pred, abs_gt, reg);

  const auto detail = wa_w_detail(abs_pred, abs_gt, reg, cfg);
  rep.segments = detail.segments;
  rep.wa_mpjpe_mm = mean_of(detail.segments.wa_mm);
  rep.w_mpjpe_mm = mean_of(detail.segments.w_mm);

  Trajectory root_pred(T, 3), root_gt(T, 3);
  for (int t = 0; t < T; ++t) {
    root_pred.row(t) = body::regress_joints(reg, abs_pred[t]).row(body::kPelvis);
    root_gt.row(t) = body::regress_joints(reg, abs_gt[t]).row(body::kPelvis);
  }
  rep.rte = rte(root_pred, root_gt, cfg.rte_norm);
  rep.jitter_m_s3 = jitter(abs_pred, reg, pred.fps);
  rep.foot_sliding =
      foot_sliding(abs_pred, body::label_contacts(abs_gt, model, gt.fps), model);

  // Occlusion-restricted variants: same alignments, errors averaged over the
  // invisible frames only.
  bool any_invisible = false;
  for (bool v : visibility) any_invisible |= !v;
  if (any_invisible) {
    rep.has_occlusion = true;
    double w_sum = 0.0;
    int w_count = 0;
    double root_sum = 0.0;
    int root_count = 0;
    const auto a = align_lenient(root_pred, root_gt, /*with_scale=*/false);
    const Points aligned_root = a.apply(root_pred);
    for (int t = 0; t < T; ++t) {
      if (visibility[t]) continue;
      if (detail.covered[t]) {
        w_sum += detail.w_per_frame_mm(t);
        ++w_count;
      }
      root_sum += (aligned_root.row(t) - root_gt.row(t)).norm();
      ++root_count;
    }
    rep.w_mpjpe_occ_mm = w_count > 0 ? w_sum / double(w_count) : 0.0;
    const double denom = cfg.rte_norm == RteNorm::PathLength
                             ? path_length(root_gt)
                             : (root_gt.row(T - 1) - root_gt.row(0)).norm();
    const double mean_err = root_sum / double(root_count);
    if (denom < 1e-9) {
      rep.rte_occ = {kMm * mean_err, true};
    } else {
      rep.rte_occ = {100.0 * mean_err / denom, false};
    }
  }

  rep.validate();
  return rep;
}

}  // namespace duomo::metrics
