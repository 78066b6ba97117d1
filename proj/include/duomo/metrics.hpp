#pragma once

#include <string>
#include <utility>
#include <vector>

#include "duomo/body.hpp"
#include "duomo/motion.hpp"

// Evaluation metrics: camera-space joint/vertex errors under the usual
// alignment conventions, and world-space trajectory quality (segment-aligned
// joint error, root trajectory error, jerk, foot sliding).
namespace duomo::metrics {

using geom::Points;
using Trajectory = Eigen::Matrix<double, Eigen::Dynamic, 3>;

enum class RteNorm { PathLength, FinalDisplacement };

struct EvalConfig {
  int segment_len = 100;     // frames per world-space segment
  bool wa_with_scale = true;   // whole-segment alignment is a similarity
  bool w_with_scale = false;   // two-frame alignment is rigid only
  RteNorm rte_norm = RteNorm::PathLength;

  void validate() const;  // segment_len >= 2
};

// Per-frame joint error after full similarity alignment, millimeters.
double pa_mpjpe(const std::vector<Points>& pred, const std::vector<Points>& gt,
                const body::JointRegressor& reg);
// Pelvis-translation alignment only; joint error in millimeters.
double mpjpe(const std::vector<Points>& pred, const std::vector<Points>& gt,
             const body::JointRegressor& reg);
// Pelvis-translation alignment only; vertex error in millimeters.
double pve(const std::vector<Points>& pred, const std::vector<Points>& gt,
           const body::JointRegressor& reg);

struct SegmentErrors {
  std::vector<double> wa_mm;  // one per segment
  std::vector<double> w_mm;
};

// Non-overlapping segments of cfg.segment_len frames (tail kept when it has
// at least two frames). WA aligns each whole segment, W aligns on the first
// two frames only. Segment errors are RMS over joints and frames, which
// guarantees WA <= W (least-squares optimality of the whole-segment fit).
// Returns (WA, W) in millimeters, averaged over segments; optionally reports
// the per-segment breakdown.
std::pair<double, double> wa_w_mpjpe(const std::vector<Points>& pred,
                                     const std::vector<Points>& gt,
                                     const body::JointRegressor& reg,
                                     const EvalConfig& cfg = {},
                                     SegmentErrors* segments = nullptr);

struct RteResult {
  double value = 0.0;        // percent; absolute mean error (mm) if degenerate
  bool degenerate = false;   // ground-truth path length was ~zero
};

// Rigid alignment of the predicted root trajectory onto the ground truth;
// mean per-frame error over the normalizer, as a percentage.
RteResult rte(const Trajectory& pred_root, const Trajectory& gt_root,
              RteNorm norm = RteNorm::PathLength);

// Mean third-difference jerk magnitude of the regressed joints, m/s^3.
double jitter(const std::vector<Points>& pred, const body::JointRegressor& reg,
              double fps);

struct FootSlidingResult {
  double mm_per_frame = 0.0;
  bool has_contacts = false;  // false when the contact set is empty
};

// Mean horizontal displacement of the predicted foot vertices between
// consecutive frames that are both labeled in contact.
FootSlidingResult foot_sliding(const std::vector<Points>& pred,
                               const body::ContactLabels& contacts,
                               const body::BodyModel& model);

struct EvalReport {
  double pa_mpjpe_mm = 0.0;
  double mpjpe_mm = 0.0;
  double pve_mm = 0.0;
  double wa_mpjpe_mm = 0.0;
  double w_mpjpe_mm = 0.0;
  SegmentErrors segments;
  RteResult rte;
  double jitter_m_s3 = 0.0;
  FootSlidingResult foot_sliding;

  bool has_occlusion = false;  // occlusion variants applicable
  double w_mpjpe_occ_mm = 0.0;
  RteResult rte_occ;

  std::vector<std::pair<std::string, double>> named() const;
  void validate() const;  // every value finite and >= 0
};

// Full suite. `visibility` marks frames with usable observations; empty
// means all visible. Contacts for foot sliding come from the ground truth.
EvalReport evaluate(const motion::MotionSequence& pred,
                    const motion::MotionSequence& gt,
                    const std::vector<bool>& visibility,
                    const body::BodyModel& model,
                    const body::JointRegressor& reg,
                    const EvalConfig& cfg = {});

}  // namespace duomo::metrics
