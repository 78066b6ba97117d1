#pragma once

#include <string>
#include <vector>

#include "duomo/guidance.hpp"
#include "duomo/metrics.hpp"
#include "duomo/synth.hpp"
#include "duomo/training.hpp"

// Camera-noise robustness and dual-prior ablations: reconstruct the test set
// through perturbed camera tracks with several pipeline variants and average
// the world-space metrics per noise level.
namespace duomo::ablation {

enum class Variant : uint8_t {
  LiftingOnly,  // camera model lifted through the track, no refinement
  WorldOnly,    // world model with fully masked conditioning (no anchors)
  Full,         // two-stage guided reconstruction
};

enum class NoiseChannel : uint8_t { Rotation, Translation, Combined };

const char* variant_name(Variant v);
const char* channel_name(NoiseChannel c);

struct AblationConfig {
  std::vector<double> sigma_grid = {0.0, 0.005, 0.01, 0.02, 0.04};
  int trials_per_level = 10;  // perturbed tracks per level per sequence
  std::vector<Variant> variants = {Variant::LiftingOnly, Variant::Full};
  std::vector<NoiseChannel> channels = {NoiseChannel::Rotation,
                                        NoiseChannel::Translation,
                                        NoiseChannel::Combined};
  guidance::GuidanceOptions guidance;  // sampler settings for every variant
  int max_sequences = 0;               // 0 = the whole test split
  uint64_t seed = 17;

  void validate() const;
};

struct MetricSummary {
  double wa_mpjpe_mm = 0.0;
  double w_mpjpe_mm = 0.0;
  double rte_percent = 0.0;
  double jitter_m_s3 = 0.0;
  double foot_sliding_mm = 0.0;
};

struct CurvePoint {
  double sigma = 0.0;
  MetricSummary mean;  // over trials and sequences
  int samples = 0;
};

struct Curve {
  Variant variant = Variant::Full;
  NoiseChannel channel = NoiseChannel::Combined;
  std::vector<CurvePoint> points;  // one per grid level, ascending sigma
};

struct AblationResult {
  std::vector<Curve> curves;
};

// One sequence through one variant. The track must start at identity.
motion::MotionSequence reconstruct_variant(
    Variant v, const training::Checkpoint& camera_ckpt,
    const training::Checkpoint& world_ckpt, const body::BodyModel& model,
    const synth::SequenceRecord& rec, const geom::CameraTrack& track,
    const guidance::GuidanceOptions& opts, std::mt19937_64& rng);

// The sigma = 0 level is evaluated once per variant and shared across
// channels, so every curve starts from the same clean-input point.
AblationResult run_camera_noise_ablation(const training::Checkpoint& camera_ckpt,
                                         const training::Checkpoint& world_ckpt,
                                         const body::BodyModel& model,
                                         const synth::Dataset& ds,
                                         const AblationConfig& cfg);

// Tab-separated curve dump: variant, channel, sigma, metrics.
std::string curves_to_text(const AblationResult& result);

// Spearman rank correlation (average ranks on ties).
double spearman_rho(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace duomo::ablation
