#include "duomo/ablation.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace duomo::ablation {

namespace {

uint64_t mix(uint64_t h, uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  h ^= h >> 31;
  h *= 0xbf58476d1ce4e5b9ull;
  h ^= h >> 27;
  return h;
}

MetricSummary summarize(const metrics::EvalReport& rep) {
  MetricSummary s;
  s.wa_mpjpe_mm = rep.wa_mpjpe_mm;
  s.w_mpjpe_mm = rep.w_mpjpe_mm;
  s.rte_percent = rep.rte.value;
  s.jitter_m_s3 = rep.jitter_m_s3;
  s.foot_sliding_mm = rep.foot_sliding.mm_per_frame;
  return s;
}

void accumulate(MetricSummary& acc, const MetricSummary& s) {
  acc.wa_mpjpe_mm += s.wa_mpjpe_mm;
  acc.w_mpjpe_mm += s.w_mpjpe_mm;
  acc.rte_percent += s.rte_percent;
  acc.jitter_m_s3 += s.jitter_m_s3;
  acc.foot_sliding_mm += s.foot_sliding_mm;
}

void divide(MetricSummary& acc, int n) {
  acc.wa_mpjpe_mm /= n;
  acc.w_mpjpe_mm /= n;
  acc.rte_percent /= n;
  acc.jitter_m_s3 /= n;
  acc.foot_sliding_mm /= n;
}

}  // namespace

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::LiftingOnly: return "lifting-only";
    case Variant::WorldOnly: return "world-only";
    case Variant::Full: return "full";
  }
  return "?";
}

const char* channel_name(NoiseChannel c) {
  switch (c) {
    case NoiseChannel::Rotation: return "rotation";
    case NoiseChannel::Translation: return "translation";
    case NoiseChannel::Combined: return "combined";
  }
  return "?";
}

void AblationConfig::validate() const {
  if (sigma_grid.empty()) {
    throw std::invalid_argument("ablation: empty sigma grid");
  }
  if (!std::is_sorted(sigma_grid.begin(), sigma_grid.end()) ||
      sigma_grid.front() < 0.0) {
    throw std::invalid_argument("ablation: sigma grid must be sorted, >= 0");
  }
  if (trials_per_level < 1) {
    throw std::invalid_argument("ablation: trials_per_level must be >= 1");
  }
  if (variants.empty() || channels.empty()) {
    throw std::invalid_argument("ablation: no variants or channels");
  }
}

motion::MotionSequence reconstruct_variant(
    Variant v, const training::Checkpoint& camera_ckpt,
    const training::Checkpoint& world_ckpt, const body::BodyModel& model,
    const synth::SequenceRecord& rec, const geom::CameraTrack& track,
    const guidance::GuidanceOptions& opts, std::mt19937_64& rng) {
  const auto reg = body::make_joint_regressor(model);
  const int T = track.frames();
  switch (v) {
    case Variant::LiftingOnly: {
      const auto cam = training::camera_model_from_checkpoint(camera_ckpt);
      const auto est = training::sample_camera_motion(
          *cam, rec.keypoints, track.intrinsics, rec.height_m, track.fps,
          opts.ddim_steps, rng);
      return motion::lift(est, track, reg);
    }
    case Variant::WorldOnly: {
      const auto wm = training::world_model_from_checkpoint(world_ckpt);
      const std::vector<geom::Points> meshes(
          T, geom::Points::Zero(wm->vertices, 3));
      const Eigen::Matrix<double, Eigen::Dynamic, 3> roots =
          Eigen::Matrix<double, Eigen::Dynamic, 3>::Zero(T, 3);
      return training::sample_world_motion(*wm, meshes, roots,
                                           std::vector<bool>(T, false),
                                           rec.height_m, track.fps,
                                           opts.ddim_steps, rng);
    }
    case Variant::Full: {
      return guidance::guided_reconstruct(camera_ckpt, world_ckpt, model,
                                          rec.keypoints, track, rec.height_m,
                                          opts, rng)
          .world;
    }
  }
  throw std::invalid_argument("ablation: unknown variant");
}

AblationResult run_camera_noise_ablation(const training::Checkpoint& camera_ckpt,
                                         const training::Checkpoint& world_ckpt,
                                         const body::BodyModel& model,
                                         const synth::Dataset& ds,
                                         const AblationConfig& cfg) {
  cfg.validate();
  const auto reg = body::make_joint_regressor(model);

  auto test = ds.split_indices(synth::Split::Test);
  if (cfg.max_sequences > 0 &&
      static_cast<int>(test.size()) > cfg.max_sequences) {
    test.resize(cfg.max_sequences);
  }
  if (test.empty()) {
    throw std::invalid_argument("ablation: no test sequences");
  }

  auto eval_one = [&](Variant v, const synth::SequenceRecord& rec,
                      const geom::CameraTrack& track,
                      uint64_t seed) -> MetricSummary {
    std::mt19937_64 rng(seed);
    const auto pred = reconstruct_variant(v, camera_ckpt, world_ckpt, model,
                                          rec, track, cfg.guidance, rng);
    return summarize(
        metrics::evaluate(pred, rec.world, rec.visibility, model, reg));
  };

  // Clean-input point, shared across channels.
  std::vector<MetricSummary> clean(cfg.variants.size());
  const bool has_zero = cfg.sigma_grid.front() == 0.0;
  if (has_zero) {
    for (size_t vi = 0; vi < cfg.variants.size(); ++vi) {
      MetricSummary acc;
      int n = 0;
      for (int trial = 0; trial < cfg.trials_per_level; ++trial) {
        for (int idx : test) {
          const auto& rec = ds.records[idx];
          const uint64_t s =
              mix(mix(mix(cfg.seed, vi + 1), trial + 1), idx + 1);
          accumulate(acc, eval_one(cfg.variants[vi], rec, rec.track, s));
          ++n;
        }
      }
      divide(acc, n);
      clean[vi] = acc;
    }
  }

  AblationResult out;
  for (size_t vi = 0; vi < cfg.variants.size(); ++vi) {
    for (NoiseChannel ch : cfg.channels) {
      Curve curve;
      curve.variant = cfg.variants[vi];
      curve.channel = ch;
      for (size_t li = 0; li < cfg.sigma_grid.size(); ++li) {
        const double sigma = cfg.sigma_grid[li];
        CurvePoint pt;
        pt.sigma = sigma;
        if (sigma == 0.0 && has_zero) {
          pt.mean = clean[vi];
          pt.samples = cfg.trials_per_level * static_cast<int>(test.size());
          curve.points.push_back(pt);
          continue;
        }
        const double s_rot = ch != NoiseChannel::Translation ? sigma : 0.0;
        const double s_trans = ch != NoiseChannel::Rotation ? sigma : 0.0;
        MetricSummary acc;
        int n = 0;
        for (int trial = 0; trial < cfg.trials_per_level; ++trial) {
          for (int idx : test) {
            const auto& rec = ds.records[idx];
            // Same perturbed track for every variant at a given trial.
            const uint64_t track_seed =
                mix(mix(mix(mix(cfg.seed, uint64_t(ch) + 11), li + 1),
                        trial + 1),
                    idx + 1);
            const auto track = motion::rebase_track(
                geom::perturb_trajectory(rec.track, s_rot, s_trans,
                                         track_seed));
            // Sampling seed matches the clean point's: curves are paired
            // across levels and channels, isolating the track perturbation.
            const uint64_t s =
                mix(mix(mix(cfg.seed, vi + 1), trial + 1), idx + 1);
            accumulate(acc, eval_one(cfg.variants[vi], rec, track, s));
            ++n;
          }
        }
        divide(acc, n);
        pt.mean = acc;
        pt.samples = n;
        curve.points.push_back(pt);
      }
      out.curves.push_back(std::move(curve));
    }
  }
  return out;
}

std::string curves_to_text(const AblationResult& result) {
  std::ostringstream os;
  os << "variant\tchannel\tsigma\twa_mpjpe_mm\tw_mpjpe_mm\trte_percent"
     << "\tjitter_m_s3\tfoot_sliding_mm\tsamples\n";
  for (const auto& c : result.curves) {
    for (const auto& p : c.points) {
      os << variant_name(c.variant) << '\t' << channel_name(c.channel) << '\t'
         << p.sigma << '\t' << p.mean.wa_mpjpe_mm << '\t' << p.mean.w_mpjpe_mm
         << '\t' << p.mean.rte_percent << '\t' << p.mean.jitter_m_s3 << '\t'
         << p.mean.foot_sliding_mm << '\t' << p.samples << '\n';
    }
  }
  return os.str();
}

double spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("spearman_rho: need matched series, size >= 2");
  }
  auto ranks = [](const std::vector<double>& v) {
    const int n = static_cast<int>(v.size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return v[a] < v[b]; });
    std::vector<double> r(n);
    int i = 0;
    while (i < n) {
      int j = i;
      while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = 0.5 * (i + j) + 1.0;  // average rank on ties
      for (int k = i; k <= j; ++k) r[order[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const int n = static_cast<int>(x.size());
  double mx = 0, my = 0;
  for (int i = 0; i < n; ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double num = 0, dx = 0, dy = 0;
  for (int i = 0; i < n; ++i) {
    num += (rx[i] - mx) * (ry[i] - my);
    dx += (rx[i] - mx) * (rx[i] - mx);
    dy += (ry[i] - my) * (ry[i] - my);
  }
  if (dx <= 0.0 || dy <= 0.0) return 0.0;  // constant series
  return num / std::sqrt(dx * dy);
}

}  // namespace duomo::ablation
