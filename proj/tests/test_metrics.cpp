#include <doctest.h>

#include <cmath>
#include <random>

#include "duomo/metrics.hpp"

using namespace duomo;
using namespace duomo::metrics;
using geom::Points;
using geom::Vec3;

namespace {

struct Fixture {
  body::BodyModel model = body::make_toy_body();
  body::JointRegressor reg = body::make_joint_regressor(model);
  Points rest = body::pose_body(model, body::BodyParams::rest(model.joints()));
};

Fixture& fx() {
  static Fixture f;
  return f;
}

// Frames of the rest mesh carried along a smooth path with mild wobble.
std::vector<Points> make_walk(int frames, double fps, uint64_t seed,
                              double wobble = 0.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  const Vec3 phase(n(rng), n(rng), n(rng));
  std::vector<Points> out(frames);
  for (int t = 0; t < frames; ++t) {
    const double s = t / fps;
    Vec3 off(0.8 * s, 0.02 * std::sin(2.0 * s + phase.x()),
             0.3 * std::sin(0.7 * s + phase.y()));
    if (wobble > 0.0) {
      off += wobble * Vec3(std::sin(3.1 * s + phase.z()),
                           std::cos(2.3 * s + phase.x()),
                           std::sin(1.7 * s + phase.y()));
    }
    out[t] = fx().rest.rowwise() + off.transpose();
  }
  return out;
}

std::vector<Points> transform_all(const geom::RigidPose& g,
                                  const std::vector<Points>& meshes) {
  std::vector<Points> out(meshes.size());
  for (size_t t = 0; t < meshes.size(); ++t) {
    out[t] = geom::apply_pose(g, meshes[t]);
  }
  return out;
}

// Brute-force rigid alignment: grid over rotations (translation closed-form
// for the squared error), then shrinking-step coordinate descent.
double rte_oracle(const Trajectory& pred, const Trajectory& gt) {
  const Eigen::RowVector3d mu_s = pred.colwise().mean();
  const Eigen::RowVector3d mu_t = gt.colwise().mean();
  const Points cs = pred.rowwise() - mu_s;
  const Points ct = gt.rowwise() - mu_t;
  auto sq_err = [&](const geom::Mat3& R) {
    return (cs * R.transpose() - ct).squaredNorm();
  };

  geom::Mat3 best = geom::Mat3::Identity();
  double best_err = sq_err(best);
  for (int i = 0; i < 12; ++i) {
    const double th = M_PI * (i + 0.5) / 12.0;
    for (int j = 0; j < 12; ++j) {
      const double ph = 2.0 * M_PI * j / 12.0;
      const Vec3 axis(std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph),
                      std::cos(th));
      for (int k = 1; k < 36; ++k) {
        const geom::Mat3 R = geom::so3_exp(axis * (2.0 * M_PI * k / 36.0));
        const double e = sq_err(R);
        if (e < best_err) {
          best_err = e;
          best = R;
        }
      }
    }
  }
  Vec3 w = geom::so3_log(best);
  double step = 0.2;
  while (step > 1e-13) {
    bool improved = false;
    for (int c = 0; c < 3; ++c) {
      for (double sgn : {1.0, -1.0}) {
        Vec3 w2 = w;
        w2(c) += sgn * step;
        const double e = sq_err(geom::so3_exp(w2));
        if (e < best_err) {
          best_err = e;
          w = w2;
          improved = true;
        }
      }
    }
    if (!improved) step *= 0.5;
  }
  const geom::Mat3 R = geom::so3_exp(w);
  const Vec3 t = mu_t.transpose() - R * mu_s.transpose();
  const double mean_err =
      ((pred * R.transpose()).rowwise() + t.transpose() - gt)
          .rowwise()
          .norm()
          .mean();
  double path = 0.0;
  for (int i = 1; i < gt.rows(); ++i) path += (gt.row(i) - gt.row(i - 1)).norm();
  return 100.0 * mean_err / path;
}

}  // namespace

TEST_CASE("camera-space metrics vanish on identity and obey alignment "
          "semantics") {
  auto& f = fx();
  const auto gt = make_walk(20, 30.0, 1);
  CHECK(pa_mpjpe(gt, gt, f.reg) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(mpjpe(gt, gt, f.reg) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(pve(gt, gt, f.reg) == doctest::Approx(0.0).epsilon(1e-9));

  // Rotation about the pelvis: absorbed by the similarity alignment only.
  std::vector<Points> rot(gt.size());
  const geom::Mat3 R = geom::so3_exp(Vec3(0.0, M_PI / 6.0, 0.0));
  for (size_t t = 0; t < gt.size(); ++t) {
    const Eigen::RowVector3d pelvis =
        body::regress_joints(f.reg, gt[t]).row(body::kPelvis);
    rot[t] =
        ((gt[t].rowwise() - pelvis) * R.transpose()).rowwise() + pelvis;
  }
  CHECK(pa_mpjpe(rot, gt, f.reg) < 1e-6);
  CHECK(mpjpe(rot, gt, f.reg) > 10.0);

  // A uniform offset lands entirely in the pelvis alignment.
  std::vector<Points> shifted(gt.size());
  for (size_t t = 0; t < gt.size(); ++t) {
    shifted[t] = gt[t].rowwise() + Eigen::RowVector3d(0.01, 0.0, 0.0);
  }
  CHECK(mpjpe(shifted, gt, f.reg) < 1e-9);
  CHECK(pve(shifted, gt, f.reg) < 1e-9);
}

TEST_CASE("world-aligned error never beats the two-frame alignment") {
  auto& f = fx();
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 1.0);
  const int V = f.model.vertices();
  for (int trial = 0; trial < 1000; ++trial) {
    const int T = 4 + int(rng() % 5);
    std::vector<Points> pred(T), gt(T);
    for (int t = 0; t < T; ++t) {
      pred[t] = f.rest;
      gt[t] = f.rest;
      for (int v = 0; v < V; ++v) {
        for (int c = 0; c < 3; ++c) {
          pred[t](v, c) += 0.1 * n(rng);
          gt[t](v, c) += 0.1 * n(rng);
        }
      }
    }
    EvalConfig cfg;
    cfg.segment_len = 4;
    const auto [wa, w] = wa_w_mpjpe(pred, gt, f.reg, cfg);
    CHECK(wa <= w + 1e-9);
  }
}

TEST_CASE("segment-aligned errors absorb global rigid transforms") {
  auto& f = fx();
  const auto gt = make_walk(130, 30.0, 2);
  geom::RigidPose g;
  g.rotation = geom::so3_exp(Vec3(0.3, -0.7, 0.2));
  g.translation = Vec3(2.0, -0.5, 1.0);
  const auto moved = transform_all(g, gt);

  SegmentErrors segs;
  const auto [wa, w] = wa_w_mpjpe(moved, gt, f.reg, {}, &segs);
  CHECK(wa < 1e-6);
  CHECK(w < 1e-6);
  // 130 frames at segment_len 100: the 30-frame tail is its own segment.
  CHECK(segs.wa_mm.size() == 2);
  CHECK(segs.w_mm.size() == 2);

  // And a sub-two-frame tail is dropped.
  const auto gt101 = make_walk(101, 30.0, 2);
  SegmentErrors segs101;
  (void)wa_w_mpjpe(gt101, gt101, f.reg, {}, &segs101);
  CHECK(segs101.wa_mm.size() == 1);

  CHECK_THROWS_AS((void)wa_w_mpjpe({f.rest}, {f.rest}, f.reg),
                  std::invalid_argument);
}

TEST_CASE("trajectory error matches a brute-force alignment search") {
  // Straight 10 m line with a uniform lateral offset: alignment absorbs it.
  const int T = 50;
  Trajectory gt(T, 3), pred(T, 3);
  for (int t = 0; t < T; ++t) {
    const double s = 10.0 * t / (T - 1);
    gt.row(t) = Eigen::RowVector3d(s, 1.0, 0.0);
    pred.row(t) = Eigen::RowVector3d(s, 1.0, 0.1);
  }
  const auto line = rte(pred, gt);
  CHECK_FALSE(line.degenerate);
  CHECK(line.value == doctest::Approx(rte_oracle(pred, gt)).epsilon(1e-9));
  CHECK(line.value < 1e-6);

  // Noisy trajectories: the closed form agrees with the search.
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    Trajectory p2 = gt, g2 = gt;
    for (int t = 0; t < T; ++t) {
      for (int c = 0; c < 3; ++c) {
        p2(t, c) += 0.05 * n(rng);
        g2(t, c) += 0.05 * n(rng);
      }
    }
    const auto r = rte(p2, g2);
    const double oracle = rte_oracle(p2, g2);
    CHECK(std::abs(r.value - oracle) < 1e-6);
  }

  // Invariance to a shared rigid transform.
  geom::RigidPose g;
  g.rotation = geom::so3_exp(Vec3(0.4, 0.1, -0.9));
  g.translation = Vec3(-3.0, 2.0, 0.5);
  Trajectory pg = geom::apply_pose(g, pred), gg = geom::apply_pose(g, gt);
  CHECK(rte(pg, gg).value == doctest::Approx(line.value).epsilon(1e-6));

  // Stationary ground truth: absolute fallback with the degeneracy flag.
  Trajectory still = Trajectory::Zero(5, 3);
  Trajectory moving(5, 3);
  for (int t = 0; t < 5; ++t) {
    moving.row(t) = Eigen::RowVector3d(t - 2.0, 0.0, 0.0);
  }
  const auto deg = rte(moving, still);
  CHECK(deg.degenerate);
  CHECK(deg.value == doctest::Approx(1200.0).epsilon(1e-9));  // mm

  CHECK_THROWS_AS((void)rte(gt.topRows(2), gt.topRows(2)),
                  std::invalid_argument);
}

TEST_CASE("jerk is exact on polynomials and stable under resampling") {
  auto& f = fx();

  // Constant velocity: zero jerk.
  std::vector<Points> lin(10);
  for (int t = 0; t < 10; ++t) {
    lin[t] = f.rest.rowwise() + Eigen::RowVector3d(0.1 * t, 0.0, 0.0);
  }
  CHECK(jitter(lin, f.reg, 30.0) == doctest::Approx(0.0).epsilon(1e-9));

  // Cubic offset a*t^3 on every vertex: jerk magnitude is exactly 6|a|.
  const Vec3 a(0.4, -0.2, 0.7);
  const double fps = 30.0;
  std::vector<Points> cubic(12);
  for (int t = 0; t < 12; ++t) {
    const double s = t / fps;
    cubic[t] = f.rest.rowwise() + (a * s * s * s).transpose();
  }
  CHECK(jitter(cubic, f.reg, fps) ==
        doctest::Approx(6.0 * a.norm()).epsilon(1e-9));

  // Band-limited motion keeps its jerk when sampled twice as fast.
  auto sine_walk = [&](double rate, int frames) {
    std::vector<Points> out(frames);
    for (int t = 0; t < frames; ++t) {
      const double s = t / rate;
      out[t] = f.rest.rowwise() +
               Eigen::RowVector3d(0.3 * std::sin(2.0 * s),
                                  0.1 * std::sin(3.0 * s), 0.0);
    }
    return out;
  };
  const double j30 = jitter(sine_walk(30.0, 61), f.reg, 30.0);
  const double j60 = jitter(sine_walk(60.0, 121), f.reg, 60.0);
  CHECK(std::abs(j60 - j30) < 0.1 * j30);

  const std::vector<Points> three(3, f.rest);
  CHECK_THROWS_AS((void)jitter(three, f.reg, 30.0), std::invalid_argument);
}

TEST_CASE("foot sliding counts horizontal motion on contact runs only") {
  auto& f = fx();
  const int T = 8;
  body::ContactLabels contacts(T, {true, false});

  // Pinned feet: zero.
  std::vector<Points> pinned(T, f.rest);
  const auto still = foot_sliding(pinned, contacts, f.model);
  CHECK(still.has_contacts);
  CHECK(still.mm_per_frame == doctest::Approx(0.0));

  // 5 mm/frame horizontal translation while in contact.
  std::vector<Points> slide(T);
  for (int t = 0; t < T; ++t) {
    slide[t] = f.rest.rowwise() + Eigen::RowVector3d(0.005 * t, 0.0, 0.0);
  }
  const auto moving = foot_sliding(slide, contacts, f.model);
  CHECK(moving.mm_per_frame == doctest::Approx(5.0).epsilon(1e-9));

  // Vertical bobbing does not count.
  std::vector<Points> bob(T);
  for (int t = 0; t < T; ++t) {
    bob[t] = f.rest.rowwise() + Eigen::RowVector3d(0.0, 0.01 * (t % 2), 0.0);
  }
  CHECK(foot_sliding(bob, contacts, f.model).mm_per_frame ==
        doctest::Approx(0.0));

  // No contacts at all: flagged inapplicable.
  const auto none =
      foot_sliding(slide, body::ContactLabels(T, {false, false}), f.model);
  CHECK_FALSE(none.has_contacts);
  CHECK(none.mm_per_frame == 0.0);
}

TEST_CASE("full report is zero on identity and matches the single-metric "
          "oracles") {
  auto& f = fx();
  const double fps = 30.0;
  const auto gt_abs = make_walk(300, fps, 3);
  auto pred_abs = make_walk(300, fps, 3, /*wobble=*/0.03);
  const auto gt = motion::make_world_sequence(gt_abs, f.reg, fps);
  const auto pred = motion::make_world_sequence(pred_abs, f.reg, fps);

  // Identity: every error metric is zero and the occlusion variants are not
  // applicable. Jitter and foot sliding describe the prediction itself, so a
  // constant-velocity ground truth makes the whole report vanish.
  std::vector<Points> lin_abs(300);
  for (int t = 0; t < 300; ++t) {
    lin_abs[t] = f.rest.rowwise() + Eigen::RowVector3d(0.05 * t, 0.0, 0.0);
  }
  const auto lin = motion::make_world_sequence(lin_abs, f.reg, fps);
  const auto zero = evaluate(lin, lin, {}, f.model, f.reg);
  for (const auto& [name, value] : zero.named()) {
    INFO(name);
    CHECK(value < 1e-6);
  }
  CHECK_FALSE(zero.has_occlusion);
  const auto same = evaluate(gt, gt, {}, f.model, f.reg);
  CHECK(same.pa_mpjpe_mm < 1e-6);
  CHECK(same.wa_mpjpe_mm < 1e-6);
  CHECK(same.w_mpjpe_mm < 1e-6);
  CHECK(same.rte.value < 1e-6);

  // The report reproduces each metric computed in isolation.
  const auto rep = evaluate(pred, gt, {}, f.model, f.reg);
  const auto ap = motion::absolute_meshes(pred);
  const auto ag = motion::absolute_meshes(gt);
  CHECK(rep.pa_mpjpe_mm == doctest::Approx(pa_mpjpe(ap, ag, f.reg)));
  CHECK(rep.mpjpe_mm == doctest::Approx(mpjpe(ap, ag, f.reg)));
  CHECK(rep.pve_mm == doctest::Approx(pve(ap, ag, f.reg)));
  const auto [wa, w] = wa_w_mpjpe(ap, ag, f.reg);
  CHECK(rep.wa_mpjpe_mm == doctest::Approx(wa));
  CHECK(rep.w_mpjpe_mm == doctest::Approx(w));
  CHECK(rep.wa_mpjpe_mm <= rep.w_mpjpe_mm + 1e-9);
  CHECK(rep.jitter_m_s3 == doctest::Approx(jitter(ap, f.reg, fps)));
  rep.validate();

  // Occlusion-restricted variants appear once frames go invisible.
  std::vector<bool> vis(300, true);
  for (int t = 120; t < 200; ++t) vis[t] = false;
  const auto occ = evaluate(pred, gt, vis, f.model, f.reg);
  CHECK(occ.has_occlusion);
  CHECK(occ.w_mpjpe_occ_mm > 0.0);
  CHECK(occ.rte_occ.value >= 0.0);
  // On identity the occluded variants are zero too.
  const auto occ_zero = evaluate(gt, gt, vis, f.model, f.reg);
  CHECK(occ_zero.w_mpjpe_occ_mm < 1e-6);
  CHECK(occ_zero.rte_occ.value < 1e-6);

  // Shared ground-preserving rigid transform leaves the report unchanged.
  geom::RigidPose g;
  g.rotation = geom::so3_exp(Vec3(0.0, 1.1, 0.0));
  g.translation = Vec3(1.5, 0.0, -0.8);
  const auto pred_g =
      motion::make_world_sequence(transform_all(g, ap), f.reg, fps);
  const auto gt_g =
      motion::make_world_sequence(transform_all(g, ag), f.reg, fps);
  const auto rep_g = evaluate(pred_g, gt_g, {}, f.model, f.reg);
  CHECK(rep_g.pa_mpjpe_mm == doctest::Approx(rep.pa_mpjpe_mm).epsilon(1e-6));
  CHECK(rep_g.mpjpe_mm == doctest::Approx(rep.mpjpe_mm).epsilon(1e-6));
  CHECK(rep_g.wa_mpjpe_mm == doctest::Approx(rep.wa_mpjpe_mm).epsilon(1e-6));
  CHECK(rep_g.w_mpjpe_mm == doctest::Approx(rep.w_mpjpe_mm).epsilon(1e-6));
  CHECK(rep_g.rte.value == doctest::Approx(rep.rte.value).epsilon(1e-6));
  CHECK(rep_g.jitter_m_s3 == doctest::Approx(rep.jitter_m_s3).epsilon(1e-6));
  CHECK(rep_g.foot_sliding.mm_per_frame ==
        doctest::Approx(rep.foot_sliding.mm_per_frame).epsilon(1e-6));

  // Error propagation.
  CHECK_THROWS_AS(
      (void)evaluate(pred, gt, std::vector<bool>(5, true), f.model, f.reg),
      std::invalid_argument);
  auto short_seq = motion::make_world_sequence(
      {gt_abs[0], gt_abs[1], gt_abs[2]}, f.reg, fps);
  CHECK_THROWS_AS((void)evaluate(short_seq, short_seq, {}, f.model, f.reg),
                  std::invalid_argument);
}
