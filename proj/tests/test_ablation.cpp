#include <doctest.h>

#include <cmath>

#include "duomo/ablation.hpp"

using namespace duomo;
using namespace duomo::ablation;

namespace {

// Tiny models shared across cases; the ablation plumbing is under test, not
// reconstruction quality.
struct Shared {
  body::BodyModel model = body::make_toy_body();
  synth::Dataset ds;
  training::TrainResult cam, wrl;

  Shared() {
    synth::DatasetSpec dspec;
    dspec.train = 3;
    dspec.val = 1;
    dspec.test = 2;
    dspec.min_duration_s = 2.0;
    dspec.max_duration_s = 2.0;
    dspec.fps = 15.0;
    ds = synth::build_dataset(dspec, model);

    training::TrainConfig cfg;
    cfg.steps = 40;
    cfg.batch = 2;
    cfg.window = 12;
    cfg.backbone.layers = 1;
    cfg.backbone.width = 32;
    cfg.backbone.heads = 2;
    cfg.backbone.ff_width = 48;
    cfg.backbone.window_radius = 8;
    cfg.condition_width = 24;
    cfg.val_every = 20;
    cfg.val_sequences = 1;
    cfg.lr = 1e-3f;
    cam = training::train_camera_model(ds, model, cfg);
    training::TrainConfig wcfg = cfg;
    wcfg.steps = 10;
    wcfg.cond_ddim_steps = 2;
    wrl = training::train_world_model(ds, model, cam.checkpoint, wcfg);
  }
};

Shared& shared() {
  static Shared s;
  return s;
}

AblationConfig small_config() {
  AblationConfig cfg;
  cfg.sigma_grid = {0.0, 0.05};
  cfg.trials_per_level = 1;
  cfg.max_sequences = 1;
  cfg.variants = {Variant::LiftingOnly, Variant::WorldOnly, Variant::Full};
  cfg.guidance.ddim_steps = 4;
  return cfg;
}

}  // namespace

TEST_CASE("rank correlation oracles") {
  CHECK(spearman_rho({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
  CHECK(spearman_rho({1, 2, 3, 4}, {5, 1, -2, -7}) == doctest::Approx(-1.0));
  // Monotone but nonlinear is still a perfect rank match.
  CHECK(spearman_rho({1, 2, 3, 4, 5}, {1, 8, 27, 64, 125}) ==
        doctest::Approx(1.0));
  CHECK(spearman_rho({1, 2, 3}, {7, 7, 7}) == doctest::Approx(0.0));
  // Ties get average ranks.
  CHECK(spearman_rho({1, 2, 2, 4}, {1, 3, 3, 9}) == doctest::Approx(1.0));
  CHECK_THROWS_AS((void)spearman_rho({1, 2}, {1, 2, 3}),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)spearman_rho({1}, {1}), std::invalid_argument);
}

TEST_CASE("config validation rejects malformed grids") {
  AblationConfig cfg;
  cfg.sigma_grid = {};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.sigma_grid = {0.02, 0.01};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.sigma_grid = {0.0, 0.01};
  cfg.trials_per_level = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.trials_per_level = 1;
  cfg.variants.clear();
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("every variant produces a world sequence of the right shape") {
  auto& s = shared();
  const auto& rec = s.ds.records[s.ds.split_indices(synth::Split::Test)[0]];
  guidance::GuidanceOptions opts;
  opts.ddim_steps = 3;
  for (Variant v :
       {Variant::LiftingOnly, Variant::WorldOnly, Variant::Full}) {
    std::mt19937_64 rng(5);
    const auto out = reconstruct_variant(v, s.cam.checkpoint, s.wrl.checkpoint,
                                         s.model, rec, rec.track, opts, rng);
    INFO(variant_name(v));
    CHECK(out.tag == motion::FrameTag::World);
    CHECK(out.frames() == rec.world.frames());
    CHECK(out.vertices() == s.model.vertices());
    CHECK(out.root.allFinite());
  }
}

TEST_CASE("noise sweep: curve layout, shared clean point, determinism") {
  auto& s = shared();
  const auto cfg = small_config();
  const auto res = run_camera_noise_ablation(s.cam.checkpoint,
                                             s.wrl.checkpoint, s.model, s.ds,
                                             cfg);
  // variants x channels curves, one point per grid level.
  REQUIRE(res.curves.size() == 9);
  for (const auto& c : res.curves) {
    REQUIRE(c.points.size() == 2);
    CHECK(c.points[0].sigma == 0.0);
    CHECK(c.points[1].sigma == 0.05);
    for (const auto& p : c.points) {
      CHECK(p.samples == 1);
      CHECK(std::isfinite(p.mean.w_mpjpe_mm));
      CHECK(p.mean.w_mpjpe_mm >= 0.0);
      CHECK(std::isfinite(p.mean.foot_sliding_mm));
    }
  }
  // The clean-input point is shared across channels per variant.
  for (int v = 0; v < 3; ++v) {
    const auto& base = res.curves[size_t(v * 3)].points[0].mean;
    for (int ch = 1; ch < 3; ++ch) {
      const auto& other = res.curves[size_t(v * 3 + ch)].points[0].mean;
      CHECK(other.w_mpjpe_mm == base.w_mpjpe_mm);
      CHECK(other.jitter_m_s3 == base.jitter_m_s3);
    }
  }

  const auto again = run_camera_noise_ablation(s.cam.checkpoint,
                                               s.wrl.checkpoint, s.model,
                                               s.ds, cfg);
  CHECK(curves_to_text(again) == curves_to_text(res));

  const std::string text = curves_to_text(res);
  CHECK(text.find("lifting-only\trotation\t0") != std::string::npos);
  CHECK(text.find("full\tcombined\t0.05") != std::string::npos);
  CHECK(text.find("w_mpjpe_mm") != std::string::npos);
}
