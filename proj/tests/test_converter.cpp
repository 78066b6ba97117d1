#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "duomo/converter.hpp"
#include "duomo/io.hpp"
#include "duomo/synth.hpp"

using namespace duomo;
using namespace duomo::converter;

namespace {

// Training takes several seconds; share one trained cascade per binary.
struct Shared {
  body::BodyModel model = body::make_toy_body();
  body::JointRegressor reg = body::make_joint_regressor(model);
  std::vector<ParamMeshPair> pairs =
      sample_converter_pairs(1200, model, 5);
  ConverterTrainResult trained;

  Shared() {
    ConverterConfig cfg;
    trained = train_converter(pairs, model, cfg);
  }
};

Shared& shared() {
  static Shared s;
  return s;
}

}  // namespace

TEST_CASE("stage-wise validation error shrinks monotonically") {
  const auto& err = shared().trained.stage_val_error;
  REQUIRE(err.size() == size_t(kStages) + 1);
  for (size_t s = 1; s < err.size(); ++s) {
    CHECK(err[s] <= err[s - 1]);
  }
  // Smoke bar: the cascade at least halves the zero-init error.
  CHECK(err.back() < 0.5 * err.front());
}

TEST_CASE("identity fit recovers the rest pose to sub-millimeter") {
  auto& s = shared();
  const auto rest =
      body::pose_body(s.model, body::BodyParams::rest(s.model.joints()));
  const auto rep = convert({rest}, s.trained.cascade, s.model);
  CHECK(rep.vertex_rms(0) < 1e-3);
  CHECK(rep.params[0].joint_rotations.cwiseAbs().maxCoeff() < 0.02);
  CHECK(rep.params[0].shape_scale == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("fitted parameters hit the 5 mm joint bar on fresh targets") {
  auto& s = shared();
  const auto test = sample_converter_pairs(30, s.model, 99);
  std::vector<geom::Points> targets;
  for (const auto& p : test) targets.push_back(p.mesh);
  const auto rep = convert(targets, s.trained.cascade, s.model);
  double joint_err = 0.0;
  for (size_t i = 0; i < test.size(); ++i) {
    rep.params[i].validate(s.model.joints());
    const auto gt = body::regress_joints(s.reg, test[i].mesh);
    const auto fit = body::regress_joints(
        s.reg, body::pose_body(s.model, rep.params[i]));
    joint_err += (fit - gt).rowwise().norm().mean();
  }
  CHECK(joint_err / double(test.size()) < 0.005);
  CHECK(rep.vertex_rms.allFinite());
}

TEST_CASE("a rigid transform of the target moves only the root pose") {
  auto& s = shared();
  const auto pair = sample_converter_pairs(1, s.model, 123)[0];
  geom::RigidPose g;
  g.rotation = geom::so3_exp({0.2, 0.5, -0.1});
  g.translation = {1.0, 0.3, -2.0};

  const auto a = convert({pair.mesh}, s.trained.cascade, s.model);
  const auto b =
      convert({geom::apply_pose(g, pair.mesh)}, s.trained.cascade, s.model);
  CHECK((a.params[0].joint_rotations - b.params[0].joint_rotations)
            .cwiseAbs()
            .maxCoeff() < 1e-3);
  CHECK(std::abs(a.params[0].shape_scale - b.params[0].shape_scale) < 1e-3);
  // The transform lands entirely in the root: posed fits differ by g.
  const auto fit_a = body::pose_body(s.model, a.params[0]);
  const auto fit_b = body::pose_body(s.model, b.params[0]);
  CHECK((fit_b - geom::apply_pose(g, fit_a)).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("conversion is deterministic") {
  auto& s = shared();
  const auto pair = sample_converter_pairs(2, s.model, 7)[1];
  const auto a = convert({pair.mesh}, s.trained.cascade, s.model);
  const auto b = convert({pair.mesh}, s.trained.cascade, s.model);
  CHECK((a.params[0].flatten() - b.params[0].flatten()).cwiseAbs().maxCoeff() ==
        0.0);
  CHECK(a.vertex_rms(0) == b.vertex_rms(0));
}

TEST_CASE("cascade error stays within twice the optimization oracle") {
  auto& s = shared();
  const auto test = sample_converter_pairs(10, s.model, 31);
  std::vector<geom::Points> targets;
  for (const auto& p : test) targets.push_back(p.mesh);
  const auto rep = convert(targets, s.trained.cascade, s.model);
  double oracle = 0.0;
  for (const auto& t : targets) {
    oracle += optimize_params_oracle(t, s.model, 500);
  }
  oracle /= double(targets.size());
  CHECK(rep.vertex_rms.mean() <= 2.0 * oracle);
}

TEST_CASE("training requires a thousand pairs and a matching body") {
  auto& s = shared();
  const auto few = sample_converter_pairs(100, s.model, 1);
  CHECK_THROWS_AS((void)train_converter(few, s.model, {}),
                  std::invalid_argument);

  const auto other = body::make_toy_body(120);
  const auto rest =
      body::pose_body(other, body::BodyParams::rest(other.joints()));
  CHECK_THROWS_AS((void)convert({rest}, s.trained.cascade, other),
                  std::runtime_error);
}

TEST_CASE("cascade artifacts round trip and reject corruption") {
  auto& s = shared();
  const std::string path =
      (std::filesystem::temp_directory_path() / "duomo_cascade.bin").string();
  save_cascade(s.trained.cascade, path);
  const auto loaded = load_cascade(path);
  CHECK(loaded.body_hash() == s.trained.cascade.body_hash());
  CHECK(loaded.params().content_hash() ==
        s.trained.cascade.params().content_hash());

  auto bytes = io::read_file(path);
  bytes[2] ^= 0x40;
  io::write_file(path, bytes);
  CHECK_THROWS_AS((void)load_cascade(path), std::runtime_error);
  std::remove(path.c_str());
}
