#include <doctest.h>

#include <cstdio>
#include <random>

#include "duomo/io.hpp"
#include "duomo/synth.hpp"

using namespace duomo;
using namespace duomo::synth;

namespace {

struct Fixture {
  body::BodyModel model = body::make_toy_body();

  SceneScript script(Gait g) {
    SceneScript s;
    s.seed = 99;
    s.gait = g;
    s.duration_s = 5.0;
    return s;
  }
};

std::vector<int> foot_vertices(const body::BodyModel& model, bool left) {
  return model.group_vertices(left ? body::VertexGroup::LeftFoot
                                   : body::VertexGroup::RightFoot);
}

// Largest single-frame displacement of foot vertices across frame pairs where
// the generator labels that foot in contact at both ends.
double max_contact_slide(const GeneratedMotion& gen,
                         const body::BodyModel& model) {
  double worst = 0.0;
  for (int side = 0; side < 2; ++side) {
    const auto verts = foot_vertices(model, side == 0);
    for (size_t t = 1; t < gen.meshes.size(); ++t) {
      if (!gen.contacts[t - 1][size_t(side)] || !gen.contacts[t][size_t(side)])
        continue;
      for (int v : verts) {
        const double d =
            (gen.meshes[t].row(v) - gen.meshes[t - 1].row(v)).norm();
        worst = std::max(worst, d);
      }
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("stand script is static with both feet down") {
  Fixture fx;
  const auto gen = generate_motion(fx.script(Gait::Stand), fx.model);
  const int T = gen.world.frames();
  REQUIRE(T == 150);
  for (int t = 1; t < T; ++t) {
    CHECK(gen.world.root.row(t).norm() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK((gen.meshes[size_t(t)] - gen.meshes[0]).cwiseAbs().maxCoeff() <
          1e-12);
  }
  for (const auto& c : gen.contacts) {
    CHECK(c[0]);
    CHECK(c[1]);
  }
  // Both feet rest on the ground plane, exactly as high above it as the
  // (scaled) template puts them.
  const double scale = 1.75 / fx.model.rest_height();
  for (int side = 0; side < 2; ++side) {
    double min_y = 1e9, tmpl_min = 1e9;
    for (int v : foot_vertices(fx.model, side == 0)) {
      min_y = std::min(min_y, gen.meshes[0](v, 1));
      tmpl_min = std::min(tmpl_min, fx.model.template_vertices(v, 1));
    }
    CHECK(std::abs(min_y - scale * tmpl_min) < 1e-9);
  }
}

TEST_CASE("pinned stance feet never slide") {
  Fixture fx;
  for (Gait g : {Gait::Walk, Gait::Turn, Gait::Circle, Gait::StopAndGo}) {
    CAPTURE(int(g));
    const auto gen = generate_motion(fx.script(g), fx.model);
    CHECK(max_contact_slide(gen, fx.model) < 1e-3);
    // Ground plane holds throughout.
    for (const auto& m : gen.meshes) CHECK(m.col(1).minCoeff() > -1e-9);
  }
}

TEST_CASE("walk covers ground at the scripted speed") {
  Fixture fx;
  SceneScript s = fx.script(Gait::Walk);
  const auto gen = generate_motion(s, fx.model);
  const auto roots = motion::absolute_roots(gen.world);
  const int T = gen.world.frames();
  const double travelled =
      geom::Vec3((roots.row(T - 1) - roots.row(0)).transpose()).norm();
  CHECK(travelled == doctest::Approx(s.speed * s.duration_s).epsilon(0.25));
}

TEST_CASE("generator contacts agree with the geometric labeler") {
  Fixture fx;
  const auto gen = generate_motion(fx.script(Gait::Walk), fx.model);
  const auto labeled = body::label_contacts(gen.meshes, fx.model, 30.0);
  int agree = 0, total = 0;
  for (size_t t = 0; t < labeled.size(); ++t) {
    for (int side = 0; side < 2; ++side) {
      agree += labeled[t][size_t(side)] == gen.contacts[t][size_t(side)];
      ++total;
    }
  }
  CHECK(double(agree) / total > 0.85);
}

TEST_CASE("infeasible speed is rejected") {
  Fixture fx;
  SceneScript s = fx.script(Gait::Walk);
  s.speed = 5.0;
  CHECK_THROWS_AS(generate_motion(s, fx.model), std::invalid_argument);
  s.speed = 1.0;
  s.occlusions.push_back({3.0, 9.0});
  CHECK_THROWS_AS(generate_motion(s, fx.model), std::invalid_argument);
}

TEST_CASE("camera tracks start at the exact identity") {
  Fixture fx;
  for (CameraMode mode : {CameraMode::Static, CameraMode::Orbit,
                          CameraMode::HandheldSmooth,
                          CameraMode::HandheldShaky}) {
    SceneScript s = fx.script(Gait::Walk);
    s.camera = mode;
    const auto gen = generate_motion(s, fx.model);
    const auto track = generate_camera(s, gen);
    REQUIRE(track.frames() == gen.world.frames());
    CHECK((track.poses[0].rotation - geom::Mat3::Identity()).norm() == 0.0);
    CHECK(track.poses[0].translation.norm() == 0.0);
    if (mode == CameraMode::Static) {
      for (const auto& g : track.poses) CHECK(g.is_identity(0.0));
    }
    for (const auto& g : track.poses) g.validate();
  }
}

TEST_CASE("orbit camera keeps its distance to the subject") {
  Fixture fx;
  SceneScript s = fx.script(Gait::Walk);
  s.camera = CameraMode::Orbit;
  const auto gen = generate_motion(s, fx.model);
  const auto track = generate_camera(s, gen);
  const auto roots = motion::absolute_roots(gen.world);
  const double nominal =
      (track.poses[0].translation - geom::Vec3(roots.row(0))).norm();
  for (int t = 0; t < track.frames(); ++t) {
    const double d =
        (track.poses[size_t(t)].translation - geom::Vec3(roots.row(t))).norm();
    CHECK(std::abs(d / nominal - 1.0) < 0.10);
  }
}

TEST_CASE("subject stays in view for every camera mode") {
  Fixture fx;
  for (CameraMode mode : {CameraMode::Static, CameraMode::Orbit,
                          CameraMode::HandheldSmooth,
                          CameraMode::HandheldShaky}) {
    for (Gait g : {Gait::Walk, Gait::Circle}) {
      SceneScript s = fx.script(g);
      s.camera = mode;
      const auto gen = generate_motion(s, fx.model);
      const auto track = generate_camera(s, gen);
      const auto roots = motion::absolute_roots(gen.world);
      int in_view = 0;
      for (int t = 0; t < track.frames(); ++t) {
        geom::Points p(1, 3);
        p.row(0) = roots.row(t);
        const auto cam =
            geom::apply_pose(track.poses[size_t(t)].inverse(), p);
        const auto proj = geom::project(track.intrinsics[size_t(t)], cam);
        in_view += proj.valid[0] && proj.pixels(0, 0) >= 0 &&
                   proj.pixels(0, 0) <= kImageExtent &&
                   proj.pixels(0, 1) >= 0 && proj.pixels(0, 1) <= kImageExtent;
      }
      CAPTURE(int(mode));
      CAPTURE(int(g));
      CHECK(double(in_view) / track.frames() >= 0.9);
    }
  }
}

TEST_CASE("rendered keypoints reproject the mesh exactly") {
  Fixture fx;
  SceneScript s = fx.script(Gait::Walk);
  s.camera = CameraMode::HandheldSmooth;
  const auto gen = generate_motion(s, fx.model);
  const auto track = generate_camera(s, gen);
  std::mt19937_64 rng(5);
  const auto frames =
      render_keypoints(gen, track, {}, training::AugmentSpec{}, fx.model, rng);
  REQUIRE(int(frames.size()) == gen.world.frames());
  int confident = 0;
  for (size_t t = 0; t < frames.size(); ++t) {
    const auto cam =
        geom::apply_pose(track.poses[t].inverse(), gen.meshes[t]);
    const auto proj = geom::project(track.intrinsics[t], cam);
    for (int v = 0; v < frames[t].count(); ++v) {
      if (frames[t].confidence(v) <= 0.0) continue;
      ++confident;
      CHECK(frames[t].pixels(v, 0) == proj.pixels(v, 0));
      CHECK(frames[t].pixels(v, 1) == proj.pixels(v, 1));
      CHECK(frames[t].confidence(v) <= 1.0);
    }
  }
  CHECK(confident > 0);
}

TEST_CASE("occlusion windows blank confidences and visibility") {
  Fixture fx;
  SceneScript s = fx.script(Gait::Walk);
  s.occlusions.push_back({2.0, 4.0});
  const auto rec = generate_sequence(s, training::AugmentSpec{}, fx.model);
  for (int t = 0; t < rec.world.frames(); ++t) {
    const bool occ = t >= 60 && t < 120;
    if (occ) {
      CHECK(rec.keypoints[size_t(t)].confidence.maxCoeff() == 0.0);
      CHECK_FALSE(rec.visibility[size_t(t)]);
    } else {
      CHECK(rec.visibility[size_t(t)]);
    }
  }
}

TEST_CASE("sequence generation is bit-deterministic") {
  Fixture fx;
  SceneScript s = fx.script(Gait::Circle);
  s.camera = CameraMode::HandheldShaky;
  s.occlusions.push_back({1.0, 3.5});
  training::AugmentSpec aug;
  aug.point_noise_std = 1.5;
  aug.point_mask_prob = 0.05;
  const auto a = generate_sequence(s, aug, fx.model);
  const auto b = generate_sequence(s, aug, fx.model);
  REQUIRE(a.world.frames() == b.world.frames());
  CHECK(a.world.root == b.world.root);
  for (int t = 0; t < a.world.frames(); ++t) {
    CHECK(a.world.mesh[size_t(t)] == b.world.mesh[size_t(t)]);
    CHECK(a.keypoints[size_t(t)].pixels == b.keypoints[size_t(t)].pixels);
    CHECK(a.keypoints[size_t(t)].confidence ==
          b.keypoints[size_t(t)].confidence);
    CHECK((a.track.poses[size_t(t)].rotation ==
           b.track.poses[size_t(t)].rotation));
  }
}

TEST_CASE("dataset round-trips byte-for-byte") {
  Fixture fx;
  DatasetSpec spec;
  spec.train = 4;
  spec.val = 2;
  spec.test = 2;
  spec.min_duration_s = 4.0;
  spec.max_duration_s = 4.5;
  const Dataset ds = build_dataset(spec, fx.model);
  REQUIRE(int(ds.records.size()) == 8);
  CHECK(ds.split_indices(Split::Train).size() == 4);
  CHECK(ds.split_indices(Split::Val).size() == 2);
  CHECK(ds.split_indices(Split::Test).size() == 2);
  CHECK(ds.body_hash == body_config_hash(fx.model));

  const std::string path = "synth_roundtrip.bin";
  save_dataset(ds, path);
  const Dataset back = load_dataset(path, fx.model);
  const std::string path2 = "synth_roundtrip2.bin";
  save_dataset(back, path2);
  const auto bytes1 = io::read_file(path);
  const auto bytes2 = io::read_file(path2);
  CHECK(bytes1 == bytes2);
  // Loaded records honour the zero-root invariant despite float storage.
  const auto reg = body::make_joint_regressor(fx.model);
  back.records[0].world.validate(reg);
  // The track frame rate survives the round trip too.
  CHECK(back.records[0].track.fps == ds.records[0].track.fps);
  const auto manifest = io::read_file(path + ".manifest");
  CHECK(manifest.size() > 0);
  std::remove(path.c_str());
  std::remove((path + ".manifest").c_str());
  std::remove(path2.c_str());
  std::remove((path2 + ".manifest").c_str());
}

TEST_CASE("dataset build is deterministic across runs") {
  Fixture fx;
  DatasetSpec spec;
  spec.train = 2;
  spec.val = 1;
  spec.test = 1;
  spec.min_duration_s = 4.0;
  spec.max_duration_s = 4.2;
  io::ByteWriter w1, w2;
  for (io::ByteWriter* w : {&w1, &w2}) {
    const Dataset ds = build_dataset(spec, fx.model);
    for (const auto& rec : ds.records) {
      for (const auto& m : rec.world.mesh) w->matrix(m);
      w->matrix(rec.world.root);
    }
  }
  CHECK(io::hash_bytes(w1.bytes().data(), w1.bytes().size()) ==
        io::hash_bytes(w2.bytes().data(), w2.bytes().size()));
}

TEST_CASE("corrupt or mismatched dataset files are rejected") {
  Fixture fx;
  DatasetSpec spec;
  spec.train = 1;
  spec.val = 1;
  spec.test = 1;
  spec.min_duration_s = 4.0;
  spec.max_duration_s = 4.0;
  const Dataset ds = build_dataset(spec, fx.model);
  const std::string path = "synth_corrupt.bin";
  save_dataset(ds, path);

  auto bytes = io::read_file(path);
  auto bad_magic = bytes;
  bad_magic[0] ^= 0xff;
  io::write_file(path, bad_magic);
  CHECK_THROWS_AS(load_dataset(path), std::runtime_error);

  auto truncated = bytes;
  truncated.resize(truncated.size() / 2);
  io::write_file(path, truncated);
  CHECK_THROWS_AS(load_dataset(path), std::runtime_error);

  io::write_file(path, bytes);
  const body::BodyModel other = body::make_toy_body(64);
  CHECK_THROWS_AS(load_dataset(path, other), std::runtime_error);
  CHECK_NOTHROW(load_dataset(path, fx.model));
  std::remove(path.c_str());
  std::remove((path + ".manifest").c_str());
}

TEST_CASE("zero augmentation is a bitwise no-op") {
  Fixture fx;
  SceneScript s = fx.script(Gait::Walk);
  const auto gen = generate_motion(s, fx.model);
  const auto track = generate_camera(s, gen);
  std::mt19937_64 rng(11);
  const auto base =
      render_keypoints(gen, track, {}, training::AugmentSpec{}, fx.model, rng);
  std::mt19937_64 rng2(123);
  const auto same =
      training::augment_keypoints(base, training::AugmentSpec{}, fx.model, rng2);
  REQUIRE(base.size() == same.size());
  for (size_t t = 0; t < base.size(); ++t) {
    CHECK(base[t].pixels == same[t].pixels);
    CHECK(base[t].confidence == same[t].confidence);
  }
}

TEST_CASE("full part masking zeroes every confidence") {
  Fixture fx;
  std::vector<condition::KeypointFrame> frames(3);
  for (auto& f : frames) {
    f.pixels.setZero(fx.model.vertices(), 2);
    f.confidence.setOnes(fx.model.vertices());
  }
  training::AugmentSpec spec;
  spec.part_mask_prob = 1.0;
  std::mt19937_64 rng(3);
  const auto out = training::augment_keypoints(frames, spec, fx.model, rng);
  for (const auto& f : out) CHECK(f.confidence.maxCoeff() == 0.0);
}

TEST_CASE("point masking hits the configured rate") {
  Fixture fx;
  const int V = fx.model.vertices();
  std::vector<condition::KeypointFrame> frames(100000 / V + 1);
  for (auto& f : frames) {
    f.pixels.setZero(V, 2);
    f.confidence.setOnes(V);
  }
  training::AugmentSpec spec;
  spec.point_mask_prob = 0.1;
  std::mt19937_64 rng(17);
  const auto out = training::augment_keypoints(frames, spec, fx.model, rng);
  long masked = 0, total = 0;
  for (const auto& f : out) {
    for (int v = 0; v < V; ++v) {
      masked += f.confidence(v) == 0.0;
      ++total;
    }
  }
  CHECK(std::abs(double(masked) / total - 0.1) < 0.01);
}

TEST_CASE("part perturbation shifts a part coherently") {
  Fixture fx;
  std::vector<condition::KeypointFrame> frames(1);
  frames[0].pixels.setZero(fx.model.vertices(), 2);
  frames[0].confidence.setOnes(fx.model.vertices());
  training::AugmentSpec spec;
  spec.part_perturb_std = 4.0;
  std::mt19937_64 rng(29);
  const auto out = training::augment_keypoints(frames, spec, fx.model, rng);
  const auto head = fx.model.group_vertices(body::VertexGroup::Head);
  REQUIRE(head.size() >= 2);
  for (size_t i = 1; i < head.size(); ++i) {
    CHECK(out[0].pixels.row(head[i]) == out[0].pixels.row(head[0]));
  }
  const auto torso = fx.model.group_vertices(body::VertexGroup::Torso);
  CHECK(out[0].pixels.row(head[0]) != out[0].pixels.row(torso[0]));
}
