#include "duomo/synth.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "duomo/io.hpp"

namespace duomo::synth {

using body::Joint;
using geom::Mat3;
using geom::Points;
using geom::Vec3;

namespace {

Mat3 rot_x(double a) {
  Mat3 r;
  r << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
  return r;
}

Mat3 rot_y(double a) {
  Mat3 r;
  r << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
  return r;
}

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

constexpr double kCadence = 1.9;  // steps per second

// Gait envelope in [0, 1]: how much of the stride is engaged.
double envelope(const SceneScript& s, double t) {
  switch (s.gait) {
    case Gait::Stand:
      return 0.0;
    case Gait::StopAndGo: {
      // 3 s period: ramp up, hold, ramp down, hold still.
      const double period = 3.0, ramp = 0.4;
      const double u = std::fmod(t, period);
      if (u < ramp) return 0.5 - 0.5 * std::cos(M_PI * u / ramp);
      if (u < period / 2.0) return 1.0;
      if (u < period / 2.0 + ramp) {
        return 0.5 + 0.5 * std::cos(M_PI * (u - period / 2.0) / ramp);
      }
      return 0.0;
    }
    default:
      return 1.0;
  }
}

double heading_rate(const SceneScript& s) {
  switch (s.gait) {
    case Gait::Turn:
      return s.turn_rate;
    case Gait::Circle:
      return s.speed / s.circle_radius;
    default:
      return 0.0;
  }
}

}  // namespace

void SceneScript::validate() const {
  if (duration_s * fps < 4.0) {
    throw std::invalid_argument("script: fewer than 4 frames");
  }
  if (fps <= 0.0 || height_m <= 0.0 || speed < 0.0) {
    throw std::invalid_argument("script: non-positive fps/height/speed");
  }
  for (const auto& w : occlusions) {
    if (w.start_s < 0.0 || w.end_s > duration_s || w.end_s <= w.start_s) {
      throw std::invalid_argument("script: occlusion window outside duration");
    }
  }
}

GeneratedMotion generate_motion(const SceneScript& script,
                                const body::BodyModel& model) {
  script.validate();
  const double s = script.height_m / model.rest_height();
  if (s < 0.5 || s > 2.0) {
    throw std::invalid_argument("generate_motion: height outside body range");
  }
  const int T = script.frames();
  const double dt = 1.0 / script.fps;

  // Leg geometry from the rest skeleton (left/right symmetric).
  const Vec3 hip = model.rest_joints.row(Joint::kLeftHip).transpose();
  const Vec3 knee = model.rest_joints.row(Joint::kLeftKnee).transpose();
  const Vec3 ankle = model.rest_joints.row(Joint::kLeftAnkle).transpose();
  const double l1 = s * (hip - knee).norm();
  const double l2 = s * (knee - ankle).norm();
  const double leg_len = l1 + l2;
  const double sin_a = script.speed / (kCadence * 2.0 * leg_len);
  if (sin_a > 0.85) {
    throw std::invalid_argument("generate_motion: speed exceeds gait limit");
  }
  const double amp = std::asin(sin_a);
  const double clearance = 0.05 * s;  // swing-foot apex above the ground

  // Ankle height that puts the lowest foot vertex exactly on y = 0.
  double foot_min_y = 1e9;
  for (auto g : {body::VertexGroup::LeftFoot, body::VertexGroup::RightFoot}) {
    for (int v : model.group_vertices(g)) {
      foot_min_y = std::min(foot_min_y, model.template_vertices(v, 1));
    }
  }
  const double ankle_ground_y = s * (ankle.y() - foot_min_y);

  const int J = model.joints();
  std::vector<Points> meshes;
  body::ContactLabels contacts;
  meshes.reserve(size_t(T));
  contacts.reserve(size_t(T));

  double phase = M_PI;  // left-stance, legs together
  double yaw = script.heading;
  bool left_stance = true;
  double foot_yaw[2] = {yaw, yaw};  // [left, right]
  Vec3 anchor = Vec3::Zero();
  Vec3 root = Vec3::Zero();

  for (int t = 0; t < T; ++t) {
    const double time = t * dt;
    const double e = envelope(script, time);
    if (t > 0) {
      phase += 2.0 * M_PI * (kCadence / 2.0) * e * dt;
      yaw += heading_rate(script) * e * dt;
    }

    const bool stance_now =
        (e == 0.0) ? left_stance : (std::cos(phase) < 0.0);  // left?

    // Per-leg hip pitch and knee flexion. The stance leg is a straight
    // pendulum; the swing ankle tracks an explicit arc (pendulum endpoints,
    // sin^2 lift) solved with two-link IK so ground clearance is exact.
    struct LegAngles {
      double hip = 0.0, knee = 0.0;
    };
    auto leg_angles = [&](double ph) {
      LegAngles a;
      const double zeta = amp * e * std::sin(ph);
      if (e == 0.0 || std::cos(ph) < 0.0) {
        a.hip = zeta;  // stance / idle: straight leg
        return a;
      }
      const double u = (std::sin(ph) + 1.0) / 2.0;  // swing progress
      const double sp = std::sin(M_PI * u);
      const double tz = leg_len * std::sin(zeta);
      const double ty = -leg_len * std::cos(zeta) + clearance * e * sp * sp;
      const double r2 = tz * tz + ty * ty;
      const double ck =
          std::clamp((r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2), -1.0, 1.0);
      a.knee = std::acos(ck);
      a.hip = std::atan2(tz, -ty) +
              std::atan2(l2 * std::sin(a.knee), l1 + l2 * ck);
      return a;
    };
    const LegAngles leg_l = leg_angles(phase);
    const LegAngles leg_r = leg_angles(phase + M_PI);
    const double arm_l = 0.4 * amp * e * std::sin(phase + M_PI);
    const double arm_r = 0.4 * amp * e * std::sin(phase);

    // Swing foot follows the body heading; the stance foot keeps its yaw.
    if (stance_now) {
      foot_yaw[1] = yaw;
    } else {
      foot_yaw[0] = yaw;
    }

    const Mat3 r_root = rot_y(yaw);
    body::JointFrames f;
    f.rotation.resize(size_t(J));
    f.position.resize(J, 3);
    auto set_rot = [&](int j, const Mat3& r) { f.rotation[size_t(j)] = r; };
    set_rot(Joint::kPelvis, r_root);
    set_rot(Joint::kSpine, r_root);
    set_rot(Joint::kNeck, r_root);
    set_rot(Joint::kHead, r_root);
    set_rot(Joint::kLeftHip, r_root * rot_x(-leg_l.hip));
    set_rot(Joint::kLeftKnee, r_root * rot_x(-leg_l.hip + leg_l.knee));
    set_rot(Joint::kLeftAnkle, rot_y(foot_yaw[0]));
    set_rot(Joint::kLeftToe, rot_y(foot_yaw[0]));
    set_rot(Joint::kRightHip, r_root * rot_x(-leg_r.hip));
    set_rot(Joint::kRightKnee, r_root * rot_x(-leg_r.hip + leg_r.knee));
    set_rot(Joint::kRightAnkle, rot_y(foot_yaw[1]));
    set_rot(Joint::kRightToe, rot_y(foot_yaw[1]));
    set_rot(Joint::kLeftShoulder, r_root * rot_x(-arm_l));
    set_rot(Joint::kLeftElbow, r_root * rot_x(-arm_l + 0.25));
    set_rot(Joint::kRightShoulder, r_root * rot_x(-arm_r));
    set_rot(Joint::kRightElbow, r_root * rot_x(-arm_r + 0.25));

    // Joint offsets relative to the root (root position applied afterwards).
    f.position.row(Joint::kPelvis).setZero();
    for (int j = 1; j < J; ++j) {
      const int p = model.parents[size_t(j)];
      const Vec3 off =
          s * (model.rest_joints.row(j) - model.rest_joints.row(p)).transpose();
      f.position.row(j) =
          f.position.row(p) + (f.rotation[size_t(p)] * off).transpose();
    }

    const int stance_ankle =
        stance_now ? Joint::kLeftAnkle : Joint::kRightAnkle;
    const Vec3 o_st = f.position.row(stance_ankle).transpose();
    if (t == 0) {
      root = Vec3(script.start_x, ankle_ground_y - o_st.y(), script.start_z);
      anchor = root + o_st;
    } else if (stance_now == left_stance) {
      root = anchor - o_st;
    } else {
      // Stance hand-off: the landing foot becomes the new anchor, snapped to
      // the ground so the pinned-foot height is exact.
      Vec3 next = root + o_st;
      next.y() = ankle_ground_y;
      anchor = next;
      root = anchor - o_st;
    }
    left_stance = stance_now;

    for (int j = 0; j < J; ++j) {
      f.position.row(j) += root.transpose();
    }
    meshes.push_back(body::skin(model, f, s));

    const bool both_down = e == 0.0;
    contacts.push_back({stance_now || both_down, !stance_now || both_down});
  }

  GeneratedMotion out;
  const body::JointRegressor reg = body::make_joint_regressor(model);
  out.world = motion::make_world_sequence(meshes, reg, script.fps);
  out.contacts = std::move(contacts);
  out.meshes = std::move(meshes);
  return out;
}

geom::CameraTrack generate_camera(const SceneScript& script,
                                  const GeneratedMotion& motion) {
  const int T = motion.world.frames();
  const Eigen::Matrix<double, Eigen::Dynamic, 3> roots =
      motion::absolute_roots(motion.world);

  geom::CameraTrack track;
  track.poses.resize(size_t(T));
  track.intrinsics.assign(size_t(T), geom::Intrinsics{200.0, 200.0,
                                                      kImageExtent / 2.0,
                                                      kImageExtent / 2.0});
  track.fps = script.fps;

  switch (script.camera) {
    case CameraMode::Static: {
      for (auto& g : track.poses) g = geom::RigidPose::identity();
      break;
    }
    case CameraMode::Orbit: {
      // Centered moving average of the subject root (1 s window).
      const int half = std::max(1, int(script.fps / 2.0));
      auto smooth = [&](int t) {
        const int lo = std::max(0, t - half);
        const int hi = std::min(T - 1, t + half);
        Vec3 acc = Vec3::Zero();
        for (int i = lo; i <= hi; ++i) acc += roots.row(i).transpose();
        return Vec3(acc / double(hi - lo + 1));
      };
      const Vec3 sm0 = smooth(0);
      for (int t = 0; t < T; ++t) {
        const double th = script.orbit_rate * t / script.fps;
        geom::RigidPose g;
        g.rotation = rot_y(th);
        g.translation = smooth(t) - g.rotation * sm0;
        track.poses[size_t(t)] = g;
      }
      break;
    }
    case CameraMode::HandheldSmooth:
    case CameraMode::HandheldShaky: {
      const bool shaky = script.camera == CameraMode::HandheldShaky;
      const double sig_r = shaky ? 0.05 : 0.02;
      const double sig_p = shaky ? 0.04 : 0.02;
      const int win = shaky ? 5 : 15;
      std::mt19937_64 rng(splitmix64(script.seed ^ 0xca3e7aull));
      std::normal_distribution<double> gauss(0.0, 1.0);
      Eigen::MatrixXd white(T, 6);
      for (int i = 0; i < white.size(); ++i) white.data()[i] = gauss(rng);
      Eigen::MatrixXd band = Eigen::MatrixXd::Zero(T, 6);
      for (int t = 0; t < T; ++t) {
        const int lo = std::max(0, t - win), hi = std::min(T - 1, t + win);
        for (int c = 0; c < 6; ++c) {
          double acc = 0.0;
          for (int i = lo; i <= hi; ++i) acc += white(i, c);
          band(t, c) = acc / double(hi - lo + 1);
        }
      }
      const Eigen::RowVectorXd band0 = band.row(0);
      band.rowwise() -= band0;  // exact identity at the first frame
      for (int t = 0; t < T; ++t) {
        geom::RigidPose g;
        g.rotation = geom::so3_exp(sig_r * band.row(t).head<3>().transpose());
        g.translation = sig_p * band.row(t).tail<3>().transpose();
        track.poses[size_t(t)] = g;
      }
      break;
    }
  }
  track.poses[0] = geom::RigidPose::identity();
  return track;
}

std::vector<condition::KeypointFrame> render_keypoints(
    const GeneratedMotion& motion, const geom::CameraTrack& track,
    const std::vector<OcclusionWindow>& occlusions,
    const training::AugmentSpec& spec, const body::BodyModel& model,
    std::mt19937_64& rng) {
  const int T = motion.world.frames();
  if (static_cast<int>(track.poses.size()) != T) {
    throw std::invalid_argument("render_keypoints: track length mismatch");
  }
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<condition::KeypointFrame> frames;
  frames.reserve(size_t(T));
  const double fps = motion.world.fps;
  for (int t = 0; t < T; ++t) {
    const double time = t / fps;
    bool occluded = false;
    for (const auto& w : occlusions) {
      if (time >= w.start_s && time < w.end_s) occluded = true;
    }
    const Points cam = geom::apply_pose(track.poses[size_t(t)].inverse(),
                                        motion.meshes[size_t(t)]);
    const auto proj = geom::project(track.intrinsics[size_t(t)], cam);
    condition::KeypointFrame f;
    f.pixels.setZero(cam.rows(), 2);
    f.confidence.setZero(cam.rows());
    for (int v = 0; v < cam.rows(); ++v) {
      const bool inside = proj.valid[size_t(v)] &&
                          proj.pixels(v, 0) >= 0.0 &&
                          proj.pixels(v, 0) <= kImageExtent &&
                          proj.pixels(v, 1) >= 0.0 &&
                          proj.pixels(v, 1) <= kImageExtent;
      if (occluded || !inside) continue;  // confidence stays 0, no stale data
      f.pixels.row(v) = proj.pixels.row(v);
      f.confidence(v) = std::clamp(
          1.0 - std::abs(kConfidenceNoiseStd * gauss(rng)), 0.0, 1.0);
    }
    frames.push_back(std::move(f));
  }
  return training::augment_keypoints(frames, spec, model, rng);
}

SequenceRecord generate_sequence(const SceneScript& script,
                                 const training::AugmentSpec& augment,
                                 const body::BodyModel& model) {
  SequenceRecord rec;
  rec.script = script;
  rec.height_m = script.height_m;
  GeneratedMotion gen = generate_motion(script, model);
  rec.track = generate_camera(script, gen);
  std::mt19937_64 rng(splitmix64(script.seed ^ 0x5eedull));
  rec.keypoints =
      render_keypoints(gen, rec.track, script.occlusions, augment, model, rng);
  rec.contacts = std::move(gen.contacts);
  rec.world = std::move(gen.world);
  const int min_count = condition::default_min_count(model.vertices());
  rec.visibility.reserve(rec.keypoints.size());
  for (const auto& f : rec.keypoints) {
    rec.visibility.push_back(condition::frame_visibility(f, 0.5, min_count));
  }
  return rec;
}

std::vector<int> Dataset::split_indices(Split s) const {
  std::vector<int> out;
  for (size_t i = 0; i < splits.size(); ++i) {
    if (splits[i] == s) out.push_back(static_cast<int>(i));
  }
  return out;
}

uint64_t body_config_hash(const body::BodyModel& model) {
  uint64_t h = io::hash_matrix(model.template_vertices);
  h = io::hash_matrix(model.skin_weights, h);
  h = io::hash_matrix(model.rest_joints, h);
  return h;
}

Dataset build_dataset(const DatasetSpec& spec, const body::BodyModel& model) {
  const int total = spec.train + spec.val + spec.test;
  Dataset ds;
  ds.body_hash = body_config_hash(model);
  ds.records.reserve(size_t(total));
  ds.splits.reserve(size_t(total));

  for (int i = 0; i < total; ++i) {
    const uint64_t seed = splitmix64(spec.master_seed + 0x1000ull * (i + 1));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);

    SceneScript sc;
    sc.seed = seed;
    sc.duration_s =
        spec.min_duration_s + (spec.max_duration_s - spec.min_duration_s) * uni(rng);
    sc.fps = spec.fps;
    sc.gait = static_cast<Gait>(int(uni(rng) * 5) % 5);
    sc.height_m = 1.5 + 0.4 * uni(rng);
    sc.speed = 0.6 + 0.7 * uni(rng);
    sc.turn_rate = (uni(rng) < 0.5 ? -1.0 : 1.0) * (0.2 + 0.3 * uni(rng));
    sc.circle_radius = 1.5 + 1.5 * uni(rng);
    sc.start_x = -0.5 + uni(rng);
    sc.start_z = 3.5 + 1.5 * uni(rng);
    // Keep walkers roughly along the view axis so static cameras see them.
    sc.heading = (sc.gait == Gait::Walk || sc.gait == Gait::StopAndGo)
                     ? (uni(rng) < 0.5 ? 0.0 : M_PI) + 0.5 * (uni(rng) - 0.5)
                     : 2.0 * M_PI * uni(rng);
    sc.camera = static_cast<CameraMode>(int(uni(rng) * 4) % 4);
    sc.orbit_rate = 0.15 + 0.2 * uni(rng);
    if (uni(rng) < spec.occlusion_prob) {
      OcclusionWindow w;
      const double len = 1.0 + 2.0 * uni(rng);
      w.start_s = uni(rng) * std::max(0.1, sc.duration_s - len - 0.5) + 0.25;
      w.end_s = std::min(sc.duration_s, w.start_s + len);
      sc.occlusions.push_back(w);
    }

    ds.records.push_back(generate_sequence(sc, spec.augment, model));
    ds.splits.push_back(i < spec.train            ? Split::Train
                        : i < spec.train + spec.val ? Split::Val
                                                    : Split::Test);
  }
  return ds;
}

namespace {

constexpr uint32_t kDatasetMagic = 0x44734d44u;  // "DMsD"
constexpr uint32_t kDatasetVersion = 1;

void write_script(io::ByteWriter& w, const SceneScript& s) {
  w.u64(s.seed);
  w.f64(s.duration_s);
  w.f64(s.fps);
  w.u8(static_cast<uint8_t>(s.gait));
  w.f64(s.height_m);
  w.f64(s.speed);
  w.f64(s.turn_rate);
  w.f64(s.circle_radius);
  w.f64(s.start_x);
  w.f64(s.start_z);
  w.f64(s.heading);
  w.u8(static_cast<uint8_t>(s.camera));
  w.f64(s.orbit_rate);
  w.u32(static_cast<uint32_t>(s.occlusions.size()));
  for (const auto& o : s.occlusions) {
    w.f64(o.start_s);
    w.f64(o.end_s);
  }
}

SceneScript read_script(io::ByteReader& r) {
  SceneScript s;
  s.seed = r.u64();
  s.duration_s = r.f64();
  s.fps = r.f64();
  s.gait = static_cast<Gait>(r.u8());
  s.height_m = r.f64();
  s.speed = r.f64();
  s.turn_rate = r.f64();
  s.circle_radius = r.f64();
  s.start_x = r.f64();
  s.start_z = r.f64();
  s.heading = r.f64();
  s.camera = static_cast<CameraMode>(r.u8());
  s.orbit_rate = r.f64();
  const uint32_t n = r.u32();
  for (uint32_t i = 0; i < n; ++i) {
    OcclusionWindow w;
    w.start_s = r.f64();
    w.end_s = r.f64();
    s.occlusions.push_back(w);
  }
  return s;
}

void write_record(io::ByteWriter& w, const SequenceRecord& rec) {
  write_script(w, rec.script);
  w.f64(rec.height_m);
  const int T = rec.world.frames();
  w.u32(static_cast<uint32_t>(T));
  w.f64(rec.world.fps);
  w.matrix(rec.world.root);
  for (const auto& m : rec.world.mesh) w.matrixf(m.cast<float>());
  for (const auto& g : rec.track.poses) {
    w.matrix(g.rotation);
    w.matrix(g.translation);
  }
  for (const auto& k : rec.track.intrinsics) {
    w.f64(k.fx);
    w.f64(k.fy);
    w.f64(k.cx);
    w.f64(k.cy);
  }
  for (const auto& f : rec.keypoints) {
    w.matrixf(f.pixels.cast<float>());
    w.matrixf(f.confidence.cast<float>());
  }
  for (const auto& c : rec.contacts) {
    w.u8(static_cast<uint8_t>((c[0] ? 1 : 0) | (c[1] ? 2 : 0)));
  }
  for (const bool v : rec.visibility) w.u8(v ? 1 : 0);
}

SequenceRecord read_record(io::ByteReader& r) {
  SequenceRecord rec;
  rec.script = read_script(r);
  rec.height_m = r.f64();
  const uint32_t T = r.u32();
  rec.world.tag = motion::FrameTag::World;
  rec.world.fps = r.f64();
  rec.track.fps = rec.world.fps;  // the track shares the clip's frame rate
  rec.world.root = r.matrix();
  for (uint32_t t = 0; t < T; ++t) {
    rec.world.mesh.push_back(r.matrixf().cast<double>());
  }
  for (uint32_t t = 0; t < T; ++t) {
    geom::RigidPose g;
    g.rotation = r.matrix();
    g.translation = r.matrix();
    rec.track.poses.push_back(g);
  }
  for (uint32_t t = 0; t < T; ++t) {
    geom::Intrinsics k;
    k.fx = r.f64();
    k.fy = r.f64();
    k.cx = r.f64();
    k.cy = r.f64();
    rec.track.intrinsics.push_back(k);
  }
  for (uint32_t t = 0; t < T; ++t) {
    condition::KeypointFrame f;
    f.pixels = r.matrixf().cast<double>();
    f.confidence = r.matrixf().cast<double>().col(0);
    rec.keypoints.push_back(std::move(f));
  }
  for (uint32_t t = 0; t < T; ++t) {
    const uint8_t c = r.u8();
    rec.contacts.push_back({(c & 1) != 0, (c & 2) != 0});
  }
  for (uint32_t t = 0; t < T; ++t) rec.visibility.push_back(r.u8() != 0);
  return rec;
}

const char* gait_name(Gait g) {
  switch (g) {
    case Gait::Stand: return "stand";
    case Gait::Walk: return "walk";
    case Gait::Turn: return "turn";
    case Gait::Circle: return "circle";
    case Gait::StopAndGo: return "stop-and-go";
  }
  return "?";
}

const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
  io::ByteWriter w;
  w.u32(kDatasetMagic);
  w.u32(kDatasetVersion);
  w.u64(ds.body_hash);
  w.u32(static_cast<uint32_t>(ds.records.size()));
  for (size_t i = 0; i < ds.records.size(); ++i) {
    w.u8(static_cast<uint8_t>(ds.splits[i]));
    io::ByteWriter rw;
    write_record(rw, ds.records[i]);
    w.u32(static_cast<uint32_t>(rw.bytes().size()));
    w.raw(rw.bytes().data(), rw.bytes().size());
  }
  io::write_file(path, w.bytes());

  std::string manifest = "duomo dataset v" + std::to_string(kDatasetVersion) +
                         "\nbody_hash " + std::to_string(ds.body_hash) +
                         "\nsequences " + std::to_string(ds.records.size()) +
                         "\n";
  for (size_t i = 0; i < ds.records.size(); ++i) {
    const auto& rec = ds.records[i];
    manifest += std::to_string(i) + " " + split_name(ds.splits[i]) + " seed=" +
                std::to_string(rec.script.seed) + " gait=" +
                gait_name(rec.script.gait) + " frames=" +
                std::to_string(rec.world.frames()) + " occlusions=" +
                std::to_string(rec.script.occlusions.size()) + "\n";
  }
  std::vector<uint8_t> mb(manifest.begin(), manifest.end());
  io::write_file(path + ".manifest", mb);
}

Dataset load_dataset(const std::string& path) {
  const auto bytes = io::read_file(path);
  io::ByteReader r(bytes);
  if (r.u32() != kDatasetMagic) {
    throw std::runtime_error("dataset: bad magic (expected DMsD container)");
  }
  const uint32_t version = r.u32();
  if (version != kDatasetVersion) {
    throw std::runtime_error("dataset: unsupported version " +
                             std::to_string(version) + " (expected " +
                             std::to_string(kDatasetVersion) + ")");
  }
  Dataset ds;
  ds.body_hash = r.u64();
  const uint32_t n = r.u32();
  for (uint32_t i = 0; i < n; ++i) {
    ds.splits.push_back(static_cast<Split>(r.u8()));
    const uint32_t len = r.u32();
    if (len > r.remaining()) {
      throw std::runtime_error("dataset: truncated record " + std::to_string(i));
    }
    std::vector<uint8_t> sub(len);
    r.raw(sub.data(), len);
    io::ByteReader rr(sub);
    ds.records.push_back(read_record(rr));
  }
  return ds;
}

Dataset load_dataset(const std::string& path,
                     const body::BodyModel& expected) {
  Dataset ds = load_dataset(path);
  const uint64_t want = body_config_hash(expected);
  if (ds.body_hash != want) {
    throw std::runtime_error("dataset: body hash " +
                             std::to_string(ds.body_hash) +
                             " does not match configured body " +
                             std::to_string(want));
  }
  return ds;
}

}  // namespace duomo::synth
