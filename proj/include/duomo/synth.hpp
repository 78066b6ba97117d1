#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "duomo/augment.hpp"
#include "duomo/body.hpp"
#include "duomo/condition.hpp"
#include "duomo/geometry.hpp"
#include "duomo/motion.hpp"

// Synthetic ground-truth factory: procedural gait motions on the y = 0 plane,
// camera trajectories with g1 = identity, projected dense keypoints with
// detection-noise simulation, and the versioned dataset container.
namespace duomo::synth {

enum class Gait : uint8_t { Stand, Walk, Turn, Circle, StopAndGo };
enum class CameraMode : uint8_t { Static, Orbit, HandheldSmooth, HandheldShaky };

struct OcclusionWindow {
  double start_s = 0.0;
  double end_s = 0.0;
};

struct SceneScript {
  uint64_t seed = 0;
  double duration_s = 6.0;
  double fps = 30.0;
  Gait gait = Gait::Walk;
  double height_m = 1.75;
  double speed = 1.0;          // m/s along the path
  double turn_rate = 0.4;      // rad/s, Turn gait
  double circle_radius = 2.0;  // m, Circle gait
  double start_x = 0.0;        // subject start, first-camera frame
  double start_z = 4.0;
  double heading = 0.0;        // initial yaw, 0 = facing +z
  CameraMode camera = CameraMode::Static;
  double orbit_rate = 0.25;    // rad/s
  std::vector<OcclusionWindow> occlusions;

  int frames() const { return static_cast<int>(duration_s * fps + 0.5); }
  void validate() const;
};

struct GeneratedMotion {
  motion::MotionSequence world;          // tag World, ground plane y = 0
  body::ContactLabels contacts;          // from the generator's stance phases
  std::vector<geom::Points> meshes;      // absolute world meshes (convenience)
};

// Kinematic gait synthesis with analytically pinned stance feet.
GeneratedMotion generate_motion(const SceneScript& script,
                                const body::BodyModel& model);

// Camera path in the same frame; first pose is exactly identity.
geom::CameraTrack generate_camera(const SceneScript& script,
                                  const GeneratedMotion& motion);

inline constexpr double kImageExtent = 256.0;  // square image, pixels
inline constexpr double kConfidenceNoiseStd = 0.1;

std::vector<condition::KeypointFrame> render_keypoints(
    const GeneratedMotion& motion, const geom::CameraTrack& track,
    const std::vector<OcclusionWindow>& occlusions,
    const training::AugmentSpec& spec, const body::BodyModel& model,
    std::mt19937_64& rng);

enum class Split : uint8_t { Train, Val, Test };

struct SequenceRecord {
  SceneScript script;
  motion::MotionSequence world;
  geom::CameraTrack track;
  std::vector<condition::KeypointFrame> keypoints;
  body::ContactLabels contacts;
  std::vector<bool> visibility;  // frame_visibility over the keypoints
  double height_m = 0.0;
};

struct Dataset {
  uint64_t body_hash = 0;
  std::vector<SequenceRecord> records;
  std::vector<Split> splits;

  std::vector<int> split_indices(Split s) const;
};

struct DatasetSpec {
  int train = 500;
  int val = 50;
  int test = 50;
  uint64_t master_seed = 7;
  double min_duration_s = 4.0;
  double max_duration_s = 8.0;
  double fps = 30.0;
  training::AugmentSpec augment;  // applied on top of detection noise
  double occlusion_prob = 0.5;    // chance of one scripted window
};

SequenceRecord generate_sequence(const SceneScript& script,
                                 const training::AugmentSpec& augment,
                                 const body::BodyModel& model);

Dataset build_dataset(const DatasetSpec& spec, const body::BodyModel& model);

uint64_t body_config_hash(const body::BodyModel& model);

// Versioned binary container plus a plain-text manifest at path + ".manifest".
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);
// Throws if the stored body hash does not match `expected`.
Dataset load_dataset(const std::string& path, const body::BodyModel& expected);

}  // namespace duomo::synth
