#pragma once

#include <random>
#include <vector>

#include "duomo/body.hpp"
#include "duomo/condition.hpp"

// Keypoint augmentation used at training time and during dataset rendering:
// detection-error simulation at the point level and at the body-part level.
namespace duomo::training {

struct AugmentSpec {
  double point_noise_std = 0.0;   // pixels, i.i.d. per point
  double point_mask_prob = 0.0;   // confidence -> 0 per point
  double part_perturb_std = 0.0;  // pixels, one shared 2D offset per part
  double part_mask_prob = 0.0;    // whole-part confidence -> 0

  void validate() const;
  bool is_zero() const {
    return point_noise_std == 0.0 && point_mask_prob == 0.0 &&
           part_perturb_std == 0.0 && part_mask_prob == 0.0;
  }
};

// Parts are the body's vertex groups. Seeded and reproducible; an all-zero
// spec returns the input bitwise unchanged.
std::vector<condition::KeypointFrame> augment_keypoints(
    const std::vector<condition::KeypointFrame>& frames,
    const AugmentSpec& spec, const body::BodyModel& model,
    std::mt19937_64& rng);

}  // namespace duomo::training
