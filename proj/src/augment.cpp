#include "duomo/augment.hpp"

#include <stdexcept>

namespace duomo::training {

void AugmentSpec::validate() const {
  if (point_mask_prob < 0.0 || point_mask_prob > 1.0 || part_mask_prob < 0.0 ||
      part_mask_prob > 1.0) {
    throw std::invalid_argument("augment: mask probability outside [0, 1]");
  }
  if (point_noise_std < 0.0 || part_perturb_std < 0.0) {
    throw std::invalid_argument("augment: negative noise std");
  }
}

std::vector<condition::KeypointFrame> augment_keypoints(
    const std::vector<condition::KeypointFrame>& frames,
    const AugmentSpec& spec, const body::BodyModel& model,
    std::mt19937_64& rng) {
  spec.validate();
  if (spec.is_zero()) return frames;

  constexpr int kGroups = 9;
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> coin(0.0, 1.0);

  std::vector<condition::KeypointFrame> out = frames;
  for (auto& f : out) {
    if (f.count() != model.vertices()) {
      throw std::invalid_argument("augment: keypoint/body vertex mismatch");
    }
    // Part level first: one shared offset and one mask draw per part.
    double part_dx[kGroups], part_dy[kGroups];
    bool part_masked[kGroups];
    for (int g = 0; g < kGroups; ++g) {
      part_dx[g] = spec.part_perturb_std * gauss(rng);
      part_dy[g] = spec.part_perturb_std * gauss(rng);
      part_masked[g] = coin(rng) < spec.part_mask_prob;
    }
    for (int v = 0; v < f.count(); ++v) {
      const int g = static_cast<int>(model.groups[size_t(v)]);
      f.pixels(v, 0) += part_dx[g] + spec.point_noise_std * gauss(rng);
      f.pixels(v, 1) += part_dy[g] + spec.point_noise_std * gauss(rng);
      if (part_masked[g] || coin(rng) < spec.point_mask_prob) {
        f.confidence(v) = 0.0;
      }
    }
  }
  return out;
}

}  // namespace duomo::training
