#pragma once

#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "duomo/geometry.hpp"
#include "duomo/nn.hpp"

// Conditioning streams for the two denoisers: the keypoint/ray/image pathway
// for the camera model and the lifted-motion pathway for the world model.
namespace duomo::condition {

struct KeypointFrame {
  Eigen::Matrix<double, Eigen::Dynamic, 2> pixels;  // V x 2
  Eigen::VectorXd confidence;                       // V, in [0, 1]

  int count() const { return static_cast<int>(pixels.rows()); }
  void validate() const;
};

// Visible iff at least `min_count` keypoints reach `conf_thresh` (inclusive).
bool frame_visibility(const KeypointFrame& frame, double conf_thresh,
                      int min_count);
int default_min_count(int vertices);  // ceil(V / 4)

// Optional per-frame image features summed onto the keypoint features.
class ImageFeatureProvider {
 public:
  virtual ~ImageFeatureProvider() = default;
  // 1 x out_width features for one frame, or an undefined Var for "absent".
  virtual nn::Var features(const KeypointFrame& frame,
                           const geom::Intrinsics& k) const = 0;
};

// f = f_kpt + f_img; absent image features contribute nothing.
nn::Var combine_features(const nn::Var& f_kpt, const nn::Var& f_img);

// Rays -> sinusoidal encoding (F bands) per keypoint, low-confidence slices
// replaced by learnable per-keypoint null embeddings, flattened and passed
// through a learned two-layer map.
class KeypointEncoder {
 public:
  KeypointEncoder(int vertices, int out_width, nn::ParamStore& store,
                  std::mt19937_64& rng, std::string prefix = "kpt",
                  int bands = 8, int hidden = 0 /* 0 => out_width */);

  int vertices() const { return vertices_; }
  int out_width() const { return out_width_; }
  int slice_width() const { return 6 * bands_; }  // 3 ray coords, sin+cos

  nn::Var encode(const KeypointFrame& frame, const geom::Intrinsics& k,
                 double conf_thresh = 0.5) const;  // 1 x out_width
  // T x out_width, with an image provider summed in when supplied.
  nn::Var encode_sequence(const std::vector<KeypointFrame>& frames,
                          const std::vector<geom::Intrinsics>& intrinsics,
                          double conf_thresh = 0.5,
                          const ImageFeatureProvider* images = nullptr) const;

 private:
  int vertices_, out_width_, bands_, hidden_;
  nn::ParamStore& params_;
  std::string prefix_;
};

// Flatten a lifted world frame (root-centered mesh + root channel) through a
// learned two-layer map; invisible frames yield the learnable mask token.
class LiftedMotionEncoder {
 public:
  LiftedMotionEncoder(int vertices, int out_width, nn::ParamStore& store,
                      std::mt19937_64& rng, std::string prefix = "lift",
                      int hidden = 0);

  int out_width() const { return out_width_; }

  nn::Var encode(const geom::Points& mesh, const geom::Vec3& root,
                 bool visible) const;  // 1 x out_width
  nn::Var encode_sequence(const std::vector<geom::Points>& meshes,
                          const Eigen::Matrix<double, Eigen::Dynamic, 3>& roots,
                          const std::vector<bool>& visible) const;

 private:
  int vertices_, out_width_, hidden_;
  nn::ParamStore& params_;
  std::string prefix_;
};

// Default zero provider: image pathway disabled.
class ZeroImageProvider : public ImageFeatureProvider {
 public:
  nn::Var features(const KeypointFrame&,
                   const geom::Intrinsics&) const override {
    return nn::Var();
  }
};

// Tiny trainable pathway over a confidence-weighted keypoint rasterization:
// grid -> 3x3 conv -> relu -> global average per channel -> linear.
class ConvImageProvider : public ImageFeatureProvider {
 public:
  ConvImageProvider(int out_width, nn::ParamStore& store,
                    std::mt19937_64& rng, std::string prefix = "img",
                    int grid = 16, int channels = 8, double image_extent = 256);

  nn::Var features(const KeypointFrame& frame,
                   const geom::Intrinsics& k) const override;

 private:
  int out_width_, grid_, channels_;
  double extent_;
  nn::ParamStore& params_;
  std::string prefix_;
};

}  // namespace duomo::condition
