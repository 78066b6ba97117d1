#include "duomo/condition.hpp"

#include <cmath>
#include <stdexcept>

namespace duomo::condition {

using nn::Mat;
using nn::Var;

void KeypointFrame::validate() const {
  if (confidence.size() != pixels.rows()) {
    throw std::invalid_argument("keypoints: confidence/pixel count mismatch");
  }
  for (Eigen::Index i = 0; i < confidence.size(); ++i) {
    const double c = confidence(i);
    if (!(c >= 0.0 && c <= 1.0)) {
      throw std::invalid_argument("keypoints: confidence outside [0, 1]");
    }
  }
}

bool frame_visibility(const KeypointFrame& frame, double conf_thresh,
                      int min_count) {
  frame.validate();
  int confident = 0;
  for (Eigen::Index i = 0; i < frame.confidence.size(); ++i) {
    if (frame.confidence(i) >= conf_thresh) ++confident;
  }
  return confident >= min_count;
}

int default_min_count(int vertices) { return (vertices + 3) / 4; }

Var combine_features(const Var& f_kpt, const Var& f_img) {
  if (!f_img.defined()) return f_kpt;
  if (f_img.rows() != f_kpt.rows() || f_img.cols() != f_kpt.cols()) {
    throw std::invalid_argument("combine_features: width mismatch");
  }
  return nn::add(f_kpt, f_img);
}

KeypointEncoder::KeypointEncoder(int vertices, int out_width,
                                 nn::ParamStore& store, std::mt19937_64& rng,
                                 std::string prefix, int bands, int hidden)
    : vertices_(vertices),
      out_width_(out_width),
      bands_(bands),
      hidden_(hidden > 0 ? hidden : out_width),
      params_(store),
      prefix_(std::move(prefix)) {
  const int flat = vertices_ * slice_width();
  params_.create(prefix_ + ".null", 1, flat, 0.02f, rng);
  params_.create(prefix_ + ".W1", flat, hidden_, 0.02f, rng);
  params_.create(prefix_ + ".b1", 1, hidden_, 0.0f, rng);
  params_.create(prefix_ + ".W2", hidden_, out_width_, 0.02f, rng);
  params_.create(prefix_ + ".b2", 1, out_width_, 0.0f, rng);
}

Var KeypointEncoder::encode_sequence(
    const std::vector<KeypointFrame>& frames,
    const std::vector<geom::Intrinsics>& intrinsics, double conf_thresh,
    const ImageFeatureProvider* images) const {
  if (frames.empty() || intrinsics.size() != frames.size()) {
    throw std::invalid_argument("keypoints: frame/intrinsics count mismatch");
  }
  const int T = static_cast<int>(frames.size());
  const int S = slice_width();
  const int flat = vertices_ * S;
  Mat enc = Mat::Zero(T, flat);
  Mat null_mask = Mat::Zero(T, flat);
  for (int t = 0; t < T; ++t) {
    const auto& f = frames[size_t(t)];
    f.validate();
    if (f.count() != vertices_) {
      throw std::invalid_argument("keypoints: vertex count mismatch");
    }
    for (int v = 0; v < vertices_; ++v) {
      if (f.confidence(v) >= conf_thresh) {
        // Ray direction, then a sinusoidal band encoding of its coordinates.
        Eigen::Matrix<double, 1, 2> px = f.pixels.row(v);
        const geom::Points ray =
            geom::pixels_to_rays(intrinsics[size_t(t)], px);
        const Eigen::MatrixXd e = geom::positional_encode(ray, bands_);
        enc.block(t, v * S, 1, S) = e.cast<float>();
      } else {
        null_mask.block(t, v * S, 1, S).setOnes();
      }
    }
  }
  auto g = [&](const char* n) { return params_.get(prefix_ + "." + n); };
  // Masked slices come from the learnable null row, broadcast over frames.
  const Var null_rows =
      nn::matmul(nn::constant(Mat::Ones(T, 1)), g("null"));
  const Var x =
      nn::add(nn::constant(std::move(enc)), nn::cmul_const(null_rows, null_mask));
  Var out = nn::add_rowvec(
      nn::matmul(nn::gelu(nn::add_rowvec(nn::matmul(x, g("W1")), g("b1"))),
                 g("W2")),
      g("b2"));
  if (images != nullptr) {
    std::vector<Var> rows;
    bool any = false;
    for (int t = 0; t < T; ++t) {
      Var f = images->features(frames[size_t(t)], intrinsics[size_t(t)]);
      if (f.defined()) {
        any = true;
      } else {
        f = nn::constant(Mat::Zero(1, out_width_));
      }
      rows.push_back(f);
    }
    if (any) out = combine_features(out, nn::concat_rows(rows));
  }
  return out;
}

Var KeypointEncoder::encode(const KeypointFrame& frame,
                            const geom::Intrinsics& k,
                            double conf_thresh) const {
  return encode_sequence({frame}, {k}, conf_thresh, nullptr);
}

LiftedMotionEncoder::LiftedMotionEncoder(int vertices, int out_width,
                                         nn::ParamStore& store,
                                         std::mt19937_64& rng,
                                         std::string prefix, int hidden)
    : vertices_(vertices),
      out_width_(out_width),
      hidden_(hidden > 0 ? hidden : out_width),
      params_(store),
      prefix_(std::move(prefix)) {
  const int flat = vertices_ * 3 + 3;
  params_.create(prefix_ + ".mask", 1, out_width_, 0.02f, rng);
  params_.create(prefix_ + ".W1", flat, hidden_, 0.02f, rng);
  params_.create(prefix_ + ".b1", 1, hidden_, 0.0f, rng);
  params_.create(prefix_ + ".W2", hidden_, out_width_, 0.02f, rng);
  params_.create(prefix_ + ".b2", 1, out_width_, 0.0f, rng);
}

Var LiftedMotionEncoder::encode_sequence(
    const std::vector<geom::Points>& meshes,
    const Eigen::Matrix<double, Eigen::Dynamic, 3>& roots,
    const std::vector<bool>& visible) const {
  const int T = static_cast<int>(meshes.size());
  if (roots.rows() != T || visible.size() != size_t(T) || T == 0) {
    throw std::invalid_argument("lifted motion: length mismatch");
  }
  const int flat = vertices_ * 3 + 3;
  Mat x = Mat::Zero(T, flat);
  Mat vis_mask = Mat::Zero(T, out_width_);
  Mat inv_mask = Mat::Zero(T, out_width_);
  for (int t = 0; t < T; ++t) {
    if (!visible[size_t(t)]) {
      // Invisible frames never contribute data, stale or otherwise.
      inv_mask.row(t).setOnes();
      continue;
    }
    const auto& m = meshes[size_t(t)];
    if (m.rows() != vertices_) {
      throw std::invalid_argument("lifted motion: vertex count mismatch");
    }
    if (!m.allFinite() || !roots.row(t).allFinite()) {
      throw std::invalid_argument("lifted motion: non-finite visible frame");
    }
    for (int v = 0; v < vertices_; ++v) {
      x(t, 3 * v + 0) = static_cast<float>(m(v, 0));
      x(t, 3 * v + 1) = static_cast<float>(m(v, 1));
      x(t, 3 * v + 2) = static_cast<float>(m(v, 2));
    }
    x(t, flat - 3) = static_cast<float>(roots(t, 0));
    x(t, flat - 2) = static_cast<float>(roots(t, 1));
    x(t, flat - 1) = static_cast<float>(roots(t, 2));
    vis_mask.row(t).setOnes();
  }
  auto g = [&](const char* n) { return params_.get(prefix_ + "." + n); };
  const Var mlp = nn::add_rowvec(
      nn::matmul(nn::gelu(nn::add_rowvec(
                     nn::matmul(nn::constant(std::move(x)), g("W1")),
                     g("b1"))),
                 g("W2")),
      g("b2"));
  const Var mask_rows = nn::matmul(nn::constant(Mat::Ones(T, 1)), g("mask"));
  return nn::add(nn::cmul_const(mlp, vis_mask),
                 nn::cmul_const(mask_rows, inv_mask));
}

Var LiftedMotionEncoder::encode(const geom::Points& mesh,
                                const geom::Vec3& root, bool visible) const {
  Eigen::Matrix<double, Eigen::Dynamic, 3> r(1, 3);
  r.row(0) = root.transpose();
  return encode_sequence({mesh}, r, {visible});
}

ConvImageProvider::ConvImageProvider(int out_width, nn::ParamStore& store,
                                     std::mt19937_64& rng, std::string prefix,
                                     int grid, int channels,
                                     double image_extent)
    : out_width_(out_width),
      grid_(grid),
      channels_(channels),
      extent_(image_extent),
      params_(store),
      prefix_(std::move(prefix)) {
  params_.create(prefix_ + ".conv.W", 9, channels_, 0.1f, rng);
  params_.create(prefix_ + ".conv.b", 1, channels_, 0.0f, rng);
  params_.create(prefix_ + ".proj.W", channels_, out_width_, 0.1f, rng);
  params_.create(prefix_ + ".proj.b", 1, out_width_, 0.0f, rng);
}

Var ConvImageProvider::features(const KeypointFrame& frame,
                                const geom::Intrinsics&) const {
  // Confidence-weighted rasterization onto a coarse grid.
  Mat img = Mat::Zero(grid_, grid_);
  for (int i = 0; i < frame.count(); ++i) {
    if (frame.confidence(i) <= 0.0) continue;
    const int cx = static_cast<int>(frame.pixels(i, 0) / extent_ * grid_);
    const int cy = static_cast<int>(frame.pixels(i, 1) / extent_ * grid_);
    if (cx < 0 || cy < 0 || cx >= grid_ || cy >= grid_) continue;
    img(cy, cx) += static_cast<float>(frame.confidence(i));
  }
  // im2col for a zero-padded 3x3 convolution.
  Mat cols(grid_ * grid_, 9);
  for (int y = 0; y < grid_; ++y) {
    for (int x = 0; x < grid_; ++x) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy, xx = x + dx;
          const float v = (yy >= 0 && xx >= 0 && yy < grid_ && xx < grid_)
                              ? img(yy, xx)
                              : 0.0f;
          cols(y * grid_ + x, (dy + 1) * 3 + (dx + 1)) = v;
        }
      }
    }
  }
  auto g = [&](const char* n) { return params_.get(prefix_ + "." + n); };
  const Var act = nn::relu(nn::add_rowvec(
      nn::matmul(nn::constant(std::move(cols)), g("conv.W")), g("conv.b")));
  const Mat pool = Mat::Constant(1, grid_ * grid_, 1.0f / float(grid_ * grid_));
  const Var pooled = nn::matmul(nn::constant(pool), act);
  return nn::add_rowvec(nn::matmul(pooled, g("proj.W")), g("proj.b"));
}

}  // namespace duomo::condition
