#include "duomo/training.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "duomo/io.hpp"

namespace duomo::training {

using body::BodyModel;
using body::JointRegressor;
using geom::Points;
using motion::FrameTag;
using motion::MotionSequence;
using nn::Mat;
using nn::Var;

namespace {

int tensor_width(int vertices) { return vertices * 3 + 3; }

// Joint regression on the flattened layout: J_{j,c} = sum_v reg_{j,v} P_{v,c}.
Eigen::MatrixXd joint_matrix(const JointRegressor& reg) {
  const int j = static_cast<int>(reg.weights.rows());
  const int v = static_cast<int>(reg.weights.cols());
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(v * 3, j * 3);
  for (int ji = 0; ji < j; ++ji) {
    for (int vi = 0; vi < v; ++vi) {
      const double w = reg.weights(ji, vi);
      if (w == 0.0) continue;
      for (int c = 0; c < 3; ++c) m(vi * 3 + c, ji * 3 + c) = w;
    }
  }
  return m;
}

// Broadcast a 3-channel root to `count` xyz blocks.
Eigen::MatrixXd broadcast_matrix(int count) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(3, count * 3);
  for (int k = 0; k < count; ++k) {
    for (int c = 0; c < 3; ++c) m(c, k * 3 + c) = 1.0;
  }
  return m;
}

void check_same_shape(const MotionSequence& a, const MotionSequence& b) {
  if (a.frames() != b.frames() || a.vertices() != b.vertices() ||
      a.tag != b.tag) {
    throw std::invalid_argument("loss: sequence shape/tag mismatch");
  }
}

// Per-row [scale | shift] for the tensor layout under the given tag.
void stat_rows(const NormStats& s, FrameTag tag, Eigen::VectorXd& mean,
               Eigen::VectorXd& std) {
  const int pd = static_cast<int>(s.p_mean.size());
  mean.resize(pd + 3);
  std.resize(pd + 3);
  mean.head(pd) = s.p_mean;
  std.head(pd) = s.p_std;
  if (tag == FrameTag::Camera) {
    mean.tail(3) = s.r_mean;
    std.tail(3) = s.r_std;
  } else {
    mean.tail(3) = s.v_mean;
    std.tail(3) = s.v_std;
  }
}

std::array<Eigen::MatrixXd, 2> stat_grids(const NormStats& s, FrameTag tag,
                                          int rows) {
  Eigen::VectorXd mean, std;
  stat_rows(s, tag, mean, std);
  Eigen::MatrixXd mg(rows, mean.size()), sg(rows, std.size());
  mg.rowwise() = mean.transpose();
  sg.rowwise() = std.transpose();
  if (tag == FrameTag::World && rows > 0) {
    mg.row(0).tail(3) = s.v1_mean.transpose();
    sg.row(0).tail(3) = s.v1_std.transpose();
  }
  return {sg, mg};  // scale, shift
}

Mat to_f(const Eigen::MatrixXd& m) { return m.cast<float>(); }

std::vector<uint8_t> serialize_moments(const nn::ParamStore& store) {
  io::ByteWriter w;
  w.u32(static_cast<uint32_t>(store.params().size()));
  for (const auto& p : store.params()) {
    w.str(p->name);
    w.matrixf(p->m1.size() ? p->m1 : Mat::Zero(0, 0));
    w.matrixf(p->m2.size() ? p->m2 : Mat::Zero(0, 0));
  }
  return w.take();
}

void deserialize_moments(nn::ParamStore& store,
                         const std::vector<uint8_t>& bytes) {
  if (bytes.empty()) return;
  io::ByteReader r(bytes);
  const uint32_t n = r.u32();
  if (n != store.params().size()) {
    throw std::runtime_error("checkpoint: optimizer state count mismatch");
  }
  for (const auto& p : store.params()) {
    const std::string name = r.str();
    if (name != p->name) {
      throw std::runtime_error("checkpoint: optimizer state for '" + name +
                               "' does not match parameter '" + p->name + "'");
    }
    p->m1 = r.matrixf();
    p->m2 = r.matrixf();
  }
}

MotionSequence slice_camera_sequence(const MotionSequence& s, int a, int w) {
  MotionSequence out;
  out.tag = s.tag;
  out.fps = s.fps;
  out.mesh.assign(s.mesh.begin() + a, s.mesh.begin() + a + w);
  out.root = s.root.middleRows(a, w);
  return out;
}

void write_stats(io::ByteWriter& w, const NormStats& s) {
  w.matrix(s.p_mean);
  w.matrix(s.p_std);
  w.matrix(s.r_mean);
  w.matrix(s.r_std);
  w.matrix(s.v_mean);
  w.matrix(s.v_std);
  w.matrix(s.v1_mean);
  w.matrix(s.v1_std);
}

NormStats read_stats(io::ByteReader& r) {
  NormStats s;
  s.p_mean = r.matrix();
  s.p_std = r.matrix();
  s.r_mean = r.matrix();
  s.r_std = r.matrix();
  s.v_mean = r.matrix();
  s.v_std = r.matrix();
  s.v1_mean = r.matrix();
  s.v1_std = r.matrix();
  return s;
}

constexpr uint32_t kCheckpointMagic = 0x4b434d44u;  // "DMCK"

}  // namespace

void NormStats::validate() const {
  const auto bad = [](const auto& v) { return (v.array() <= 1e-6).any(); };
  if (p_mean.size() == 0 || p_mean.size() != p_std.size() || bad(p_std) ||
      bad(r_std) || bad(v_std) || bad(v1_std)) {
    throw std::invalid_argument("norm stats: empty or degenerate std");
  }
}

NormStats compute_norm_stats(const synth::Dataset& ds,
                             const JointRegressor& reg) {
  if (ds.records.empty()) {
    throw std::invalid_argument("norm stats: empty dataset");
  }
  const int v = ds.records[0].world.vertices();
  const int pd = v * 3;
  Eigen::VectorXd psum = Eigen::VectorXd::Zero(pd), psq = psum;
  Eigen::Vector3d rsum = Eigen::Vector3d::Zero(), rsq = rsum;
  Eigen::Vector3d vsum = Eigen::Vector3d::Zero(), vsq = vsum;
  long pn = 0, rn = 0, vn = 0;

  auto indices = ds.split_indices(synth::Split::Train);
  if (indices.empty()) {
    indices.resize(ds.records.size());
    for (size_t i = 0; i < ds.records.size(); ++i) indices[i] = int(i);
  }
  for (int idx : indices) {
    const auto& rec = ds.records[size_t(idx)];
    const MotionSequence cam = motion::unlift(rec.world, rec.track, reg);
    for (int t = 0; t < cam.frames(); ++t) {
      for (int vi = 0; vi < v; ++vi) {
        for (int c = 0; c < 3; ++c) {
          const double a = cam.mesh[size_t(t)](vi, c);
          const double b = rec.world.mesh[size_t(t)](vi, c);
          psum(vi * 3 + c) += a + b;
          psq(vi * 3 + c) += a * a + b * b;
        }
      }
      pn += 2;
      rsum += cam.root.row(t).transpose();
      rsq += cam.root.row(t).cwiseAbs2().transpose();
      ++rn;
      if (t >= 1) {
        vsum += rec.world.root.row(t).transpose();
        vsq += rec.world.root.row(t).cwiseAbs2().transpose();
        ++vn;
      }
    }
  }

  NormStats s;
  auto finish = [](const auto& sum, const auto& sq, long n) {
    const auto mean = (sum / double(n)).eval();
    return std::pair{mean, ((sq / double(n) - mean.cwiseAbs2()).cwiseMax(1e-10))
                               .cwiseSqrt()
                               .cwiseMax(1e-5)
                               .eval()};
  };
  std::tie(s.p_mean, s.p_std) = finish(psum, psq, pn);
  std::tie(s.r_mean, s.r_std) = finish(rsum, rsq, rn);
  std::tie(s.v_mean, s.v_std) = finish(vsum, vsq, std::max(vn, 1L));
  s.v1_mean = s.r_mean;  // window-initial anchored velocity is a camera root
  s.v1_std = s.r_std;
  s.validate();
  return s;
}

Tensor sequence_to_tensor(const MotionSequence& seq) {
  const int t = seq.frames(), v = seq.vertices();
  Tensor x(t, tensor_width(v));
  for (int ti = 0; ti < t; ++ti) {
    for (int vi = 0; vi < v; ++vi) {
      x.block<1, 3>(ti, vi * 3) = seq.mesh[size_t(ti)].row(vi);
    }
    x.block<1, 3>(ti, v * 3) = seq.root.row(ti);
  }
  return x;
}

MotionSequence tensor_to_sequence(const Tensor& x, int vertices, FrameTag tag,
                                  double fps) {
  if (x.cols() != tensor_width(vertices)) {
    throw std::invalid_argument("tensor_to_sequence: width mismatch");
  }
  MotionSequence seq;
  seq.tag = tag;
  seq.fps = fps;
  seq.root.resize(x.rows(), 3);
  for (int t = 0; t < x.rows(); ++t) {
    Points m(vertices, 3);
    for (int vi = 0; vi < vertices; ++vi) {
      m.row(vi) = x.block<1, 3>(t, vi * 3);
    }
    seq.mesh.push_back(std::move(m));
    seq.root.row(t) = x.block<1, 3>(t, vertices * 3);
  }
  return seq;
}

Tensor normalize(const Tensor& x, const NormStats& stats, FrameTag tag) {
  const auto [scale, shift] = stat_grids(stats, tag, int(x.rows()));
  return (x - shift).cwiseQuotient(scale);
}

Tensor denormalize(const Tensor& x, const NormStats& stats, FrameTag tag) {
  const auto [scale, shift] = stat_grids(stats, tag, int(x.rows()));
  return x.cwiseProduct(scale) + shift;
}

LossComponents camera_loss(const MotionSequence& pred,
                           const MotionSequence& gt, const JointRegressor& reg,
                           const LossWeights& w) {
  check_same_shape(pred, gt);
  if (pred.tag != FrameTag::Camera) {
    throw std::invalid_argument("camera_loss: camera-tagged sequences only");
  }
  const int t = pred.frames(), v = pred.vertices();
  const int j = static_cast<int>(reg.weights.rows());
  LossComponents c;
  for (int ti = 0; ti < t; ++ti) {
    c.vertices +=
        (pred.mesh[size_t(ti)] - gt.mesh[size_t(ti)]).cwiseAbs().sum();
    const Points jp = (reg.weights * pred.mesh[size_t(ti)]).rowwise() +
                      pred.root.row(ti);
    const Points jg =
        (reg.weights * gt.mesh[size_t(ti)]).rowwise() + gt.root.row(ti);
    c.joints += (jp - jg).cwiseAbs().sum();
  }
  c.vertices /= double(t) * v;
  c.root = (pred.root - gt.root).cwiseAbs().sum() / t;
  c.joints /= double(t) * j;
  c.total = w.vertices * c.vertices + w.root * c.root + w.joints * c.joints;
  return c;
}

LossComponents world_loss(const MotionSequence& pred, const MotionSequence& gt,
                          const body::ContactLabels& contacts,
                          const BodyModel& model, const LossWeights& w) {
  check_same_shape(pred, gt);
  if (pred.tag != FrameTag::World) {
    throw std::invalid_argument("world_loss: world-tagged sequences only");
  }
  const int t = pred.frames(), v = pred.vertices();
  if (static_cast<int>(contacts.size()) != t) {
    throw std::invalid_argument("world_loss: contact label length mismatch");
  }
  const auto pr = motion::absolute_roots(pred);
  const auto gr = motion::absolute_roots(gt);
  const std::vector<int> feet[2] = {
      model.group_vertices(body::VertexGroup::LeftFoot),
      model.group_vertices(body::VertexGroup::RightFoot)};

  LossComponents c;
  long events = 0;
  double contact_sum = 0.0;
  for (int ti = 0; ti < t; ++ti) {
    const Points pa = pred.mesh[size_t(ti)].rowwise() + pr.row(ti);
    const Points ga = gt.mesh[size_t(ti)].rowwise() + gr.row(ti);
    c.vertices += (pa - ga).cwiseAbs().sum();
    for (int side = 0; side < 2; ++side) {
      if (!contacts[size_t(ti)][size_t(side)]) continue;
      double acc = 0.0;
      for (int fv : feet[side]) acc += (pa.row(fv) - ga.row(fv)).cwiseAbs().sum();
      contact_sum += acc / double(feet[side].size());
      ++events;
    }
  }
  c.vertices /= double(t) * v;
  c.root = (pred.root - gt.root).cwiseAbs().sum() / t;
  c.contact = events > 0 ? contact_sum / double(events) : 0.0;
  c.total = w.vertices * c.vertices + w.root * c.root + w.contact * c.contact;
  return c;
}

LossVar camera_loss_var(const Var& pred_norm, const NormStats& stats,
                        const MotionSequence& gt, const JointRegressor& reg,
                        const LossWeights& w) {
  const int t = gt.frames(), v = gt.vertices();
  const int j = static_cast<int>(reg.weights.rows());
  if (pred_norm.rows() != t || pred_norm.cols() != tensor_width(v)) {
    throw std::invalid_argument("camera_loss_var: tensor shape mismatch");
  }
  const auto [scale, shift] = stat_grids(stats, FrameTag::Camera, t);
  const Var denorm = nn::add(nn::cmul_const(pred_norm, to_f(scale)),
                             nn::constant(to_f(shift)));
  const Var p = nn::slice_cols(denorm, 0, v * 3);
  const Var r = nn::slice_cols(denorm, v * 3, 3);

  const Tensor gt_t = sequence_to_tensor(gt);
  const Mat gt_p = to_f(gt_t.leftCols(v * 3));
  const Mat gt_r = to_f(gt_t.rightCols(3));
  const Eigen::MatrixXd jm = joint_matrix(reg);
  const Eigen::MatrixXd bj = broadcast_matrix(j);
  const Var joints =
      nn::add(nn::matmul_const(p, to_f(jm)), nn::matmul_const(r, to_f(bj)));
  const Mat gt_joints =
      to_f(gt_t.leftCols(v * 3) * jm + gt_t.rightCols(3) * bj);

  const Mat ones_p = Mat::Ones(t, v * 3);
  const Mat ones_r = Mat::Ones(t, 3);
  const Mat ones_j = Mat::Ones(t, j * 3);
  const Var lv = nn::l1_loss(p, gt_p, ones_p, float(t) * v);
  const Var lr = nn::l1_loss(r, gt_r, ones_r, float(t));
  const Var lj = nn::l1_loss(joints, gt_joints, ones_j, float(t) * j);

  LossVar out;
  out.parts.vertices = lv.val()(0, 0);
  out.parts.root = lr.val()(0, 0);
  out.parts.joints = lj.val()(0, 0);
  out.total = nn::add(nn::add(nn::scale(lv, float(w.vertices)),
                              nn::scale(lr, float(w.root))),
                      nn::scale(lj, float(w.joints)));
  out.parts.total = out.total.val()(0, 0);
  return out;
}

LossVar world_loss_var(const Var& pred_norm, const NormStats& stats,
                       const MotionSequence& gt,
                       const body::ContactLabels& contacts,
                       const BodyModel& model, const LossWeights& w) {
  const int t = gt.frames(), v = gt.vertices();
  if (pred_norm.rows() != t || pred_norm.cols() != tensor_width(v)) {
    throw std::invalid_argument("world_loss_var: tensor shape mismatch");
  }
  if (static_cast<int>(contacts.size()) != t) {
    throw std::invalid_argument("world_loss_var: contact label mismatch");
  }
  const auto [scale, shift] = stat_grids(stats, FrameTag::World, t);
  const Var denorm = nn::add(nn::cmul_const(pred_norm, to_f(scale)),
                             nn::constant(to_f(shift)));
  const Var p = nn::slice_cols(denorm, 0, v * 3);
  const Var vel = nn::slice_cols(denorm, v * 3, 3);
  const Var roots = nn::cumsum_rows(vel);
  const Eigen::MatrixXd bv = broadcast_matrix(v);
  const Var abs = nn::add(p, nn::matmul_const(roots, to_f(bv)));

  const Tensor gt_t = sequence_to_tensor(gt);
  const auto gr = motion::absolute_roots(gt);
  Tensor gt_abs = gt_t.leftCols(v * 3);
  gt_abs += gr * bv;
  const Mat gt_abs_f = to_f(gt_abs);
  const Mat gt_v = to_f(gt_t.rightCols(3));

  // Contact mask: per event, mean over that foot's vertex channels.
  const std::vector<int> feet[2] = {
      model.group_vertices(body::VertexGroup::LeftFoot),
      model.group_vertices(body::VertexGroup::RightFoot)};
  Mat cmask = Mat::Zero(t, v * 3);
  long events = 0;
  for (int ti = 0; ti < t; ++ti) {
    for (int side = 0; side < 2; ++side) {
      if (!contacts[size_t(ti)][size_t(side)]) continue;
      ++events;
      const float inv = 1.0f / float(feet[side].size());
      for (int fv : feet[side]) {
        for (int c = 0; c < 3; ++c) cmask(ti, fv * 3 + c) += inv;
      }
    }
  }

  const Var lv = nn::l1_loss(abs, gt_abs_f, Mat::Ones(t, v * 3), float(t) * v);
  const Var lvel = nn::l1_loss(vel, gt_v, Mat::Ones(t, 3), float(t));
  const Var lc = events > 0
                     ? nn::l1_loss(abs, gt_abs_f, cmask, float(events))
                     : nn::constant(Mat::Zero(1, 1));

  LossVar out;
  out.parts.vertices = lv.val()(0, 0);
  out.parts.root = lvel.val()(0, 0);
  out.parts.contact = lc.val()(0, 0);
  out.total = nn::add(nn::add(nn::scale(lv, float(w.vertices)),
                              nn::scale(lvel, float(w.root))),
                      nn::scale(lc, float(w.contact)));
  out.parts.total = out.total.val()(0, 0);
  return out;
}

void TrainConfig::validate() const {
  if (steps < 1 || batch < 1 || window < 2 || diffusion_steps < 1 ||
      val_sequences < 1 || cond_ddim_steps < 1) {
    throw std::invalid_argument("train config: non-positive size");
  }
  if (estimation_mode_prob < 0.0 || estimation_mode_prob > 1.0 ||
      height_dropout < 0.0 || height_dropout > 1.0) {
    throw std::invalid_argument("train config: probability outside [0, 1]");
  }
  augment.validate();
}

uint64_t TrainConfig::config_hash() const {
  io::ByteWriter w;
  w.u32(uint32_t(steps));
  w.u32(uint32_t(batch));
  w.u32(uint32_t(window));
  w.f64(lr);
  w.f64(weight_decay);
  w.u8(cosine_lr_decay);
  w.f64(estimation_mode_prob);
  w.f64(height_dropout);
  w.u32(uint32_t(diffusion_steps));
  w.u8(uint8_t(schedule));
  w.u32(uint32_t(backbone.layers));
  w.u32(uint32_t(backbone.width));
  w.u32(uint32_t(backbone.heads));
  w.u32(uint32_t(backbone.ff_width));
  w.u32(uint32_t(backbone.window_radius));
  w.f64(backbone.rope_base);
  w.u8(backbone.adaln);
  w.u32(uint32_t(condition_width));
  w.f64(conf_thresh);
  w.f64(augment.point_noise_std);
  w.f64(augment.point_mask_prob);
  w.f64(augment.part_perturb_std);
  w.f64(augment.part_mask_prob);
  w.u8(image_features);
  w.f64(weights.vertices);
  w.f64(weights.root);
  w.f64(weights.joints);
  w.f64(weights.contact);
  w.u64(seed);
  w.u32(uint32_t(cond_ddim_steps));
  w.f64(track_sigma_rot);
  w.f64(track_sigma_trans);
  return io::hash_bytes(w.bytes().data(), w.bytes().size());
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  io::ByteWriter w;
  w.u32(kCheckpointMagic);
  w.u32(ck.version);
  w.u8(uint8_t(ck.kind));
  w.u64(ck.config_hash);
  w.u64(ck.body_hash);
  w.u32(uint32_t(ck.vertices));
  w.u32(uint32_t(ck.backbone.layers));
  w.u32(uint32_t(ck.backbone.width));
  w.u32(uint32_t(ck.backbone.heads));
  w.u32(uint32_t(ck.backbone.ff_width));
  w.u32(uint32_t(ck.backbone.window_radius));
  w.u32(uint32_t(ck.backbone.motion_width));
  w.u32(uint32_t(ck.backbone.condition_width));
  w.u32(uint32_t(ck.backbone.output_width));
  w.f64(ck.backbone.rope_base);
  w.u8(ck.backbone.adaln);
  w.u32(uint32_t(ck.condition_width));
  w.f64(ck.conf_thresh);
  w.u32(uint32_t(ck.diffusion_steps));
  w.u8(uint8_t(ck.schedule));
  w.u8(ck.image_features);
  write_stats(w, ck.stats);
  w.u64(ck.params.size());
  w.raw(ck.params.data(), ck.params.size());
  w.u64(ck.opt_state.size());
  w.raw(ck.opt_state.data(), ck.opt_state.size());
  w.u64(uint64_t(ck.adam_step));
  w.u64(uint64_t(ck.step));
  w.str(ck.rng_state);
  io::write_file(path, w.bytes());
}

Checkpoint load_checkpoint(const std::string& path) {
  const auto bytes = io::read_file(path);
  io::ByteReader r(bytes);
  if (r.u32() != kCheckpointMagic) {
    throw std::runtime_error("checkpoint: bad magic (expected DMCK)");
  }
  Checkpoint ck;
  ck.version = r.u32();
  if (ck.version != 1) {
    throw std::runtime_error("checkpoint: unsupported version " +
                             std::to_string(ck.version));
  }
  ck.kind = ModelKind(r.u8());
  ck.config_hash = r.u64();
  ck.body_hash = r.u64();
  ck.vertices = int(r.u32());
  ck.backbone.layers = int(r.u32());
  ck.backbone.width = int(r.u32());
  ck.backbone.heads = int(r.u32());
  ck.backbone.ff_width = int(r.u32());
  ck.backbone.window_radius = int(r.u32());
  ck.backbone.motion_width = int(r.u32());
  ck.backbone.condition_width = int(r.u32());
  ck.backbone.output_width = int(r.u32());
  ck.backbone.rope_base = float(r.f64());
  ck.backbone.adaln = r.u8() != 0;
  ck.condition_width = int(r.u32());
  ck.conf_thresh = r.f64();
  ck.diffusion_steps = int(r.u32());
  ck.schedule = diffusion::ScheduleFamily(r.u8());
  ck.image_features = r.u8() != 0;
  ck.stats = read_stats(r);
  ck.params.resize(r.u64());
  r.raw(ck.params.data(), ck.params.size());
  ck.opt_state.resize(r.u64());
  r.raw(ck.opt_state.data(), ck.opt_state.size());
  ck.adam_step = int64_t(r.u64());
  ck.step = int64_t(r.u64());
  ck.rng_state = r.str();
  return ck;
}

namespace {

backbone::BackboneConfig camera_backbone(int vertices, int backbone_width,
                                         const backbone::BackboneConfig& base,
                                         int condition_width) {
  backbone::BackboneConfig c = base;
  (void)backbone_width;
  c.motion_width = tensor_width(vertices);
  c.condition_width = condition_width;
  c.output_width = tensor_width(vertices);
  return c;
}

}  // namespace

std::unique_ptr<CameraModel> make_camera_model(int vertices,
                                               const TrainConfig& cfg) {
  auto m = std::make_unique<CameraModel>();
  m->vertices = vertices;
  m->conf_thresh = cfg.conf_thresh;
  m->config =
      camera_backbone(vertices, cfg.backbone.width, cfg.backbone,
                      cfg.condition_width);
  m->schedule =
      diffusion::DiffusionSchedule::make(cfg.schedule, cfg.diffusion_steps);
  std::mt19937_64 rng(cfg.seed ^ 0xc0dec0deull);
  m->denoiser =
      std::make_unique<backbone::Denoiser>(m->config, m->params, rng, "cam");
  m->encoder = std::make_unique<condition::KeypointEncoder>(
      vertices, cfg.condition_width, m->params, rng, "kpt");
  if (cfg.image_features) {
    m->image = std::make_unique<condition::ConvImageProvider>(
        cfg.condition_width, m->params, rng, "img");
  }
  return m;
}

std::unique_ptr<CameraModel> camera_model_from_checkpoint(
    const Checkpoint& ck) {
  if (ck.kind != ModelKind::Camera) {
    throw std::runtime_error("checkpoint: expected a camera-model checkpoint");
  }
  auto m = std::make_unique<CameraModel>();
  m->vertices = ck.vertices;
  m->conf_thresh = ck.conf_thresh;
  m->config = ck.backbone;
  m->schedule =
      diffusion::DiffusionSchedule::make(ck.schedule, ck.diffusion_steps);
  m->stats = ck.stats;
  std::mt19937_64 rng(1);
  m->denoiser =
      std::make_unique<backbone::Denoiser>(m->config, m->params, rng, "cam");
  m->encoder = std::make_unique<condition::KeypointEncoder>(
      ck.vertices, ck.condition_width, m->params, rng, "kpt");
  if (ck.image_features) {
    m->image = std::make_unique<condition::ConvImageProvider>(
        ck.condition_width, m->params, rng, "img");
  }
  m->params.deserialize(ck.params);
  return m;
}

std::unique_ptr<WorldModel> make_world_model(int vertices,
                                             const TrainConfig& cfg) {
  auto m = std::make_unique<WorldModel>();
  m->vertices = vertices;
  m->config =
      camera_backbone(vertices, cfg.backbone.width, cfg.backbone,
                      cfg.condition_width);
  m->schedule =
      diffusion::DiffusionSchedule::make(cfg.schedule, cfg.diffusion_steps);
  std::mt19937_64 rng(cfg.seed ^ 0x3031d0ull);
  m->denoiser =
      std::make_unique<backbone::Denoiser>(m->config, m->params, rng, "wor");
  m->encoder = std::make_unique<condition::LiftedMotionEncoder>(
      vertices, cfg.condition_width, m->params, rng, "lift");
  return m;
}

std::unique_ptr<WorldModel> world_model_from_checkpoint(const Checkpoint& ck) {
  if (ck.kind != ModelKind::World) {
    throw std::runtime_error("checkpoint: expected a world-model checkpoint");
  }
  auto m = std::make_unique<WorldModel>();
  m->vertices = ck.vertices;
  m->config = ck.backbone;
  m->schedule =
      diffusion::DiffusionSchedule::make(ck.schedule, ck.diffusion_steps);
  m->stats = ck.stats;
  std::mt19937_64 rng(1);
  m->denoiser =
      std::make_unique<backbone::Denoiser>(m->config, m->params, rng, "wor");
  m->encoder = std::make_unique<condition::LiftedMotionEncoder>(
      ck.vertices, ck.condition_width, m->params, rng, "lift");
  m->params.deserialize(ck.params);
  return m;
}

MotionSequence sample_camera_motion(
    const CameraModel& m, const std::vector<condition::KeypointFrame>& frames,
    const std::vector<geom::Intrinsics>& intrinsics,
    std::optional<double> height, double fps, int ddim_steps,
    std::mt19937_64& rng, const diffusion::GuidanceSpec& guidance) {
  if (frames.empty()) {
    throw std::invalid_argument("sample_camera_motion: empty input");
  }
  const Var cond = m.encoder->encode_sequence(frames, intrinsics,
                                              m.conf_thresh, m.image.get());
  const Mat cond_val = cond.val();
  auto denoiser = [&](const Tensor& x, int tau) -> Tensor {
    const Mat xf = x.cast<float>();
    return m.denoiser->denoise(xf, cond_val, tau, height).val().cast<double>();
  };
  const Tensor out = diffusion::ddim_sample(
      denoiser, m.schedule, ddim_steps, guidance, rng,
      Eigen::Index(frames.size()), tensor_width(m.vertices));
  return tensor_to_sequence(denormalize(out, m.stats, FrameTag::Camera),
                            m.vertices, FrameTag::Camera, fps);
}

MotionSequence sample_world_motion(
    const WorldModel& m, const std::vector<Points>& lifted_meshes,
    const Eigen::Matrix<double, Eigen::Dynamic, 3>& lifted_roots,
    const std::vector<bool>& visibility, std::optional<double> height,
    double fps, int ddim_steps, std::mt19937_64& rng,
    const diffusion::GuidanceSpec& guidance) {
  if (lifted_meshes.empty()) {
    throw std::invalid_argument("sample_world_motion: empty input");
  }
  const Var cond =
      m.encoder->encode_sequence(lifted_meshes, lifted_roots, visibility);
  const Mat cond_val = cond.val();
  auto denoiser = [&](const Tensor& x, int tau) -> Tensor {
    const Mat xf = x.cast<float>();
    return m.denoiser->denoise(xf, cond_val, tau, height).val().cast<double>();
  };
  const Tensor out = diffusion::ddim_sample(
      denoiser, m.schedule, ddim_steps, guidance, rng,
      Eigen::Index(lifted_meshes.size()), tensor_width(m.vertices));
  return tensor_to_sequence(denormalize(out, m.stats, FrameTag::World),
                            m.vertices, FrameTag::World, fps);
}

namespace {

std::vector<int> split_or_all(const synth::Dataset& ds, synth::Split s) {
  auto idx = ds.split_indices(s);
  if (idx.empty()) {
    idx.resize(ds.records.size());
    for (size_t i = 0; i < ds.records.size(); ++i) idx[i] = int(i);
  }
  return idx;
}

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void rng_from_string(std::mt19937_64& rng, const std::string& s) {
  std::istringstream is(s);
  is >> rng;
}

Tensor gaussian_tensor(std::mt19937_64& rng, Eigen::Index rows,
                       Eigen::Index cols) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Tensor n(rows, cols);
  for (Eigen::Index i = 0; i < n.size(); ++i) n.data()[i] = gauss(rng);
  return n;
}

double lr_schedule(const TrainConfig& cfg, int64_t step) {
  if (!cfg.cosine_lr_decay) return 1.0;
  return 0.5 * (1.0 + std::cos(M_PI * double(step) / double(cfg.steps)));
}

}  // namespace

TrainResult train_camera_model(const synth::Dataset& ds,
                               const BodyModel& model, const TrainConfig& cfg,
                               const Checkpoint* resume) {
  cfg.validate();
  if (ds.records.empty()) {
    throw std::invalid_argument("train: empty dataset");
  }
  if (ds.body_hash != synth::body_config_hash(model)) {
    throw std::runtime_error("train: dataset body hash mismatch");
  }
  const JointRegressor reg = body::make_joint_regressor(model);
  const int v = model.vertices();

  std::unique_ptr<CameraModel> cm;
  if (resume) {
    cm = camera_model_from_checkpoint(*resume);
  } else {
    cm = make_camera_model(v, cfg);
    cm->stats = compute_norm_stats(ds, reg);
  }

  // Camera-space ground truth per record.
  std::vector<MotionSequence> cams;
  cams.reserve(ds.records.size());
  for (const auto& rec : ds.records) {
    cams.push_back(motion::unlift(rec.world, rec.track, reg));
  }
  const auto train_idx = split_or_all(ds, synth::Split::Train);
  const auto val_idx = split_or_all(ds, synth::Split::Val);

  std::mt19937_64 rng(cfg.seed);
  if (resume && !resume->rng_state.empty()) {
    rng_from_string(rng, resume->rng_state);
  }
  nn::AdamW opt;
  opt.lr = cfg.lr;
  opt.weight_decay = cfg.weight_decay;
  if (resume) {
    opt.step = resume->adam_step;
    deserialize_moments(cm->params, resume->opt_state);
  }

  auto validate_now = [&]() {
    std::mt19937_64 vr(cfg.seed ^ 0x5a11ull);
    double acc = 0.0;
    const int n = std::min<int>(cfg.val_sequences, int(val_idx.size()));
    for (int i = 0; i < n; ++i) {
      const int idx = val_idx[size_t(i)];
      const auto& rec = ds.records[size_t(idx)];
      const auto& cam = cams[size_t(idx)];
      const int w = std::min(cfg.window, cam.frames());
      const std::vector<condition::KeypointFrame> kp(
          rec.keypoints.begin(), rec.keypoints.begin() + w);
      const std::vector<geom::Intrinsics> intr(
          rec.track.intrinsics.begin(), rec.track.intrinsics.begin() + w);
      const Var cond = cm->encoder->encode_sequence(kp, intr, cm->conf_thresh,
                                                    cm->image.get());
      const MotionSequence gtw = slice_camera_sequence(cam, 0, w);
      const Tensor x0 = normalize(sequence_to_tensor(gtw), cm->stats,
                                  FrameTag::Camera);
      const int tau = diffusion::sample_train_step(cm->schedule, vr,
                                                   cfg.estimation_mode_prob);
      const Tensor xt = diffusion::forward_noise(
          cm->schedule, x0, tau, gaussian_tensor(vr, x0.rows(), x0.cols()));
      const Var pred = cm->denoiser->denoise(to_f(xt), cond.val(), tau,
                                             rec.height_m);
      const MotionSequence ps = tensor_to_sequence(
          denormalize(pred.val().cast<double>(), cm->stats, FrameTag::Camera),
          v, FrameTag::Camera, gtw.fps);
      acc += camera_loss(ps, gtw, reg, cfg.weights).total;
    }
    return acc / std::max(1, std::min<int>(cfg.val_sequences,
                                           int(val_idx.size())));
  };

  TrainResult result;
  result.step0_val = validate_now();
  double last_val = result.step0_val;
  std::vector<uint8_t> last_good = cm->params.serialize();
  std::vector<uint8_t> last_good_opt = serialize_moments(cm->params);

  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const int64_t start = resume ? resume->step : 0;
  for (int64_t s = start; s < cfg.steps; ++s) {
    const double lr_scale = lr_schedule(cfg, s);
    Var total;
    LossComponents parts;
    bool blew_up = false;
    try {
      for (int b = 0; b < cfg.batch; ++b) {
        const int idx =
            train_idx[size_t(rng() % uint64_t(train_idx.size()))];
        const auto& rec = ds.records[size_t(idx)];
        const auto& cam = cams[size_t(idx)];
        const int w = std::min(cfg.window, cam.frames());
        const int a = int(rng() % uint64_t(cam.frames() - w + 1));
        std::vector<condition::KeypointFrame> kp(
            rec.keypoints.begin() + a, rec.keypoints.begin() + a + w);
        const std::vector<geom::Intrinsics> intr(
            rec.track.intrinsics.begin() + a,
            rec.track.intrinsics.begin() + a + w);
        if (!cfg.augment.is_zero()) {
          kp = augment_keypoints(kp, cfg.augment, model, rng);
        }
        const Var cond = cm->encoder->encode_sequence(
            kp, intr, cm->conf_thresh, cm->image.get());
        const MotionSequence gtw = slice_camera_sequence(cam, a, w);
        const Tensor x0 = normalize(sequence_to_tensor(gtw), cm->stats,
                                    FrameTag::Camera);
        const int tau = diffusion::sample_train_step(
            cm->schedule, rng, cfg.estimation_mode_prob);
        const Tensor xt = diffusion::forward_noise(
            cm->schedule, x0, tau, gaussian_tensor(rng, x0.rows(), x0.cols()));
        std::optional<double> height;
        if (uni(rng) >= cfg.height_dropout) height = rec.height_m;
        const Var pred = cm->denoiser->denoise(nn::constant(to_f(xt)), cond,
                                               tau, height);
        const LossVar lv =
            camera_loss_var(pred, cm->stats, gtw, reg, cfg.weights);
        total = total.defined() ? nn::add(total, lv.total) : lv.total;
        parts.total += lv.parts.total;
        parts.vertices += lv.parts.vertices;
        parts.root += lv.parts.root;
        parts.joints += lv.parts.joints;
      }
    } catch (const std::runtime_error&) {
      blew_up = true;  // non-finite activations inside the backbone
    }
    if (blew_up || !std::isfinite(total.val()(0, 0))) {
      result.diverged = true;
      cm->params.deserialize(last_good);
      deserialize_moments(cm->params, last_good_opt);
      break;
    }
    const Var loss = nn::scale(total, 1.0f / float(cfg.batch));
    nn::backward(loss);
    opt.update(cm->params, float(lr_scale));
    cm->params.zero_grads();

    const bool log_now = (s % cfg.log_every == 0) || s + 1 == cfg.steps;
    const bool val_now = (s % cfg.val_every == cfg.val_every - 1) ||
                         s + 1 == cfg.steps;
    if (val_now) {
      last_val = validate_now();
      last_good = cm->params.serialize();
      last_good_opt = serialize_moments(cm->params);
    }
    if (log_now || val_now) {
      LogRecord lr;
      lr.step = s;
      lr.train.total = parts.total / cfg.batch;
      lr.train.vertices = parts.vertices / cfg.batch;
      lr.train.root = parts.root / cfg.batch;
      lr.train.joints = parts.joints / cfg.batch;
      lr.val_loss = val_now ? last_val : -1.0;
      lr.lr_scale = lr_scale;
      result.log.push_back(lr);
    }
  }
  result.final_val = last_val;

  Checkpoint ck;
  ck.kind = ModelKind::Camera;
  ck.config_hash = cfg.config_hash();
  ck.body_hash = ds.body_hash;
  ck.vertices = v;
  ck.backbone = cm->config;
  ck.condition_width = cfg.condition_width;
  ck.conf_thresh = cm->conf_thresh;
  ck.diffusion_steps = cfg.diffusion_steps;
  ck.schedule = cfg.schedule;
  ck.image_features = cm->image != nullptr;
  ck.stats = cm->stats;
  ck.params = cm->params.serialize();
  ck.opt_state = serialize_moments(cm->params);
  ck.adam_step = opt.step;
  ck.step = result.diverged ? start : cfg.steps;
  ck.rng_state = rng_to_string(rng);
  result.checkpoint = std::move(ck);
  return result;
}

TrainResult train_world_model(const synth::Dataset& ds, const BodyModel& model,
                              const Checkpoint& camera_ckpt,
                              const TrainConfig& cfg,
                              const Checkpoint* resume) {
  cfg.validate();
  if (ds.records.empty()) {
    throw std::invalid_argument("train: empty dataset");
  }
  if (ds.body_hash != synth::body_config_hash(model)) {
    throw std::runtime_error("train: dataset body hash mismatch");
  }
  if (camera_ckpt.body_hash != ds.body_hash) {
    throw std::runtime_error(
        "train: camera checkpoint body hash does not match the dataset");
  }
  const JointRegressor reg = body::make_joint_regressor(model);
  const int v = model.vertices();

  const auto cam_model = camera_model_from_checkpoint(camera_ckpt);
  const uint64_t frozen_before = cam_model->params.content_hash();

  std::unique_ptr<WorldModel> wm;
  if (resume) {
    wm = world_model_from_checkpoint(*resume);
  } else {
    wm = make_world_model(v, cfg);
    wm->stats = compute_norm_stats(ds, reg);
  }

  const auto train_idx = split_or_all(ds, synth::Split::Train);
  const auto val_idx = split_or_all(ds, synth::Split::Val);

  // Absolute world roots per record (for windowed ground truth).
  std::vector<Eigen::Matrix<double, Eigen::Dynamic, 3>> abs_roots;
  abs_roots.reserve(ds.records.size());
  for (const auto& rec : ds.records) {
    abs_roots.push_back(motion::absolute_roots(rec.world));
  }

  std::mt19937_64 rng(cfg.seed + 1);
  if (resume && !resume->rng_state.empty()) {
    rng_from_string(rng, resume->rng_state);
  }
  nn::AdamW opt;
  opt.lr = cfg.lr;
  opt.weight_decay = cfg.weight_decay;
  if (resume) {
    opt.step = resume->adam_step;
    deserialize_moments(wm->params, resume->opt_state);
  }

  // One training/validation item: window -> frozen camera estimate -> lift ->
  // conditioning; returns the gt window + condition + contacts.
  struct Item {
    MotionSequence gt;
    Var cond;
    body::ContactLabels contacts;
    double height = 0.0;
  };
  auto build_item = [&](int idx, int a, int w, std::mt19937_64& r) {
    const auto& rec = ds.records[size_t(idx)];
    geom::CameraTrack sub;
    sub.fps = rec.track.fps;
    sub.poses.assign(rec.track.poses.begin() + a,
                     rec.track.poses.begin() + a + w);
    sub.intrinsics.assign(rec.track.intrinsics.begin() + a,
                          rec.track.intrinsics.begin() + a + w);
    const geom::RigidPose g0_inv = sub.poses[0].inverse();
    const geom::CameraTrack wtrack = motion::rebase_track(sub);

    const std::vector<condition::KeypointFrame> kp(
        rec.keypoints.begin() + a, rec.keypoints.begin() + a + w);
    std::optional<double> height;
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    if (uni(r) >= cfg.height_dropout) height = rec.height_m;
    const MotionSequence cam_est = sample_camera_motion(
        *cam_model, kp, wtrack.intrinsics, height, wtrack.fps,
        cfg.cond_ddim_steps, r);

    geom::CameraTrack lift_track = wtrack;
    if (cfg.track_sigma_rot > 0.0 || cfg.track_sigma_trans > 0.0) {
      const double u = uni(r);
      lift_track = motion::rebase_track(geom::perturb_trajectory(
          wtrack, cfg.track_sigma_rot * u, cfg.track_sigma_trans * u, r()));
    }
    const MotionSequence lifted = motion::lift(cam_est, lift_track, reg);
    const std::vector<bool> vis(rec.visibility.begin() + a,
                                rec.visibility.begin() + a + w);

    Item item;
    item.cond = wm->encoder->encode_sequence(
        lifted.mesh, motion::absolute_roots(lifted), vis);
    // Ground truth re-expressed in the window's first camera frame.
    std::vector<Points> gt_abs;
    gt_abs.reserve(size_t(w));
    for (int t = a; t < a + w; ++t) {
      const Points m =
          rec.world.mesh[size_t(t)].rowwise() + abs_roots[size_t(idx)].row(t);
      gt_abs.push_back(geom::apply_pose(g0_inv, m));
    }
    item.gt = motion::make_world_sequence(gt_abs, reg, rec.world.fps);
    item.contacts.assign(rec.contacts.begin() + a, rec.contacts.begin() + a + w);
    item.height = rec.height_m;
    return item;
  };

  auto validate_now = [&]() {
    std::mt19937_64 vr(cfg.seed ^ 0x77a1ull);
    double acc = 0.0;
    const int n = std::min<int>(cfg.val_sequences, int(val_idx.size()));
    for (int i = 0; i < n; ++i) {
      const int idx = val_idx[size_t(i)];
      const int tf = ds.records[size_t(idx)].world.frames();
      const int w = std::min(cfg.window, tf);
      Item item = build_item(idx, 0, w, vr);
      const Tensor x0 =
          normalize(sequence_to_tensor(item.gt), wm->stats, FrameTag::World);
      const int tau = diffusion::sample_train_step(wm->schedule, vr,
                                                   cfg.estimation_mode_prob);
      const Tensor xt = diffusion::forward_noise(
          wm->schedule, x0, tau, gaussian_tensor(vr, x0.rows(), x0.cols()));
      const Var pred =
          wm->denoiser->denoise(to_f(xt), item.cond.val(), tau, item.height);
      const MotionSequence ps = tensor_to_sequence(
          denormalize(pred.val().cast<double>(), wm->stats, FrameTag::World),
          v, FrameTag::World, item.gt.fps);
      acc += world_loss(ps, item.gt, item.contacts, model, cfg.weights).total;
    }
    return acc / std::max(1, n);
  };

  TrainResult result;
  result.frozen_hash_before = frozen_before;
  result.step0_val = validate_now();
  double last_val = result.step0_val;
  std::vector<uint8_t> last_good = wm->params.serialize();
  std::vector<uint8_t> last_good_opt = serialize_moments(wm->params);

  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const int64_t start = resume ? resume->step : 0;
  for (int64_t s = start; s < cfg.steps; ++s) {
    const double lr_scale = lr_schedule(cfg, s);
    Var total;
    LossComponents parts;
    bool blew_up = false;
    try {
      for (int b = 0; b < cfg.batch; ++b) {
        const int idx =
            train_idx[size_t(rng() % uint64_t(train_idx.size()))];
        const int tf = ds.records[size_t(idx)].world.frames();
        const int w = std::min(cfg.window, tf);
        const int a = int(rng() % uint64_t(tf - w + 1));
        Item item = build_item(idx, a, w, rng);
        const Tensor x0 =
            normalize(sequence_to_tensor(item.gt), wm->stats, FrameTag::World);
        const int tau = diffusion::sample_train_step(
            wm->schedule, rng, cfg.estimation_mode_prob);
        const Tensor xt = diffusion::forward_noise(
            wm->schedule, x0, tau, gaussian_tensor(rng, x0.rows(), x0.cols()));
        std::optional<double> height;
        if (uni(rng) >= cfg.height_dropout) height = item.height;
        const Var pred = wm->denoiser->denoise(nn::constant(to_f(xt)),
                                               item.cond, tau, height);
        const LossVar lv = world_loss_var(pred, wm->stats, item.gt,
                                          item.contacts, model, cfg.weights);
        total = total.defined() ? nn::add(total, lv.total) : lv.total;
        parts.total += lv.parts.total;
        parts.vertices += lv.parts.vertices;
        parts.root += lv.parts.root;
        parts.contact += lv.parts.contact;
      }
    } catch (const std::runtime_error&) {
      blew_up = true;
    }
    if (blew_up || !std::isfinite(total.val()(0, 0))) {
      result.diverged = true;
      wm->params.deserialize(last_good);
      deserialize_moments(wm->params, last_good_opt);
      break;
    }
    const Var loss = nn::scale(total, 1.0f / float(cfg.batch));
    nn::backward(loss);
    opt.update(wm->params, float(lr_scale));
    wm->params.zero_grads();

    const bool log_now = (s % cfg.log_every == 0) || s + 1 == cfg.steps;
    const bool val_now = (s % cfg.val_every == cfg.val_every - 1) ||
                         s + 1 == cfg.steps;
    if (val_now) {
      last_val = validate_now();
      last_good = wm->params.serialize();
      last_good_opt = serialize_moments(wm->params);
    }
    if (log_now || val_now) {
      LogRecord lr;
      lr.step = s;
      lr.train.total = parts.total / cfg.batch;
      lr.train.vertices = parts.vertices / cfg.batch;
      lr.train.root = parts.root / cfg.batch;
      lr.train.contact = parts.contact / cfg.batch;
      lr.val_loss = val_now ? last_val : -1.0;
      lr.lr_scale = lr_scale;
      result.log.push_back(lr);
    }
  }
  result.final_val = last_val;

  result.frozen_hash_after = cam_model->params.content_hash();
  if (result.frozen_hash_after != frozen_before) {
    throw std::runtime_error(
        "train: frozen camera model parameters changed during world training");
  }

  Checkpoint ck;
  ck.kind = ModelKind::World;
  ck.config_hash = cfg.config_hash();
  ck.body_hash = ds.body_hash;
  ck.vertices = v;
  ck.backbone = wm->config;
  ck.condition_width = cfg.condition_width;
  ck.conf_thresh = cfg.conf_thresh;
  ck.diffusion_steps = cfg.diffusion_steps;
  ck.schedule = cfg.schedule;
  ck.image_features = false;
  ck.stats = wm->stats;
  ck.params = wm->params.serialize();
  ck.opt_state = serialize_moments(wm->params);
  ck.adam_step = opt.step;
  ck.step = result.diverged ? start : cfg.steps;
  ck.rng_state = rng_to_string(rng);
  result.checkpoint = std::move(ck);
  return result;
}

}  // namespace duomo::training
