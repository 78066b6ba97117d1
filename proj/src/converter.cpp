#include "duomo/converter.hpp"

#include <cmath>
#include <stdexcept>

#include "duomo/io.hpp"
#include "duomo/synth.hpp"

namespace duomo::converter {

using body::BodyModel;
using body::BodyParams;
using geom::Points;
using nn::Mat;
using nn::Var;

namespace {

constexpr uint32_t kCascadeMagic = 0x56434d44u;  // "DMCV"

void create_stage_params(nn::ParamStore& store, int stage, int in, int hidden,
                         int out, std::mt19937_64& rng) {
  const std::string p = "s" + std::to_string(stage) + ".";
  store.create(p + "W1", in, hidden, 0.02f, rng);
  store.create(p + "b1", 1, hidden, 0.0f, rng);
  store.create(p + "W2", hidden, out, 0.02f, rng);
  store.create(p + "b2", 1, out, 0.0f, rng);
}

double clamp_scale(double s) { return std::min(2.0, std::max(0.5, s)); }

// Everything one refinement step needs: the posed mesh under the current
// body-local parameters, its rigid head alignment onto the target, the
// aligned vertex error, and the stacked feature vector.
struct StageState {
  Points posed;
  geom::Alignment align;
  double rms = 0.0;
  Eigen::VectorXd features;
};

StageState eval_state(const BodyModel& model, const std::vector<int>& head,
                      const BodyParams& params, const Points& target,
                      bool with_features) {
  StageState st;
  st.posed = body::pose_body(model, params);
  Points src(head.size(), 3), dst(head.size(), 3);
  for (size_t i = 0; i < head.size(); ++i) {
    src.row(Eigen::Index(i)) = st.posed.row(head[i]);
    dst.row(Eigen::Index(i)) = target.row(head[i]);
  }
  st.align = geom::procrustes_align(src, dst, /*with_scale=*/false);
  // Residuals in the body frame so they are invariant to rigid transforms of
  // the target: pull the target back instead of pushing the mesh forward.
  const Points resid =
      st.posed - geom::apply_pose(st.align.pose.inverse(), target);
  st.rms = std::sqrt(resid.rowwise().squaredNorm().mean());
  if (with_features) {
    const int v = int(target.rows());
    st.features.resize(v * 3 + params.flatten().size());
    for (int i = 0; i < v; ++i) {
      st.features.segment<3>(i * 3) = resid.row(i);
    }
    st.features.tail(params.flatten().size()) = params.flatten();
  }
  return st;
}

void apply_update(BodyParams& params, const Eigen::VectorXd& u, int joints) {
  for (int j = 0; j < joints; ++j) {
    params.joint_rotations.row(j) += u.segment<3>(j * 3).transpose();
  }
  params.shape_scale = clamp_scale(params.shape_scale + u(joints * 3));
}

double local_dof(int joints) { return joints * 3 + 1; }

}  // namespace

void ConverterConfig::validate() const {
  if (hidden < 1 || steps_per_stage < 1 || batch < 1) {
    throw std::invalid_argument("converter config: non-positive size");
  }
  if (val_fraction <= 0.0 || val_fraction >= 0.5) {
    throw std::invalid_argument("converter config: val fraction out of range");
  }
}

ConverterCascade::ConverterCascade(const BodyModel& model,
                                   const ConverterConfig& cfg) {
  cfg.validate();
  vertices_ = model.vertices();
  joints_ = model.joints();
  hidden_ = cfg.hidden;
  body_hash_ = synth::body_config_hash(model);
  std::mt19937_64 rng(cfg.seed ^ 0xca5cadeull);
  for (int s = 0; s < kStages; ++s) {
    create_stage_params(params_, s, feature_width(), hidden_, update_width(),
                        rng);
  }
}

int ConverterCascade::feature_width() const {
  return vertices_ * 3 + BodyParams::dof(joints_);
}

int ConverterCascade::update_width() const { return joints_ * 3 + 1; }

Var ConverterCascade::run_stage_var(int stage, const Var& features) const {
  if (stage < 0 || stage >= kStages) {
    throw std::invalid_argument("converter: stage out of range");
  }
  const std::string p = "s" + std::to_string(stage) + ".";
  const Var h = nn::gelu(nn::add_rowvec(
      nn::matmul(features, params_.get(p + "W1")), params_.get(p + "b1")));
  return nn::add_rowvec(nn::matmul(h, params_.get(p + "W2")),
                        params_.get(p + "b2"));
}

Eigen::VectorXd ConverterCascade::run_stage(
    int stage, const Eigen::VectorXd& features) const {
  if (features.size() != feature_width()) {
    throw std::invalid_argument("converter: feature width mismatch");
  }
  Mat row = features.transpose().cast<float>();
  const Var out = run_stage_var(stage, nn::constant(std::move(row)));
  return out.val().row(0).transpose().cast<double>();
}

ConvertReport convert(const std::vector<Points>& targets,
                      const ConverterCascade& cascade, const BodyModel& model) {
  if (synth::body_config_hash(model) != cascade.body_hash()) {
    throw std::runtime_error("converter: cascade built for a different body");
  }
  const auto head = model.group_vertices(body::VertexGroup::Head);
  const int j = model.joints();

  ConvertReport rep;
  rep.vertex_rms.resize(Eigen::Index(targets.size()));
  rep.stage_vertex_rms.resize(Eigen::Index(targets.size()), kStages + 1);
  for (size_t f = 0; f < targets.size(); ++f) {
    if (targets[f].rows() != model.vertices()) {
      throw std::invalid_argument("converter: target vertex count mismatch");
    }
    BodyParams params = BodyParams::rest(j);
    for (int s = 0; s < kStages; ++s) {
      const StageState st =
          eval_state(model, head, params, targets[f], /*with_features=*/true);
      rep.stage_vertex_rms(Eigen::Index(f), s) = st.rms;
      apply_update(params, cascade.run_stage(s, st.features), j);
    }
    const StageState fin =
        eval_state(model, head, params, targets[f], /*with_features=*/false);
    rep.stage_vertex_rms(Eigen::Index(f), kStages) = fin.rms;
    rep.vertex_rms(Eigen::Index(f)) = fin.rms;
    // The rigid head alignment becomes the root pose of the fit.
    params.root_orientation = geom::so3_log(fin.align.pose.rotation);
    params.root_translation = fin.align.pose.translation;
    rep.params.push_back(std::move(params));
  }
  return rep;
}

std::vector<ParamMeshPair> sample_converter_pairs(int count,
                                                  const BodyModel& model,
                                                  uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9a1e5ull);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uscale(0.85, 1.15);

  // Per-joint, per-axis wiggle matching the gait generator: limbs swing in
  // the sagittal plane with only small off-axis motion, the root pose is
  // handled outside the cascade.
  const int j = model.joints();
  Eigen::MatrixXd stds = Eigen::MatrixXd::Zero(j, 3);
  auto set = [&](int ji, double x, double y, double z) {
    stds.row(ji) << x, y, z;
  };
  set(body::kSpine, 0.08, 0.08, 0.05);
  set(body::kNeck, 0.08, 0.08, 0.05);
  set(body::kHead, 0.08, 0.08, 0.05);
  for (int ji : {body::kLeftHip, body::kRightHip}) set(ji, 0.45, 0.08, 0.05);
  for (int ji : {body::kLeftKnee, body::kRightKnee}) set(ji, 0.5, 0.03, 0.03);
  for (int ji : {body::kLeftAnkle, body::kRightAnkle}) set(ji, 0.2, 0.15, 0.05);
  for (int ji : {body::kLeftToe, body::kRightToe}) set(ji, 0.1, 0.02, 0.02);
  for (int ji : {body::kLeftShoulder, body::kRightShoulder,
                 body::kLeftElbow, body::kRightElbow}) {
    set(ji, 0.3, 0.05, 0.05);
  }

  std::vector<ParamMeshPair> out;
  out.reserve(size_t(count));
  for (int i = 0; i < count; ++i) {
    ParamMeshPair pair;
    pair.params = BodyParams::rest(j);
    for (int ji = 0; ji < j; ++ji) {
      for (int c = 0; c < 3; ++c) {
        pair.params.joint_rotations(ji, c) = stds(ji, c) * gauss(rng);
      }
    }
    pair.params.shape_scale = uscale(rng);
    pair.mesh = body::pose_body(model, pair.params);
    out.push_back(std::move(pair));
  }
  return out;
}

ConverterTrainResult train_converter(const std::vector<ParamMeshPair>& pairs,
                                     const BodyModel& model,
                                     const ConverterConfig& cfg) {
  cfg.validate();
  if (pairs.size() < 1000) {
    throw std::invalid_argument("converter: need at least 1000 pairs");
  }
  const auto head = model.group_vertices(body::VertexGroup::Head);
  const int j = model.joints();
  const int n = int(pairs.size());
  const int val_n = std::max(1, int(std::lround(cfg.val_fraction * n)));
  const int train_n = n - val_n;

  ConverterTrainResult res;
  res.cascade = ConverterCascade(model, cfg);
  auto& cascade = res.cascade;

  // Parameters as refined so far, for every pair; stages train sequentially
  // on the error distribution the previous stages leave behind.
  std::vector<BodyParams> current(pairs.size(), BodyParams::rest(j));

  auto val_error = [&]() {
    double acc = 0.0;
    for (int i = train_n; i < n; ++i) {
      acc += eval_state(model, head, current[size_t(i)], pairs[size_t(i)].mesh,
                        false)
                 .rms;
    }
    return acc / val_n;
  };
  res.stage_val_error.push_back(val_error());

  std::mt19937_64 rng(cfg.seed);
  const int out_w = cascade.update_width();
  for (int s = 0; s < kStages; ++s) {
    nn::AdamW opt;
    opt.lr = cfg.lr;
    opt.weight_decay = cfg.weight_decay;
    double last_loss = 0.0;
    for (int step = 0; step < cfg.steps_per_stage; ++step) {
      Mat x(cfg.batch, cascade.feature_width());
      Mat delta(cfg.batch, out_w);
      for (int b = 0; b < cfg.batch; ++b) {
        const int i = int(rng() % uint64_t(train_n));
        const auto& pair = pairs[size_t(i)];
        const StageState st =
            eval_state(model, head, current[size_t(i)], pair.mesh, true);
        x.row(b) = st.features.transpose().cast<float>();
        for (int ji = 0; ji < j; ++ji) {
          delta.block<1, 3>(b, ji * 3) =
              (pair.params.joint_rotations.row(ji) -
               current[size_t(i)].joint_rotations.row(ji))
                  .cast<float>();
        }
        delta(b, j * 3) = float(pair.params.shape_scale -
                                current[size_t(i)].shape_scale);
      }
      const Var pred = cascade.run_stage_var(s, nn::constant(std::move(x)));
      const Var loss = nn::mse_loss(pred, delta);
      last_loss = loss.val()(0, 0);
      if (!std::isfinite(last_loss)) {
        throw std::runtime_error("converter: training diverged");
      }
      nn::backward(loss);
      const float lr_scale =
          0.5f * (1.0f + std::cos(float(M_PI) * float(step) /
                                  float(cfg.steps_per_stage)));
      opt.update(cascade.params(), lr_scale);
      cascade.params().zero_grads();
    }
    res.stage_train_loss.push_back(last_loss);

    // Roll the trained stage forward on every pair.
    for (int i = 0; i < n; ++i) {
      const StageState st =
          eval_state(model, head, current[size_t(i)], pairs[size_t(i)].mesh,
                     true);
      apply_update(current[size_t(i)], cascade.run_stage(s, st.features), j);
    }
    res.stage_val_error.push_back(val_error());
  }
  return res;
}

double optimize_params_oracle(const Points& target, const BodyModel& model,
                              int iterations, double step) {
  const int j = model.joints();
  const int dof = int(local_dof(j));
  Eigen::VectorXd x = Eigen::VectorXd::Zero(dof);
  x(j * 3) = 1.0;  // scale

  auto to_params = [&](const Eigen::VectorXd& v) {
    BodyParams p = BodyParams::rest(j);
    for (int ji = 0; ji < j; ++ji) {
      p.joint_rotations.row(ji) = v.segment<3>(ji * 3).transpose();
    }
    p.shape_scale = clamp_scale(v(j * 3));
    return p;
  };
  auto f = [&](const Eigen::VectorXd& v) {
    return (body::pose_body(model, to_params(v)) - target)
        .rowwise()
        .squaredNorm()
        .mean();
  };

  double cur = f(x);
  const double eps = 1e-5;
  for (int it = 0; it < iterations; ++it) {
    Eigen::VectorXd g(dof);
    for (int d = 0; d < dof; ++d) {
      Eigen::VectorXd up = x, dn = x;
      up(d) += eps;
      dn(d) -= eps;
      g(d) = (f(up) - f(dn)) / (2.0 * eps);
    }
    const double gn = g.norm();
    if (gn < 1e-12) break;
    double trial = step;
    for (int k = 0; k < 20; ++k) {
      const Eigen::VectorXd cand = x - trial * g / gn;
      const double fc = f(cand);
      if (fc < cur) {
        x = cand;
        cur = fc;
        break;
      }
      trial *= 0.5;
    }
  }
  return std::sqrt(cur);
}

void save_cascade(const ConverterCascade& cascade, const std::string& path) {
  io::ByteWriter w;
  w.u32(kCascadeMagic);
  w.u32(1);  // version
  w.u64(cascade.body_hash());
  w.u32(uint32_t(cascade.vertices()));
  w.u32(uint32_t(cascade.joints()));
  w.u32(uint32_t(cascade.hidden()));
  const auto blob = cascade.params().serialize();
  w.u64(blob.size());
  w.raw(blob.data(), blob.size());
  io::write_file(path, w.bytes());
}

ConverterCascade load_cascade(const std::string& path) {
  const auto bytes = io::read_file(path);
  io::ByteReader r(bytes);
  if (r.u32() != kCascadeMagic) {
    throw std::runtime_error("converter: bad magic (expected DMCV)");
  }
  const uint32_t version = r.u32();
  if (version != 1) {
    throw std::runtime_error("converter: unsupported version " +
                             std::to_string(version));
  }
  ConverterCascade c;
  c.body_hash_ = r.u64();
  c.vertices_ = int(r.u32());
  c.joints_ = int(r.u32());
  c.hidden_ = int(r.u32());
  std::mt19937_64 rng(1);
  for (int s = 0; s < kStages; ++s) {
    create_stage_params(c.params_, s, c.feature_width(), c.hidden_,
                        c.update_width(), rng);
  }
  std::vector<uint8_t> blob(r.u64());
  r.raw(blob.data(), blob.size());
  c.params_.deserialize(blob);
  return c;
}

}  // namespace duomo::converter
