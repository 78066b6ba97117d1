#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "duomo/body.hpp"
#include "duomo/nn.hpp"

// Learned-optimization converter from output meshes back to body parameters:
// a cascade of three refinement networks, each turning head-aligned vertex
// residuals plus the current parameters into an additive parameter update.
namespace duomo::converter {

inline constexpr int kStages = 3;

struct ConverterConfig {
  int hidden = 256;
  int steps_per_stage = 3000;
  int batch = 64;
  float lr = 1e-3f;
  float weight_decay = 0.0f;
  uint64_t seed = 3;
  double val_fraction = 0.1;

  void validate() const;
};

class ConverterCascade {
 public:
  ConverterCascade() = default;
  ConverterCascade(const body::BodyModel& model, const ConverterConfig& cfg);

  int vertices() const { return vertices_; }
  int joints() const { return joints_; }
  int hidden() const { return hidden_; }
  uint64_t body_hash() const { return body_hash_; }

  int feature_width() const;  // V*3 residuals + flattened parameters
  int update_width() const;   // J*3 rotations + scale

  // One refinement step: residual features + current parameters -> update.
  Eigen::VectorXd run_stage(int stage, const Eigen::VectorXd& features) const;
  nn::Var run_stage_var(int stage, const nn::Var& features) const;

  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

 private:
  int vertices_ = 0, joints_ = 0, hidden_ = 0;
  uint64_t body_hash_ = 0;
  nn::ParamStore params_;

  friend ConverterCascade load_cascade(const std::string& path);
};

struct ConvertReport {
  std::vector<body::BodyParams> params;   // one per frame
  Eigen::VectorXd vertex_rms;             // final per-frame RMS error, meters
  Eigen::MatrixXd stage_vertex_rms;       // frames x (stages + 1), col 0 = init
};

// Zero-initialized parameters refined through the cascade; the rigid head
// alignment of each stage ends up in the root pose. Never throws on bad fits;
// the residuals tell the story.
ConvertReport convert(const std::vector<geom::Points>& targets,
                      const ConverterCascade& cascade,
                      const body::BodyModel& model);

struct ParamMeshPair {
  body::BodyParams params;  // zero root; body-local pose + scale
  geom::Points mesh;
};

// Gait-like parameter distribution for converter training.
std::vector<ParamMeshPair> sample_converter_pairs(int count,
                                                  const body::BodyModel& model,
                                                  uint64_t seed);

struct ConverterTrainResult {
  ConverterCascade cascade;
  // Validation mean vertex RMS after each stage; entry 0 is the zero-init
  // error. Non-increasing across stages when training succeeded.
  std::vector<double> stage_val_error;
  std::vector<double> stage_train_loss;  // final parameter-space loss per stage
};

// Stage-by-stage supervised training; throws std::runtime_error on
// divergence and std::invalid_argument on fewer than 1000 pairs.
ConverterTrainResult train_converter(const std::vector<ParamMeshPair>& pairs,
                                     const body::BodyModel& model,
                                     const ConverterConfig& cfg);

// Baseline used by tests: plain gradient descent on the vertex loss from the
// same zero init, finite-difference gradients. Returns final vertex RMS.
double optimize_params_oracle(const geom::Points& target,
                              const body::BodyModel& model, int iterations,
                              double step = 0.05);

void save_cascade(const ConverterCascade& cascade, const std::string& path);
ConverterCascade load_cascade(const std::string& path);

}  // namespace duomo::converter
