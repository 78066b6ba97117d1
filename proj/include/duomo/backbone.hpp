#pragma once

#include <optional>
#include <random>
#include <string>

#include "duomo/nn.hpp"

// The shared denoiser network: a transformer over time with per-frame
// condition concatenation, rotary relative positions, windowed attention,
// and diffusion-step / subject-height embeddings.
namespace duomo::backbone {

struct BackboneConfig {
  int layers = 8;
  int width = 512;
  int heads = 8;
  int ff_width = 2048;
  int window_radius = 60;  // frames, +-2 s at 30 FPS
  int motion_width = 0;    // per-frame noisy-motion features
  int condition_width = 0; // per-frame condition features
  int output_width = 0;    // per-frame head output
  float rope_base = 10000.0f;
  bool adaln = false;      // adaptive-norm conditioning instead of additive

  void validate() const;
};

class Denoiser {
 public:
  // Registers all parameters in `store`, named under `prefix`. The store must
  // outlive the denoiser; sharing one store across the denoiser and its
  // condition encoders gives a single optimizable/serializable unit.
  Denoiser(BackboneConfig config, nn::ParamStore& store, std::mt19937_64& rng,
           std::string prefix = "d");

  const BackboneConfig& config() const { return config_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  // Per-frame concatenation of motion and condition features followed by a
  // learned projection to model width.
  nn::Var build_input_tokens(const nn::Mat& motion,
                             const nn::Mat& condition) const;
  // Var overload keeps gradients flowing into upstream condition encoders.
  nn::Var build_input_tokens(const nn::Var& motion,
                             const nn::Var& condition) const;

  // Step embedding plus height embedding, or the learned null token when the
  // height is absent. 1 x width.
  nn::Var embed_step_and_height(int tau, std::optional<double> height) const;

  // Full forward pass; output is T x output_width. Throws on non-finite
  // activations with the offending layer in the message.
  nn::Var denoise(const nn::Mat& motion, const nn::Mat& condition, int tau,
                  std::optional<double> height) const;
  nn::Var denoise(const nn::Var& motion, const nn::Var& condition, int tau,
                  std::optional<double> height) const;

 private:
  nn::Var modulated(const nn::Var& normed, const nn::Var& emb,
                    const std::string& name) const;

  BackboneConfig config_;
  nn::ParamStore& params_;
  std::string prefix_;
};

}  // namespace duomo::backbone
