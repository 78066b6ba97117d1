#pragma once

#include <Eigen/Core>
#include <functional>
#include <random>
#include <vector>

// Denoising-diffusion machinery: noise schedule, forward corruption, training
// step sampling, and a deterministic DDIM sampler with x0-guidance. Works on
// generic T x D tensors in double; the network boundary casts to float.
namespace duomo::diffusion {

using Tensor = Eigen::MatrixXd;

enum class ScheduleFamily { Cosine, LinearBeta };

struct DiffusionSchedule {
  ScheduleFamily family = ScheduleFamily::Cosine;
  Eigen::VectorXd alpha_bar;  // index tau-1, strictly decreasing in (0,1]

  int steps() const { return static_cast<int>(alpha_bar.size()); }
  double alpha_bar_at(int tau) const;  // validates 1 <= tau <= steps()
  void validate() const;

  static DiffusionSchedule make(ScheduleFamily family, int steps = 1000);
};

// One x0-guidance term: a loss over the predicted clean sample, an optional
// analytic gradient (finite differences otherwise), a weight, and the span of
// the reverse trajectory it is active on (0 = pure noise, 1 = final step).
struct GuidanceTerm {
  std::function<double(const Tensor&)> loss;
  std::function<Tensor(const Tensor&)> grad;
  double weight = 0.0;
  double active_begin = 0.0;
  double active_end = 1.0;
};

struct GuidanceSpec {
  std::vector<GuidanceTerm> terms;
  void validate() const;
};

// x_tau = sqrt(abar) x0 + sqrt(1 - abar) noise.
Tensor forward_noise(const DiffusionSchedule& schedule, const Tensor& x0,
                     int tau, const Tensor& noise);

// With probability `estimation_mode_prob` returns the last step exactly
// (estimation mode: the model sees pure noise); otherwise uniform over all
// steps.
int sample_train_step(const DiffusionSchedule& schedule, std::mt19937_64& rng,
                      double estimation_mode_prob = 0.5);

// Gradient of a guidance term at x0_hat: analytic if provided, otherwise
// central finite differences with step 1e-4. Throws on non-finite output.
Tensor guidance_gradient(const GuidanceTerm& term, const Tensor& x0_hat);

// The denoiser predicts the clean sample from (x_tau, tau). Conditions are
// baked into the callable.
using Denoiser = std::function<Tensor(const Tensor& x_tau, int tau)>;

// Deterministic (eta = 0) DDIM over `n_steps` evenly strided steps, starting
// from standard normal noise drawn from `rng`. Before each update the
// predicted x0 is nudged by active guidance terms; gradients never flow
// through the denoiser.
Tensor ddim_sample(const Denoiser& denoiser, const DiffusionSchedule& schedule,
                   int n_steps, const GuidanceSpec& guidance,
                   std::mt19937_64& rng, Eigen::Index rows,
                   Eigen::Index cols);

}  // namespace duomo::diffusion
