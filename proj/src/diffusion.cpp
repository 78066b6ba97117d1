#include "duomo/diffusion.hpp"

#include <cmath>
#include <stdexcept>

namespace duomo::diffusion {

double DiffusionSchedule::alpha_bar_at(int tau) const {
  if (tau < 1 || tau > steps()) {
    throw std::invalid_argument("diffusion: step out of range");
  }
  return alpha_bar(tau - 1);
}

void DiffusionSchedule::validate() const {
  if (alpha_bar.size() < 2) {
    throw std::invalid_argument("diffusion: schedule too short");
  }
  if (alpha_bar(0) <= 0.99) {
    throw std::invalid_argument("diffusion: alpha_bar(1) must exceed 0.99");
  }
  if (alpha_bar(alpha_bar.size() - 1) >= 0.01) {
    throw std::invalid_argument("diffusion: terminal alpha_bar must be < 0.01");
  }
  for (Eigen::Index i = 0; i < alpha_bar.size(); ++i) {
    const double a = alpha_bar(i);
    if (!(a > 0.0 && a <= 1.0)) {
      throw std::invalid_argument("diffusion: alpha_bar outside (0, 1]");
    }
    if (i > 0 && a >= alpha_bar(i - 1)) {
      throw std::invalid_argument("diffusion: alpha_bar not strictly decreasing");
    }
  }
}

DiffusionSchedule DiffusionSchedule::make(ScheduleFamily family, int steps) {
  DiffusionSchedule s;
  s.family = family;
  s.alpha_bar.resize(steps);
  if (family == ScheduleFamily::Cosine) {
    // Squared-cosine signal curve with a small offset, realized through
    // per-step betas clipped at 0.999 so the product stays positive.
    const double offset = 0.008;
    auto f = [&](double t) {
      const double u = (t / steps + offset) / (1.0 + offset) * M_PI / 2.0;
      return std::cos(u) * std::cos(u);
    };
    const double f0 = f(0.0);
    double prev = 1.0;
    double acc = 1.0;
    for (int tau = 1; tau <= steps; ++tau) {
      const double target = f(double(tau)) / f0;
      double beta = 1.0 - target / prev;
      beta = std::min(std::max(beta, 1e-8), 0.999);
      acc *= 1.0 - beta;
      s.alpha_bar(tau - 1) = acc;
      prev = target;
    }
  } else {
    const double beta_lo = 1e-4, beta_hi = 0.02;
    double acc = 1.0;
    for (int tau = 1; tau <= steps; ++tau) {
      const double beta =
          beta_lo + (beta_hi - beta_lo) * double(tau - 1) / double(steps - 1);
      acc *= 1.0 - beta;
      s.alpha_bar(tau - 1) = acc;
    }
  }
  s.validate();
  return s;
}

void GuidanceSpec::validate() const {
  for (const auto& t : terms) {
    if (!std::isfinite(t.weight) || t.weight < 0.0) {
      throw std::invalid_argument("guidance: weight must be finite and >= 0");
    }
    if (!t.loss) {
      throw std::invalid_argument("guidance: missing loss evaluator");
    }
  }
}

Tensor forward_noise(const DiffusionSchedule& schedule, const Tensor& x0,
                     int tau, const Tensor& noise) {
  if (noise.rows() != x0.rows() || noise.cols() != x0.cols()) {
    throw std::invalid_argument("forward_noise: shape mismatch");
  }
  const double abar = schedule.alpha_bar_at(tau);
  return std::sqrt(abar) * x0 + std::sqrt(1.0 - abar) * noise;
}

int sample_train_step(const DiffusionSchedule& schedule, std::mt19937_64& rng,
                      double estimation_mode_prob) {
  if (estimation_mode_prob < 0.0 || estimation_mode_prob > 1.0) {
    throw std::invalid_argument("sample_train_step: prob outside [0, 1]");
  }
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (coin(rng) < estimation_mode_prob) return schedule.steps();
  std::uniform_int_distribution<int> uni(1, schedule.steps());
  return uni(rng);
}

Tensor guidance_gradient(const GuidanceTerm& term, const Tensor& x0_hat) {
  Tensor g;
  if (term.grad) {
    g = term.grad(x0_hat);
    if (g.rows() != x0_hat.rows() || g.cols() != x0_hat.cols()) {
      throw std::runtime_error("guidance_gradient: gradient shape mismatch");
    }
  } else {
    const double eps = 1e-4;
    g.resize(x0_hat.rows(), x0_hat.cols());
    Tensor probe = x0_hat;
    for (Eigen::Index i = 0; i < probe.size(); ++i) {
      const double saved = probe.data()[i];
      probe.data()[i] = saved + eps;
      const double hi = term.loss(probe);
      probe.data()[i] = saved - eps;
      const double lo = term.loss(probe);
      probe.data()[i] = saved;
      g.data()[i] = (hi - lo) / (2.0 * eps);
    }
  }
  if (!g.allFinite()) {
    throw std::runtime_error("guidance_gradient: non-finite gradient");
  }
  return g;
}

Tensor ddim_sample(const Denoiser& denoiser, const DiffusionSchedule& schedule,
                   int n_steps, const GuidanceSpec& guidance,
                   std::mt19937_64& rng, Eigen::Index rows,
                   Eigen::Index cols) {
  const int total = schedule.steps();
  if (n_steps < 1 || n_steps > total) {
    throw std::invalid_argument("ddim_sample: bad step count");
  }
  guidance.validate();

  // Evenly strided subset ending at the last schedule step.
  std::vector<int> taus(static_cast<size_t>(n_steps));
  for (int i = 0; i < n_steps; ++i) {
    taus[size_t(i)] = static_cast<int>(
        std::lround(double(i + 1) * double(total) / double(n_steps)));
    taus[size_t(i)] = std::max(1, std::min(total, taus[size_t(i)]));
  }

  std::normal_distribution<double> gauss(0.0, 1.0);
  Tensor x(rows, cols);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = gauss(rng);

  for (int i = n_steps - 1; i >= 0; --i) {
    const int tau = taus[size_t(i)];
    const double abar = schedule.alpha_bar_at(tau);
    Tensor x0 = denoiser(x, tau);
    if (!x0.allFinite()) {
      throw std::runtime_error("ddim_sample: non-finite denoiser output at step " +
                               std::to_string(tau));
    }
    // Reverse-pass progress: 0 at pure noise, approaching 1 at the end.
    const double progress = double(n_steps - 1 - i) / double(n_steps);
    for (const auto& term : guidance.terms) {
      if (term.weight == 0.0) continue;
      if (progress < term.active_begin || progress > term.active_end) continue;
      x0 -= term.weight * guidance_gradient(term, x0);
    }
    const double abar_prev =
        (i == 0) ? 1.0 : schedule.alpha_bar_at(taus[size_t(i - 1)]);
    const Tensor eps_hat = (x - std::sqrt(abar) * x0) / std::sqrt(1.0 - abar);
    x = std::sqrt(abar_prev) * x0 + std::sqrt(1.0 - abar_prev) * eps_hat;
  }
  return x;
}

}  // namespace duomo::diffusion
