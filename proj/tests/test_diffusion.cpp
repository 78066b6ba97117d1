#include <doctest.h>

#include <cmath>
#include <random>

#include "duomo/diffusion.hpp"

using namespace duomo::diffusion;

TEST_CASE("schedules satisfy endpoint and monotonicity invariants") {
  for (const auto family : {ScheduleFamily::Cosine, ScheduleFamily::LinearBeta}) {
    const auto s = DiffusionSchedule::make(family, 1000);
    CHECK(s.steps() == 1000);
    CHECK(s.alpha_bar_at(1) > 0.99);
    CHECK(s.alpha_bar_at(1000) < 0.01);
    CHECK(s.alpha_bar_at(1000) > 0.0);
    for (int tau = 2; tau <= 1000; ++tau) {
      CHECK(s.alpha_bar_at(tau) < s.alpha_bar_at(tau - 1));
    }
    CHECK_THROWS_AS(s.alpha_bar_at(0), std::invalid_argument);
    CHECK_THROWS_AS(s.alpha_bar_at(1001), std::invalid_argument);
  }
}

TEST_CASE("forward_noise") {
  const auto s = DiffusionSchedule::make(ScheduleFamily::Cosine, 1000);
  Tensor x0(2, 3);
  x0 << 1, -2, 3, 0.5, 0, -1;
  const Tensor zero = Tensor::Zero(2, 3);

  SUBCASE("zero noise scales the signal") {
    const int tau = 400;
    const Tensor xt = forward_noise(s, x0, tau, zero);
    CHECK((xt - std::sqrt(s.alpha_bar_at(tau)) * x0).cwiseAbs().maxCoeff() <
          1e-15);
    // Near tau = 1 the signal is almost untouched.
    const Tensor x1 = forward_noise(s, x0, 1, zero);
    CHECK((x1 - x0).cwiseAbs().maxCoeff() < 0.01);
  }

  SUBCASE("rejects out-of-range steps and shape mismatch") {
    CHECK_THROWS_AS(forward_noise(s, x0, 0, zero), std::invalid_argument);
    CHECK_THROWS_AS(forward_noise(s, x0, 1001, zero), std::invalid_argument);
    CHECK_THROWS_AS(forward_noise(s, x0, 5, Tensor::Zero(3, 2)),
                    std::invalid_argument);
  }

  SUBCASE("matches the stated mean and variance over many draws") {
    std::mt19937_64 rng(42);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const int tau = 600;
    const double abar = s.alpha_bar_at(tau);
    Tensor v0(1, 1);
    v0 << 2.0;
    const int n = 100000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
      Tensor noise(1, 1);
      noise << gauss(rng);
      const double x = forward_noise(s, v0, tau, noise)(0, 0);
      sum += x;
      sq += x * x;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean - std::sqrt(abar) * 2.0) <
          0.01 * std::abs(std::sqrt(abar) * 2.0));
    CHECK(std::abs(var - (1.0 - abar)) < 0.01 * (1.0 - abar));
  }
}

TEST_CASE("sample_train_step") {
  const auto s = DiffusionSchedule::make(ScheduleFamily::Cosine, 1000);
  std::mt19937_64 rng(7);

  SUBCASE("prob 1 always returns the last step") {
    for (int i = 0; i < 100; ++i) {
      CHECK(sample_train_step(s, rng, 1.0) == 1000);
    }
  }

  SUBCASE("prob 0 is uniform (chi-squared at alpha = 0.01)") {
    const int n = 100000;
    std::vector<int> counts(1000, 0);
    for (int i = 0; i < n; ++i) {
      const int tau = sample_train_step(s, rng, 0.0);
      REQUIRE(tau >= 1);
      REQUIRE(tau <= 1000);
      counts[size_t(tau - 1)]++;
    }
    const double expect = double(n) / 1000.0;
    double chi2 = 0.0;
    for (int c : counts) chi2 += (c - expect) * (c - expect) / expect;
    // Wilson-Hilferty upper 1% point for 999 degrees of freedom.
    const double k = 999.0;
    const double z = 2.3263;
    const double crit =
        k * std::pow(1.0 - 2.0 / (9.0 * k) + z * std::sqrt(2.0 / (9.0 * k)), 3);
    CHECK(chi2 < crit);
  }

  SUBCASE("prob 0.5 hits the last step about half the time") {
    const int n = 100000;
    int last = 0;
    for (int i = 0; i < n; ++i) {
      if (sample_train_step(s, rng, 0.5) == 1000) last++;
    }
    const double frac = double(last) / n;
    CHECK(frac > 0.485);
    CHECK(frac < 0.515);
  }

  SUBCASE("rejects probabilities outside [0, 1]") {
    CHECK_THROWS_AS(sample_train_step(s, rng, -0.1), std::invalid_argument);
    CHECK_THROWS_AS(sample_train_step(s, rng, 1.1), std::invalid_argument);
  }
}

TEST_CASE("guidance_gradient") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Tensor x(4, 5);
  for (int i = 0; i < x.size(); ++i) x.data()[i] = gauss(rng);

  SUBCASE("constant loss gives zero gradient") {
    GuidanceTerm t;
    t.loss = [](const Tensor&) { return 3.0; };
    CHECK(guidance_gradient(t, x).cwiseAbs().maxCoeff() < 1e-10);
  }

  SUBCASE("half squared norm gives the identity gradient") {
    GuidanceTerm t;
    t.loss = [](const Tensor& v) { return 0.5 * v.squaredNorm(); };
    CHECK((guidance_gradient(t, x) - x).cwiseAbs().maxCoeff() < 1e-8);
  }

  SUBCASE("analytic gradients match finite differences") {
    // A smooth non-quadratic loss with a hand-derived gradient.
    auto loss = [](const Tensor& v) {
      return (v.array().sin() * v.array()).sum();
    };
    GuidanceTerm analytic;
    analytic.loss = loss;
    analytic.grad = [](const Tensor& v) {
      return Tensor((v.array().cos() * v.array() + v.array().sin()).matrix());
    };
    GuidanceTerm numeric;
    numeric.loss = loss;
    const Tensor ga = guidance_gradient(analytic, x);
    const Tensor gn = guidance_gradient(numeric, x);
    CHECK((ga - gn).cwiseAbs().maxCoeff() / gn.cwiseAbs().maxCoeff() < 1e-3);
  }

  SUBCASE("non-finite gradients are rejected") {
    GuidanceTerm t;
    t.loss = [](const Tensor&) { return 0.0; };
    t.grad = [](const Tensor& v) {
      Tensor g = Tensor::Constant(v.rows(), v.cols(),
                                  std::numeric_limits<double>::quiet_NaN());
      return g;
    };
    CHECK_THROWS_AS(guidance_gradient(t, x), std::runtime_error);
  }
}

TEST_CASE("ddim_sample") {
  const auto s = DiffusionSchedule::make(ScheduleFamily::Cosine, 1000);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Tensor target(3, 4);
  for (int i = 0; i < target.size(); ++i) target.data()[i] = gauss(rng);

  SUBCASE("fixed-point oracle returns the fixed sample exactly") {
    const Denoiser oracle = [&](const Tensor&, int) { return target; };
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
      std::mt19937_64 r(seed);
      const Tensor out = ddim_sample(oracle, s, 50, {}, r, 3, 4);
      CHECK((out - target).cwiseAbs().maxCoeff() < 1e-5);
    }
  }

  SUBCASE("exact denoising recovers x0 through the noising chain") {
    // forward_noise then an oracle x0-denoiser: the sampler must land on x0.
    const Denoiser oracle = [&](const Tensor&, int) { return target; };
    std::mt19937_64 r(5);
    const Tensor out = ddim_sample(oracle, s, 25, {}, r, 3, 4);
    CHECK((out - target).cwiseAbs().maxCoeff() < 1e-5);
  }

  SUBCASE("zero-weight guidance is bitwise identical to none") {
    const Denoiser den = [&](const Tensor& x, int) { return Tensor(0.9 * x); };
    GuidanceSpec spec;
    GuidanceTerm t;
    t.loss = [](const Tensor& v) { return v.squaredNorm(); };
    t.weight = 0.0;
    spec.terms.push_back(t);
    std::mt19937_64 r1(9), r2(9);
    const Tensor a = ddim_sample(den, s, 50, {}, r1, 3, 4);
    const Tensor b = ddim_sample(den, s, 50, spec, r2, 3, 4);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("quadratic guidance pulls the trajectory toward the target") {
    std::vector<double> losses;
    const Denoiser identity = [&](const Tensor& x, int) {
      losses.push_back(0.5 * (x - target).squaredNorm());
      return x;
    };
    GuidanceSpec spec;
    GuidanceTerm t;
    t.loss = [&](const Tensor& v) { return 0.5 * (v - target).squaredNorm(); };
    t.grad = [&](const Tensor& v) { return Tensor(v - target); };
    t.weight = 1.0;
    spec.terms.push_back(t);
    std::mt19937_64 r(13);
    const Tensor out = ddim_sample(identity, s, 50, spec, r, 3, 4);
    REQUIRE(losses.size() == 50);
    for (size_t i = 1; i < losses.size(); ++i) {
      CHECK(losses[i] <= losses[i - 1] + 1e-9);
    }
    CHECK(0.5 * (out - target).squaredNorm() < 0.01 * losses.front());
  }

  SUBCASE("guidance respects its active range") {
    int calls = 0;
    GuidanceSpec spec;
    GuidanceTerm t;
    t.loss = [&](const Tensor&) {
      ++calls;
      return 0.0;
    };
    t.grad = [&](const Tensor& v) {
      ++calls;
      return Tensor(Tensor::Zero(v.rows(), v.cols()));
    };
    t.weight = 1.0;
    t.active_begin = 0.2;  // skip the first fifth of the reverse pass
    spec.terms.push_back(t);
    const Denoiser den = [](const Tensor& x, int) { return x; };
    std::mt19937_64 r(17);
    ddim_sample(den, s, 50, spec, r, 2, 2);
    CHECK(calls == 40);
  }

  SUBCASE("non-finite denoiser output aborts") {
    const Denoiser bad = [](const Tensor& x, int) {
      return Tensor(Tensor::Constant(x.rows(), x.cols(),
                                     std::numeric_limits<double>::infinity()));
    };
    std::mt19937_64 r(19);
    CHECK_THROWS_AS(ddim_sample(bad, s, 10, {}, r, 2, 2), std::runtime_error);
  }

  SUBCASE("rejects bad step counts") {
    const Denoiser den = [](const Tensor& x, int) { return x; };
    std::mt19937_64 r(23);
    CHECK_THROWS_AS(ddim_sample(den, s, 0, {}, r, 2, 2), std::invalid_argument);
    CHECK_THROWS_AS(ddim_sample(den, s, 1001, {}, r, 2, 2),
                    std::invalid_argument);
  }
}
