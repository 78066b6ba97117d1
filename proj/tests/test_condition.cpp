#include <doctest.h>

#include <random>

#include "duomo/condition.hpp"

using namespace duomo;
using namespace duomo::condition;
using nn::Mat;

namespace {

KeypointFrame random_frame(std::mt19937_64& rng, int v, double conf = 1.0) {
  std::uniform_real_distribution<double> uni(20.0, 230.0);
  KeypointFrame f;
  f.pixels.resize(v, 2);
  for (int i = 0; i < v; ++i) {
    f.pixels(i, 0) = uni(rng);
    f.pixels(i, 1) = uni(rng);
  }
  f.confidence = Eigen::VectorXd::Constant(v, conf);
  return f;
}

const geom::Intrinsics kK{200.0, 200.0, 128.0, 128.0};

}  // namespace

TEST_CASE("frame_visibility") {
  std::mt19937_64 rng(1);
  const int V = 20;
  KeypointFrame f = random_frame(rng, V, 1.0);
  CHECK(frame_visibility(f, 0.5, default_min_count(V)));

  f.confidence.setZero();
  CHECK_FALSE(frame_visibility(f, 0.5, default_min_count(V)));

  // Exactly min_count confident points: visible (inclusive).
  const int need = default_min_count(V);
  CHECK(need == 5);
  for (int i = 0; i < need; ++i) f.confidence(i) = 0.5;  // at the threshold
  CHECK(frame_visibility(f, 0.5, need));
  f.confidence(0) = 0.49;
  CHECK_FALSE(frame_visibility(f, 0.5, need));

  f.confidence(0) = 1.5;
  CHECK_THROWS_AS(frame_visibility(f, 0.5, need), std::invalid_argument);
}

TEST_CASE("combine_features") {
  std::mt19937_64 rng(2);
  nn::ParamStore store;
  const nn::Var a = store.create("a", 3, 8, 1.0f, rng);
  const nn::Var b = store.create("b", 3, 8, 1.0f, rng);

  CHECK((combine_features(a, nn::Var()).val() - a.val()).cwiseAbs().maxCoeff() ==
        0.0f);
  const nn::Var zero = nn::constant(Mat::Zero(3, 8));
  CHECK((combine_features(a, zero).val() - a.val()).cwiseAbs().maxCoeff() ==
        0.0f);
  const Mat expect = a.val() + b.val();
  CHECK((combine_features(a, b).val() - expect).cwiseAbs().maxCoeff() == 0.0f);
  CHECK((combine_features(a, b).val() - combine_features(b, a).val())
            .cwiseAbs()
            .maxCoeff() == 0.0f);
  const nn::Var wrong = nn::constant(Mat::Zero(3, 7));
  CHECK_THROWS_AS(combine_features(a, wrong), std::invalid_argument);
}

TEST_CASE("KeypointEncoder") {
  std::mt19937_64 rng(3);
  nn::ParamStore store;
  const int V = 12;
  const KeypointEncoder enc(V, 10, store, rng);

  SUBCASE("deterministic") {
    std::mt19937_64 r(4);
    const KeypointFrame f = random_frame(r, V);
    const auto a = enc.encode(f, kK);
    const auto b = enc.encode(f, kK);
    CHECK(a.cols() == 10);
    CHECK((a.val() - b.val()).cwiseAbs().maxCoeff() == 0.0f);
  }

  SUBCASE("fully masked frames ignore pixel values exactly") {
    std::mt19937_64 r(5);
    KeypointFrame f = random_frame(r, V, 0.0);
    const auto a = enc.encode(f, kK);
    f.pixels.array() += 37.0;
    const auto b = enc.encode(f, kK);
    CHECK((a.val() - b.val()).cwiseAbs().maxCoeff() == 0.0f);
    // ... and differ from an unmasked encoding.
    f.confidence.setOnes();
    const auto c = enc.encode(f, kK);
    CHECK((a.val() - c.val()).cwiseAbs().maxCoeff() > 1e-6f);
  }

  SUBCASE("per-keypoint masking ignores only the masked points") {
    std::mt19937_64 r(6);
    KeypointFrame f = random_frame(r, V, 1.0);
    f.confidence(3) = 0.2;  // below the 0.5 threshold
    const auto a = enc.encode(f, kK);
    f.pixels.row(3) << -1000.0, 1000.0;
    const auto b = enc.encode(f, kK);
    CHECK((a.val() - b.val()).cwiseAbs().maxCoeff() == 0.0f);
    f.pixels.row(4).array() += 1.0;
    const auto c = enc.encode(f, kK);
    CHECK((a.val() - c.val()).cwiseAbs().maxCoeff() > 0.0f);
  }

  SUBCASE("invariant to ray-preserving intrinsics changes") {
    std::mt19937_64 r(7);
    const KeypointFrame f = random_frame(r, V);
    const auto a = enc.encode(f, kK);
    // Double fx/fy and stretch pixel offsets from the principal point.
    geom::Intrinsics k2{2 * kK.fx, 2 * kK.fy, kK.cx, kK.cy};
    KeypointFrame f2 = f;
    for (int i = 0; i < V; ++i) {
      f2.pixels(i, 0) = kK.cx + 2.0 * (f.pixels(i, 0) - kK.cx);
      f2.pixels(i, 1) = kK.cy + 2.0 * (f.pixels(i, 1) - kK.cy);
    }
    const auto b = enc.encode(f2, k2);
    CHECK((a.val() - b.val()).cwiseAbs().maxCoeff() < 1e-6f);
  }

  SUBCASE("sequence encoding matches per-frame encoding") {
    std::mt19937_64 r(8);
    std::vector<KeypointFrame> frames = {random_frame(r, V),
                                         random_frame(r, V, 0.0),
                                         random_frame(r, V)};
    const auto seq = enc.encode_sequence(frames, {kK, kK, kK});
    REQUIRE(seq.rows() == 3);
    for (int t = 0; t < 3; ++t) {
      const auto one = enc.encode(frames[size_t(t)], kK);
      CHECK((seq.val().row(t) - one.val().row(0)).cwiseAbs().maxCoeff() <
            1e-6f);
    }
  }

  SUBCASE("gradients reach the null embedding only when masking occurs") {
    std::mt19937_64 r(9);
    const KeypointFrame full = random_frame(r, V, 1.0);
    nn::backward(nn::sum(enc.encode(full, kK)));
    CHECK(store.get("kpt.null").grad().cwiseAbs().maxCoeff() == 0.0f);
    store.zero_grads();
    const KeypointFrame masked = random_frame(r, V, 0.0);
    nn::backward(nn::sum(enc.encode(masked, kK)));
    CHECK(store.get("kpt.null").grad().cwiseAbs().maxCoeff() > 0.0f);
  }
}

TEST_CASE("LiftedMotionEncoder") {
  std::mt19937_64 rng(10);
  nn::ParamStore store;
  const int V = 8;
  const LiftedMotionEncoder enc(V, 10, store, rng);
  std::normal_distribution<double> gauss(0.0, 0.3);
  auto mesh = [&](std::mt19937_64& r) {
    geom::Points m(V, 3);
    for (int i = 0; i < m.size(); ++i) m.data()[i] = gauss(r);
    return m;
  };

  SUBCASE("invisible frames all produce the mask token") {
    std::mt19937_64 r(11);
    const auto a = enc.encode(mesh(r), geom::Vec3(1, 2, 3), false);
    const auto b = enc.encode(mesh(r), geom::Vec3(-1, 0, 9), false);
    CHECK((a.val() - b.val()).cwiseAbs().maxCoeff() == 0.0f);
    CHECK((a.val() - store.get("lift.mask").val()).cwiseAbs().maxCoeff() ==
          0.0f);
    const auto c = enc.encode(mesh(r), geom::Vec3(1, 2, 3), true);
    CHECK((a.val() - c.val()).cwiseAbs().maxCoeff() > 1e-7f);
  }

  SUBCASE("visible frames are deterministic") {
    std::mt19937_64 r(12);
    const geom::Points m = mesh(r);
    const auto a = enc.encode(m, geom::Vec3(0.1, 0.2, 0.3), true);
    const auto b = enc.encode(m, geom::Vec3(0.1, 0.2, 0.3), true);
    CHECK((a.val() - b.val()).cwiseAbs().maxCoeff() == 0.0f);
  }

  SUBCASE("invisible frames tolerate garbage data") {
    geom::Points bad(V, 3);
    bad.setConstant(std::numeric_limits<double>::quiet_NaN());
    const auto a = enc.encode(bad, geom::Vec3(0, 0, 0), false);
    CHECK(a.val().allFinite());
    CHECK_THROWS_AS(enc.encode(bad, geom::Vec3(0, 0, 0), true),
                    std::invalid_argument);
  }

  SUBCASE("directional derivative matches finite differences") {
    // Independent Jacobian: out = W2^T gelu'(z) W1^T d through the two-layer
    // map, with the tanh-form gelu derivative computed here from scratch.
    std::mt19937_64 r(13);
    const geom::Points m = mesh(r);
    const geom::Vec3 root(0.05, -0.02, 0.1);
    const int flat = V * 3 + 3;
    Eigen::VectorXd x(flat);
    for (int v = 0; v < V; ++v) x.segment<3>(3 * v) = m.row(v).transpose();
    x.tail<3>() = root;

    const Eigen::MatrixXd W1 =
        store.get("lift.W1").val().cast<double>();
    const Eigen::VectorXd b1 =
        store.get("lift.b1").val().row(0).transpose().cast<double>();
    const Eigen::MatrixXd W2 = store.get("lift.W2").val().cast<double>();
    const Eigen::VectorXd z = W1.transpose() * x + b1;
    const double kC = 0.7978845608028654;
    Eigen::VectorXd dg(z.size());
    for (int i = 0; i < z.size(); ++i) {
      const double u = kC * (z(i) + 0.044715 * std::pow(z(i), 3));
      const double t = std::tanh(u);
      const double du = kC * (1.0 + 3.0 * 0.044715 * z(i) * z(i));
      dg(i) = 0.5 * (1.0 + t) + 0.5 * z(i) * (1.0 - t * t) * du;
    }
    std::normal_distribution<double> g2(0.0, 1.0);
    Eigen::VectorXd d(flat);
    for (int i = 0; i < flat; ++i) d(i) = g2(r);
    d.normalize();
    const Eigen::VectorXd analytic =
        W2.transpose() * (dg.asDiagonal() * (W1.transpose() * d));

    const double eps = 0.05;
    auto eval = [&](double sign) {
      geom::Points mp = m;
      geom::Vec3 rp = root;
      for (int v = 0; v < V; ++v) {
        mp.row(v) += sign * eps * d.segment<3>(3 * v).transpose();
      }
      rp += sign * eps * d.tail<3>();
      return enc.encode(mp, rp, true).val().row(0).cast<double>().eval();
    };
    const Eigen::RowVectorXd fd = (eval(1.0) - eval(-1.0)) / (2.0 * eps);
    CHECK((fd.transpose() - analytic).norm() / analytic.norm() < 1e-3);
  }
}

TEST_CASE("image feature providers") {
  std::mt19937_64 rng(14);
  nn::ParamStore store;
  const int V = 12;
  const KeypointEncoder enc(V, 10, store, rng);
  const ConvImageProvider conv(10, store, rng);
  const ZeroImageProvider zero;

  SUBCASE("zero provider leaves keypoint features untouched") {
    std::mt19937_64 r(15);
    const std::vector<KeypointFrame> frames = {random_frame(r, V)};
    const auto plain = enc.encode_sequence(frames, {kK});
    const auto with_zero = enc.encode_sequence(frames, {kK}, 0.5, &zero);
    CHECK((plain.val() - with_zero.val()).cwiseAbs().maxCoeff() == 0.0f);
  }

  SUBCASE("conv provider adds trainable content") {
    std::mt19937_64 r(16);
    const std::vector<KeypointFrame> frames = {random_frame(r, V),
                                               random_frame(r, V)};
    const auto plain = enc.encode_sequence(frames, {kK, kK});
    const auto with_img = enc.encode_sequence(frames, {kK, kK}, 0.5, &conv);
    CHECK(with_img.val().allFinite());
    CHECK((plain.val() - with_img.val()).cwiseAbs().maxCoeff() > 0.0f);

    // Summation contract: with_img = plain + per-frame conv features.
    for (int t = 0; t < 2; ++t) {
      const auto f = conv.features(frames[size_t(t)], kK);
      CHECK((with_img.val().row(t) - plain.val().row(t) - f.val().row(0))
                .cwiseAbs()
                .maxCoeff() < 1e-6f);
    }

    nn::backward(nn::sum(with_img));
    CHECK(store.get("img.conv.W").grad().cwiseAbs().maxCoeff() > 0.0f);
  }
}
