#include "duomo/backbone.hpp"

#include <cmath>
#include <stdexcept>

namespace duomo::backbone {

using nn::Mat;
using nn::Var;

void BackboneConfig::validate() const {
  if (layers < 1) throw std::invalid_argument("backbone: layers < 1");
  if (heads < 1 || width % heads != 0 || (width / heads) % 2 != 0) {
    throw std::invalid_argument(
        "backbone: width must split into heads of even size");
  }
  if (window_radius < 1) {
    throw std::invalid_argument("backbone: window radius < 1");
  }
  if (motion_width < 1 || output_width < 1 || condition_width < 0 ||
      ff_width < 1) {
    throw std::invalid_argument("backbone: bad feature widths");
  }
}

Denoiser::Denoiser(BackboneConfig config, nn::ParamStore& store,
                   std::mt19937_64& rng, std::string prefix)
    : config_(config), params_(store), prefix_(std::move(prefix)) {
  config_.validate();
  const int w = config_.width;
  const float std_in = 0.02f;
  auto mk = [&](const std::string& name, int rows, int cols, float sd) {
    params_.create(prefix_ + "." + name, rows, cols, sd, rng);
  };
  auto ones = [&](const std::string& name, int cols) {
    params_.create_ones(prefix_ + "." + name, 1, cols);
  };

  mk("in.W", config_.motion_width + config_.condition_width, w, std_in);
  mk("in.b", 1, w, 0.0f);

  mk("step.W1", w, w, std_in);
  mk("step.b1", 1, w, 0.0f);
  mk("step.W2", w, w, std_in);
  mk("step.b2", 1, w, 0.0f);
  mk("height.W1", 1, w, std_in);
  mk("height.b1", 1, w, 0.0f);
  mk("height.W2", w, w, std_in);
  mk("height.b2", 1, w, 0.0f);
  mk("height.null", 1, w, std_in);

  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = "L" + std::to_string(l) + ".";
    ones(p + "ln1.g", w);
    mk(p + "ln1.b", 1, w, 0.0f);
    mk(p + "Wq", w, w, std_in);
    mk(p + "Wk", w, w, std_in);
    mk(p + "Wv", w, w, std_in);
    mk(p + "Wo", w, w, std_in);
    ones(p + "ln2.g", w);
    mk(p + "ln2.b", 1, w, 0.0f);
    mk(p + "ff.W1", w, config_.ff_width, std_in);
    mk(p + "ff.b1", 1, config_.ff_width, 0.0f);
    mk(p + "ff.W2", config_.ff_width, w, std_in);
    mk(p + "ff.b2", 1, w, 0.0f);
    if (config_.adaln) {
      mk(p + "mod1.W", w, 2 * w, 0.0f);  // zero-init: starts as plain norm
      mk(p + "mod2.W", w, 2 * w, 0.0f);
    }
  }
  ones("lnf.g", w);
  mk("lnf.b", 1, w, 0.0f);
  mk("out.W", w, config_.output_width, std_in);
  mk("out.b", 1, config_.output_width, 0.0f);
}

Var Denoiser::build_input_tokens(const Mat& motion,
                                 const Mat& condition) const {
  return build_input_tokens(nn::constant(motion), nn::constant(condition));
}

Var Denoiser::build_input_tokens(const Var& motion,
                                 const Var& condition) const {
  if (motion.rows() != condition.rows()) {
    throw std::invalid_argument("backbone: motion/condition length mismatch");
  }
  if (motion.cols() != config_.motion_width ||
      condition.cols() != config_.condition_width) {
    throw std::invalid_argument("backbone: feature width mismatch");
  }
  auto g = [&](const char* n) { return params_.get(prefix_ + "." + n); };
  return nn::add_rowvec(
      nn::matmul(nn::concat_cols({motion, condition}), g("in.W")), g("in.b"));
}

Var Denoiser::embed_step_and_height(int tau,
                                    std::optional<double> height) const {
  if (tau < 1) throw std::invalid_argument("backbone: step out of range");
  auto g = [&](const std::string& n) { return params_.get(prefix_ + "." + n); };

  Mat sin_emb = nn::sinusoidal_embedding(double(tau), config_.width);
  Var step = nn::add_rowvec(
      nn::matmul(
          nn::gelu(nn::add_rowvec(
              nn::matmul(nn::constant(std::move(sin_emb)), g("step.W1")),
              g("step.b1"))),
          g("step.W2")),
      g("step.b2"));

  Var h;
  if (height.has_value()) {
    if (!(*height > 0.0)) {
      throw std::invalid_argument("backbone: height must be positive");
    }
    Mat hv(1, 1);
    hv(0, 0) = static_cast<float>(*height);
    h = nn::add_rowvec(
        nn::matmul(nn::gelu(nn::add_rowvec(
                       nn::matmul(nn::constant(std::move(hv)), g("height.W1")),
                       g("height.b1"))),
                   g("height.W2")),
        g("height.b2"));
  } else {
    h = g("height.null");
  }
  return nn::add(step, h);
}

Var Denoiser::modulated(const Var& normed, const Var& emb,
                        const std::string& name) const {
  // adaLN: out = normed .* (1 + s) + b, with [s | b] a learned map of the
  // conditioning embedding, broadcast over frames.
  const Var mod = nn::matmul(emb, params_.get(prefix_ + "." + name));
  const Var s = nn::slice_cols(mod, 0, config_.width);
  const Var b = nn::slice_cols(mod, config_.width, config_.width);
  const Mat ones_col = Mat::Ones(normed.rows(), 1);
  const Var s_rows = nn::matmul(nn::constant(ones_col), s);
  const Var b_rows = nn::matmul(nn::constant(ones_col), b);
  return nn::add(nn::add(normed, nn::hadamard(normed, s_rows)), b_rows);
}

Var Denoiser::denoise(const Mat& motion, const Mat& condition, int tau,
                      std::optional<double> height) const {
  return denoise(nn::constant(motion), nn::constant(condition), tau, height);
}

Var Denoiser::denoise(const Var& motion, const Var& condition, int tau,
                      std::optional<double> height) const {
  auto g = [&](const std::string& n) { return params_.get(prefix_ + "." + n); };
  Var x = build_input_tokens(motion, condition);
  const Var emb = embed_step_and_height(tau, height);
  if (!config_.adaln) {
    x = nn::add_rowvec(x, emb);
  }
  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = "L" + std::to_string(l) + ".";
    Var h = nn::layer_norm(x, g(p + "ln1.g"), g(p + "ln1.b"));
    if (config_.adaln) h = modulated(h, emb, p + "mod1.W");
    const Var q = nn::matmul(h, g(p + "Wq"));
    const Var k = nn::matmul(h, g(p + "Wk"));
    const Var v = nn::matmul(h, g(p + "Wv"));
    const Var att = nn::rope_windowed_attention(
        q, k, v, config_.heads, config_.window_radius, config_.rope_base);
    x = nn::add(x, nn::matmul(att, g(p + "Wo")));

    Var h2 = nn::layer_norm(x, g(p + "ln2.g"), g(p + "ln2.b"));
    if (config_.adaln) h2 = modulated(h2, emb, p + "mod2.W");
    const Var ff = nn::matmul(
        nn::gelu(nn::add_rowvec(nn::matmul(h2, g(p + "ff.W1")),
                                g(p + "ff.b1"))),
        g(p + "ff.W2"));
    x = nn::add(x, nn::add_rowvec(ff, g(p + "ff.b2")));
    if (!x.val().allFinite()) {
      throw std::runtime_error("backbone: non-finite activations after layer " +
                               std::to_string(l));
    }
  }
  const Var out = nn::add_rowvec(
      nn::matmul(nn::layer_norm(x, g("lnf.g"), g("lnf.b")), g("out.W")),
      g("out.b"));
  if (!out.val().allFinite()) {
    throw std::runtime_error("backbone: non-finite output head");
  }
  return out;
}

}  // namespace duomo::backbone
