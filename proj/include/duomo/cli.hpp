#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "duomo/ablation.hpp"
#include "duomo/converter.hpp"
#include "duomo/guidance.hpp"
#include "duomo/metrics.hpp"
#include "duomo/synth.hpp"
#include "duomo/training.hpp"

// Command-line surface: the strict-schema run configuration, the motion and
// report file formats, and the subcommand dispatcher.
namespace duomo::cli {

// Flat configuration tree covering every stage. Serialized as "key = value"
// lines; parsing starts from defaults and rejects unknown keys.
struct RunConfig {
  int body_vertices = 96;

  synth::DatasetSpec synth;

  int diffusion_steps = 1000;
  int ddim_steps = 50;

  backbone::BackboneConfig backbone;  // layers/width/heads/ff/radius/rope

  // Shared by both training loops; world_steps applies to the second stage.
  int train_steps = 2000;
  int world_steps = 2000;
  int batch = 8;
  int window = 48;
  double lr = 1e-4;
  double weight_decay = 0.01;
  bool cosine_lr_decay = true;
  double estimation_mode_prob = 0.5;
  double height_dropout = 0.5;
  int condition_width = 64;
  double conf_thresh = 0.5;
  bool image_features = false;
  int val_every = 200;
  int val_sequences = 4;
  int log_every = 50;
  int cond_ddim_steps = 4;
  uint64_t train_seed = 1;  // seed baked into the training config hash

  guidance::GuidanceOptions guidance;  // ddim_steps field is ignored here

  int metrics_segment_len = 100;
  metrics::RteNorm rte_norm = metrics::RteNorm::PathLength;

  std::vector<double> ablate_sigmas = {0.0, 0.005, 0.01, 0.02, 0.04};
  int ablate_trials = 10;
  int ablate_max_sequences = 0;

  converter::ConverterConfig convert;
  int convert_pairs = 1200;

  RunConfig() {
    backbone.layers = 2;
    backbone.width = 64;
    backbone.heads = 4;
    backbone.ff_width = 128;
    backbone.window_radius = 16;
  }

  void validate() const;

  training::TrainConfig train_config(training::ModelKind kind,
                                     uint64_t seed) const;
  guidance::GuidanceOptions guidance_options() const;
  metrics::EvalConfig eval_config() const;
  ablation::AblationConfig ablation_config(uint64_t seed) const;
};

// Canonical text form: every key, declaration order, full precision.
std::string config_to_text(const RunConfig& cfg);
// Strict parse on top of defaults; unknown keys, bad values, and malformed
// lines raise std::invalid_argument naming the offender.
RunConfig parse_config(const std::string& text);
uint64_t config_hash(const RunConfig& cfg);

// Versioned motion container: one sequence plus per-frame visibility.
struct MotionFile {
  uint64_t body_hash = 0;
  motion::MotionSequence seq;
  std::vector<bool> visibility;  // empty = all visible
};

void save_motion(const MotionFile& m, const std::string& path);
MotionFile load_motion(const std::string& path);

// Plain-text report format; parse(serialize(r)) is lossless.
std::string report_to_text(const metrics::EvalReport& rep);
metrics::EvalReport parse_report(const std::string& text);

// Minimal static line chart (one polyline per labeled series).
struct PlotSeries {
  std::string label;
  std::vector<double> x, y;
};
std::string render_svg_chart(const std::string& title,
                             const std::vector<PlotSeries>& series);

// Subcommand dispatcher; args exclude the program name. Returns 0 on
// success, 1 on validation/usage errors, 2 on runtime failure.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out,
                 std::ostream& err);

}  // namespace duomo::cli
