#include "duomo/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "duomo/io.hpp"

namespace duomo::cli {

namespace fs = std::filesystem;

namespace {

// ---- value formatting / parsing ------------------------------------------

std::string fmt_double(double v) {
  // Shortest representation that round-trips.
  for (int prec = 1; prec <= 17; ++prec) {
    std::ostringstream os;
    os << std::setprecision(prec) << v;
    if (std::stod(os.str()) == v) return os.str();
  }
  return std::to_string(v);
}

double parse_double(const std::string& s) {
  size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("trailing characters");
  return v;
}

int parse_int(const std::string& s) {
  size_t used = 0;
  const long v = std::stol(s, &used);
  if (used != s.size()) throw std::invalid_argument("trailing characters");
  return static_cast<int>(v);
}

uint64_t parse_u64(const std::string& s) {
  size_t used = 0;
  const unsigned long long v = std::stoull(s, &used);
  if (used != s.size()) throw std::invalid_argument("trailing characters");
  return v;
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument("expected true/false");
}

std::string fmt_sigmas(const std::vector<double>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += fmt_double(v[i]);
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<double> parse_sigmas(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw std::invalid_argument("empty list entry");
    out.push_back(parse_double(item));
  }
  return out;
}

// ---- config schema ---------------------------------------------------------

struct Key {
  const char* name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

const std::vector<Key>& schema() {
  auto ikey = [](const char* n, int RunConfig::* f) {
    return Key{n, [f](const RunConfig& c) { return std::to_string(c.*f); },
               [f](RunConfig& c, const std::string& v) { c.*f = parse_int(v); }};
  };
  auto dkey = [](const char* n, double RunConfig::* f) {
    return Key{n, [f](const RunConfig& c) { return fmt_double(c.*f); },
               [f](RunConfig& c, const std::string& v) {
                 c.*f = parse_double(v);
               }};
  };
  auto bkey = [](const char* n, bool RunConfig::* f) {
    return Key{n,
               [f](const RunConfig& c) { return c.*f ? "true" : "false"; },
               [f](RunConfig& c, const std::string& v) {
                 c.*f = parse_bool(v);
               }};
  };

  static const std::vector<Key> keys = {
      ikey("body.vertices", &RunConfig::body_vertices),

      {"synth.train",
       [](const RunConfig& c) { return std::to_string(c.synth.train); },
       [](RunConfig& c, const std::string& v) { c.synth.train = parse_int(v); }},
      {"synth.val",
       [](const RunConfig& c) { return std::to_string(c.synth.val); },
       [](RunConfig& c, const std::string& v) { c.synth.val = parse_int(v); }},
      {"synth.test",
       [](const RunConfig& c) { return std::to_string(c.synth.test); },
       [](RunConfig& c, const std::string& v) { c.synth.test = parse_int(v); }},
      {"synth.master_seed",
       [](const RunConfig& c) { return std::to_string(c.synth.master_seed); },
       [](RunConfig& c, const std::string& v) {
         c.synth.master_seed = parse_u64(v);
       }},
      {"synth.min_duration_s",
       [](const RunConfig& c) { return fmt_double(c.synth.min_duration_s); },
       [](RunConfig& c, const std::string& v) {
         c.synth.min_duration_s = parse_double(v);
       }},
      {"synth.max_duration_s",
       [](const RunConfig& c) { return fmt_double(c.synth.max_duration_s); },
       [](RunConfig& c, const std::string& v) {
         c.synth.max_duration_s = parse_double(v);
       }},
      {"synth.fps", [](const RunConfig& c) { return fmt_double(c.synth.fps); },
       [](RunConfig& c, const std::string& v) {
         c.synth.fps = parse_double(v);
       }},
      {"synth.occlusion_prob",
       [](const RunConfig& c) { return fmt_double(c.synth.occlusion_prob); },
       [](RunConfig& c, const std::string& v) {
         c.synth.occlusion_prob = parse_double(v);
       }},
      {"synth.point_noise_std",
       [](const RunConfig& c) {
         return fmt_double(c.synth.augment.point_noise_std);
       },
       [](RunConfig& c, const std::string& v) {
         c.synth.augment.point_noise_std = parse_double(v);
       }},
      {"synth.point_mask_prob",
       [](const RunConfig& c) {
         return fmt_double(c.synth.augment.point_mask_prob);
       },
       [](RunConfig& c, const std::string& v) {
         c.synth.augment.point_mask_prob = parse_double(v);
       }},
      {"synth.part_perturb_std",
       [](const RunConfig& c) {
         return fmt_double(c.synth.augment.part_perturb_std);
       },
       [](RunConfig& c, const std::string& v) {
         c.synth.augment.part_perturb_std = parse_double(v);
       }},
      {"synth.part_mask_prob",
       [](const RunConfig& c) {
         return fmt_double(c.synth.augment.part_mask_prob);
       },
       [](RunConfig& c, const std::string& v) {
         c.synth.augment.part_mask_prob = parse_double(v);
       }},

      ikey("diffusion.steps", &RunConfig::diffusion_steps),
      {"diffusion.schedule",
       [](const RunConfig&) { return std::string("cosine"); },
       [](RunConfig&, const std::string& v) {
         if (v != "cosine") throw std::invalid_argument("unknown schedule");
       }},
      ikey("diffusion.ddim_steps", &RunConfig::ddim_steps),

      {"backbone.layers",
       [](const RunConfig& c) { return std::to_string(c.backbone.layers); },
       [](RunConfig& c, const std::string& v) {
         c.backbone.layers = parse_int(v);
       }},
      {"backbone.width",
       [](const RunConfig& c) { return std::to_string(c.backbone.width); },
       [](RunConfig& c, const std::string& v) {
         c.backbone.width = parse_int(v);
       }},
      {"backbone.heads",
       [](const RunConfig& c) { return std::to_string(c.backbone.heads); },
       [](RunConfig& c, const std::string& v) {
         c.backbone.heads = parse_int(v);
       }},
      {"backbone.ff_width",
       [](const RunConfig& c) { return std::to_string(c.backbone.ff_width); },
       [](RunConfig& c, const std::string& v) {
         c.backbone.ff_width = parse_int(v);
       }},
      {"backbone.window_radius",
       [](const RunConfig& c) {
         return std::to_string(c.backbone.window_radius);
       },
       [](RunConfig& c, const std::string& v) {
         c.backbone.window_radius = parse_int(v);
       }},
      {"backbone.rope_base",
       [](const RunConfig& c) { return fmt_double(c.backbone.rope_base); },
       [](RunConfig& c, const std::string& v) {
         c.backbone.rope_base = parse_double(v);
       }},

      ikey("training.steps", &RunConfig::train_steps),
      ikey("training.world_steps", &RunConfig::world_steps),
      ikey("training.batch", &RunConfig::batch),
      ikey("training.window", &RunConfig::window),
      dkey("training.lr", &RunConfig::lr),
      dkey("training.weight_decay", &RunConfig::weight_decay),
      bkey("training.cosine_lr_decay", &RunConfig::cosine_lr_decay),
      dkey("training.estimation_mode_prob", &RunConfig::estimation_mode_prob),
      dkey("training.height_dropout", &RunConfig::height_dropout),
      ikey("training.condition_width", &RunConfig::condition_width),
      dkey("training.conf_thresh", &RunConfig::conf_thresh),
      bkey("training.image_features", &RunConfig::image_features),
      ikey("training.val_every", &RunConfig::val_every),
      ikey("training.val_sequences", &RunConfig::val_sequences),
      ikey("training.log_every", &RunConfig::log_every),
      ikey("training.cond_ddim_steps", &RunConfig::cond_ddim_steps),
      {"training.seed",
       [](const RunConfig& c) { return std::to_string(c.train_seed); },
       [](RunConfig& c, const std::string& v) { c.train_seed = parse_u64(v); }},

      {"guidance.reprojection",
       [](const RunConfig& c) {
         return std::string(c.guidance.reprojection ? "true" : "false");
       },
       [](RunConfig& c, const std::string& v) {
         c.guidance.reprojection = parse_bool(v);
       }},
      {"guidance.displacement",
       [](const RunConfig& c) {
         return std::string(c.guidance.displacement ? "true" : "false");
       },
       [](RunConfig& c, const std::string& v) {
         c.guidance.displacement = parse_bool(v);
       }},
      {"guidance.reprojection_weight",
       [](const RunConfig& c) {
         return fmt_double(c.guidance.reprojection_weight);
       },
       [](RunConfig& c, const std::string& v) {
         c.guidance.reprojection_weight = parse_double(v);
       }},
      {"guidance.displacement_weight",
       [](const RunConfig& c) {
         return fmt_double(c.guidance.displacement_weight);
       },
       [](RunConfig& c, const std::string& v) {
         c.guidance.displacement_weight = parse_double(v);
       }},
      {"guidance.active_begin",
       [](const RunConfig& c) { return fmt_double(c.guidance.active_begin); },
       [](RunConfig& c, const std::string& v) {
         c.guidance.active_begin = parse_double(v);
       }},
      {"guidance.min_gap_seconds",
       [](const RunConfig& c) {
         return fmt_double(c.guidance.min_gap_seconds);
       },
       [](RunConfig& c, const std::string& v) {
         c.guidance.min_gap_seconds = parse_double(v);
       }},
      {"guidance.average_anchors",
       [](const RunConfig& c) {
         return std::string(c.guidance.average_anchors ? "true" : "false");
       },
       [](RunConfig& c, const std::string& v) {
         c.guidance.average_anchors = parse_bool(v);
       }},

      ikey("metrics.segment_len", &RunConfig::metrics_segment_len),
      {"metrics.rte_norm",
       [](const RunConfig& c) {
         return std::string(c.rte_norm == metrics::RteNorm::PathLength
                                ? "path"
                                : "final");
       },
       [](RunConfig& c, const std::string& v) {
         if (v == "path") {
           c.rte_norm = metrics::RteNorm::PathLength;
         } else if (v == "final") {
           c.rte_norm = metrics::RteNorm::FinalDisplacement;
         } else {
           throw std::invalid_argument("expected path|final");
         }
       }},

      {"ablate.sigmas",
       [](const RunConfig& c) { return fmt_sigmas(c.ablate_sigmas); },
       [](RunConfig& c, const std::string& v) {
         c.ablate_sigmas = parse_sigmas(v);
       }},
      ikey("ablate.trials", &RunConfig::ablate_trials),
      ikey("ablate.max_sequences", &RunConfig::ablate_max_sequences),

      {"convert.hidden",
       [](const RunConfig& c) { return std::to_string(c.convert.hidden); },
       [](RunConfig& c, const std::string& v) {
         c.convert.hidden = parse_int(v);
       }},
      {"convert.steps_per_stage",
       [](const RunConfig& c) {
         return std::to_string(c.convert.steps_per_stage);
       },
       [](RunConfig& c, const std::string& v) {
         c.convert.steps_per_stage = parse_int(v);
       }},
      {"convert.batch",
       [](const RunConfig& c) { return std::to_string(c.convert.batch); },
       [](RunConfig& c, const std::string& v) {
         c.convert.batch = parse_int(v);
       }},
      {"convert.lr",
       [](const RunConfig& c) { return fmt_double(double(c.convert.lr)); },
       [](RunConfig& c, const std::string& v) {
         c.convert.lr = float(parse_double(v));
       }},
      ikey("convert.pairs", &RunConfig::convert_pairs),
  };
  return keys;
}

}  // namespace

void RunConfig::validate() const {
  if (body_vertices < 48) {
    throw std::invalid_argument("config: body.vertices must be >= 48");
  }
  if (synth.train < 0 || synth.val < 0 || synth.test < 0 ||
      synth.min_duration_s <= 0 ||
      synth.max_duration_s < synth.min_duration_s || synth.fps <= 0) {
    throw std::invalid_argument("config: bad synth section");
  }
  synth.augment.validate();
  if (diffusion_steps < 1 || ddim_steps < 1 ||
      ddim_steps > diffusion_steps) {
    throw std::invalid_argument("config: bad diffusion section");
  }
  train_config(training::ModelKind::Camera, 1).validate();
  train_config(training::ModelKind::World, 1).validate();
  if (guidance.reprojection_weight < 0 || guidance.displacement_weight < 0 ||
      guidance.active_begin < 0 || guidance.active_begin > 1 ||
      guidance.min_gap_seconds < 0) {
    throw std::invalid_argument("config: bad guidance section");
  }
  eval_config().validate();
  if (ablate_sigmas.empty() || ablate_trials < 1) {
    throw std::invalid_argument("config: bad ablate section");
  }
  convert.validate();
  if (convert_pairs < 1000) {
    throw std::invalid_argument("config: convert.pairs must be >= 1000");
  }
}

training::TrainConfig RunConfig::train_config(training::ModelKind kind,
                                              uint64_t seed) const {
  training::TrainConfig t;
  t.steps = kind == training::ModelKind::Camera ? train_steps : world_steps;
  t.batch = batch;
  t.window = window;
  t.lr = float(lr);
  t.weight_decay = float(weight_decay);
  t.cosine_lr_decay = cosine_lr_decay;
  t.estimation_mode_prob = estimation_mode_prob;
  t.height_dropout = height_dropout;
  t.diffusion_steps = diffusion_steps;
  t.backbone = backbone;
  t.condition_width = condition_width;
  t.conf_thresh = conf_thresh;
  t.augment = synth.augment;
  t.image_features = image_features;
  t.val_every = val_every;
  t.val_sequences = val_sequences;
  t.log_every = log_every;
  t.seed = seed;
  t.cond_ddim_steps = cond_ddim_steps;
  return t;
}

guidance::GuidanceOptions RunConfig::guidance_options() const {
  guidance::GuidanceOptions g = guidance;
  g.ddim_steps = ddim_steps;
  return g;
}

metrics::EvalConfig RunConfig::eval_config() const {
  metrics::EvalConfig e;
  e.segment_len = metrics_segment_len;
  e.rte_norm = rte_norm;
  return e;
}

ablation::AblationConfig RunConfig::ablation_config(uint64_t seed) const {
  ablation::AblationConfig a;
  a.sigma_grid = ablate_sigmas;
  a.trials_per_level = ablate_trials;
  a.max_sequences = ablate_max_sequences;
  a.guidance = guidance_options();
  a.seed = seed;
  return a;
}

std::string config_to_text(const RunConfig& cfg) {
  std::string out = "# duomo run configuration\n";
  for (const auto& k : schema()) {
    out += k.name;
    out += " = ";
    out += k.get(cfg);
    out += '\n';
  }
  return out;
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected 'key = value'");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    bool found = false;
    for (const auto& k : schema()) {
      if (key == k.name) {
        try {
          k.set(cfg, value);
        } catch (const std::exception& e) {
          throw std::invalid_argument("config key '" + key + "': bad value '" +
                                      value + "' (" + e.what() + ")");
        }
        found = true;
        break;
      }
    }
    if (!found) {
      throw std::invalid_argument("config: unknown key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

uint64_t config_hash(const RunConfig& cfg) {
  const std::string text = config_to_text(cfg);
  return io::hash_bytes(text.data(), text.size());
}

// ---- motion file ------------------------------------------------------------

namespace {
constexpr uint32_t kMotionMagic = 0x4f4d4d44u;  // "DMMO"
constexpr uint32_t kMotionVersion = 1;
}  // namespace

void save_motion(const MotionFile& m, const std::string& path) {
  io::ByteWriter w;
  w.u32(kMotionMagic);
  w.u32(kMotionVersion);
  w.u64(m.body_hash);
  w.u8(m.seq.tag == motion::FrameTag::World ? 1 : 0);
  w.f64(m.seq.fps);
  w.u64(uint64_t(m.seq.frames()));
  w.u64(uint64_t(m.seq.vertices()));
  w.matrix(m.seq.root);
  for (const auto& mesh : m.seq.mesh) w.matrix(mesh);
  w.u64(m.visibility.size());
  for (bool v : m.visibility) w.u8(v ? 1 : 0);
  io::write_file(path, w.take());
}

MotionFile load_motion(const std::string& path) {
  const auto bytes = io::read_file(path);
  io::ByteReader r(bytes);
  if (r.u32() != kMotionMagic) {
    throw std::runtime_error("motion file: bad magic (expected DMMO)");
  }
  const uint32_t version = r.u32();
  if (version != kMotionVersion) {
    throw std::runtime_error("motion file: unsupported version " +
                             std::to_string(version) + " (expected 1)");
  }
  MotionFile m;
  m.body_hash = r.u64();
  m.seq.tag = r.u8() ? motion::FrameTag::World : motion::FrameTag::Camera;
  m.seq.fps = r.f64();
  const uint64_t T = r.u64();
  const uint64_t V = r.u64();
  m.seq.root = r.matrix();
  if (uint64_t(m.seq.root.rows()) != T || m.seq.root.cols() != 3) {
    throw std::runtime_error("motion file: root shape mismatch");
  }
  for (uint64_t t = 0; t < T; ++t) {
    Eigen::MatrixXd mesh = r.matrix();
    if (uint64_t(mesh.rows()) != V || mesh.cols() != 3) {
      throw std::runtime_error("motion file: mesh shape mismatch");
    }
    m.seq.mesh.push_back(std::move(mesh));
  }
  const uint64_t nvis = r.u64();
  for (uint64_t i = 0; i < nvis; ++i) m.visibility.push_back(r.u8() != 0);
  if (!r.done()) throw std::runtime_error("motion file: trailing bytes");
  return m;
}

// ---- report text -------------------------------------------------------------

std::string report_to_text(const metrics::EvalReport& rep) {
  std::ostringstream os;
  os << "duomo-eval-report 1\n";
  os << "pa_mpjpe_mm " << fmt_double(rep.pa_mpjpe_mm) << '\n';
  os << "mpjpe_mm " << fmt_double(rep.mpjpe_mm) << '\n';
  os << "pve_mm " << fmt_double(rep.pve_mm) << '\n';
  os << "wa_mpjpe_mm " << fmt_double(rep.wa_mpjpe_mm) << '\n';
  os << "w_mpjpe_mm " << fmt_double(rep.w_mpjpe_mm) << '\n';
  os << "rte_value " << fmt_double(rep.rte.value) << '\n';
  os << "rte_degenerate " << (rep.rte.degenerate ? 1 : 0) << '\n';
  os << "jitter_m_s3 " << fmt_double(rep.jitter_m_s3) << '\n';
  os << "foot_sliding_mm " << fmt_double(rep.foot_sliding.mm_per_frame)
     << '\n';
  os << "has_contacts " << (rep.foot_sliding.has_contacts ? 1 : 0) << '\n';
  os << "has_occlusion " << (rep.has_occlusion ? 1 : 0) << '\n';
  os << "w_mpjpe_occ_mm " << fmt_double(rep.w_mpjpe_occ_mm) << '\n';
  os << "rte_occ_value " << fmt_double(rep.rte_occ.value) << '\n';
  os << "rte_occ_degenerate " << (rep.rte_occ.degenerate ? 1 : 0) << '\n';
  os << "segments_wa_mm";
  for (double v : rep.segments.wa_mm) os << ' ' << fmt_double(v);
  os << '\n';
  os << "segments_w_mm";
  for (double v : rep.segments.w_mm) os << ' ' << fmt_double(v);
  os << '\n';
  return os.str();
}

metrics::EvalReport parse_report(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "duomo-eval-report 1") {
    throw std::runtime_error(
        "report: bad header (expected 'duomo-eval-report 1')");
  }
  std::map<std::string, std::string> kv;
  while (std::getline(is, line)) {
    if (trim(line).empty()) continue;
    const auto sp = line.find(' ');
    const std::string key = line.substr(0, sp);
    kv[key] = sp == std::string::npos ? "" : line.substr(sp + 1);
  }
  auto need = [&](const std::string& key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) {
      throw std::runtime_error("report: missing field '" + key + "'");
    }
    return it->second;
  };
  metrics::EvalReport rep;
  rep.pa_mpjpe_mm = parse_double(need("pa_mpjpe_mm"));
  rep.mpjpe_mm = parse_double(need("mpjpe_mm"));
  rep.pve_mm = parse_double(need("pve_mm"));
  rep.wa_mpjpe_mm = parse_double(need("wa_mpjpe_mm"));
  rep.w_mpjpe_mm = parse_double(need("w_mpjpe_mm"));
  rep.rte.value = parse_double(need("rte_value"));
  rep.rte.degenerate = parse_bool(need("rte_degenerate"));
  rep.jitter_m_s3 = parse_double(need("jitter_m_s3"));
  rep.foot_sliding.mm_per_frame = parse_double(need("foot_sliding_mm"));
  rep.foot_sliding.has_contacts = parse_bool(need("has_contacts"));
  rep.has_occlusion = parse_bool(need("has_occlusion"));
  rep.w_mpjpe_occ_mm = parse_double(need("w_mpjpe_occ_mm"));
  rep.rte_occ.value = parse_double(need("rte_occ_value"));
  rep.rte_occ.degenerate = parse_bool(need("rte_occ_degenerate"));
  for (const char* key : {"segments_wa_mm", "segments_w_mm"}) {
    std::stringstream ss(need(key));
    std::string item;
    auto& dst = std::string(key) == "segments_wa_mm" ? rep.segments.wa_mm
                                                     : rep.segments.w_mm;
    while (ss >> item) dst.push_back(parse_double(item));
  }
  return rep;
}

// ---- svg chart ---------------------------------------------------------------

std::string render_svg_chart(const std::string& title,
                             const std::vector<PlotSeries>& series) {
  const int W = 640, H = 400, ML = 70, MR = 160, MT = 40, MB = 50;
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool first = true;
  for (const auto& s : series) {
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (first) {
        xmin = xmax = s.x[i];
        ymin = ymax = s.y[i];
        first = false;
      }
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  auto px = [&](double x) {
    return ML + (x - xmin) / (xmax - xmin) * (W - ML - MR);
  };
  auto py = [&](double y) {
    return H - MB - (y - ymin) / (ymax - ymin) * (H - MT - MB);
  };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                 "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W
     << "\" height=\"" << H << "\">\n";
  os << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" "
        "font-family=\"sans-serif\" font-size=\"16\">" << title
     << "</text>\n";
  os << "<line x1=\"" << ML << "\" y1=\"" << H - MB << "\" x2=\"" << W - MR
     << "\" y2=\"" << H - MB << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << ML << "\" y1=\"" << MT << "\" x2=\"" << ML
     << "\" y2=\"" << H - MB << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << ML << "\" y=\"" << H - MB + 20
     << "\" font-family=\"sans-serif\" font-size=\"12\">" << fmt_double(xmin)
     << "</text>\n";
  os << "<text x=\"" << W - MR << "\" y=\"" << H - MB + 20
     << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">"
     << fmt_double(xmax) << "</text>\n";
  os << "<text x=\"" << ML - 6 << "\" y=\"" << H - MB
     << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">"
     << fmt_double(ymin) << "</text>\n";
  os << "<text x=\"" << ML - 6 << "\" y=\"" << MT + 4
     << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\">"
     << fmt_double(ymax) << "</text>\n";
  for (size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    const char* color = colors[si % 8];
    os << "<polyline fill=\"none\" stroke=\"" << color
       << "\" stroke-width=\"2\" points=\"";
    for (size_t i = 0; i < s.x.size(); ++i) {
      os << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    }
    os << "\"/>\n";
    const int ly = MT + 18 * int(si);
    os << "<line x1=\"" << W - MR + 10 << "\" y1=\"" << ly << "\" x2=\""
       << W - MR + 30 << "\" y2=\"" << ly << "\" stroke=\"" << color
       << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << W - MR + 36 << "\" y=\"" << ly + 4
       << "\" font-family=\"sans-serif\" font-size=\"12\">" << s.label
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

// ---- dispatch ---------------------------------------------------------------

namespace {

const char* kUsage =
    "usage: duomo <command> [flags]\n"
    "\n"
    "commands:\n"
    "  synth          build a synthetic dataset\n"
    "  train-cam      train the camera-space model\n"
    "  train-world    train the world-space model on a frozen camera model\n"
    "  reconstruct    two-stage reconstruction of one dataset sequence\n"
    "  eval           compare a predicted motion file against ground truth\n"
    "  ablate-camera  camera-noise robustness sweep\n"
    "  convert        fit body parameters to meshes (trains a cascade)\n"
    "  inspect        summarize any artifact file\n"
    "\n"
    "common flags: --config <file> --seed <n> --out <dir>\n"
    "reconstruct:  --data <file> --index <i> --camera <ckpt> --world <ckpt>\n"
    "              [--no-guidance] [--height <m>] [--allow-config-drift]\n"
    "train-world:  --data <file> --camera <ckpt> [--allow-config-drift]\n"
    "eval:         --pred <motion> --gt <motion>\n"
    "ablate-camera: --data <file> --camera <ckpt> --world <ckpt>\n"
    "convert:      [--cascade <file>] [--motion <file>]\n"
    "inspect:      <file>\n";

struct Args {
  std::map<std::string, std::string> values;
  std::vector<std::string> positional;

  bool has(const std::string& f) const { return values.count(f) > 0; }
  const std::string& get(const std::string& f) const {
    const auto it = values.find(f);
    if (it == values.end()) {
      throw std::invalid_argument("missing required flag " + f);
    }
    return it->second;
  }
};

Args parse_args(const std::vector<std::string>& argv, size_t begin,
                const std::vector<std::string>& value_flags,
                const std::vector<std::string>& bool_flags,
                int max_positional) {
  Args out;
  for (size_t i = begin; i < argv.size(); ++i) {
    const std::string& a = argv[i];
    if (a.rfind("--", 0) == 0) {
      if (std::find(bool_flags.begin(), bool_flags.end(), a) !=
          bool_flags.end()) {
        out.values[a] = "1";
      } else if (std::find(value_flags.begin(), value_flags.end(), a) !=
                 value_flags.end()) {
        if (i + 1 >= argv.size()) {
          throw std::invalid_argument("flag " + a + " needs a value");
        }
        out.values[a] = argv[++i];
      } else {
        throw std::invalid_argument("unknown flag " + a);
      }
    } else {
      out.positional.push_back(a);
    }
  }
  if (static_cast<int>(out.positional.size()) > max_positional) {
    throw std::invalid_argument("unexpected argument '" + out.positional.back() +
                                "'");
  }
  return out;
}

std::string run_dir(const Args& args) {
  if (args.has("--out")) return args.get("--out");
  if (const char* env = std::getenv("DUOMO_RUN_DIR")) return env;
  return ".";
}

// One writer per run directory.
class RunLock {
 public:
  explicit RunLock(const std::string& dir) {
    fs::create_directories(dir);
    path_ = (fs::path(dir) / ".duomo.lock").string();
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) {
      throw std::runtime_error("run directory '" + dir +
                               "' is locked by another writer (" + path_ +
                               " exists)");
    }
    std::fclose(f);
  }
  ~RunLock() { std::remove(path_.c_str()); }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::string path_;
};

RunConfig load_config(const Args& args) {
  if (!args.has("--config")) {
    RunConfig cfg;
    cfg.validate();
    return cfg;
  }
  const auto bytes = io::read_file(args.get("--config"));
  return parse_config(std::string(bytes.begin(), bytes.end()));
}

uint64_t seed_of(const Args& args, uint64_t fallback = 1) {
  return args.has("--seed") ? parse_u64(args.get("--seed")) : fallback;
}

void write_text(const std::string& path, const std::string& text) {
  io::write_file(path, std::vector<uint8_t>(text.begin(), text.end()));
}

void check_ckpt_config(const training::Checkpoint& ck,
                       const training::TrainConfig& expect, const Args& args,
                       const char* what) {
  if (ck.config_hash != expect.config_hash() &&
      !args.has("--allow-config-drift")) {
    std::ostringstream os;
    os << what << ": checkpoint config hash " << std::hex << ck.config_hash
       << " does not match the run config hash " << expect.config_hash()
       << " (pass --allow-config-drift to proceed)";
    throw std::invalid_argument(os.str());
  }
}

void write_train_log(const std::string& path,
                     const training::TrainResult& res) {
  std::ostringstream os;
  os << "step\ttrain_total\tval_loss\tlr_scale\n";
  for (const auto& rec : res.log) {
    os << rec.step << '\t' << fmt_double(rec.train.total) << '\t'
       << fmt_double(rec.val_loss) << '\t' << fmt_double(rec.lr_scale) << '\n';
  }
  write_text(path, os.str());
}

int cmd_synth(const Args& args, std::ostream& out) {
  RunConfig cfg = load_config(args);
  if (args.has("--seed")) cfg.synth.master_seed = parse_u64(args.get("--seed"));
  const std::string dir = run_dir(args);
  RunLock lock(dir);
  const auto model = body::make_toy_body(cfg.body_vertices);
  const auto ds = synth::build_dataset(cfg.synth, model);
  const std::string path = (fs::path(dir) / "dataset.bin").string();
  synth::save_dataset(ds, path);
  write_text((fs::path(dir) / "run_config.cfg").string(), config_to_text(cfg));
  out << "dataset: " << path << "\n";
  out << "records: " << ds.records.size() << "\n";
  const auto written = io::read_file(path);
  out << "file_hash: " << std::hex
      << io::hash_bytes(written.data(), written.size()) << "\n";
  return 0;
}

int cmd_train(const Args& args, std::ostream& out, bool world) {
  const RunConfig cfg = load_config(args);
  const uint64_t seed = seed_of(args, cfg.train_seed);
  const std::string dir = run_dir(args);
  RunLock lock(dir);
  const auto model = body::make_toy_body(cfg.body_vertices);
  const auto ds = synth::load_dataset(args.get("--data"), model);

  training::TrainResult res;
  std::string name;
  if (!world) {
    const auto tc = cfg.train_config(training::ModelKind::Camera, seed);
    res = training::train_camera_model(ds, model, tc);
    name = "camera";
  } else {
    const auto cam = training::load_checkpoint(args.get("--camera"));
    check_ckpt_config(cam, cfg.train_config(training::ModelKind::Camera, seed),
                      args, "train-world");
    const auto tc = cfg.train_config(training::ModelKind::World, seed);
    res = training::train_world_model(ds, model, cam, tc);
    name = "world";
  }
  const std::string ckpt = (fs::path(dir) / (name + ".ckpt")).string();
  training::save_checkpoint(res.checkpoint, ckpt);
  write_train_log((fs::path(dir) / ("train_" + name + ".log")).string(), res);
  out << "checkpoint: " << ckpt << "\n";
  out << "val_loss: " << fmt_double(res.step0_val) << " -> "
      << fmt_double(res.final_val) << "\n";
  if (res.diverged) {
    out << "diverged: restored last good parameters\n";
    return 2;
  }
  return 0;
}

int cmd_reconstruct(const Args& args, std::ostream& out) {
  const RunConfig cfg = load_config(args);
  const uint64_t seed = seed_of(args);
  const std::string dir = run_dir(args);
  RunLock lock(dir);
  const auto model = body::make_toy_body(cfg.body_vertices);
  const auto ds = synth::load_dataset(args.get("--data"), model);

  const auto test = ds.split_indices(synth::Split::Test);
  int index = args.has("--index") ? parse_int(args.get("--index"))
                                  : (test.empty() ? 0 : test[0]);
  if (index < 0 || index >= static_cast<int>(ds.records.size())) {
    throw std::invalid_argument("reconstruct: --index out of range");
  }
  const auto& rec = ds.records[size_t(index)];

  const auto cam = training::load_checkpoint(args.get("--camera"));
  const auto wrl = training::load_checkpoint(args.get("--world"));
  // Drift is judged against the config's declared training seed; the --seed
  // flag only drives the sampler here.
  check_ckpt_config(
      cam, cfg.train_config(training::ModelKind::Camera, cfg.train_seed), args,
      "reconstruct");
  check_ckpt_config(
      wrl, cfg.train_config(training::ModelKind::World, cfg.train_seed), args,
      "reconstruct");

  guidance::GuidanceOptions opts = cfg.guidance_options();
  if (args.has("--no-guidance")) {
    opts.reprojection = false;
    opts.displacement = false;
  }
  const double height =
      args.has("--height") ? parse_double(args.get("--height")) : rec.height_m;

  std::mt19937_64 rng(seed);
  const auto result = guidance::guided_reconstruct(
      cam, wrl, model, rec.keypoints, rec.track, height, opts, rng);

  const uint64_t bh = synth::body_config_hash(model);
  save_motion({bh, result.world, result.visibility},
              (fs::path(dir) / "prediction.motion").string());
  save_motion({bh, rec.world, rec.visibility},
              (fs::path(dir) / "ground_truth.motion").string());

  const auto reg = body::make_joint_regressor(model);
  const auto rep = metrics::evaluate(result.world, rec.world, rec.visibility,
                                     model, reg, cfg.eval_config());
  const std::string text = report_to_text(rep);
  write_text((fs::path(dir) / "report.txt").string(), text);
  out << "sequence: " << index << " (" << rec.world.frames() << " frames)\n";
  out << "occlusions: " << result.occlusions.size() << "\n";
  out << text;
  return 0;
}

int cmd_eval(const Args& args, std::ostream& out) {
  const RunConfig cfg = load_config(args);
  const std::string dir = run_dir(args);
  RunLock lock(dir);
  const auto model = body::make_toy_body(cfg.body_vertices);
  const uint64_t bh = synth::body_config_hash(model);

  const auto pred = load_motion(args.get("--pred"));
  const auto gt = load_motion(args.get("--gt"));
  for (const auto* m : {&pred, &gt}) {
    if (m->body_hash != bh) {
      std::ostringstream os;
      os << "eval: motion file body hash " << std::hex << m->body_hash
         << " does not match the configured body " << bh;
      throw std::invalid_argument(os.str());
    }
  }

  const auto reg = body::make_joint_regressor(model);
  const auto rep = metrics::evaluate(pred.seq, gt.seq, gt.visibility, model,
                                     reg, cfg.eval_config());
  const std::string text = report_to_text(rep);
  write_text((fs::path(dir) / "eval_report.txt").string(), text);

  // Per-segment error bars as a static chart.
  std::vector<PlotSeries> series(2);
  series[0].label = "WA-MPJPE (mm)";
  series[1].label = "W-MPJPE (mm)";
  for (size_t i = 0; i < rep.segments.wa_mm.size(); ++i) {
    series[0].x.push_back(double(i));
    series[0].y.push_back(rep.segments.wa_mm[i]);
    series[1].x.push_back(double(i));
    series[1].y.push_back(rep.segments.w_mm[i]);
  }
  write_text((fs::path(dir) / "eval_segments.svg").string(),
             render_svg_chart("per-segment joint error", series));
  out << text;
  return 0;
}

int cmd_ablate(const Args& args, std::ostream& out) {
  const RunConfig cfg = load_config(args);
  const uint64_t seed = seed_of(args, 17);
  const std::string dir = run_dir(args);
  RunLock lock(dir);
  const auto model = body::make_toy_body(cfg.body_vertices);
  const auto ds = synth::load_dataset(args.get("--data"), model);
  const auto cam = training::load_checkpoint(args.get("--camera"));
  const auto wrl = training::load_checkpoint(args.get("--world"));

  const auto res = ablation::run_camera_noise_ablation(
      cam, wrl, model, ds, cfg.ablation_config(seed));
  const std::string tsv = ablation::curves_to_text(res);
  write_text((fs::path(dir) / "ablation.tsv").string(), tsv);

  auto chart = [&](const char* title, double ablation::MetricSummary::* f) {
    std::vector<PlotSeries> series;
    for (const auto& c : res.curves) {
      PlotSeries s;
      s.label = std::string(ablation::variant_name(c.variant)) + " / " +
                ablation::channel_name(c.channel);
      for (const auto& p : c.points) {
        s.x.push_back(p.sigma);
        s.y.push_back(p.mean.*f);
      }
      series.push_back(std::move(s));
    }
    return render_svg_chart(title, series);
  };
  write_text((fs::path(dir) / "ablation_foot_sliding.svg").string(),
             chart("foot sliding vs camera noise",
                   &ablation::MetricSummary::foot_sliding_mm));
  write_text((fs::path(dir) / "ablation_w_mpjpe.svg").string(),
             chart("W-MPJPE vs camera noise",
                   &ablation::MetricSummary::w_mpjpe_mm));
  out << tsv;
  return 0;
}

int cmd_convert(const Args& args, std::ostream& out) {
  const RunConfig cfg = load_config(args);
  const uint64_t seed = seed_of(args, cfg.convert.seed);
  const std::string dir = run_dir(args);
  RunLock lock(dir);
  const auto model = body::make_toy_body(cfg.body_vertices);

  converter::ConverterCascade cascade;
  if (args.has("--cascade")) {
    cascade = converter::load_cascade(args.get("--cascade"));
  } else {
    converter::ConverterConfig cc = cfg.convert;
    cc.seed = seed;
    const auto pairs =
        converter::sample_converter_pairs(cfg.convert_pairs, model, seed);
    auto trained = converter::train_converter(pairs, model, cc);
    cascade = std::move(trained.cascade);
    const std::string path = (fs::path(dir) / "cascade.bin").string();
    converter::save_cascade(cascade, path);
    out << "cascade: " << path << "\n";
    out << "stage_val_error:";
    for (double e : trained.stage_val_error) out << ' ' << fmt_double(e);
    out << "\n";
  }

  if (args.has("--motion")) {
    const auto m = load_motion(args.get("--motion"));
    if (m.body_hash != synth::body_config_hash(model)) {
      throw std::invalid_argument("convert: motion file body hash mismatch");
    }
    const auto targets = motion::absolute_meshes(m.seq);
    const auto rep = converter::convert(targets, cascade, model);
    std::ostringstream os;
    os << "# frame scale root_t(3) root_r(3) joint_rotations(J*3)\n";
    for (size_t t = 0; t < rep.params.size(); ++t) {
      os << t << ' ' << fmt_double(rep.params[t].shape_scale);
      for (int c = 0; c < 3; ++c) {
        os << ' ' << fmt_double(rep.params[t].root_translation(c));
      }
      for (int c = 0; c < 3; ++c) {
        os << ' ' << fmt_double(rep.params[t].root_orientation(c));
      }
      const auto& rot = rep.params[t].joint_rotations;
      for (int j = 0; j < rot.rows(); ++j) {
        for (int c = 0; c < 3; ++c) os << ' ' << fmt_double(rot(j, c));
      }
      os << '\n';
    }
    write_text((fs::path(dir) / "params.txt").string(), os.str());
    out << "frames: " << rep.params.size() << "\n";
    out << "mean_vertex_rms_m: " << fmt_double(rep.vertex_rms.mean()) << "\n";
  }
  return 0;
}

int cmd_inspect(const Args& args, std::ostream& out) {
  const std::string& path = args.positional.at(0);
  const auto bytes = io::read_file(path);

  if (bytes.size() >= 4) {
    uint32_t magic = 0;
    std::memcpy(&magic, bytes.data(), 4);
    switch (magic) {
      case 0x44734d44u: {  // dataset
        const auto ds = synth::load_dataset(path);
        out << "dataset: " << ds.records.size() << " records, body_hash "
            << std::hex << ds.body_hash << std::dec << "\n";
        int train = 0, val = 0, test = 0;
        for (auto s : ds.splits) {
          if (s == synth::Split::Train) ++train;
          if (s == synth::Split::Val) ++val;
          if (s == synth::Split::Test) ++test;
        }
        out << "splits: " << train << " train / " << val << " val / " << test
            << " test\n";
        return 0;
      }
      case 0x4b434d44u: {  // checkpoint
        const auto ck = training::load_checkpoint(path);
        out << "checkpoint: "
            << (ck.kind == training::ModelKind::Camera ? "camera" : "world")
            << " model, step " << ck.step << "\n";
        out << "config_hash: " << std::hex << ck.config_hash << "\n";
        out << "body_hash: " << ck.body_hash << std::dec << "\n";
        out << "backbone: " << ck.backbone.layers << " layers, width "
            << ck.backbone.width << "\n";
        return 0;
      }
      case 0x56434d44u: {  // converter cascade
        const auto cc = converter::load_cascade(path);
        out << "converter cascade: " << cc.vertices() << " vertices, "
            << cc.joints() << " joints, hidden " << cc.hidden() << "\n";
        out << "body_hash: " << std::hex << cc.body_hash() << std::dec << "\n";
        return 0;
      }
      case kMotionMagic: {
        const auto m = load_motion(path);
        out << "motion: " << m.seq.frames() << " frames, " << m.seq.vertices()
            << " vertices, "
            << (m.seq.tag == motion::FrameTag::World ? "world" : "camera")
            << " tag, " << fmt_double(m.seq.fps) << " fps\n";
        out << "body_hash: " << std::hex << m.body_hash << std::dec << "\n";
        int invisible = 0;
        for (bool v : m.visibility) invisible += v ? 0 : 1;
        out << "visibility: " << m.visibility.size() << " flags, " << invisible
            << " invisible\n";
        return 0;
      }
      default:
        break;
    }
  }

  const std::string text(bytes.begin(), bytes.end());
  if (text.rfind("duomo-eval-report", 0) == 0) {
    const auto rep = parse_report(text);
    out << "eval report:\n";
    for (const auto& [name, value] : rep.named()) {
      out << "  " << name << ": " << fmt_double(value) << "\n";
    }
    return 0;
  }
  try {
    const RunConfig cfg = parse_config(text);
    out << "run config, hash " << std::hex << config_hash(cfg) << std::dec
        << "\n";
    return 0;
  } catch (const std::exception&) {
  }
  throw std::invalid_argument("inspect: unrecognized artifact '" + path + "'");
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out,
                 std::ostream& err) {
  try {
    if (args.empty() || args[0] == "--help" || args[0] == "help") {
      out << kUsage;
      return args.empty() ? 1 : 0;
    }
    const std::string& cmd = args[0];
    const std::vector<std::string> common = {"--config", "--seed", "--out"};
    auto with = [&](std::initializer_list<const char*> extra) {
      std::vector<std::string> v = common;
      for (const char* e : extra) v.emplace_back(e);
      return v;
    };

    if (cmd == "synth") {
      return cmd_synth(parse_args(args, 1, common, {}, 0), out);
    }
    if (cmd == "train-cam") {
      return cmd_train(parse_args(args, 1, with({"--data"}), {}, 0), out,
                       false);
    }
    if (cmd == "train-world") {
      return cmd_train(parse_args(args, 1, with({"--data", "--camera"}),
                                  {"--allow-config-drift"}, 0),
                       out, true);
    }
    if (cmd == "reconstruct") {
      return cmd_reconstruct(
          parse_args(args, 1,
                     with({"--data", "--index", "--camera", "--world",
                           "--height"}),
                     {"--no-guidance", "--allow-config-drift"}, 0),
          out);
    }
    if (cmd == "eval") {
      return cmd_eval(parse_args(args, 1, with({"--pred", "--gt"}), {}, 0),
                      out);
    }
    if (cmd == "ablate-camera") {
      return cmd_ablate(
          parse_args(args, 1, with({"--data", "--camera", "--world"}), {}, 0),
          out);
    }
    if (cmd == "convert") {
      return cmd_convert(
          parse_args(args, 1, with({"--cascade", "--motion"}), {}, 0), out);
    }
    if (cmd == "inspect") {
      const auto a = parse_args(args, 1, {}, {}, 1);
      if (a.positional.empty()) {
        throw std::invalid_argument("inspect: missing file argument");
      }
      return cmd_inspect(a, out);
    }
    err << "unknown command '" << cmd << "'\n" << kUsage;
    return 1;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace duomo::cli
