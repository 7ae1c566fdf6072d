// Flat key-value run configuration: one documented default per key, unknown
// keys rejected, echoed verbatim next to every output artifact.
#pragma once

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "varest/common.hpp"
#include "varest/dataio.hpp"
#include "varest/lds.hpp"
#include "varest/model.hpp"
#include "varest/train.hpp"

namespace varest::cfg {

struct RunConfig {
  std::string dataset_root = "data";
  std::string out_dir = "out";
  long seed = 0;
  bool force = false;

  int synth_n_videos = 8;
  int synth_frames_per_video = 60;
  int synth_image_size = 32;
  double synth_imbalance_exponent = 0.0;
  double synth_noise_std = 0.05;

  bool lds_enabled = true;
  int lds_bins = 200;
  std::string lds_kernel = "gaussian";
  double lds_bandwidth_bins = 2.0;
  int lds_half_width = 5;
  double lds_clip_max = 50.0;

  std::string model_mode = "two_stream";
  std::string model_extractor = "tiny_cnn";
  int model_spatial_feature_dim = 32;
  int model_mlp_hidden = 64;
  int model_temporal_channels = 8;
  int model_recurrent_hidden = 32;
  int model_window_length = 16;
  int model_cnn_c1 = 6;
  int model_cnn_c2 = 8;
  int model_cnn_c3 = 12;
  int model_grid = 4;

  int phase_n_scales = 2;
  int phase_n_orientations = 4;
  double phase_amplitude_quantile = 0.5;
  std::string phase_cache_dir;

  int train_epochs = 3;
  int train_batch_windows = 8;
  double train_learning_rate = 0.05;
  double train_momentum = 0.9;
  std::string train_loss = "weighted_mse";
  double train_ccc_loss_weight = 0.5;
  std::string train_split = "kfold";
  int train_k = 3;
  double train_holdout_fraction = 0.25;

  std::string eval_checkpoint;
  std::string eval_pooling = "pooled";
  double eval_missing_rate = 0.0;

  int plot_bins = 20;
};

namespace detail {

enum class Kind { kString, kLong, kInt, kDouble, kBool };

struct Entry {
  const char* key;
  Kind kind;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
  const char* doc;
};

inline long parse_long(const std::string& key, const std::string& v) {
  size_t pos = 0;
  long out = 0;
  try {
    out = std::stol(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": not an integer: '" + v + "'");
  }
  if (pos != v.size()) {
    throw ConfigError("config key " + key + ": not an integer: '" + v + "'");
  }
  return out;
}

inline double parse_double(const std::string& key, const std::string& v) {
  size_t pos = 0;
  double out = 0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": not a number: '" + v + "'");
  }
  if (pos != v.size()) {
    throw ConfigError("config key " + key + ": not a number: '" + v + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key " + key + ": not a bool: '" + v + "'");
}

#define VAREST_CFG_STR(key, field, doc)                                   \
  Entry{key, Kind::kString, [](const RunConfig& c) { return c.field; },  \
        [](RunConfig& c, const std::string& v) { c.field = v; }, doc}
#define VAREST_CFG_LONG(key, field, doc)                                      \
  Entry{key, Kind::kLong,                                                     \
        [](const RunConfig& c) { return std::to_string(c.field); },           \
        [](RunConfig& c, const std::string& v) { c.field = parse_long(key, v); }, \
        doc}
#define VAREST_CFG_INT(key, field, doc)                                     \
  Entry{key, Kind::kInt,                                                    \
        [](const RunConfig& c) { return std::to_string(c.field); },         \
        [](RunConfig& c, const std::string& v) {                            \
          c.field = static_cast<int>(parse_long(key, v));                   \
        },                                                                  \
        doc}
#define VAREST_CFG_DBL(key, field, doc)                                 \
  Entry{key, Kind::kDouble,                                             \
        [](const RunConfig& c) { return format_exact(c.field); },       \
        [](RunConfig& c, const std::string& v) {                        \
          c.field = parse_double(key, v);                               \
        },                                                              \
        doc}
#define VAREST_CFG_BOOL(key, field, doc)                                  \
  Entry{key, Kind::kBool,                                                 \
        [](const RunConfig& c) { return c.field ? "true" : "false"; },    \
        [](RunConfig& c, const std::string& v) {                          \
          c.field = parse_bool(key, v);                                   \
        },                                                                \
        doc}

inline const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries = {
      VAREST_CFG_STR("dataset.root", dataset_root, "dataset directory"),
      VAREST_CFG_STR("out.dir", out_dir, "output directory for artifacts"),
      VAREST_CFG_LONG("seed", seed, "master RNG seed"),
      VAREST_CFG_BOOL("force", force, "overwrite non-empty output locations"),
      VAREST_CFG_INT("synth.n_videos", synth_n_videos, "synthetic videos"),
      VAREST_CFG_INT("synth.frames_per_video", synth_frames_per_video,
                     "frames per synthetic video (>= 2)"),
      VAREST_CFG_INT("synth.image_size", synth_image_size,
                     "synthetic frame side length (>= 16)"),
      VAREST_CFG_DBL("synth.imbalance_exponent", synth_imbalance_exponent,
                     "label-density skew; 0 = approximately uniform"),
      VAREST_CFG_DBL("synth.noise_std", synth_noise_std,
                     "pixel noise standard deviation"),
      VAREST_CFG_BOOL("lds.enabled", lds_enabled,
                      "re-weight the loss by inverse smoothed label density"),
      VAREST_CFG_INT("lds.bins", lds_bins, "label histogram bins over [-1,1]"),
      VAREST_CFG_STR("lds.kernel", lds_kernel,
                     "gaussian | triangular | laplacian | delta"),
      VAREST_CFG_DBL("lds.bandwidth_bins", lds_bandwidth_bins,
                     "kernel bandwidth in bins"),
      VAREST_CFG_INT("lds.half_width", lds_half_width,
                     "kernel support radius in bins"),
      VAREST_CFG_DBL("lds.clip_max", lds_clip_max, "weight cap (>= 1)"),
      VAREST_CFG_STR("model.mode", model_mode, "two_stream | spatial_only"),
      VAREST_CFG_STR("model.extractor", model_extractor,
                     "tiny_cnn | grid_stats"),
      VAREST_CFG_INT("model.spatial_feature_dim", model_spatial_feature_dim,
                     "spatial stream output dimension"),
      VAREST_CFG_INT("model.mlp_hidden", model_mlp_hidden, "MLP hidden width"),
      VAREST_CFG_INT("model.temporal_channels", model_temporal_channels,
                     "temporal conv output channels"),
      VAREST_CFG_INT("model.recurrent_hidden", model_recurrent_hidden,
                     "recurrent hidden size"),
      VAREST_CFG_INT("model.window_length", model_window_length,
                     "frames per window"),
      VAREST_CFG_INT("model.cnn_c1", model_cnn_c1, "tiny_cnn block 1 channels"),
      VAREST_CFG_INT("model.cnn_c2", model_cnn_c2, "tiny_cnn block 2 channels"),
      VAREST_CFG_INT("model.cnn_c3", model_cnn_c3, "tiny_cnn block 3 channels"),
      VAREST_CFG_INT("model.grid", model_grid, "grid_stats cells per side"),
      VAREST_CFG_INT("phase.n_scales", phase_n_scales, "filter bank scales"),
      VAREST_CFG_INT("phase.n_orientations", phase_n_orientations,
                     "filter bank orientations"),
      VAREST_CFG_DBL("phase.amplitude_quantile", phase_amplitude_quantile,
                     "phase reliability mask quantile in [0,1)"),
      VAREST_CFG_STR("phase.cache_dir", phase_cache_dir,
                     "phase-diff cache directory; empty disables the cache"),
      VAREST_CFG_INT("train.epochs", train_epochs, "training epochs"),
      VAREST_CFG_INT("train.batch_windows", train_batch_windows,
                     "windows per SGD step"),
      VAREST_CFG_DBL("train.learning_rate", train_learning_rate,
                     "SGD learning rate"),
      VAREST_CFG_DBL("train.momentum", train_momentum, "SGD momentum"),
      VAREST_CFG_STR("train.loss", train_loss,
                     "weighted_mse | weighted_mse_plus_ccc"),
      VAREST_CFG_DBL("train.ccc_loss_weight", train_ccc_loss_weight,
                     "weight of the optional (1 - CCC) term"),
      VAREST_CFG_STR("train.split", train_split, "kfold | holdout"),
      VAREST_CFG_INT("train.k", train_k, "folds for kfold split"),
      VAREST_CFG_DBL("train.holdout_fraction", train_holdout_fraction,
                     "validation fraction for holdout split"),
      VAREST_CFG_STR("eval.checkpoint", eval_checkpoint,
                     "checkpoint path for the eval command"),
      VAREST_CFG_STR("eval.pooling", eval_pooling, "pooled | per_video"),
      VAREST_CFG_DBL("eval.missing_rate", eval_missing_rate,
                     "fraction of frames treated as missing during eval"),
      VAREST_CFG_INT("plot.bins", plot_bins, "bins per axis for figures"),
  };
  return entries;
}

#undef VAREST_CFG_STR
#undef VAREST_CFG_LONG
#undef VAREST_CFG_INT
#undef VAREST_CFG_DBL
#undef VAREST_CFG_BOOL

}  // namespace detail

inline void set_key(RunConfig& config, const std::string& key,
                    const std::string& value) {
  for (const auto& e : detail::registry()) {
    if (key == e.key) {
      e.set(config, value);
      return;
    }
  }
  throw ConfigError("unknown config key: " + key);
}

inline std::string echo_config(const RunConfig& config) {
  std::ostringstream out;
  for (const auto& e : detail::registry()) {
    out << e.key << " = " << e.get(config) << "\n";
  }
  return out.str();
}

inline std::string document_keys() {
  std::ostringstream out;
  for (const auto& e : detail::registry()) {
    out << e.key << " (default " << e.get(RunConfig{}) << "): " << e.doc << "\n";
  }
  return out.str();
}

// "key = value" lines; '#' starts a comment; blank lines ignored.
inline void apply_config_text(RunConfig& config, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    }
    set_key(config, key, value);
  }
}

inline void apply_config_file(RunConfig& config, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  apply_config_text(config, buf.str());
}

// ---- conversions into module configs ---------------------------------------

inline dataio::SynthConfig synth_config(const RunConfig& c) {
  dataio::SynthConfig s;
  s.n_videos = c.synth_n_videos;
  s.frames_per_video = c.synth_frames_per_video;
  s.image_size = c.synth_image_size;
  s.imbalance_exponent = c.synth_imbalance_exponent;
  s.noise_std = c.synth_noise_std;
  s.seed = c.seed;
  return s;
}

inline model::ModelConfig model_config(const RunConfig& c) {
  model::ModelConfig m;
  m.spatial_feature_dim = c.model_spatial_feature_dim;
  m.mlp_hidden = c.model_mlp_hidden;
  m.temporal_channels = c.model_temporal_channels;
  m.recurrent_hidden = c.model_recurrent_hidden;
  m.window_length = c.model_window_length;
  m.mode = model::mode_from_name(c.model_mode);
  m.extractor = c.model_extractor;
  m.image_size = c.synth_image_size;
  m.cnn_c1 = c.model_cnn_c1;
  m.cnn_c2 = c.model_cnn_c2;
  m.cnn_c3 = c.model_cnn_c3;
  m.grid = c.model_grid;
  m.n_scales = c.phase_n_scales;
  m.n_orientations = c.phase_n_orientations;
  m.amplitude_quantile = c.phase_amplitude_quantile;
  m.validate();
  return m;
}

inline train::TrainConfig train_config(const RunConfig& c) {
  train::TrainConfig t;
  t.epochs = c.train_epochs;
  t.batch_windows = c.train_batch_windows;
  t.window_length = c.model_window_length;
  t.learning_rate = c.train_learning_rate;
  t.momentum = c.train_momentum;
  t.loss = train::loss_from_name(c.train_loss);
  t.ccc_loss_weight = c.train_ccc_loss_weight;
  t.lds_enabled = c.lds_enabled;
  t.lds_params.n_bins = c.lds_bins;
  t.lds_params.kernel = lds::kernel_from_name(c.lds_kernel);
  t.lds_params.bandwidth_bins = c.lds_bandwidth_bins;
  t.lds_params.half_width = c.lds_half_width;
  t.lds_params.clip_max = c.lds_clip_max;
  t.seed = c.seed;
  t.validate();
  return t;
}

}  // namespace varest::cfg
