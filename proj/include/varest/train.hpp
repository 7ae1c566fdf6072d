// Training: LDS-weighted per-frame loss, SGD with momentum, cross-validated
// fitting with deterministic window sampling and exact resumption.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "varest/common.hpp"
#include "varest/dataio.hpp"
#include "varest/eval.hpp"
#include "varest/lds.hpp"
#include "varest/model.hpp"
#include "varest/phasediff.hpp"

namespace varest::train {

enum class LossKind { kWeightedMse, kWeightedMsePlusCcc };

inline const char* loss_name(LossKind k) {
  return k == LossKind::kWeightedMse ? "weighted_mse" : "weighted_mse_plus_ccc";
}

inline LossKind loss_from_name(const std::string& s) {
  if (s == "weighted_mse") return LossKind::kWeightedMse;
  if (s == "weighted_mse_plus_ccc") return LossKind::kWeightedMsePlusCcc;
  throw ConfigError("unknown loss kind: " + s);
}

struct LdsParams {
  int n_bins = 200;
  lds::KernelKind kernel = lds::KernelKind::kGaussian;
  double bandwidth_bins = 2.0;  // bandwidth in bins; converted at use site
  int half_width = 5;
  double clip_max = 50.0;

  lds::SmoothingKernel smoothing_kernel() const {
    lds::SmoothingKernel k;
    k.kind = kernel;
    k.bandwidth = bandwidth_bins * (2.0 / n_bins);
    k.half_width = half_width;
    return k;
  }
};

struct TrainConfig {
  int epochs = 3;
  int batch_windows = 8;
  int window_length = 16;
  double learning_rate = 0.05;
  double momentum = 0.9;
  LossKind loss = LossKind::kWeightedMse;
  double ccc_loss_weight = 0.5;
  bool lds_enabled = true;
  LdsParams lds_params;
  long seed = 0;
  std::string cache_dir;  // phase-diff cache; empty disables it

  std::map<std::string, std::string> to_kv() const {
    std::map<std::string, std::string> kv;
    kv["epochs"] = std::to_string(epochs);
    kv["batch_windows"] = std::to_string(batch_windows);
    kv["window_length"] = std::to_string(window_length);
    kv["learning_rate"] = format_exact(learning_rate);
    kv["momentum"] = format_exact(momentum);
    kv["loss"] = loss_name(loss);
    kv["ccc_loss_weight"] = format_exact(ccc_loss_weight);
    kv["lds_enabled"] = lds_enabled ? "true" : "false";
    kv["lds_bins"] = std::to_string(lds_params.n_bins);
    kv["lds_kernel"] = lds::kernel_name(lds_params.kernel);
    kv["lds_bandwidth_bins"] = format_exact(lds_params.bandwidth_bins);
    kv["lds_half_width"] = std::to_string(lds_params.half_width);
    kv["lds_clip_max"] = format_exact(lds_params.clip_max);
    kv["seed"] = std::to_string(seed);
    kv["cache_dir"] = cache_dir;
    return kv;
  }

  void validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch_windows < 1) throw ConfigError("train: batch_windows must be >= 1");
    if (window_length < 1) throw ConfigError("train: window_length must be >= 1");
    if (learning_rate <= 0.0) throw ConfigError("train: learning_rate must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) {
      throw ConfigError("train: momentum must be in [0, 1)");
    }
    if (ccc_loss_weight < 0.0) {
      throw ConfigError("train: ccc_loss_weight must be >= 0");
    }
    if (lds_params.n_bins < 2) throw ConfigError("train: lds bins must be >= 2");
    if (lds_params.clip_max <= 0.0) {
      throw ConfigError("train: lds clip_max must be > 0");
    }
  }
};

// Mean over unmasked frames of (w_v (dv)^2 + w_a (da)^2) / 2. With unit
// weights this is plain MSE averaged over the two targets.
inline double weighted_loss(const std::vector<model::Prediction>& preds,
                            const std::vector<std::pair<double, double>>& targets,
                            const std::vector<double>& v_weights,
                            const std::vector<double>& a_weights,
                            const std::vector<bool>& mask) {
  const size_t n = preds.size();
  if (targets.size() != n || v_weights.size() != n || a_weights.size() != n ||
      mask.size() != n) {
    throw ValidationError("weighted_loss: length mismatch");
  }
  double acc = 0.0;
  long m = 0;
  for (size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    if (v_weights[i] <= 0.0 || a_weights[i] <= 0.0) {
      throw ValidationError("weighted_loss: weights must be positive");
    }
    const double dv = preds[i].valence - targets[i].first;
    const double da = preds[i].arousal - targets[i].second;
    acc += 0.5 * (v_weights[i] * dv * dv + a_weights[i] * da * da);
    ++m;
  }
  if (m == 0) throw ValidationError("weighted_loss: zero unmasked frames");
  return acc / static_cast<double>(m);
}

inline std::vector<std::array<double, 2>> weighted_loss_grad(
    const std::vector<model::Prediction>& preds,
    const std::vector<std::pair<double, double>>& targets,
    const std::vector<double>& v_weights, const std::vector<double>& a_weights,
    const std::vector<bool>& mask) {
  const size_t n = preds.size();
  long m = 0;
  for (size_t i = 0; i < n; ++i) {
    if (mask[i]) ++m;
  }
  if (m == 0) throw ValidationError("weighted_loss_grad: zero unmasked frames");
  std::vector<std::array<double, 2>> grad(n, {0.0, 0.0});
  const double scale = 1.0 / static_cast<double>(m);
  for (size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    grad[i][0] = scale * v_weights[i] * (preds[i].valence - targets[i].first);
    grad[i][1] = scale * a_weights[i] * (preds[i].arousal - targets[i].second);
  }
  return grad;
}

// 1 - CCC over a scalar target; value in [0, 2], zero iff perfect concordance.
inline double ccc_loss(const std::vector<double>& preds,
                       const std::vector<double>& targets) {
  if (preds.size() != targets.size() || preds.size() < 2) {
    throw ValidationError("ccc_loss: need matching sequences of length >= 2");
  }
  const double n = static_cast<double>(targets.size());
  double mt = 0.0;
  for (double t : targets) mt += t;
  mt /= n;
  double vt = 0.0;
  for (double t : targets) vt += (t - mt) * (t - mt);
  if (vt == 0.0) throw ValidationError("ccc_loss: constant targets");
  return 1.0 - eval::ccc(preds, targets);
}

inline std::vector<double> ccc_loss_grad(const std::vector<double>& preds,
                                         const std::vector<double>& targets) {
  const size_t sz = preds.size();
  if (targets.size() != sz || sz < 2) {
    throw ValidationError("ccc_loss_grad: need matching sequences of length >= 2");
  }
  const double n = static_cast<double>(sz);
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < sz; ++i) {
    mx += preds[i];
    my += targets[i];
  }
  mx /= n;
  my /= n;
  double vx = 0.0, vy = 0.0, cov = 0.0;
  for (size_t i = 0; i < sz; ++i) {
    vx += (preds[i] - mx) * (preds[i] - mx);
    vy += (targets[i] - my) * (targets[i] - my);
    cov += (preds[i] - mx) * (targets[i] - my);
  }
  vx /= n;
  vy /= n;
  cov /= n;
  if (vy == 0.0) throw ValidationError("ccc_loss_grad: constant targets");
  const double denom = vx + vy + (mx - my) * (mx - my);
  std::vector<double> grad(sz, 0.0);
  for (size_t i = 0; i < sz; ++i) {
    const double dcov = (targets[i] - my) / n;
    const double ddenom = (2.0 * (preds[i] - mx) + 2.0 * (mx - my)) / n;
    grad[i] = -(2.0 * dcov * denom - 2.0 * cov * ddenom) / (denom * denom);
  }
  return grad;
}

struct EpochRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_valence_ccc = 0.0;
  double val_arousal_ccc = 0.0;
  double val_mean_ccc = 0.0;
};

struct TrainReport {
  int fold = 0;
  long seed = 0;
  std::map<std::string, std::string> config_echo;  // model + train settings
  std::vector<EpochRow> rows;
  int best_epoch = 0;
  double best_mean_ccc = -2.0;
  model::Checkpoint best_checkpoint;
  model::Checkpoint final_checkpoint;
  lds::WeightTable valence_weights;
  lds::WeightTable arousal_weights;
};

inline std::string serialize_train_report(const TrainReport& r) {
  std::ostringstream out;
  out << "varest-train-report-v1\n";
  out << "fold " << r.fold << "\n";
  out << "seed " << r.seed << "\n";
  for (const auto& [k, v] : r.config_echo) {
    out << "config " << k << " = " << v << "\n";
  }
  out << "epochs " << r.rows.size() << "\n";
  out << "best_epoch " << r.best_epoch << "\n";
  out << "best_mean_ccc " << format_exact(r.best_mean_ccc) << "\n";
  for (const auto& row : r.rows) {
    out << "epoch " << row.epoch << " train_loss " << format_exact(row.train_loss)
        << " val_valence_ccc " << format_exact(row.val_valence_ccc)
        << " val_arousal_ccc " << format_exact(row.val_arousal_ccc)
        << " val_mean_ccc " << format_exact(row.val_mean_ccc) << "\n";
  }
  out << "end\n";
  return out.str();
}

namespace detail {

struct WindowRef {
  int video = 0;
  int start = 0;
  int length = 0;
};

inline std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline void rng_from_string(std::mt19937_64& rng, const std::string& s) {
  std::istringstream is(s);
  is >> rng;
  if (!is) throw ParseError("bad RNG state in checkpoint");
}

}  // namespace detail

// Fit one fold: videos whose fold equals fold_index are held out for
// validation, the rest train. LDS weights are estimated from the training
// fold's labels only. Deterministic given (seed, fold); resumable from a
// final-state checkpoint.
inline TrainReport fit(const std::vector<dataio::VideoSequence>& dataset,
                       const dataio::FoldSplit& split, int fold_index,
                       const model::ModelConfig& model_config,
                       const TrainConfig& train_config,
                       const model::Checkpoint* resume = nullptr) {
  model_config.validate();
  train_config.validate();
  if (fold_index < 0 || fold_index >= split.k) {
    throw ConfigError("fit: fold index out of range");
  }

  std::vector<dataio::VideoSequence> train_videos, val_videos;
  for (const auto& video : dataset) {
    auto it = split.assignment.find(video.video_id);
    if (it == split.assignment.end()) {
      throw ValidationError("fit: video missing from fold split: " +
                            video.video_id);
    }
    (it->second == fold_index ? val_videos : train_videos).push_back(video);
  }
  if (train_videos.empty()) throw ValidationError("fit: empty training fold");
  if (val_videos.empty()) throw ValidationError("fit: empty validation fold");

  TrainReport report;
  report.fold = fold_index;
  report.seed = train_config.seed;
  for (const auto& [k, v] : model_config.to_kv()) {
    report.config_echo["model." + k] = v;
  }
  for (const auto& [k, v] : train_config.to_kv()) {
    report.config_echo["train." + k] = v;
  }

  // Per-target weight tables from training-fold labels only.
  const auto& lp = train_config.lds_params;
  if (train_config.lds_enabled) {
    for (auto target : {dataio::Target::kValence, dataio::Target::kArousal}) {
      const auto labels = dataio::collect_labels(train_videos, target);
      const auto hist = lds::empirical_density(labels, lp.n_bins);
      const auto density = lds::smooth_density(hist, lp.smoothing_kernel());
      auto table = lds::compute_weights(density, lp.clip_max, labels);
      (target == dataio::Target::kValence ? report.valence_weights
                                          : report.arousal_weights) =
          std::move(table);
    }
  } else {
    report.valence_weights = lds::unit_weight_table(lp.n_bins);
    report.arousal_weights = lds::unit_weight_table(lp.n_bins);
  }

  const bool two_stream = model_config.mode == model::Mode::kTwoStream;
  std::optional<phase::FilterBank> bank;
  std::vector<std::vector<phase::PhaseDiffStack>> train_stacks(
      train_videos.size());
  if (two_stream) {
    bank = phase::build_filter_bank(model_config.n_scales,
                                    model_config.n_orientations,
                                    model_config.image_size);
    for (size_t i = 0; i < train_videos.size(); ++i) {
      if (train_videos[i].n_frames() >= 2) {
        train_stacks[i] = phase::cached_sequence_phase_diffs(
            train_videos[i], *bank, model_config.amplitude_quantile,
            train_config.cache_dir);
      }
    }
  }

  // Non-overlapping training windows, kept only if they contain at least one
  // annotated frame.
  const int w = train_config.window_length;
  std::vector<detail::WindowRef> windows;
  for (size_t vi = 0; vi < train_videos.size(); ++vi) {
    const auto& video = train_videos[vi];
    for (int s = 0; s < video.n_frames(); s += w) {
      const int len = std::min(w, video.n_frames() - s);
      bool any = false;
      for (int t = s; t < s + len; ++t) {
        if (video.frames[static_cast<size_t>(t)].annotated()) {
          any = true;
          break;
        }
      }
      if (any) windows.push_back({static_cast<int>(vi), s, len});
    }
  }
  if (windows.empty()) throw ValidationError("fit: no trainable windows");

  model::TwoStreamModel m(model_config);
  std::mt19937_64 rng(mix_seed(static_cast<std::uint64_t>(train_config.seed),
                               static_cast<std::uint64_t>(fold_index)));
  std::map<std::string, Eigen::VectorXd> momenta;
  int start_epoch = 0;
  if (resume) {
    model::restore(m, *resume);
    momenta = resume->momenta;
    detail::rng_from_string(rng, resume->rng_state);
    start_epoch = static_cast<int>(resume->epoch);
    if (start_epoch >= train_config.epochs) {
      throw ConfigError("fit: resume epoch is past the configured epochs");
    }
  } else {
    m.init(rng);
  }
  for (model::Param* p : m.params()) {
    if (!momenta.count(p->name)) {
      momenta[p->name] = Eigen::VectorXd::Zero(p->size());
    }
  }

  const auto weight_of = [](const lds::WeightTable& table, double label) {
    return lds::weight_for(table, label);
  };

  for (int epoch = start_epoch + 1; epoch <= train_config.epochs; ++epoch) {
    std::vector<size_t> order(windows.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    size_t cursor = 0;
    while (cursor < order.size()) {
      const size_t batch_n = std::min<size_t>(
          static_cast<size_t>(train_config.batch_windows),
          order.size() - cursor);
      m.zero_grads();
      for (size_t bi = 0; bi < batch_n; ++bi) {
        const auto& ref = windows[order[cursor + bi]];
        const auto& video = train_videos[static_cast<size_t>(ref.video)];
        std::vector<const Image*> frames;
        std::vector<const phase::PhaseDiffStack*> stacks;
        std::vector<std::pair<double, double>> targets;
        std::vector<double> vw, aw;
        std::vector<bool> mask;
        for (int t = ref.start; t < ref.start + ref.length; ++t) {
          const auto& f = video.frames[static_cast<size_t>(t)];
          frames.push_back(f.image.get());
          targets.emplace_back(f.valence, f.arousal);
          mask.push_back(f.annotated());
          vw.push_back(f.annotated()
                           ? weight_of(report.valence_weights, f.valence)
                           : 1.0);
          aw.push_back(f.annotated()
                           ? weight_of(report.arousal_weights, f.arousal)
                           : 1.0);
        }
        if (two_stream) {
          for (int t = ref.start; t < ref.start + ref.length - 1; ++t) {
            stacks.push_back(
                &train_stacks[static_cast<size_t>(ref.video)][static_cast<size_t>(t)]);
          }
        }

        model::WindowCache cache;
        const auto preds = m.forward_window(frames, stacks, &cache);
        double window_loss = weighted_loss(preds, targets, vw, aw, mask);
        auto dpred = weighted_loss_grad(preds, targets, vw, aw, mask);

        if (train_config.loss == LossKind::kWeightedMsePlusCcc) {
          // Optional auxiliary term on the window's unmasked frames; skipped
          // when the window cannot support a CCC (too short or constant).
          std::vector<size_t> idx;
          std::vector<double> pv, pa, tv, ta;
          for (size_t t = 0; t < preds.size(); ++t) {
            if (!mask[t]) continue;
            idx.push_back(t);
            pv.push_back(preds[t].valence);
            pa.push_back(preds[t].arousal);
            tv.push_back(targets[t].first);
            ta.push_back(targets[t].second);
          }
          auto variance = [](const std::vector<double>& xs) {
            double mu = 0.0;
            for (double x : xs) mu += x;
            mu /= static_cast<double>(xs.size());
            double v = 0.0;
            for (double x : xs) v += (x - mu) * (x - mu);
            return v;
          };
          if (idx.size() >= 2 && variance(tv) > 0.0 && variance(ta) > 0.0) {
            const double lam = train_config.ccc_loss_weight;
            window_loss += lam * 0.5 * (ccc_loss(pv, tv) + ccc_loss(pa, ta));
            const auto gv = ccc_loss_grad(pv, tv);
            const auto ga = ccc_loss_grad(pa, ta);
            for (size_t j = 0; j < idx.size(); ++j) {
              dpred[idx[j]][0] += lam * 0.5 * gv[j];
              dpred[idx[j]][1] += lam * 0.5 * ga[j];
            }
          }
        }

        if (!std::isfinite(window_loss)) {
          throw std::runtime_error(
              "fit: training diverged (non-finite loss) at epoch " +
              std::to_string(epoch) + ", video " + video.video_id +
              ", frame " + std::to_string(ref.start));
        }
        loss_sum += window_loss;

        const double inv_batch = 1.0 / static_cast<double>(batch_n);
        for (auto& g : dpred) {
          g[0] *= inv_batch;
          g[1] *= inv_batch;
        }
        m.backward_window(dpred, cache);
      }
      // SGD with classic momentum; updates are single-threaded by contract.
      for (model::Param* p : m.params()) {
        auto& vel = momenta[p->name];
        vel = train_config.momentum * vel - train_config.learning_rate * p->grad;
        p->value += vel;
      }
      cursor += batch_n;
    }

    EpochRow row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(windows.size());

    const auto val_report = eval::evaluate(m, val_videos, eval::Pooling::kPooled,
                                           bank ? &*bank : nullptr);
    row.val_valence_ccc = val_report.pooled_valence_ccc;
    row.val_arousal_ccc = val_report.pooled_arousal_ccc;
    row.val_mean_ccc = val_report.mean_ccc_value;
    report.rows.push_back(row);

    if (row.val_mean_ccc > report.best_mean_ccc) {
      report.best_mean_ccc = row.val_mean_ccc;
      report.best_epoch = epoch;
      report.best_checkpoint =
          model::snapshot(m, momenta, epoch, detail::rng_to_string(rng));
    }
    report.final_checkpoint =
        model::snapshot(m, momenta, epoch, detail::rng_to_string(rng));
  }
  return report;
}

}  // namespace varest::train
