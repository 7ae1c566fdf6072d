// Concordance correlation coefficient, missing-frame imputation, and
// model evaluation over aligned video sequences.
#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "varest/common.hpp"
#include "varest/dataio.hpp"
#include "varest/model.hpp"
#include "varest/phasediff.hpp"

namespace varest::eval {

// CCC = 2 cov(x,y) / (var x + var y + (mean x - mean y)^2), population
// moments. Algebraically equal to the correlation form but defined when one
// sequence is constant. Degenerate case: both constant and equal -> 1 (and
// *degenerate set when provided); both constant and unequal -> 0.
inline double ccc(const std::vector<double>& x, const std::vector<double>& y,
                  bool* degenerate = nullptr) {
  if (x.size() != y.size()) throw ValidationError("ccc: length mismatch");
  if (x.size() < 2) throw ValidationError("ccc: need at least 2 samples");
  if (degenerate) *degenerate = false;
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double vx = 0.0, vy = 0.0, cov = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    vx += dx * dx;
    vy += dy * dy;
    cov += dx * dy;
  }
  vx /= n;
  vy /= n;
  cov /= n;
  const double denom = vx + vy + (mx - my) * (mx - my);
  if (denom == 0.0) {
    if (degenerate) *degenerate = true;
    return 1.0;
  }
  return std::clamp(2.0 * cov / denom, -1.0, 1.0);
}

inline double mean_ccc(double valence_ccc, double arousal_ccc) {
  if (std::abs(valence_ccc) > 1.0 + 1e-9 || std::abs(arousal_ccc) > 1.0 + 1e-9) {
    throw ValidationError("mean_ccc: inputs must lie in [-1, 1]");
  }
  return 0.5 * (valence_ccc + arousal_ccc);
}

// Missing-frame rules: leading missing frames get the -5 sentinel as their
// prediction; any later missing frame copies the nearest preceding emitted
// prediction. Idempotent.
inline std::vector<model::Prediction> impute_missing(
    const std::vector<std::optional<model::Prediction>>& predictions) {
  std::vector<model::Prediction> out;
  out.reserve(predictions.size());
  bool seen = false;
  model::Prediction last{kSentinel, kSentinel};
  for (const auto& p : predictions) {
    if (p.has_value()) {
      seen = true;
      last = *p;
      out.push_back(*p);
    } else if (!seen) {
      out.push_back(model::Prediction{kSentinel, kSentinel});
    } else {
      out.push_back(last);
    }
  }
  return out;
}

enum class Pooling { kPooled, kPerVideo };

inline const char* pooling_name(Pooling p) {
  return p == Pooling::kPooled ? "pooled" : "per_video";
}

struct EvalReport {
  Pooling pooling = Pooling::kPooled;
  std::map<std::string, std::pair<double, double>> per_video;  // id -> (v, a)
  double pooled_valence_ccc = 0.0;
  double pooled_arousal_ccc = 0.0;
  double mean_ccc_value = 0.0;  // always from the pooled CCCs
  double macro_valence_ccc = 0.0;  // average of per-video CCCs
  double macro_arousal_ccc = 0.0;
  long n_frames_scored = 0;
  long degenerate_ccc_count = 0;
};

// Per-frame predictions for a whole video. Windows tile the sequence at
// stride W; a shorter tail is covered by one final window aligned to the end,
// and frames predicted by an earlier window keep their first prediction.
inline std::vector<model::Prediction> predict_video(
    const model::TwoStreamModel& m, const dataio::VideoSequence& video,
    const phase::FilterBank* bank) {
  const int t_total = video.n_frames();
  if (t_total == 0) throw ValidationError("predict_video: empty video");
  const int w = m.config().window_length;
  const bool two_stream = m.config().mode == model::Mode::kTwoStream;

  std::vector<phase::PhaseDiffStack> stacks;
  if (two_stream && t_total >= 2) {
    if (!bank) throw ValidationError("predict_video: two_stream needs a bank");
    stacks = phase::sequence_phase_diffs(video, *bank,
                                         m.config().amplitude_quantile);
  }

  std::vector<int> starts;
  for (int s = 0; s + w <= t_total; s += w) starts.push_back(s);
  if (t_total % w != 0) starts.push_back(std::max(0, t_total - w));
  if (starts.empty()) starts.push_back(0);

  std::vector<std::optional<model::Prediction>> merged(
      static_cast<size_t>(t_total));
  for (int s : starts) {
    const int len = std::min(w, t_total - s);
    std::vector<const Image*> frames;
    std::vector<const phase::PhaseDiffStack*> window_stacks;
    frames.reserve(static_cast<size_t>(len));
    for (int t = s; t < s + len; ++t) {
      frames.push_back(video.frames[static_cast<size_t>(t)].image.get());
    }
    if (two_stream) {
      for (int t = s; t < s + len - 1; ++t) {
        window_stacks.push_back(&stacks[static_cast<size_t>(t)]);
      }
    }
    const auto preds = m.forward_window(frames, window_stacks, nullptr);
    for (int t = 0; t < len; ++t) {
      auto& slot = merged[static_cast<size_t>(s + t)];
      if (!slot.has_value()) slot = preds[static_cast<size_t>(t)];
    }
  }
  std::vector<model::Prediction> out;
  out.reserve(static_cast<size_t>(t_total));
  for (auto& p : merged) out.push_back(*p);
  return out;
}

// Score per-video prediction streams against ground truth. Frames with a
// sentinel label are never scored; frames whose prediction is the sentinel
// (imputed leading-missing frames) are skipped as well.
inline EvalReport score_predictions(
    const std::vector<dataio::VideoSequence>& videos,
    const std::vector<std::vector<model::Prediction>>& predictions,
    Pooling pooling) {
  if (videos.size() != predictions.size()) {
    throw ValidationError("score_predictions: video/prediction count mismatch");
  }
  EvalReport report;
  report.pooling = pooling;
  std::vector<double> all_pv, all_pa, all_tv, all_ta;
  double macro_v = 0.0, macro_a = 0.0;
  long macro_n = 0;
  for (size_t vi = 0; vi < videos.size(); ++vi) {
    const auto& video = videos[vi];
    const auto& preds = predictions[vi];
    if (preds.size() != video.frames.size()) {
      throw ValidationError("score_predictions: prediction length mismatch for " +
                            video.video_id);
    }
    std::vector<double> pv, pa, tv, ta;
    for (size_t t = 0; t < preds.size(); ++t) {
      const auto& f = video.frames[t];
      if (!f.annotated() || is_sentinel(preds[t].valence)) continue;
      pv.push_back(preds[t].valence);
      pa.push_back(preds[t].arousal);
      tv.push_back(f.valence);
      ta.push_back(f.arousal);
    }
    all_pv.insert(all_pv.end(), pv.begin(), pv.end());
    all_pa.insert(all_pa.end(), pa.begin(), pa.end());
    all_tv.insert(all_tv.end(), tv.begin(), tv.end());
    all_ta.insert(all_ta.end(), ta.begin(), ta.end());
    if (pv.size() >= 2) {
      bool deg_v = false, deg_a = false;
      const double cv = ccc(pv, tv, &deg_v);
      const double ca = ccc(pa, ta, &deg_a);
      report.per_video[video.video_id] = {cv, ca};
      report.degenerate_ccc_count += (deg_v ? 1 : 0) + (deg_a ? 1 : 0);
      macro_v += cv;
      macro_a += ca;
      ++macro_n;
    }
  }
  report.n_frames_scored = static_cast<long>(all_pv.size());
  if (all_pv.size() < 2) {
    throw ValidationError("score_predictions: fewer than 2 scorable frames");
  }
  bool deg_v = false, deg_a = false;
  report.pooled_valence_ccc = ccc(all_pv, all_tv, &deg_v);
  report.pooled_arousal_ccc = ccc(all_pa, all_ta, &deg_a);
  report.degenerate_ccc_count += (deg_v ? 1 : 0) + (deg_a ? 1 : 0);
  report.mean_ccc_value =
      mean_ccc(report.pooled_valence_ccc, report.pooled_arousal_ccc);
  if (macro_n > 0) {
    report.macro_valence_ccc = macro_v / static_cast<double>(macro_n);
    report.macro_arousal_ccc = macro_a / static_cast<double>(macro_n);
  }
  return report;
}

// Run the model over every video and score the results.
inline EvalReport evaluate(const model::TwoStreamModel& m,
                           const std::vector<dataio::VideoSequence>& videos,
                           Pooling pooling,
                           const phase::FilterBank* bank = nullptr) {
  std::vector<std::vector<model::Prediction>> preds;
  preds.reserve(videos.size());
  for (const auto& video : videos) {
    preds.push_back(predict_video(m, video, bank));
  }
  return score_predictions(videos, preds, pooling);
}

// ---- report and prediction files -------------------------------------------

inline std::string serialize_eval_report(const EvalReport& r) {
  std::ostringstream out;
  out << "varest-eval-report-v1\n";
  out << "pooling " << pooling_name(r.pooling) << "\n";
  out << "n_frames_scored " << r.n_frames_scored << "\n";
  out << "pooled_valence_ccc " << format_exact(r.pooled_valence_ccc) << "\n";
  out << "pooled_arousal_ccc " << format_exact(r.pooled_arousal_ccc) << "\n";
  out << "mean_ccc " << format_exact(r.mean_ccc_value) << "\n";
  out << "macro_valence_ccc " << format_exact(r.macro_valence_ccc) << "\n";
  out << "macro_arousal_ccc " << format_exact(r.macro_arousal_ccc) << "\n";
  out << "degenerate_ccc_count " << r.degenerate_ccc_count << "\n";
  for (const auto& [id, vals] : r.per_video) {
    out << "per_video " << id << " " << format_exact(vals.first) << " "
        << format_exact(vals.second) << "\n";
  }
  out << "end\n";
  return out.str();
}

inline EvalReport parse_eval_report(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "varest-eval-report-v1") {
    throw ParseError("bad eval report magic", 1);
  }
  EvalReport r;
  std::string key;
  while (in >> key) {
    if (key == "end") break;
    if (key == "pooling") {
      std::string v;
      in >> v;
      r.pooling = (v == "per_video") ? Pooling::kPerVideo : Pooling::kPooled;
    } else if (key == "n_frames_scored") {
      in >> r.n_frames_scored;
    } else if (key == "pooled_valence_ccc") {
      in >> r.pooled_valence_ccc;
    } else if (key == "pooled_arousal_ccc") {
      in >> r.pooled_arousal_ccc;
    } else if (key == "mean_ccc") {
      in >> r.mean_ccc_value;
    } else if (key == "macro_valence_ccc") {
      in >> r.macro_valence_ccc;
    } else if (key == "macro_arousal_ccc") {
      in >> r.macro_arousal_ccc;
    } else if (key == "degenerate_ccc_count") {
      in >> r.degenerate_ccc_count;
    } else if (key == "per_video") {
      std::string id;
      double v = 0, a = 0;
      in >> id >> v >> a;
      r.per_video[id] = {v, a};
    } else {
      throw ParseError("unexpected key in eval report: " + key);
    }
  }
  if (!in) throw ParseError("truncated eval report");
  return r;
}

// Prediction files mirror the annotation format so the scorer and the
// ingestion parser share one format.
inline std::string serialize_predictions(
    const std::vector<model::Prediction>& preds) {
  std::vector<std::pair<double, double>> pairs;
  pairs.reserve(preds.size());
  for (const auto& p : preds) pairs.emplace_back(p.valence, p.arousal);
  return dataio::serialize_annotations(pairs);
}

}  // namespace varest::eval
