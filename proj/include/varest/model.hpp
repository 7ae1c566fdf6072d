// Two-stream per-frame valence/arousal regressor.
//
// Spatial stream: feature extractor + MLP. Temporal stream: a single
// convolution block over phase-difference stacks. A gated recurrence over the
// window fuses both streams into per-frame predictions squashed to [-1, 1].
// Forward and backward passes are hand-written in double precision so the
// whole chain is finite-difference checkable.
#pragma once

#include <Eigen/Core>
#include <any>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "varest/common.hpp"
#include "varest/image.hpp"
#include "varest/phasediff.hpp"

namespace varest::model {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using ChannelStack = std::vector<Eigen::ArrayXXd>;

struct Prediction {
  double valence = 0.0;
  double arousal = 0.0;
};

enum class Mode { kTwoStream, kSpatialOnly };

inline const char* mode_name(Mode m) {
  return m == Mode::kTwoStream ? "two_stream" : "spatial_only";
}

inline Mode mode_from_name(const std::string& s) {
  if (s == "two_stream") return Mode::kTwoStream;
  if (s == "spatial_only") return Mode::kSpatialOnly;
  throw ConfigError("unknown model mode: " + s);
}

struct ModelConfig {
  int spatial_feature_dim = 32;
  int mlp_hidden = 64;
  int temporal_channels = 8;
  int recurrent_hidden = 32;
  int window_length = 16;
  Mode mode = Mode::kTwoStream;

  std::string extractor = "tiny_cnn";  // or "grid_stats"
  int image_size = 32;
  int cnn_c1 = 6, cnn_c2 = 8, cnn_c3 = 12;
  int grid = 4;  // grid_stats cells per side

  int n_scales = 2;
  int n_orientations = 4;
  double amplitude_quantile = 0.5;

  void validate() const {
    if (spatial_feature_dim < 1 || mlp_hidden < 1 || temporal_channels < 1 ||
        recurrent_hidden < 1) {
      throw ConfigError("model: dimensions must be positive");
    }
    if (window_length < 1) throw ConfigError("model: window_length must be >= 1");
    if (extractor != "tiny_cnn" && extractor != "grid_stats") {
      throw ConfigError("model: unknown extractor '" + extractor + "'");
    }
    if (image_size < 16) throw ConfigError("model: image_size must be >= 16");
    if (cnn_c1 < 1 || cnn_c2 < 1 || cnn_c3 < 1 || grid < 1) {
      throw ConfigError("model: extractor sizes must be positive");
    }
    if (n_scales < 1 || n_orientations < 2) {
      throw ConfigError("model: phase bank parameters out of range");
    }
    if (amplitude_quantile < 0.0 || amplitude_quantile >= 1.0) {
      throw ConfigError("model: amplitude_quantile must be in [0,1)");
    }
  }

  std::map<std::string, std::string> to_kv() const {
    std::map<std::string, std::string> kv;
    kv["spatial_feature_dim"] = std::to_string(spatial_feature_dim);
    kv["mlp_hidden"] = std::to_string(mlp_hidden);
    kv["temporal_channels"] = std::to_string(temporal_channels);
    kv["recurrent_hidden"] = std::to_string(recurrent_hidden);
    kv["window_length"] = std::to_string(window_length);
    kv["mode"] = mode_name(mode);
    kv["extractor"] = extractor;
    kv["image_size"] = std::to_string(image_size);
    kv["cnn_c1"] = std::to_string(cnn_c1);
    kv["cnn_c2"] = std::to_string(cnn_c2);
    kv["cnn_c3"] = std::to_string(cnn_c3);
    kv["grid"] = std::to_string(grid);
    kv["n_scales"] = std::to_string(n_scales);
    kv["n_orientations"] = std::to_string(n_orientations);
    kv["amplitude_quantile"] = format_exact(amplitude_quantile);
    return kv;
  }

  static ModelConfig from_kv(const std::map<std::string, std::string>& kv) {
    ModelConfig c;
    auto get = [&kv](const char* key) -> const std::string& {
      auto it = kv.find(key);
      if (it == kv.end()) {
        throw ParseError(std::string("checkpoint config missing key ") + key);
      }
      return it->second;
    };
    c.spatial_feature_dim = std::stoi(get("spatial_feature_dim"));
    c.mlp_hidden = std::stoi(get("mlp_hidden"));
    c.temporal_channels = std::stoi(get("temporal_channels"));
    c.recurrent_hidden = std::stoi(get("recurrent_hidden"));
    c.window_length = std::stoi(get("window_length"));
    c.mode = mode_from_name(get("mode"));
    c.extractor = get("extractor");
    c.image_size = std::stoi(get("image_size"));
    c.cnn_c1 = std::stoi(get("cnn_c1"));
    c.cnn_c2 = std::stoi(get("cnn_c2"));
    c.cnn_c3 = std::stoi(get("cnn_c3"));
    c.grid = std::stoi(get("grid"));
    c.n_scales = std::stoi(get("n_scales"));
    c.n_orientations = std::stoi(get("n_orientations"));
    c.amplitude_quantile = std::stod(get("amplitude_quantile"));
    c.validate();
    return c;
  }
};

struct Param {
  std::string name;
  VectorXd value;
  VectorXd grad;
  Param() = default;
  Param(std::string n, Eigen::Index size)
      : name(std::move(n)), value(VectorXd::Zero(size)), grad(VectorXd::Zero(size)) {}
  void zero_grad() { grad.setZero(); }
  Eigen::Index size() const { return value.size(); }
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline void glorot_init(Param& p, int fan_in, int fan_out,
                        std::mt19937_64& rng) {
  const double lim = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> u(-lim, lim);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value[i] = u(rng);
}

}  // namespace detail

// ---- layers ----------------------------------------------------------------

struct DenseLayer {
  int in_dim = 0, out_dim = 0;
  Param w, b;  // w column-major (out x in)

  void build(const std::string& name, int in, int out) {
    in_dim = in;
    out_dim = out;
    w = Param(name + ".weight", static_cast<Eigen::Index>(in) * out);
    b = Param(name + ".bias", out);
  }
  void init(std::mt19937_64& rng) {
    detail::glorot_init(w, in_dim, out_dim, rng);
    b.value.setZero();
  }
  VectorXd forward(const VectorXd& x) const {
    Eigen::Map<const MatrixXd> W(w.value.data(), out_dim, in_dim);
    return W * x + b.value;
  }
  VectorXd backward(const VectorXd& x, const VectorXd& dy) {
    Eigen::Map<const MatrixXd> W(w.value.data(), out_dim, in_dim);
    Eigen::Map<MatrixXd> Gw(w.grad.data(), out_dim, in_dim);
    Gw.noalias() += dy * x.transpose();
    b.grad += dy;
    return W.transpose() * dy;
  }
};

struct ConvLayer {  // 3x3, stride 1, zero "same" padding
  int in_ch = 0, out_ch = 0;
  Param w, b;  // w indexed [((oc*in_ch + ic)*3 + ky)*3 + kx]

  void build(const std::string& name, int cin, int cout) {
    in_ch = cin;
    out_ch = cout;
    w = Param(name + ".weight", static_cast<Eigen::Index>(cout) * cin * 9);
    b = Param(name + ".bias", cout);
  }
  void init(std::mt19937_64& rng) {
    detail::glorot_init(w, in_ch * 9, out_ch * 9, rng);
    b.value.setZero();
  }
  double wat(int oc, int ic, int ky, int kx) const {
    return w.value[((static_cast<Eigen::Index>(oc) * in_ch + ic) * 3 + ky) * 3 + kx];
  }
  void forward(const ChannelStack& in, ChannelStack& out) const {
    const Eigen::Index h = in[0].rows(), wd = in[0].cols();
    out.assign(static_cast<size_t>(out_ch), Eigen::ArrayXXd::Zero(h, wd));
    for (int oc = 0; oc < out_ch; ++oc) {
      auto& dst = out[static_cast<size_t>(oc)];
      dst += b.value[oc];
      for (int ic = 0; ic < in_ch; ++ic) {
        const auto& src = in[static_cast<size_t>(ic)];
        for (int ky = 0; ky < 3; ++ky) {
          for (int kx = 0; kx < 3; ++kx) {
            const double wv = wat(oc, ic, ky, kx);
            if (wv == 0.0) continue;
            const Eigen::Index y0 = std::max<Eigen::Index>(0, 1 - ky);
            const Eigen::Index y1 = std::min<Eigen::Index>(h, h + 1 - ky);
            const Eigen::Index x0 = std::max<Eigen::Index>(0, 1 - kx);
            const Eigen::Index x1 = std::min<Eigen::Index>(wd, wd + 1 - kx);
            for (Eigen::Index y = y0; y < y1; ++y) {
              for (Eigen::Index x = x0; x < x1; ++x) {
                dst(y, x) += wv * src(y + ky - 1, x + kx - 1);
              }
            }
          }
        }
      }
    }
  }
  void backward(const ChannelStack& in, const ChannelStack& dout,
                ChannelStack* din) {
    const Eigen::Index h = in[0].rows(), wd = in[0].cols();
    if (din) din->assign(static_cast<size_t>(in_ch), Eigen::ArrayXXd::Zero(h, wd));
    for (int oc = 0; oc < out_ch; ++oc) {
      const auto& gout = dout[static_cast<size_t>(oc)];
      b.grad[oc] += gout.sum();
      for (int ic = 0; ic < in_ch; ++ic) {
        const auto& src = in[static_cast<size_t>(ic)];
        for (int ky = 0; ky < 3; ++ky) {
          for (int kx = 0; kx < 3; ++kx) {
            const Eigen::Index y0 = std::max<Eigen::Index>(0, 1 - ky);
            const Eigen::Index y1 = std::min<Eigen::Index>(h, h + 1 - ky);
            const Eigen::Index x0 = std::max<Eigen::Index>(0, 1 - kx);
            const Eigen::Index x1 = std::min<Eigen::Index>(wd, wd + 1 - kx);
            double acc = 0.0;
            const double wv = wat(oc, ic, ky, kx);
            for (Eigen::Index y = y0; y < y1; ++y) {
              for (Eigen::Index x = x0; x < x1; ++x) {
                const double g = gout(y, x);
                acc += g * src(y + ky - 1, x + kx - 1);
                if (din) (*din)[static_cast<size_t>(ic)](y + ky - 1, x + kx - 1) += wv * g;
              }
            }
            w.grad[((static_cast<Eigen::Index>(oc) * in_ch + ic) * 3 + ky) * 3 + kx] += acc;
          }
        }
      }
    }
  }
};

namespace detail {

inline void relu_forward(const ChannelStack& pre, ChannelStack& post) {
  post.resize(pre.size());
  for (size_t c = 0; c < pre.size(); ++c) post[c] = pre[c].max(0.0);
}

inline void relu_backward(const ChannelStack& pre, const ChannelStack& dpost,
                          ChannelStack& dpre) {
  dpre.resize(pre.size());
  for (size_t c = 0; c < pre.size(); ++c) {
    dpre[c] = dpost[c] * (pre[c] > 0.0).cast<double>();
  }
}

// 2x2 average pooling, stride 2; odd tail rows/cols are dropped.
inline void avgpool2_forward(const ChannelStack& in, ChannelStack& out) {
  const Eigen::Index ho = in[0].rows() / 2, wo = in[0].cols() / 2;
  out.assign(in.size(), Eigen::ArrayXXd::Zero(ho, wo));
  for (size_t c = 0; c < in.size(); ++c) {
    for (Eigen::Index y = 0; y < ho; ++y) {
      for (Eigen::Index x = 0; x < wo; ++x) {
        out[c](y, x) = 0.25 * (in[c](2 * y, 2 * x) + in[c](2 * y, 2 * x + 1) +
                               in[c](2 * y + 1, 2 * x) + in[c](2 * y + 1, 2 * x + 1));
      }
    }
  }
}

inline void avgpool2_backward(Eigen::Index in_h, Eigen::Index in_w,
                              const ChannelStack& dout, ChannelStack& din) {
  din.assign(dout.size(), Eigen::ArrayXXd::Zero(in_h, in_w));
  for (size_t c = 0; c < dout.size(); ++c) {
    for (Eigen::Index y = 0; y < dout[c].rows(); ++y) {
      for (Eigen::Index x = 0; x < dout[c].cols(); ++x) {
        const double g = 0.25 * dout[c](y, x);
        din[c](2 * y, 2 * x) += g;
        din[c](2 * y, 2 * x + 1) += g;
        din[c](2 * y + 1, 2 * x) += g;
        din[c](2 * y + 1, 2 * x + 1) += g;
      }
    }
  }
}

inline VectorXd global_avgpool(const ChannelStack& in) {
  VectorXd out(static_cast<Eigen::Index>(in.size()));
  for (size_t c = 0; c < in.size(); ++c) out[static_cast<Eigen::Index>(c)] = in[c].mean();
  return out;
}

inline void global_avgpool_backward(Eigen::Index h, Eigen::Index w,
                                    const VectorXd& dout, ChannelStack& din) {
  din.assign(static_cast<size_t>(dout.size()), Eigen::ArrayXXd::Zero(h, w));
  const double scale = 1.0 / static_cast<double>(h * w);
  for (Eigen::Index c = 0; c < dout.size(); ++c) {
    din[static_cast<size_t>(c)].setConstant(dout[c] * scale);
  }
}

}  // namespace detail

// ---- feature extractors ----------------------------------------------------

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string kind() const = 0;
  virtual int feature_dim() const = 0;
  virtual std::vector<Param*> params() = 0;
  virtual void init(std::mt19937_64& rng) = 0;
  virtual VectorXd forward(const Image& frame, std::any* cache) const = 0;
  // Accumulates parameter gradients; image gradients are never needed.
  virtual void backward(const VectorXd& dfeat, std::any& cache) = 0;
};

// Three conv blocks (conv3x3 -> relu -> avgpool2) and a global average pool.
class TinyCnnExtractor final : public FeatureExtractor {
 public:
  TinyCnnExtractor(int c1, int c2, int c3) {
    conv1_.build("spatial.extractor.conv1", 1, c1);
    conv2_.build("spatial.extractor.conv2", c1, c2);
    conv3_.build("spatial.extractor.conv3", c2, c3);
  }
  std::string kind() const override { return "tiny_cnn"; }
  int feature_dim() const override { return conv3_.out_ch; }
  std::vector<Param*> params() override {
    return {&conv1_.w, &conv1_.b, &conv2_.w, &conv2_.b, &conv3_.w, &conv3_.b};
  }
  void init(std::mt19937_64& rng) override {
    conv1_.init(rng);
    conv2_.init(rng);
    conv3_.init(rng);
  }

  struct Cache {
    ChannelStack in0, pre1, post1, pool1, pre2, post2, pool2, pre3, post3;
  };

  VectorXd forward(const Image& frame, std::any* cache) const override {
    Cache local;
    Cache& c = cache ? (cache->emplace<Cache>(), *std::any_cast<Cache>(cache)) : local;
    c.in0.assign(1, frame);
    conv1_.forward(c.in0, c.pre1);
    detail::relu_forward(c.pre1, c.post1);
    detail::avgpool2_forward(c.post1, c.pool1);
    conv2_.forward(c.pool1, c.pre2);
    detail::relu_forward(c.pre2, c.post2);
    detail::avgpool2_forward(c.post2, c.pool2);
    conv3_.forward(c.pool2, c.pre3);
    detail::relu_forward(c.pre3, c.post3);
    return detail::global_avgpool(c.post3);
  }

  void backward(const VectorXd& dfeat, std::any& cache) override {
    auto& c = *std::any_cast<Cache>(&cache);
    ChannelStack dpost3, dpre3, dpool2, dpost2, dpre2, dpool1, dpost1, dpre1;
    detail::global_avgpool_backward(c.post3[0].rows(), c.post3[0].cols(), dfeat,
                                    dpost3);
    detail::relu_backward(c.pre3, dpost3, dpre3);
    conv3_.backward(c.pool2, dpre3, &dpool2);
    detail::avgpool2_backward(c.post2[0].rows(), c.post2[0].cols(), dpool2,
                              dpost2);
    detail::relu_backward(c.pre2, dpost2, dpre2);
    conv2_.backward(c.pool1, dpre2, &dpool1);
    detail::avgpool2_backward(c.post1[0].rows(), c.post1[0].cols(), dpool1,
                              dpost1);
    detail::relu_backward(c.pre1, dpost1, dpre1);
    conv1_.backward(c.in0, dpre1, nullptr);
  }

 private:
  ConvLayer conv1_, conv2_, conv3_;
};

// Parameter-free grid statistics: per cell, the mean intensity and the mean
// absolute deviation from the cell mean. Cheap stand-in backbone for
// desk-scale experiments.
class GridStatsExtractor final : public FeatureExtractor {
 public:
  explicit GridStatsExtractor(int grid) : grid_(grid) {}
  std::string kind() const override { return "grid_stats"; }
  int feature_dim() const override { return 2 * grid_ * grid_; }
  std::vector<Param*> params() override { return {}; }
  void init(std::mt19937_64&) override {}

  VectorXd forward(const Image& frame, std::any* cache) const override {
    if (cache) cache->reset();
    VectorXd out(feature_dim());
    const Eigen::Index h = frame.rows(), w = frame.cols();
    int idx = 0;
    for (int gy = 0; gy < grid_; ++gy) {
      const Eigen::Index y0 = h * gy / grid_, y1 = h * (gy + 1) / grid_;
      for (int gx = 0; gx < grid_; ++gx) {
        const Eigen::Index x0 = w * gx / grid_, x1 = w * (gx + 1) / grid_;
        const auto cell = frame.block(y0, x0, y1 - y0, x1 - x0);
        const double mean = cell.mean();
        const double mad = (cell - mean).abs().mean();
        out[idx++] = mean;
        out[idx++] = mad;
      }
    }
    return out;
  }

  void backward(const VectorXd&, std::any&) override {}

 private:
  int grid_;
};

inline std::unique_ptr<FeatureExtractor> make_extractor(const ModelConfig& c) {
  if (c.extractor == "tiny_cnn") {
    return std::make_unique<TinyCnnExtractor>(c.cnn_c1, c.cnn_c2, c.cnn_c3);
  }
  return std::make_unique<GridStatsExtractor>(c.grid);
}

// ---- gated recurrence ------------------------------------------------------

struct GruLayer {
  int in_dim = 0, hidden = 0;
  Param wz, uz, bz, wr, ur, br, wh, uh, bh;

  void build(const std::string& name, int in, int hid) {
    in_dim = in;
    hidden = hid;
    const auto dim_wu = static_cast<Eigen::Index>(hid);
    wz = Param(name + ".wz", dim_wu * in);
    uz = Param(name + ".uz", dim_wu * hid);
    bz = Param(name + ".bz", hid);
    wr = Param(name + ".wr", dim_wu * in);
    ur = Param(name + ".ur", dim_wu * hid);
    br = Param(name + ".br", hid);
    wh = Param(name + ".wh", dim_wu * in);
    uh = Param(name + ".uh", dim_wu * hid);
    bh = Param(name + ".bh", hid);
  }
  void init(std::mt19937_64& rng) {
    detail::glorot_init(wz, in_dim, hidden, rng);
    detail::glorot_init(uz, hidden, hidden, rng);
    bz.value.setZero();
    detail::glorot_init(wr, in_dim, hidden, rng);
    detail::glorot_init(ur, hidden, hidden, rng);
    br.value.setZero();
    detail::glorot_init(wh, in_dim, hidden, rng);
    detail::glorot_init(uh, hidden, hidden, rng);
    bh.value.setZero();
  }
  std::vector<Param*> params() {
    return {&wz, &uz, &bz, &wr, &ur, &br, &wh, &uh, &bh};
  }

  struct StepCache {
    VectorXd x, h_prev, z, r, hh;
  };

  VectorXd step(const VectorXd& x, const VectorXd& h_prev,
                StepCache* cache) const {
    Eigen::Map<const MatrixXd> Wz(wz.value.data(), hidden, in_dim);
    Eigen::Map<const MatrixXd> Uz(uz.value.data(), hidden, hidden);
    Eigen::Map<const MatrixXd> Wr(wr.value.data(), hidden, in_dim);
    Eigen::Map<const MatrixXd> Ur(ur.value.data(), hidden, hidden);
    Eigen::Map<const MatrixXd> Wh(wh.value.data(), hidden, in_dim);
    Eigen::Map<const MatrixXd> Uh(uh.value.data(), hidden, hidden);
    VectorXd z = (Wz * x + Uz * h_prev + bz.value)
                     .unaryExpr([](double v) { return detail::sigmoid(v); });
    VectorXd r = (Wr * x + Ur * h_prev + br.value)
                     .unaryExpr([](double v) { return detail::sigmoid(v); });
    VectorXd hh = (Wh * x + Uh * (r.array() * h_prev.array()).matrix() + bh.value)
                      .unaryExpr([](double v) { return std::tanh(v); });
    VectorXd h = ((1.0 - z.array()) * h_prev.array() + z.array() * hh.array());
    if (cache) *cache = StepCache{x, h_prev, z, r, hh};
    return h;
  }

  // Returns dL/dh_prev; writes dL/dx into dx and accumulates parameter grads.
  VectorXd backward_step(const StepCache& c, const VectorXd& dh, VectorXd& dx) {
    Eigen::Map<const MatrixXd> Wz(wz.value.data(), hidden, in_dim);
    Eigen::Map<const MatrixXd> Uz(uz.value.data(), hidden, hidden);
    Eigen::Map<const MatrixXd> Wr(wr.value.data(), hidden, in_dim);
    Eigen::Map<const MatrixXd> Ur(ur.value.data(), hidden, hidden);
    Eigen::Map<const MatrixXd> Wh(wh.value.data(), hidden, in_dim);
    Eigen::Map<const MatrixXd> Uh(uh.value.data(), hidden, hidden);
    Eigen::Map<MatrixXd> Gwz(wz.grad.data(), hidden, in_dim);
    Eigen::Map<MatrixXd> Guz(uz.grad.data(), hidden, hidden);
    Eigen::Map<MatrixXd> Gwr(wr.grad.data(), hidden, in_dim);
    Eigen::Map<MatrixXd> Gur(ur.grad.data(), hidden, hidden);
    Eigen::Map<MatrixXd> Gwh(wh.grad.data(), hidden, in_dim);
    Eigen::Map<MatrixXd> Guh(uh.grad.data(), hidden, hidden);

    const VectorXd dz = (dh.array() * (c.hh.array() - c.h_prev.array())).matrix();
    const VectorXd dhh = (dh.array() * c.z.array()).matrix();
    VectorXd dh_prev = (dh.array() * (1.0 - c.z.array())).matrix();

    const VectorXd dah = (dhh.array() * (1.0 - c.hh.array().square())).matrix();
    const VectorXd rh = (c.r.array() * c.h_prev.array()).matrix();
    Gwh.noalias() += dah * c.x.transpose();
    Guh.noalias() += dah * rh.transpose();
    bh.grad += dah;
    const VectorXd drh = Uh.transpose() * dah;
    const VectorXd dr = (drh.array() * c.h_prev.array()).matrix();
    dh_prev += (drh.array() * c.r.array()).matrix();

    const VectorXd daz =
        (dz.array() * c.z.array() * (1.0 - c.z.array())).matrix();
    Gwz.noalias() += daz * c.x.transpose();
    Guz.noalias() += daz * c.h_prev.transpose();
    bz.grad += daz;
    dh_prev += Uz.transpose() * daz;

    const VectorXd dar =
        (dr.array() * c.r.array() * (1.0 - c.r.array())).matrix();
    Gwr.noalias() += dar * c.x.transpose();
    Gur.noalias() += dar * c.h_prev.transpose();
    br.grad += dar;
    dh_prev += Ur.transpose() * dar;

    dx = Wz.transpose() * daz + Wr.transpose() * dar + Wh.transpose() * dah;
    return dh_prev;
  }
};

// ---- the two-stream model --------------------------------------------------

struct WindowCache {
  struct SpatialFrame {
    std::any extractor;
    VectorXd feat0, m1pre, m1post, sfeat;
  };
  struct TemporalFrame {
    const phase::PhaseDiffStack* stack = nullptr;
    ChannelStack pre, post;
    VectorXd pooled, tfeat;
  };
  std::vector<SpatialFrame> spatial;
  std::vector<TemporalFrame> temporal;  // one per stack (frame 1..W-1)
  std::vector<VectorXd> fused;          // GRU inputs
  std::vector<GruLayer::StepCache> gru;
  std::vector<VectorXd> hidden;
  std::vector<VectorXd> preds;  // tanh outputs, 2 each
};

class TwoStreamModel {
 public:
  explicit TwoStreamModel(const ModelConfig& config) : config_(config) {
    config_.validate();
    extractor_ = make_extractor(config_);
    mlp1_.build("spatial.mlp.fc1", extractor_->feature_dim(), config_.mlp_hidden);
    mlp2_.build("spatial.mlp.fc2", config_.mlp_hidden, config_.spatial_feature_dim);
    if (config_.mode == Mode::kTwoStream) {
      tconv_.build("temporal.conv", config_.n_scales * config_.n_orientations,
                   config_.temporal_channels);
      tproj_.build("temporal.proj", config_.temporal_channels,
                   config_.temporal_channels);
    }
    const int fuse_dim = config_.spatial_feature_dim +
                         (config_.mode == Mode::kTwoStream
                              ? config_.temporal_channels
                              : 0);
    gru_.build("gru", fuse_dim, config_.recurrent_hidden);
    head_.build("head", config_.recurrent_hidden, 2);
  }

  const ModelConfig& config() const { return config_; }

  void init(std::mt19937_64& rng) {
    extractor_->init(rng);
    mlp1_.init(rng);
    mlp2_.init(rng);
    if (config_.mode == Mode::kTwoStream) {
      tconv_.init(rng);
      tproj_.init(rng);
    }
    gru_.init(rng);
    head_.init(rng);
  }

  std::vector<Param*> params() {
    std::vector<Param*> all = extractor_->params();
    all.push_back(&mlp1_.w);
    all.push_back(&mlp1_.b);
    all.push_back(&mlp2_.w);
    all.push_back(&mlp2_.b);
    if (config_.mode == Mode::kTwoStream) {
      all.push_back(&tconv_.w);
      all.push_back(&tconv_.b);
      all.push_back(&tproj_.w);
      all.push_back(&tproj_.b);
    }
    for (Param* p : gru_.params()) all.push_back(p);
    all.push_back(&head_.w);
    all.push_back(&head_.b);
    return all;
  }

  void zero_grads() {
    for (Param* p : params()) p->zero_grad();
  }

  std::int64_t count_parameters() {
    std::int64_t n = 0;
    for (Param* p : params()) n += p->size();
    return n;
  }

  // Spatial stream: extractor features through the MLP, one vector per frame.
  std::vector<VectorXd> spatial_forward(
      const std::vector<const Image*>& frames,
      std::vector<WindowCache::SpatialFrame>* caches) const {
    if (frames.empty()) throw ValidationError("spatial_forward: empty batch");
    if (caches) caches->resize(frames.size());
    std::vector<VectorXd> out;
    out.reserve(frames.size());
    for (size_t i = 0; i < frames.size(); ++i) {
      const Image& img = *frames[i];
      if (img.rows() != config_.image_size || img.cols() != config_.image_size) {
        throw ValidationError("spatial_forward: frame size mismatch");
      }
      WindowCache::SpatialFrame local;
      WindowCache::SpatialFrame& c = caches ? (*caches)[i] : local;
      c.feat0 = extractor_->forward(img, caches ? &c.extractor : nullptr);
      c.m1pre = mlp1_.forward(c.feat0);
      c.m1post = c.m1pre.cwiseMax(0.0);
      c.sfeat = mlp2_.forward(c.m1post);
      out.push_back(c.sfeat);
    }
    return out;
  }

  // Temporal stream: one convolution block (conv -> relu -> spatial pooling)
  // and a linear projection, one vector per phase-difference stack.
  std::vector<VectorXd> temporal_forward(
      const std::vector<const phase::PhaseDiffStack*>& stacks,
      std::vector<WindowCache::TemporalFrame>* caches) const {
    if (config_.mode != Mode::kTwoStream) {
      throw ValidationError("temporal_forward: model is spatial_only");
    }
    if (caches) caches->resize(stacks.size());
    std::vector<VectorXd> out;
    out.reserve(stacks.size());
    for (size_t i = 0; i < stacks.size(); ++i) {
      const phase::PhaseDiffStack& stack = *stacks[i];
      if (stack.n_filters() != tconv_.in_ch ||
          stack.diff.empty() ||
          stack.diff[0].rows() != config_.image_size ||
          stack.diff[0].cols() != config_.image_size) {
        throw ValidationError("temporal_forward: stack shape mismatch");
      }
      WindowCache::TemporalFrame local;
      WindowCache::TemporalFrame& c = caches ? (*caches)[i] : local;
      c.stack = &stack;
      tconv_.forward(stack.diff, c.pre);
      detail::relu_forward(c.pre, c.post);
      c.pooled = detail::global_avgpool(c.post);
      c.tfeat = tproj_.forward(c.pooled);
      out.push_back(c.tfeat);
    }
    return out;
  }

  // Concatenate per-frame features, run the gated recurrence over the window
  // and squash the linear head with tanh. Temporal features may be one
  // shorter than spatial; the first frame then gets a zero temporal feature.
  std::vector<Prediction> fuse_and_regress(
      const std::vector<VectorXd>& spatial_feats,
      const std::vector<VectorXd>& temporal_feats, WindowCache* cache) const {
    const size_t n = spatial_feats.size();
    if (n == 0) throw ValidationError("fuse_and_regress: empty window");
    if (config_.mode == Mode::kTwoStream &&
        temporal_feats.size() != n && temporal_feats.size() + 1 != n) {
      throw ValidationError("fuse_and_regress: temporal feature count mismatch");
    }
    std::vector<VectorXd> fused(n);
    for (size_t t = 0; t < n; ++t) {
      if (config_.mode == Mode::kSpatialOnly) {
        fused[t] = spatial_feats[t];
      } else {
        VectorXd tf;
        if (temporal_feats.size() == n) {
          tf = temporal_feats[t];
        } else if (t == 0) {
          tf = VectorXd::Zero(config_.temporal_channels);
        } else {
          tf = temporal_feats[t - 1];
        }
        fused[t].resize(spatial_feats[t].size() + tf.size());
        fused[t] << spatial_feats[t], tf;
      }
    }
    if (cache) {
      cache->fused = fused;
      cache->gru.resize(n);
      cache->hidden.resize(n);
      cache->preds.resize(n);
    }
    std::vector<Prediction> preds(n);
    VectorXd h = VectorXd::Zero(config_.recurrent_hidden);
    for (size_t t = 0; t < n; ++t) {
      h = gru_.step(fused[t], h, cache ? &cache->gru[t] : nullptr);
      VectorXd o = head_.forward(h).unaryExpr([](double v) { return std::tanh(v); });
      if (cache) {
        cache->hidden[t] = h;
        cache->preds[t] = o;
      }
      preds[t] = Prediction{o[0], o[1]};
    }
    return preds;
  }

  // Full window pass; stacks must hold W-1 entries in two_stream mode and are
  // ignored entirely in spatial_only mode.
  std::vector<Prediction> forward_window(
      const std::vector<const Image*>& frames,
      const std::vector<const phase::PhaseDiffStack*>& stacks,
      WindowCache* cache) const {
    if (frames.empty()) throw ValidationError("forward_window: empty window");
    std::vector<WindowCache::SpatialFrame>* scache =
        cache ? &cache->spatial : nullptr;
    const auto sfeats = spatial_forward(frames, scache);
    std::vector<VectorXd> tfeats;
    if (config_.mode == Mode::kTwoStream) {
      if (stacks.size() + 1 != frames.size()) {
        throw ValidationError("forward_window: need W-1 phase-diff stacks");
      }
      tfeats = temporal_forward(stacks, cache ? &cache->temporal : nullptr);
    }
    return fuse_and_regress(sfeats, tfeats, cache);
  }

  // Backward through the cached window; dpred holds dL/d(valence, arousal)
  // per frame. Accumulates into parameter grads.
  void backward_window(const std::vector<std::array<double, 2>>& dpred,
                       WindowCache& cache) {
    const size_t n = cache.preds.size();
    if (dpred.size() != n) {
      throw ValidationError("backward_window: gradient count mismatch");
    }
    std::vector<VectorXd> dfused(n);
    VectorXd dh_next = VectorXd::Zero(config_.recurrent_hidden);
    for (size_t ti = n; ti-- > 0;) {
      VectorXd do_(2);
      do_[0] = dpred[ti][0] * (1.0 - cache.preds[ti][0] * cache.preds[ti][0]);
      do_[1] = dpred[ti][1] * (1.0 - cache.preds[ti][1] * cache.preds[ti][1]);
      VectorXd dh = head_.backward(cache.hidden[ti], do_) + dh_next;
      VectorXd dx;
      dh_next = gru_.backward_step(cache.gru[ti], dh, dx);
      dfused[ti] = dx;
    }

    const bool two_stream = config_.mode == Mode::kTwoStream;
    const int sdim = config_.spatial_feature_dim;
    for (size_t t = 0; t < n; ++t) {
      const VectorXd dsfeat = two_stream ? dfused[t].head(sdim).eval() : dfused[t];
      auto& sc = cache.spatial[t];
      const VectorXd dm1post = mlp2_.backward(sc.m1post, dsfeat);
      const VectorXd dm1pre =
          (dm1post.array() * (sc.m1pre.array() > 0.0).cast<double>()).matrix();
      const VectorXd dfeat0 = mlp1_.backward(sc.feat0, dm1pre);
      extractor_->backward(dfeat0, sc.extractor);

      if (two_stream && t > 0) {
        auto& tc = cache.temporal[t - 1];
        const VectorXd dtfeat = dfused[t].tail(config_.temporal_channels);
        const VectorXd dpooled = tproj_.backward(tc.pooled, dtfeat);
        ChannelStack dpost, dpre;
        detail::global_avgpool_backward(tc.post[0].rows(), tc.post[0].cols(),
                                        dpooled, dpost);
        detail::relu_backward(tc.pre, dpost, dpre);
        tconv_.backward(tc.stack->diff, dpre, nullptr);
      }
    }
  }

  FeatureExtractor& extractor() { return *extractor_; }

 private:
  ModelConfig config_;
  std::unique_ptr<FeatureExtractor> extractor_;
  DenseLayer mlp1_, mlp2_;
  ConvLayer tconv_;
  DenseLayer tproj_;
  GruLayer gru_;
  DenseLayer head_;
};

inline std::int64_t count_parameters(const ModelConfig& config) {
  TwoStreamModel model(config);
  return model.count_parameters();
}

// ---- checkpoints -----------------------------------------------------------

struct Checkpoint {
  ModelConfig config;
  std::map<std::string, VectorXd> tensors;
  std::map<std::string, VectorXd> momenta;
  long epoch = 0;
  std::string rng_state;
};

inline Checkpoint snapshot(TwoStreamModel& model,
                           const std::map<std::string, VectorXd>& momenta,
                           long epoch, const std::string& rng_state) {
  Checkpoint cp;
  cp.config = model.config();
  for (Param* p : model.params()) cp.tensors[p->name] = p->value;
  cp.momenta = momenta;
  cp.epoch = epoch;
  cp.rng_state = rng_state;
  return cp;
}

inline void restore(TwoStreamModel& model, const Checkpoint& cp) {
  for (Param* p : model.params()) {
    auto it = cp.tensors.find(p->name);
    if (it == cp.tensors.end()) {
      throw ValidationError("checkpoint missing tensor " + p->name);
    }
    if (it->second.size() != p->size()) {
      throw ValidationError("checkpoint tensor size mismatch for " + p->name);
    }
    p->value = it->second;
  }
}

namespace detail {

inline void write_tensor(std::ostream& out, const std::string& tag,
                         const std::string& name, const VectorXd& v) {
  out << tag << " " << name << " " << v.size() << "\n";
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    out << (i ? " " : "") << format_exact(v[i]);
  }
  out << "\n";
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& cp) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out << "varest-checkpoint-v1\n[config]\n";
  for (const auto& [k, v] : cp.config.to_kv()) out << k << " = " << v << "\n";
  out << "[/config]\n";
  out << "epoch " << cp.epoch << "\n";
  out << "rng " << (cp.rng_state.empty() ? "-" : cp.rng_state) << "\n";
  for (const auto& [name, v] : cp.tensors) {
    detail::write_tensor(out, "tensor", name, v);
  }
  for (const auto& [name, v] : cp.momenta) {
    detail::write_tensor(out, "momentum", name, v);
  }
  out << "end\n";
  if (!out) throw IoError("short write to checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "varest-checkpoint-v1") {
    throw ParseError("bad checkpoint magic in " + path, 1);
  }
  if (!std::getline(in, line) || line != "[config]") {
    throw ParseError("expected [config] in " + path, 2);
  }
  std::map<std::string, std::string> kv;
  while (std::getline(in, line) && line != "[/config]") {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw ParseError("bad config line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  Checkpoint cp;
  cp.config = ModelConfig::from_kv(kv);
  std::string word;
  while (in >> word) {
    if (word == "end") break;
    if (word == "epoch") {
      in >> cp.epoch;
    } else if (word == "rng") {
      std::getline(in, line);
      cp.rng_state = line.empty() ? "" : line.substr(1);
      if (cp.rng_state == "-") cp.rng_state.clear();
    } else if (word == "tensor" || word == "momentum") {
      std::string name;
      Eigen::Index n = 0;
      in >> name >> n;
      VectorXd v(n);
      for (Eigen::Index i = 0; i < n; ++i) in >> v[i];
      (word == "tensor" ? cp.tensors : cp.momenta)[name] = std::move(v);
    } else {
      throw ParseError("unexpected token in checkpoint: " + word);
    }
  }
  if (!in) throw ParseError("truncated checkpoint: " + path);
  return cp;
}

}  // namespace varest::model
