/* Copyright 2026 The crossreid Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

// Weight-shared encoder with a BN-neck and an identity classifier.
//
//   x --[W1,b1]--> act --[W2,b2]--> embedding --BN--> bn_embedding --[Wc,bc]--> logits
//
// Every modality goes through the same parameters. Metric losses consume the
// pre-BN embedding, the identity loss consumes the logits and retrieval uses
// the post-BN embedding.

#include <array>
#include <cmath>
#include <string>
#include <string_view>

#include "crossreid/core.hpp"

namespace crossreid {

enum class Activation { Relu, Identity };

inline std::string to_string(Activation a) { return a == Activation::Relu ? "relu" : "identity"; }

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "identity") return Activation::Identity;
  throw ConfigError("unknown activation '" + s + "' (expected relu|identity)");
}

struct ModelDims {
  std::size_t input = 32;
  std::size_t hidden = 64;
  std::size_t embedding = 64;
  std::size_t classes = 16;

  void validate() const {
    if (!input || !hidden || !embedding || !classes) throw ConfigError("ModelDims: all dimensions must be >= 1");
  }
  bool operator==(const ModelDims&) const = default;
};

inline constexpr std::size_t kNumTensors = 8;
inline constexpr std::array<std::string_view, kNumTensors> kTensorNames = {
    "enc_w1", "enc_b1", "enc_w2", "enc_b2", "bn_gamma", "bn_beta", "cls_w", "cls_b"};

// Gradients of every trainable tensor, in kTensorNames order.
struct ParamGrads {
  std::array<RealMatrix, kNumTensors> tensors;

  bool finite() const {
    for (const auto& t : tensors)
      if (!t.finite()) return false;
    return true;
  }
};

struct ModelParams {
  ModelDims dims;
  Activation activation = Activation::Relu;
  RealMatrix enc_w1;  // hidden x input
  RealMatrix enc_b1;  // 1 x hidden
  RealMatrix enc_w2;  // embedding x hidden
  RealMatrix enc_b2;  // 1 x embedding
  RealMatrix bn_gamma;  // 1 x embedding
  RealMatrix bn_beta;   // 1 x embedding
  RealMatrix cls_w;  // classes x embedding
  RealMatrix cls_b;  // 1 x classes
  RealVector bn_running_mean;
  RealVector bn_running_var;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  std::array<RealMatrix*, kNumTensors> tensors() {
    return {&enc_w1, &enc_b1, &enc_w2, &enc_b2, &bn_gamma, &bn_beta, &cls_w, &cls_b};
  }
  std::array<const RealMatrix*, kNumTensors> tensors() const {
    return {&enc_w1, &enc_b1, &enc_w2, &enc_b2, &bn_gamma, &bn_beta, &cls_w, &cls_b};
  }

  ParamGrads zeros_like() const {
    ParamGrads g;
    auto t = tensors();
    for (std::size_t i = 0; i < kNumTensors; ++i) g.tensors[i] = RealMatrix(t[i]->rows(), t[i]->cols());
    return g;
  }

  bool running_stats_ready() const {
    if (bn_running_mean.size() != dims.embedding || bn_running_var.size() != dims.embedding) return false;
    for (double v : bn_running_var)
      if (!(v > 0.0)) return false;
    return true;
  }

  bool operator==(const ModelParams&) const = default;
};

// He-normal encoder weights, zero biases, unit BN scale, and a classifier
// drawn with std 0.001.
inline ModelParams init_params(const ModelDims& dims, RngStream rng, Activation act = Activation::Relu) {
  dims.validate();
  ModelParams p;
  p.dims = dims;
  p.activation = act;
  auto he = [&](std::size_t rows, std::size_t cols, double stddev) {
    RealMatrix m(rows, cols);
    for (double& v : m.data()) v = stddev * rng.gaussian();
    return m;
  };
  p.enc_w1 = he(dims.hidden, dims.input, std::sqrt(2.0 / static_cast<double>(dims.input)));
  p.enc_b1 = RealMatrix(1, dims.hidden);
  p.enc_w2 = he(dims.embedding, dims.hidden, std::sqrt(2.0 / static_cast<double>(dims.hidden)));
  p.enc_b2 = RealMatrix(1, dims.embedding);
  p.bn_gamma = RealMatrix(1, dims.embedding, 1.0);
  p.bn_beta = RealMatrix(1, dims.embedding);
  p.cls_w = he(dims.classes, dims.embedding, 0.001);
  p.cls_b = RealMatrix(1, dims.classes);
  p.bn_running_mean.assign(dims.embedding, 0.0);
  p.bn_running_var.assign(dims.embedding, 1.0);
  return p;
}

enum class Mode { Train, Eval };

struct ForwardTrace {
  Mode mode = Mode::Train;
  RealMatrix input;
  RealMatrix hidden_pre;
  RealMatrix hidden;
  RealMatrix normalized;  // (embedding - mean) / sqrt(var + eps)
  RealVector mean;        // statistics used for normalization
  RealVector var;         // biased batch variance in Train mode
  RealVector inv_std;
};

struct ForwardResult {
  RealMatrix embeddings;
  RealMatrix bn_embeddings;
  RealMatrix logits;
  ForwardTrace trace;
};

namespace detail {
inline void add_bias(RealMatrix& m, const RealMatrix& bias) {
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) += bias(0, c);
}

inline RealMatrix column_sums(const RealMatrix& m) {
  RealMatrix out(1, m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(0, c) += m(r, c);
  return out;
}

inline void check_shape(const RealMatrix& m, std::size_t rows, std::size_t cols, const char* what) {
  if (m.rows() != rows || m.cols() != cols)
    throw DimensionError(std::string(what) + ": expected " + std::to_string(rows) + "x" + std::to_string(cols) +
                         ", got " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
}
}  // namespace detail

// Pure: running statistics are read in Eval mode but never written here; see
// update_running_stats.
inline ForwardResult forward(const ModelParams& params, const RealMatrix& features, Mode mode) {
  const auto& dims = params.dims;
  if (features.cols() != dims.input)
    throw DimensionError("forward: feature dim " + std::to_string(features.cols()) + " != model input " +
                         std::to_string(dims.input));
  if (features.rows() == 0) throw DimensionError("forward: empty input");
  if (!features.finite()) throw NumericError("forward: non-finite input features");
  if (mode == Mode::Train && features.rows() < 2) throw ConfigError("forward: Train mode needs batch size >= 2");
  if (mode == Mode::Eval && !params.running_stats_ready())
    throw StateError("forward: BN running statistics are not initialized");

  ForwardResult out;
  ForwardTrace& t = out.trace;
  t.mode = mode;
  t.input = features;
  t.hidden_pre = matmul_bt(features, params.enc_w1);
  detail::add_bias(t.hidden_pre, params.enc_b1);
  t.hidden = t.hidden_pre;
  if (params.activation == Activation::Relu)
    for (double& v : t.hidden.data()) v = v > 0.0 ? v : 0.0;
  out.embeddings = matmul_bt(t.hidden, params.enc_w2);
  detail::add_bias(out.embeddings, params.enc_b2);

  const std::size_t n = features.rows(), e = dims.embedding;
  if (mode == Mode::Train) {
    t.mean.assign(e, 0.0);
    t.var.assign(e, 0.0);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < e; ++c) t.mean[c] += out.embeddings(r, c);
    for (double& v : t.mean) v /= static_cast<double>(n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < e; ++c) {
        const double d = out.embeddings(r, c) - t.mean[c];
        t.var[c] += d * d;
      }
    for (double& v : t.var) v /= static_cast<double>(n);
  } else {
    t.mean = params.bn_running_mean;
    t.var = params.bn_running_var;
  }
  t.inv_std.resize(e);
  for (std::size_t c = 0; c < e; ++c) t.inv_std[c] = 1.0 / std::sqrt(t.var[c] + params.bn_eps);

  t.normalized = RealMatrix(n, e);
  out.bn_embeddings = RealMatrix(n, e);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < e; ++c) {
      const double xh = (out.embeddings(r, c) - t.mean[c]) * t.inv_std[c];
      t.normalized(r, c) = xh;
      out.bn_embeddings(r, c) = params.bn_gamma(0, c) * xh + params.bn_beta(0, c);
    }
  out.logits = matmul_bt(out.bn_embeddings, params.cls_w);
  detail::add_bias(out.logits, params.cls_b);
  return out;
}

// Exponential moving average of the batch statistics of a Train-mode trace.
// The running variance tracks the unbiased batch variance.
inline void update_running_stats(ModelParams& params, const ForwardTrace& trace) {
  if (trace.mode != Mode::Train) return;
  const double n = static_cast<double>(trace.input.rows());
  const double m = params.bn_momentum;
  for (std::size_t c = 0; c < params.dims.embedding; ++c) {
    params.bn_running_mean[c] = (1.0 - m) * params.bn_running_mean[c] + m * trace.mean[c];
    params.bn_running_var[c] = (1.0 - m) * params.bn_running_var[c] + m * trace.var[c] * n / (n - 1.0);
  }
}

struct UpstreamGrads {
  RealMatrix embeddings;     // d loss / d embeddings (may be empty)
  RealMatrix bn_embeddings;  // d loss / d bn_embeddings (may be empty)
  RealMatrix logits;         // d loss / d logits (may be empty)
};

inline ParamGrads backward(const ForwardTrace& trace, const ModelParams& params, const UpstreamGrads& up) {
  const auto& dims = params.dims;
  const std::size_t n = trace.input.rows(), e = dims.embedding;
  detail::check_shape(trace.input, n, dims.input, "backward: trace input");
  detail::check_shape(trace.normalized, n, e, "backward: trace");

  ParamGrads g = params.zeros_like();
  auto& [d_w1, d_b1, d_w2, d_b2, d_gamma, d_beta, d_cls_w, d_cls_b] = g.tensors;

  RealMatrix d_bn(n, e);
  if (!up.bn_embeddings.empty()) {
    detail::check_shape(up.bn_embeddings, n, e, "backward: d bn_embeddings");
    d_bn = up.bn_embeddings;
  }
  if (!up.logits.empty()) {
    detail::check_shape(up.logits, n, dims.classes, "backward: d logits");
    RealMatrix bn_out(n, e);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < e; ++c)
        bn_out(r, c) = params.bn_gamma(0, c) * trace.normalized(r, c) + params.bn_beta(0, c);
    d_cls_w = matmul_at(up.logits, bn_out);
    d_cls_b = detail::column_sums(up.logits);
    d_bn += matmul(up.logits, params.cls_w);
  }

  RealMatrix d_emb(n, e);
  if (!up.embeddings.empty()) {
    detail::check_shape(up.embeddings, n, e, "backward: d embeddings");
    d_emb = up.embeddings;
  }
  for (std::size_t c = 0; c < e; ++c) {
    double sum_dxh = 0.0, sum_dxh_xh = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      d_gamma(0, c) += d_bn(r, c) * trace.normalized(r, c);
      d_beta(0, c) += d_bn(r, c);
      const double dxh = d_bn(r, c) * params.bn_gamma(0, c);
      sum_dxh += dxh;
      sum_dxh_xh += dxh * trace.normalized(r, c);
    }
    for (std::size_t r = 0; r < n; ++r) {
      const double dxh = d_bn(r, c) * params.bn_gamma(0, c);
      if (trace.mode == Mode::Train)
        d_emb(r, c) += trace.inv_std[c] / static_cast<double>(n) *
                       (static_cast<double>(n) * dxh - sum_dxh - trace.normalized(r, c) * sum_dxh_xh);
      else
        d_emb(r, c) += dxh * trace.inv_std[c];
    }
  }

  d_w2 = matmul_at(d_emb, trace.hidden);
  d_b2 = detail::column_sums(d_emb);
  RealMatrix d_hidden = matmul(d_emb, params.enc_w2);
  if (params.activation == Activation::Relu)
    for (std::size_t i = 0; i < d_hidden.size(); ++i)
      if (!(trace.hidden_pre.data()[i] > 0.0)) d_hidden.data()[i] = 0.0;
  d_w1 = matmul_at(d_hidden, trace.input);
  d_b1 = detail::column_sums(d_hidden);
  return g;
}

// Post-BN embeddings under the running statistics.
inline RealMatrix extract_test_features(const ModelParams& params, const RealMatrix& features) {
  if (!params.running_stats_ready()) throw StateError("extract_test_features: BN running statistics not initialized");
  return forward(params, features, Mode::Eval).bn_embeddings;
}

}  // namespace crossreid
