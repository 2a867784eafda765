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
#include <gtest/gtest.h>

#include <cmath>

#include "crossreid/gradcheck.hpp"
#include "crossreid/model.hpp"

namespace crossreid {
namespace {

RealMatrix random_matrix(RngStream& rng, std::size_t r, std::size_t c) {
  RealMatrix m(r, c);
  for (auto& v : m.data()) v = rng.gaussian();
  return m;
}

ModelParams identity_model(std::size_t d) {
  ModelParams p = init_params({d, d, d, 3}, RngStream(0), Activation::Identity);
  p.enc_w1 = RealMatrix(d, d);
  p.enc_w2 = RealMatrix(d, d);
  for (std::size_t i = 0; i < d; ++i) p.enc_w1(i, i) = p.enc_w2(i, i) = 1.0;
  return p;
}

TEST(Forward, IdentityEncoderIsIdentityMap) {
  RngStream rng(1);
  const RealMatrix x = random_matrix(rng, 5, 4);
  const auto out = forward(identity_model(4), x, Mode::Train);
  EXPECT_EQ(out.embeddings, x);
}

TEST(Forward, EvalIsDeterministic) {
  RngStream rng(2);
  const auto p = init_params({6, 8, 4, 3}, RngStream(5));
  const RealMatrix x = random_matrix(rng, 7, 6);
  const auto a = forward(p, x, Mode::Eval), b = forward(p, x, Mode::Eval);
  EXPECT_EQ(a.embeddings, b.embeddings);
  EXPECT_EQ(a.bn_embeddings, b.bn_embeddings);
  EXPECT_EQ(a.logits, b.logits);
}

TEST(Forward, TrainBatchNormStatistics) {
  RngStream rng(3);
  auto p = init_params({5, 7, 4, 3}, RngStream(6));
  for (auto& v : p.bn_gamma.data()) v = rng.uniform(0.5, 2.0);
  for (auto& v : p.bn_beta.data()) v = rng.gaussian();
  const RealMatrix x = random_matrix(rng, 9, 5);
  const auto out = forward(p, x, Mode::Train);
  for (std::size_t c = 0; c < 4; ++c) {
    double mean = 0, var = 0, emb_mean = 0, emb_var = 0;
    for (std::size_t r = 0; r < 9; ++r) mean += out.bn_embeddings(r, c), emb_mean += out.embeddings(r, c);
    mean /= 9, emb_mean /= 9;
    for (std::size_t r = 0; r < 9; ++r) {
      var += std::pow(out.bn_embeddings(r, c) - mean, 2);
      emb_var += std::pow(out.embeddings(r, c) - emb_mean, 2);
    }
    var /= 9, emb_var /= 9;
    const double g = p.bn_gamma(0, c);
    EXPECT_NEAR(mean, p.bn_beta(0, c), 1e-6);
    // The BN epsilon shrinks the variance by var / (var + eps).
    EXPECT_NEAR(var, g * g * emb_var / (emb_var + p.bn_eps), 1e-6);
  }
}

TEST(Forward, TrainBatchNormMatchesAffineTargetsAtScale) {
  // Once the embedding variance dwarfs the BN epsilon, the batch statistics
  // land on (beta, gamma^2).
  RngStream rng(13);
  auto p = init_params({5, 7, 4, 3}, RngStream(6));
  for (auto& v : p.bn_gamma.data()) v = rng.uniform(0.5, 2.0);
  for (auto& v : p.bn_beta.data()) v = rng.gaussian();
  RealMatrix x = random_matrix(rng, 16, 5);
  for (auto& v : x.data()) v *= 1000.0;
  const auto out = forward(p, x, Mode::Train);
  for (std::size_t c = 0; c < 4; ++c) {
    double mean = 0, var = 0;
    for (std::size_t r = 0; r < 16; ++r) mean += out.bn_embeddings(r, c);
    mean /= 16;
    for (std::size_t r = 0; r < 16; ++r) var += std::pow(out.bn_embeddings(r, c) - mean, 2);
    var /= 16;
    EXPECT_NEAR(mean, p.bn_beta(0, c), 1e-6);
    EXPECT_NEAR(var, p.bn_gamma(0, c) * p.bn_gamma(0, c), 1e-6);
  }
}

TEST(Forward, Errors) {
  const auto p = init_params({4, 4, 4, 2}, RngStream(0));
  EXPECT_THROW(forward(p, RealMatrix(3, 5), Mode::Train), DimensionError);
  EXPECT_THROW(forward(p, RealMatrix(1, 4), Mode::Train), ConfigError);
  EXPECT_NO_THROW(forward(p, RealMatrix(1, 4), Mode::Eval));
  RealMatrix nan_input(2, 4);
  nan_input(1, 2) = std::nan("");
  EXPECT_THROW(forward(p, nan_input, Mode::Train), NumericError);
  auto q = p;
  q.bn_running_var.clear();
  EXPECT_THROW(forward(q, RealMatrix(2, 4), Mode::Eval), StateError);
  EXPECT_THROW(extract_test_features(q, RealMatrix(2, 4)), StateError);
}

TEST(Forward, SharedWeightsForEveryModality) {
  // One parameter set: a row produces the same embedding regardless of which
  // other rows share its Eval batch.
  RngStream rng(9);
  const auto p = init_params({4, 6, 3, 2}, RngStream(1));
  const RealMatrix x = random_matrix(rng, 4, 4);
  const auto all = forward(p, x, Mode::Eval);
  for (std::size_t r = 0; r < 4; ++r) {
    const auto one = forward(p, RealMatrix(1, 4, x.row_vector(r)), Mode::Eval);
    EXPECT_EQ(one.bn_embeddings.row_vector(0), all.bn_embeddings.row_vector(r));
  }
}

TEST(Backward, ZeroUpstreamGivesZeroGrads) {
  RngStream rng(4);
  const auto p = init_params({4, 5, 3, 2}, RngStream(2));
  const auto fw = forward(p, random_matrix(rng, 6, 4), Mode::Train);
  const auto g = backward(fw.trace, p, {RealMatrix(6, 3), RealMatrix(6, 3), RealMatrix(6, 2)});
  for (const auto& t : g.tensors)
    for (double v : t.data()) EXPECT_EQ(v, 0.0);
  const auto g2 = backward(fw.trace, p, {});
  for (const auto& t : g2.tensors)
    for (double v : t.data()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, LinearEncoderSumOfEmbeddings) {
  // With an identity first layer, d(sum of embeddings)/dW2 = column sums of
  // the inputs in every row.
  RngStream rng(5);
  auto p = identity_model(3);
  const RealMatrix x = random_matrix(rng, 4, 3);
  const auto fw = forward(p, x, Mode::Train);
  const auto g = backward(fw.trace, p, {RealMatrix(4, 3, 1.0), {}, {}});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0;
      for (std::size_t r = 0; r < 4; ++r) s += x(r, j);
      EXPECT_NEAR(g.tensors[2](i, j), s, 1e-12);
    }
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(g.tensors[3](0, i), 4.0, 1e-12);
}

TEST(Backward, ShapeMismatch) {
  RngStream rng(6);
  const auto p = init_params({4, 5, 3, 2}, RngStream(2));
  const auto fw = forward(p, random_matrix(rng, 6, 4), Mode::Train);
  EXPECT_THROW(backward(fw.trace, p, {RealMatrix(5, 3), {}, {}}), DimensionError);
  EXPECT_THROW(backward(fw.trace, p, {{}, {}, RealMatrix(6, 3)}), DimensionError);
}

TEST(Backward, EvalModeMatchesFiniteDifferences) {
  RngStream rng(7);
  auto p = init_params({4, 5, 3, 2}, RngStream(3));
  for (auto& v : p.bn_running_mean) v = rng.gaussian();
  for (auto& v : p.bn_running_var) v = rng.uniform(0.5, 2);
  for (auto& v : p.cls_w.data()) v = rng.gaussian();
  const RealMatrix x = random_matrix(rng, 3, 4);
  const RealMatrix up_emb = random_matrix(rng, 3, 3), up_bn = random_matrix(rng, 3, 3), up_log = random_matrix(rng, 3, 2);
  auto loss = [&](const ModelParams& q) {
    const auto fw = forward(q, x, Mode::Eval);
    double s = 0;
    for (std::size_t i = 0; i < up_emb.size(); ++i)
      s += up_emb.data()[i] * fw.embeddings.data()[i] + up_bn.data()[i] * fw.bn_embeddings.data()[i];
    for (std::size_t i = 0; i < up_log.size(); ++i) s += up_log.data()[i] * fw.logits.data()[i];
    return s;
  };
  const auto fw = forward(p, x, Mode::Eval);
  const auto g = backward(fw.trace, p, {up_emb, up_bn, up_log});
  for (std::size_t t = 0; t < kNumTensors; ++t) {
    ModelParams q = p;
    const double err = check_against_fd(*q.tensors()[t], g.tensors[t],
                                        [&](const RealMatrix& w) {
                                          *q.tensors()[t] = w;
                                          return loss(q);
                                        },
                                        1e-6);
    EXPECT_LE(err, 1e-6) << kTensorNames[t];
  }
}

TEST(Backward, FullObjectivesMatchFiniteDifferences) {
  GradCheckOptions opt;
  opt.instances = 6;
  opt.seed = 99;
  for (const auto& c : run_gradcheck(opt))
    if (c.name.rfind("model-", 0) == 0) {
      EXPECT_LE(c.max_rel_err, 1e-5) << c.name;
    }
}

TEST(RunningStats, UnbiasedVarianceAndMomentum) {
  RngStream rng(8);
  auto p = init_params({3, 4, 2, 2}, RngStream(4));
  const RealMatrix x = random_matrix(rng, 5, 3);
  const auto fw = forward(p, x, Mode::Train);
  update_running_stats(p, fw.trace);
  for (std::size_t c = 0; c < 2; ++c) {
    EXPECT_NEAR(p.bn_running_mean[c], 0.1 * fw.trace.mean[c], 1e-15);
    EXPECT_NEAR(p.bn_running_var[c], 0.9 + 0.1 * fw.trace.var[c] * 5.0 / 4.0, 1e-15);
  }
  // Eval traces never move the statistics.
  const auto before = p.bn_running_mean;
  update_running_stats(p, forward(p, x, Mode::Eval).trace);
  EXPECT_EQ(p.bn_running_mean, before);
}

TEST(RunningStats, ConvergeGeometricallyOnFixedBatch) {
  RngStream rng(9);
  auto p = init_params({3, 4, 2, 2}, RngStream(4));
  const RealMatrix x = random_matrix(rng, 6, 3);
  const auto fw = forward(p, x, Mode::Train);
  const auto m0 = p.bn_running_mean;
  for (int step = 1; step <= 60; ++step) {
    update_running_stats(p, forward(p, x, Mode::Train).trace);
    for (std::size_t c = 0; c < 2; ++c) {
      const double predicted = std::pow(0.9, step) * std::abs(m0[c] - fw.trace.mean[c]);
      EXPECT_NEAR(std::abs(p.bn_running_mean[c] - fw.trace.mean[c]), predicted, 1e-12);
    }
  }
}

TEST(ExtractTestFeatures, DefaultStatisticsGiveAffineMap) {
  RngStream rng(10);
  auto p = init_params({3, 4, 2, 2}, RngStream(4));
  for (auto& v : p.bn_gamma.data()) v = rng.uniform(0.5, 2);
  for (auto& v : p.bn_beta.data()) v = rng.gaussian();
  const RealMatrix x = random_matrix(rng, 4, 3);
  const RealMatrix f = extract_test_features(p, x);
  const auto fw = forward(p, x, Mode::Eval);
  EXPECT_EQ(f, fw.bn_embeddings);
  EXPECT_EQ(f, extract_test_features(p, x));
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 2; ++c)
      EXPECT_NEAR(f(r, c), p.bn_gamma(0, c) * fw.embeddings(r, c) / std::sqrt(1.0 + p.bn_eps) + p.bn_beta(0, c), 1e-12);
}

TEST(InitParams, ShapesAndScales) {
  const auto p = init_params({32, 64, 16, 10}, RngStream(0));
  EXPECT_EQ(p.enc_w1.rows(), 64u);
  EXPECT_EQ(p.enc_w1.cols(), 32u);
  EXPECT_EQ(p.cls_w.rows(), 10u);
  double s2 = 0;
  for (double v : p.enc_w1.data()) s2 += v * v;
  EXPECT_NEAR(s2 / static_cast<double>(p.enc_w1.size()), 2.0 / 32.0, 0.01);
  for (double v : p.bn_gamma.data()) EXPECT_EQ(v, 1.0);
  EXPECT_TRUE(p.running_stats_ready());
  EXPECT_EQ(p, init_params({32, 64, 16, 10}, RngStream(0)));
  EXPECT_THROW(init_params({0, 1, 1, 1}, RngStream(0)), ConfigError);
}

}  // namespace
}  // namespace crossreid
