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
#include "crossreid/losses.hpp"
#include "helpers.hpp"

namespace crossreid {
namespace {

using testing_support::batch_1d;
using testing_support::max_abs_diff;
using testing_support::permuted;
using testing_support::random_batch;
using testing_support::rows_of;
using testing_support::tag_codes;

constexpr auto V = ModalityTag::Visible;
constexpr auto G = ModalityTag::Grayscale;
constexpr auto I = ModalityTag::Infrared;

// id 0 = {0.0, 0.5}, id 1 = {0.6, 1.0}, one visible and one infrared row each.
LabeledBatch global_example() { return batch_1d({0.0, 0.5, 0.6, 1.0}, {0, 0, 1, 1}, {V, I, V, I}); }

// id 0 = {0.0, 0.2}, id 1 = {1.0, 1.2}, K = 1.
LabeledBatch center_example() { return batch_1d({0.0, 0.2, 1.0, 1.2}, {0, 0, 1, 1}, {V, I, V, I}); }

oracle::Select to_oracle(DclMode m) {
  return m == DclMode::Hard ? oracle::Select::Hard : m == DclMode::All ? oracle::Select::All : oracle::Select::Dyn;
}

// ---------------------------------------------------------------------------
// identity loss

TEST(IdentityLoss, UniformLogitsGiveLn2) {
  const auto out = identity_loss(RealMatrix(1, 2, 0.0), std::vector<int>{0});
  EXPECT_NEAR(out.value, std::log(2.0), 1e-15);
}

TEST(IdentityLoss, SaturatedCorrectClass) {
  const auto out = identity_loss(RealMatrix(1, 2, {50, -50}), std::vector<int>{0});
  EXPECT_LT(out.value, 1e-20);
  EXPECT_GE(out.value, 0.0);
}

TEST(IdentityLoss, MatchesSoftmaxOracle) {
  const auto out = identity_loss(RealMatrix(1, 2, {1, 0}), std::vector<int>{0});
  const double p0 = std::exp(1.0) / (std::exp(1.0) + 1.0);
  EXPECT_NEAR(out.value, -std::log(p0), 1e-12);
  EXPECT_NEAR(out.grad(0, 0), p0 - 1.0, 1e-12);
  EXPECT_NEAR(out.grad(0, 1), 1.0 - p0, 1e-12);
}

TEST(IdentityLoss, RandomMatchesOracle) {
  RngStream rng(5);
  for (int t = 0; t < 50; ++t) {
    RealMatrix z(6, 4);
    for (auto& v : z.data()) v = rng.gaussian() * 3;
    std::vector<int> y(6);
    for (auto& l : y) l = static_cast<int>(rng.below(4));
    EXPECT_NEAR(identity_loss(z, y).value, oracle::cross_entropy(rows_of(z), y), 1e-10);
  }
}

TEST(IdentityLoss, Errors) {
  EXPECT_THROW(identity_loss(RealMatrix(1, 2), std::vector<int>{2}), LabelError);
  EXPECT_THROW(identity_loss(RealMatrix(1, 2), std::vector<int>{-1}), LabelError);
  EXPECT_THROW(identity_loss(RealMatrix(2, 2), std::vector<int>{0}), DimensionError);
}

// ---------------------------------------------------------------------------
// batch-hard triplet

TEST(HardTripletGlobal, WellSeparatedIsZero) {
  const auto b = batch_1d({0, 0, 1, 1}, {0, 0, 1, 1}, {V, I, V, I});
  const auto out = hard_triplet_global(b, 0.1);
  EXPECT_EQ(out.value, 0.0);
  EXPECT_EQ(out.grad, RealMatrix(4, 1));
}

TEST(HardTripletGlobal, FullyCollapsedIsFourMargins) {
  const auto b = batch_1d({0.3, 0.3, 0.3, 0.3}, {0, 0, 1, 1}, {V, I, V, I});
  EXPECT_NEAR(hard_triplet_global(b, 0.1).value, 0.4, 1e-15);
}

TEST(HardTripletGlobal, DerivedExample) {
  const auto b = global_example();
  const double v = hard_triplet_global(b, 0.1).value;
  EXPECT_NEAR(v, 0.9, 1e-12);
  EXPECT_NEAR(oracle::triplet_global(rows_of(b.features), b.labels, 0.1), 0.9, 1e-12);
}

TEST(HardTripletGlobal, TiesGoToLowestRowIndex) {
  // Anchor row 0 at 0 has positives at -1 (row 1) and +1 (row 2), both at
  // distance 1; every hinge is active with m = 10.
  const auto tied = batch_1d({0.0, -1.0, 1.0, 10.0, 11.0}, {0, 0, 0, 1, 1}, {V, V, I, I, V});
  auto row1_hardest = tied, row2_hardest = tied;
  row1_hardest.features(1, 0) = -1.0 - 1e-9;
  row2_hardest.features(2, 0) = 1.0 + 1e-9;
  const auto g = hard_triplet_global(tied, 10.0).grad;
  EXPECT_LE(max_abs_diff(g, hard_triplet_global(row1_hardest, 10.0).grad), 1e-6);
  EXPECT_GT(max_abs_diff(g, hard_triplet_global(row2_hardest, 10.0).grad), 0.5);
}

TEST(HardTripletGlobal, SingleRowIdentityRejected) {
  const auto b = batch_1d({0, 1, 2}, {0, 1, 1}, {V, I, V});
  EXPECT_THROW(hard_triplet_global(b, 0.1), SamplingError);
}

TEST(HardTripletIntra, WellSeparatedIsZero) {
  const auto b = batch_1d({0, 0, 9, 9, 3, 3, 7, 7}, {0, 0, 1, 1, 0, 0, 1, 1}, {G, G, G, G, I, I, I, I});
  EXPECT_EQ(hard_triplet_intra(b, 0.1).value, 0.0);
}

TEST(HardTripletIntra, DerivedPerModalityExample) {
  // Gray part is the global example; infrared part is collapsed per identity
  // and far apart.
  const auto b = batch_1d({0.0, 0.5, 0.6, 1.0, 5, 5, 9, 9}, {0, 0, 1, 1, 0, 0, 1, 1}, {G, G, G, G, I, I, I, I});
  EXPECT_NEAR(hard_triplet_intra(b, 0.1).value, 0.9, 1e-12);
  EXPECT_NEAR(oracle::triplet_intra(rows_of(b.features), b.labels, tag_codes(b), 0.1), 0.9, 1e-12);
}

TEST(HardTripletIntra, ModalitySwapSymmetry) {
  RngStream rng(2);
  for (int t = 0; t < 20; ++t) {
    auto b = random_batch(rng, 3, 2, 3, Stage::Stage1);
    auto s = b;
    for (auto& m : s.modalities) m = m == G ? I : G;
    EXPECT_NEAR(hard_triplet_intra(b, 0.3).value, hard_triplet_intra(s, 0.3).value, 1e-12);
  }
}

TEST(HardTripletIntra, MinesOnlyWithinModality) {
  // Cross-modality rows of another identity sit on top of each anchor; intra
  // mining must ignore them.
  const auto b = batch_1d({0, 1, 10, 11, 10, 11, 0, 1}, {0, 0, 1, 1, 0, 0, 1, 1}, {G, G, G, G, I, I, I, I});
  EXPECT_EQ(hard_triplet_intra(b, 0.1).value, 0.0);
  EXPECT_GT(hard_triplet_global(b, 0.1).value, 0.0);
}

TEST(Pht, DispatchesOnStage) {
  RngStream rng(3);
  const auto gray = random_batch(rng, 2, 2, 2, Stage::Stage1);
  const auto vis = random_batch(rng, 2, 2, 2, Stage::Stage2);
  EXPECT_EQ(pht(gray, Stage::Stage1, 0.2).value, hard_triplet_intra(gray, 0.2).value);
  EXPECT_EQ(pht(vis, Stage::Stage2, 0.2).value, hard_triplet_global(vis, 0.2).value);
  EXPECT_THROW(pht(vis, Stage::Stage1, 0.2), StageError);
  EXPECT_THROW(pht(gray, Stage::Stage2, 0.2), StageError);
}

// ---------------------------------------------------------------------------
// MSEL

TEST(Msel, IdenticalRowsGiveZero) {
  const auto b = batch_1d({1, 1, 1, 1, 4, 4, 4, 4}, {0, 0, 0, 0, 1, 1, 1, 1}, {V, V, I, I, V, V, I, I});
  const auto out = msel(b, Metric::Euclid);
  EXPECT_EQ(out.value, 0.0);
  EXPECT_EQ(out.grad, RealMatrix(8, 1));
}

TEST(Msel, DerivedExample) {
  const auto b = batch_1d({0.0, 0.2, 1.0, 1.2}, {0, 0, 0, 0}, {V, V, I, I});
  EXPECT_NEAR(msel(b, Metric::Euclid).value, 0.65, 1e-12);
  EXPECT_NEAR(oracle::msel(rows_of(b.features), b.labels, tag_codes(b), false), 0.65, 1e-12);
}

TEST(Msel, ZeroWhenIntraEqualsCrossForEveryAnchor) {
  // Each identity sits on the vertices of a regular simplex, so all its
  // pairwise distances are equal whatever the modality split.
  LabeledBatch b;
  b.features = RealMatrix(8, 4);
  for (std::size_t p = 0; p < 2; ++p)
    for (std::size_t k = 0; k < 4; ++k) b.features(p * 4 + k, k) = 1.0 + 3.0 * static_cast<double>(p);
  b.labels = {0, 0, 0, 0, 1, 1, 1, 1};
  b.modalities = {V, V, I, I, V, I, V, I};
  EXPECT_NEAR(msel(b, Metric::Euclid).value, 0.0, 1e-15);
  b.features(0, 0) += 0.1;
  EXPECT_GT(msel(b, Metric::Euclid).value, 0.0);
}

TEST(Msel, Errors) {
  EXPECT_THROW(msel(center_example(), Metric::Euclid), ConfigError);
  const auto zero = batch_1d({0, 1, 1, 1, 2, 2, 2, 2}, {0, 0, 0, 0, 1, 1, 1, 1}, {V, V, I, I, V, V, I, I});
  EXPECT_THROW(msel(zero, Metric::Cosine), NumericError);
}

// ---------------------------------------------------------------------------
// centers and DCL

TEST(ComputeCenters, ArithmeticMean) {
  const auto b = batch_1d({0.0, 0.2, 1.0, 1.2, 5, 5, 5, 5}, {0, 0, 0, 0, 1, 1, 1, 1}, {V, V, I, I, V, V, I, I});
  EXPECT_NEAR(compute_centers(b).centers(0, 0), 0.6, 1e-15);
}

TEST(ComputeCenters, DerivedExample) {
  const auto cs = compute_centers(center_example());
  EXPECT_NEAR(cs.centers(0, 0), 0.1, 1e-15);
  EXPECT_NEAR(cs.centers(1, 0), 1.1, 1e-15);
  EXPECT_NEAR(cs.dyn_margins[0], 1.0, 1e-15);
  EXPECT_NEAR(cs.dyn_margins[1], 1.0, 1e-15);
  const auto o = oracle::centers(rows_of(center_example().features), center_example().labels);
  EXPECT_NEAR(o.dneg[0], 1.0, 1e-15);
}

TEST(ComputeCenters, ResidualsSumToZero) {
  RngStream rng(4);
  for (int t = 0; t < 20; ++t) {
    const auto b = random_batch(rng, 3, 3, 4);
    const auto s = structure(b);
    const auto cs = compute_centers(b);
    for (std::size_t p = 0; p < s.P(); ++p)
      for (std::size_t d = 0; d < 4; ++d) {
        double sum = 0;
        for (auto r : s.rows_of(p)) sum += b.features(r, d) - cs.centers(p, d);
        EXPECT_NEAR(sum, 0.0, 1e-12);
      }
    for (double m : cs.dyn_margins) EXPECT_GT(m, 0.0);
  }
}

TEST(ComputeCenters, NeedsTwoIdentities) {
  const auto b = batch_1d({0, 1, 2, 3}, {0, 0, 0, 0}, {V, V, I, I});
  EXPECT_THROW(compute_centers(b), ConfigError);
}

TEST(Dcl, ZeroNumerator) {
  const auto b = batch_1d({0, 0, 3, 3}, {0, 0, 1, 1}, {V, I, V, I});
  for (DclMode m : {DclMode::Hard, DclMode::All, DclMode::Dyn}) {
    const auto out = dcl(b, m);
    EXPECT_EQ(out.value, 0.0);
    EXPECT_EQ(out.grad, RealMatrix(4, 1));
  }
}

TEST(Dcl, DerivedExampleDynAndHard) {
  const auto b = center_example();
  EXPECT_NEAR(dcl(b, DclMode::Dyn).value, 0.2 / 1.8, 1e-12);
  EXPECT_NEAR(dcl(b, DclMode::Hard).value, 0.2 / 1.8, 1e-12);
  EXPECT_NEAR(oracle::dcl(rows_of(b.features), b.labels, oracle::Select::Dyn), 0.111111111111, 1e-10);
  EXPECT_NEAR(oracle::dcl(rows_of(b.features), b.labels, oracle::Select::Hard), 0.111111111111, 1e-10);
  // All mode averages the 0.9 and 1.1 negatives.
  EXPECT_NEAR(dcl(b, DclMode::All).value, 0.2 / 2.0, 1e-12);
}

TEST(Dcl, DynFallsBackToClosestWhenAllNegativesAtMargin) {
  // Every negative of each center is equidistant, so none is strictly closer
  // than the mean.
  const auto b = batch_1d({-1, 1, -1, 1}, {0, 0, 1, 1}, {V, I, I, V});
  // centers coincide at 0 and all negatives are at distance 1 = d^neg
  const auto out = dcl(b, DclMode::Dyn);
  EXPECT_NEAR(out.value, 2.0 / 2.0, 1e-12);
  EXPECT_EQ(out.value, dcl(b, DclMode::Hard).value);
}

TEST(Dcl, DegenerateDenominator) {
  const auto b = batch_1d({2, 2, 2, 2}, {0, 0, 1, 1}, {V, I, V, I});
  EXPECT_THROW(dcl(b, DclMode::Dyn), DegenerateError);
}

TEST(Dcl, NumeratorZeroGivesZeroGradient) {
  RngStream rng(8);
  for (int t = 0; t < 10; ++t) {
    auto b = random_batch(rng, 3, 2, 3);
    const auto s = structure(b);
    for (std::size_t p = 0; p < s.P(); ++p) {
      const auto rows = s.rows_of(p);
      for (auto r : rows)
        for (std::size_t d = 0; d < 3; ++d) b.features(r, d) = b.features(rows[0], d);
    }
    for (DclMode m : {DclMode::Hard, DclMode::All, DclMode::Dyn}) {
      const auto out = dcl(b, m);
      EXPECT_EQ(out.value, 0.0);
      EXPECT_EQ(out.grad, RealMatrix(b.size(), 3));
    }
  }
}

// ---------------------------------------------------------------------------
// stage objectives

TEST(Stage1Objective, AdditiveAndZeroTripletCase) {
  const auto b = batch_1d({0, 0, 9, 9, 0, 0, 9, 9}, {0, 0, 1, 1, 0, 0, 1, 1}, {G, G, G, G, I, I, I, I});
  const RealMatrix z(8, 2);
  const std::vector<int> y = {0, 0, 1, 1, 0, 0, 1, 1};
  const auto out = stage1_objective(b, z, y, {});
  EXPECT_NEAR(out.value, std::log(2.0), 1e-15);
  EXPECT_EQ(out.terms.at("intra"), 0.0);
  EXPECT_FALSE(out.terms.count("msel"));
  EXPECT_FALSE(out.terms.count("dcl"));
}

TEST(Stage1Objective, UniformLogitsPlusCollapsedBatch) {
  const auto b = batch_1d({1, 1, 1, 1, 1, 1, 1, 1}, {0, 0, 1, 1, 0, 0, 1, 1}, {G, G, G, G, I, I, I, I});
  const auto out = stage1_objective(b, RealMatrix(8, 2), std::vector<int>{0, 0, 1, 1, 0, 0, 1, 1}, {});
  EXPECT_NEAR(out.value, std::log(2.0) + 8 * 0.1, 1e-12);
}

TEST(Stage1Objective, ComposesIndependentTerms) {
  RngStream rng(10);
  for (int t = 0; t < 20; ++t) {
    const auto b = random_batch(rng, 3, 2, 3, Stage::Stage1);
    RealMatrix z(b.size(), 3);
    for (auto& v : z.data()) v = rng.gaussian();
    std::vector<int> y;
    for (int l : b.labels) y.push_back((l - 3) / 4);
    const auto out = stage1_objective(b, z, y, {});
    const double expect =
        oracle::triplet_intra(rows_of(b.features), b.labels, tag_codes(b), 0.1) + oracle::cross_entropy(rows_of(z), y);
    EXPECT_NEAR(out.value, expect, 1e-10);
  }
}

TEST(Stage2Objective, ZeroWeightsEqualGlobalTriplet) {
  RngStream rng(11);
  const auto b = random_batch(rng, 3, 2, 3);
  LossConfig cfg;
  cfg.lambda1 = cfg.lambda2 = 0.0;
  const auto out = stage2_objective(b, RealMatrix(b.size(), 3), std::vector<int>(b.size(), 0), cfg);
  const auto ref = hard_triplet_global(b, cfg.margin);
  EXPECT_EQ(out.value, ref.value);
  EXPECT_EQ(out.grad_embeddings, ref.grad);
  EXPECT_EQ(out.grad_logits, RealMatrix(b.size(), 3));
}

TEST(Stage2Objective, CompositionalOracle) {
  // One batch carrying all three terms at the default weights.
  const auto b = batch_1d({0.0, 0.5, 0.2, 0.7, 0.6, 1.0, 0.9, 1.3}, {0, 0, 0, 0, 1, 1, 1, 1}, {V, V, I, I, V, V, I, I});
  const auto out = stage2_objective(b, RealMatrix(8, 2), std::vector<int>(8, 0), {});
  const auto x = rows_of(b.features);
  const double expect = oracle::triplet_global(x, b.labels, 0.1) + 0.5 * oracle::msel(x, b.labels, tag_codes(b), false) +
                        0.5 * oracle::dcl(x, b.labels, oracle::Select::Dyn);
  EXPECT_NEAR(out.value, expect, 1e-12);
}

TEST(Stage2Objective, DerivedExampleTermsConfirmed) {
  EXPECT_NEAR(hard_triplet_global(global_example(), 0.1).value, 0.9, 1e-12);
  const auto m = batch_1d({0.0, 0.2, 1.0, 1.2}, {0, 0, 0, 0}, {V, V, I, I});
  EXPECT_NEAR(0.9 + 0.5 * msel(m, Metric::Euclid).value + 0.5 * dcl(center_example(), DclMode::Dyn).value,
              0.9 + 0.5 * 0.65 + 0.5 * (0.2 / 1.8), 1e-12);
}

TEST(Stage2Objective, LinearInLambda1) {
  RngStream rng(12);
  for (int t = 0; t < 10; ++t) {
    const auto b = random_batch(rng, 2, 3, 4);
    LossConfig c1, c2;
    c1.lambda1 = 0.3;
    c2.lambda1 = 0.6;
    const RealMatrix z(b.size(), 2);
    const std::vector<int> y(b.size(), 1);
    const double diff = stage2_objective(b, z, y, c2).value - stage2_objective(b, z, y, c1).value;
    EXPECT_NEAR(diff, 0.3 * msel(b, Metric::Euclid).value, 1e-12);
  }
}

TEST(Stage2Objective, IdentityTermOnlyWhenEnabled) {
  RngStream rng(13);
  const auto b = random_batch(rng, 2, 2, 2);
  RealMatrix z(b.size(), 2, 0.0);
  const std::vector<int> y(b.size(), 0);
  LossConfig cfg;
  EXPECT_FALSE(stage2_objective(b, z, y, cfg).terms.count("id"));
  EXPECT_FALSE(stage2_objective(b, z, y, cfg).terms.count("intra"));
  cfg.include_id_stage2 = true;
  const auto on = stage2_objective(b, z, y, cfg);
  EXPECT_NEAR(on.terms.at("id"), std::log(2.0), 1e-15);
  EXPECT_NEAR(on.value - stage2_objective(b, z, y, LossConfig{}).value, std::log(2.0), 1e-12);
}

TEST(LossConfig, Validation) {
  LossConfig c;
  c.margin = -0.1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.lambda2 = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(parse_dcl_mode("dyn"), DclMode::Dyn);
  EXPECT_THROW(parse_dcl_mode("soft"), ConfigError);
}

// ---------------------------------------------------------------------------
// oracle equivalence, invariances, gradients

struct LossCase {
  std::string name;
  std::function<LossOutput(const LabeledBatch&)> fn;
  std::function<double(const LabeledBatch&)> reference;
  Stage stage;
  bool translation_invariant;
};

std::vector<LossCase> all_losses() {
  using oracle::Rows;
  std::vector<LossCase> cases = {
      {"global", [](const LabeledBatch& b) { return hard_triplet_global(b, 0.3); },
       [](const LabeledBatch& b) { return oracle::triplet_global(rows_of(b.features), b.labels, 0.3); }, Stage::Stage2,
       true},
      {"intra", [](const LabeledBatch& b) { return hard_triplet_intra(b, 0.3); },
       [](const LabeledBatch& b) { return oracle::triplet_intra(rows_of(b.features), b.labels, tag_codes(b), 0.3); },
       Stage::Stage1, true},
  };
  for (Metric m : {Metric::Euclid, Metric::Cosine})
    cases.push_back({"msel-" + to_string(m), [m](const LabeledBatch& b) { return msel(b, m); },
                     [m](const LabeledBatch& b) {
                       return oracle::msel(rows_of(b.features), b.labels, tag_codes(b), m == Metric::Cosine);
                     },
                     Stage::Stage2, m == Metric::Euclid});
  for (DclMode m : {DclMode::Hard, DclMode::All, DclMode::Dyn})
    cases.push_back({"dcl-" + to_string(m), [m](const LabeledBatch& b) { return dcl(b, m); },
                     [m](const LabeledBatch& b) { return oracle::dcl(rows_of(b.features), b.labels, to_oracle(m)); },
                     Stage::Stage2, true});
  return cases;
}

TEST(LossOracle, RandomSmallBatchesMatchBruteForce) {
  RngStream rng(2024);
  for (const auto& c : all_losses())
    for (int t = 0; t < 200; ++t) {
      const std::size_t P = 2 + rng.below(2), K = 2 + rng.below(2), dim = 1 + rng.below(4);
      const auto b = random_batch(rng, P, K, dim, c.stage);
      ASSERT_NEAR(c.fn(b).value, c.reference(b), 1e-10) << c.name << " instance " << t;
    }
}

TEST(LossOracle, GlobalTripletAndDclWithSingleRowPerModality) {
  RngStream rng(7);
  for (int t = 0; t < 100; ++t) {
    const auto b = random_batch(rng, 2 + rng.below(2), 1, 1 + rng.below(4));
    EXPECT_NEAR(hard_triplet_global(b, 0.2).value, oracle::triplet_global(rows_of(b.features), b.labels, 0.2), 1e-10);
    EXPECT_NEAR(dcl(b, DclMode::Dyn).value, oracle::dcl(rows_of(b.features), b.labels, oracle::Select::Dyn), 1e-10);
  }
}

TEST(LossInvariance, NonNegativeOnFuzzedInputs) {
  RngStream rng(31);
  for (const auto& c : all_losses())
    for (int t = 0; t < 100; ++t) {
      auto b = random_batch(rng, 2 + rng.below(3), 2 + rng.below(2), 1 + rng.below(5), c.stage);
      for (auto& v : b.features.data()) v *= std::pow(10.0, rng.uniform(-3, 3));
      const auto out = c.fn(b);
      EXPECT_GE(out.value, 0.0) << c.name;
      EXPECT_TRUE(std::isfinite(out.value));
      EXPECT_TRUE(out.grad.finite());
    }
}

TEST(LossInvariance, RowPermutation) {
  RngStream rng(32);
  for (const auto& c : all_losses())
    for (int t = 0; t < 30; ++t) {
      const auto b = random_batch(rng, 3, 3, 3, c.stage);
      std::vector<std::size_t> perm(b.size());
      for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
      rng.shuffle(perm);
      const auto pb = permuted(b, perm);
      const auto o = c.fn(b), po = c.fn(pb);
      EXPECT_NEAR(o.value, po.value, 1e-12) << c.name;
      EXPECT_LE(max_abs_diff(select_rows(o.grad, perm), po.grad), 1e-12) << c.name;
    }
}

TEST(LossInvariance, EuclideanTranslation) {
  RngStream rng(33);
  for (const auto& c : all_losses()) {
    if (!c.translation_invariant) continue;
    for (int t = 0; t < 30; ++t) {
      const auto b = random_batch(rng, 3, 2, 3, c.stage);
      auto shifted = b;
      RealVector shift(3);
      for (auto& v : shift) v = rng.uniform(-5, 5);
      for (std::size_t r = 0; r < b.size(); ++r)
        for (std::size_t d = 0; d < 3; ++d) shifted.features(r, d) += shift[d];
      const auto o = c.fn(b), so = c.fn(shifted);
      EXPECT_NEAR(o.value, so.value, 1e-9) << c.name;
      EXPECT_LE(max_abs_diff(o.grad, so.grad), 1e-9) << c.name;
    }
  }
}

TEST(LossGradient, MatchesFiniteDifferences) {
  GradCheckOptions opt;
  opt.instances = 8;
  opt.seed = 17;
  for (const auto& c : run_gradcheck(opt)) {
    EXPECT_EQ(c.instances, 8u);
    EXPECT_LE(c.max_rel_err, opt.tolerance) << c.name;
  }
}

TEST(LossGradient, InjectedMselSignFlipIsDetected) {
  GradCheckOptions opt;
  opt.instances = 3;
  opt.fault = Fault::MselSign;
  for (const auto& c : run_gradcheck(opt)) {
    if (c.name.rfind("msel", 0) == 0)
      EXPECT_FALSE(c.passed(opt.tolerance)) << c.name;
    else
      EXPECT_TRUE(c.passed(opt.tolerance)) << c.name;
  }
}

}  // namespace
}  // namespace crossreid
