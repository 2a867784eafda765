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

// Finite-difference verification of every analytic gradient: the losses with
// respect to their input embeddings (or logits) and the full model with
// respect to every parameter.
//
// Instances are drawn at random and redrawn when they sit within `kink_tol`
// of a non-smooth point (hinge at zero, a tie for the hardest pair, a
// negative exactly at the dynamic margin, a ReLU input at zero, coincident
// rows), since central differences are meaningless there.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "crossreid/losses.hpp"
#include "crossreid/model.hpp"

namespace crossreid {

enum class Fault { None, MselSign };

inline Fault parse_fault(const std::string& s) {
  if (s == "none") return Fault::None;
  if (s == "msel-sign") return Fault::MselSign;
  throw ConfigError("unknown fault '" + s + "' (expected none|msel-sign)");
}

struct GradCheckOptions {
  std::size_t instances = 20;  // per component
  std::uint64_t seed = 0;
  double h = 1e-6;
  double tolerance = 1e-5;
  double kink_tol = 1e-4;
  Fault fault = Fault::None;  // deliberately corrupts one analytic gradient
};

struct ComponentCheck {
  std::string name;
  std::size_t instances = 0;
  std::size_t redraws = 0;
  double max_rel_err = 0.0;
  bool passed(double tolerance) const { return instances > 0 && max_rel_err <= tolerance; }
};

// |a - n| / max(|a|, |n|, 1e-3). The floor keeps coordinates whose true
// derivative is zero from turning round-off into a large relative error.
inline double gradient_rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-3});
}

// Max relative error between `analytic` and central differences of `f` over
// every coordinate of `x`.
inline double check_against_fd(RealMatrix x, const RealMatrix& analytic, const std::function<double(const RealMatrix&)>& f,
                               double h) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double up = f(x);
    x.data()[i] = keep - h;
    const double down = f(x);
    x.data()[i] = keep;
    worst = std::max(worst, gradient_rel_err(analytic.data()[i], (up - down) / (2.0 * h)));
  }
  return worst;
}

namespace detail {

// Batch-hard mining of `rows` is stable: unique hardest positive/negative by
// at least tol, and every hinge at least tol away from zero.
inline bool triplet_smooth(const RealMatrix& f, std::span<const int> labels, std::span<const std::size_t> rows, double m,
                           double tol) {
  for (std::size_t a : rows) {
    std::vector<double> pos, neg;
    for (std::size_t j : rows) {
      if (j == a) continue;
      const double d = euclidean_distance(f.row(a), f.row(j));
      if (d < tol) return false;
      (labels[j] == labels[a] ? pos : neg).push_back(d);
    }
    std::sort(pos.begin(), pos.end(), std::greater<>());
    std::sort(neg.begin(), neg.end());
    if (pos.size() > 1 && pos[0] - pos[1] < tol) return false;
    if (neg.size() > 1 && neg[1] - neg[0] < tol) return false;
    if (std::abs(pos[0] - neg[0] + m) < tol) return false;
  }
  return true;
}

inline bool global_smooth(const LabeledBatch& b, double m, double tol) {
  std::vector<std::size_t> rows(b.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return triplet_smooth(b.features, b.labels, rows, m, tol);
}

inline bool intra_smooth(const LabeledBatch& b, double m, double tol) {
  const BatchStructure s = structure(b);
  for (int side = 0; side < 2; ++side) {
    std::vector<std::size_t> rows;
    for (std::size_t p = 0; p < s.P(); ++p) rows.insert(rows.end(), s.rows[p][side].begin(), s.rows[p][side].end());
    std::sort(rows.begin(), rows.end());
    if (!triplet_smooth(b.features, b.labels, rows, m, tol)) return false;
  }
  return true;
}

inline bool msel_smooth(const LabeledBatch& b, Metric metric, double tol) {
  const RealMatrix& f = b.features;
  for (std::size_t i = 0; i < f.rows(); ++i) {
    if (metric == Metric::Cosine && norm(f.row(i)) < tol) return false;
    for (std::size_t j = i + 1; j < f.rows(); ++j)
      if (b.labels[i] == b.labels[j] && euclidean_distance(f.row(i), f.row(j)) < tol) return false;
  }
  return true;
}

inline bool dcl_smooth(const LabeledBatch& b, DclMode mode, double tol) {
  const BatchStructure s = structure(b);
  const CenterStats cs = compute_centers(b, s);
  for (std::size_t p = 0; p < s.P(); ++p) {
    std::vector<double> neg;
    for (std::size_t q = 0; q < s.P(); ++q)
      for (std::size_t r : s.rows_of(q)) {
        const double d = euclidean_distance(b.features.row(r), cs.centers.row(p));
        if (d < tol) return false;
        if (q != p) neg.push_back(d);
      }
    std::sort(neg.begin(), neg.end());
    if (mode != DclMode::All && neg[1] - neg[0] < tol) return false;
    if (mode == DclMode::Dyn)
      for (double d : neg)
        if (std::abs(d - cs.dyn_margins[p]) < tol) return false;
  }
  return true;
}

inline bool stage_smooth(Stage stage, const LabeledBatch& b, const LossConfig& cfg, double tol) {
  if (stage == Stage::Stage1) return intra_smooth(b, cfg.margin, tol);
  return global_smooth(b, cfg.margin, tol) && (cfg.lambda1 == 0.0 || msel_smooth(b, cfg.msel_metric, tol)) &&
         (cfg.lambda2 == 0.0 || dcl_smooth(b, cfg.dcl_mode, tol));
}

// P identities with K rows in each of two modalities, rows shuffled, labels
// deliberately non-contiguous.
inline LabeledBatch random_pk_batch(RngStream& rng, std::size_t P, std::size_t K, std::size_t dim, Stage stage) {
  std::vector<std::size_t> order(2 * P * K);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  LabeledBatch b;
  b.features = RealMatrix(order.size(), dim);
  b.labels.resize(order.size());
  b.modalities.resize(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::size_t slot = order[i];
    b.labels[i] = static_cast<int>(3 + 4 * (slot / (2 * K)));
    b.modalities[i] = (slot % (2 * K)) < K ? partner_modality(stage) : ModalityTag::Infrared;
    for (double& v : b.features.row(i)) v = rng.gaussian();
  }
  return b;
}

}  // namespace detail

// Runs every component. Component names: id, intra, global, msel-euclid,
// msel-cosine, dcl-hard, dcl-all, dcl-dyn, stage1, stage2, model-stage1,
// model-stage2.
inline std::vector<ComponentCheck> run_gradcheck(const GradCheckOptions& opt) {
  using detail::random_pk_batch;
  const RngStream root(opt.seed);
  std::vector<ComponentCheck> out;
  const double tol = opt.kink_tol;

  // Draws instances from `draw` until `n` of them are smooth; `check` returns
  // the max relative error of one instance.
  auto run = [&](const std::string& name, std::uint64_t stream, auto&& draw, auto&& smooth, auto&& check) {
    ComponentCheck c;
    c.name = name;
    RngStream rng = root.substream(stream);
    while (c.instances < opt.instances) {
      auto inst = draw(rng);
      if (!smooth(inst)) {
        if (++c.redraws > 1000 * opt.instances) throw DegenerateError("gradcheck: cannot draw smooth " + name);
        continue;
      }
      c.max_rel_err = std::max(c.max_rel_err, check(inst));
      ++c.instances;
    }
    out.push_back(c);
  };

  auto size_of = [](RngStream& rng) {
    return std::array<std::size_t, 3>{2 + rng.below(2), 2 + rng.below(2), 2 + rng.below(3)};
  };
  auto draw_stage = [&](Stage stage) {
    return [&, stage](RngStream& rng) {
      const auto [P, K, dim] = size_of(rng);
      LabeledBatch b = random_pk_batch(rng, P, K, dim, stage);
      return std::pair{b, 0.05 + 0.5 * rng.uniform()};
    };
  };
  auto embed_check = [&](auto&& loss) {
    return [&, loss](const std::pair<LabeledBatch, double>& inst) {
      const auto& [b, m] = inst;
      const LossOutput o = loss(b, m);
      return check_against_fd(b.features, o.grad, [&](const RealMatrix& x) { return loss(b.with_features(x), m).value; },
                              opt.h);
    };
  };

  // identity loss on logits
  run(
      "id", 1,
      [](RngStream& rng) {
        const std::size_t n = 4 + rng.below(5), c = 3 + rng.below(3);
        RealMatrix z(n, c);
        for (double& v : z.data()) v = 2.0 * rng.gaussian();
        std::vector<int> y(n);
        for (int& l : y) l = static_cast<int>(rng.below(c));
        return std::pair{z, y};
      },
      [](const auto&) { return true; },
      [&](const std::pair<RealMatrix, std::vector<int>>& inst) {
        const auto& [z, y] = inst;
        return check_against_fd(z, identity_loss(z, y).grad, [&](const RealMatrix& x) { return identity_loss(x, y).value; },
                                opt.h);
      });

  run("intra", 2, draw_stage(Stage::Stage1),
      [&](const auto& inst) { return detail::intra_smooth(inst.first, inst.second, tol); },
      embed_check([](const LabeledBatch& b, double m) { return hard_triplet_intra(b, m); }));
  run("global", 3, draw_stage(Stage::Stage2),
      [&](const auto& inst) { return detail::global_smooth(inst.first, inst.second, tol); },
      embed_check([](const LabeledBatch& b, double m) { return hard_triplet_global(b, m); }));

  const bool flip = opt.fault == Fault::MselSign;
  for (Metric metric : {Metric::Euclid, Metric::Cosine})
    run("msel-" + to_string(metric), 4 + static_cast<int>(metric), draw_stage(Stage::Stage2),
        [&, metric](const auto& inst) { return detail::msel_smooth(inst.first, metric, tol); },
        embed_check([metric, flip](const LabeledBatch& b, double) {
          LossOutput o = msel(b, metric);
          if (flip) o.grad *= -1.0;
          return o;
        }));

  for (DclMode mode : {DclMode::Hard, DclMode::All, DclMode::Dyn})
    run("dcl-" + to_string(mode), 6 + static_cast<int>(mode), draw_stage(Stage::Stage2),
        [&, mode](const auto& inst) { return detail::dcl_smooth(inst.first, mode, tol); },
        embed_check([mode](const LabeledBatch& b, double) { return dcl(b, mode); }));

  // Stage objectives with respect to embeddings and logits jointly.
  struct ObjInstance {
    Stage stage;
    LabeledBatch batch;
    RealMatrix logits;
    std::vector<int> classes;
    LossConfig cfg;
  };
  auto draw_objective = [&](Stage stage) {
    return [&, stage](RngStream& rng) {
      const auto [P, K, dim] = size_of(rng);
      ObjInstance in{stage, random_pk_batch(rng, P, K, dim, stage), RealMatrix(2 * P * K, P + 1), {}, {}};
      for (double& v : in.logits.data()) v = rng.gaussian();
      for (int l : in.batch.labels) in.classes.push_back((l - 3) / 4);
      in.cfg.margin = 0.05 + 0.5 * rng.uniform();
      in.cfg.msel_metric = rng.below(2) ? Metric::Cosine : Metric::Euclid;
      in.cfg.dcl_mode = static_cast<DclMode>(rng.below(3));
      in.cfg.include_id_stage2 = rng.below(2) == 1;
      return in;
    };
  };
  auto objective_check = [&](const ObjInstance& in) {
    const ObjectiveOutput o = stage_objective(in.stage, in.batch, in.logits, in.classes, in.cfg);
    const double e1 = check_against_fd(
        in.batch.features, o.grad_embeddings,
        [&](const RealMatrix& x) { return stage_objective(in.stage, in.batch.with_features(x), in.logits, in.classes, in.cfg).value; },
        opt.h);
    const double e2 = check_against_fd(
        in.logits, o.grad_logits,
        [&](const RealMatrix& z) { return stage_objective(in.stage, in.batch, z, in.classes, in.cfg).value; }, opt.h);
    return std::max(e1, e2);
  };
  for (Stage stage : {Stage::Stage1, Stage::Stage2})
    run(stage == Stage::Stage1 ? "stage1" : "stage2", 9 + static_cast<int>(stage), draw_objective(stage),
        [&](const ObjInstance& in) { return detail::stage_smooth(in.stage, in.batch, in.cfg, tol); }, objective_check);

  // Full model: every parameter tensor under each stage objective.
  struct ModelInstance {
    Stage stage;
    ModelParams params;
    LabeledBatch batch;  // input features
    std::vector<int> classes;
    LossConfig cfg;
  };
  auto model_loss = [](const ModelInstance& in, const ModelParams& p) {
    const ForwardResult fw = forward(p, in.batch.features, Mode::Train);
    return stage_objective(in.stage, in.batch.with_features(fw.embeddings), fw.logits, in.classes, in.cfg);
  };
  for (Stage stage : {Stage::Stage1, Stage::Stage2})
    run(
        stage == Stage::Stage1 ? "model-stage1" : "model-stage2", 11 + static_cast<int>(stage),
        [&, stage](RngStream& rng) {
          const std::size_t P = 2 + rng.below(2), K = 2;
          const std::size_t input = 4 + rng.below(3);
          ModelDims dims{input, 5 + rng.below(4), 3 + rng.below(3), P};
          ModelInstance in{stage, init_params(dims, rng.substream(1)), random_pk_batch(rng, P, K, input, stage), {}, {}};
          // Non-trivial BN affine and classifier so every path carries gradient.
          for (auto* t : {&in.params.bn_gamma, &in.params.bn_beta, &in.params.cls_w, &in.params.cls_b,
                          &in.params.enc_b1, &in.params.enc_b2})
            for (double& v : t->data()) v = (t == &in.params.bn_gamma ? 1.0 : 0.0) + 0.5 * rng.gaussian();
          for (int l : in.batch.labels) in.classes.push_back((l - 3) / 4);
          in.cfg.margin = 0.05 + 0.5 * rng.uniform();
          in.cfg.msel_metric = rng.below(2) ? Metric::Cosine : Metric::Euclid;
          in.cfg.dcl_mode = static_cast<DclMode>(rng.below(3));
          in.cfg.include_id_stage2 = rng.below(2) == 1;
          return in;
        },
        [&](const ModelInstance& in) {
          const ForwardResult fw = forward(in.params, in.batch.features, Mode::Train);
          if (in.params.activation == Activation::Relu)
            for (double v : fw.trace.hidden_pre.data())
              if (std::abs(v) < tol) return false;
          return detail::stage_smooth(in.stage, in.batch.with_features(fw.embeddings), in.cfg, tol);
        },
        [&](const ModelInstance& in) {
          const ForwardResult fw = forward(in.params, in.batch.features, Mode::Train);
          const ObjectiveOutput o =
              stage_objective(in.stage, in.batch.with_features(fw.embeddings), fw.logits, in.classes, in.cfg);
          const ParamGrads g = backward(fw.trace, in.params, {o.grad_embeddings, {}, o.grad_logits});
          double worst = 0.0;
          for (std::size_t t = 0; t < kNumTensors; ++t) {
            ModelParams p = in.params;
            worst = std::max(worst, check_against_fd(*p.tensors()[t], g.tensors[t],
                                                     [&](const RealMatrix& w) {
                                                       *p.tensors()[t] = w;
                                                       return model_loss(in, p).value;
                                                     },
                                                     opt.h));
          }
          return worst;
        });
  return out;
}

}  // namespace crossreid
