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

// Metric-learning losses over a LabeledBatch of embeddings, each returning
// its value together with the analytic (sub)gradient with respect to the
// embedding rows.
//
//   identity_loss        softmax cross-entropy on classifier logits
//   hard_triplet_global  batch-hard triplet, mining across both modalities
//   hard_triplet_intra   batch-hard triplet mined within each modality
//   pht                  stage switch between the two triplet forms
//   msel                 squared gap between mean intra- and cross-modality
//                        positive distances per anchor
//   dcl                  mean sample-to-center distance over mean
//                        center-to-negative distance
//
// Conventions: the hinge subgradient at exactly zero is 0, the Euclidean
// distance subgradient at coincident points is 0, and ties in hardest
// positive / negative selection go to the lowest row index.

#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "crossreid/batch.hpp"
#include "crossreid/core.hpp"

namespace crossreid {

struct LossOutput {
  double value = 0.0;
  RealMatrix grad;

  LossOutput& operator+=(const LossOutput& other) {
    value += other.value;
    grad += other.grad;
    return *this;
  }
};

inline LossOutput scaled(LossOutput out, double w) {
  out.value *= w;
  out.grad *= w;
  return out;
}

enum class DclMode { Hard, All, Dyn };

inline std::string to_string(DclMode m) {
  switch (m) {
    case DclMode::Hard: return "hard";
    case DclMode::All: return "all";
    case DclMode::Dyn: return "dyn";
  }
  return "?";
}

inline DclMode parse_dcl_mode(const std::string& s) {
  if (s == "hard") return DclMode::Hard;
  if (s == "all") return DclMode::All;
  if (s == "dyn") return DclMode::Dyn;
  throw ConfigError("unknown DCL mode '" + s + "' (expected hard|all|dyn)");
}

struct LossConfig {
  double margin = 0.1;
  double lambda1 = 0.5;  // MSEL weight
  double lambda2 = 0.5;  // DCL weight
  Metric msel_metric = Metric::Euclid;
  DclMode dcl_mode = DclMode::Dyn;
  // Adds the identity loss to the second-stage objective. Off by default.
  bool include_id_stage2 = false;

  void validate() const {
    if (!(margin >= 0.0)) throw ConfigError("loss.margin must be >= 0");
    if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw ConfigError("loss.lambda1/lambda2 must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// Identity loss

inline LossOutput identity_loss(const RealMatrix& logits, std::span<const int> labels) {
  if (logits.rows() != labels.size()) throw DimensionError("identity_loss: logits rows != labels");
  if (logits.rows() == 0) throw DimensionError("identity_loss: empty batch");
  const std::size_t n = logits.rows(), c = logits.cols();
  LossOutput out{0.0, RealMatrix(n, c)};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c)
      throw LabelError("identity_loss: label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(c) +
                       ")");
    auto z = logits.row(i);
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - zmax);
    const double lse = zmax + std::log(sum);
    out.value += (lse - z[labels[i]]) * inv_n;
    auto g = out.grad.row(i);
    for (std::size_t j = 0; j < c; ++j) g[j] = std::exp(z[j] - lse) * inv_n;
    g[labels[i]] -= inv_n;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batch-hard triplet

namespace detail {

// Adds sum over anchors in `rows` of [max_pos D - min_neg D + m]_+ with
// mining restricted to `rows`. Returns the loss contribution.
inline double hard_triplet_over(const RealMatrix& f, std::span<const int> labels, std::span<const std::size_t> rows,
                                double margin, RealMatrix& grad) {
  double total = 0.0;
  for (std::size_t a : rows) {
    std::size_t pos = a, neg = a;
    double dpos = -1.0, dneg = std::numeric_limits<double>::infinity();
    // `rows` is ascending, so strict comparisons keep the lowest index on ties.
    for (std::size_t j : rows) {
      if (j == a) continue;
      const double d = euclidean_distance(f.row(a), f.row(j));
      if (labels[j] == labels[a]) {
        if (d > dpos) dpos = d, pos = j;
      } else if (d < dneg) {
        dneg = d, neg = j;
      }
    }
    if (pos == a)
      throw SamplingError("hard triplet: identity " + std::to_string(labels[a]) + " has a single row");
    if (neg == a) throw SamplingError("hard triplet: no negative for identity " + std::to_string(labels[a]));
    const double h = dpos - dneg + margin;
    if (h <= 0.0) continue;
    total += h;
    accumulate_distance_grad(Metric::Euclid, f.row(a), f.row(pos), 1.0, grad.row(a));
    accumulate_distance_grad(Metric::Euclid, f.row(pos), f.row(a), 1.0, grad.row(pos));
    accumulate_distance_grad(Metric::Euclid, f.row(a), f.row(neg), -1.0, grad.row(a));
    accumulate_distance_grad(Metric::Euclid, f.row(neg), f.row(a), -1.0, grad.row(neg));
  }
  return total;
}

}  // namespace detail

// Hardest positive / negative mined over the whole batch, ignoring modality.
inline LossOutput hard_triplet_global(const LabeledBatch& batch, double margin) {
  batch.check_rows();
  LossOutput out{0.0, RealMatrix(batch.features.rows(), batch.features.cols())};
  std::vector<std::size_t> rows(batch.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  out.value = detail::hard_triplet_over(batch.features, batch.labels, rows, margin, out.grad);
  return out;
}

// Two independent batch-hard terms, one per modality, each mining only inside
// its own modality.
inline LossOutput hard_triplet_intra(const LabeledBatch& batch, double margin) {
  const BatchStructure s = structure(batch);
  LossOutput out{0.0, RealMatrix(batch.features.rows(), batch.features.cols())};
  for (int m = 0; m < 2; ++m) {
    std::vector<std::size_t> rows;
    for (std::size_t p = 0; p < s.P(); ++p) rows.insert(rows.end(), s.rows[p][m].begin(), s.rows[p][m].end());
    std::sort(rows.begin(), rows.end());
    out.value += detail::hard_triplet_over(batch.features, batch.labels, rows, margin, out.grad);
  }
  return out;
}

inline void check_stage(const LabeledBatch& batch, Stage stage) {
  const ModalityTag want = partner_modality(stage);
  bool has_partner = false, has_ir = false;
  for (auto t : batch.modalities) {
    if (t == want) has_partner = true;
    else if (t == ModalityTag::Infrared) has_ir = true;
    else
      throw StageError(to_string(stage) + " expects " + to_string(want) + "+ir rows, found " + to_string(t));
  }
  if (!has_partner || !has_ir)
    throw StageError(to_string(stage) + " expects both " + to_string(want) + " and ir rows");
}

// Progressive hard triplet: within-modality mining in the first stage,
// global mining in the second.
inline LossOutput pht(const LabeledBatch& batch, Stage stage, double margin) {
  check_stage(batch, stage);
  return stage == Stage::Stage1 ? hard_triplet_intra(batch, margin) : hard_triplet_global(batch, margin);
}

// ---------------------------------------------------------------------------
// Modality-shared enhancement loss

inline LossOutput msel(const LabeledBatch& batch, Metric metric) {
  const BatchStructure s = structure(batch);
  if (s.K < 2) throw ConfigError("msel: K must be >= 2");
  const RealMatrix& f = batch.features;
  LossOutput out{0.0, RealMatrix(f.rows(), f.cols())};
  const double K = static_cast<double>(s.K);
  const double norm_factor = 1.0 / (2.0 * static_cast<double>(s.P()) * K);

  for (std::size_t p = 0; p < s.P(); ++p) {
    for (int side = 0; side < 2; ++side) {
      const auto& own = s.rows[p][side];
      const auto& other = s.rows[p][1 - side];
      for (std::size_t a : own) {
        double intra = 0.0, cross = 0.0;
        for (std::size_t j : own)
          if (j != a) intra += distance(metric, f.row(a), f.row(j));
        for (std::size_t j : other) cross += distance(metric, f.row(a), f.row(j));
        intra /= K - 1.0;
        cross /= K;
        const double diff = intra - cross;
        out.value += norm_factor * diff * diff;

        const double g = 2.0 * norm_factor * diff;
        if (g == 0.0) continue;
        for (std::size_t j : own) {
          if (j == a) continue;
          accumulate_distance_grad(metric, f.row(a), f.row(j), g / (K - 1.0), out.grad.row(a));
          accumulate_distance_grad(metric, f.row(j), f.row(a), g / (K - 1.0), out.grad.row(j));
        }
        for (std::size_t j : other) {
          accumulate_distance_grad(metric, f.row(a), f.row(j), -g / K, out.grad.row(a));
          accumulate_distance_grad(metric, f.row(j), f.row(a), -g / K, out.grad.row(j));
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Discriminative center loss

struct CenterStats {
  std::vector<int> identities;  // row p of `centers` belongs to identities[p]
  RealMatrix centers;
  std::vector<double> dyn_margins;  // mean distance from each center to all negatives
};

inline CenterStats compute_centers(const LabeledBatch& batch, const BatchStructure& s) {
  if (s.P() < 2) throw ConfigError("compute_centers: need at least two identities");
  const RealMatrix& f = batch.features;
  CenterStats cs{s.identities, RealMatrix(s.P(), f.cols()), std::vector<double>(s.P(), 0.0)};
  for (std::size_t p = 0; p < s.P(); ++p) {
    const auto rows = s.rows_of(p);
    auto c = cs.centers.row(p);
    for (std::size_t r : rows)
      for (std::size_t d = 0; d < f.cols(); ++d) c[d] += f(r, d);
    for (double& v : c) v /= static_cast<double>(rows.size());
  }
  for (std::size_t p = 0; p < s.P(); ++p) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t q = 0; q < s.P(); ++q) {
      if (q == p) continue;
      for (std::size_t r : s.rows_of(q)) {
        sum += euclidean_distance(f.row(r), cs.centers.row(p));
        ++n;
      }
    }
    cs.dyn_margins[p] = sum / static_cast<double>(n);
  }
  return cs;
}

inline CenterStats compute_centers(const LabeledBatch& batch) { return compute_centers(batch, structure(batch)); }

namespace detail {

// Gradient of w * ||f_k - c_p|| where c_p is the mean of `members`. The
// center is a function of the embeddings, so every member receives its share.
inline void accumulate_center_term(const RealMatrix& f, const RealMatrix& centers, std::size_t p, std::size_t k,
                                   std::span<const std::size_t> members, double w, RealMatrix& grad) {
  auto c = centers.row(p);
  auto x = f.row(k);
  const double d = euclidean_distance(x, c);
  if (d == 0.0 || w == 0.0) return;
  const double share = 1.0 / static_cast<double>(members.size());
  auto gk = grad.row(k);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double u = w * (x[i] - c[i]) / d;
    gk[i] += u;
    for (std::size_t m : members) grad(m, i) -= u * share;
  }
}

}  // namespace detail

inline LossOutput dcl(const LabeledBatch& batch, DclMode mode) {
  const BatchStructure s = structure(batch);
  const CenterStats cs = compute_centers(batch, s);
  const RealMatrix& f = batch.features;
  const std::size_t P = s.P();

  struct Term {
    std::size_t p, row;
    double weight;
  };
  std::vector<Term> num_terms, den_terms;
  double numerator = 0.0, denominator = 0.0;

  for (std::size_t p = 0; p < P; ++p) {
    const auto members = s.rows_of(p);
    const double w = 1.0 / static_cast<double>(members.size());
    for (std::size_t r : members) {
      numerator += w * euclidean_distance(f.row(r), cs.centers.row(p));
      num_terms.push_back({p, r, w});
    }

    std::vector<std::size_t> negatives;
    for (std::size_t q = 0; q < P; ++q)
      if (q != p)
        for (std::size_t r : s.rows_of(q)) negatives.push_back(r);
    std::sort(negatives.begin(), negatives.end());
    std::vector<double> dist(negatives.size());
    for (std::size_t i = 0; i < negatives.size(); ++i) dist[i] = euclidean_distance(f.row(negatives[i]), cs.centers.row(p));

    std::size_t closest = 0;
    for (std::size_t i = 1; i < dist.size(); ++i)
      if (dist[i] < dist[closest]) closest = i;

    std::vector<std::size_t> chosen;
    switch (mode) {
      case DclMode::Hard:
        chosen = {closest};
        break;
      case DclMode::All:
        for (std::size_t i = 0; i < dist.size(); ++i) chosen.push_back(i);
        break;
      case DclMode::Dyn:
        for (std::size_t i = 0; i < dist.size(); ++i)
          if (dist[i] < cs.dyn_margins[p]) chosen.push_back(i);
        // Only possible when every negative sits exactly at the margin.
        if (chosen.empty()) chosen = {closest};
        break;
    }
    const double wn = 1.0 / static_cast<double>(chosen.size());
    for (std::size_t i : chosen) {
      denominator += wn * dist[i];
      den_terms.push_back({p, negatives[i], wn});
    }
  }

  if (denominator < kNormEps) throw DegenerateError("dcl: center-to-negative distances vanish");

  LossOutput out{numerator / denominator, RealMatrix(f.rows(), f.cols())};
  const double gnum = 1.0 / denominator;
  const double gden = -numerator / (denominator * denominator);
  std::vector<std::vector<std::size_t>> members(P);
  for (std::size_t p = 0; p < P; ++p) members[p] = s.rows_of(p);
  for (const auto& t : num_terms)
    detail::accumulate_center_term(f, cs.centers, t.p, t.row, members[t.p], gnum * t.weight, out.grad);
  for (const auto& t : den_terms)
    detail::accumulate_center_term(f, cs.centers, t.p, t.row, members[t.p], gden * t.weight, out.grad);
  return out;
}

// ---------------------------------------------------------------------------
// Stage objectives

// Value and gradients of a stage objective. The embedding gradient feeds the
// encoder directly, the logit gradient goes through the classifier.
struct ObjectiveOutput {
  double value = 0.0;
  std::map<std::string, double> terms;  // unweighted term values
  RealMatrix grad_embeddings;
  RealMatrix grad_logits;
};

inline void check_logits(const LabeledBatch& batch, const RealMatrix& logits, std::span<const int> labels) {
  if (logits.rows() != batch.size() || labels.size() != batch.size())
    throw DimensionError("objective: logits/labels rows must match the batch");
}

// L1 = L_intra + L_id
inline ObjectiveOutput stage1_objective(const LabeledBatch& batch, const RealMatrix& logits,
                                        std::span<const int> labels, const LossConfig& cfg) {
  cfg.validate();
  check_logits(batch, logits, labels);
  LossOutput tri = pht(batch, Stage::Stage1, cfg.margin);
  LossOutput id = identity_loss(logits, labels);
  ObjectiveOutput out;
  out.terms = {{"intra", tri.value}, {"id", id.value}};
  out.value = tri.value + id.value;
  out.grad_embeddings = std::move(tri.grad);
  out.grad_logits = std::move(id.grad);
  return out;
}

// L2 = L_global + lambda1 * L_msel + lambda2 * L_dcl (+ L_id when enabled).
// Terms with zero weight are not evaluated.
inline ObjectiveOutput stage2_objective(const LabeledBatch& batch, const RealMatrix& logits,
                                        std::span<const int> labels, const LossConfig& cfg) {
  cfg.validate();
  check_logits(batch, logits, labels);
  LossOutput total = pht(batch, Stage::Stage2, cfg.margin);
  ObjectiveOutput out;
  out.terms["global"] = total.value;
  if (cfg.lambda1 > 0.0) {
    LossOutput m = msel(batch, cfg.msel_metric);
    out.terms["msel"] = m.value;
    total += scaled(std::move(m), cfg.lambda1);
  }
  if (cfg.lambda2 > 0.0) {
    LossOutput d = dcl(batch, cfg.dcl_mode);
    out.terms["dcl"] = d.value;
    total += scaled(std::move(d), cfg.lambda2);
  }
  out.grad_logits = RealMatrix(logits.rows(), logits.cols());
  if (cfg.include_id_stage2) {
    LossOutput id = identity_loss(logits, labels);
    out.terms["id"] = id.value;
    total.value += id.value;
    out.grad_logits = std::move(id.grad);
  }
  out.value = total.value;
  out.grad_embeddings = std::move(total.grad);
  return out;
}

inline ObjectiveOutput stage_objective(Stage stage, const LabeledBatch& batch, const RealMatrix& logits,
                                       std::span<const int> labels, const LossConfig& cfg) {
  return stage == Stage::Stage1 ? stage1_objective(batch, logits, labels, cfg)
                                : stage2_objective(batch, logits, labels, cfg);
}

}  // namespace crossreid
