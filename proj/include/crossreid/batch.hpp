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

// PK mini-batch construction and the grayscale substitution that separates
// the two training stages.

#include <array>
#include <map>
#include <string>
#include <vector>

#include "crossreid/core.hpp"
#include "crossreid/dataset.hpp"

namespace crossreid {

enum class Stage { Stage1, Stage2 };

inline std::string to_string(Stage s) { return s == Stage::Stage1 ? "stage1" : "stage2"; }

// Non-infrared modality fed alongside infrared in each stage.
inline ModalityTag partner_modality(Stage s) {
  return s == Stage::Stage1 ? ModalityTag::Grayscale : ModalityTag::Visible;
}

struct BatchSpec {
  std::size_t P = 8;  // identities per batch
  std::size_t K = 4;  // samples per identity per modality

  std::size_t rows() const { return 2 * P * K; }

  void validate() const {
    if (P < 2) throw ConfigError("BatchSpec: P must be >= 2");
    if (K < 2) throw ConfigError("BatchSpec: K must be >= 2");
  }
};

struct LabeledBatch {
  RealMatrix features;
  std::vector<int> labels;
  std::vector<ModalityTag> modalities;

  std::size_t size() const { return labels.size(); }

  // Shape and finiteness only; the PK structure is checked by structure().
  void check_rows() const {
    if (features.rows() != labels.size() || labels.size() != modalities.size())
      throw DimensionError("LabeledBatch: features/labels/modalities row counts differ");
    if (!features.finite()) throw NumericError("LabeledBatch: non-finite features");
  }

  // Same batch with a different feature matrix (e.g. embeddings of the rows).
  LabeledBatch with_features(RealMatrix f) const {
    if (f.rows() != labels.size()) throw DimensionError("LabeledBatch::with_features: row count differs");
    return {std::move(f), labels, modalities};
  }
};

// The balanced two-modality layout a PK batch must have: P identities, each
// with exactly K rows in each of two modalities.
struct BatchStructure {
  std::vector<int> identities;  // sorted
  ModalityTag first = ModalityTag::Visible;  // non-infrared side (or the lower tag)
  ModalityTag second = ModalityTag::Infrared;
  std::size_t K = 0;
  // rows[p][0] are the `first`-modality rows of identity p, rows[p][1] the
  // `second`-modality rows, each in batch order.
  std::vector<std::array<std::vector<std::size_t>, 2>> rows;

  std::size_t P() const { return identities.size(); }

  // All 2K rows of identity p.
  std::vector<std::size_t> rows_of(std::size_t p) const {
    std::vector<std::size_t> out = rows[p][0];
    out.insert(out.end(), rows[p][1].begin(), rows[p][1].end());
    return out;
  }
};

inline BatchStructure structure(const LabeledBatch& batch) {
  batch.check_rows();
  if (batch.size() == 0) throw SamplingError("LabeledBatch: empty batch");
  std::vector<ModalityTag> tags;
  for (auto t : batch.modalities)
    if (std::find(tags.begin(), tags.end(), t) == tags.end()) tags.push_back(t);
  if (tags.size() != 2)
    throw SamplingError("LabeledBatch: expected exactly two modalities, found " + std::to_string(tags.size()));
  std::sort(tags.begin(), tags.end());

  BatchStructure s;
  s.first = tags[0];
  s.second = tags[1];
  std::map<int, std::size_t> slot;
  for (int l : batch.labels) slot.emplace(l, 0);
  for (auto& [label, idx] : slot) {
    idx = s.identities.size();
    s.identities.push_back(label);
  }
  s.rows.resize(s.identities.size());
  for (std::size_t i = 0; i < batch.size(); ++i)
    s.rows[slot[batch.labels[i]]][batch.modalities[i] == s.first ? 0 : 1].push_back(i);

  s.K = s.rows.front()[0].size();
  for (std::size_t p = 0; p < s.P(); ++p)
    for (int m = 0; m < 2; ++m)
      if (s.rows[p][m].size() != s.K)
        throw SamplingError("LabeledBatch: identity " + std::to_string(s.identities[p]) +
                            " does not have K=" + std::to_string(s.K) + " rows in every modality");
  if (s.K == 0) throw SamplingError("LabeledBatch: K must be positive");
  return s;
}

// Replaces every coordinate of the color block by the block mean. The shared
// and modality blocks are copied through unchanged.
inline RealVector grayscale_of(std::span<const double> visible, const FeatureLayout& layout) {
  if (visible.size() != layout.total())
    throw DimensionError("grayscale_of: vector has " + std::to_string(visible.size()) +
                         " dims, layout expects " + std::to_string(layout.total()));
  RealVector out(visible.begin(), visible.end());
  const auto begin = out.begin() + static_cast<std::ptrdiff_t>(layout.color_begin());
  const auto end = begin + static_cast<std::ptrdiff_t>(layout.color_dims);
  double sum = 0.0;
  for (auto it = begin; it != end; ++it) sum += *it;
  const double mean = sum / static_cast<double>(layout.color_dims);
  // A constant block already equals its mean; keep it bit-identical.
  if (std::all_of(begin, end, [&](double v) { return v == *begin; })) return out;
  std::fill(begin, end, mean);
  return out;
}

// Identity-first PK sampling: P distinct identities, then K distinct rows per
// modality for each. Stage1 pairs grayscale with infrared, Stage2 visible
// with infrared. Grayscale rows are derived from sampled visible rows when the
// dataset carries a feature layout, otherwise taken from shipped gray rows.
inline LabeledBatch sample_batch(const SynthDataset& dataset, const BatchSpec& spec, Stage stage,
                                 RngStream& rng) {
  spec.validate();
  const auto idx = dataset.index();
  const bool derive_gray = stage == Stage::Stage1 && dataset.layout.has_value();
  const ModalityTag source =
      stage == Stage::Stage1 && !derive_gray ? ModalityTag::Grayscale : ModalityTag::Visible;

  auto cell_size = [&](int label, ModalityTag t) -> std::size_t {
    auto it = idx.find({label, t});
    return it == idx.end() ? 0 : it->second.size();
  };

  std::vector<int> eligible;
  for (int label : dataset.identities())
    if (cell_size(label, source) >= spec.K && cell_size(label, ModalityTag::Infrared) >= spec.K)
      eligible.push_back(label);
  if (eligible.size() < spec.P)
    throw SamplingError("sample_batch: need " + std::to_string(spec.P) + " identities with >= " +
                        std::to_string(spec.K) + " " + to_string(source) + " and infrared samples, found " +
                        std::to_string(eligible.size()));

  LabeledBatch batch;
  batch.features = RealMatrix(spec.rows(), dataset.dim());
  batch.labels.reserve(spec.rows());
  batch.modalities.reserve(spec.rows());
  std::size_t r = 0;
  auto push = [&](int label, ModalityTag tag, std::span<const double> f) {
    std::copy(f.begin(), f.end(), batch.features.row(r++).begin());
    batch.labels.push_back(label);
    batch.modalities.push_back(tag);
  };

  for (std::size_t pick : rng.choose(eligible.size(), spec.P)) {
    const int label = eligible[pick];
    const auto& src_rows = idx.at({label, source});
    for (std::size_t k : rng.choose(src_rows.size(), spec.K)) {
      const auto& f = dataset.samples[src_rows[k]].features;
      if (derive_gray)
        push(label, ModalityTag::Grayscale, grayscale_of(f, *dataset.layout));
      else
        push(label, source, f);
    }
    const auto& ir_rows = idx.at({label, ModalityTag::Infrared});
    for (std::size_t k : rng.choose(ir_rows.size(), spec.K))
      push(label, ModalityTag::Infrared, dataset.samples[ir_rows[k]].features);
  }
  return batch;
}

}  // namespace crossreid
