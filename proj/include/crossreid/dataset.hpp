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

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crossreid/core.hpp"

namespace crossreid {

enum class ModalityTag { Visible, Grayscale, Infrared };

inline std::string to_string(ModalityTag t) {
  switch (t) {
    case ModalityTag::Visible: return "vis";
    case ModalityTag::Grayscale: return "gray";
    case ModalityTag::Infrared: return "ir";
  }
  return "?";
}

inline std::optional<ModalityTag> parse_modality(const std::string& s) {
  if (s == "vis") return ModalityTag::Visible;
  if (s == "gray") return ModalityTag::Grayscale;
  if (s == "ir") return ModalityTag::Infrared;
  return std::nullopt;
}

// Feature vectors are laid out as [shared | color | modality].
struct FeatureLayout {
  std::size_t shared_dims = 16;
  std::size_t color_dims = 8;
  std::size_t modality_dims = 8;

  std::size_t total() const { return shared_dims + color_dims + modality_dims; }
  std::size_t color_begin() const { return shared_dims; }
  std::size_t modality_begin() const { return shared_dims + color_dims; }

  void validate() const {
    if (shared_dims < 1 || color_dims < 1 || modality_dims < 1)
      throw ConfigError("FeatureLayout: every block needs at least one dimension");
  }

  bool operator==(const FeatureLayout&) const = default;
};

struct Sample {
  int label = 0;
  ModalityTag modality = ModalityTag::Visible;
  RealVector features;

  bool operator==(const Sample&) const = default;
};

// A labeled collection of visible / infrared / grayscale feature rows, either
// generated with a planted modality gap or ingested from a feature file.
struct SynthDataset {
  // Present for generated data; ingested files may omit it, in which case
  // grayscale rows must be shipped explicitly.
  std::optional<FeatureLayout> layout;
  // Per-identity prototypes over the shared block (generated data only).
  std::vector<RealVector> prototypes;
  std::vector<Sample> samples;
  double gap_strength = 0.0;
  double noise_sigma = 0.0;

  std::size_t dim() const { return samples.empty() ? 0 : samples.front().features.size(); }

  // Sorted distinct identity labels.
  std::vector<int> identities() const {
    std::vector<int> ids;
    for (const auto& s : samples) ids.push_back(s.label);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
  }

  // Row indices of `samples` for each (label, modality) cell, in file order.
  std::map<std::pair<int, ModalityTag>, std::vector<std::size_t>> index() const {
    std::map<std::pair<int, ModalityTag>, std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < samples.size(); ++i) out[{samples[i].label, samples[i].modality}].push_back(i);
    return out;
  }

  std::size_t count(ModalityTag t) const {
    return static_cast<std::size_t>(
        std::count_if(samples.begin(), samples.end(), [t](const Sample& s) { return s.modality == t; }));
  }

  // Features of every sample with the given modality, with their labels.
  std::pair<RealMatrix, std::vector<int>> rows_of(ModalityTag t) const {
    std::vector<RealVector> rows;
    std::vector<int> labels;
    for (const auto& s : samples)
      if (s.modality == t) {
        rows.push_back(s.features);
        labels.push_back(s.label);
      }
    return {RealMatrix::from_rows(rows), std::move(labels)};
  }

  bool operator==(const SynthDataset&) const = default;
};

}  // namespace crossreid
