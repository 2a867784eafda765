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

#include <vector>

#include "crossreid/batch.hpp"
#include "crossreid/gradcheck.hpp"
#include "oracles.hpp"

namespace testing_support {

using crossreid::LabeledBatch;
using crossreid::ModalityTag;
using crossreid::RealMatrix;

inline oracle::Rows rows_of(const RealMatrix& m) {
  oracle::Rows out;
  for (std::size_t r = 0; r < m.rows(); ++r) out.push_back(m.row_vector(r));
  return out;
}

inline std::vector<int> tag_codes(const LabeledBatch& b) {
  std::vector<int> out;
  for (auto t : b.modalities) out.push_back(static_cast<int>(t));
  return out;
}

// 1-D batch: the first half of `values` in modality `a`, the second half
// infrared, with the given labels.
inline LabeledBatch batch_1d(const std::vector<double>& values, const std::vector<int>& labels,
                             const std::vector<ModalityTag>& tags) {
  LabeledBatch b;
  b.features = RealMatrix(values.size(), 1);
  for (std::size_t i = 0; i < values.size(); ++i) b.features(i, 0) = values[i];
  b.labels = labels;
  b.modalities = tags;
  return b;
}

inline LabeledBatch random_batch(crossreid::RngStream& rng, std::size_t P, std::size_t K, std::size_t dim,
                                 crossreid::Stage stage = crossreid::Stage::Stage2) {
  return crossreid::detail::random_pk_batch(rng, P, K, dim, stage);
}

// Same batch with rows reordered by `perm` (new row i is old row perm[i]).
inline LabeledBatch permuted(const LabeledBatch& b, const std::vector<std::size_t>& perm) {
  LabeledBatch out;
  out.features = crossreid::select_rows(b.features, perm);
  for (auto i : perm) {
    out.labels.push_back(b.labels[i]);
    out.modalities.push_back(b.modalities[i]);
  }
  return out;
}

inline double max_abs_diff(const RealMatrix& a, const RealMatrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace testing_support
