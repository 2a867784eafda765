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

// Retrieval evaluation: ranking, CMC, mAP, mINP, cosine-similarity
// histograms and the modality-gap ratio.

#include <algorithm>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "crossreid/core.hpp"
#include "crossreid/dataset.hpp"
#include "crossreid/synthdata.hpp"

namespace crossreid {

struct RankedQuery {
  std::size_t query = 0;           // row in the query set
  std::vector<std::size_t> order;  // gallery indices, best first
  std::vector<bool> relevant;      // relevant[i] refers to order[i]
  std::size_t num_relevant = 0;
};

struct RankingResult {
  std::vector<RankedQuery> queries;  // queries with at least one relevant item
  std::size_t gallery_size = 0;
  std::size_t dropped_queries = 0;  // queries without any relevant gallery item
};

// Orders the gallery by ascending distance for each query. Ties keep the
// lower gallery index first.
inline RankingResult rank(const RealMatrix& query_feats, const RealMatrix& gallery_feats,
                          std::span<const int> query_ids, std::span<const int> gallery_ids,
                          Metric metric = Metric::Euclid) {
  if (query_feats.rows() == 0 || gallery_feats.rows() == 0) throw DimensionError("rank: empty query or gallery");
  if (query_feats.cols() != gallery_feats.cols()) throw DimensionError("rank: query/gallery dims differ");
  if (query_feats.rows() != query_ids.size() || gallery_feats.rows() != gallery_ids.size())
    throw DimensionError("rank: label count does not match feature rows");

  RankingResult result;
  result.gallery_size = gallery_feats.rows();
  std::vector<double> dist(gallery_feats.rows());
  for (std::size_t q = 0; q < query_feats.rows(); ++q) {
    for (std::size_t g = 0; g < dist.size(); ++g) dist[g] = distance(metric, query_feats.row(q), gallery_feats.row(g));
    RankedQuery rq;
    rq.query = q;
    rq.order.resize(dist.size());
    std::iota(rq.order.begin(), rq.order.end(), std::size_t{0});
    std::stable_sort(rq.order.begin(), rq.order.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
    rq.relevant.resize(dist.size());
    for (std::size_t i = 0; i < dist.size(); ++i) {
      rq.relevant[i] = gallery_ids[rq.order[i]] == query_ids[q];
      rq.num_relevant += rq.relevant[i];
    }
    if (rq.num_relevant == 0) {
      ++result.dropped_queries;
      continue;
    }
    result.queries.push_back(std::move(rq));
  }
  return result;
}

// cmc[k-1] = fraction of queries whose first relevant item is within the top k.
inline std::vector<double> cmc(const RankingResult& r, std::size_t max_k) {
  std::vector<double> curve(max_k, 0.0);
  if (r.queries.empty()) return curve;
  for (const auto& q : r.queries) {
    const auto first = static_cast<std::size_t>(std::find(q.relevant.begin(), q.relevant.end(), true) - q.relevant.begin());
    for (std::size_t k = first; k < max_k; ++k) curve[k] += 1.0;
  }
  for (double& v : curve) v /= static_cast<double>(r.queries.size());
  return curve;
}

inline double average_precision(const RankedQuery& q) {
  double hits = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < q.relevant.size(); ++i)
    if (q.relevant[i]) {
      hits += 1.0;
      sum += hits / static_cast<double>(i + 1);
    }
  return sum / static_cast<double>(q.num_relevant);
}

inline double mean_ap(const RankingResult& r) {
  if (r.queries.empty()) return 0.0;
  double s = 0.0;
  for (const auto& q : r.queries) s += average_precision(q);
  return s / static_cast<double>(r.queries.size());
}

// INP = |relevant| / rank of the last relevant item.
inline double inverse_negative_penalty(const RankedQuery& q) {
  std::size_t hardest = 0;
  for (std::size_t i = 0; i < q.relevant.size(); ++i)
    if (q.relevant[i]) hardest = i + 1;
  return static_cast<double>(q.num_relevant) / static_cast<double>(hardest);
}

inline double minp(const RankingResult& r) {
  if (r.queries.empty()) return 0.0;
  double s = 0.0;
  for (const auto& q : r.queries) s += inverse_negative_penalty(q);
  return s / static_cast<double>(r.queries.size());
}

struct SimilarityHistogram {
  std::vector<std::size_t> positive;  // bins over cosine similarity in [-1, 1]
  std::vector<std::size_t> negative;
  double mean_positive = 0.0;
  double mean_negative = 0.0;
  std::size_t positive_pairs = 0;
  std::size_t negative_pairs = 0;

  std::size_t bins() const { return positive.size(); }
  double bin_lower(std::size_t b) const { return -1.0 + 2.0 * static_cast<double>(b) / static_cast<double>(bins()); }
};

inline std::size_t similarity_bin(double s, std::size_t bins) {
  const double t = (std::clamp(s, -1.0, 1.0) + 1.0) / 2.0 * static_cast<double>(bins);
  return std::min(bins - 1, static_cast<std::size_t>(t));
}

// Cosine similarity of every cross-modality pair (one Infrared row, one
// non-infrared row), split by whether the identities match.
inline SimilarityHistogram similarity_histogram(const RealMatrix& feats, std::span<const int> ids,
                                                std::span<const ModalityTag> tags, std::size_t bins) {
  if (feats.rows() < 2) throw DimensionError("similarity_histogram: need at least two samples");
  if (bins < 2) throw ConfigError("similarity_histogram: bins must be >= 2");
  if (ids.size() != feats.rows() || tags.size() != feats.rows())
    throw DimensionError("similarity_histogram: ids/tags must match feature rows");
  for (std::size_t i = 0; i < feats.rows(); ++i)
    if (norm(feats.row(i)) <= kNormEps) throw NumericError("similarity_histogram: zero-norm feature");

  SimilarityHistogram h;
  h.positive.assign(bins, 0);
  h.negative.assign(bins, 0);
  double pos_sum = 0.0, neg_sum = 0.0;
  for (std::size_t i = 0; i < feats.rows(); ++i) {
    if (tags[i] == ModalityTag::Infrared) continue;
    for (std::size_t j = 0; j < feats.rows(); ++j) {
      if (tags[j] != ModalityTag::Infrared) continue;
      const double s = 1.0 - cosine_distance(feats.row(i), feats.row(j));
      if (ids[i] == ids[j]) {
        ++h.positive[similarity_bin(s, bins)];
        pos_sum += s;
        ++h.positive_pairs;
      } else {
        ++h.negative[similarity_bin(s, bins)];
        neg_sum += s;
        ++h.negative_pairs;
      }
    }
  }
  if (h.positive_pairs) h.mean_positive = pos_sum / static_cast<double>(h.positive_pairs);
  if (h.negative_pairs) h.mean_negative = neg_sum / static_cast<double>(h.negative_pairs);
  return h;
}

// Mean Euclidean distance of cross-modality positive pairs over that of
// intra-modality positive pairs.
inline double modality_gap_ratio(const RealMatrix& feats, std::span<const int> ids, std::span<const ModalityTag> tags) {
  double cross = 0.0, intra = 0.0;
  std::size_t nc = 0, ni = 0;
  for (std::size_t i = 0; i < feats.rows(); ++i)
    for (std::size_t j = i + 1; j < feats.rows(); ++j) {
      if (ids[i] != ids[j]) continue;
      const double d = euclidean_distance(feats.row(i), feats.row(j));
      if (tags[i] == tags[j]) intra += d, ++ni;
      else cross += d, ++nc;
    }
  if (!nc || !ni || intra <= 0.0) throw DegenerateError("modality_gap_ratio: need intra and cross positive pairs");
  return (cross / static_cast<double>(nc)) / (intra / static_cast<double>(ni));
}

enum class Direction { IrToVis, VisToIr };

inline std::string to_string(Direction d) { return d == Direction::IrToVis ? "t2v" : "v2t"; }

inline Direction parse_direction(const std::string& s) {
  if (s == "t2v" || s == "ir2vis") return Direction::IrToVis;
  if (s == "v2t" || s == "vis2ir") return Direction::VisToIr;
  throw ConfigError("unknown direction '" + s + "' (expected t2v|v2t)");
}

struct EvalReport {
  Direction direction = Direction::IrToVis;
  std::vector<double> cmc;  // up to rank 20 (or the gallery size)
  double rank1 = 0.0, rank5 = 0.0, rank10 = 0.0, rank20 = 0.0;
  double map = 0.0;
  double minp = 0.0;
  double gap_ratio = 0.0;
  std::size_t queries = 0;
  std::size_t dropped_queries = 0;
  SimilarityHistogram similarity;

  bool operator==(const EvalReport& o) const {
    return direction == o.direction && cmc == o.cmc && map == o.map && minp == o.minp && gap_ratio == o.gap_ratio &&
           queries == o.queries && dropped_queries == o.dropped_queries &&
           similarity.positive == o.similarity.positive && similarity.negative == o.similarity.negative &&
           similarity.mean_positive == o.similarity.mean_positive &&
           similarity.mean_negative == o.similarity.mean_negative;
  }
};

inline constexpr std::size_t kMaxRank = 20;
inline constexpr std::size_t kHistogramBins = 20;

// Full report for feature rows (already extracted) with their labels and tags.
// Infrared rows are queries and visible rows the gallery for t2v, and the
// reverse for v2t. Grayscale rows are ignored.
inline EvalReport evaluate_features(const RealMatrix& feats, std::span<const int> ids, std::span<const ModalityTag> tags,
                                    Direction dir = Direction::IrToVis) {
  std::vector<std::size_t> qi, gi;
  const ModalityTag qtag = dir == Direction::IrToVis ? ModalityTag::Infrared : ModalityTag::Visible;
  const ModalityTag gtag = dir == Direction::IrToVis ? ModalityTag::Visible : ModalityTag::Infrared;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (tags[i] == qtag) qi.push_back(i);
    if (tags[i] == gtag) gi.push_back(i);
  }
  std::vector<int> qid, gid;
  for (auto i : qi) qid.push_back(ids[i]);
  for (auto i : gi) gid.push_back(ids[i]);
  const RankingResult r = rank(select_rows(feats, qi), select_rows(feats, gi), qid, gid, Metric::Euclid);

  EvalReport rep;
  rep.direction = dir;
  rep.cmc = cmc(r, std::min(kMaxRank, r.gallery_size));
  auto at = [&](std::size_t k) { return rep.cmc.empty() ? 0.0 : rep.cmc[std::min(k, rep.cmc.size()) - 1]; };
  rep.rank1 = at(1);
  rep.rank5 = at(5);
  rep.rank10 = at(10);
  rep.rank20 = at(20);
  rep.map = mean_ap(r);
  rep.minp = minp(r);
  rep.queries = r.queries.size();
  rep.dropped_queries = r.dropped_queries;

  std::vector<std::size_t> both = qi;
  both.insert(both.end(), gi.begin(), gi.end());
  std::vector<int> both_ids;
  std::vector<ModalityTag> both_tags;
  for (auto i : both) both_ids.push_back(ids[i]), both_tags.push_back(tags[i]);
  const RealMatrix both_feats = select_rows(feats, both);
  rep.similarity = similarity_histogram(both_feats, both_ids, both_tags, kHistogramBins);
  rep.gap_ratio = modality_gap_ratio(both_feats, both_ids, both_tags);
  return rep;
}

// key = value lines.
inline void write_report(const EvalReport& r, std::ostream& out) {
  out << "direction = " << to_string(r.direction) << "\n";
  out << "queries = " << r.queries << "\n";
  out << "dropped_queries = " << r.dropped_queries << "\n";
  out << "rank1 = " << format_real(r.rank1) << "\n";
  out << "rank5 = " << format_real(r.rank5) << "\n";
  out << "rank10 = " << format_real(r.rank10) << "\n";
  out << "rank20 = " << format_real(r.rank20) << "\n";
  out << "mAP = " << format_real(r.map) << "\n";
  out << "mINP = " << format_real(r.minp) << "\n";
  out << "gap_ratio = " << format_real(r.gap_ratio) << "\n";
  out << "mean_pos_cos = " << format_real(r.similarity.mean_positive) << "\n";
  out << "mean_neg_cos = " << format_real(r.similarity.mean_negative) << "\n";
}

// Plot-ready table: kind,index,x,value (kind in cmc, pos_hist, neg_hist).
inline void write_report_table(const EvalReport& r, std::ostream& out) {
  out << "kind,index,x,value\n";
  for (std::size_t k = 0; k < r.cmc.size(); ++k) out << "cmc," << k << "," << k + 1 << "," << format_real(r.cmc[k]) << "\n";
  for (std::size_t b = 0; b < r.similarity.bins(); ++b)
    out << "pos_hist," << b << "," << format_real(r.similarity.bin_lower(b)) << "," << r.similarity.positive[b] << "\n";
  for (std::size_t b = 0; b < r.similarity.bins(); ++b)
    out << "neg_hist," << b << "," << format_real(r.similarity.bin_lower(b)) << "," << r.similarity.negative[b] << "\n";
}

}  // namespace crossreid
