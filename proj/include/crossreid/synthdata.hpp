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

// Synthetic cross-modality data with a planted modality gap, and the
// delimiter-separated feature file format.
//
// Generated rows are laid out as [shared | color | modality]:
//   visible   [prototype + noise | identity color + noise | 0                         ]
//   infrared  [prototype + noise | 0                      | gap * (ir offset + noise) ]
//   grayscale grayscale_of(visible)
// The color block identifies a person only in the visible modality, so an
// encoder that leans on it wins visible-visible matches but not cross-modality
// ones. The modality block carries a shared infrared offset plus an
// identity-correlated part, scaled by gap_strength.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "crossreid/batch.hpp"
#include "crossreid/core.hpp"
#include "crossreid/dataset.hpp"

namespace crossreid {

struct GeneratorParams {
  std::size_t n_ids = 16;
  std::size_t per_modality = 8;
  FeatureLayout layout{};
  double gap_strength = 1.5;
  double noise_sigma = 0.5;
  // Spread of the identity color vectors relative to the unit prototypes.
  double color_scale = 1.0;
  // Fraction of the modality block that is identity-correlated (the rest is
  // a common infrared offset).
  double ir_identity_share = 0.5;
  // Standard deviation of the prototype coordinates; color vectors, the
  // infrared offset and the modality marks use the same unit.
  double feature_scale = 1.0;
};

// The desk-scale benchmark used by the trend checks: 16 identities, 8 samples
// per modality, gap strength 1.5, features at scale 0.2 with noise 0.1.
inline GeneratorParams bundled_benchmark_params() {
  GeneratorParams p;
  p.feature_scale = 0.2;
  p.noise_sigma = 0.1;
  return p;
}

inline SynthDataset generate(const GeneratorParams& params, RngStream rng) {
  if (params.n_ids < 2) throw ConfigError("generate: n_ids must be >= 2");
  if (params.per_modality < 2) throw ConfigError("generate: per_modality must be >= 2");
  if (!(params.feature_scale > 0.0)) throw ConfigError("generate: feature_scale must be > 0");
  if (!(params.gap_strength >= 0.0) || !(params.noise_sigma >= 0.0))
    throw ConfigError("generate: gap_strength and noise_sigma must be >= 0");
  params.layout.validate();
  const FeatureLayout& L = params.layout;

  RngStream proto_rng = rng.substream(1);
  RngStream sample_rng = rng.substream(2);

  SynthDataset ds;
  ds.layout = L;
  ds.gap_strength = params.gap_strength;
  ds.noise_sigma = params.noise_sigma;

  RealVector ir_offset(L.modality_dims);
  const double unit = params.feature_scale;
  for (double& v : ir_offset) v = unit * proto_rng.gaussian();

  std::vector<RealVector> colors(params.n_ids, RealVector(L.color_dims));
  std::vector<RealVector> ir_marks(params.n_ids, RealVector(L.modality_dims));
  ds.prototypes.assign(params.n_ids, RealVector(L.shared_dims));
  for (std::size_t id = 0; id < params.n_ids; ++id) {
    for (double& v : ds.prototypes[id]) v = unit * proto_rng.gaussian();
    for (double& v : colors[id]) v = unit * params.color_scale * proto_rng.gaussian();
    for (double& v : ir_marks[id]) v = unit * proto_rng.gaussian();
  }

  const double id_share = params.ir_identity_share;
  std::vector<Sample> visible, infrared, gray;
  for (std::size_t id = 0; id < params.n_ids; ++id) {
    const int label = static_cast<int>(id);
    for (std::size_t k = 0; k < params.per_modality; ++k) {
      RealVector v(L.total(), 0.0);
      for (std::size_t d = 0; d < L.shared_dims; ++d)
        v[d] = ds.prototypes[id][d] + params.noise_sigma * sample_rng.gaussian();
      for (std::size_t d = 0; d < L.color_dims; ++d)
        v[L.color_begin() + d] = colors[id][d] + params.noise_sigma * sample_rng.gaussian();
      gray.push_back({label, ModalityTag::Grayscale, grayscale_of(v, L)});
      visible.push_back({label, ModalityTag::Visible, std::move(v)});
    }
    for (std::size_t k = 0; k < params.per_modality; ++k) {
      RealVector v(L.total(), 0.0);
      for (std::size_t d = 0; d < L.shared_dims; ++d)
        v[d] = ds.prototypes[id][d] + params.noise_sigma * sample_rng.gaussian();
      for (std::size_t d = 0; d < L.modality_dims; ++d)
        v[L.modality_begin() + d] =
            params.gap_strength * ((1.0 - id_share) * ir_offset[d] + id_share * ir_marks[id][d] +
                                   params.noise_sigma * sample_rng.gaussian());
      infrared.push_back({label, ModalityTag::Infrared, std::move(v)});
    }
  }
  ds.samples = std::move(visible);
  ds.samples.insert(ds.samples.end(), infrared.begin(), infrared.end());
  ds.samples.insert(ds.samples.end(), gray.begin(), gray.end());
  return ds;
}

// Mean pairwise Euclidean distance between identity prototypes.
inline double prototype_spacing(const SynthDataset& ds) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < ds.prototypes.size(); ++i)
    for (std::size_t j = i + 1; j < ds.prototypes.size(); ++j) {
      sum += euclidean_distance(ds.prototypes[i], ds.prototypes[j]);
      ++n;
    }
  return n ? sum / static_cast<double>(n) : 0.0;
}

// Train split and a held-out split of disjoint, independently drawn identities.
struct Benchmark {
  SynthDataset train;
  SynthDataset test;
};

inline Benchmark make_benchmark(const GeneratorParams& params, std::uint64_t seed) {
  RngStream root(seed);
  return {generate(params, root.substream(100)), generate(params, root.substream(200))};
}

// ---------------------------------------------------------------------------
// Feature file format (version 1)
//
//   # crossreid-features v1 shared=16 color=8 modality=8
//   id,modality,f0,f1,...,f{d-1}
//   0,vis,0.123...,...
//
// The first comment line is optional; when present it restores the layout
// needed to derive grayscale rows. Generated files also carry one
// "#proto,<id>,v0,..." line per identity prototype. Other lines starting with
// '#' are ignored.
// modality is one of vis, ir, gray. Reals are written with 17 significant
// digits so a save/load round trip is exact.
// ---------------------------------------------------------------------------

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_features(const SynthDataset& ds, std::ostream& out) {
  out << "# crossreid-features v1";
  if (ds.layout)
    out << " shared=" << ds.layout->shared_dims << " color=" << ds.layout->color_dims
        << " modality=" << ds.layout->modality_dims;
  out << " gap=" << format_real(ds.gap_strength) << " noise=" << format_real(ds.noise_sigma) << "\n";
  for (std::size_t id = 0; id < ds.prototypes.size(); ++id) {
    out << "#proto," << id;
    for (double v : ds.prototypes[id]) out << "," << format_real(v);
    out << "\n";
  }
  out << "id,modality";
  for (std::size_t d = 0; d < ds.dim(); ++d) out << ",f" << d;
  out << "\n";
  for (const auto& s : ds.samples) {
    out << s.label << "," << to_string(s.modality);
    for (double v : s.features) out << "," << format_real(v);
    out << "\n";
  }
}

inline void save_features(const SynthDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_features(ds, out);
  if (!out) throw IoError("write to '" + path + "' failed");
}

namespace detail {
inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

inline double parse_real(const std::string& tok, long line) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(tok, &used);
  } catch (const std::exception&) {
    throw ParseError("not a number: '" + tok + "'", line);
  }
  if (used != tok.size()) throw ParseError("not a number: '" + tok + "'", line);
  if (!std::isfinite(v)) throw ParseError("non-finite value: '" + tok + "'", line);
  return v;
}

inline long parse_int(const std::string& tok, long line) {
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(tok, &used);
  } catch (const std::exception&) {
    throw ParseError("not an integer: '" + tok + "'", line);
  }
  if (used != tok.size()) throw ParseError("not an integer: '" + tok + "'", line);
  return v;
}

inline void parse_meta(const std::string& line, SynthDataset& ds, long lineno) {
  std::istringstream in(line.substr(1));
  std::string tag, version, kv;
  in >> tag >> version;
  if (tag != "crossreid-features") return;
  if (version != "v1") throw ParseError("unsupported feature file version '" + version + "'", lineno);
  FeatureLayout L;
  int seen = 0;
  while (in >> kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
    if (key == "shared") L.shared_dims = static_cast<std::size_t>(parse_int(val, lineno)), ++seen;
    else if (key == "color") L.color_dims = static_cast<std::size_t>(parse_int(val, lineno)), ++seen;
    else if (key == "modality") L.modality_dims = static_cast<std::size_t>(parse_int(val, lineno)), ++seen;
    else if (key == "gap") ds.gap_strength = parse_real(val, lineno);
    else if (key == "noise") ds.noise_sigma = parse_real(val, lineno);
  }
  if (seen == 3) ds.layout = L;
}
}  // namespace detail

inline SynthDataset read_features(std::istream& in) {
  SynthDataset ds;
  std::string line;
  long lineno = 0;
  std::size_t dim = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.rfind("#proto,", 0) == 0) {
      const auto tok = detail::split(line.substr(7), ',');
      if (tok.empty() || detail::parse_int(tok[0], lineno) != static_cast<long>(ds.prototypes.size()))
        throw ParseError("prototype lines must be numbered 0, 1, ...", lineno);
      RealVector proto;
      for (std::size_t i = 1; i < tok.size(); ++i) proto.push_back(detail::parse_real(tok[i], lineno));
      ds.prototypes.push_back(std::move(proto));
      continue;
    }
    if (line[0] == '#') {
      if (!have_header) detail::parse_meta(line, ds, lineno);
      continue;
    }
    const auto tok = detail::split(line, ',');
    if (!have_header) {
      if (tok.size() < 3 || tok[0] != "id" || tok[1] != "modality")
        throw ParseError("expected header 'id,modality,f0,...'", lineno);
      for (std::size_t d = 0; d + 2 < tok.size(); ++d)
        if (tok[d + 2] != "f" + std::to_string(d))
          throw ParseError("header column " + std::to_string(d + 2) + " should be 'f" + std::to_string(d) + "'",
                           lineno);
      dim = tok.size() - 2;
      if (ds.layout && ds.layout->total() != dim)
        throw ParseError("header declares " + std::to_string(dim) + " feature columns but layout totals " +
                             std::to_string(ds.layout->total()),
                         lineno);
      have_header = true;
      continue;
    }
    if (tok.size() != dim + 2)
      throw ParseError("expected " + std::to_string(dim + 2) + " fields, got " + std::to_string(tok.size()),
                       lineno);
    Sample s;
    s.label = static_cast<int>(detail::parse_int(tok[0], lineno));
    const auto tag = parse_modality(tok[1]);
    if (!tag) throw ParseError("unknown modality tag '" + tok[1] + "'", lineno);
    s.modality = *tag;
    s.features.reserve(dim);
    for (std::size_t d = 0; d < dim; ++d) s.features.push_back(detail::parse_real(tok[d + 2], lineno));
    ds.samples.push_back(std::move(s));
  }
  if (!have_header) throw ParseError("missing header line", lineno);
  return ds;
}

inline SynthDataset load_features(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  return read_features(in);
}

}  // namespace crossreid
