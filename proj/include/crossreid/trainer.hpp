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

// Two-stage progressive training loop and the ablation driver.

#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "crossreid/batch.hpp"
#include "crossreid/evalkit.hpp"
#include "crossreid/losses.hpp"
#include "crossreid/model.hpp"
#include "crossreid/optim.hpp"
#include "crossreid/synthdata.hpp"

namespace crossreid {

// Which modality pairing the first `stage1_epochs` epochs use.
enum class Schedule {
  GrayThenRgb,  // [0, t) grayscale+infrared, then visible+infrared
  RgbThenGray,  // [0, T-t) visible+infrared, then grayscale+infrared
};

inline std::string to_string(Schedule s) { return s == Schedule::GrayThenRgb ? "gray-rgb" : "rgb-gray"; }

inline Schedule parse_schedule(const std::string& s) {
  if (s == "gray-rgb") return Schedule::GrayThenRgb;
  if (s == "rgb-gray") return Schedule::RgbThenGray;
  throw ConfigError("unknown schedule '" + s + "' (expected gray-rgb|rgb-gray)");
}

struct TrainConfig {
  BatchSpec batch{};
  std::size_t hidden_dim = 64;
  std::size_t embedding_dim = 64;
  Activation activation = Activation::Relu;
  std::size_t epochs = 40;
  std::size_t stage1_epochs = 10;
  Schedule schedule = Schedule::GrayThenRgb;
  LossConfig loss{};
  AdamWConfig optim{};
  // Interpolate the cosine schedule within an epoch instead of per epoch.
  bool per_step_lr = false;
  // Start a fresh optimizer state at the stage boundary.
  bool reset_optim_at_stage = false;
  std::uint64_t seed = 0;
  // Evaluate every n epochs (0: only after the last epoch, when an eval set
  // is given).
  std::size_t eval_every = 0;

  void validate() const {
    batch.validate();
    loss.validate();
    optim.validate();
    if (stage1_epochs > epochs) throw ConfigError("train.stage1_epochs must be <= train.epochs");
    if (!hidden_dim || !embedding_dim) throw ConfigError("model dims must be >= 1");
  }

  // stage1_epochs always counts grayscale+infrared epochs; the schedule only
  // decides whether they come first or last.
  Stage stage_of(std::size_t epoch) const {
    if (schedule == Schedule::GrayThenRgb) return epoch < stage1_epochs ? Stage::Stage1 : Stage::Stage2;
    return epoch + stage1_epochs >= epochs ? Stage::Stage1 : Stage::Stage2;
  }
};

// Training recipe paired with bundled_benchmark_params(): defaults apart from
// a 3e-3 base learning rate, which the small MLP needs to converge in 40
// epochs.
inline TrainConfig desk_recipe() {
  TrainConfig c;
  c.optim.base_lr = 3e-3;
  return c;
}

// Every configurable key with its current value, in a stable order.
inline std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& c) {
  auto r = [](double v) { return format_real(v); };
  return {
      {"batch.P", std::to_string(c.batch.P)},
      {"batch.K", std::to_string(c.batch.K)},
      {"model.hidden", std::to_string(c.hidden_dim)},
      {"model.embedding", std::to_string(c.embedding_dim)},
      {"model.activation", to_string(c.activation)},
      {"train.epochs", std::to_string(c.epochs)},
      {"train.stage1_epochs", std::to_string(c.stage1_epochs)},
      {"train.schedule", to_string(c.schedule)},
      {"train.per_step_lr", c.per_step_lr ? "true" : "false"},
      {"train.reset_optim_at_stage", c.reset_optim_at_stage ? "true" : "false"},
      {"train.seed", std::to_string(c.seed)},
      {"train.eval_every", std::to_string(c.eval_every)},
      {"loss.margin", r(c.loss.margin)},
      {"loss.lambda1", r(c.loss.lambda1)},
      {"loss.lambda2", r(c.loss.lambda2)},
      {"loss.msel_metric", to_string(c.loss.msel_metric)},
      {"loss.dcl_mode", to_string(c.loss.dcl_mode)},
      {"loss.include_id_stage2", c.loss.include_id_stage2 ? "true" : "false"},
      {"optim.lr", r(c.optim.base_lr)},
      {"optim.beta1", r(c.optim.beta1)},
      {"optim.beta2", r(c.optim.beta2)},
      {"optim.eps", r(c.optim.eps)},
      {"optim.weight_decay", r(c.optim.weight_decay)},
      {"optim.min_lr", r(c.optim.min_lr)},
  };
}

namespace detail {
inline std::size_t parse_count(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long x = 0;
  try {
    x = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (v.empty() || used != v.size() || v[0] == '-') throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(x);
}

inline double parse_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (v.empty() || used != v.size() || !std::isfinite(x)) throw ConfigError(key + ": expected a real number, got '" + v + "'");
  return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true|false, got '" + v + "'");
}
}  // namespace detail

// Applies one dotted key. Unknown keys are a ConfigError naming the key.
inline void apply_setting(TrainConfig& c, const std::string& key, const std::string& value) {
  using namespace detail;
  try {
    if (key == "batch.P") c.batch.P = parse_count(key, value);
    else if (key == "batch.K") c.batch.K = parse_count(key, value);
    else if (key == "model.hidden") c.hidden_dim = parse_count(key, value);
    else if (key == "model.embedding") c.embedding_dim = parse_count(key, value);
    else if (key == "model.activation") c.activation = parse_activation(value);
    else if (key == "train.epochs") c.epochs = parse_count(key, value);
    else if (key == "train.stage1_epochs" || key == "stage1_epochs") c.stage1_epochs = parse_count(key, value);
    else if (key == "train.schedule") c.schedule = parse_schedule(value);
    else if (key == "train.per_step_lr") c.per_step_lr = parse_bool(key, value);
    else if (key == "train.reset_optim_at_stage") c.reset_optim_at_stage = parse_bool(key, value);
    else if (key == "train.seed" || key == "seed") c.seed = parse_count(key, value);
    else if (key == "train.eval_every") c.eval_every = parse_count(key, value);
    else if (key == "loss.margin") c.loss.margin = parse_double(key, value);
    else if (key == "loss.lambda1") c.loss.lambda1 = parse_double(key, value);
    else if (key == "loss.lambda2") c.loss.lambda2 = parse_double(key, value);
    else if (key == "loss.msel_metric") c.loss.msel_metric = parse_metric(value);
    else if (key == "loss.dcl_mode") c.loss.dcl_mode = parse_dcl_mode(value);
    else if (key == "loss.include_id_stage2") c.loss.include_id_stage2 = parse_bool(key, value);
    else if (key == "optim.lr") c.optim.base_lr = parse_double(key, value);
    else if (key == "optim.beta1") c.optim.beta1 = parse_double(key, value);
    else if (key == "optim.beta2") c.optim.beta2 = parse_double(key, value);
    else if (key == "optim.eps") c.optim.eps = parse_double(key, value);
    else if (key == "optim.weight_decay") c.optim.weight_decay = parse_double(key, value);
    else if (key == "optim.min_lr") c.optim.min_lr = parse_double(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    if (msg.rfind(key, 0) == 0 || msg.find("'" + key + "'") != std::string::npos) throw;
    throw ConfigError(key + ": " + msg);
  }
}

// Reads flat "key = value" lines. '#' starts a comment; blank lines are
// skipped. Pairs come back in file order with their 1-based line numbers.
struct Setting {
  std::string key, value;
  long line = 0;
};

inline std::vector<Setting> read_settings(std::istream& in) {
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
  };
  std::vector<Setting> out;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value', got '" + line + "'", lineno);
    Setting s{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), lineno};
    if (s.key.empty()) throw ParseError("missing key before '='", lineno);
    out.push_back(std::move(s));
  }
  return out;
}

// Splits "key=value".
inline Setting parse_override(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + text + "' is not key=value");
  return {text.substr(0, eq), text.substr(eq + 1), 0};
}

struct EpochLog {
  std::size_t epoch = 0;
  Stage stage = Stage::Stage1;
  double lr = 0.0;
  double loss = 0.0;                   // mean objective value over batches
  std::map<std::string, double> terms;  // mean unweighted term values
  std::optional<EvalReport> eval;
};

inline constexpr std::array<const char*, 6> kLogTerms = {"id", "intra", "global", "msel", "dcl", "total"};

inline void write_log_header(std::ostream& out) {
  out << "epoch,stage,lr,loss_id,loss_intra,loss_global,loss_msel,loss_dcl,loss_total,rank1,mAP,mINP,gap_ratio\n";
}

// Terms that were not evaluated in an epoch are left empty.
inline void write_log_row(const EpochLog& log, std::ostream& out) {
  out << log.epoch << "," << to_string(log.stage) << "," << format_real(log.lr);
  for (std::size_t i = 0; i + 1 < kLogTerms.size(); ++i) {
    out << ",";
    auto it = log.terms.find(kLogTerms[i]);
    if (it != log.terms.end()) out << format_real(it->second);
  }
  out << "," << format_real(log.loss);
  if (log.eval)
    out << "," << format_real(log.eval->rank1) << "," << format_real(log.eval->map) << "," << format_real(log.eval->minp)
        << "," << format_real(log.eval->gap_ratio);
  else
    out << ",,,,";
  out << "\n";
}

class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::size_t epoch, std::size_t batch)
      : Error("epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) + ": " + what),
        epoch_(epoch),
        batch_(batch) {}
  std::size_t epoch() const { return epoch_; }
  std::size_t batch() const { return batch_; }

 private:
  std::size_t epoch_, batch_;
};

struct TrainResult {
  ModelParams params;
  OptimState optim;
  std::vector<EpochLog> logs;
};

// Evaluates post-BN features of the visible and infrared rows of `ds`.
inline EvalReport evaluate_model(const ModelParams& params, const SynthDataset& ds, Direction dir = Direction::IrToVis) {
  std::vector<RealVector> rows;
  std::vector<int> ids;
  std::vector<ModalityTag> tags;
  for (const auto& s : ds.samples)
    if (s.modality != ModalityTag::Grayscale) {
      rows.push_back(s.features);
      ids.push_back(s.label);
      tags.push_back(s.modality);
    }
  return evaluate_features(extract_test_features(params, RealMatrix::from_rows(rows)), ids, tags, dir);
}

inline std::size_t batches_per_epoch(const SynthDataset& ds, const BatchSpec& spec) {
  const std::size_t n = ds.count(ModalityTag::Visible) + ds.count(ModalityTag::Infrared);
  return std::max<std::size_t>(1, (n + spec.rows() - 1) / spec.rows());
}

struct TrainHooks {
  // Called after each epoch with the current state.
  std::function<void(const EpochLog&, const ModelParams&, const OptimState&)> on_epoch;
};

inline TrainResult train(const SynthDataset& dataset, const TrainConfig& cfg,
                         const SynthDataset* eval_set = nullptr, const TrainHooks& hooks = {}) {
  cfg.validate();
  const std::vector<int> ids = dataset.identities();
  if (ids.size() < cfg.batch.P) throw SamplingError("train: dataset has fewer identities than batch.P");
  std::map<int, int> class_of;
  for (std::size_t i = 0; i < ids.size(); ++i) class_of[ids[i]] = static_cast<int>(i);

  const RngStream root(cfg.seed);
  ModelDims dims{dataset.dim(), cfg.hidden_dim, cfg.embedding_dim, ids.size()};
  TrainResult res;
  res.params = init_params(dims, root.substream(1), cfg.activation);
  res.optim = make_optim_state(res.params, cfg.optim);
  const RngStream sampler_root = root.substream(2);

  const std::size_t nb = batches_per_epoch(dataset, cfg.batch);
  const double min_lr = cfg.optim.resolved_min_lr();
  std::optional<Stage> prev_stage;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const Stage stage = cfg.stage_of(epoch);
    if (cfg.reset_optim_at_stage && prev_stage && *prev_stage != stage)
      res.optim = make_optim_state(res.params, cfg.optim);
    prev_stage = stage;

    EpochLog log;
    log.epoch = epoch;
    log.stage = stage;
    log.lr = cosine_lr(static_cast<double>(epoch), static_cast<double>(cfg.epochs), cfg.optim.base_lr, min_lr);
    RngStream epoch_rng = sampler_root.substream(epoch);
    for (std::size_t b = 0; b < nb; ++b) {
      try {
        RngStream batch_rng = epoch_rng.substream(b);
        const LabeledBatch batch = sample_batch(dataset, cfg.batch, stage, batch_rng);
        std::vector<int> classes(batch.size());
        for (std::size_t i = 0; i < batch.size(); ++i) classes[i] = class_of.at(batch.labels[i]);

        ForwardResult fw = forward(res.params, batch.features, Mode::Train);
        ObjectiveOutput obj =
            stage_objective(stage, batch.with_features(fw.embeddings), fw.logits, classes, cfg.loss);
        if (!std::isfinite(obj.value)) throw NumericError("non-finite objective");
        ParamGrads grads =
            backward(fw.trace, res.params, {std::move(obj.grad_embeddings), {}, std::move(obj.grad_logits)});
        const double lr = cfg.per_step_lr
                              ? cosine_lr(static_cast<double>(epoch) + static_cast<double>(b) / static_cast<double>(nb),
                                          static_cast<double>(cfg.epochs), cfg.optim.base_lr, min_lr)
                              : log.lr;
        step(res.optim, res.params, grads, lr);
        update_running_stats(res.params, fw.trace);

        log.loss += obj.value / static_cast<double>(nb);
        for (const auto& [k, v] : obj.terms) log.terms[k] += v / static_cast<double>(nb);
      } catch (const TrainingError&) {
        throw;
      } catch (const Error& e) {
        throw TrainingError(e.what(), epoch, b);
      }
    }
    const bool last = epoch + 1 == cfg.epochs;
    if (eval_set && (last || (cfg.eval_every && (epoch + 1) % cfg.eval_every == 0)))
      log.eval = evaluate_model(res.params, *eval_set);
    if (hooks.on_epoch) hooks.on_epoch(log, res.params, res.optim);
    res.logs.push_back(std::move(log));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Ablation

struct Variant {
  std::string name;
  std::vector<std::pair<std::string, std::string>> settings;  // dotted key overrides
};

struct VariantRun {
  std::uint64_t seed = 0;
  EvalReport report;
};

struct VariantSummary {
  std::string name;
  std::vector<VariantRun> runs;
  std::string error;  // non-empty when the variant failed

  struct Stat {
    double mean = 0.0, std = 0.0;
  };
  template <typename F>
  Stat stat(F&& field) const {
    Stat s;
    if (runs.empty()) return s;
    for (const auto& r : runs) s.mean += field(r.report);
    s.mean /= static_cast<double>(runs.size());
    for (const auto& r : runs) s.std += std::pow(field(r.report) - s.mean, 2);
    s.std = runs.size() > 1 ? std::sqrt(s.std / static_cast<double>(runs.size() - 1)) : 0.0;
    return s;
  }
  Stat rank1() const { return stat([](const EvalReport& r) { return r.rank1; }); }
  Stat map() const { return stat([](const EvalReport& r) { return r.map; }); }
  Stat minp() const { return stat([](const EvalReport& r) { return r.minp; }); }
  Stat gap_ratio() const { return stat([](const EvalReport& r) { return r.gap_ratio; }); }
  Stat pos_cos() const { return stat([](const EvalReport& r) { return r.similarity.mean_positive; }); }
};

// Data for one seed: a train split and a held-out split.
using BenchmarkFactory = std::function<Benchmark(std::uint64_t seed)>;

// Trains base_cfg with each variant's overrides over every seed and evaluates
// on the held-out split. An empty variant list runs the base config alone.
// A failing variant is recorded and the others continue.
inline std::vector<VariantSummary> ablate(const BenchmarkFactory& data, const TrainConfig& base_cfg,
                                          std::vector<Variant> variants, const std::vector<std::uint64_t>& seeds) {
  if (variants.empty()) variants.push_back({"base", {}});
  std::vector<VariantSummary> out;
  std::map<std::uint64_t, Benchmark> cache;
  for (const auto& v : variants) {
    VariantSummary summary;
    summary.name = v.name;
    try {
      TrainConfig cfg = base_cfg;
      for (const auto& [k, val] : v.settings) apply_setting(cfg, k, val);
      cfg.validate();
      for (std::uint64_t seed : seeds) {
        auto it = cache.find(seed);
        if (it == cache.end()) it = cache.emplace(seed, data(seed)).first;
        cfg.seed = seed;
        TrainResult r = train(it->second.train, cfg);
        summary.runs.push_back({seed, evaluate_model(r.params, it->second.test)});
      }
    } catch (const Error& e) {
      summary.error = e.what();
    }
    out.push_back(std::move(summary));
  }
  return out;
}

inline void write_ablation_table(const std::vector<VariantSummary>& rows, std::ostream& out) {
  out << "variant,runs,rank1_mean,rank1_std,map_mean,map_std,minp_mean,minp_std,gap_ratio_mean,pos_cos_mean,error\n";
  for (const auto& s : rows) {
    const auto r1 = s.rank1(), m = s.map(), mi = s.minp(), g = s.gap_ratio(), pc = s.pos_cos();
    out << s.name << "," << s.runs.size() << "," << format_real(r1.mean) << "," << format_real(r1.std) << ","
        << format_real(m.mean) << "," << format_real(m.std) << "," << format_real(mi.mean) << "," << format_real(mi.std)
        << "," << format_real(g.mean) << "," << format_real(pc.mean) << "," << s.error << "\n";
  }
}

}  // namespace crossreid
