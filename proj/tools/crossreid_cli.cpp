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
// crossreid: generate / train / eval / ablate / gradcheck.
//
// Exit codes: 0 success, 1 usage, config or parse error, 2 runtime failure.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "crossreid/checkpoint.hpp"
#include "crossreid/gradcheck.hpp"
#include "crossreid/trainer.hpp"

namespace fs = std::filesystem;
using namespace crossreid;

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

struct GeneratorFlags {
  GeneratorParams params = bundled_benchmark_params();

  void add_to(CLI::App* cmd) {
    cmd->add_option("--ids", params.n_ids, "Number of identities")->check(CLI::Range(std::size_t{2}, std::size_t{1} << 20));
    cmd->add_option("--per-modality", params.per_modality, "Samples per identity and modality")
        ->check(CLI::Range(std::size_t{2}, std::size_t{1} << 20));
    cmd->add_option("--shared", params.layout.shared_dims, "Shared block width")->check(CLI::PositiveNumber);
    cmd->add_option("--color", params.layout.color_dims, "Color block width")->check(CLI::PositiveNumber);
    cmd->add_option("--modality", params.layout.modality_dims, "Modality block width")->check(CLI::PositiveNumber);
    cmd->add_option("--gap", params.gap_strength, "Modality gap strength")->check(CLI::NonNegativeNumber);
    cmd->add_option("--noise", params.noise_sigma, "Per-sample noise sigma")->check(CLI::NonNegativeNumber);
    cmd->add_option("--scale", params.feature_scale, "Prototype coordinate scale")->check(CLI::PositiveNumber);
  }
};

// Config file first, then --set overrides in order. Keys under data. are
// returned instead of applied.
struct ResolvedConfig {
  TrainConfig train;
  std::map<std::string, std::string> data;
};

ResolvedConfig resolve_config(const std::string& config_path, const std::vector<std::string>& overrides) {
  ResolvedConfig rc;
  auto apply = [&](const Setting& s) {
    if (s.key.rfind("data.", 0) == 0) {
      rc.data[s.key] = s.value;
      return;
    }
    try {
      apply_setting(rc.train, s.key, s.value);
    } catch (const ConfigError& e) {
      if (s.line > 0) throw ConfigError(config_path + ": line " + std::to_string(s.line) + ": " + e.what());
      throw;
    }
  };
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("cannot open config '" + config_path + "'");
    std::vector<Setting> settings;
    try {
      settings = read_settings(in);
    } catch (const ParseError& e) {
      throw ParseError(config_path + ": " + e.what());
    }
    for (const auto& s : settings) apply(s);
  }
  for (const auto& o : overrides) apply(parse_override(o));
  rc.train.validate();
  return rc;
}

SynthDataset load_dataset(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("dataset '" + path + "' does not exist");
  return load_features(path);
}

void print_report(const EvalReport& r, std::ostream& out) {
  out << "[" << to_string(r.direction) << "]\n";
  write_report(r, out);
}

// ---------------------------------------------------------------------------

int cmd_generate(const GeneratorFlags& g, std::uint64_t seed, const std::string& out, const std::string& held_out) {
  const Benchmark b = make_benchmark(g.params, seed);
  save_features(b.train, out);
  std::cout << "wrote " << out << ": " << b.train.samples.size() << " rows (" << b.train.count(ModalityTag::Visible)
            << " vis, " << b.train.count(ModalityTag::Infrared) << " ir, " << b.train.count(ModalityTag::Grayscale)
            << " gray), " << g.params.n_ids << " identities, dim " << b.train.dim() << "\n";
  if (!held_out.empty()) {
    save_features(b.test, held_out);
    std::cout << "wrote " << held_out << ": " << b.test.samples.size() << " rows (held-out identities)\n";
  }
  return 0;
}

struct TrainFlags {
  std::string config, dataset, eval_dataset, out;
  std::vector<std::string> overrides;
  bool quiet = false;
};

int cmd_train(const TrainFlags& f) {
  // Everything is validated and loaded before the run directory appears.
  const ResolvedConfig rc = resolve_config(f.config, f.overrides);
  std::string train_path = f.dataset, eval_path = f.eval_dataset;
  if (train_path.empty() && rc.data.count("data.train")) train_path = rc.data.at("data.train");
  if (eval_path.empty() && rc.data.count("data.eval")) eval_path = rc.data.at("data.eval");
  if (train_path.empty()) throw ConfigError("no training dataset (use --dataset or data.train)");
  const SynthDataset train_ds = load_dataset(train_path);
  std::optional<SynthDataset> eval_ds;
  if (!eval_path.empty()) eval_ds = load_dataset(eval_path);
  if (fs::exists(f.out)) throw ConfigError("run directory '" + f.out + "' already exists");

  const fs::path final_dir = f.out;
  const fs::path work = final_dir.string() + ".partial";
  fs::remove_all(work);
  fs::create_directories(work);
  try {
    {
      std::ofstream m(work / "manifest.txt");
      m << "# crossreid run manifest\n";
      m << "# tool_version = " << kVersion << "\n";
      m << "# started = " << utc_now() << "\n";
      m << "# artifacts = manifest.txt log.csv checkpoint.txt" << (eval_ds ? " report.txt report_table.csv" : "")
        << "\n";
      m << "# replay: crossreid train --config <this file> --out <new dir>\n";
      m << "data.train = " << fs::absolute(train_path).string() << "\n";
      if (eval_ds) m << "data.eval = " << fs::absolute(eval_path).string() << "\n";
      for (const auto& [k, v] : config_entries(rc.train)) m << k << " = " << v << "\n";
      if (!m) throw IoError("cannot write manifest");
    }
    std::ofstream log(work / "log.csv");
    write_log_header(log);
    TrainHooks hooks;
    hooks.on_epoch = [&](const EpochLog& e, const ModelParams&, const OptimState&) {
      write_log_row(e, log);
      log.flush();
      if (!f.quiet) {
        std::cout << "epoch " << e.epoch << " " << to_string(e.stage) << " lr " << format_real(e.lr) << " loss "
                  << format_real(e.loss);
        if (e.eval) std::cout << " rank1 " << e.eval->rank1 << " mAP " << e.eval->map << " mINP " << e.eval->minp;
        std::cout << "\n";
      }
    };
    const TrainResult r = train(train_ds, rc.train, eval_ds ? &*eval_ds : nullptr, hooks);
    save_checkpoint({r.params, r.optim}, (work / "checkpoint.txt").string());
    if (eval_ds) {
      const EvalReport& rep = *r.logs.back().eval;
      std::ofstream rt(work / "report.txt"), tab(work / "report_table.csv");
      write_report(rep, rt);
      write_report_table(rep, tab);
      print_report(rep, std::cout);
    }
    log.close();
    fs::rename(work, final_dir);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(work, ec);
    throw;
  }
  std::cout << "run written to " << final_dir.string() << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& dataset, const std::string& direction,
             const std::string& out) {
  std::vector<Direction> dirs;
  if (direction == "both") dirs = {Direction::IrToVis, Direction::VisToIr};
  else dirs = {parse_direction(direction)};
  if (!fs::exists(ckpt_path)) throw ConfigError("checkpoint '" + ckpt_path + "' does not exist");
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const SynthDataset ds = load_dataset(dataset);
  if (ds.dim() != ck.params.dims.input)
    throw DimensionError("dataset dim " + std::to_string(ds.dim()) + " != checkpoint input dim " +
                         std::to_string(ck.params.dims.input));
  std::vector<EvalReport> reports;
  for (Direction d : dirs) reports.push_back(evaluate_model(ck.params, ds, d));
  if (!out.empty()) fs::create_directories(out);
  for (const auto& r : reports) {
    print_report(r, std::cout);
    if (!out.empty()) {
      std::ofstream rt(fs::path(out) / ("report_" + to_string(r.direction) + ".txt"));
      std::ofstream tab(fs::path(out) / ("report_table_" + to_string(r.direction) + ".csv"));
      write_report(r, rt);
      write_report_table(r, tab);
    }
  }
  return 0;
}

std::vector<Variant> ladder() {
  return {
      {"rgb", {{"train.stage1_epochs", "0"}, {"loss.lambda1", "0"}, {"loss.lambda2", "0"}}},
      {"rgb-gray", {{"train.schedule", "rgb-gray"}, {"loss.lambda1", "0"}, {"loss.lambda2", "0"}}},
      {"gray-rgb", {{"loss.lambda1", "0"}, {"loss.lambda2", "0"}}},
      {"msel", {{"loss.lambda2", "0"}}},
      {"full-dyn", {}},
      {"full-all", {{"loss.dcl_mode", "all"}}},
  };
}

// "name:key=value,key=value"
Variant parse_variant(const std::string& text) {
  const auto colon = text.find(':');
  Variant v;
  v.name = text.substr(0, colon);
  if (v.name.empty()) throw ConfigError("variant '" + text + "' needs a name");
  if (colon == std::string::npos) return v;
  std::stringstream rest(text.substr(colon + 1));
  std::string item;
  while (std::getline(rest, item, ','))
    if (!item.empty()) {
      const Setting s = parse_override(item);
      v.settings.emplace_back(s.key, s.value);
    }
  return v;
}

int cmd_ablate(const GeneratorFlags& g, const std::string& config, const std::vector<std::string>& overrides,
               const std::vector<std::string>& variant_specs, const std::string& preset, std::size_t n_seeds,
               const std::string& out) {
  const ResolvedConfig rc = resolve_config(config, overrides);
  std::vector<Variant> variants;
  if (preset == "ladder") variants = ladder();
  else if (!preset.empty()) throw ConfigError("unknown preset '" + preset + "' (expected ladder)");
  for (const auto& s : variant_specs) variants.push_back(parse_variant(s));
  for (const auto& v : variants) {  // reject bad keys before any training
    TrainConfig probe = rc.train;
    for (const auto& [k, val] : v.settings) apply_setting(probe, k, val);
    probe.validate();
  }
  std::vector<std::uint64_t> seeds(n_seeds);
  for (std::size_t i = 0; i < n_seeds; ++i) seeds[i] = i;
  const GeneratorParams gp = g.params;
  const auto rows = ablate([&](std::uint64_t s) { return make_benchmark(gp, s); }, rc.train, variants, seeds);
  if (out.empty()) {
    write_ablation_table(rows, std::cout);
  } else {
    std::ofstream f(out);
    if (!f) throw IoError("cannot open '" + out + "' for writing");
    write_ablation_table(rows, f);
    std::cout << "wrote " << out << "\n";
  }
  for (const auto& r : rows)
    if (!r.error.empty()) {
      std::cerr << "variant " << r.name << " failed: " << r.error << "\n";
      return 2;
    }
  return 0;
}

int cmd_gradcheck(std::size_t n_seeds, std::size_t instances, const std::string& fault) {
  GradCheckOptions base;
  base.instances = instances;
  base.fault = parse_fault(fault);
  std::map<std::string, double> worst;
  std::vector<std::string> order;
  bool ok = true;
  std::printf("%-6s %-14s %9s %7s %12s %s\n", "seed", "component", "instances", "redraws", "max_rel_err", "status");
  for (std::size_t s = 0; s < n_seeds; ++s) {
    GradCheckOptions opt = base;
    opt.seed = s;
    for (const auto& c : run_gradcheck(opt)) {
      const bool pass = c.passed(opt.tolerance);
      ok = ok && pass;
      if (!worst.count(c.name)) order.push_back(c.name);
      worst[c.name] = std::max(worst[c.name], c.max_rel_err);
      std::printf("%-6zu %-14s %9zu %7zu %12.3e %s\n", s, c.name.c_str(), c.instances, c.redraws, c.max_rel_err,
                  pass ? "PASS" : "FAIL");
    }
  }
  std::printf("\nworst over %zu seed(s), tolerance %.0e:\n", n_seeds, base.tolerance);
  for (const auto& n : order)
    std::printf("  %-14s %12.3e %s\n", n.c_str(), worst[n], worst[n] <= base.tolerance ? "PASS" : "FAIL");
  std::printf("%s\n", ok ? "gradcheck passed" : "gradcheck FAILED");
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-modality re-identification toolkit on synthetic features"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  GeneratorFlags gen_flags;
  std::uint64_t gen_seed = 0;
  std::string gen_out, gen_held_out;
  auto* gen = app.add_subcommand("generate", "Write a synthetic feature file");
  gen_flags.add_to(gen);
  gen->add_option("--seed", gen_seed, "Generator seed");
  gen->add_option("--out", gen_out, "Output feature file")->required();
  gen->add_option("--held-out", gen_held_out, "Also write held-out identities here");

  TrainFlags tf;
  auto* tr = app.add_subcommand("train", "Train a model and write a run directory");
  tr->add_option("--config", tf.config, "key = value config file");
  tr->add_option("--set", tf.overrides, "Override key=value (repeatable)");
  tr->add_option("--dataset", tf.dataset, "Training feature file");
  tr->add_option("--eval-dataset", tf.eval_dataset, "Evaluation feature file");
  tr->add_option("--out", tf.out, "Run directory (must not exist)")->required();
  tr->add_flag("--quiet", tf.quiet, "No per-epoch output");

  std::string ev_ckpt, ev_data, ev_dir = "t2v", ev_out;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a feature file");
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
  ev->add_option("--dataset", ev_data, "Feature file")->required();
  ev->add_option("--direction", ev_dir, "t2v (infrared queries), v2t, or both")
      ->check(CLI::IsMember({"t2v", "v2t", "both"}));
  ev->add_option("--out", ev_out, "Directory for report files");

  GeneratorFlags ab_gen;
  std::string ab_config, ab_preset, ab_out;
  std::vector<std::string> ab_overrides, ab_variants;
  std::size_t ab_seeds = 5;
  auto* ab = app.add_subcommand("ablate", "Train variants over seeds on generated benchmarks");
  ab_gen.add_to(ab);
  ab->add_option("--config", ab_config, "Base config file");
  ab->add_option("--set", ab_overrides, "Base override key=value (repeatable)");
  ab->add_option("--variant", ab_variants, "name:key=value,key=value (repeatable)");
  ab->add_option("--preset", ab_preset, "Built-in variant set")->check(CLI::IsMember({"ladder"}));
  ab->add_option("--seeds", ab_seeds, "Seeds 0..N-1")->check(CLI::PositiveNumber);
  ab->add_option("--out", ab_out, "CSV output (default stdout)");

  std::size_t gc_seeds = 1, gc_instances = 20;
  std::string gc_fault = "none";
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every loss and the model");
  gc->add_option("--seeds", gc_seeds, "Independent resamples")->check(CLI::PositiveNumber);
  gc->add_option("--instances", gc_instances, "Instances per component")->check(CLI::PositiveNumber);
  gc->add_option("--inject-fault", gc_fault, "Deliberate gradient bug")->check(CLI::IsMember({"none", "msel-sign"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_generate(gen_flags, gen_seed, gen_out, gen_held_out);
    if (*tr) return cmd_train(tf);
    if (*ev) return cmd_eval(ev_ckpt, ev_data, ev_dir, ev_out);
    if (*ab) return cmd_ablate(ab_gen, ab_config, ab_overrides, ab_variants, ab_preset, ab_seeds, ab_out);
    if (*gc) return cmd_gradcheck(gc_seeds, gc_instances, gc_fault);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
