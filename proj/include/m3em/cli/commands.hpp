/*
 * Copyright 2026 The m3em Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "m3em/cli/run_config.hpp"
#include "m3em/harness/evaluate.hpp"
#include "m3em/harness/gradcheck.hpp"
#include "m3em/harness/train.hpp"
#include "m3em/model/checkpoint.hpp"
#include "m3em/synth/feature_file.hpp"

namespace m3em::cli {

namespace fs = std::filesystem;

/// Bad flag combinations that the argument parser cannot catch by itself.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised by the gradcheck command when at least one check fails.
class GradCheckFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitIo = 2, kExitNumeric = 3 };

struct CommandOptions {
  std::vector<fs::path> checkpoints;
  std::vector<double> weights;  // empty: all 1
  std::string split = "target";
  bool dump_consensus = false;
  std::string corrupt_op;  // gradcheck test hook
};

inline fs::path default_checkpoint(const RunConfig& cfg) { return cfg.paths.out_dir / "model.ckpt"; }

inline synth::Domain parse_split(const std::string& s) {
  if (s == "source") return synth::Domain::kSource;
  if (s == "target") return synth::Domain::kTarget;
  throw UsageError("--split must be 'source' or 'target', got '" + s + "'");
}

/// Reads a split and checks it against the configured dimensions.
inline synth::Split load_split(const RunConfig& cfg, synth::Domain domain) {
  synth::Split split = synth::read_split(cfg.paths.data_dir, domain);
  const model::ModelConfig m = cfg.model();
  if (!split.samples.empty()) {
    try {
      model::check_sample(split.samples.front(), m);
    } catch (const core::ShapeError& e) {
      throw core::FormatError(core::FormatErrorKind::kShape,
                              cfg.paths.data_dir.string() + ": " + std::string(to_string(domain)) +
                                  " features do not match the config: " + e.what());
    }
  }
  for (const synth::Label& y : split.labels)
    if (y.verb >= m.verb_classes || y.noun >= m.noun_classes)
      throw core::FormatError(core::FormatErrorKind::kRecord,
                              cfg.paths.data_dir.string() + ": label outside configured class range");
  return split;
}

inline void write_text(const fs::path& path, const std::string& text) {
  core::write_file(path, std::vector<char>(text.begin(), text.end()));
}

/// Writes <stem>.txt (key=value) and <stem>.json into out_dir.
inline void write_metrics(const RunConfig& cfg, const std::string& stem,
                          const harness::MetricsReport& report) {
  fs::create_directories(cfg.paths.out_dir);
  write_text(cfg.paths.out_dir / (stem + ".txt"), harness::to_key_value(report));
  write_text(cfg.paths.out_dir / (stem + ".json"), harness::to_json(report).dump(2) + "\n");
}

inline void print_summary(std::ostream& out, const harness::MetricsReport& r) {
  out << r.split << " (" << r.samples << " samples, " << r.ablation << "): verb "
      << harness::format_double(r.verb.top1) << "/" << harness::format_double(r.verb.top5)
      << "  noun " << harness::format_double(r.noun.top1) << "/"
      << harness::format_double(r.noun.top5) << "  action "
      << harness::format_double(r.action.top1) << "/" << harness::format_double(r.action.top5)
      << "  domain " << harness::format_double(r.domain_accuracy) << "\n";
}

inline int cmd_synth(const RunConfig& cfg, std::ostream& out) {
  const synth::Dataset ds = synth::generate(cfg.data);
  fs::create_directories(cfg.paths.data_dir);
  for (const synth::Split* split : {&ds.source, &ds.target}) {
    if (split->samples.empty()) continue;
    for (const fs::path& p : synth::write_split(cfg.paths.data_dir, *split)) out << p.string() << "\n";
  }
  return kExitOk;
}

inline int cmd_train(const RunConfig& cfg, const CommandOptions& opt, std::ostream& out) {
  if (opt.checkpoints.size() > 1) throw UsageError("train writes one checkpoint; got several --checkpoint");
  const synth::Split source = load_split(cfg, synth::Domain::kSource);
  const synth::Split target = load_split(cfg, synth::Domain::kTarget);
  harness::TrainConfig tc = cfg.train;
  tc.model = cfg.model();

  const harness::TrainResult result =
      harness::train(tc, source, target, [&](std::size_t epoch, const harness::EpochLoss& l) {
        out << "epoch " << epoch << "/" << tc.epochs << "  L_y " << harness::format_double(l.loss_y)
            << "  L_d " << harness::format_double(l.loss_d) << "\n";
      });

  const fs::path ckpt = opt.checkpoints.empty() ? default_checkpoint(cfg) : opt.checkpoints.front();
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  model::save_checkpoint(ckpt, result.params);

  harness::MetricsReport report = harness::evaluate(result.params, tc.model, target);
  report.history = result.history;
  write_metrics(cfg, "train_metrics", report);
  print_summary(out, report);
  out << "checkpoint " << ckpt.string() << "\n";
  return kExitOk;
}

/// One CSV grid per sample: h lines of w comma-separated values.
inline void dump_consensus(const RunConfig& cfg, const synth::Split& split,
                           const harness::SplitOutputs& outputs) {
  const fs::path dir = cfg.paths.out_dir / "consensus";
  fs::create_directories(dir);
  const std::size_t h = cfg.data.height, w = cfg.data.width;
  for (std::size_t i = 0; i < outputs.consensus.size(); ++i) {
    const core::Tensor& c = outputs.consensus[i];
    std::string text;
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t q = 0; q < w; ++q) text += (q ? "," : "") + harness::format_double(c[r * w + q]);
      text += "\n";
    }
    char name[64];
    std::snprintf(name, sizeof(name), "%s_%06zu.csv", std::string(to_string(split.domain)).c_str(), i);
    write_text(dir / name, text);
  }
}

inline int cmd_eval(const RunConfig& cfg, const CommandOptions& opt, std::ostream& out) {
  if (opt.checkpoints.size() > 1) throw UsageError("eval takes one --checkpoint; use ensemble for several");
  const synth::Domain domain = parse_split(opt.split);
  const fs::path ckpt = opt.checkpoints.empty() ? default_checkpoint(cfg) : opt.checkpoints.front();
  const model::ModelConfig m = cfg.model();
  const model::M3emParams params = model::load_checkpoint(ckpt, m);
  const synth::Split split = load_split(cfg, domain);

  harness::SplitOutputs outputs;
  const harness::MetricsReport report = harness::evaluate(params, m, split, &outputs);
  write_metrics(cfg, "eval_metrics", report);
  if (opt.dump_consensus) dump_consensus(cfg, split, outputs);
  print_summary(out, report);
  return kExitOk;
}

inline int cmd_ensemble(const RunConfig& cfg, const CommandOptions& opt, std::ostream& out) {
  if (opt.checkpoints.empty()) throw UsageError("ensemble needs at least one --checkpoint");
  std::vector<double> weights = opt.weights;
  if (weights.empty()) weights.assign(opt.checkpoints.size(), 1.0);
  if (weights.size() != opt.checkpoints.size()) {
    throw UsageError(std::to_string(opt.checkpoints.size()) + " checkpoints but " +
                     std::to_string(weights.size()) + " weights");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw UsageError("weights must be finite and >= 0");
    total += w;
  }
  if (!(total > 0.0)) throw UsageError("weights are all zero");

  const synth::Domain domain = parse_split(opt.split);
  const model::ModelConfig m = cfg.model();
  std::vector<harness::EnsembleMember> members;
  for (std::size_t i = 0; i < opt.checkpoints.size(); ++i)
    members.push_back({model::load_checkpoint(opt.checkpoints[i], m), weights[i]});
  const synth::Split split = load_split(cfg, domain);

  const harness::MetricsReport report = harness::evaluate_ensemble(members, m, split);
  write_metrics(cfg, "ensemble_metrics", report);
  print_summary(out, report);
  return kExitOk;
}

/// Runs the gradient suite at the built-in tiny dimensions.
inline int cmd_gradcheck(const CommandOptions& opt, std::ostream& out) {
  harness::GradCheckOptions g;
  g.corrupt_op = opt.corrupt_op;
  std::size_t failed = 0;
  for (const harness::GradCheckResult& r : harness::run_gradient_suite(g)) {
    failed += !r.passed();
    out << (r.passed() ? "PASS " : "FAIL ") << r.op << "  entries=" << r.checked
        << "  mismatches=" << r.mismatches
        << "  max_abs_err=" << harness::format_double(r.max_abs_error) << "\n";
  }
  if (failed) throw GradCheckFailed(std::to_string(failed) + " gradient check(s) failed");
  out << "all gradient checks passed\n";
  return kExitOk;
}

}  // namespace m3em::cli
