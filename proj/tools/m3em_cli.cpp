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

// m3em command-line tool: synth | train | eval | ensemble | gradcheck.
//
// Exit codes: 0 success, 1 usage or config error, 2 I/O or file format
// error, 3 numeric failure (non-finite loss, failed gradient check).

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "m3em/cli/commands.hpp"

namespace {

using namespace m3em;

struct Args {
  std::string config_path;
  std::string ablation;
  std::uint64_t seed = 0;
  bool seed_set = false;
  cli::CommandOptions opt;
};

cli::RunConfig resolve(const Args& a) {
  cli::RunConfig cfg = cli::load_config(a.config_path);
  if (!a.ablation.empty()) cfg.train.model.ablation = model::parse_ablation(a.ablation);
  if (a.seed_set) {
    cfg.data.seed = a.seed;
    cfg.train.seed = a.seed;
  }
  cfg.validate();
  return cfg;
}

int run(int argc, char** argv) {
  CLI::App app{"Multi-modal mutual enhancement for domain-adaptive action recognition"};
  app.require_subcommand(1);
  Args a;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", a.config_path, "run configuration file")->required();
    sub->add_option("--seed", a.seed, "overrides data.seed and train.seed")
        ->each([&](const std::string&) { a.seed_set = true; });
    sub->add_option("--ablation", a.ablation, "overrides model.ablation")
        ->check(CLI::IsMember({"baseline", "smr", "cmc", "full"}));
  };

  CLI::App* synth = app.add_subcommand("synth", "generate the synthetic feature files");
  common(synth);
  CLI::App* train = app.add_subcommand("train", "train and write a checkpoint plus metrics");
  common(train);
  train->add_option("--checkpoint", a.opt.checkpoints, "output path (default out_dir/model.ckpt)")
      ->expected(1);
  CLI::App* eval = app.add_subcommand("eval", "evaluate one checkpoint");
  common(eval);
  eval->add_option("--checkpoint", a.opt.checkpoints, "checkpoint (default out_dir/model.ckpt)")
      ->expected(1);
  eval->add_option("--split", a.opt.split, "source or target")->check(CLI::IsMember({"source", "target"}));
  eval->add_flag("--dump-consensus", a.opt.dump_consensus,
                 "write per-sample consensus maps to out_dir/consensus/*.csv");
  CLI::App* ens = app.add_subcommand("ensemble", "evaluate a weighted ensemble of checkpoints");
  common(ens);
  ens->add_option("--checkpoint", a.opt.checkpoints, "checkpoint, repeat the flag for each model")
      ->allow_extra_args(false);
  ens->add_option("--weights", a.opt.weights, "comma-separated weights (default all 1)")->delimiter(',');
  ens->add_option("--split", a.opt.split, "source or target")->check(CLI::IsMember({"source", "target"}));
  CLI::App* grad = app.add_subcommand("gradcheck", "compare tape gradients with finite differences");
  common(grad);
  grad->add_option("--corrupt-op", a.opt.corrupt_op)->group("");  // test hook, hidden

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? cli::kExitOk : cli::kExitUsage;
  }

  const cli::RunConfig cfg = resolve(a);
  if (synth->parsed()) return cli::cmd_synth(cfg, std::cout);
  if (train->parsed()) return cli::cmd_train(cfg, a.opt, std::cout);
  if (eval->parsed()) return cli::cmd_eval(cfg, a.opt, std::cout);
  if (ens->parsed()) return cli::cmd_ensemble(cfg, a.opt, std::cout);
  return cli::cmd_gradcheck(a.opt, std::cout);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const m3em::harness::NumericError& e) {
    std::cerr << "m3em: numeric failure: " << e.what() << "\n";
    return m3em::cli::kExitNumeric;
  } catch (const m3em::cli::GradCheckFailed& e) {
    std::cerr << "m3em: " << e.what() << "\n";
    return m3em::cli::kExitNumeric;
  } catch (const m3em::core::IoError& e) {
    std::cerr << "m3em: " << e.what() << "\n";
    return m3em::cli::kExitIo;
  } catch (const m3em::core::FormatError& e) {
    std::cerr << "m3em: " << e.what() << "\n";
    return m3em::cli::kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "m3em: " << e.what() << "\n";
    return m3em::cli::kExitIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "m3em: " << e.what() << "\n";
    return m3em::cli::kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "m3em: " << e.what() << "\n";
    return m3em::cli::kExitIo;
  }
}
