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

// Generates a small two-domain dataset, trains the full model for a few
// epochs, saves and reloads the checkpoint, and prints target metrics.
//
//   ./build/samples/quickstart [output-dir]

#include <cstdio>
#include <filesystem>

#include "m3em/harness/evaluate.hpp"
#include "m3em/harness/train.hpp"
#include "m3em/model/checkpoint.hpp"
#include "m3em/synth/feature_file.hpp"
#include "m3em/synth/generate.hpp"

int main(int argc, char** argv) {
  using namespace m3em;
  const std::filesystem::path out = argc > 1 ? argv[1] : "quickstart_out";

  synth::SyntheticDatasetSpec spec;
  spec.n_source = 400;
  spec.n_target = 400;
  const synth::Dataset data = synth::generate(spec);
  std::filesystem::create_directories(out / "data");
  for (const auto& path : synth::write_split(out / "data", data.source)) std::printf("wrote %s\n", path.c_str());
  for (const auto& path : synth::write_split(out / "data", data.target)) std::printf("wrote %s\n", path.c_str());

  harness::TrainConfig config;
  config.epochs = 8;
  config.model = spec.apply_to(config.model);
  const harness::TrainResult trained =
      harness::train(config, data.source, data.target, [](std::size_t epoch, const harness::EpochLoss& l) {
        std::printf("epoch %zu  L_y %.4f  L_d %.4f\n", epoch, l.loss_y, l.loss_d);
      });

  model::save_checkpoint(out / "model.ckpt", trained.params);
  const model::M3emParams reloaded = model::load_checkpoint(out / "model.ckpt", config.model);

  const harness::MetricsReport report = harness::evaluate(reloaded, config.model, data.target);
  std::printf("%s", harness::to_key_value(report).c_str());
  std::printf("discriminator accuracy (balanced): %.3f\n",
              harness::balanced_domain_accuracy(reloaded, config.model, data.source, data.target));
  return 0;
}
