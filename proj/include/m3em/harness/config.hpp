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

#include <cstdint>
#include <stdexcept>
#include <string>

#include "m3em/model/config.hpp"

namespace m3em::harness {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double lambda_y = 1.0;
  // Gradient-reversal coefficient: the feature path sees -lambda_d dL_d
  // while the discriminator always trains on L_d at unit weight.
  double lambda_d = 1.0;
  std::uint64_t seed = 1;
  model::ModelConfig model;

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
    if (batch_size == 0) fail("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must be in [0, 1)");
    if (!(lambda_y >= 0.0) || !(lambda_d >= 0.0)) fail("lambda_y and lambda_d must be >= 0");
    model.validate();
  }
};

}  // namespace m3em::harness
