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

#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "m3em/core/parallel.hpp"
#include "m3em/core/random.hpp"
#include "m3em/harness/config.hpp"
#include "m3em/harness/evaluate.hpp"
#include "m3em/harness/metrics.hpp"
#include "m3em/model/model.hpp"
#include "m3em/synth/generate.hpp"

namespace m3em::harness {

// A non-finite loss or gradient during training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  model::M3emParams params;
  std::vector<EpochLoss> history;
};

/// Called after every epoch with (epoch index from 1, its mean losses).
using EpochCallback = std::function<void(std::size_t, const EpochLoss&)>;

namespace detail {

struct SampleTask {
  const model::Sample* sample = nullptr;
  const synth::Label* label = nullptr;  // null for target samples
  synth::Domain domain = synth::Domain::kSource;
};

struct TaskResult {
  std::vector<double> grad;
  double loss_y = 0.0;  // verb + noun cross-entropy, source only
  double loss_d = 0.0;  // domain cross-entropy
};

// Forward and backward for one sample of a step. The scaled per-sample loss
// sums over the batch to combined_loss(mean L_y, mean L_d).
inline void run_task(const SampleTask& task, model::M3emParams& replica,
                     const TrainConfig& config, std::size_t n_source, std::size_t n_total,
                     TaskResult& result) {
  replica.zero_grad();
  core::Tape tape;
  const model::ForwardOutput out =
      model::model_forward(tape, *task.sample, replica, config.model, config.lambda_d);
  const std::size_t domain_label = task.domain == synth::Domain::kTarget ? 1 : 0;
  core::Tensor loss_d = core::softmax_xent(tape, out.domain_logits, domain_label);
  result.loss_d = loss_d.item();
  core::Tensor loss_y;
  if (task.label) {
    core::Tensor verb = core::softmax_xent(tape, out.fused.verb, task.label->verb);
    core::Tensor noun = core::softmax_xent(tape, out.fused.noun, task.label->noun);
    const double inv = 1.0 / static_cast<double>(n_source);
    loss_y = core::lincomb(tape, {verb, noun}, {inv, inv});
    result.loss_y = verb.item() + noun.item();
  } else {
    loss_y = core::Tensor::scalar(0.0);
    result.loss_y = 0.0;
  }
  const core::Tensor loss_d_scaled = core::scale(tape, loss_d, 1.0 / static_cast<double>(n_total));
  tape.backward(model::combined_loss(tape, loss_y, loss_d_scaled, config.lambda_y, 1.0));

  result.grad.clear();
  for (const auto& [name, t] : replica.named()) {
    if (t.has_grad()) {
      result.grad.insert(result.grad.end(), t.grad().begin(), t.grad().end());
    } else {
      result.grad.insert(result.grad.end(), t.size(), 0.0);
    }
  }
}

}  // namespace detail

/// SGD with momentum on lambda_y L_y + lambda_d L_d. Each step takes one
/// source batch (labeled) and one target batch of the same size (domain
/// labels only); the target order cycles through fresh shuffles. Fully
/// determined by config.seed, independent of the worker count.
inline TrainResult train(const TrainConfig& config, const synth::Split& source,
                         const synth::Split& target, const EpochCallback& on_epoch = {}) {
  config.validate();
  if (source.samples.empty()) throw std::invalid_argument("train: empty source split");
  if (!source.labeled()) throw std::invalid_argument("train: source split needs labels");
  check_split(config.model, source);
  check_split(config.model, target);

  TrainResult result{model::make_params(config.model, config.seed), {}};
  model::M3emParams& params = result.params;
  const auto named = params.named();
  std::size_t n_params = 0;
  for (const auto& [name, t] : named) n_params += t.size();
  std::vector<double> velocity(n_params, 0.0), grad(n_params);

  core::Rng rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> source_order(source.size()), target_order(target.size());
  std::iota(source_order.begin(), source_order.end(), std::size_t{0});
  std::iota(target_order.begin(), target_order.end(), std::size_t{0});
  std::size_t target_cursor = target_order.size();

  const std::size_t workers = core::worker_count();
  std::vector<detail::TaskResult> results;
  std::vector<detail::SampleTask> tasks;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    rng.shuffle(source_order);
    EpochLoss sum;
    std::size_t steps = 0;
    for (std::size_t begin = 0; begin < source_order.size(); begin += config.batch_size) {
      const std::size_t n_src = std::min(config.batch_size, source_order.size() - begin);
      tasks.clear();
      for (std::size_t i = 0; i < n_src; ++i) {
        const std::size_t idx = source_order[begin + i];
        tasks.push_back({&source.samples[idx], &source.labels[idx], synth::Domain::kSource});
      }
      if (!target_order.empty()) {
        for (std::size_t i = 0; i < n_src; ++i) {
          if (target_cursor == target_order.size()) {
            rng.shuffle(target_order);
            target_cursor = 0;
          }
          tasks.push_back({&target.samples[target_order[target_cursor++]], nullptr,
                           synth::Domain::kTarget});
        }
      }

      results.resize(tasks.size());
      std::vector<model::M3emParams> replicas;
      for (std::size_t w = 0; w < std::min(workers, tasks.size()); ++w)
        replicas.push_back(params.clone());
      core::parallel_for(tasks.size(), [&](std::size_t worker, std::size_t i) {
        detail::run_task(tasks[i], replicas[worker], config, n_src, tasks.size(), results[i]);
      });

      EpochLoss step;
      std::fill(grad.begin(), grad.end(), 0.0);
      for (const auto& r : results) {
        for (std::size_t j = 0; j < n_params; ++j) grad[j] += r.grad[j];
        step.loss_y += r.loss_y;
        step.loss_d += r.loss_d;
      }
      step.loss_y /= static_cast<double>(n_src);
      step.loss_d /= static_cast<double>(tasks.size());
      step.loss = config.lambda_y * step.loss_y + config.lambda_d * step.loss_d;
      if (!std::isfinite(step.loss)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(steps + 1) + ": L_y=" + format_double(step.loss_y) +
                           " L_d=" + format_double(step.loss_d));
      }
      for (double g : grad)
        if (!std::isfinite(g))
          throw NumericError("non-finite gradient at epoch " + std::to_string(epoch));

      std::size_t offset = 0;
      for (auto [name, t] : named) {
        auto data = t.mutable_data();
        for (std::size_t j = 0; j < data.size(); ++j, ++offset) {
          velocity[offset] = config.momentum * velocity[offset] + grad[offset];
          data[j] -= config.learning_rate * velocity[offset];
        }
      }
      sum.loss_y += step.loss_y;
      sum.loss_d += step.loss_d;
      sum.loss += step.loss;
      ++steps;
    }
    const double inv = 1.0 / static_cast<double>(steps);
    EpochLoss mean{sum.loss_y * inv, sum.loss_d * inv, sum.loss * inv};
    result.history.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  return result;
}

/// Discriminator accuracy averaged over the source and target splits.
inline double balanced_domain_accuracy(const model::M3emParams& params,
                                       const model::ModelConfig& config,
                                       const synth::Split& source, const synth::Split& target) {
  const SplitOutputs s = run_model(params, config, source);
  const SplitOutputs t = run_model(params, config, target);
  return 0.5 * (domain_accuracy(s.domain_target_prob, synth::Domain::kSource) +
                domain_accuracy(t.domain_target_prob, synth::Domain::kTarget));
}

}  // namespace m3em::harness
