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

#include <algorithm>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "m3em/core/parallel.hpp"
#include "m3em/harness/metrics.hpp"
#include "m3em/model/model.hpp"
#include "m3em/synth/generate.hpp"

namespace m3em::harness {

/// Per-sample outputs of one model over a split, computed without a tape.
struct SplitOutputs {
  std::vector<model::ScoreTensor> fused;  // logits
  std::vector<double> domain_target_prob;
  std::vector<core::Tensor> consensus;
};

inline SplitOutputs run_model(const model::M3emParams& params, const model::ModelConfig& config,
                              const synth::Split& split) {
  SplitOutputs out;
  out.fused.resize(split.size());
  out.domain_target_prob.resize(split.size());
  out.consensus.resize(split.size());
  core::parallel_for(split.size(), [&](std::size_t, std::size_t i) {
    core::Tape tape(core::Tape::Mode::kInference);
    model::ForwardOutput fwd = model::model_forward(tape, split.samples[i], params, config, 0.0);
    out.fused[i] = fwd.fused;
    out.domain_target_prob[i] = model::softmax(fwd.domain_logits.data())[1];
    out.consensus[i] = fwd.consensus;
  });
  return out;
}

/// Fraction of samples the discriminator assigns to the split's own domain.
/// A tie counts as a source prediction.
inline double domain_accuracy(std::span<const double> target_prob, synth::Domain domain) {
  if (target_prob.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::size_t correct = 0;
  for (double p : target_prob) {
    const bool says_target = p > 0.5;
    correct += says_target == (domain == synth::Domain::kTarget);
  }
  return static_cast<double>(correct) / static_cast<double>(target_prob.size());
}

inline void check_split(const model::ModelConfig& config, const synth::Split& split) {
  if (!split.samples.empty()) model::check_sample(split.samples.front(), config);
}

inline MetricsReport report_from(std::span<const model::ScoreTensor> probs,
                                 std::span<const double> target_prob,
                                 const model::ModelConfig& config, const synth::Split& split) {
  if (!split.labeled()) throw std::invalid_argument("evaluate: split has no labels");
  MetricsReport report;
  report.ablation = std::string(model::to_string(config.ablation));
  report.split = std::string(synth::to_string(split.domain));
  score_accuracy(probs, split.labels, report);
  report.domain_accuracy = domain_accuracy(target_prob, split.domain);
  return report;
}

/// Metrics of one model on a labeled split, from the late-fused scores.
inline MetricsReport evaluate(const model::M3emParams& params, const model::ModelConfig& config,
                              const synth::Split& split, SplitOutputs* outputs = nullptr) {
  check_split(config, split);
  SplitOutputs out = run_model(params, config, split);
  std::vector<model::ScoreTensor> probs;
  probs.reserve(out.fused.size());
  for (const auto& s : out.fused) probs.push_back(model::softmax_scores(s));
  MetricsReport report = report_from(probs, out.domain_target_prob, config, split);
  if (outputs) *outputs = std::move(out);
  return report;
}

struct EnsembleMember {
  model::M3emParams params;
  double weight = 1.0;
};

/// Metrics on ensemble_scores of the members' fused scores. The domain
/// column uses the same weighting over the discriminators' probabilities,
/// also summed in a canonical order.
inline MetricsReport evaluate_ensemble(std::span<const EnsembleMember> members,
                                       const model::ModelConfig& config,
                                       const synth::Split& split) {
  if (members.empty()) throw std::invalid_argument("evaluate_ensemble: no models");
  check_split(config, split);
  std::vector<double> weights;
  std::vector<SplitOutputs> outputs;
  for (const auto& m : members) {
    weights.push_back(m.weight);
    outputs.push_back(run_model(m.params, config, split));
  }
  std::vector<double> sorted_weights = weights;
  std::sort(sorted_weights.begin(), sorted_weights.end());
  double total = 0.0;
  for (double w : sorted_weights) total += w;

  std::vector<model::ScoreTensor> probs(split.size());
  std::vector<double> target_prob(split.size(), 0.0);
  std::vector<model::ScoreTensor> per_model(members.size());
  std::vector<std::pair<double, double>> domain_terms(members.size());
  for (std::size_t i = 0; i < split.size(); ++i) {
    for (std::size_t m = 0; m < members.size(); ++m) {
      per_model[m] = outputs[m].fused[i];
      domain_terms[m] = {weights[m], outputs[m].domain_target_prob[i]};
    }
    probs[i] = model::ensemble_scores(per_model, weights);
    std::sort(domain_terms.begin(), domain_terms.end());
    for (const auto& [w, p] : domain_terms) target_prob[i] += w / total * p;
  }
  return report_from(probs, target_prob, config, split);
}

}  // namespace m3em::harness
