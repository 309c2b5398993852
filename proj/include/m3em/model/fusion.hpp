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
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "m3em/core/ops.hpp"
#include "m3em/model/params.hpp"

namespace m3em::model {

using core::Tape;

/// Per-sample class scores for the verb and noun heads.
struct ScoreTensor {
  Tensor verb;
  Tensor noun;
};

// Late-fusion weights for s1 (RGB+Flow) and s2 (Audio).
inline constexpr double kVisualScoreWeight = 1.0;
inline constexpr double kAudioScoreWeight = 0.5;

namespace detail {

// fused = (w1 s1 + w2 s2) / (w1 + w2), written as s1 + (s2 - s1) w2/(w1+w2)
// so that s1 == s2 returns s1 exactly.
inline Tensor fuse_head(Tape& tape, const Tensor& s1, const Tensor& s2) {
  if (s1.shape() != s2.shape()) throw core::shape_error("late_fuse", s1.shape(), s2.shape());
  constexpr double kMix = kAudioScoreWeight / (kVisualScoreWeight + kAudioScoreWeight);
  auto a = s1.data(), b = s2.data();
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + (b[i] - a[i]) * kMix;
  Tensor y(s1.shape(), std::move(out), tape.tracks({&s1, &s2}));
  if (y.requires_grad()) {
    tape.record("late_fuse", {s1, s2}, y, [s1, s2, y]() mutable {
      core::detail::accumulate(s1, y.grad(), 1.0 - kMix);
      core::detail::accumulate(s2, y.grad(), kMix);
    });
  }
  return y;
}

}  // namespace detail

/// Weighted average of the two score sets (weights 1 and 0.5), per head.
inline ScoreTensor late_fuse(Tape& tape, const ScoreTensor& s1, const ScoreTensor& s2) {
  return {detail::fuse_head(tape, s1.verb, s2.verb), detail::fuse_head(tape, s1.noun, s2.noun)};
}

/// Domain logits {source, target}. The input passes through a gradient
/// reversal layer with coefficient lambda_d before the two-layer MLP.
inline Tensor discriminator_forward(Tape& tape, const Tensor& f, const HeadParams& p,
                                    double lambda_d) {
  if (f.rank() != 1 || f.dim(0) != p.disc_input_dim()) {
    throw core::ShapeError("discriminator_forward: expected input of length " +
                           std::to_string(p.disc_input_dim()) + ", got " +
                           core::to_string(f.shape()));
  }
  Tensor reversed = core::grad_reverse(tape, f, lambda_d);
  Tensor hidden =
      core::relu(tape, core::affine(tape, reversed, p.disc_hidden.w, p.disc_hidden.b));
  return core::affine(tape, hidden, p.disc_out.w, p.disc_out.b);
}

/// L = lambda_y * L_y + lambda_d * L_d.
inline Tensor combined_loss(Tape& tape, const Tensor& loss_y, const Tensor& loss_d,
                            double lambda_y, double lambda_d) {
  return core::lincomb(tape, {loss_y, loss_d}, {lambda_y, lambda_d});
}

inline std::vector<double> softmax(std::span<const double> z) {
  std::vector<double> p(z.size());
  if (z.empty()) return p;
  const double zmax = *std::max_element(z.begin(), z.end());
  double denom = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) denom += p[i] = std::exp(z[i] - zmax);
  for (double& v : p) v /= denom;
  return p;
}

inline ScoreTensor softmax_scores(const ScoreTensor& s) {
  return {Tensor::vector(softmax(s.verb.data())), Tensor::vector(softmax(s.noun.data()))};
}

/// Weighted average of softmax-normalised scores across models. Models are
/// summed in a canonical order (by weight, then score values), so permuting
/// the (model, weight) pairs cannot change the result.
inline ScoreTensor ensemble_scores(std::span<const ScoreTensor> models,
                                   std::span<const double> weights) {
  if (models.empty()) throw std::invalid_argument("ensemble_scores: no models");
  if (models.size() != weights.size()) {
    throw std::invalid_argument("ensemble_scores: " + std::to_string(models.size()) +
                                " models but " + std::to_string(weights.size()) + " weights");
  }
  for (double w : weights)
    if (!(w >= 0.0) || !std::isfinite(w))
      throw std::invalid_argument("ensemble_scores: weights must be finite and >= 0");
  if (std::none_of(weights.begin(), weights.end(), [](double w) { return w > 0.0; }))
    throw std::invalid_argument("ensemble_scores: all weights are zero");
  const std::size_t kv = models.front().verb.size(), kn = models.front().noun.size();
  for (const auto& m : models)
    if (m.verb.size() != kv || m.noun.size() != kn)
      throw core::ShapeError("ensemble_scores: class counts differ between models");

  std::vector<ScoreTensor> probs;
  probs.reserve(models.size());
  for (const auto& m : models) probs.push_back(softmax_scores(m));

  std::vector<std::size_t> order(models.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto key_less = [&](std::size_t i, std::size_t j) {
    if (weights[i] != weights[j]) return weights[i] < weights[j];
    auto vi = probs[i].verb.data(), vj = probs[j].verb.data();
    if (!std::equal(vi.begin(), vi.end(), vj.begin()))
      return std::lexicographical_compare(vi.begin(), vi.end(), vj.begin(), vj.end());
    auto ni = probs[i].noun.data(), nj = probs[j].noun.data();
    return std::lexicographical_compare(ni.begin(), ni.end(), nj.begin(), nj.end());
  };
  std::sort(order.begin(), order.end(), key_less);
  double total = 0.0;  // also summed in canonical order
  for (std::size_t idx : order) total += weights[idx];

  std::vector<double> verb(kv, 0.0), noun(kn, 0.0);
  for (std::size_t idx : order) {
    const double share = weights[idx] / total;
    auto pv = probs[idx].verb.data(), pn = probs[idx].noun.data();
    for (std::size_t i = 0; i < kv; ++i) verb[i] += share * pv[i];
    for (std::size_t i = 0; i < kn; ++i) noun[i] += share * pn[i];
  }
  return {Tensor::vector(std::move(verb)), Tensor::vector(std::move(noun))};
}

}  // namespace m3em::model
