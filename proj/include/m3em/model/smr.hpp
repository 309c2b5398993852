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

#include <span>
#include <string>
#include <vector>

#include "m3em/core/ops.hpp"
#include "m3em/model/config.hpp"
#include "m3em/model/params.hpp"

// Semantic mutual refinement: each modality's feature is re-weighted
// channel-wise once from its own pooled descriptor (self gate) and once from
// the pooled descriptors of every other modality (cross gate), and the two
// refined copies are stacked.
namespace m3em::model {

using core::Tape;

struct ModalityFeature {
  Modality modality = Modality::kRgb;
  Tensor tensor;  // [c x h x w] for spatial modalities, [c] for vector ones

  bool spatial() const { return tensor.rank() == 3; }
  std::size_t channels() const { return tensor.dim(0); }
};

namespace detail {

inline Tensor gate(Tape& tape, const Tensor& f, const GateParams& g) {
  Tensor hidden = core::relu(tape, core::affine(tape, f, g.squeeze.w, g.squeeze.b));
  return core::sigmoid(tape, core::affine(tape, hidden, g.excite.w, g.excite.b));
}

inline void require_length(const char* op, const Tensor& f, std::size_t n) {
  if (f.rank() != 1 || f.dim(0) != n) {
    throw core::ShapeError(std::string(op) + ": expected vector of length " +
                           std::to_string(n) + ", got " + core::to_string(f.shape()));
  }
}

}  // namespace detail

/// t_s = sigma(W2 relu(W1 f)) on the modality's own pooled vector f [c].
inline Tensor self_gate(Tape& tape, const Tensor& f, const SmrParams& p) {
  detail::require_length("self_gate", f, p.c);
  return detail::gate(tape, f, p.self_gate);
}

/// Same gate shape driven by the other modalities' pooled vectors [c_in];
/// the result has the modality's own c channels.
inline Tensor cross_gate(Tape& tape, const Tensor& f_in, const SmrParams& p) {
  detail::require_length("cross_gate", f_in, p.c_in);
  return detail::gate(tape, f_in, p.cross_gate);
}

/// out[ch, i, j] = F[ch, i, j] * t[ch].
inline Tensor channel_scale(Tape& tape, const Tensor& f, const Tensor& t) {
  core::detail::require_rank("channel_scale", f, 3);
  core::detail::require_rank("channel_scale", t, 1);
  const std::size_t c = f.dim(0), hw = f.dim(1) * f.dim(2);
  if (t.dim(0) != c) throw core::shape_error("channel_scale", f.shape(), t.shape());

  auto fd = f.data(), td = t.data();
  std::vector<double> out(fd.size());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < hw; ++p) out[ch * hw + p] = fd[ch * hw + p] * td[ch];
  Tensor y(f.shape(), std::move(out), tape.tracks({&f, &t}));
  if (y.requires_grad()) {
    tape.record("channel_scale", {f, t}, y, [f, t, y, c, hw]() mutable {
      auto gy = y.grad();
      if (f.requires_grad()) {
        auto gf = f.grad_buffer();
        auto td = t.data();
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t p = 0; p < hw; ++p) gf[ch * hw + p] += gy[ch * hw + p] * td[ch];
      }
      if (t.requires_grad()) {
        auto gt = t.grad_buffer();
        auto fd = f.data();
        for (std::size_t ch = 0; ch < c; ++ch) {
          double acc = 0.0;
          for (std::size_t p = 0; p < hw; ++p) acc += gy[ch * hw + p] * fd[ch * hw + p];
          gt[ch] += acc;
        }
      }
    });
  }
  return y;
}

/// Pooled descriptor of one modality: spatial mean, or the vector itself.
inline Tensor pooled_descriptor(Tape& tape, const ModalityFeature& f) {
  return f.spatial() ? core::global_avg_pool(tape, f.tensor) : f.tensor;
}

/// F_r = concat(F * t_s, F * t_c) with 2c channels. `others` holds the pooled
/// descriptors of the remaining modalities in RGB, Flow, Audio order. Vector
/// features run through the spatial path as [c x 1 x 1].
inline Tensor smr_forward(Tape& tape, const ModalityFeature& feature,
                          std::span<const Tensor> others, const SmrParams& p) {
  if (others.empty()) throw std::invalid_argument("smr_forward: no other modalities");
  const bool spatial = feature.spatial();
  const Tensor fmap =
      spatial ? feature.tensor
              : core::reshape(tape, feature.tensor, {feature.tensor.size(), 1, 1});
  if (fmap.dim(0) != p.c) {
    throw core::ShapeError("smr_forward(" + std::string(to_string(feature.modality)) +
                           "): expected " + std::to_string(p.c) + " channels, got " +
                           core::to_string(feature.tensor.shape()));
  }
  const Tensor f = core::global_avg_pool(tape, fmap);
  const Tensor f_in =
      core::concat_channels(tape, std::vector<Tensor>(others.begin(), others.end()));

  const Tensor self_refined = channel_scale(tape, fmap, self_gate(tape, f, p));
  const Tensor cross_refined = channel_scale(tape, fmap, cross_gate(tape, f_in, p));
  Tensor refined = core::concat_channels(tape, self_refined, cross_refined);
  return spatial ? refined : core::reshape(tape, refined, {2 * p.c});
}

/// Stand-in for disabled SMR: concat(F, F), same shape as smr_forward.
inline Tensor smr_passthrough(Tape& tape, const ModalityFeature& feature) {
  return core::concat_channels(tape, feature.tensor, feature.tensor);
}

}  // namespace m3em::model
