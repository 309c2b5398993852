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
#include <stdexcept>
#include <string>
#include <vector>

#include "m3em/core/ops.hpp"
#include "m3em/model/config.hpp"
#include "m3em/model/params.hpp"

// Cross-modality consensus: per-position correlation between the RGB and
// Flow latent maps, summed over a 2x pyramid, used as a residual spatial
// weight when pooling the refined features.
namespace m3em::model {

using core::Tape;

// Channel vectors whose (centered) norm falls below this correlate as 0.
inline constexpr double kDegenerateNorm = 1e-12;
// Centered mode also treats a vector as constant when its centered norm is
// this small relative to its raw norm; rounding in the mean leaves residue
// of roughly ulp(|a|) on a constant vector.
inline constexpr double kDegenerateRelative = 1e-12;

/// Maps F_r [2c x h x w] into the shared latent space [c' x h x w].
inline Tensor project_latent(Tape& tape, const Tensor& f_refined, const AffineParams& proj) {
  return core::conv1x1(tape, f_refined, proj.w, proj.b);
}

/// Correlation of the two c'-length channel vectors at every position.
inline Tensor pearson_map(Tape& tape, const Tensor& a, const Tensor& b,
                          PearsonMode mode = PearsonMode::kCentered) {
  core::detail::require_rank("pearson_map", a, 3);
  if (a.shape() != b.shape()) throw core::shape_error("pearson_map", a.shape(), b.shape());
  const std::size_t c = a.dim(0), h = a.dim(1), w = a.dim(2), hw = h * w;
  const bool centered = mode == PearsonMode::kCentered;
  if (centered && c < 2) throw core::ShapeError("pearson_map: centered mode needs >= 2 channels");

  auto ad = a.data(), bd = b.data();
  std::vector<double> out(hw, 0.0);
  // Per-position d out / d a and d out / d b, laid out like a and b.
  std::vector<double> da(a.size(), 0.0), db(b.size(), 0.0);
  std::vector<double> u(c), v(c);
  for (std::size_t p = 0; p < hw; ++p) {
    double mu = 0.0, mv = 0.0, floor_u = kDegenerateNorm, floor_v = kDegenerateNorm;
    if (centered) {
      double raw_u = 0.0, raw_v = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        mu += ad[ch * hw + p];
        mv += bd[ch * hw + p];
        raw_u += ad[ch * hw + p] * ad[ch * hw + p];
        raw_v += bd[ch * hw + p] * bd[ch * hw + p];
      }
      floor_u = std::max(floor_u, kDegenerateRelative * std::sqrt(raw_u));
      floor_v = std::max(floor_v, kDegenerateRelative * std::sqrt(raw_v));
      mu /= static_cast<double>(c);
      mv /= static_cast<double>(c);
    }
    double uu = 0.0, vv = 0.0, uv = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      u[ch] = ad[ch * hw + p] - mu;
      v[ch] = bd[ch * hw + p] - mv;
      uu += u[ch] * u[ch];
      vv += v[ch] * v[ch];
      uv += u[ch] * v[ch];
    }
    const double nu = std::sqrt(uu), nv = std::sqrt(vv);
    if (nu <= floor_u || nv <= floor_v) continue;
    if (centered) {
      const double rho = std::clamp(uv / (nu * nv), -1.0, 1.0);
      out[p] = rho;
      // u and v are zero-mean, so these already lie in the centering subspace.
      for (std::size_t ch = 0; ch < c; ++ch) {
        da[ch * hw + p] = v[ch] / (nu * nv) - rho * u[ch] / uu;
        db[ch * hw + p] = u[ch] / (nu * nv) - rho * v[ch] / vv;
      }
    } else {
      const double value = uv / (uu * vv);
      out[p] = value;
      for (std::size_t ch = 0; ch < c; ++ch) {
        da[ch * hw + p] = v[ch] / (uu * vv) - 2.0 * value * u[ch] / uu;
        db[ch * hw + p] = u[ch] / (uu * vv) - 2.0 * value * v[ch] / vv;
      }
    }
  }
  Tensor y({h, w}, std::move(out), tape.tracks({&a, &b}));
  if (y.requires_grad()) {
    tape.record("pearson_map", {a, b}, y,
                [a, b, y, c, hw, da = std::move(da), db = std::move(db)]() mutable {
                  auto gy = y.grad();
                  if (a.requires_grad()) {
                    auto ga = a.grad_buffer();
                    for (std::size_t ch = 0; ch < c; ++ch)
                      for (std::size_t p = 0; p < hw; ++p) ga[ch * hw + p] += gy[p] * da[ch * hw + p];
                  }
                  if (b.requires_grad()) {
                    auto gb = b.grad_buffer();
                    for (std::size_t ch = 0; ch < c; ++ch)
                      for (std::size_t p = 0; p < hw; ++p) gb[ch * hw + p] += gy[p] * db[ch * hw + p];
                  }
                });
  }
  return y;
}

/// C = sum_{l=0..k} upsample(pearson(down^l(a), down^l(b))) at full size.
inline Tensor consensus_map(Tape& tape, const Tensor& a, const Tensor& b, int k,
                            PearsonMode mode = PearsonMode::kCentered) {
  if (k < 0) throw std::invalid_argument("consensus_map: k must be >= 0, got " + std::to_string(k));
  core::detail::require_rank("consensus_map", a, 3);
  const std::size_t h = a.dim(1), w = a.dim(2);
  Tensor level_a = a, level_b = b;
  Tensor sum = pearson_map(tape, a, b, mode);
  for (int level = 1; level <= k; ++level) {
    level_a = core::downsample2x(tape, level_a);
    level_b = core::downsample2x(tape, level_b);
    sum = core::add(tape, sum,
                    core::upsample_to(tape, pearson_map(tape, level_a, level_b, mode), h, w));
  }
  return sum;
}

/// f[ch] = mean_{i,j} (1 + C[i,j]) * F[ch,i,j]: consensus-weighted average with
/// a residual path, so C = 0 reduces to global average pooling.
inline Tensor consensus_pool(Tape& tape, const Tensor& f, const Tensor& consensus) {
  core::detail::require_rank("consensus_pool", f, 3);
  core::detail::require_rank("consensus_pool", consensus, 2);
  if (consensus.dim(0) != f.dim(1) || consensus.dim(1) != f.dim(2))
    throw core::shape_error("consensus_pool", f.shape(), consensus.shape());
  const std::size_t c = f.dim(0), hw = f.dim(1) * f.dim(2);
  const double inv = 1.0 / static_cast<double>(hw);

  auto fd = f.data(), cd = consensus.data();
  std::vector<double> out(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (std::size_t p = 0; p < hw; ++p) acc += (1.0 + cd[p]) * fd[ch * hw + p];
    out[ch] = acc * inv;
  }
  Tensor y({c}, std::move(out), tape.tracks({&f, &consensus}));
  if (y.requires_grad()) {
    tape.record("consensus_pool", {f, consensus}, y, [f, consensus, y, c, hw, inv]() mutable {
      auto gy = y.grad();
      if (f.requires_grad()) {
        auto gf = f.grad_buffer();
        auto cd = consensus.data();
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t p = 0; p < hw; ++p) gf[ch * hw + p] += gy[ch] * (1.0 + cd[p]) * inv;
      }
      if (consensus.requires_grad()) {
        auto gc = consensus.grad_buffer();
        auto fd = f.data();
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t p = 0; p < hw; ++p) gc[p] += gy[ch] * fd[ch * hw + p] * inv;
      }
    });
  }
  return y;
}

}  // namespace m3em::model
