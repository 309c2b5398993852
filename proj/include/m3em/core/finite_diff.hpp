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
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "m3em/core/tensor.hpp"

namespace m3em::core {

/// Central-difference estimate of d f / d x, one coordinate at a time.
/// `f` maps a tensor shaped like `x` to a double; `x` is not modified.
template <class F>
Tensor finite_diff_grad(F&& f, const Tensor& x, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_grad: eps must be > 0");
  Tensor probe = x.clone();
  auto pd = probe.mutable_data();
  std::vector<double> grad(pd.size());
  for (std::size_t i = 0; i < pd.size(); ++i) {
    const double saved = pd[i];
    pd[i] = saved + eps;
    const double up = f(probe);
    pd[i] = saved - eps;
    const double down = f(probe);
    pd[i] = saved;
    grad[i] = (up - down) / (2.0 * eps);
  }
  return Tensor(x.shape(), std::move(grad));
}

struct GradientMismatch {
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Elementwise |a - n| <= max(rel_tol * max(|a|, |n|), abs_floor).
inline bool gradients_close(double analytic, double numeric, double rel_tol,
                            double abs_floor) {
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  return std::abs(analytic - numeric) <= std::max(rel_tol * scale, abs_floor);
}

/// Every element where the two gradients disagree.
inline std::vector<GradientMismatch> compare_gradients(
    std::span<const double> analytic, std::span<const double> numeric,
    double rel_tol = 1e-4, double abs_floor = 1e-7) {
  if (analytic.size() != numeric.size()) {
    throw ShapeError("compare_gradients: length " + std::to_string(analytic.size()) +
                     " vs " + std::to_string(numeric.size()));
  }
  std::vector<GradientMismatch> out;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    if (!gradients_close(analytic[i], numeric[i], rel_tol, abs_floor)) {
      out.push_back({i, analytic[i], numeric[i]});
    }
  }
  return out;
}

}  // namespace m3em::core
