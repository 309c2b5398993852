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
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "m3em/core/tape.hpp"
#include "m3em/core/tensor.hpp"

// Differentiable tensor primitives. Every op takes the tape it records onto
// as its first argument and returns a fresh output tensor.
namespace m3em::core {

namespace detail {

inline void require_rank(const std::string& op, const Tensor& t,
                         std::size_t rank) {
  if (t.rank() != rank) {
    throw ShapeError(op + ": expected rank " + std::to_string(rank) +
                     " tensor, got " + to_string(t.shape()));
  }
}

inline void accumulate(const Tensor& dst, std::span<const double> src,
                       double scale = 1.0) {
  if (!dst.requires_grad()) return;
  auto g = dst.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale * src[i];
}

}  // namespace detail

/// y = W x + b for x[n], W[m x n], b[m].
inline Tensor affine(Tape& tape, const Tensor& x, const Tensor& w,
                     const Tensor& b) {
  detail::require_rank("affine", x, 1);
  detail::require_rank("affine", w, 2);
  detail::require_rank("affine", b, 1);
  const std::size_t m = w.dim(0), n = w.dim(1);
  if (x.dim(0) != n) throw shape_error("affine(W, x)", w.shape(), x.shape());
  if (b.dim(0) != m) throw shape_error("affine(W, b)", w.shape(), b.shape());

  std::vector<double> out(m);
  auto xd = x.data(), wd = w.data(), bd = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    double acc = bd[i];
    const double* row = wd.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) acc += row[j] * xd[j];
    out[i] = acc;
  }
  Tensor y({m}, std::move(out), tape.tracks({&x, &w, &b}));
  if (y.requires_grad()) {
    tape.record("affine", {x, w, b}, y, [x, w, b, y, m, n]() mutable {
      auto gy = y.grad();
      if (x.requires_grad()) {
        auto gx = x.grad_buffer();
        auto wd = w.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gx[j] += wd[i * n + j] * gy[i];
      }
      if (w.requires_grad()) {
        auto gw = w.grad_buffer();
        auto xd = x.data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gw[i * n + j] += gy[i] * xd[j];
      }
      detail::accumulate(b, gy);
    });
  }
  return y;
}

/// Elementwise max(0, x); the subgradient at 0 is 0.
inline Tensor relu(Tape& tape, const Tensor& x) {
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > 0.0 ? xd[i] : 0.0;
  Tensor y(x.shape(), std::move(out), tape.tracks({&x}));
  if (y.requires_grad()) {
    tape.record("relu", {x}, y, [x, y]() mutable {
      auto gy = y.grad();
      auto gx = x.grad_buffer();
      auto xd = x.data();
      for (std::size_t i = 0; i < gx.size(); ++i)
        if (xd[i] > 0.0) gx[i] += gy[i];
    });
  }
  return y;
}

/// Logistic function. Outputs are clamped to the open interval (0, 1) so
/// that saturated inputs never round to exactly 0 or 1.
inline Tensor sigmoid(Tape& tape, const Tensor& x) {
  constexpr double kLo = std::numeric_limits<double>::min();
  const double kHi = std::nextafter(1.0, 0.0);
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = xd[i];
    const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                              : std::exp(v) / (1.0 + std::exp(v));
    out[i] = std::clamp(s, kLo, kHi);
  }
  Tensor y(x.shape(), std::move(out), tape.tracks({&x}));
  if (y.requires_grad()) {
    tape.record("sigmoid", {x}, y, [x, y]() mutable {
      auto gy = y.grad();
      auto yd = y.data();
      auto gx = x.grad_buffer();
      for (std::size_t i = 0; i < gx.size(); ++i)
        gx[i] += gy[i] * yd[i] * (1.0 - yd[i]);
    });
  }
  return y;
}

/// Per-channel spatial mean of a [c x h x w] map.
inline Tensor global_avg_pool(Tape& tape, const Tensor& f) {
  detail::require_rank("global_avg_pool", f, 3);
  const std::size_t c = f.dim(0), hw = f.dim(1) * f.dim(2);
  if (hw == 0) throw ShapeError("global_avg_pool: empty spatial extent");
  auto fd = f.data();
  std::vector<double> out(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double acc = 0.0;
    for (std::size_t p = 0; p < hw; ++p) acc += fd[ch * hw + p];
    out[ch] = acc / static_cast<double>(hw);
  }
  Tensor y({c}, std::move(out), tape.tracks({&f}));
  if (y.requires_grad()) {
    tape.record("global_avg_pool", {f}, y, [f, y, c, hw]() mutable {
      auto gy = y.grad();
      auto gf = f.grad_buffer();
      const double inv = 1.0 / static_cast<double>(hw);
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < hw; ++p) gf[ch * hw + p] += gy[ch] * inv;
    });
  }
  return y;
}

/// Per-position channel mixing: out[:, i, j] = W F[:, i, j] + b.
inline Tensor conv1x1(Tape& tape, const Tensor& f, const Tensor& w,
                      const Tensor& b) {
  detail::require_rank("conv1x1", f, 3);
  detail::require_rank("conv1x1", w, 2);
  detail::require_rank("conv1x1", b, 1);
  const std::size_t cin = f.dim(0), hw = f.dim(1) * f.dim(2);
  const std::size_t cout = w.dim(0);
  if (w.dim(1) != cin) throw shape_error("conv1x1(W, F)", w.shape(), f.shape());
  if (b.dim(0) != cout) throw shape_error("conv1x1(W, b)", w.shape(), b.shape());

  auto fd = f.data(), wd = w.data(), bd = b.data();
  std::vector<double> out(cout * hw);
  for (std::size_t o = 0; o < cout; ++o) {
    double* dst = out.data() + o * hw;
    std::fill(dst, dst + hw, bd[o]);
    for (std::size_t i = 0; i < cin; ++i) {
      const double wv = wd[o * cin + i];
      const double* src = fd.data() + i * hw;
      for (std::size_t p = 0; p < hw; ++p) dst[p] += wv * src[p];
    }
  }
  Tensor y({cout, f.dim(1), f.dim(2)}, std::move(out), tape.tracks({&f, &w, &b}));
  if (y.requires_grad()) {
    tape.record("conv1x1", {f, w, b}, y, [f, w, b, y, cin, cout, hw]() mutable {
      auto gy = y.grad();
      if (f.requires_grad()) {
        auto gf = f.grad_buffer();
        auto wd = w.data();
        for (std::size_t o = 0; o < cout; ++o)
          for (std::size_t i = 0; i < cin; ++i) {
            const double wv = wd[o * cin + i];
            for (std::size_t p = 0; p < hw; ++p)
              gf[i * hw + p] += wv * gy[o * hw + p];
          }
      }
      if (w.requires_grad()) {
        auto gw = w.grad_buffer();
        auto fd = f.data();
        for (std::size_t o = 0; o < cout; ++o)
          for (std::size_t i = 0; i < cin; ++i) {
            double acc = 0.0;
            for (std::size_t p = 0; p < hw; ++p) acc += gy[o * hw + p] * fd[i * hw + p];
            gw[o * cin + i] += acc;
          }
      }
      if (b.requires_grad()) {
        auto gb = b.grad_buffer();
        for (std::size_t o = 0; o < cout; ++o) {
          double acc = 0.0;
          for (std::size_t p = 0; p < hw; ++p) acc += gy[o * hw + p];
          gb[o] += acc;
        }
      }
    });
  }
  return y;
}

/// 2x2 average pooling with stride 2 over the trailing two axes of a rank-2
/// or rank-3 tensor. Edge windows on odd sizes average only the cells that
/// exist.
inline Tensor downsample2x(Tape& tape, const Tensor& f) {
  if (f.rank() != 2 && f.rank() != 3) {
    throw ShapeError("downsample2x: expected rank 2 or 3, got " +
                     to_string(f.shape()));
  }
  const bool has_channels = f.rank() == 3;
  const std::size_t c = has_channels ? f.dim(0) : 1;
  const std::size_t h = f.dim(f.rank() - 2), w = f.dim(f.rank() - 1);
  if (h == 0 || w == 0) throw ShapeError("downsample2x: empty spatial extent");
  const std::size_t oh = (h + 1) / 2, ow = (w + 1) / 2;

  auto fd = f.data();
  std::vector<double> out(c * oh * ow);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double acc = 0.0;
        int count = 0;
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t si = 2 * i + di, sj = 2 * j + dj;
            if (si < h && sj < w) {
              acc += fd[(ch * h + si) * w + sj];
              ++count;
            }
          }
        out[(ch * oh + i) * ow + j] = acc / count;
      }
  Shape shape = has_channels ? Shape{c, oh, ow} : Shape{oh, ow};
  Tensor y(std::move(shape), std::move(out), tape.tracks({&f}));
  if (y.requires_grad()) {
    tape.record("downsample2x", {f}, y, [f, y, c, h, w, oh, ow]() mutable {
      auto gy = y.grad();
      auto gf = f.grad_buffer();
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < oh; ++i)
          for (std::size_t j = 0; j < ow; ++j) {
            const std::size_t rows = std::min<std::size_t>(2, h - 2 * i);
            const std::size_t cols = std::min<std::size_t>(2, w - 2 * j);
            const double share =
                gy[(ch * oh + i) * ow + j] / static_cast<double>(rows * cols);
            for (std::size_t di = 0; di < rows; ++di)
              for (std::size_t dj = 0; dj < cols; ++dj)
                gf[(ch * h + 2 * i + di) * w + 2 * j + dj] += share;
          }
    });
  }
  return y;
}

/// Nearest-neighbour upsampling of an [h' x w'] map to [h x w]; target cell
/// (i, j) reads source cell (i*h'/h, j*w'/w).
inline Tensor upsample_to(Tape& tape, const Tensor& m, std::size_t h,
                          std::size_t w) {
  detail::require_rank("upsample_to", m, 2);
  const std::size_t sh = m.dim(0), sw = m.dim(1);
  if (h < sh || w < sw) {
    throw ShapeError("upsample_to: target " + to_string({h, w}) +
                     " is smaller than source " + to_string(m.shape()));
  }
  std::vector<std::size_t> index(h * w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      index[i * w + j] = (i * sh / h) * sw + (j * sw / w);

  auto md = m.data();
  std::vector<double> out(h * w);
  for (std::size_t p = 0; p < out.size(); ++p) out[p] = md[index[p]];
  Tensor y({h, w}, std::move(out), tape.tracks({&m}));
  if (y.requires_grad()) {
    tape.record("upsample_to", {m}, y, [m, y, index = std::move(index)]() mutable {
      auto gy = y.grad();
      auto gm = m.grad_buffer();
      for (std::size_t p = 0; p < index.size(); ++p) gm[index[p]] += gy[p];
    });
  }
  return y;
}

/// Stacks tensors along axis 0. All parts share rank and trailing extents;
/// undefined or zero-channel parts are skipped.
inline Tensor concat_channels(Tape& tape, const std::vector<Tensor>& parts) {
  std::vector<Tensor> used;
  for (const auto& p : parts)
    if (p.defined() && p.size() > 0) used.push_back(p);
  if (used.empty()) throw ShapeError("concat_channels: nothing to concatenate");
  if (used.size() == 1) return used.front();

  const Shape& first = used.front().shape();
  if (first.size() != 1 && first.size() != 3) {
    throw ShapeError("concat_channels: expected rank 1 or 3, got " +
                     to_string(first));
  }
  std::size_t channels = 0;
  bool tracked = false;
  for (const auto& p : used) {
    const Shape& s = p.shape();
    if (s.size() != first.size() || !std::equal(s.begin() + 1, s.end(), first.begin() + 1)) {
      throw shape_error("concat_channels", first, s);
    }
    channels += s[0];
    tracked = tracked || p.requires_grad();
  }
  Shape shape = first;
  shape[0] = channels;
  std::vector<double> out;
  out.reserve(numel(shape));
  for (const auto& p : used) out.insert(out.end(), p.data().begin(), p.data().end());
  Tensor y(std::move(shape), std::move(out), tape.recording() && tracked);
  if (y.requires_grad()) {
    tape.record("concat_channels", used, y, [used, y]() mutable {
      auto gy = y.grad();
      std::size_t offset = 0;
      for (auto& p : used) {
        detail::accumulate(p, gy.subspan(offset, p.size()));
        offset += p.size();
      }
    });
  }
  return y;
}

inline Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b) {
  return concat_channels(tape, std::vector<Tensor>{a, b});
}

/// -log softmax(logits)[label], evaluated with max subtraction.
inline Tensor softmax_xent(Tape& tape, const Tensor& logits, std::size_t label) {
  detail::require_rank("softmax_xent", logits, 1);
  const std::size_t k = logits.dim(0);
  if (label >= k) {
    throw std::out_of_range("softmax_xent: label " + std::to_string(label) +
                            " outside [0, " + std::to_string(k) + ")");
  }
  auto z = logits.data();
  const double zmax = *std::max_element(z.begin(), z.end());
  std::vector<double> prob(k);
  double denom = 0.0;
  for (std::size_t i = 0; i < k; ++i) denom += prob[i] = std::exp(z[i] - zmax);
  for (double& p : prob) p /= denom;
  const double loss = std::log(denom) - (z[label] - zmax);

  Tensor y = Tensor::scalar(loss, tape.tracks({&logits}));
  if (y.requires_grad()) {
    tape.record("softmax_xent", {logits}, y,
                [logits, y, label, prob = std::move(prob)]() mutable {
                  const double g = y.grad()[0];
                  auto gz = logits.grad_buffer();
                  for (std::size_t i = 0; i < gz.size(); ++i)
                    gz[i] += g * (prob[i] - (i == label ? 1.0 : 0.0));
                });
  }
  return y;
}

/// Identity forward; the backward pass multiplies the upstream gradient by
/// -lambda.
inline Tensor grad_reverse(Tape& tape, const Tensor& x, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("grad_reverse: lambda must be >= 0");
  Tensor y(x.shape(), std::vector<double>(x.data().begin(), x.data().end()),
           tape.tracks({&x}));
  if (y.requires_grad()) {
    tape.record("grad_reverse", {x}, y, [x, y, lambda]() mutable {
      detail::accumulate(x, y.grad(), -lambda);
    });
  }
  return y;
}

/// Weighted sum of same-shaped tensors: sum_i coeff_i * t_i.
inline Tensor lincomb(Tape& tape, const std::vector<Tensor>& terms,
                      const std::vector<double>& coeffs) {
  if (terms.empty() || terms.size() != coeffs.size()) {
    throw std::invalid_argument("lincomb: need one coefficient per term");
  }
  const Shape& shape = terms.front().shape();
  std::vector<double> out(terms.front().size(), 0.0);
  bool tracked = false;
  for (std::size_t t = 0; t < terms.size(); ++t) {
    if (terms[t].shape() != shape) throw shape_error("lincomb", shape, terms[t].shape());
    auto d = terms[t].data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += coeffs[t] * d[i];
    tracked = tracked || terms[t].requires_grad();
  }
  Tensor y(shape, std::move(out), tape.recording() && tracked);
  if (y.requires_grad()) {
    tape.record("lincomb", terms, y, [terms, coeffs, y]() mutable {
      for (std::size_t t = 0; t < terms.size(); ++t)
        detail::accumulate(terms[t], y.grad(), coeffs[t]);
    });
  }
  return y;
}

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  return lincomb(tape, {a, b}, {1.0, 1.0});
}

inline Tensor scale(Tape& tape, const Tensor& a, double s) {
  return lincomb(tape, {a}, {s});
}

/// Same values under a new shape of equal element count.
inline Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) throw shape_error("reshape", x.shape(), shape);
  Tensor y(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()),
           tape.tracks({&x}));
  if (y.requires_grad()) {
    tape.record("reshape", {x}, y, [x, y]() mutable { detail::accumulate(x, y.grad()); });
  }
  return y;
}

}  // namespace m3em::core
