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

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "m3em/core/random.hpp"
#include "m3em/core/tensor.hpp"
#include "m3em/model/config.hpp"
#include "m3em/model/model.hpp"

// Two-domain multi-modal dataset with planted structure.
//
// Class signal lives on a few informative channels per modality. For RGB and
// Flow it is confined to a shared spatial rectangle, so the two modalities
// agree there and nowhere else. The target domain differs from the source
// only on the non-informative channels (an additive per-channel offset plus
// inflated noise), so a model that learns to ignore those channels closes
// the gap completely.
namespace m3em::synth {

using core::Tensor;
using model::Modality;

enum class Domain { kSource, kTarget };

inline std::string_view to_string(Domain d) { return d == Domain::kSource ? "source" : "target"; }

struct Label {
  std::uint32_t verb = 0;
  std::uint32_t noun = 0;
  bool operator==(const Label&) const = default;
};

struct Split {
  Domain domain = Domain::kSource;
  std::vector<model::Sample> samples;
  std::vector<Label> labels;  // empty when the split is unlabeled

  std::size_t size() const { return samples.size(); }
  bool labeled() const { return !labels.empty(); }
};

struct Dataset {
  Split source;
  Split target;
};

// Half-open rectangle [i0, i1) x [j0, j1).
struct Region {
  std::size_t i0 = 2, j0 = 2, i1 = 6, j1 = 6;
  bool contains(std::size_t i, std::size_t j) const { return i >= i0 && i < i1 && j >= j0 && j < j1; }
};

struct SyntheticDatasetSpec {
  std::uint64_t seed = 1;
  std::size_t n_source = 2000;
  std::size_t n_target = 2000;
  std::size_t verb_classes = 5;
  std::size_t noun_classes = 5;
  std::size_t channels = 16;
  std::size_t height = 8;
  std::size_t width = 8;
  // Indexed by Modality; sets must be disjoint across modalities.
  std::array<std::vector<std::size_t>, 3> informative = {
      std::vector<std::size_t>{0, 1, 2, 3}, {4, 5, 6, 7}, {8, 9, 10, 11}};
  Region shared_region;
  double signal_scale = 1.0;  // std of the per-class centroid components
  double snr = 1.0;           // noise std is signal_scale / snr; infinity means no noise
  double shift_bias = 0.2;    // target-only offset on non-informative channels
  double shift_noise = 2.0;   // target-only noise multiplier on non-informative channels

  double noise_std() const { return std::isinf(snr) ? 0.0 : signal_scale / snr; }

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("synthetic spec: " + m); };
    if (verb_classes == 0 || noun_classes == 0) fail("class counts must be >= 1");
    if (channels == 0 || height == 0 || width == 0) fail("channels, height, width must be >= 1");
    std::set<std::size_t> used;
    for (const auto& set : informative) {
      for (std::size_t ch : set) {
        if (ch >= channels) fail("informative channel " + std::to_string(ch) + " out of range");
        if (!used.insert(ch).second)
          fail("informative channel " + std::to_string(ch) + " listed twice");
      }
    }
    const Region& r = shared_region;
    if (!(r.i0 < r.i1 && r.j0 < r.j1 && r.i1 <= height && r.j1 <= width))
      fail("shared_region must be a non-empty rectangle inside the feature map");
    if (!(snr > 0.0)) fail("snr must be > 0");
    if (!(signal_scale >= 0.0) || !(shift_bias >= 0.0) || !(shift_noise >= 0.0))
      fail("signal_scale, shift_bias and shift_noise must be >= 0");
  }

  model::ModelConfig apply_to(model::ModelConfig config) const {
    config.channels = channels;
    config.height = height;
    config.width = width;
    config.verb_classes = verb_classes;
    config.noun_classes = noun_classes;
    return config;
  }
};

/// Per-modality class centroids and target offsets drawn from `spec.seed`.
struct PlantedStructure {
  // [modality][verb] and [modality][noun] -> values on informative channels.
  std::array<std::vector<std::vector<double>>, 3> verb_part;
  std::array<std::vector<std::vector<double>>, 3> noun_part;
  // [modality][channel]; zero on informative channels.
  std::array<std::vector<double>, 3> target_offset;

  /// Centroid of (verb, noun) on modality m's informative channels.
  std::vector<double> centroid(std::size_t m, const Label& y) const {
    std::vector<double> out = verb_part[m][y.verb];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += noun_part[m][y.noun][i];
    return out;
  }
};

namespace detail {

inline PlantedStructure plant(const SyntheticDatasetSpec& spec, core::Rng& rng) {
  PlantedStructure s;
  // The verb and noun parts each carry half the centroid variance.
  const double part_std = spec.signal_scale / std::sqrt(2.0);
  for (std::size_t m = 0; m < 3; ++m) {
    const std::size_t n_inf = spec.informative[m].size();
    auto draw = [&](std::size_t classes) {
      std::vector<std::vector<double>> parts(classes, std::vector<double>(n_inf));
      for (auto& p : parts)
        for (double& v : p) v = part_std * rng.normal();
      return parts;
    };
    s.verb_part[m] = draw(spec.verb_classes);
    s.noun_part[m] = draw(spec.noun_classes);
    s.target_offset[m].assign(spec.channels, 0.0);
    std::vector<bool> informative(spec.channels, false);
    for (std::size_t ch : spec.informative[m]) informative[ch] = true;
    for (std::size_t ch = 0; ch < spec.channels; ++ch) {
      const double sign = rng.uniform01() < 0.5 ? -1.0 : 1.0;
      if (!informative[ch]) s.target_offset[m][ch] = sign * spec.shift_bias;
    }
  }
  return s;
}

inline Split draw_split(const SyntheticDatasetSpec& spec, const PlantedStructure& planted,
                        Domain domain, std::size_t n, core::Rng& rng) {
  const std::size_t c = spec.channels, h = spec.height, w = spec.width;
  const double base_noise = spec.noise_std();
  const bool shifted = domain == Domain::kTarget;

  Split split;
  split.domain = domain;
  split.samples.reserve(n);
  split.labels.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    const Label y{static_cast<std::uint32_t>(rng.index(spec.verb_classes)),
                  static_cast<std::uint32_t>(rng.index(spec.noun_classes))};
    model::Sample sample{Tensor({c, h, w}), Tensor({c, h, w}), Tensor({c})};
    Tensor* modality[3] = {&sample.rgb, &sample.flow, &sample.audio};
    for (std::size_t m = 0; m < 3; ++m) {
      const std::vector<double> centroid = planted.centroid(m, y);
      std::vector<double> signal(c, 0.0);
      std::vector<bool> informative(c, false);
      for (std::size_t k = 0; k < spec.informative[m].size(); ++k) {
        signal[spec.informative[m][k]] = centroid[k];
        informative[spec.informative[m][k]] = true;
      }
      auto data = modality[m]->mutable_data();
      const bool is_spatial = m != static_cast<std::size_t>(Modality::kAudio);
      const std::size_t hw = is_spatial ? h * w : 1;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const bool nuisance = shifted && !informative[ch];
        const double noise = nuisance ? base_noise * spec.shift_noise : base_noise;
        const double offset = nuisance ? planted.target_offset[m][ch] : 0.0;
        for (std::size_t p = 0; p < hw; ++p) {
          const bool in_region = !is_spatial || spec.shared_region.contains(p / w, p % w);
          double v = offset + (in_region ? signal[ch] : 0.0);
          if (noise > 0.0) v += noise * rng.normal();
          data[ch * hw + p] = v;
        }
      }
    }
    split.samples.push_back(std::move(sample));
    split.labels.push_back(y);
  }
  return split;
}

}  // namespace detail

inline PlantedStructure planted_structure(const SyntheticDatasetSpec& spec) {
  spec.validate();
  core::Rng rng(spec.seed);
  return detail::plant(spec, rng);
}

/// Deterministic in `spec` (including its seed). Source samples are drawn
/// first, then target samples, from one stream.
inline Dataset generate(const SyntheticDatasetSpec& spec) {
  spec.validate();
  core::Rng rng(spec.seed);
  const PlantedStructure planted = detail::plant(spec, rng);
  Dataset ds;
  ds.source = detail::draw_split(spec, planted, Domain::kSource, spec.n_source, rng);
  ds.target = detail::draw_split(spec, planted, Domain::kTarget, spec.n_target, rng);
  return ds;
}

}  // namespace m3em::synth
