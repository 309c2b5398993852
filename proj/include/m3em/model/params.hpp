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

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "m3em/core/random.hpp"
#include "m3em/core/tensor.hpp"
#include "m3em/model/config.hpp"

namespace m3em::model {

using core::Tensor;

struct AffineParams {
  Tensor w;  // [out x in]
  Tensor b;  // [out]

  std::size_t in_dim() const { return w.dim(1); }
  std::size_t out_dim() const { return w.dim(0); }
};

/// Weights ~ U(-1/sqrt(in), 1/sqrt(in)), bias 0.
inline AffineParams make_affine(std::size_t out, std::size_t in, core::Rng& rng) {
  AffineParams p{Tensor({out, in}, true), Tensor({out}, true)};
  core::init_uniform_fan_in(p.w, in, rng);
  return p;
}

// sigma(W2 relu(W1 x + b1) + b2) with W1 [c/r x in], W2 [c x c/r].
struct GateParams {
  AffineParams squeeze;
  AffineParams excite;
};

struct SmrParams {
  GateParams self_gate;   // input c
  GateParams cross_gate;  // input c_in
  std::size_t c = 0;
  std::size_t c_in = 0;
  std::size_t r = 1;
};

inline SmrParams make_smr_params(std::size_t c, std::size_t c_in, std::size_t r,
                                 core::Rng& rng) {
  if (r == 0 || c % r != 0) {
    throw std::invalid_argument("SMR: bottleneck ratio " + std::to_string(r) +
                                " must divide channel count " + std::to_string(c));
  }
  const std::size_t hidden = c / r;
  SmrParams p;
  p.c = c;
  p.c_in = c_in;
  p.r = r;
  p.self_gate.squeeze = make_affine(hidden, c, rng);
  p.self_gate.excite = make_affine(c, hidden, rng);
  p.cross_gate.squeeze = make_affine(hidden, c_in, rng);
  p.cross_gate.excite = make_affine(c, hidden, rng);
  return p;
}

/// Closed form for one gate's parameters (weights and biases) over an input
/// of `c` channels: 2*c*(c/r) + c/r + c.
constexpr std::size_t gate_parameter_count(std::size_t c, std::size_t r) {
  return 2 * c * (c / r) + c / r + c;
}

/// Counts the scalars actually held by a gate's tensors.
inline std::size_t count_parameters(const GateParams& g) {
  return g.squeeze.w.size() + g.squeeze.b.size() + g.excite.w.size() + g.excite.b.size();
}

struct CmcParams {
  AffineParams proj_rgb;   // [c' x 2c]
  AffineParams proj_flow;  // [c' x 2c]
  int k = 0;
  std::size_t latent = 0;
};

struct HeadParams {
  AffineParams verb;        // on concat(f_rR, f_rF): 4c
  AffineParams noun;
  AffineParams audio_verb;  // on f_rA: 2c
  AffineParams audio_noun;
  AffineParams disc_hidden;  // on concat(f_rR, f_rF, f_rA): 6c
  AffineParams disc_out;     // 2 logits: {source, target}

  std::size_t disc_input_dim() const { return disc_hidden.in_dim(); }
};

struct M3emParams {
  SmrParams rgb;
  SmrParams flow;
  SmrParams audio;
  CmcParams cmc;
  HeadParams heads;

  const SmrParams& smr(Modality m) const {
    switch (m) {
      case Modality::kRgb: return rgb;
      case Modality::kFlow: return flow;
      case Modality::kAudio: return audio;
    }
    return rgb;
  }

  /// Every learnable tensor with a stable dotted name, in checkpoint order.
  std::vector<std::pair<std::string, Tensor>> named() const {
    std::vector<std::pair<std::string, Tensor>> out;
    auto affine = [&](const std::string& name, const AffineParams& a) {
      out.emplace_back(name + ".w", a.w);
      out.emplace_back(name + ".b", a.b);
    };
    for (Modality m : kModalityOrder) {
      const std::string base = "smr." + std::string(to_string(m));
      const SmrParams& s = smr(m);
      affine(base + ".self.squeeze", s.self_gate.squeeze);
      affine(base + ".self.excite", s.self_gate.excite);
      affine(base + ".cross.squeeze", s.cross_gate.squeeze);
      affine(base + ".cross.excite", s.cross_gate.excite);
    }
    affine("cmc.proj_rgb", cmc.proj_rgb);
    affine("cmc.proj_flow", cmc.proj_flow);
    affine("head.verb", heads.verb);
    affine("head.noun", heads.noun);
    affine("head.audio_verb", heads.audio_verb);
    affine("head.audio_noun", heads.audio_noun);
    affine("disc.hidden", heads.disc_hidden);
    affine("disc.out", heads.disc_out);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named()) n += t.size();
    return n;
  }

  /// Deep copy with fresh storage; gradients are not copied.
  M3emParams clone() const {
    M3emParams out = *this;
    auto src = named();
    auto dst = out.mutable_refs();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i].second.clone(true);
    return out;
  }

  void zero_grad() {
    for (Tensor* t : mutable_refs()) t->zero_grad();
  }

  /// Pointers to the handles in named() order, for rebinding storage.
  std::vector<Tensor*> mutable_refs() {
    std::vector<Tensor*> out;
    auto affine = [&](AffineParams& a) {
      out.push_back(&a.w);
      out.push_back(&a.b);
    };
    for (SmrParams* s : {&rgb, &flow, &audio}) {
      affine(s->self_gate.squeeze);
      affine(s->self_gate.excite);
      affine(s->cross_gate.squeeze);
      affine(s->cross_gate.excite);
    }
    affine(cmc.proj_rgb);
    affine(cmc.proj_flow);
    for (AffineParams* a : {&heads.verb, &heads.noun, &heads.audio_verb, &heads.audio_noun,
                            &heads.disc_hidden, &heads.disc_out})
      affine(*a);
    return out;
  }
};

/// Seeded initialization of the full parameter set for `config`.
inline M3emParams make_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  core::Rng rng(seed);
  const std::size_t c = config.channels;
  const std::size_t latent = config.latent_dim();
  M3emParams p;
  p.rgb = make_smr_params(c, 2 * c, config.reduction, rng);
  p.flow = make_smr_params(c, 2 * c, config.reduction, rng);
  p.audio = make_smr_params(c, 2 * c, config.reduction, rng);
  p.cmc.proj_rgb = make_affine(latent, 2 * c, rng);
  p.cmc.proj_flow = make_affine(latent, 2 * c, rng);
  p.cmc.k = config.effective_levels();
  p.cmc.latent = latent;
  p.heads.verb = make_affine(config.verb_classes, 4 * c, rng);
  p.heads.noun = make_affine(config.noun_classes, 4 * c, rng);
  p.heads.audio_verb = make_affine(config.verb_classes, 2 * c, rng);
  p.heads.audio_noun = make_affine(config.noun_classes, 2 * c, rng);
  p.heads.disc_hidden = make_affine(config.disc_hidden, 6 * c, rng);
  p.heads.disc_out = make_affine(2, config.disc_hidden, rng);
  return p;
}

}  // namespace m3em::model
