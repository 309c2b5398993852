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

#include <string>
#include <vector>

#include "m3em/core/ops.hpp"
#include "m3em/model/cmc.hpp"
#include "m3em/model/config.hpp"
#include "m3em/model/fusion.hpp"
#include "m3em/model/params.hpp"
#include "m3em/model/smr.hpp"

namespace m3em::model {

/// One clip's backbone features.
struct Sample {
  Tensor rgb;    // [c x h x w]
  Tensor flow;   // [c x h x w]
  Tensor audio;  // [c]
};

struct ForwardOutput {
  ScoreTensor s1;     // classifier on concat(f_rR, f_rF)
  ScoreTensor s2;     // classifier on f_rA
  ScoreTensor fused;  // late_fuse(s1, s2)
  Tensor domain_logits;
  Tensor consensus;  // [h x w]; zero when CMC is disabled
};

inline void check_sample(const Sample& s, const ModelConfig& config) {
  const core::Shape spatial{config.channels, config.height, config.width};
  if (s.rgb.shape() != spatial) throw core::shape_error("sample rgb", spatial, s.rgb.shape());
  if (s.flow.shape() != spatial) throw core::shape_error("sample flow", spatial, s.flow.shape());
  if (s.audio.shape() != core::Shape{config.channels})
    throw core::shape_error("sample audio", {config.channels}, s.audio.shape());
}

/// Full pipeline: SMR per modality, CMC over RGB/Flow, classifier heads,
/// late fusion and the domain discriminator (behind gradient reversal with
/// coefficient `grl_lambda`).
inline ForwardOutput model_forward(Tape& tape, const Sample& sample, const M3emParams& params,
                                   const ModelConfig& config, double grl_lambda) {
  check_sample(sample, config);
  const ModalityFeature features[] = {{Modality::kRgb, sample.rgb},
                                      {Modality::kFlow, sample.flow},
                                      {Modality::kAudio, sample.audio}};

  Tensor refined[3];
  if (uses_smr(config.ablation)) {
    Tensor pooled[3];
    for (int m = 0; m < 3; ++m) pooled[m] = pooled_descriptor(tape, features[m]);
    for (int m = 0; m < 3; ++m) {
      std::vector<Tensor> others;
      for (int o = 0; o < 3; ++o)
        if (o != m) others.push_back(pooled[o]);
      refined[m] = smr_forward(tape, features[m], others, params.smr(features[m].modality));
    }
  } else {
    for (int m = 0; m < 3; ++m) refined[m] = smr_passthrough(tape, features[m]);
  }

  ForwardOutput out;
  Tensor f_rgb, f_flow;
  if (uses_cmc(config.ablation)) {
    const Tensor h_rgb = project_latent(tape, refined[0], params.cmc.proj_rgb);
    const Tensor h_flow = project_latent(tape, refined[1], params.cmc.proj_flow);
    out.consensus = consensus_map(tape, h_rgb, h_flow, params.cmc.k, config.pearson);
    f_rgb = consensus_pool(tape, refined[0], out.consensus);
    f_flow = consensus_pool(tape, refined[1], out.consensus);
  } else {
    out.consensus = Tensor({config.height, config.width});
    f_rgb = core::global_avg_pool(tape, refined[0]);
    f_flow = core::global_avg_pool(tape, refined[1]);
  }
  const Tensor& f_audio = refined[2];

  const HeadParams& h = params.heads;
  const Tensor visual = core::concat_channels(tape, f_rgb, f_flow);
  out.s1 = {core::affine(tape, visual, h.verb.w, h.verb.b),
            core::affine(tape, visual, h.noun.w, h.noun.b)};
  out.s2 = {core::affine(tape, f_audio, h.audio_verb.w, h.audio_verb.b),
            core::affine(tape, f_audio, h.audio_noun.w, h.audio_noun.b)};
  out.fused = late_fuse(tape, out.s1, out.s2);

  const Tensor joint = core::concat_channels(tape, std::vector<Tensor>{f_rgb, f_flow, f_audio});
  out.domain_logits = discriminator_forward(tape, joint, h, grl_lambda);
  return out;
}

}  // namespace m3em::model
