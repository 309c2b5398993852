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
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace m3em::model {

enum class Modality { kRgb, kFlow, kAudio };

// Concatenations across modalities always follow this order.
inline constexpr Modality kModalityOrder[] = {Modality::kRgb, Modality::kFlow,
                                              Modality::kAudio};

inline std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::kRgb: return "rgb";
    case Modality::kFlow: return "flow";
    case Modality::kAudio: return "audio";
  }
  return "?";
}

// Which sub-modules are active. Disabled SMR passes F through as
// concat(F, F); disabled CMC uses a zero consensus map (plain pooling).
enum class Ablation { kBaseline, kSmr, kCmc, kFull };

inline std::string_view to_string(Ablation a) {
  switch (a) {
    case Ablation::kBaseline: return "baseline";
    case Ablation::kSmr: return "smr";
    case Ablation::kCmc: return "cmc";
    case Ablation::kFull: return "full";
  }
  return "?";
}

inline Ablation parse_ablation(std::string_view s) {
  for (Ablation a : {Ablation::kBaseline, Ablation::kSmr, Ablation::kCmc, Ablation::kFull})
    if (to_string(a) == s) return a;
  throw std::invalid_argument("unknown ablation '" + std::string(s) +
                              "' (expected baseline|smr|cmc|full)");
}

inline bool uses_smr(Ablation a) { return a == Ablation::kSmr || a == Ablation::kFull; }
inline bool uses_cmc(Ablation a) { return a == Ablation::kCmc || a == Ablation::kFull; }

// kCentered is the Pearson coefficient proper. kAsWritten is the raw
// dot / (|a|^2 |b|^2) form, kept for fidelity experiments; it is neither
// bounded nor scale invariant.
enum class PearsonMode { kCentered, kAsWritten };

inline std::string_view to_string(PearsonMode m) {
  return m == PearsonMode::kCentered ? "centered" : "as-written";
}

inline PearsonMode parse_pearson_mode(std::string_view s) {
  if (s == "centered") return PearsonMode::kCentered;
  if (s == "as-written") return PearsonMode::kAsWritten;
  throw std::invalid_argument("unknown pearson mode '" + std::string(s) +
                              "' (expected centered|as-written)");
}

struct ModelConfig {
  std::size_t channels = 16;  // c, shared by every modality
  std::size_t height = 8;
  std::size_t width = 8;
  std::size_t reduction = 16;  // gate bottleneck ratio r
  int pyramid_levels = 2;      // k
  std::size_t latent = 0;      // c'; 0 selects c / 2
  std::size_t verb_classes = 5;
  std::size_t noun_classes = 5;
  std::size_t disc_hidden = 32;
  PearsonMode pearson = PearsonMode::kCentered;
  Ablation ablation = Ablation::kFull;

  std::size_t latent_dim() const { return latent ? latent : std::max<std::size_t>(1, channels / 2); }

  // k clamped to the number of halvings before both extents reach 1.
  int effective_levels() const {
    int max_levels = 0;
    for (std::size_t extent = std::max(height, width); extent > 1; extent = (extent + 1) / 2)
      ++max_levels;
    return std::min(pyramid_levels, max_levels);
  }

  void validate() const {
    auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
    if (channels == 0 || height == 0 || width == 0) fail("channels, height and width must be >= 1");
    if (reduction == 0 || channels % reduction != 0)
      fail("reduction " + std::to_string(reduction) + " must divide channels " +
           std::to_string(channels));
    if (pyramid_levels < 0) fail("pyramid_levels must be >= 0");
    if (verb_classes == 0 || noun_classes == 0) fail("class counts must be >= 1");
    if (disc_hidden == 0) fail("disc_hidden must be >= 1");
  }
};

}  // namespace m3em::model
