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

#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "m3em/model/fusion.hpp"
#include "m3em/synth/generate.hpp"

namespace m3em::harness {

struct TopK {
  double top1 = 0.0;
  double top5 = 0.0;
  bool operator==(const TopK&) const = default;
};

struct EpochLoss {
  double loss_y = 0.0;
  double loss_d = 0.0;
  double loss = 0.0;
  bool operator==(const EpochLoss&) const = default;
};

/// Accuracies are fractions in [0, 1].
struct MetricsReport {
  std::string ablation;
  std::string split;
  std::size_t samples = 0;
  TopK verb;
  TopK noun;
  TopK action;
  double domain_accuracy = std::numeric_limits<double>::quiet_NaN();
  std::vector<EpochLoss> history;

  bool same_accuracy(const MetricsReport& o) const {
    return verb == o.verb && noun == o.noun && action == o.action;
  }
};

/// 0-based rank of `label` in `scores`, higher first; ties rank the lower
/// index first.
inline std::size_t rank_of(std::span<const double> scores, std::size_t label) {
  std::size_t rank = 0;
  const double s = scores[label];
  for (std::size_t j = 0; j < scores.size(); ++j)
    if (scores[j] > s || (scores[j] == s && j < label)) ++rank;
  return rank;
}

/// Top-1/top-5 from per-sample class probabilities. Action top-1 requires
/// both verb and noun top-1; action top-5 ranks (verb, noun) pairs by
/// p_verb * p_noun.
inline void score_accuracy(std::span<const model::ScoreTensor> probs,
                           std::span<const synth::Label> labels, MetricsReport& report) {
  if (probs.size() != labels.size())
    throw std::invalid_argument("score_accuracy: " + std::to_string(probs.size()) +
                                " predictions for " + std::to_string(labels.size()) + " labels");
  report.samples = labels.size();
  report.verb = report.noun = report.action = TopK{};
  if (labels.empty()) return;
  std::size_t v1 = 0, v5 = 0, n1 = 0, n5 = 0, a1 = 0, a5 = 0;
  std::vector<double> pair;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto pv = probs[i].verb.data(), pn = probs[i].noun.data();
    const synth::Label& y = labels[i];
    if (y.verb >= pv.size() || y.noun >= pn.size())
      throw std::out_of_range("score_accuracy: label outside class range");
    const std::size_t rv = rank_of(pv, y.verb), rn = rank_of(pn, y.noun);
    v1 += rv < 1;
    v5 += rv < 5;
    n1 += rn < 1;
    n5 += rn < 5;
    a1 += rv < 1 && rn < 1;
    pair.resize(pv.size() * pn.size());
    for (std::size_t v = 0; v < pv.size(); ++v)
      for (std::size_t n = 0; n < pn.size(); ++n) pair[v * pn.size() + n] = pv[v] * pn[n];
    a5 += rank_of(pair, y.verb * pn.size() + y.noun) < 5;
  }
  const double total = static_cast<double>(labels.size());
  report.verb = {v1 / total, v5 / total};
  report.noun = {n1 / total, n5 / total};
  report.action = {a1 / total, a5 / total};
}

/// Shortest round-trip decimal form.
inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

/// One key=value per line.
inline std::string to_key_value(const MetricsReport& r) {
  std::string out;
  auto line = [&](const std::string& k, const std::string& v) { out += k + "=" + v + "\n"; };
  line("ablation", r.ablation);
  line("split", r.split);
  line("samples", std::to_string(r.samples));
  for (auto [name, t] : {std::pair{"verb", r.verb}, {"noun", r.noun}, {"action", r.action}}) {
    line(std::string(name) + "_top1", format_double(t.top1));
    line(std::string(name) + "_top5", format_double(t.top5));
  }
  line("domain_accuracy", format_double(r.domain_accuracy));
  line("epochs", std::to_string(r.history.size()));
  for (std::size_t e = 0; e < r.history.size(); ++e) {
    const std::string p = "epoch." + std::to_string(e + 1) + ".";
    line(p + "loss_y", format_double(r.history[e].loss_y));
    line(p + "loss_d", format_double(r.history[e].loss_d));
    line(p + "loss", format_double(r.history[e].loss));
  }
  return out;
}

inline nlohmann::ordered_json to_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["ablation"] = r.ablation;
  j["split"] = r.split;
  j["samples"] = r.samples;
  for (auto [name, t] : {std::pair{"verb", r.verb}, {"noun", r.noun}, {"action", r.action}})
    j[name] = {{"top1", t.top1}, {"top5", t.top5}};
  if (std::isfinite(r.domain_accuracy)) {
    j["domain_accuracy"] = r.domain_accuracy;
  } else {
    j["domain_accuracy"] = nullptr;
  }
  auto& hist = j["history"] = nlohmann::ordered_json::array();
  for (const auto& e : r.history)
    hist.push_back({{"loss_y", e.loss_y}, {"loss_d", e.loss_d}, {"loss", e.loss}});
  return j;
}

}  // namespace m3em::harness
