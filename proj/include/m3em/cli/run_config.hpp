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
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "m3em/core/binary_io.hpp"
#include "m3em/harness/config.hpp"
#include "m3em/harness/metrics.hpp"
#include "m3em/synth/generate.hpp"

// Run configuration file: sections of key = value lines.
//
//   # comment
//   [data]
//   seed = 1
//   snr = inf
//   informative_rgb = 0,1,2,3
//
// Every key has a default (see default_config_text()); keys and sections
// that are not listed there are rejected with the offending line number.
namespace m3em::cli {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Paths {
  std::filesystem::path data_dir = "data";
  std::filesystem::path out_dir = "out";
};

struct RunConfig {
  synth::SyntheticDatasetSpec data;
  harness::TrainConfig train;
  Paths paths;

  /// Model config with the data-derived dimensions filled in.
  model::ModelConfig model() const { return data.apply_to(train.model); }

  void validate() const {
    data.validate();
    harness::TrainConfig t = train;
    t.model = model();
    t.validate();
    if (train.epochs == 0) throw ConfigError("config: train.epochs must be >= 1");
  }
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& v) {
  T out{};
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || end != v.data() + v.size()) throw ConfigError("not a number: '" + v + "'");
  return out;
}

inline double parse_real(const std::string& v) {
  if (v == "inf") return std::numeric_limits<double>::infinity();
  return parse_number<double>(v);
}

inline std::vector<std::size_t> parse_index_list(const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_number<std::size_t>(item));
  }
  return out;
}

inline std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

// "section.key" -> accessor, in documentation order.
inline const std::vector<std::pair<std::string, Field>>& fields() {
  using harness::format_double;
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    // `at` maps a (const or mutable) RunConfig to the field it names.
    auto number = [&](const std::string& key, auto at) {
      t.push_back({key,
                   {[at](RunConfig& c, const std::string& v) {
                      auto& field = at(c);
                      using T = std::remove_cvref_t<decltype(field)>;
                      if constexpr (std::is_floating_point_v<T>) {
                        field = parse_real(v);
                      } else {
                        field = parse_number<T>(v);
                      }
                    },
                    [at](const RunConfig& c) {
                      const auto& field = at(c);
                      if constexpr (std::is_floating_point_v<std::remove_cvref_t<decltype(field)>>) {
                        return std::isinf(field) ? std::string("inf") : format_double(field);
                      } else {
                        return std::to_string(field);
                      }
                    }}});
    };
    auto text = [&](const std::string& key, auto set, auto get) { t.push_back({key, {set, get}}); };

    number("data.seed", [](auto& c) -> auto& { return c.data.seed; });
    number("data.n_source", [](auto& c) -> auto& { return c.data.n_source; });
    number("data.n_target", [](auto& c) -> auto& { return c.data.n_target; });
    number("data.verb_classes", [](auto& c) -> auto& { return c.data.verb_classes; });
    number("data.noun_classes", [](auto& c) -> auto& { return c.data.noun_classes; });
    number("data.channels", [](auto& c) -> auto& { return c.data.channels; });
    number("data.height", [](auto& c) -> auto& { return c.data.height; });
    number("data.width", [](auto& c) -> auto& { return c.data.width; });
    for (std::size_t m = 0; m < 3; ++m) {
      text("data.informative_" + std::string(model::to_string(model::kModalityOrder[m])),
           [m](RunConfig& c, const std::string& v) { c.data.informative[m] = parse_index_list(v); },
           [m](const RunConfig& c) { return join(c.data.informative[m]); });
    }
    text("data.shared_region",
         [](RunConfig& c, const std::string& v) {
           const auto r = parse_index_list(v);
           if (r.size() != 4) throw ConfigError("shared_region needs i0,j0,i1,j1");
           c.data.shared_region = {r[0], r[1], r[2], r[3]};
         },
         [](const RunConfig& c) {
           const auto& r = c.data.shared_region;
           return join({r.i0, r.j0, r.i1, r.j1});
         });
    number("data.signal_scale", [](auto& c) -> auto& { return c.data.signal_scale; });
    number("data.snr", [](auto& c) -> auto& { return c.data.snr; });
    number("data.shift_bias", [](auto& c) -> auto& { return c.data.shift_bias; });
    number("data.shift_noise", [](auto& c) -> auto& { return c.data.shift_noise; });

    text("model.ablation",
         [](RunConfig& c, const std::string& v) { c.train.model.ablation = model::parse_ablation(v); },
         [](const RunConfig& c) { return std::string(model::to_string(c.train.model.ablation)); });
    number("model.reduction", [](auto& c) -> auto& { return c.train.model.reduction; });
    number("model.pyramid_levels", [](auto& c) -> auto& { return c.train.model.pyramid_levels; });
    number("model.latent", [](auto& c) -> auto& { return c.train.model.latent; });
    number("model.disc_hidden", [](auto& c) -> auto& { return c.train.model.disc_hidden; });
    text("model.pearson",
         [](RunConfig& c, const std::string& v) { c.train.model.pearson = model::parse_pearson_mode(v); },
         [](const RunConfig& c) { return std::string(model::to_string(c.train.model.pearson)); });

    number("train.epochs", [](auto& c) -> auto& { return c.train.epochs; });
    number("train.batch_size", [](auto& c) -> auto& { return c.train.batch_size; });
    number("train.learning_rate", [](auto& c) -> auto& { return c.train.learning_rate; });
    number("train.momentum", [](auto& c) -> auto& { return c.train.momentum; });
    number("train.lambda_y", [](auto& c) -> auto& { return c.train.lambda_y; });
    number("train.lambda_d", [](auto& c) -> auto& { return c.train.lambda_d; });
    number("train.seed", [](auto& c) -> auto& { return c.train.seed; });

    text("paths.data_dir", [](RunConfig& c, const std::string& v) { c.paths.data_dir = v; },
         [](const RunConfig& c) { return c.paths.data_dir.string(); });
    text("paths.out_dir", [](RunConfig& c, const std::string& v) { c.paths.out_dir = v; },
         [](const RunConfig& c) { return c.paths.out_dir.string(); });
    return t;
  }();
  return table;
}

}  // namespace detail

/// Parses config text on top of the defaults. Relative paths stay relative
/// to the working directory.
inline RunConfig parse_config(const std::string& text, const std::string& source = "config") {
  RunConfig cfg;
  std::map<std::string, const detail::Field*> by_key;
  for (const auto& [key, field] : detail::fields()) by_key[key] = &field;

  std::istringstream in(text);
  std::string line, section;
  std::map<std::string, int> seen;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section != "data" && section != "model" && section != "train" && section != "paths")
        throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    if (section.empty()) throw ConfigError(where + "key outside of a section");
    const std::string key = section + "." + detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    auto it = by_key.find(key);
    if (it == by_key.end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (seen.count(key))
      throw ConfigError(where + "'" + key + "' already set on line " + std::to_string(seen[key]));
    seen[key] = lineno;
    try {
      it->second->set(cfg, value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
  }
  try {
    cfg.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw core::IoError("cannot open config: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

/// Full config text for `cfg`; parse_config(format_config(c)) reproduces c.
inline std::string format_config(const RunConfig& cfg) {
  std::string out, section;
  for (const auto& [key, field] : detail::fields()) {
    const std::string s = key.substr(0, key.find('.'));
    if (s != section) {
      out += (section.empty() ? "" : "\n") + std::string("[") + s + "]\n";
      section = s;
    }
    out += key.substr(key.find('.') + 1) + " = " + field.get(cfg) + "\n";
  }
  return out;
}

inline std::string default_config_text() { return format_config(RunConfig{}); }

}  // namespace m3em::cli
