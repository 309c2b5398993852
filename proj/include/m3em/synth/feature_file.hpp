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

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "m3em/core/binary_io.hpp"
#include "m3em/synth/generate.hpp"

// Feature file, one per (split, modality), little-endian:
//
//   "MMFT"            4 bytes
//   version           u32 (kFeatureFileVersion)
//   modality          u32 length + utf-8 name
//   rank              u32
//   dims              u64 x rank        (per-sample feature shape)
//   sample count      u64
//   has labels        u8 (0 or 1)
//   features          f64 x count x product(dims)
//   labels            (u32 verb, u32 noun) x count, if has labels
namespace m3em::synth {

inline constexpr char kFeatureMagic[4] = {'M', 'M', 'F', 'T'};
inline constexpr std::uint32_t kFeatureFileVersion = 1;

struct FeatureFile {
  std::string modality;
  core::Shape dims;
  std::uint64_t count = 0;
  std::vector<double> features;
  std::vector<Label> labels;  // empty if unlabeled

  bool operator==(const FeatureFile&) const = default;
};

inline std::vector<char> encode_feature_file(const FeatureFile& f) {
  if (f.features.size() != f.count * core::numel(f.dims))
    throw core::ShapeError("feature file: payload does not match count x dims");
  if (!f.labels.empty() && f.labels.size() != f.count)
    throw core::ShapeError("feature file: label count does not match sample count");
  core::ByteWriter out;
  out.bytes({kFeatureMagic, 4});
  out.u32(kFeatureFileVersion);
  out.str(f.modality);
  out.u32(static_cast<std::uint32_t>(f.dims.size()));
  for (std::size_t d : f.dims) out.u64(d);
  out.u64(f.count);
  out.u8(f.labels.empty() ? 0 : 1);
  for (double v : f.features) out.f64(v);
  for (const Label& y : f.labels) {
    out.u32(y.verb);
    out.u32(y.noun);
  }
  return out.buffer();
}

inline FeatureFile decode_feature_file(std::vector<char> bytes, const std::string& source) {
  core::ByteReader in(std::move(bytes), source);
  if (in.remaining() < 4 || in.bytes(4) != std::string(kFeatureMagic, 4))
    throw core::FormatError(core::FormatErrorKind::kMagic, source + ": not an MMFT feature file");
  const std::uint32_t version = in.u32();
  if (version != kFeatureFileVersion) {
    throw core::FormatError(core::FormatErrorKind::kVersion,
                            source + ": version " + std::to_string(version) + ", expected " +
                                std::to_string(kFeatureFileVersion));
  }
  FeatureFile f;
  f.modality = in.str();
  f.dims.resize(in.u32());
  for (auto& d : f.dims) d = in.u64();
  f.count = in.u64();
  const bool has_labels = in.u8() != 0;

  const std::uint64_t values = f.count * core::numel(f.dims);
  const std::uint64_t expected = 8 * values + (has_labels ? 8 * f.count : 0);
  if (in.remaining() != expected) {
    throw core::FormatError(core::FormatErrorKind::kTruncated,
                            source + ": payload is " + std::to_string(in.remaining()) +
                                " bytes, header implies " + std::to_string(expected));
  }
  f.features.resize(values);
  for (double& v : f.features) v = in.f64();
  if (has_labels) {
    f.labels.resize(f.count);
    for (Label& y : f.labels) {
      y.verb = in.u32();
      y.noun = in.u32();
    }
  }
  return f;
}

inline void write_feature_file(const std::filesystem::path& path, const FeatureFile& f) {
  core::write_file(path, encode_feature_file(f));
}

inline FeatureFile read_feature_file(const std::filesystem::path& path) {
  return decode_feature_file(core::read_file(path), path.string());
}

/// "<dir>/<domain>_<modality>.mmft"
inline std::filesystem::path feature_path(const std::filesystem::path& dir, Domain domain,
                                          Modality m) {
  return dir / (std::string(to_string(domain)) + "_" + std::string(model::to_string(m)) + ".mmft");
}

inline FeatureFile to_feature_file(const Split& split, Modality m) {
  FeatureFile f;
  f.modality = std::string(model::to_string(m));
  f.count = split.size();
  for (const model::Sample& s : split.samples) {
    const Tensor& t = m == Modality::kRgb ? s.rgb : m == Modality::kFlow ? s.flow : s.audio;
    if (f.dims.empty()) f.dims = t.shape();
    f.features.insert(f.features.end(), t.data().begin(), t.data().end());
  }
  f.labels = split.labels;
  return f;
}

/// Writes the three modality files of a split; returns their paths.
inline std::vector<std::filesystem::path> write_split(const std::filesystem::path& dir,
                                                      const Split& split) {
  if (split.samples.empty()) throw std::invalid_argument("write_split: empty split");
  std::vector<std::filesystem::path> paths;
  for (Modality m : model::kModalityOrder) {
    paths.push_back(feature_path(dir, split.domain, m));
    write_feature_file(paths.back(), to_feature_file(split, m));
  }
  return paths;
}

/// Reads the three modality files of a split and checks they agree.
inline Split read_split(const std::filesystem::path& dir, Domain domain) {
  FeatureFile files[3];
  for (Modality m : model::kModalityOrder) {
    const auto path = feature_path(dir, domain, m);
    FeatureFile f = read_feature_file(path);
    if (f.modality != model::to_string(m))
      throw core::FormatError(core::FormatErrorKind::kRecord,
                              path.string() + ": holds modality '" + f.modality + "'");
    files[static_cast<int>(m)] = std::move(f);
  }
  const std::uint64_t count = files[0].count;
  for (const auto& f : files) {
    if (f.count != count)
      throw core::FormatError(core::FormatErrorKind::kRecord,
                              "split " + std::string(to_string(domain)) + ": modality sample counts differ");
    if (f.labels != files[0].labels)
      throw core::FormatError(core::FormatErrorKind::kRecord,
                              "split " + std::string(to_string(domain)) + ": modality labels differ");
  }
  if (files[0].dims.size() != 3 || files[1].dims != files[0].dims || files[2].dims.size() != 1 ||
      files[2].dims[0] != files[0].dims[0])
    throw core::FormatError(core::FormatErrorKind::kShape,
                            "split " + std::string(to_string(domain)) + ": inconsistent modality shapes");

  Split split;
  split.domain = domain;
  split.labels = files[0].labels;
  const std::size_t n_spatial = core::numel(files[0].dims), n_audio = files[2].dims[0];
  for (std::uint64_t s = 0; s < count; ++s) {
    auto slice = [&](const FeatureFile& f, std::size_t n) {
      return std::vector<double>(f.features.begin() + static_cast<std::ptrdiff_t>(s * n),
                                 f.features.begin() + static_cast<std::ptrdiff_t>((s + 1) * n));
    };
    split.samples.push_back({Tensor(files[0].dims, slice(files[0], n_spatial)),
                             Tensor(files[1].dims, slice(files[1], n_spatial)),
                             Tensor(files[2].dims, slice(files[2], n_audio))});
  }
  return split;
}

}  // namespace m3em::synth
