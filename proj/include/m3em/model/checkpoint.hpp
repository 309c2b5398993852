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
#include <map>
#include <string>
#include <vector>

#include "m3em/core/binary_io.hpp"
#include "m3em/model/config.hpp"
#include "m3em/model/params.hpp"

// Parameter checkpoint, little-endian:
//
//   "M3EM"              4 bytes
//   version             u32 (kCheckpointVersion)
//   record count        u32
//   per record:
//     name length       u32
//     name              utf-8 bytes
//     rank              u32
//     dims              u64 x rank
//     data              f64 x product(dims)
//
// Records appear in M3emParams::named() order.
namespace m3em::model {

inline constexpr char kCheckpointMagic[4] = {'M', '3', 'E', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<char> encode_checkpoint(const M3emParams& params) {
  core::ByteWriter out;
  out.bytes({kCheckpointMagic, 4});
  out.u32(kCheckpointVersion);
  const auto named = params.named();
  out.u32(static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, t] : named) {
    out.str(name);
    out.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) out.u64(d);
    for (double v : t.data()) out.f64(v);
  }
  return out.buffer();
}

/// Decodes into parameters shaped for `config`. Every record must match an
/// expected name and shape, and every expected tensor must be present.
inline M3emParams decode_checkpoint(std::vector<char> bytes, const ModelConfig& config,
                                    const std::string& source = "checkpoint") {
  core::ByteReader in(std::move(bytes), source);
  in.need(4);
  if (in.bytes(4) != std::string(kCheckpointMagic, 4))
    throw core::FormatError(core::FormatErrorKind::kMagic, source + ": not an M3EM checkpoint");
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) {
    throw core::FormatError(core::FormatErrorKind::kVersion,
                            source + ": version " + std::to_string(version) + ", expected " +
                                std::to_string(kCheckpointVersion));
  }

  M3emParams params = make_params(config, 0);
  std::map<std::string, Tensor> expected;
  for (auto& [name, t] : params.named()) expected.emplace(name, t);

  const std::uint32_t count = in.u32();
  std::map<std::string, bool> seen;
  for (std::uint32_t r = 0; r < count; ++r) {
    const std::string name = in.str();
    auto it = expected.find(name);
    if (it == expected.end())
      throw core::FormatError(core::FormatErrorKind::kRecord, source + ": unknown tensor '" + name + "'");
    if (seen[name])
      throw core::FormatError(core::FormatErrorKind::kRecord, source + ": duplicate tensor '" + name + "'");
    seen[name] = true;
    const std::uint32_t rank = in.u32();
    core::Shape shape(rank);
    for (auto& d : shape) d = in.u64();
    Tensor& target = it->second;
    if (shape != target.shape()) {
      throw core::FormatError(core::FormatErrorKind::kShape,
                              source + ": tensor '" + name + "' has shape " + core::to_string(shape) +
                                  ", config expects " + core::to_string(target.shape()));
    }
    in.need(8 * target.size());
    for (double& v : target.mutable_data()) v = in.f64();
  }
  for (const auto& [name, t] : expected)
    if (!seen.count(name))
      throw core::FormatError(core::FormatErrorKind::kRecord, source + ": missing tensor '" + name + "'");
  if (in.remaining() != 0)
    throw core::FormatError(core::FormatErrorKind::kTruncated,
                            source + ": " + std::to_string(in.remaining()) + " trailing bytes");
  return params;
}

inline void save_checkpoint(const std::filesystem::path& path, const M3emParams& params) {
  core::write_file(path, encode_checkpoint(params));
}

inline M3emParams load_checkpoint(const std::filesystem::path& path, const ModelConfig& config) {
  return decode_checkpoint(core::read_file(path), config, path.string());
}

}  // namespace m3em::model
