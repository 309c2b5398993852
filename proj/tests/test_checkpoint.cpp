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

#include <cstring>
#include <filesystem>
#include <vector>

#include <gtest/gtest.h>

#include "m3em/harness/gradcheck.hpp"
#include "m3em/model/checkpoint.hpp"

namespace m3em::model {
namespace {

using core::FormatError;
using core::FormatErrorKind;

FormatErrorKind decode_error(const std::vector<char>& bytes, const ModelConfig& cfg) {
  try {
    decode_checkpoint(bytes, cfg);
  } catch (const FormatError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode succeeded on corrupted input";
  return FormatErrorKind::kRecord;
}

ModelConfig config() { return harness::tiny_model_config(); }

TEST(Checkpoint, RoundTripIsBitExact) {
  const M3emParams p = make_params(config(), 42);
  const std::vector<char> bytes = encode_checkpoint(p);
  const M3emParams q = decode_checkpoint(bytes, config());
  const auto a = p.named(), b = q.named();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    ASSERT_EQ(a[i].second.shape(), b[i].second.shape());
    EXPECT_EQ(std::memcmp(a[i].second.data().data(), b[i].second.data().data(),
                          8 * a[i].second.size()),
              0);
    EXPECT_TRUE(b[i].second.requires_grad());
  }
  EXPECT_EQ(encode_checkpoint(q), bytes);
}

TEST(Checkpoint, HeaderLayout) {
  const std::vector<char> bytes = encode_checkpoint(make_params(config(), 1));
  ASSERT_GE(bytes.size(), 12u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "M3EM");
  const unsigned char* u = reinterpret_cast<const unsigned char*>(bytes.data());
  EXPECT_EQ(u[4] | u[5] << 8 | u[6] << 16 | u[7] << 24, 1);
  const std::size_t records = u[8] | u[9] << 8 | u[10] << 16 | u[11] << 24;
  EXPECT_EQ(records, make_params(config(), 1).named().size());
}

TEST(Checkpoint, SaveLoadThroughFile) {
  const auto dir = std::filesystem::temp_directory_path() / "m3em_test_checkpoint";
  std::filesystem::create_directories(dir);
  const auto path = dir / "model.ckpt";
  const M3emParams p = make_params(config(), 3);
  save_checkpoint(path, p);
  EXPECT_EQ(encode_checkpoint(load_checkpoint(path, config())), encode_checkpoint(p));
  EXPECT_THROW(load_checkpoint(dir / "absent.ckpt", config()), core::IoError);
  std::filesystem::remove_all(dir);
}

TEST(Checkpoint, CorruptedMagic) {
  std::vector<char> bytes = encode_checkpoint(make_params(config(), 1));
  bytes[1] = 'X';
  EXPECT_EQ(decode_error(bytes, config()), FormatErrorKind::kMagic);
  EXPECT_EQ(decode_error({'M', '3'}, config()), FormatErrorKind::kTruncated);
}

TEST(Checkpoint, WrongVersion) {
  std::vector<char> bytes = encode_checkpoint(make_params(config(), 1));
  bytes[4] = 2;
  EXPECT_EQ(decode_error(bytes, config()), FormatErrorKind::kVersion);
}

TEST(Checkpoint, TruncatedOrPadded) {
  const std::vector<char> bytes = encode_checkpoint(make_params(config(), 1));
  for (std::size_t keep : {std::size_t{9}, std::size_t{40}, bytes.size() - 1}) {
    EXPECT_EQ(decode_error({bytes.begin(), bytes.begin() + static_cast<long>(keep)}, config()),
              FormatErrorKind::kTruncated)
        << keep;
  }
  std::vector<char> padded = bytes;
  padded.push_back(0);
  EXPECT_EQ(decode_error(padded, config()), FormatErrorKind::kTruncated);
}

TEST(Checkpoint, ShapeMismatchAgainstConfig) {
  const std::vector<char> bytes = encode_checkpoint(make_params(config(), 1));
  ModelConfig other = config();
  other.verb_classes += 1;
  EXPECT_EQ(decode_error(bytes, other), FormatErrorKind::kShape);
}

TEST(Checkpoint, MissingUnknownAndDuplicateRecords) {
  const M3emParams p = make_params(config(), 1);
  auto encode = [](const std::vector<std::pair<std::string, Tensor>>& records) {
    core::ByteWriter out;
    out.bytes({kCheckpointMagic, 4});
    out.u32(kCheckpointVersion);
    out.u32(static_cast<std::uint32_t>(records.size()));
    for (const auto& [name, t] : records) {
      out.str(name);
      out.u32(static_cast<std::uint32_t>(t.rank()));
      for (std::size_t d : t.shape()) out.u64(d);
      for (double v : t.data()) out.f64(v);
    }
    return out.buffer();
  };
  auto records = p.named();
  EXPECT_EQ(encode(records), encode_checkpoint(p));

  auto missing = records;
  missing.pop_back();
  EXPECT_EQ(decode_error(encode(missing), config()), FormatErrorKind::kRecord);

  auto unknown = records;
  unknown.back().first = "disc.extra.w";
  EXPECT_EQ(decode_error(encode(unknown), config()), FormatErrorKind::kRecord);

  auto duplicate = records;
  duplicate.push_back(records.front());
  EXPECT_EQ(decode_error(encode(duplicate), config()), FormatErrorKind::kRecord);
}

TEST(Checkpoint, ErrorMessagesNameTheProblem) {
  std::vector<char> bytes = encode_checkpoint(make_params(config(), 1));
  bytes[0] = 'Q';
  try {
    decode_checkpoint(bytes, config(), "run/a.ckpt");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("run/a.ckpt"), std::string::npos);
  }
}

}  // namespace
}  // namespace m3em::model
