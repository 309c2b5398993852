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

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "m3em/model/fusion.hpp"
#include "m3em/synth/feature_file.hpp"
#include "m3em/synth/generate.hpp"

namespace m3em::synth {
namespace {

using core::FormatError;
using core::FormatErrorKind;

SyntheticDatasetSpec small_spec(std::uint64_t seed = 1) {
  SyntheticDatasetSpec s;
  s.seed = seed;
  s.n_source = 60;
  s.n_target = 40;
  return s;
}

const Tensor& modality_of(const model::Sample& s, std::size_t m) {
  return m == 0 ? s.rgb : m == 1 ? s.flow : s.audio;
}

// Spatial mean per channel (audio: the value itself).
std::vector<double> pooled(const Tensor& t) {
  const std::size_t c = t.dim(0), hw = t.size() / c;
  std::vector<double> out(c, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t p = 0; p < hw; ++p) out[ch] += t[ch * hw + p];
    out[ch] /= static_cast<double>(hw);
  }
  return out;
}

struct Moments {
  std::vector<double> mean, var;
};

Moments channel_moments(const Split& split, std::size_t m) {
  const std::size_t c = modality_of(split.samples[0], m).dim(0);
  Moments out{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
  const double n = static_cast<double>(split.size());
  for (const auto& s : split.samples) {
    const auto v = pooled(modality_of(s, m));
    for (std::size_t ch = 0; ch < c; ++ch) out.mean[ch] += v[ch] / n;
  }
  for (const auto& s : split.samples) {
    const auto v = pooled(modality_of(s, m));
    for (std::size_t ch = 0; ch < c; ++ch) out.var[ch] += (v[ch] - out.mean[ch]) * (v[ch] - out.mean[ch]) / (n - 1);
  }
  return out;
}

// Per channel: |mean_s - mean_t| in units of the standard error of the difference.
std::vector<double> mean_shift_z(const Dataset& ds, std::size_t m) {
  const Moments a = channel_moments(ds.source, m), b = channel_moments(ds.target, m);
  std::vector<double> z;
  for (std::size_t ch = 0; ch < a.mean.size(); ++ch) {
    const double se = std::sqrt(a.var[ch] / ds.source.size() + b.var[ch] / ds.target.size());
    z.push_back(std::abs(a.mean[ch] - b.mean[ch]) / se);
  }
  return z;
}

TEST(Generate, ShapesLabelsAndDeterminism) {
  const SyntheticDatasetSpec spec = small_spec();
  const Dataset a = generate(spec), b = generate(spec);
  ASSERT_EQ(a.source.size(), 60u);
  ASSERT_EQ(a.target.size(), 40u);
  EXPECT_EQ(a.source.domain, Domain::kSource);
  EXPECT_EQ(a.target.domain, Domain::kTarget);
  EXPECT_EQ(a.source.samples[0].rgb.shape(), (core::Shape{16, 8, 8}));
  EXPECT_EQ(a.source.samples[0].audio.shape(), (core::Shape{16}));
  for (Modality m : model::kModalityOrder) {
    EXPECT_EQ(encode_feature_file(to_feature_file(a.source, m)),
              encode_feature_file(to_feature_file(b.source, m)));
    EXPECT_EQ(encode_feature_file(to_feature_file(a.target, m)),
              encode_feature_file(to_feature_file(b.target, m)));
  }
  const Dataset c = generate(small_spec(2));
  EXPECT_NE(encode_feature_file(to_feature_file(a.source, Modality::kRgb)),
            encode_feature_file(to_feature_file(c.source, Modality::kRgb)));
}

TEST(Generate, LabelPairsAreUniform) {
  SyntheticDatasetSpec spec = small_spec();
  spec.n_source = 5000;
  spec.n_target = 0;
  spec.snr = std::numeric_limits<double>::infinity();
  const Dataset ds = generate(spec);
  std::vector<int> counts(25, 0);
  for (const Label& y : ds.source.labels) ++counts[y.verb * 5 + y.noun];
  const double expected = 5000.0 / 25.0, sd = std::sqrt(5000.0 * (1.0 / 25) * (24.0 / 25));
  for (int n : counts) EXPECT_LE(std::abs(n - expected), 4.0 * sd);
}

TEST(Generate, NullShiftMatchesSourceWithinThreeSigma) {
  SyntheticDatasetSpec spec = small_spec(3);
  spec.n_source = spec.n_target = 1000;
  spec.shift_bias = 0.0;
  spec.shift_noise = 1.0;
  const Dataset ds = generate(spec);
  for (std::size_t m = 0; m < 3; ++m)
    for (double z : mean_shift_z(ds, m)) EXPECT_LT(z, 3.0);
}

TEST(Generate, DefaultShiftMatchesPlantedOffsets) {
  SyntheticDatasetSpec spec = small_spec(3);
  spec.n_source = spec.n_target = 1000;
  const Dataset ds = generate(spec);
  const PlantedStructure planted = planted_structure(spec);
  for (std::size_t m = 0; m < 3; ++m) {
    const Moments a = channel_moments(ds.source, m), b = channel_moments(ds.target, m);
    for (std::size_t ch = 0; ch < spec.channels; ++ch) {
      const double offset = planted.target_offset[m][ch];
      const bool informative = std::count(spec.informative[m].begin(), spec.informative[m].end(), ch) > 0;
      EXPECT_EQ(offset == 0.0, informative);
      EXPECT_EQ(std::abs(offset), informative ? 0.0 : spec.shift_bias);
      const double se = std::sqrt(a.var[ch] / 1000 + b.var[ch] / 1000);
      EXPECT_LT(std::abs(b.mean[ch] - a.mean[ch] - offset), 3.5 * se)
          << "modality " << m << " channel " << ch;
      // Spatial pooling makes the offset plainly visible on RGB and Flow.
      if (m < 2 && !informative) {
        EXPECT_GT(std::abs(offset) / se, 5.0);
      }
      if (!informative) {
        EXPECT_GT(b.var[ch], 2.0 * a.var[ch]);
      }
    }
  }
}

TEST(Generate, NoiselessSignalSitsInSharedRegion) {
  SyntheticDatasetSpec spec = small_spec();
  spec.snr = std::numeric_limits<double>::infinity();
  const Dataset ds = generate(spec);
  const PlantedStructure planted = planted_structure(spec);
  for (std::size_t i = 0; i < ds.source.size(); ++i) {
    const Tensor& rgb = ds.source.samples[i].rgb;
    const auto centroid = planted.centroid(0, ds.source.labels[i]);
    for (std::size_t k = 0; k < spec.informative[0].size(); ++k) {
      const std::size_t ch = spec.informative[0][k];
      for (std::size_t p = 0; p < 64; ++p) {
        const bool inside = spec.shared_region.contains(p / 8, p % 8);
        EXPECT_EQ(rgb[ch * 64 + p], inside ? centroid[k] : 0.0);
      }
    }
    EXPECT_EQ(rgb[15 * 64], 0.0);  // non-informative channel, source, no noise
  }
}

// With no noise, matching the informative-channel region means against the
// planted centroids recovers every label in both domains.
TEST(Generate, NoiselessNearestCentroidIsPerfect) {
  SyntheticDatasetSpec spec = small_spec(4);
  spec.snr = std::numeric_limits<double>::infinity();
  const Dataset ds = generate(spec);
  const PlantedStructure planted = planted_structure(spec);
  const Region& r = spec.shared_region;
  const double area = static_cast<double>((r.i1 - r.i0) * (r.j1 - r.j0));
  for (const Split* split : {&ds.source, &ds.target}) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < split->size(); ++i) {
      std::vector<double> x;
      for (std::size_t m = 0; m < 3; ++m) {
        const Tensor& t = modality_of(split->samples[i], m);
        for (std::size_t ch : spec.informative[m]) {
          if (m == 2) {
            x.push_back(t[ch]);
            continue;
          }
          double acc = 0.0;
          for (std::size_t a = r.i0; a < r.i1; ++a)
            for (std::size_t b = r.j0; b < r.j1; ++b) acc += t[(ch * 8 + a) * 8 + b];
          x.push_back(acc / area);
        }
      }
      double best = std::numeric_limits<double>::infinity();
      Label arg;
      for (std::uint32_t v = 0; v < 5; ++v) {
        for (std::uint32_t n = 0; n < 5; ++n) {
          std::vector<double> c;
          for (std::size_t m = 0; m < 3; ++m) {
            const auto part = planted.centroid(m, {v, n});
            c.insert(c.end(), part.begin(), part.end());
          }
          double d = 0.0;
          for (std::size_t j = 0; j < c.size(); ++j) d += (x[j] - c[j]) * (x[j] - c[j]);
          if (d < best) {
            best = d;
            arg = {v, n};
          }
        }
      }
      correct += arg == split->labels[i];
    }
    EXPECT_EQ(correct, split->size());
  }
}

// Softmax regression on pooled features, trained on source only.
double probe_gap(std::uint64_t seed) {
  SyntheticDatasetSpec spec;
  spec.seed = seed;
  const Dataset ds = generate(spec);
  auto features = [](const model::Sample& s) {
    std::vector<double> f;
    for (std::size_t m = 0; m < 3; ++m) {
      const auto p = pooled(modality_of(s, m));
      f.insert(f.end(), p.begin(), p.end());
    }
    f.push_back(1.0);
    return f;
  };
  const std::size_t classes = 25, dim = 49;
  std::vector<std::vector<double>> x;
  for (const auto& s : ds.source.samples) x.push_back(features(s));
  std::vector<double> w(classes * dim, 0.0), g(classes * dim);
  auto logits = [&](const std::vector<double>& f) {
    std::vector<double> z(classes, 0.0);
    for (std::size_t k = 0; k < classes; ++k)
      for (std::size_t d = 0; d < dim; ++d) z[k] += w[k * dim + d] * f[d];
    return z;
  };
  for (int it = 0; it < 200; ++it) {
    std::fill(g.begin(), g.end(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      auto p = model::softmax(logits(x[i]));
      p[ds.source.labels[i].verb * 5 + ds.source.labels[i].noun] -= 1.0;
      for (std::size_t k = 0; k < classes; ++k)
        for (std::size_t d = 0; d < dim; ++d) g[k * dim + d] += p[k] * x[i][d] / x.size();
    }
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= g[j];
  }
  auto accuracy = [&](const Split& split) {
    std::size_t ok = 0;
    for (std::size_t i = 0; i < split.size(); ++i) {
      const auto z = logits(features(split.samples[i]));
      const auto best = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
      ok += best == split.labels[i].verb * 5 + split.labels[i].noun;
    }
    return static_cast<double>(ok) / static_cast<double>(split.size());
  };
  return accuracy(ds.source) - accuracy(ds.target);
}

TEST(Generate, PlantedShiftHurtsALinearProbe) {
  double total = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) total += probe_gap(seed);
  EXPECT_GE(total / 5.0, 0.05);
}

TEST(Spec, Validation) {
  SyntheticDatasetSpec s;
  EXPECT_NO_THROW(s.validate());
  s.informative[1] = {3, 4};
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = SyntheticDatasetSpec{};
  s.informative[2] = {16};
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = SyntheticDatasetSpec{};
  s.shared_region = {2, 2, 9, 6};
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = SyntheticDatasetSpec{};
  s.snr = 0.0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

FormatErrorKind decode_error(const std::vector<char>& bytes) {
  try {
    decode_feature_file(bytes, "test");
  } catch (const FormatError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode succeeded on corrupted input";
  return FormatErrorKind::kRecord;
}

TEST(FeatureFile, RoundTripIsBitExact) {
  const Dataset ds = generate(small_spec());
  for (Modality m : model::kModalityOrder) {
    const FeatureFile f = to_feature_file(ds.target, m);
    const std::vector<char> bytes = encode_feature_file(f);
    const FeatureFile g = decode_feature_file(bytes, "test");
    EXPECT_EQ(f, g);
    EXPECT_EQ(encode_feature_file(g), bytes);
  }
  FeatureFile unlabeled = to_feature_file(ds.source, Modality::kAudio);
  unlabeled.labels.clear();
  EXPECT_EQ(decode_feature_file(encode_feature_file(unlabeled), "test"), unlabeled);
}

TEST(FeatureFile, CorruptedHeaders) {
  const std::vector<char> bytes =
      encode_feature_file(to_feature_file(generate(small_spec()).source, Modality::kFlow));
  std::vector<char> bad = bytes;
  bad[0] = 'X';
  EXPECT_EQ(decode_error(bad), FormatErrorKind::kMagic);
  bad = bytes;
  bad[4] = 7;
  EXPECT_EQ(decode_error(bad), FormatErrorKind::kVersion);
  EXPECT_EQ(decode_error({bytes.begin(), bytes.end() - 3}), FormatErrorKind::kTruncated);
  EXPECT_EQ(decode_error({bytes.begin(), bytes.begin() + 10}), FormatErrorKind::kTruncated);
  bad = bytes;
  bad.push_back(0);
  EXPECT_EQ(decode_error(bad), FormatErrorKind::kTruncated);
}

TEST(FeatureFile, SplitDirectoryRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "m3em_test_features";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const Dataset ds = generate(small_spec());
  const auto paths = write_split(dir, ds.target);
  ASSERT_EQ(paths.size(), 3u);
  EXPECT_EQ(paths[0].filename(), "target_rgb.mmft");
  const Split back = read_split(dir, Domain::kTarget);
  ASSERT_EQ(back.size(), ds.target.size());
  EXPECT_EQ(back.labels, ds.target.labels);
  for (std::size_t i = 0; i < back.size(); ++i)
    for (std::size_t m = 0; m < 3; ++m) {
      const auto a = modality_of(back.samples[i], m).data(), b = modality_of(ds.target.samples[i], m).data();
      EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin(), b.end()));
    }

  // A flow file holding audio is rejected.
  std::filesystem::copy_file(feature_path(dir, Domain::kTarget, Modality::kAudio),
                             feature_path(dir, Domain::kTarget, Modality::kFlow),
                             std::filesystem::copy_options::overwrite_existing);
  EXPECT_THROW(read_split(dir, Domain::kTarget), FormatError);
  EXPECT_THROW(read_split(dir, Domain::kSource), core::IoError);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace m3em::synth
