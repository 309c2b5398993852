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

#include <cmath>
#include <cstdlib>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "m3em/harness/evaluate.hpp"
#include "m3em/harness/gradcheck.hpp"
#include "m3em/harness/train.hpp"
#include "m3em/model/checkpoint.hpp"

namespace m3em::harness {
namespace {

using synth::Dataset;
using synth::Label;
using synth::SyntheticDatasetSpec;

SyntheticDatasetSpec small_spec(std::uint64_t seed) {
  SyntheticDatasetSpec s;
  s.seed = seed;
  s.n_source = 96;
  s.n_target = 64;
  s.channels = 8;
  s.height = s.width = 4;
  s.informative = {std::vector<std::size_t>{0, 1}, {2, 3}, {4, 5}};
  s.shared_region = {1, 1, 3, 3};
  return s;
}

TrainConfig config_for(const SyntheticDatasetSpec& spec, std::size_t epochs) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.seed = spec.seed;
  cfg.model = spec.apply_to(cfg.model);
  cfg.model.reduction = 4;
  return cfg;
}

void expect_invariants(const MetricsReport& r) {
  for (const TopK& t : {r.verb, r.noun, r.action}) {
    EXPECT_GE(t.top1, 0.0);
    EXPECT_LE(t.top5, 1.0);
    EXPECT_GE(t.top5, t.top1);
  }
  EXPECT_LE(r.action.top1, std::min(r.verb.top1, r.noun.top1));
}

TEST(Train, ZeroEpochsKeepsInitialization) {
  const SyntheticDatasetSpec spec = small_spec(1);
  const Dataset ds = synth::generate(spec);
  const TrainConfig cfg = config_for(spec, 0);
  const TrainResult r = train(cfg, ds.source, ds.target);
  EXPECT_TRUE(r.history.empty());
  EXPECT_EQ(model::encode_checkpoint(r.params),
            model::encode_checkpoint(model::make_params(cfg.model, cfg.seed)));
}

TEST(Train, DeterministicAcrossRunsAndThreadCounts) {
  const SyntheticDatasetSpec spec = small_spec(2);
  const Dataset ds = synth::generate(spec);
  const TrainConfig cfg = config_for(spec, 2);
  setenv("M3EM_THREADS", "1", 1);
  const TrainResult a = train(cfg, ds.source, ds.target);
  const TrainResult b = train(cfg, ds.source, ds.target);
  setenv("M3EM_THREADS", "3", 1);
  const TrainResult c = train(cfg, ds.source, ds.target);
  unsetenv("M3EM_THREADS");
  const auto bytes = model::encode_checkpoint(a.params);
  EXPECT_EQ(model::encode_checkpoint(b.params), bytes);
  EXPECT_EQ(model::encode_checkpoint(c.params), bytes);
  EXPECT_EQ(a.history, c.history);
  EXPECT_EQ(to_key_value(evaluate(a.params, cfg.model, ds.target)),
            to_key_value(evaluate(c.params, cfg.model, ds.target)));

  TrainConfig other = cfg;
  other.seed = 3;
  EXPECT_NE(model::encode_checkpoint(train(other, ds.source, ds.target).params), bytes);
}

TEST(Train, ReportsEpochLosses) {
  const SyntheticDatasetSpec spec = small_spec(3);
  const Dataset ds = synth::generate(spec);
  std::vector<std::size_t> seen;
  const TrainResult r = train(config_for(spec, 3), ds.source, ds.target,
                              [&](std::size_t epoch, const EpochLoss& l) {
                                seen.push_back(epoch);
                                EXPECT_TRUE(std::isfinite(l.loss));
                                EXPECT_GT(l.loss_d, 0.0);
                              });
  EXPECT_EQ(seen, (std::vector<std::size_t>{1, 2, 3}));
  EXPECT_EQ(r.history.size(), 3u);
}

TEST(Train, RejectsBadInputs) {
  const SyntheticDatasetSpec spec = small_spec(4);
  Dataset ds = synth::generate(spec);
  const TrainConfig cfg = config_for(spec, 1);
  EXPECT_THROW(train(cfg, synth::Split{}, ds.target), std::invalid_argument);
  synth::Split unlabeled = ds.source;
  unlabeled.labels.clear();
  EXPECT_THROW(train(cfg, unlabeled, ds.target), std::invalid_argument);

  SyntheticDatasetSpec wide = spec;
  wide.height = 5;
  EXPECT_THROW(train(cfg, ds.source, synth::generate(wide).target), core::ShapeError);

  TrainConfig bad = cfg;
  bad.learning_rate = 0.0;
  EXPECT_THROW(train(bad, ds.source, ds.target), std::invalid_argument);
  bad = cfg;
  bad.lambda_d = -1.0;
  EXPECT_THROW(train(bad, ds.source, ds.target), std::invalid_argument);
}

TEST(Train, NanInputAbortsWithDiagnostic) {
  const SyntheticDatasetSpec spec = small_spec(5);
  Dataset ds = synth::generate(spec);
  ds.source.samples[7].audio.mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
  TrainConfig cfg = config_for(spec, 1);
  cfg.batch_size = 200;
  try {
    train(cfg, ds.source, ds.target);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite"), std::string::npos);
  }
}

// lambda_d = 0 and no target data is plain supervised training.
TEST(Train, SupervisedSourceAccuracyRises) {
  int improved = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SyntheticDatasetSpec spec;
    spec.seed = seed;
    spec.n_target = 0;
    const Dataset ds = synth::generate(spec);
    TrainConfig cfg;
    cfg.seed = seed;
    cfg.lambda_d = 0.0;
    cfg.model = spec.apply_to(cfg.model);
    cfg.epochs = 1;
    const double first = evaluate(train(cfg, ds.source, ds.target).params, cfg.model, ds.source).action.top1;
    cfg.epochs = 5;
    const double fifth = evaluate(train(cfg, ds.source, ds.target).params, cfg.model, ds.source).action.top1;
    improved += fifth > first;
  }
  EXPECT_GE(improved, 4);
}

std::vector<Label> labels_of(std::size_t n, std::uint64_t seed) {
  core::Rng rng(seed);
  std::vector<Label> out(n);
  for (Label& y : out) y = {static_cast<std::uint32_t>(rng.index(5)), static_cast<std::uint32_t>(rng.index(5))};
  return out;
}

TEST(Metrics, UniformPredictionsSitAtChance) {
  const std::size_t n = 4000;
  const auto labels = labels_of(n, 1);
  const model::ScoreTensor uniform{core::Tensor::vector(std::vector<double>(5, 0.2)),
                                   core::Tensor::vector(std::vector<double>(5, 0.2))};
  const std::vector<model::ScoreTensor> probs(n, uniform);
  MetricsReport r;
  score_accuracy(probs, labels, r);
  const double sd = std::sqrt(0.2 * 0.8 / n);
  EXPECT_NEAR(r.verb.top1, 0.2, 3 * sd);
  EXPECT_NEAR(r.noun.top1, 0.2, 3 * sd);
  EXPECT_EQ(r.verb.top5, 1.0);
  const double sd_action = std::sqrt(0.2 * 0.8 / n);  // top-5 of 25 pairs
  EXPECT_NEAR(r.action.top5, 0.2, 3 * sd_action);
  expect_invariants(r);
}

TEST(Metrics, OracleScoresArePerfect) {
  const std::size_t n = 300;
  const auto labels = labels_of(n, 2);
  std::vector<model::ScoreTensor> probs;
  for (const Label& y : labels) {
    std::vector<double> v(5, 0.0), w(5, 0.0);
    v[y.verb] = 1.0;
    w[y.noun] = 1.0;
    probs.push_back({core::Tensor::vector(v), core::Tensor::vector(w)});
  }
  MetricsReport r;
  score_accuracy(probs, labels, r);
  for (const TopK& t : {r.verb, r.noun, r.action}) {
    EXPECT_EQ(t.top1, 1.0);
    EXPECT_EQ(t.top5, 1.0);
  }
}

TEST(Metrics, TiesGoToTheLowerIndex) {
  const std::vector<double> s{0.3, 0.5, 0.5, 0.1};
  EXPECT_EQ(rank_of(s, 1), 0u);
  EXPECT_EQ(rank_of(s, 2), 1u);
  EXPECT_EQ(rank_of(s, 0), 2u);
  EXPECT_EQ(rank_of(s, 3), 3u);
}

TEST(Metrics, ActionTopFiveRanksPairsByProduct) {
  // Verb probs favour 0 then 1; noun probs favour 2. The pair (1, 2) is third
  // by product, the pair (4, 4) is last.
  const model::ScoreTensor p{core::Tensor::vector({0.5, 0.3, 0.1, 0.06, 0.04}),
                             core::Tensor::vector({0.1, 0.1, 0.6, 0.1, 0.1})};
  MetricsReport r;
  const std::vector<model::ScoreTensor> probs{p, p};
  const std::vector<Label> labels{{1, 2}, {4, 4}};
  score_accuracy(probs, labels, r);
  EXPECT_EQ(r.action.top5, 0.5);
  EXPECT_EQ(r.action.top1, 0.0);
  EXPECT_THROW(score_accuracy(probs, std::vector<Label>{{1, 2}}, r), std::invalid_argument);
}

TEST(Metrics, RandomModelActionIsProductOfChanceRates) {
  SyntheticDatasetSpec spec;
  const Dataset ds = synth::generate(spec);
  const TrainConfig cfg = config_for(spec, 0);
  for (std::uint64_t seed : {11, 12, 13}) {
    const MetricsReport r = evaluate(model::make_params(cfg.model, seed), cfg.model, ds.target);
    // Untrained heads are independent, so the two hit rates multiply.
    const double n = static_cast<double>(ds.target.size());
    const double product = r.verb.top1 * r.noun.top1;
    EXPECT_NEAR(r.action.top1, product, 3 * std::sqrt(product * (1 - product) / n));
    expect_invariants(r);
  }
}

TEST(Metrics, DomainAccuracy) {
  const std::vector<double> p{0.9, 0.2, 0.5, 0.7};
  EXPECT_EQ(domain_accuracy(p, synth::Domain::kTarget), 0.5);
  EXPECT_EQ(domain_accuracy(p, synth::Domain::kSource), 0.5);
  EXPECT_TRUE(std::isnan(domain_accuracy({}, synth::Domain::kSource)));
}

TEST(Metrics, TextAndJsonFormats) {
  MetricsReport r;
  r.ablation = "full";
  r.split = "target";
  r.samples = 3;
  r.verb = {1.0 / 3.0, 1.0};
  r.history = {{0.5, 0.25, 0.75}};
  const std::string kv = to_key_value(r);
  EXPECT_NE(kv.find("verb_top1=0.3333333333333333\n"), std::string::npos);
  EXPECT_NE(kv.find("domain_accuracy=nan\n"), std::string::npos);
  EXPECT_NE(kv.find("epoch.1.loss=0.75\n"), std::string::npos);
  const auto j = nlohmann::json::parse(to_json(r).dump());
  EXPECT_EQ(j["verb"]["top1"].get<double>(), 1.0 / 3.0);
  EXPECT_TRUE(j["domain_accuracy"].is_null());
  EXPECT_EQ(j["history"][0]["loss_d"].get<double>(), 0.25);
}

TEST(Evaluate, ShapeMismatchAndUnlabeledSplit) {
  const SyntheticDatasetSpec spec = small_spec(6);
  Dataset ds = synth::generate(spec);
  TrainConfig cfg = config_for(spec, 0);
  const model::M3emParams p = model::make_params(cfg.model, 1);
  model::ModelConfig other = cfg.model;
  other.width = 5;
  EXPECT_THROW(evaluate(p, other, ds.source), core::ShapeError);
  ds.target.labels.clear();
  EXPECT_THROW(evaluate(p, cfg.model, ds.target), std::invalid_argument);
}

class EnsembleTest : public ::testing::Test {
 protected:
  void SetUp() override {
    spec_ = small_spec(7);
    ds_ = synth::generate(spec_);
    cfg_ = config_for(spec_, 2);
    for (std::uint64_t s : {1, 2, 3}) {
      cfg_.seed = s;
      models_.push_back(train(cfg_, ds_.source, ds_.target).params);
    }
  }
  SyntheticDatasetSpec spec_;
  Dataset ds_;
  TrainConfig cfg_;
  std::vector<model::M3emParams> models_;
};

TEST_F(EnsembleTest, SingleModelEqualsEvaluate) {
  const MetricsReport plain = evaluate(models_[0], cfg_.model, ds_.target);
  for (double w : {0.5, 1.0, 4.0}) {
    const std::vector<EnsembleMember> one{{models_[0], w}};
    const MetricsReport e = evaluate_ensemble(one, cfg_.model, ds_.target);
    EXPECT_TRUE(e.same_accuracy(plain));
    EXPECT_EQ(e.domain_accuracy, plain.domain_accuracy);
  }
}

TEST_F(EnsembleTest, DuplicatedModelIsIdempotent) {
  const MetricsReport plain = evaluate(models_[1], cfg_.model, ds_.target);
  const std::vector<EnsembleMember> dup{{models_[1], 0.3}, {models_[1], 2.0}, {models_[1], 1.0}};
  EXPECT_TRUE(evaluate_ensemble(dup, cfg_.model, ds_.target).same_accuracy(plain));
}

TEST_F(EnsembleTest, PermutationInvariant) {
  const std::vector<EnsembleMember> a{{models_[0], 1.0}, {models_[1], 0.5}, {models_[2], 2.0}};
  const std::vector<EnsembleMember> b{{models_[2], 2.0}, {models_[0], 1.0}, {models_[1], 0.5}};
  const MetricsReport ra = evaluate_ensemble(a, cfg_.model, ds_.target);
  const MetricsReport rb = evaluate_ensemble(b, cfg_.model, ds_.target);
  EXPECT_EQ(to_key_value(ra), to_key_value(rb));
  expect_invariants(ra);
  EXPECT_THROW(evaluate_ensemble({}, cfg_.model, ds_.target), std::invalid_argument);
}

// Three independently seeded models against the mean of their individual
// action top-1, over five data seeds; the ensemble should win most trials.
TEST(EnsembleGain, BeatsMeanOfMembersInMostTrials) {
  int wins = 0;
  for (std::uint64_t trial = 1; trial <= 5; ++trial) {
    SyntheticDatasetSpec spec;
    spec.seed = trial;
    const Dataset ds = synth::generate(spec);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.model = spec.apply_to(cfg.model);
    std::vector<EnsembleMember> members;
    double mean = 0.0;
    for (std::uint64_t s = 0; s < 3; ++s) {
      cfg.seed = 100 * trial + s;
      members.push_back({train(cfg, ds.source, ds.target).params, 1.0});
      mean += evaluate(members.back().params, cfg.model, ds.target).action.top1 / 3.0;
    }
    wins += evaluate_ensemble(members, cfg.model, ds.target).action.top1 >= mean;
  }
  EXPECT_GE(wins, 3);
}

TEST(GradientSuite, EveryCheckPasses) {
  for (const GradCheckResult& r : run_gradient_suite()) {
    EXPECT_TRUE(r.passed()) << r.op << ": " << r.mismatches << " of " << r.checked
                            << " entries off, max abs error " << r.max_abs_error;
    EXPECT_GT(r.checked, 0u) << r.op;
  }
}

}  // namespace
}  // namespace m3em::harness
