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
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "m3em/core/finite_diff.hpp"
#include "m3em/core/ops.hpp"
#include "m3em/core/random.hpp"
#include "m3em/model/cmc.hpp"
#include "m3em/model/fusion.hpp"
#include "m3em/model/model.hpp"
#include "m3em/model/smr.hpp"

// Tape gradients against central finite differences for every
// differentiable op and for the end-to-end training loss.
namespace m3em::harness {

using core::Tape;
using core::Tensor;

struct GradCheckOptions {
  double eps = 1e-5;
  double rel_tol = 1e-4;
  double abs_floor = 1e-7;
  std::uint64_t seed = 7;
  // Test hook: scale the backward of every tape node with this op name.
  std::string corrupt_op;
  double corrupt_factor = 1.5;
};

struct GradCheckResult {
  std::string op;
  std::size_t checked = 0;     // gradient entries compared
  std::size_t mismatches = 0;
  double max_abs_error = 0.0;
  bool passed() const { return mismatches == 0 && checked > 0; }
};

// Scalar test function of an op: sum_i r_i * y_i with fixed random r.
using OpBuilder = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

namespace detail {

inline Tensor random_tensor(core::Shape shape, core::Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from 0 so ReLU kinks stay out of the eps window.
inline Tensor kink_free_tensor(core::Shape shape, core::Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.mutable_data()) {
    const double mag = rng.uniform(0.05, 1.0);
    v = rng.uniform01() < 0.5 ? -mag : mag;
  }
  return t;
}

inline Tensor project(Tape& tape, const Tensor& y, const Tensor& r) {
  const Tensor flat = core::reshape(tape, y, {y.size()});
  return core::affine(tape, flat, core::reshape(tape, r, {1, r.size()}), Tensor({1}));
}

inline void tally(GradCheckResult& res, std::span<const double> analytic,
                  std::span<const double> numeric, const GradCheckOptions& opt) {
  res.checked += analytic.size();
  for (std::size_t i = 0; i < analytic.size(); ++i)
    res.max_abs_error = std::max(res.max_abs_error, std::abs(analytic[i] - numeric[i]));
  res.mismatches += core::compare_gradients(analytic, numeric, opt.rel_tol, opt.abs_floor).size();
}

}  // namespace detail

/// Checks d(sum r*op(inputs))/d(input) for every input. `numeric_scale`
/// multiplies the finite-difference estimate per input; gradient reversal
/// is the one op whose backward is deliberately not its derivative.
inline GradCheckResult check_op(const std::string& name, const std::vector<Tensor>& inputs,
                                const OpBuilder& build, const GradCheckOptions& opt,
                                const std::vector<double>& numeric_scale = {}) {
  core::Rng rng(opt.seed + std::hash<std::string>{}(name) % 1000);
  Tape probe(Tape::Mode::kInference);
  const Tensor r = detail::random_tensor({build(probe, inputs).size()}, rng);

  std::vector<Tensor> leaves;
  for (const auto& t : inputs) leaves.push_back(t.clone(true));
  Tape tape;
  if (!opt.corrupt_op.empty()) tape.corrupt_gradient_of(opt.corrupt_op, opt.corrupt_factor);
  tape.backward(detail::project(tape, build(tape, leaves), r));

  GradCheckResult res{name};
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto f = [&](const Tensor& x) {
      std::vector<Tensor> args = inputs;
      args[k] = x;
      Tape t(Tape::Mode::kInference);
      return detail::project(t, build(t, args), r).item();
    };
    Tensor numeric = core::finite_diff_grad(f, inputs[k], opt.eps);
    const double factor = k < numeric_scale.size() ? numeric_scale[k] : 1.0;
    for (double& v : numeric.mutable_data()) v *= factor;
    std::vector<double> analytic(inputs[k].size(), 0.0);
    if (leaves[k].has_grad()) std::copy(leaves[k].grad().begin(), leaves[k].grad().end(), analytic.begin());
    detail::tally(res, analytic, numeric.data(), opt);
  }
  return res;
}

/// Small configuration used for the end-to-end check: every input dimension
/// is at most 8.
inline model::ModelConfig tiny_model_config() {
  model::ModelConfig c;
  c.channels = 4;
  c.height = 4;
  c.width = 4;
  c.reduction = 2;
  c.pyramid_levels = 1;
  c.latent = 3;
  c.verb_classes = 3;
  c.noun_classes = 4;
  c.disc_hidden = 5;
  return c;
}

/// Tape gradient of the training objective (one labeled source sample plus
/// one target sample) for every parameter and input feature. The oracle takes
/// finite differences of L_y and L_d separately and combines them the way
/// gradient reversal does: discriminator parameters see lambda_y dL_y + dL_d,
/// everything upstream of the reversal sees lambda_y dL_y - lambda_d dL_d.
inline GradCheckResult check_end_to_end(const model::ModelConfig& config, double lambda_y,
                                        double lambda_d, const GradCheckOptions& opt) {
  core::Rng rng(opt.seed);
  const std::size_t c = config.channels, h = config.height, w = config.width;
  auto make_sample = [&] {
    return model::Sample{detail::random_tensor({c, h, w}, rng),
                         detail::random_tensor({c, h, w}, rng),
                         detail::random_tensor({c}, rng)};
  };
  const model::Sample src = make_sample(), tgt = make_sample();
  const model::M3emParams base = model::make_params(config, opt.seed);
  // Nonzero biases so the check does not sit on the zero-bias special case.
  for (auto [name, t] : base.named())
    if (name.ends_with(".b"))
      for (double& v : t.mutable_data()) v = rng.uniform(-0.3, 0.3);
  const std::uint32_t verb = 1, noun = 2;

  struct Parts {
    Tensor loss_y;
    Tensor loss_d;
  };
  auto parts = [&](Tape& tape, const model::M3emParams& params, const model::Sample& s,
                   const model::Sample& t) {
    const auto out_s = model::model_forward(tape, s, params, config, lambda_d);
    const auto out_t = model::model_forward(tape, t, params, config, lambda_d);
    const Tensor ly = core::add(tape, core::softmax_xent(tape, out_s.fused.verb, verb),
                                core::softmax_xent(tape, out_s.fused.noun, noun));
    const Tensor ld = core::scale(tape,
                                  core::add(tape, core::softmax_xent(tape, out_s.domain_logits, 0),
                                            core::softmax_xent(tape, out_t.domain_logits, 1)),
                                  0.5);
    return Parts{ly, ld};
  };

  model::M3emParams params = base.clone();
  model::Sample s_leaf{src.rgb.clone(true), src.flow.clone(true), src.audio.clone(true)};
  model::Sample t_leaf{tgt.rgb.clone(true), tgt.flow.clone(true), tgt.audio.clone(true)};
  {
    Tape tape;
    if (!opt.corrupt_op.empty()) tape.corrupt_gradient_of(opt.corrupt_op, opt.corrupt_factor);
    const Parts p = parts(tape, params, s_leaf, t_leaf);
    tape.backward(model::combined_loss(tape, p.loss_y, p.loss_d, lambda_y, 1.0));
  }

  GradCheckResult res{"end_to_end[" + std::string(model::to_string(config.ablation)) + "]"};
  // eval(x) -> (L_y, L_d) with x substituted into one slot.
  auto compare = [&](const Tensor& leaf, const Tensor& original, double d_coef, auto&& eval) {
    auto fy = [&](const Tensor& x) { return eval(x).first; };
    auto fd = [&](const Tensor& x) { return eval(x).second; };
    const Tensor gy = core::finite_diff_grad(fy, original, opt.eps);
    const Tensor gd = core::finite_diff_grad(fd, original, opt.eps);
    std::vector<double> expected(gy.size()), analytic(gy.size(), 0.0);
    for (std::size_t i = 0; i < expected.size(); ++i)
      expected[i] = lambda_y * gy[i] + d_coef * gd[i];
    if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());
    detail::tally(res, analytic, expected, opt);
  };

  const auto named = params.named();
  const auto base_named = base.named();
  for (std::size_t k = 0; k < named.size(); ++k) {
    model::M3emParams probe = base.clone();
    Tensor slot = probe.named()[k].second;
    auto eval = [&](const Tensor& x) {
      std::copy(x.data().begin(), x.data().end(), slot.mutable_data().begin());
      Tape t(Tape::Mode::kInference);
      const Parts p = parts(t, probe, src, tgt);
      return std::pair{p.loss_y.item(), p.loss_d.item()};
    };
    const bool discriminator = named[k].first.starts_with("disc.");
    compare(named[k].second, base_named[k].second, discriminator ? 1.0 : -lambda_d, eval);
  }
  const Tensor* leaves[] = {&s_leaf.rgb, &s_leaf.flow, &s_leaf.audio,
                            &t_leaf.rgb, &t_leaf.flow, &t_leaf.audio};
  const Tensor* originals[] = {&src.rgb, &src.flow, &src.audio, &tgt.rgb, &tgt.flow, &tgt.audio};
  for (int k = 0; k < 6; ++k) {
    auto eval = [&](const Tensor& x) {
      model::Sample s = src, t = tgt;
      Tensor* slot[] = {&s.rgb, &s.flow, &s.audio, &t.rgb, &t.flow, &t.audio};
      *slot[k] = x;
      Tape tp(Tape::Mode::kInference);
      const Parts p = parts(tp, base, s, t);
      return std::pair{p.loss_y.item(), p.loss_d.item()};
    };
    compare(*leaves[k], *originals[k], -lambda_d, eval);
  }
  return res;
}

/// One result per differentiable op, then the end-to-end loss for every
/// ablation and both Pearson modes.
inline std::vector<GradCheckResult> run_gradient_suite(const GradCheckOptions& opt = {}) {
  using namespace core;
  core::Rng rng(opt.seed);
  auto rnd = [&](core::Shape s) { return detail::random_tensor(std::move(s), rng); };
  std::vector<GradCheckResult> out;

  out.push_back(check_op("affine", {rnd({5}), rnd({4, 5}), rnd({4})},
                         [](Tape& t, const std::vector<Tensor>& in) { return affine(t, in[0], in[1], in[2]); }, opt));
  out.push_back(check_op("relu", {detail::kink_free_tensor({3, 4}, rng)},
                         [](Tape& t, const std::vector<Tensor>& in) { return relu(t, in[0]); }, opt));
  out.push_back(check_op("sigmoid", {detail::random_tensor({6}, rng, -4.0, 4.0)},
                         [](Tape& t, const std::vector<Tensor>& in) { return sigmoid(t, in[0]); }, opt));
  out.push_back(check_op("global_avg_pool", {rnd({3, 4, 4})},
                         [](Tape& t, const std::vector<Tensor>& in) { return global_avg_pool(t, in[0]); }, opt));
  out.push_back(check_op("conv1x1", {rnd({4, 3, 2}), rnd({5, 4}), rnd({5})},
                         [](Tape& t, const std::vector<Tensor>& in) { return conv1x1(t, in[0], in[1], in[2]); }, opt));
  out.push_back(check_op("downsample2x", {rnd({2, 5, 7})},
                         [](Tape& t, const std::vector<Tensor>& in) { return downsample2x(t, in[0]); }, opt));
  out.push_back(check_op("upsample_to", {rnd({3, 2})},
                         [](Tape& t, const std::vector<Tensor>& in) { return upsample_to(t, in[0], 7, 5); }, opt));
  out.push_back(check_op("concat_channels", {rnd({2, 3, 3}), rnd({3, 3, 3})},
                         [](Tape& t, const std::vector<Tensor>& in) { return concat_channels(t, in[0], in[1]); }, opt));
  out.push_back(check_op("softmax_xent", {rnd({6})},
                         [](Tape& t, const std::vector<Tensor>& in) { return softmax_xent(t, in[0], 4); }, opt));
  out.push_back(check_op("grad_reverse", {rnd({5})},
                         [](Tape& t, const std::vector<Tensor>& in) { return grad_reverse(t, in[0], 3.0); }, opt,
                         {-3.0}));
  out.push_back(check_op("channel_scale", {rnd({4, 3, 3}), rnd({4})},
                         [](Tape& t, const std::vector<Tensor>& in) { return model::channel_scale(t, in[0], in[1]); }, opt));

  // Gates take their weights as inputs so those gradients are checked too.
  auto gate_check = [&](const std::string& name, std::size_t c, std::size_t c_in, std::size_t r,
                        bool self) {
    const std::size_t hidden = c / r;
    return check_op(name, {rnd({self ? c : c_in}), rnd({hidden, self ? c : c_in}), rnd({hidden}),
                           rnd({c, hidden}), rnd({c})},
                    [c, c_in, r, self](Tape& t, const std::vector<Tensor>& in) {
                      model::SmrParams p;
                      p.c = c;
                      p.c_in = c_in;
                      p.r = r;
                      model::GateParams g{{in[1], in[2]}, {in[3], in[4]}};
                      (self ? p.self_gate : p.cross_gate) = g;
                      return self ? model::self_gate(t, in[0], p) : model::cross_gate(t, in[0], p);
                    },
                    opt);
  };
  out.push_back(gate_check("self_gate", 8, 8, 2, true));
  out.push_back(gate_check("cross_gate", 8, 6, 4, false));

  {
    core::Rng init(opt.seed + 1);
    const model::SmrParams p = model::make_smr_params(4, 7, 2, init);
    out.push_back(check_op(
        "smr_forward", {rnd({4, 3, 3}), rnd({3}), rnd({4})},
        [p](Tape& t, const std::vector<Tensor>& in) {
          const std::vector<Tensor> others{in[1], in[2]};
          return model::smr_forward(t, {model::Modality::kRgb, in[0]}, others, p);
        },
        opt));
  }
  for (auto mode : {model::PearsonMode::kCentered, model::PearsonMode::kAsWritten}) {
    out.push_back(check_op("pearson_map[" + std::string(model::to_string(mode)) + "]",
                           {rnd({5, 3, 4}), rnd({5, 3, 4})},
                           [mode](Tape& t, const std::vector<Tensor>& in) {
                             return model::pearson_map(t, in[0], in[1], mode);
                           },
                           opt));
  }
  out.push_back(check_op("consensus_map", {rnd({4, 5, 6}), rnd({4, 5, 6})},
                         [](Tape& t, const std::vector<Tensor>& in) { return model::consensus_map(t, in[0], in[1], 2); }, opt));
  out.push_back(check_op("consensus_pool", {rnd({4, 3, 3}), rnd({3, 3})},
                         [](Tape& t, const std::vector<Tensor>& in) { return model::consensus_pool(t, in[0], in[1]); }, opt));
  out.push_back(check_op("late_fuse", {rnd({5}), rnd({5})},
                         [](Tape& t, const std::vector<Tensor>& in) {
                           return model::late_fuse(t, {in[0], in[0]}, {in[1], in[1]}).verb;
                         },
                         opt));
  out.push_back(check_op("discriminator_forward", {rnd({6}), rnd({4, 6}), rnd({4}), rnd({2, 4}), rnd({2})},
                         [](Tape& t, const std::vector<Tensor>& in) {
                           model::HeadParams h;
                           h.disc_hidden = {in[1], in[2]};
                           h.disc_out = {in[3], in[4]};
                           return model::discriminator_forward(t, in[0], h, 2.0);
                         },
                         opt, {-2.0, 1.0, 1.0, 1.0, 1.0}));
  out.push_back(check_op("combined_loss", {rnd({1}), rnd({1})},
                         [](Tape& t, const std::vector<Tensor>& in) { return model::combined_loss(t, in[0], in[1], 1.0, 3.0); }, opt));

  for (auto ablation : {model::Ablation::kFull, model::Ablation::kSmr, model::Ablation::kCmc,
                        model::Ablation::kBaseline}) {
    model::ModelConfig config = tiny_model_config();
    config.ablation = ablation;
    out.push_back(check_end_to_end(config, 1.0, 1.0, opt));
  }
  {
    model::ModelConfig config = tiny_model_config();
    config.pearson = model::PearsonMode::kAsWritten;
    GradCheckResult r = check_end_to_end(config, 1.0, 3.0, opt);
    r.op = "end_to_end[full,as-written,lambda_d=3]";
    out.push_back(r);
  }
  return out;
}

}  // namespace m3em::harness
