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
#include <functional>
#include <initializer_list>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "m3em/core/tensor.hpp"

namespace m3em::core {

// Dynamic reverse-mode tape over whole-tensor operations.
//
// Each differentiable op appends one node holding its inputs, its output and
// a closure that reads output.grad() and accumulates into the inputs. A tape
// in inference mode records nothing, so ops run as plain forward math.
class Tape {
 public:
  enum class Mode { kRecord, kInference };

  using BackwardFn = std::function<void()>;

  struct Node {
    std::string op;
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };

  explicit Tape(Mode mode = Mode::kRecord) : mode_(mode) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return mode_ == Mode::kRecord; }

  // True when an op over `inputs` must be recorded.
  bool tracks(std::initializer_list<const Tensor*> inputs) const {
    if (!recording()) return false;
    return std::any_of(inputs.begin(), inputs.end(),
                       [](const Tensor* t) { return t->requires_grad(); });
  }

  void record(std::string op, std::vector<Tensor> inputs, Tensor output,
              BackwardFn backward) {
    nodes_.push_back(
        {std::move(op), std::move(inputs), std::move(output), std::move(backward)});
  }

  /// Seeds d(root)/d(root) = 1 and runs every node in reverse order.
  void backward(Tensor root) {
    if (root.size() != 1) {
      throw ShapeError("Tape::backward: root must be scalar, got " +
                       to_string(root.shape()));
    }
    root.grad_buffer()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (!it->output.has_grad()) continue;
      if (it->op == corrupt_op_) {
        run_scaled(*it, corrupt_factor_);
      } else {
        it->backward();
      }
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }
  const std::vector<Node>& nodes() const noexcept { return nodes_; }

  void clear() { nodes_.clear(); }

  // Test hook: scales the upstream gradient entering every node named `op`.
  void corrupt_gradient_of(std::string op, double factor) {
    corrupt_op_ = std::move(op);
    corrupt_factor_ = factor;
  }

 private:
  static void run_scaled(Node& node, double factor) {
    auto g = node.output.grad_buffer();
    std::vector<double> saved(g.begin(), g.end());
    for (double& v : g) v *= factor;
    node.backward();
    std::copy(saved.begin(), saved.end(), g.begin());
  }

  Mode mode_;
  std::vector<Node> nodes_;
  std::string corrupt_op_;
  double corrupt_factor_ = 1.0;
};

}  // namespace m3em::core
