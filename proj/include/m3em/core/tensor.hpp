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

#include <cstddef>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace m3em::core {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

// Raised whenever operand shapes do not conform.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline ShapeError shape_error(const std::string& op, const Shape& a,
                              const Shape& b) {
  return ShapeError(op + ": shape mismatch " + to_string(a) + " vs " +
                    to_string(b));
}

/// Dense row-major float64 array with an optional gradient buffer.
///
/// Tensor is a shared handle: copies alias the same storage, which is what
/// lets the tape write gradients back into the tensors a caller holds. Use
/// clone() for an independent copy. Values are treated as immutable once an
/// op has produced them; only parameters are updated in place, and only
/// between steps.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, bool requires_grad = false)
      : impl_(std::make_shared<Impl>()) {
    impl_->data.assign(numel(shape), 0.0);
    impl_->shape = std::move(shape);
    impl_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : impl_(std::make_shared<Impl>()) {
    if (numel(shape) != data.size()) {
      throw ShapeError("Tensor: shape " + to_string(shape) + " needs " +
                       std::to_string(numel(shape)) + " values, got " +
                       std::to_string(data.size()));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor(Shape{1}, {value}, requires_grad);
  }

  static Tensor vector(std::vector<double> values, bool requires_grad = false) {
    Shape shape{values.size()};
    return Tensor(std::move(shape), std::move(values), requires_grad);
  }

  bool defined() const noexcept { return impl_ != nullptr; }

  const Shape& shape() const { return checked().shape; }
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  std::size_t size() const { return defined() ? impl_->data.size() : 0; }

  std::span<const double> data() const { return checked().data; }
  // In-place access for parameter updates and test fixtures.
  std::span<double> mutable_data() { return checked().data; }

  double operator[](std::size_t i) const { return checked().data[i]; }
  double item() const {
    if (size() != 1) {
      throw ShapeError("Tensor::item on tensor of shape " + to_string(shape()));
    }
    return impl_->data[0];
  }

  bool requires_grad() const noexcept { return defined() && impl_->requires_grad; }
  void set_requires_grad(bool on) { checked().requires_grad = on; }

  bool has_grad() const noexcept { return defined() && !impl_->grad.empty(); }
  std::span<const double> grad() const { return checked().grad; }

  // Returns the gradient buffer, allocating zeros on first use. Gradient
  // state belongs to the shared storage, so this is available on const
  // handles.
  std::span<double> grad_buffer() const {
    Impl& impl = checked();
    if (impl.grad.empty()) impl.grad.assign(impl.data.size(), 0.0);
    return impl.grad;
  }

  void zero_grad() const {
    if (defined()) impl_->grad.clear();
  }

  Tensor clone(bool requires_grad = false) const {
    return Tensor(shape(), checked().data, requires_grad);
  }

  bool same_storage(const Tensor& other) const noexcept {
    return impl_ == other.impl_;
  }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
  };

  Impl& checked() const {
    if (!impl_) throw std::logic_error("use of undefined Tensor");
    return *impl_;
  }

  std::shared_ptr<Impl> impl_;
};

}  // namespace m3em::core
