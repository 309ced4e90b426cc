// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#include "msfnet/tensor.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "msfnet/error.h"

namespace msf {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::span<double> TensorImpl::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
  return grad;
}

void require_finite(std::span<const double> values, const std::string& what) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError("non-finite value in " + what);
  }
}

namespace {

void validate_shape(const Shape& shape) {
  for (auto e : shape) {
    if (e <= 0) {
      throw ShapeError("tensor extents must be positive, got " +
                       shape_string(shape));
    }
  }
}

}  // namespace

Tensor make_tensor(Shape shape, std::vector<double> data) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  validate_shape(shape);
  auto n = static_cast<std::size_t>(shape_numel(shape));
  Tensor t = make_tensor(std::move(shape), std::vector<double>(n, value));
  require_finite(t.data(), "Tensor::full");
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  validate_shape(shape);
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw ShapeError("shape " + shape_string(shape) + " needs " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(data.size()));
  }
  require_finite(data, "Tensor::from");
  Tensor t = make_tensor(std::move(shape), std::move(data));
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::int64_t Tensor::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     shape_string(shape()));
  }
  return impl_->shape[static_cast<std::size_t>(axis)];
}

int Tensor::rank() const { return static_cast<int>(impl_->shape.size()); }

std::int64_t Tensor::numel() const {
  return static_cast<std::int64_t>(impl_->data.size());
}

std::span<const double> Tensor::data() const { return impl_->data; }
std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("item() needs a single-element tensor, got " +
                     shape_string(shape()));
  }
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<std::int64_t> index) const {
  if (index.size() != impl_->shape.size()) {
    throw ShapeError("index rank mismatch for " + shape_string(shape()));
  }
  std::int64_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    const auto extent = impl_->shape[axis++];
    if (i < 0 || i >= extent) throw ShapeError("index out of range");
    flat = flat * extent + i;
  }
  return impl_->data[static_cast<std::size_t>(flat)];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
void Tensor::set_requires_grad(bool value) { impl_->requires_grad = value; }
bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::span<const double> Tensor::grad() const { return impl_->grad; }

void Tensor::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  Tensor t = make_tensor(impl_->shape, impl_->data);
  t.set_requires_grad(impl_->requires_grad);
  return t;
}

}  // namespace msf
