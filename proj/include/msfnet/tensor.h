// Copyright 2026 The msfnet Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MSFNET_TENSOR_H_
#define MSFNET_TENSOR_H_

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace msf {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Storage behind a Tensor handle. `grad` stays empty until a backward pass
/// writes into it.
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;

  /// Returns the gradient buffer, zero-filling it on first use.
  std::span<double> grad_buffer();
};

/// Dense row-major f64 array with optional gradient tracking.
///
/// A Tensor is a cheap handle: copies share storage, the way parameters are
/// shared between the model and the optimizer. Use clone() for a deep copy.
/// Feature maps use channel-first layout [C x H x W].
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  /// Throws ShapeError when the data length disagrees with the shape and
  /// NumericError when any value is not finite.
  static Tensor from(Shape shape, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t dim(int axis) const;
  int rank() const;
  std::int64_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::int64_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Deep copy of the values; the copy is a fresh leaf.
  Tensor clone() const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& shared() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  friend Tensor make_tensor(Shape shape, std::vector<double> data);

  std::shared_ptr<TensorImpl> impl_;
};

/// Wraps already-validated storage without the finiteness scan.
Tensor make_tensor(Shape shape, std::vector<double> data);

/// Throws NumericError naming `what` if any value is NaN or infinite.
void require_finite(std::span<const double> values, const std::string& what);

}  // namespace msf

#endif  // MSFNET_TENSOR_H_
