#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace mdcpc {

using Real = double;

// Dense row-major array. Image-like tensors use NHWC layout.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, Real fill = 0.0);
  Tensor(std::vector<int> shape, std::vector<Real> values);

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }
  std::span<Real> values() { return data_; }
  std::span<const Real> values() const { return data_; }
  std::vector<Real>& storage() { return data_; }
  const std::vector<Real>& storage() const { return data_; }

  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }

  // NHWC accessors for rank-4 tensors.
  Real& at(int n, int h, int w, int c) { return data_[offset(n, h, w, c)]; }
  Real at(int n, int h, int w, int c) const { return data_[offset(n, h, w, c)]; }

  // Same storage, new shape; element counts must agree.
  Tensor reshaped(std::vector<int> shape) const;
  void fill(Real v);
  bool all_finite() const;

  std::string shape_string() const;

 private:
  std::size_t offset(int n, int h, int w, int c) const {
    return ((static_cast<std::size_t>(n) * shape_[1] + h) * shape_[2] + w) * shape_[3] + c;
  }

  std::vector<int> shape_;
  std::vector<Real> data_;
};

std::size_t shape_size(const std::vector<int>& shape);
std::string shape_to_string(const std::vector<int>& shape);

// Rotates the spatial axes of an NHWC tensor by quarter_turns * 90 degrees
// clockwise. Negative counts rotate counter-clockwise.
Tensor rotate_spatial(const Tensor& x, int quarter_turns);

}  // namespace mdcpc
