#include "mdcpc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

#include "mdcpc/error.hpp"

namespace mdcpc {

std::size_t shape_size(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw GeometryError("negative dimension in shape " + shape_to_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_to_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(std::vector<int> shape, Real fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(std::vector<int> shape, std::vector<Real> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_size(shape_)) {
    throw GeometryError("tensor of shape " + shape_to_string(shape_) + " given " +
                        std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
  if (shape_size(shape) != data_.size()) {
    throw GeometryError("cannot reshape " + shape_string() + " to " + shape_to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const { return shape_to_string(shape_); }

Tensor rotate_spatial(const Tensor& x, int quarter_turns) {
  if (x.rank() != 4) throw GeometryError("rotate_spatial expects NHWC, got " + x.shape_string());
  const int turns = ((quarter_turns % 4) + 4) % 4;
  if (turns == 0) return x;
  const int n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const int oh = (turns % 2) ? w : h;
  const int ow = (turns % 2) ? h : w;
  Tensor out({n, oh, ow, c});
  for (int b = 0; b < n; ++b) {
    for (int i = 0; i < oh; ++i) {
      for (int j = 0; j < ow; ++j) {
        int si = 0, sj = 0;
        switch (turns) {
          case 1: si = h - 1 - j; sj = i; break;          // clockwise
          case 2: si = h - 1 - i; sj = w - 1 - j; break;
          case 3: si = j; sj = w - 1 - i; break;          // counter-clockwise
        }
        const Real* src = &x.data()[((static_cast<std::size_t>(b) * h + si) * w + sj) * c];
        Real* dst = &out.at(b, i, j, 0);
        std::copy(src, src + c, dst);
      }
    }
  }
  return out;
}

}  // namespace mdcpc
