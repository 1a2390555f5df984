#pragma once

// Tape-free reverse-mode differentiation over Tensor values. Each op returns
// a node holding its value plus a closure that pushes the node's gradient
// into its parents. Calling backward() on a scalar node walks the graph in
// reverse topological order.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mdcpc/tensor.hpp"

namespace mdcpc::ag {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";

  // Allocates a zero gradient of the value's shape on first use.
  Tensor& grad_buffer();
};

Var constant(Tensor value);
Var parameter(Tensor value);

// Builds an op node. requires_grad is inherited from the parents.
Var make_node(Tensor value, std::vector<Var> parents, const char* op,
              std::function<void(Node&)> backward_fn);

// Seeds d(root)/d(root) = 1 and accumulates gradients into every reachable
// node that requires them. root must hold a single element.
void backward(const Var& root);

void zero_grad(std::span<const Var> params);

struct ConvOptions {
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

// x: [N,H,W,Cin], weight: [k,k,Cin/groups,Cout], bias: [Cout] or null.
// tap_mask, when given, holds k*k flags; taps with a zero flag are treated as
// zero weights in both passes.
Var conv2d(const Var& x, const Var& weight, const Var& bias, ConvOptions options = {},
           const std::vector<std::uint8_t>* tap_mask = nullptr);

Var add(const Var& a, const Var& b);
Var elu(const Var& x);

// Per-sample normalization over every non-batch element, followed by a
// per-channel (last axis) affine map.
Var layer_norm(const Var& x, const Var& gain, const Var& bias, Real eps = 1e-5);

// [N,H,W,C] -> [N,C]
Var global_avg_pool(const Var& x);

Var max_pool2d(const Var& x, int kernel, int stride, int padding);

// x: [M,K], weight: [K,O], bias: [O] or null -> [M,O]
Var linear(const Var& x, const Var& weight, const Var& bias);

Var rotate(const Var& x, int quarter_turns);
Var concat_channels(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var reshape(const Var& x, std::vector<int> shape);

// Zeros every spatial position (h,w) of an [N,H,W,C] tensor whose keep flag
// (row-major, H*W entries) is zero.
Var mask_positions(const Var& x, const std::vector<std::uint8_t>& keep);

// [N,H,W,C] -> [N*P, C], row n*P + p holds x[n, positions[p]].
Var gather_positions(const Var& x, const std::vector<std::pair<int, int>>& positions);

Var sum(const Var& x);
// Sum of x * probe; probe has the shape of x.
Var dot(const Var& x, const Tensor& probe);

// Mean cross-entropy of row-wise softmax(logits [M,K]) against labels.
Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels);

// While alive, elu's backward rule is deliberately scaled by 1.5 on the
// current thread. Used by the gradient-check mutation test.
class ScopedBackwardFault {
 public:
  ScopedBackwardFault();
  ~ScopedBackwardFault();
  ScopedBackwardFault(const ScopedBackwardFault&) = delete;
  ScopedBackwardFault& operator=(const ScopedBackwardFault&) = delete;

 private:
  bool previous_;
};

}  // namespace mdcpc::ag
