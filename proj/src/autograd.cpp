#include "mdcpc/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "mdcpc/error.hpp"

namespace mdcpc::ag {
namespace {

thread_local bool g_backward_fault = false;

void require_rank(const Tensor& t, int rank, const char* op) {
  if (t.rank() != rank) {
    throw GeometryError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                        t.shape_string());
  }
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.size() != value.size()) grad = Tensor(value.shape());
  return grad;
}

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return n;
}

Var parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return n;
}

Var make_node(Tensor value, std::vector<Var> parents, const char* op,
              std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->op = op;
  n->requires_grad = std::any_of(parents.begin(), parents.end(),
                                 [](const Var& p) { return p && p->requires_grad; });
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return n;
}

void backward(const Var& root) {
  if (root->value.size() != 1) {
    throw GeometryError("backward() needs a scalar root, got " + root->value.shape_string());
  }
  if (!root->requires_grad) return;

  // Iterative post-order DFS.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p && p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() == n->value.size()) n->backward_fn(*n);
  }
}

void zero_grad(std::span<const Var> params) {
  for (const auto& p : params) {
    if (p->grad.size() == p->value.size()) p->grad.fill(0.0);
  }
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, ConvOptions opt,
           const std::vector<std::uint8_t>* tap_mask) {
  const Tensor& xv = x->value;
  const Tensor& wv = weight->value;
  require_rank(xv, 4, "conv2d input");
  require_rank(wv, 4, "conv2d weight");
  const int n = xv.dim(0), h = xv.dim(1), w = xv.dim(2), cin = xv.dim(3);
  const int k = wv.dim(0);
  const int groups = opt.groups;
  if (wv.dim(1) != k) throw GeometryError("conv2d: non-square kernel " + wv.shape_string());
  if (groups < 1 || cin % groups != 0 || wv.dim(3) % groups != 0) {
    throw GeometryError("conv2d: channels not divisible by groups");
  }
  const int cig = cin / groups;
  const int cout = wv.dim(3);
  const int cog = cout / groups;
  if (wv.dim(2) != cig) {
    throw GeometryError("conv2d: weight " + wv.shape_string() + " does not match input " +
                        xv.shape_string());
  }
  if (bias && (bias->value.rank() != 1 || bias->value.dim(0) != cout)) {
    throw GeometryError("conv2d: bias shape " + bias->value.shape_string());
  }
  if (tap_mask && tap_mask->size() != static_cast<std::size_t>(k * k)) {
    throw GeometryError("conv2d: tap mask size mismatch");
  }
  const int s = opt.stride, pad = opt.padding;
  if (s < 1) throw GeometryError("conv2d: stride must be >= 1");
  const int oh = (h + 2 * pad - k) / s + 1;
  const int ow = (w + 2 * pad - k) / s + 1;
  if (oh < 1 || ow < 1) throw GeometryError("conv2d: kernel larger than padded input");

  Tensor out({n, oh, ow, cout});
  const Real* xp = xv.data();
  const Real* wp = wv.data();
  const Real* bp = bias ? bias->value.data() : nullptr;
  auto tap_on = [&](int t) { return !tap_mask || (*tap_mask)[static_cast<std::size_t>(t)]; };

  for (int b = 0; b < n; ++b) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        Real* o = &out.at(b, oy, ox, 0);
        if (bp) std::copy(bp, bp + cout, o);
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * s - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * s - pad + kx;
            if (ix < 0 || ix >= w || !tap_on(ky * k + kx)) continue;
            const Real* xin = xp + ((static_cast<std::size_t>(b) * h + iy) * w + ix) * cin;
            const Real* wtap = wp + static_cast<std::size_t>(ky * k + kx) * cig * cout;
            for (int g = 0; g < groups; ++g) {
              Real* og = o + g * cog;
              for (int ci = 0; ci < cig; ++ci) {
                const Real v = xin[g * cig + ci];
                const Real* wr = wtap + static_cast<std::size_t>(ci) * cout + g * cog;
                for (int co = 0; co < cog; ++co) og[co] += v * wr[co];
              }
            }
          }
        }
      }
    }
  }

  std::vector<std::uint8_t> mask_copy = tap_mask ? *tap_mask : std::vector<std::uint8_t>{};
  return make_node(
      std::move(out), {x, weight, bias}, "conv2d",
      [=, mask = std::move(mask_copy)](Node& self) {
        const Node& xn = *self.parents[0];
        Node& wn = *self.parents[1];
        Node* bn = self.parents[2].get();
        const Real* gout = self.grad.data();
        const Real* xd = xn.value.data();
        const Real* wd = wn.value.data();
        Real* gx = xn.requires_grad ? self.parents[0]->grad_buffer().data() : nullptr;
        Real* gw = wn.requires_grad ? wn.grad_buffer().data() : nullptr;
        Real* gb = (bn && bn->requires_grad) ? bn->grad_buffer().data() : nullptr;
        auto on = [&](int t) { return mask.empty() || mask[static_cast<std::size_t>(t)]; };
        for (int b = 0; b < n; ++b) {
          for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
              const Real* go =
                  gout + ((static_cast<std::size_t>(b) * oh + oy) * ow + ox) * cout;
              if (gb) {
                for (int co = 0; co < cout; ++co) gb[co] += go[co];
              }
              for (int ky = 0; ky < k; ++ky) {
                const int iy = oy * s - pad + ky;
                if (iy < 0 || iy >= h) continue;
                for (int kx = 0; kx < k; ++kx) {
                  const int ix = ox * s - pad + kx;
                  if (ix < 0 || ix >= w || !on(ky * k + kx)) continue;
                  const std::size_t xoff = ((static_cast<std::size_t>(b) * h + iy) * w + ix) * cin;
                  const std::size_t woff = static_cast<std::size_t>(ky * k + kx) * cig * cout;
                  for (int g = 0; g < groups; ++g) {
                    const Real* gog = go + g * cog;
                    for (int ci = 0; ci < cig; ++ci) {
                      const std::size_t wrow = woff + static_cast<std::size_t>(ci) * cout + g * cog;
                      if (gx) {
                        Real acc = 0;
                        const Real* wr = wd + wrow;
                        for (int co = 0; co < cog; ++co) acc += gog[co] * wr[co];
                        gx[xoff + g * cig + ci] += acc;
                      }
                      if (gw) {
                        const Real v = xd[xoff + g * cig + ci];
                        Real* gwr = gw + wrow;
                        for (int co = 0; co < cog; ++co) gwr[co] += v * gog[co];
                      }
                    }
                  }
                }
              }
            }
          }
        }
      });
}

Var add(const Var& a, const Var& b) {
  if (a->value.shape() != b->value.shape()) {
    throw GeometryError("add: shape mismatch " + a->value.shape_string() + " vs " +
                        b->value.shape_string());
  }
  Tensor out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
  return make_node(std::move(out), {a, b}, "add", [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      Tensor& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var elu(const Var& x) {
  Tensor out = x->value;
  for (auto& v : out.storage()) v = v > 0 ? v : std::expm1(v);
  return make_node(std::move(out), {x}, "elu", [](Node& self) {
    Node& xn = *self.parents[0];
    Tensor& g = xn.grad_buffer();
    const Real scale = g_backward_fault ? 1.5 : 1.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Real d = xn.value[i] > 0 ? 1.0 : self.value[i] + 1.0;
      g[i] += scale * d * self.grad[i];
    }
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, Real eps) {
  const Tensor& xv = x->value;
  if (xv.rank() < 2) throw GeometryError("layer_norm: need a batch axis");
  const int n = xv.dim(0);
  const int c = xv.dim(xv.rank() - 1);
  if (gain->value.size() != static_cast<std::size_t>(c) ||
      bias->value.size() != static_cast<std::size_t>(c)) {
    throw GeometryError("layer_norm: affine parameters do not match channel count");
  }
  const std::size_t m = xv.size() / static_cast<std::size_t>(n);
  Tensor out(xv.shape());
  Tensor xhat(xv.shape());
  std::vector<Real> inv_std(static_cast<std::size_t>(n));
  for (int b = 0; b < n; ++b) {
    const Real* xs = xv.data() + b * m;
    Real mean = 0;
    for (std::size_t i = 0; i < m; ++i) mean += xs[i];
    mean /= static_cast<Real>(m);
    Real var = 0;
    for (std::size_t i = 0; i < m; ++i) var += (xs[i] - mean) * (xs[i] - mean);
    var /= static_cast<Real>(m);
    const Real is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(b)] = is;
    for (std::size_t i = 0; i < m; ++i) {
      const Real xh = (xs[i] - mean) * is;
      xhat[b * m + i] = xh;
      const std::size_t ch = i % static_cast<std::size_t>(c);
      out[b * m + i] = xh * gain->value[ch] + bias->value[ch];
    }
  }
  return make_node(
      std::move(out), {x, gain, bias}, "layer_norm",
      [n, c, m, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        Node& xn = *self.parents[0];
        Node& gn = *self.parents[1];
        Node& bn = *self.parents[2];
        std::vector<Real> dxhat(m);
        for (int b = 0; b < n; ++b) {
          const Real* gy = self.grad.data() + b * m;
          const Real* xh = xhat.data() + b * m;
          Real mean_d = 0, mean_dx = 0;
          for (std::size_t i = 0; i < m; ++i) {
            const std::size_t ch = i % static_cast<std::size_t>(c);
            if (gn.requires_grad) gn.grad_buffer()[ch] += gy[i] * xh[i];
            if (bn.requires_grad) bn.grad_buffer()[ch] += gy[i];
            dxhat[i] = gy[i] * gn.value[ch];
            mean_d += dxhat[i];
            mean_dx += dxhat[i] * xh[i];
          }
          if (!xn.requires_grad) continue;
          mean_d /= static_cast<Real>(m);
          mean_dx /= static_cast<Real>(m);
          Real* gx = xn.grad_buffer().data() + b * m;
          const Real is = inv_std[static_cast<std::size_t>(b)];
          for (std::size_t i = 0; i < m; ++i) gx[i] += is * (dxhat[i] - mean_d - xh[i] * mean_dx);
        }
      });
}

Var global_avg_pool(const Var& x) {
  const Tensor& xv = x->value;
  require_rank(xv, 4, "global_avg_pool");
  const int n = xv.dim(0), hw = xv.dim(1) * xv.dim(2), c = xv.dim(3);
  Tensor out({n, c});
  for (int b = 0; b < n; ++b) {
    for (int p = 0; p < hw; ++p) {
      const Real* src = xv.data() + (static_cast<std::size_t>(b) * hw + p) * c;
      for (int ch = 0; ch < c; ++ch) out[static_cast<std::size_t>(b) * c + ch] += src[ch];
    }
  }
  for (auto& v : out.storage()) v /= hw;
  return make_node(std::move(out), {x}, "global_avg_pool", [n, hw, c](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (int b = 0; b < n; ++b) {
      const Real* go = self.grad.data() + static_cast<std::size_t>(b) * c;
      for (int p = 0; p < hw; ++p) {
        Real* dst = g.data() + (static_cast<std::size_t>(b) * hw + p) * c;
        for (int ch = 0; ch < c; ++ch) dst[ch] += go[ch] / hw;
      }
    }
  });
}

Var max_pool2d(const Var& x, int kernel, int stride, int padding) {
  const Tensor& xv = x->value;
  require_rank(xv, 4, "max_pool2d");
  const int n = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
  const int oh = (h + 2 * padding - kernel) / stride + 1;
  const int ow = (w + 2 * padding - kernel) / stride + 1;
  if (oh < 1 || ow < 1) throw GeometryError("max_pool2d: window larger than input");
  Tensor out({n, oh, ow, c});
  std::vector<std::size_t> arg(out.size());
  for (int b = 0; b < n; ++b) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        for (int ch = 0; ch < c; ++ch) {
          Real best = -std::numeric_limits<Real>::infinity();
          std::size_t best_i = 0;
          for (int ky = 0; ky < kernel; ++ky) {
            const int iy = oy * stride - padding + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < kernel; ++kx) {
              const int ix = ox * stride - padding + kx;
              if (ix < 0 || ix >= w) continue;
              const std::size_t i = ((static_cast<std::size_t>(b) * h + iy) * w + ix) * c + ch;
              if (xv[i] > best) {
                best = xv[i];
                best_i = i;
              }
            }
          }
          const std::size_t o = ((static_cast<std::size_t>(b) * oh + oy) * ow + ox) * c + ch;
          out[o] = best;
          arg[o] = best_i;
        }
      }
    }
  }
  return make_node(std::move(out), {x}, "max_pool2d", [arg = std::move(arg)](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < arg.size(); ++o) g[arg[o]] += self.grad[o];
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& xv = x->value;
  const Tensor& wv = weight->value;
  require_rank(xv, 2, "linear input");
  require_rank(wv, 2, "linear weight");
  const int m = xv.dim(0), k = xv.dim(1), o = wv.dim(1);
  if (wv.dim(0) != k) {
    throw GeometryError("linear: weight " + wv.shape_string() + " vs input " + xv.shape_string());
  }
  if (bias && bias->value.size() != static_cast<std::size_t>(o)) {
    throw GeometryError("linear: bias size mismatch");
  }
  Tensor out({m, o});
  for (int r = 0; r < m; ++r) {
    Real* dst = out.data() + static_cast<std::size_t>(r) * o;
    if (bias) std::copy(bias->value.data(), bias->value.data() + o, dst);
    const Real* xr = xv.data() + static_cast<std::size_t>(r) * k;
    for (int i = 0; i < k; ++i) {
      const Real v = xr[i];
      const Real* wr = wv.data() + static_cast<std::size_t>(i) * o;
      for (int j = 0; j < o; ++j) dst[j] += v * wr[j];
    }
  }
  return make_node(std::move(out), {x, weight, bias}, "linear", [m, k, o](Node& self) {
    Node& xn = *self.parents[0];
    Node& wn = *self.parents[1];
    Node* bn = self.parents[2].get();
    for (int r = 0; r < m; ++r) {
      const Real* go = self.grad.data() + static_cast<std::size_t>(r) * o;
      const Real* xr = xn.value.data() + static_cast<std::size_t>(r) * k;
      if (bn && bn->requires_grad) {
        Real* gb = bn->grad_buffer().data();
        for (int j = 0; j < o; ++j) gb[j] += go[j];
      }
      for (int i = 0; i < k; ++i) {
        const Real* wr = wn.value.data() + static_cast<std::size_t>(i) * o;
        if (xn.requires_grad) {
          Real acc = 0;
          for (int j = 0; j < o; ++j) acc += go[j] * wr[j];
          xn.grad_buffer()[static_cast<std::size_t>(r) * k + i] += acc;
        }
        if (wn.requires_grad) {
          Real* gw = wn.grad_buffer().data() + static_cast<std::size_t>(i) * o;
          for (int j = 0; j < o; ++j) gw[j] += xr[i] * go[j];
        }
      }
    }
  });
}

Var rotate(const Var& x, int quarter_turns) {
  return make_node(rotate_spatial(x->value, quarter_turns), {x}, "rotate",
                   [quarter_turns](Node& self) {
                     Tensor back = rotate_spatial(self.grad, -quarter_turns);
                     Tensor& g = self.parents[0]->grad_buffer();
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] += back[i];
                   });
}

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw GeometryError("concat_channels: nothing to concatenate");
  const Tensor& first = parts.front()->value;
  require_rank(first, 4, "concat_channels");
  std::vector<int> channels;
  int total = 0;
  for (const auto& p : parts) {
    const Tensor& v = p->value;
    if (v.rank() != 4 || v.dim(0) != first.dim(0) || v.dim(1) != first.dim(1) ||
        v.dim(2) != first.dim(2)) {
      throw GeometryError("concat_channels: spatial shape mismatch");
    }
    channels.push_back(v.dim(3));
    total += v.dim(3);
  }
  const std::size_t positions = first.size() / static_cast<std::size_t>(first.dim(3));
  Tensor out({first.dim(0), first.dim(1), first.dim(2), total});
  int offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const int c = channels[k];
    const Real* src = parts[k]->value.data();
    for (std::size_t p = 0; p < positions; ++p) {
      std::copy(src + p * c, src + (p + 1) * c, out.data() + p * total + offset);
    }
    offset += c;
  }
  return make_node(std::move(out), parts, "concat_channels",
                   [channels, total, positions](Node& self) {
                     int off = 0;
                     for (std::size_t k = 0; k < self.parents.size(); ++k) {
                       const int c = channels[k];
                       Node& pn = *self.parents[k];
                       if (pn.requires_grad) {
                         Real* g = pn.grad_buffer().data();
                         for (std::size_t p = 0; p < positions; ++p) {
                           const Real* src = self.grad.data() + p * total + off;
                           for (int ch = 0; ch < c; ++ch) g[p * c + ch] += src[ch];
                         }
                       }
                       off += c;
                     }
                   });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw GeometryError("concat_rows: nothing to concatenate");
  const int cols = parts.front()->value.dim(1);
  int rows = 0;
  for (const auto& p : parts) {
    require_rank(p->value, 2, "concat_rows");
    if (p->value.dim(1) != cols) throw GeometryError("concat_rows: column mismatch");
    rows += p->value.dim(0);
  }
  Tensor out({rows, cols});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p->value.data(), p->value.data() + p->value.size(), out.data() + off);
    off += p->value.size();
  }
  return make_node(std::move(out), parts, "concat_rows", [](Node& self) {
    std::size_t off = 0;
    for (auto& p : self.parents) {
      const std::size_t len = p->value.size();
      if (p->requires_grad) {
        Tensor& g = p->grad_buffer();
        for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[off + i];
      }
      off += len;
    }
  });
}

Var reshape(const Var& x, std::vector<int> shape) {
  return make_node(x->value.reshaped(std::move(shape)), {x}, "reshape", [](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var mask_positions(const Var& x, const std::vector<std::uint8_t>& keep) {
  const Tensor& xv = x->value;
  require_rank(xv, 4, "mask_positions");
  const int n = xv.dim(0), hw = xv.dim(1) * xv.dim(2), c = xv.dim(3);
  if (keep.size() != static_cast<std::size_t>(hw)) {
    throw GeometryError("mask_positions: mask has " + std::to_string(keep.size()) +
                        " entries for a grid of " + std::to_string(hw));
  }
  Tensor out = xv;
  for (int b = 0; b < n; ++b) {
    for (int p = 0; p < hw; ++p) {
      if (keep[static_cast<std::size_t>(p)]) continue;
      Real* dst = out.data() + (static_cast<std::size_t>(b) * hw + p) * c;
      std::fill(dst, dst + c, 0.0);
    }
  }
  return make_node(std::move(out), {x}, "mask_positions", [keep, n, hw, c](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (int b = 0; b < n; ++b) {
      for (int p = 0; p < hw; ++p) {
        if (!keep[static_cast<std::size_t>(p)]) continue;
        const std::size_t off = (static_cast<std::size_t>(b) * hw + p) * c;
        for (int ch = 0; ch < c; ++ch) g[off + ch] += self.grad[off + ch];
      }
    }
  });
}

Var gather_positions(const Var& x, const std::vector<std::pair<int, int>>& positions) {
  const Tensor& xv = x->value;
  require_rank(xv, 4, "gather_positions");
  const int n = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
  const int np = static_cast<int>(positions.size());
  std::vector<std::size_t> src_offsets;
  src_offsets.reserve(static_cast<std::size_t>(n) * np);
  for (int b = 0; b < n; ++b) {
    for (const auto& [i, j] : positions) {
      if (i < 0 || i >= h || j < 0 || j >= w) {
        throw GeometryError("gather_positions: position outside grid");
      }
      src_offsets.push_back(((static_cast<std::size_t>(b) * h + i) * w + j) * c);
    }
  }
  Tensor out({n * np, c});
  for (std::size_t r = 0; r < src_offsets.size(); ++r) {
    std::copy(xv.data() + src_offsets[r], xv.data() + src_offsets[r] + c, out.data() + r * c);
  }
  return make_node(std::move(out), {x}, "gather_positions",
                   [src_offsets = std::move(src_offsets), c](Node& self) {
                     Tensor& g = self.parents[0]->grad_buffer();
                     for (std::size_t r = 0; r < src_offsets.size(); ++r) {
                       for (int ch = 0; ch < c; ++ch) {
                         g[src_offsets[r] + ch] += self.grad[r * c + ch];
                       }
                     }
                   });
}

Var sum(const Var& x) {
  Real total = 0;
  for (Real v : x->value.storage()) total += v;
  return make_node(Tensor({1}, {total}), {x}, "sum", [](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
  });
}

Var dot(const Var& x, const Tensor& probe) {
  if (probe.size() != x->value.size()) throw GeometryError("dot: probe size mismatch");
  Real total = 0;
  for (std::size_t i = 0; i < probe.size(); ++i) total += x->value[i] * probe[i];
  return make_node(Tensor({1}, {total}), {x}, "dot", [probe](Node& self) {
    Tensor& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * probe[i];
  });
}

Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels) {
  const Tensor& lv = logits->value;
  require_rank(lv, 2, "softmax_cross_entropy");
  const int m = lv.dim(0), k = lv.dim(1);
  if (labels.size() != static_cast<std::size_t>(m)) {
    throw GeometryError("softmax_cross_entropy: label count mismatch");
  }
  Tensor probs({m, k});
  Real total = 0;
  for (int r = 0; r < m; ++r) {
    const Real* row = lv.data() + static_cast<std::size_t>(r) * k;
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= k) throw InvalidArgument("softmax_cross_entropy: label out of range");
    const Real mx = *std::max_element(row, row + k);
    Real z = 0;
    for (int j = 0; j < k; ++j) z += std::exp(row[j] - mx);
    const Real lse = mx + std::log(z);
    for (int j = 0; j < k; ++j) probs[static_cast<std::size_t>(r) * k + j] = std::exp(row[j] - lse);
    total += lse - row[y];
  }
  if (!std::isfinite(total)) throw NumericError("softmax_cross_entropy: non-finite loss");
  return make_node(Tensor({1}, {total / m}), {logits}, "softmax_cross_entropy",
                   [probs = std::move(probs), labels, m, k](Node& self) {
                     Tensor& g = self.parents[0]->grad_buffer();
                     const Real scale = self.grad[0] / m;
                     for (int r = 0; r < m; ++r) {
                       for (int j = 0; j < k; ++j) {
                         const std::size_t i = static_cast<std::size_t>(r) * k + j;
                         const Real target = (labels[static_cast<std::size_t>(r)] == j) ? 1.0 : 0.0;
                         g[i] += scale * (probs[i] - target);
                       }
                     }
                   });
}

ScopedBackwardFault::ScopedBackwardFault() : previous_(g_backward_fault) {
  g_backward_fault = true;
}

ScopedBackwardFault::~ScopedBackwardFault() { g_backward_fault = previous_; }

}  // namespace mdcpc::ag
