#include "windcomfort/autograd.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "windcomfort/kernels.hpp"

namespace wc {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace ag {
namespace {

thread_local bool g_grad_enabled = true;

namespace kp = wc::kernels::parallel;
using wc::kernels::ConvGeom;
using wc::kernels::Trans;

template <typename T>
bool any_requires_grad(std::initializer_list<const Var<T>*> inputs) {
  for (const Var<T>* v : inputs) {
    if (v->defined() && v->requires_grad()) return true;
  }
  return false;
}

// Wraps a freshly computed value into a Var, wiring the backward closure when needed.
template <typename T>
Var<T> make_result(Tensor<T> value, std::initializer_list<const Var<T>*> inputs,
                   std::function<void(Node<T>&)> backward_fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (g_grad_enabled && any_requires_grad<T>(inputs)) {
    node->requires_grad = true;
    for (const Var<T>* v : inputs) {
      if (v->defined()) node->parents.push_back(v->ptr());
    }
    node->backward_fn = std::move(backward_fn);
  }
  return Var<T>(std::move(node));
}

void require_rank(const Shape& s, int rank, const char* op) {
  require(static_cast<int>(s.size()) == rank, ErrorCode::ShapeError,
          std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(s));
}

// Broadcast bookkeeping for rank <= 4 tensors; b must match a or be 1 per dim.
struct Broadcast {
  std::array<int, 4> dims{1, 1, 1, 1};
  std::array<std::size_t, 4> bstride{0, 0, 0, 0};
};

Broadcast make_broadcast(const Shape& a, const Shape& b, const char* op) {
  require(a.size() == b.size() && a.size() <= 4 && !a.empty(), ErrorCode::ShapeMismatch,
          std::string(op) + ": incompatible shapes " + shape_str(a) + " vs " + shape_str(b));
  Broadcast bc;
  const std::size_t off = 4 - a.size();
  std::array<int, 4> bd{1, 1, 1, 1};
  for (std::size_t i = 0; i < a.size(); ++i) {
    require(b[i] == a[i] || b[i] == 1, ErrorCode::ShapeMismatch,
            std::string(op) + ": cannot broadcast " + shape_str(b) + " to " + shape_str(a));
    bc.dims[off + i] = a[i];
    bd[off + i] = b[i];
  }
  std::size_t stride = 1;
  for (int i = 3; i >= 0; --i) {
    bc.bstride[i] = bd[i] == 1 ? 0 : stride;
    stride *= static_cast<std::size_t>(bd[i]);
  }
  return bc;
}

template <typename F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
  std::size_t ia = 0;
  for (int i0 = 0; i0 < bc.dims[0]; ++i0) {
    for (int i1 = 0; i1 < bc.dims[1]; ++i1) {
      for (int i2 = 0; i2 < bc.dims[2]; ++i2) {
        const std::size_t base = i0 * bc.bstride[0] + i1 * bc.bstride[1] + i2 * bc.bstride[2];
        for (int i3 = 0; i3 < bc.dims[3]; ++i3, ++ia) f(ia, base + i3 * bc.bstride[3]);
      }
    }
  }
}

template <typename T, typename F, typename G>
Var<T> unary(const Var<T>& x, F&& fwd, G&& dfdx_from_xy) {
  Tensor<T> y(x.shape());
  const auto& xv = x.value().data;
  for (std::size_t i = 0; i < y.numel(); ++i) y.data[i] = fwd(xv[i]);
  return make_result<T>(std::move(y), {&x}, [dfdx_from_xy](Node<T>& self) {
    Node<T>& px = *self.parents[0];
    auto& g = px.ensure_grad().data;
    const auto& xs = px.value.data;
    const auto& ys = self.value.data;
    const auto& gs = self.grad.data;
    for (std::size_t i = 0; i < gs.size(); ++i) g[i] += gs[i] * dfdx_from_xy(xs[i], ys[i]);
  });
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
void Var<T>::backward() {
  require(node_ && node_->value.numel() == 1, ErrorCode::ShapeError,
          "backward() requires a single-element root");
  // Iterative post-order DFS gives a topological order. Nodes are held by owning
  // pointers because releasing graph edges below may drop the last other reference.
  std::vector<std::shared_ptr<Node<T>>> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<std::shared_ptr<Node<T>>, std::size_t>> stack;
  stack.emplace_back(node_, 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    const auto n = stack.back().first;
    std::size_t& idx = stack.back().second;
    if (idx < n->parents.size()) {
      const auto& p = n->parents[idx++];
      if (p->requires_grad && !seen.count(p.get())) {
        seen.insert(p.get());
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->ensure_grad().fill(T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = it->get();
    if (n->backward_fn && n->has_grad()) n->backward_fn(*n);
    if (n->backward_fn) {
      // Interior node: release the graph edge and its gradient buffer.
      n->backward_fn = nullptr;
      n->parents.clear();
      n->grad = Tensor<T>();
    }
    it->reset();
  }
}

template <typename T>
Var<T> detach(const Var<T>& x) {
  return Var<T>(x.value(), false);
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad) {
  require_rank(x.shape(), 4, "conv2d");
  require_rank(weight.shape(), 4, "conv2d weight");
  const int n = x.dim(0);
  const int cout = weight.dim(0);
  const int k = weight.dim(2);
  require(weight.dim(1) == x.dim(1) && weight.dim(3) == k, ErrorCode::ShapeMismatch,
          "conv2d: weight " + shape_str(weight.shape()) + " vs input " + shape_str(x.shape()));
  const ConvGeom g{x.dim(1), x.dim(2), x.dim(3), k, stride, pad};
  require(g.out_height() > 0 && g.out_width() > 0, ErrorCode::ShapeError,
          "conv2d: input " + shape_str(x.shape()) + " too small for kernel");
  const int oh = g.out_height();
  const int ow = g.out_width();
  const int rows = g.col_rows();
  const int cols = g.col_cols();
  const std::size_t in_img = static_cast<std::size_t>(g.channels) * g.height * g.width;
  const std::size_t out_img = static_cast<std::size_t>(cout) * oh * ow;

  Tensor<T> y({n, cout, oh, ow});
  std::vector<T> col(static_cast<std::size_t>(rows) * cols);
  const T* w = weight.value().ptr();
  for (int b = 0; b < n; ++b) {
    const T* xin = x.value().ptr() + b * in_img;
    T* yout = y.ptr() + b * out_img;
    if (k == 1 && stride == 1 && pad == 0) {
      kp::gemm<T>(Trans::No, Trans::No, cout, cols, rows, T(1), w, rows, xin, cols, T(0), yout, cols);
    } else {
      kp::im2col<T>(g, xin, col.data());
      kp::gemm<T>(Trans::No, Trans::No, cout, cols, rows, T(1), w, rows, col.data(), cols, T(0),
                  yout, cols);
    }
    if (bias.defined()) {
      const T* bv = bias.value().ptr();
      for (int o = 0; o < cout; ++o) {
        T* plane = yout + static_cast<std::size_t>(o) * cols;
        for (int i = 0; i < cols; ++i) plane[i] += bv[o];
      }
    }
  }
  const bool has_bias = bias.defined();
  return make_result<T>(std::move(y), {&x, &weight, &bias}, [=](Node<T>& self) {
    Node<T>& px = *self.parents[0];
    Node<T>& pw = *self.parents[1];
    Node<T>* pb = has_bias ? self.parents[2].get() : nullptr;
    const bool lowered = !(k == 1 && stride == 1 && pad == 0);
    std::vector<T> colbuf(lowered ? static_cast<std::size_t>(rows) * cols : 0);
    const T* dy_all = self.grad.ptr();
    for (int b = 0; b < n; ++b) {
      const T* dy = dy_all + b * out_img;
      if (pw.requires_grad) {
        const T* src = px.value.ptr() + b * in_img;
        if (lowered) {
          kp::im2col<T>(g, src, colbuf.data());
          src = colbuf.data();
        }
        kp::gemm<T>(Trans::No, Trans::Yes, cout, rows, cols, T(1), dy, cols, src, cols, T(1),
                    pw.ensure_grad().ptr(), rows);
      }
      if (pb && pb->requires_grad) {
        T* gb = pb->ensure_grad().ptr();
        for (int o = 0; o < cout; ++o) {
          T acc = 0;
          const T* plane = dy + static_cast<std::size_t>(o) * cols;
          for (int i = 0; i < cols; ++i) acc += plane[i];
          gb[o] += acc;
        }
      }
      if (px.requires_grad) {
        T* dx = px.ensure_grad().ptr() + b * in_img;
        if (lowered) {
          kp::gemm<T>(Trans::Yes, Trans::No, rows, cols, cout, T(1), pw.value.ptr(), rows, dy, cols,
                      T(0), colbuf.data(), cols);
          kp::col2im<T>(g, colbuf.data(), dx);
        } else {
          kp::gemm<T>(Trans::Yes, Trans::No, rows, cols, cout, T(1), pw.value.ptr(), rows, dy, cols,
                      T(1), dx, cols);
        }
      }
    }
  });
}

template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride,
                        int pad, int out_pad) {
  require_rank(x.shape(), 4, "conv_transpose2d");
  require_rank(weight.shape(), 4, "conv_transpose2d weight");
  const int n = x.dim(0);
  const int cin = x.dim(1);
  const int h = x.dim(2);
  const int w_in = x.dim(3);
  require(weight.dim(0) == cin, ErrorCode::ShapeMismatch,
          "conv_transpose2d: weight " + shape_str(weight.shape()) + " vs input " +
              shape_str(x.shape()));
  const int cout = weight.dim(1);
  const int k = weight.dim(2);
  const int oh = (h - 1) * stride - 2 * pad + k + out_pad;
  const int ow = (w_in - 1) * stride - 2 * pad + k + out_pad;
  require(oh > 0 && ow > 0, ErrorCode::ShapeError, "conv_transpose2d: empty output");
  // Geometry of the forward conv that maps the output image back onto the input grid.
  const ConvGeom g{cout, oh, ow, k, stride, pad};
  require(g.out_height() == h && g.out_width() == w_in, ErrorCode::ShapeError,
          "conv_transpose2d: inconsistent output padding");
  const int rows = g.col_rows();
  const int cols = h * w_in;
  const std::size_t in_img = static_cast<std::size_t>(cin) * cols;
  const std::size_t out_img = static_cast<std::size_t>(cout) * oh * ow;

  Tensor<T> y({n, cout, oh, ow});
  std::vector<T> col(static_cast<std::size_t>(rows) * cols);
  for (int b = 0; b < n; ++b) {
    kp::gemm<T>(Trans::Yes, Trans::No, rows, cols, cin, T(1), weight.value().ptr(), rows,
                x.value().ptr() + b * in_img, cols, T(0), col.data(), cols);
    T* yout = y.ptr() + b * out_img;
    kp::col2im<T>(g, col.data(), yout);
    if (bias.defined()) {
      const T* bv = bias.value().ptr();
      for (int o = 0; o < cout; ++o) {
        T* plane = yout + static_cast<std::size_t>(o) * oh * ow;
        for (int i = 0; i < oh * ow; ++i) plane[i] += bv[o];
      }
    }
  }
  const bool has_bias = bias.defined();
  return make_result<T>(std::move(y), {&x, &weight, &bias}, [=](Node<T>& self) {
    Node<T>& px = *self.parents[0];
    Node<T>& pw = *self.parents[1];
    Node<T>* pb = has_bias ? self.parents[2].get() : nullptr;
    std::vector<T> colbuf(static_cast<std::size_t>(rows) * cols);
    for (int b = 0; b < n; ++b) {
      const T* dy = self.grad.ptr() + b * out_img;
      if (pb && pb->requires_grad) {
        T* gb = pb->ensure_grad().ptr();
        for (int o = 0; o < cout; ++o) {
          T acc = 0;
          const T* plane = dy + static_cast<std::size_t>(o) * oh * ow;
          for (int i = 0; i < oh * ow; ++i) acc += plane[i];
          gb[o] += acc;
        }
      }
      if (!px.requires_grad && !pw.requires_grad) continue;
      kp::im2col<T>(g, dy, colbuf.data());
      if (px.requires_grad) {
        kp::gemm<T>(Trans::No, Trans::No, cin, cols, rows, T(1), pw.value.ptr(), rows, colbuf.data(),
                    cols, T(1), px.ensure_grad().ptr() + b * in_img, cols);
      }
      if (pw.requires_grad) {
        kp::gemm<T>(Trans::No, Trans::Yes, cin, rows, cols, T(1), px.value.ptr() + b * in_img, cols,
                    colbuf.data(), cols, T(1), pw.ensure_grad().ptr(), rows);
      }
    }
  });
}

template <typename T>
Var<T> reflect_pad(const Var<T>& x, int pad) {
  require_rank(x.shape(), 4, "reflect_pad");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  require(pad < h && pad < w, ErrorCode::ShapeError, "reflect_pad: pad exceeds input size");
  const int oh = h + 2 * pad, ow = w + 2 * pad;
  auto reflect = [](int i, int size) {
    if (i < 0) return -i;
    if (i >= size) return 2 * size - 2 - i;
    return i;
  };
  std::vector<std::size_t> src(static_cast<std::size_t>(oh) * ow);
  for (int i = 0; i < oh; ++i)
    for (int j = 0; j < ow; ++j)
      src[i * ow + j] = static_cast<std::size_t>(reflect(i - pad, h)) * w + reflect(j - pad, w);
  Tensor<T> y({n, c, oh, ow});
  const std::size_t planes = static_cast<std::size_t>(n) * c;
  for (std::size_t p = 0; p < planes; ++p) {
    const T* xp = x.value().ptr() + p * h * w;
    T* yp = y.ptr() + p * oh * ow;
    for (std::size_t i = 0; i < src.size(); ++i) yp[i] = xp[src[i]];
  }
  return make_result<T>(std::move(y), {&x}, [src, planes, h, w, oh, ow](Node<T>& self) {
    Node<T>& px = *self.parents[0];
    T* gx = px.ensure_grad().ptr();
    for (std::size_t p = 0; p < planes; ++p) {
      const T* gy = self.grad.ptr() + p * oh * ow;
      T* gp = gx + p * h * w;
      for (std::size_t i = 0; i < src.size(); ++i) gp[src[i]] += gy[i];
    }
  });
}

template <typename T>
Var<T> instance_norm(const Var<T>& x, T eps) {
  require_rank(x.shape(), 4, "instance_norm");
  const int planes = x.dim(0) * x.dim(1);
  const int plane_size = x.dim(2) * x.dim(3);
  Tensor<T> y(x.shape());
  auto inv_std = std::make_shared<std::vector<T>>(planes);
  kp::instance_norm_forward<T>(x.value().ptr(), planes, plane_size, eps, y.ptr(), inv_std->data());
  return make_result<T>(std::move(y), {&x}, [inv_std, planes, plane_size](Node<T>& self) {
    Node<T>& px = *self.parents[0];
    kp::instance_norm_backward<T>(self.value.ptr(), inv_std->data(), self.grad.ptr(), planes,
                                  plane_size, px.ensure_grad().ptr());
  });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  return unary<T>(
      x, [slope](T v) { return v > T(0) ? v : slope * v; },
      [slope](T xv, T) { return xv > T(0) ? T(1) : slope; });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return unary<T>(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T xv, T) { return xv > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  return unary<T>(
      x, [](T v) { return std::tanh(v); }, [](T, T yv) { return T(1) - yv * yv; });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return unary<T>(
      x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T yv) { return yv * (T(1) - yv); });
}

template <typename T>
Var<T> dropout(const Var<T>& x, T p, std::mt19937_64& rng) {
  if (p <= T(0)) return x;
  const T keep_scale = T(1) / (T(1) - p);
  auto mask = std::make_shared<std::vector<T>>(x.value().numel());
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < mask->size(); ++i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    (*mask)[i] = u < static_cast<double>(p) ? T(0) : keep_scale;
    y.data[i] = x.value().data[i] * (*mask)[i];
  }
  return make_result<T>(std::move(y), {&x}, [mask](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad().data;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad.data[i] * (*mask)[i];
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  require_rank(a.shape(), 4, "concat_channels");
  require_rank(b.shape(), 4, "concat_channels");
  require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
          ErrorCode::ShapeMismatch,
          "concat_channels: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int n = a.dim(0);
  const std::size_t sa = a.value().numel() / n;
  const std::size_t sb = b.value().numel() / n;
  Tensor<T> y({n, a.dim(1) + b.dim(1), a.dim(2), a.dim(3)});
  for (int i = 0; i < n; ++i) {
    std::copy_n(a.value().ptr() + i * sa, sa, y.ptr() + i * (sa + sb));
    std::copy_n(b.value().ptr() + i * sb, sb, y.ptr() + i * (sa + sb) + sa);
  }
  const bool a_grad = a.requires_grad();
  const bool b_grad = b.requires_grad();
  return make_result<T>(std::move(y), {&a, &b}, [=](Node<T>& self) {
    Node<T>& pa = *self.parents[0];
    Node<T>& pb = *self.parents[1];
    for (int i = 0; i < n; ++i) {
      const T* g = self.grad.ptr() + i * (sa + sb);
      if (a_grad) {
        T* ga = pa.ensure_grad().ptr() + i * sa;
        for (std::size_t j = 0; j < sa; ++j) ga[j] += g[j];
      }
      if (b_grad) {
        T* gb = pb.ensure_grad().ptr() + i * sb;
        for (std::size_t j = 0; j < sb; ++j) gb[j] += g[sa + j];
      }
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  const Broadcast bc = make_broadcast(a.shape(), b.shape(), "add");
  Tensor<T> y(a.shape());
  const T* av = a.value().ptr();
  const T* bv = b.value().ptr();
  for_each_broadcast(bc, [&](std::size_t ia, std::size_t ib) { y.data[ia] = av[ia] + bv[ib]; });
  const bool a_grad = a.requires_grad();
  const bool b_grad = b.requires_grad();
  return make_result<T>(std::move(y), {&a, &b}, [bc, a_grad, b_grad](Node<T>& self) {
    const T* g = self.grad.ptr();
    if (a_grad) {
      T* ga = self.parents[0]->ensure_grad().ptr();
      for (std::size_t i = 0; i < self.grad.numel(); ++i) ga[i] += g[i];
    }
    if (b_grad) {
      T* gb = self.parents[1]->ensure_grad().ptr();
      for_each_broadcast(bc, [&](std::size_t ia, std::size_t ib) { gb[ib] += g[ia]; });
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return add(a, scale(b, T(-1)));
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  const Broadcast bc = make_broadcast(a.shape(), b.shape(), "mul");
  Tensor<T> y(a.shape());
  const T* av = a.value().ptr();
  const T* bv = b.value().ptr();
  for_each_broadcast(bc, [&](std::size_t ia, std::size_t ib) { y.data[ia] = av[ia] * bv[ib]; });
  const bool a_grad = a.requires_grad();
  const bool b_grad = b.requires_grad();
  return make_result<T>(std::move(y), {&a, &b}, [bc, a_grad, b_grad](Node<T>& self) {
    Node<T>& pa = *self.parents[0];
    Node<T>& pb = *self.parents[1];
    const T* g = self.grad.ptr();
    const T* av = pa.value.ptr();
    const T* bv = pb.value.ptr();
    if (a_grad) {
      T* ga = pa.ensure_grad().ptr();
      for_each_broadcast(bc, [&](std::size_t ia, std::size_t ib) { ga[ia] += g[ia] * bv[ib]; });
    }
    if (b_grad) {
      T* gb = pb.ensure_grad().ptr();
      for_each_broadcast(bc, [&](std::size_t ia, std::size_t ib) { gb[ib] += g[ia] * av[ia]; });
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  return unary<T>(
      x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, T value) {
  return unary<T>(
      x, [value](T v) { return v + value; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> mean_spatial(const Var<T>& x) {
  require_rank(x.shape(), 4, "mean_spatial");
  const int planes = x.dim(0) * x.dim(1);
  const int hw = x.dim(2) * x.dim(3);
  Tensor<T> y({x.dim(0), x.dim(1), 1, 1});
  for (int p = 0; p < planes; ++p) {
    T acc = 0;
    const T* xp = x.value().ptr() + static_cast<std::size_t>(p) * hw;
    for (int i = 0; i < hw; ++i) acc += xp[i];
    y.data[p] = acc / static_cast<T>(hw);
  }
  return make_result<T>(std::move(y), {&x}, [planes, hw](Node<T>& self) {
    T* gx = self.parents[0]->ensure_grad().ptr();
    for (int p = 0; p < planes; ++p) {
      const T g = self.grad.data[p] / static_cast<T>(hw);
      for (int i = 0; i < hw; ++i) gx[static_cast<std::size_t>(p) * hw + i] += g;
    }
  });
}

template <typename T>
Var<T> max_spatial(const Var<T>& x) {
  require_rank(x.shape(), 4, "max_spatial");
  const int planes = x.dim(0) * x.dim(1);
  const int hw = x.dim(2) * x.dim(3);
  Tensor<T> y({x.dim(0), x.dim(1), 1, 1});
  auto argmax = std::make_shared<std::vector<std::size_t>>(planes);
  for (int p = 0; p < planes; ++p) {
    const T* xp = x.value().ptr() + static_cast<std::size_t>(p) * hw;
    std::size_t best = 0;
    for (int i = 1; i < hw; ++i)
      if (xp[i] > xp[best]) best = i;
    (*argmax)[p] = static_cast<std::size_t>(p) * hw + best;
    y.data[p] = xp[best];
  }
  return make_result<T>(std::move(y), {&x}, [argmax](Node<T>& self) {
    T* gx = self.parents[0]->ensure_grad().ptr();
    for (std::size_t p = 0; p < argmax->size(); ++p) gx[(*argmax)[p]] += self.grad.data[p];
  });
}

template <typename T>
Var<T> mean_channels(const Var<T>& x) {
  require_rank(x.shape(), 4, "mean_channels");
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> y({n, 1, x.dim(2), x.dim(3)});
  for (int b = 0; b < n; ++b) {
    T* yp = y.ptr() + static_cast<std::size_t>(b) * hw;
    for (int ch = 0; ch < c; ++ch) {
      const T* xp = x.value().ptr() + (static_cast<std::size_t>(b) * c + ch) * hw;
      for (int i = 0; i < hw; ++i) yp[i] += xp[i];
    }
    for (int i = 0; i < hw; ++i) yp[i] /= static_cast<T>(c);
  }
  return make_result<T>(std::move(y), {&x}, [n, c, hw](Node<T>& self) {
    T* gx = self.parents[0]->ensure_grad().ptr();
    for (int b = 0; b < n; ++b) {
      const T* gy = self.grad.ptr() + static_cast<std::size_t>(b) * hw;
      for (int ch = 0; ch < c; ++ch) {
        T* gp = gx + (static_cast<std::size_t>(b) * c + ch) * hw;
        for (int i = 0; i < hw; ++i) gp[i] += gy[i] / static_cast<T>(c);
      }
    }
  });
}

template <typename T>
Var<T> max_channels(const Var<T>& x) {
  require_rank(x.shape(), 4, "max_channels");
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> y({n, 1, x.dim(2), x.dim(3)});
  auto argmax = std::make_shared<std::vector<std::size_t>>(static_cast<std::size_t>(n) * hw);
  for (int b = 0; b < n; ++b) {
    for (int i = 0; i < hw; ++i) {
      std::size_t best = (static_cast<std::size_t>(b) * c) * hw + i;
      for (int ch = 1; ch < c; ++ch) {
        const std::size_t idx = (static_cast<std::size_t>(b) * c + ch) * hw + i;
        if (x.value().data[idx] > x.value().data[best]) best = idx;
      }
      (*argmax)[static_cast<std::size_t>(b) * hw + i] = best;
      y.data[static_cast<std::size_t>(b) * hw + i] = x.value().data[best];
    }
  }
  return make_result<T>(std::move(y), {&x}, [argmax](Node<T>& self) {
    T* gx = self.parents[0]->ensure_grad().ptr();
    for (std::size_t p = 0; p < argmax->size(); ++p) gx[(*argmax)[p]] += self.grad.data[p];
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  require(shape_numel(shape) == x.value().numel(), ErrorCode::ShapeError,
          "reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  Tensor<T> y(std::move(shape), x.value().data);
  return make_result<T>(std::move(y), {&x}, [](Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad().data;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad.data[i];
  });
}

template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool trans_a, bool trans_b) {
  require_rank(a.shape(), 3, "bmm");
  require_rank(b.shape(), 3, "bmm");
  const int batch = a.dim(0);
  require(b.dim(0) == batch, ErrorCode::ShapeMismatch, "bmm: batch mismatch");
  const int m = trans_a ? a.dim(2) : a.dim(1);
  const int k = trans_a ? a.dim(1) : a.dim(2);
  const int kb = trans_b ? b.dim(2) : b.dim(1);
  const int n = trans_b ? b.dim(1) : b.dim(2);
  require(k == kb, ErrorCode::ShapeMismatch,
          "bmm: inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int lda = a.dim(2), ldb = b.dim(2);
  const std::size_t sa = static_cast<std::size_t>(a.dim(1)) * a.dim(2);
  const std::size_t sb = static_cast<std::size_t>(b.dim(1)) * b.dim(2);
  const std::size_t sc = static_cast<std::size_t>(m) * n;
  const Trans ta = trans_a ? Trans::Yes : Trans::No;
  const Trans tb = trans_b ? Trans::Yes : Trans::No;
  Tensor<T> y({batch, m, n});
  for (int i = 0; i < batch; ++i) {
    kp::gemm<T>(ta, tb, m, n, k, T(1), a.value().ptr() + i * sa, lda, b.value().ptr() + i * sb, ldb,
                T(0), y.ptr() + i * sc, n);
  }
  const bool a_grad = a.requires_grad();
  const bool b_grad = b.requires_grad();
  return make_result<T>(std::move(y), {&a, &b}, [=](Node<T>& self) {
    Node<T>& pa = *self.parents[0];
    Node<T>& pb = *self.parents[1];
    for (int i = 0; i < batch; ++i) {
      const T* g = self.grad.ptr() + i * sc;
      const T* av = pa.value.ptr() + i * sa;
      const T* bv = pb.value.ptr() + i * sb;
      if (a_grad) {
        T* ga = pa.ensure_grad().ptr() + i * sa;
        // C = op(A) op(B): dA = dC op(B)^T (or its transpose when A was transposed).
        if (!trans_a) {
          kp::gemm<T>(Trans::No, trans_b ? Trans::No : Trans::Yes, m, k, n, T(1), g, n, bv, ldb, T(1),
                      ga, lda);
        } else {
          kp::gemm<T>(trans_b ? Trans::Yes : Trans::No, Trans::Yes, k, m, n, T(1), bv, ldb, g, n, T(1),
                      ga, lda);
        }
      }
      if (b_grad) {
        T* gb = pb.ensure_grad().ptr() + i * sb;
        if (!trans_b) {
          kp::gemm<T>(trans_a ? Trans::No : Trans::Yes, Trans::No, k, n, m, T(1), av, lda, g, n, T(1),
                      gb, ldb);
        } else {
          kp::gemm<T>(Trans::Yes, trans_a ? Trans::Yes : Trans::No, n, k, m, T(1), g, n, av, lda, T(1),
                      gb, ldb);
        }
      }
    }
  });
}

template <typename T>
Var<T> softmax_last(const Var<T>& x) {
  const int last = x.shape().back();
  const std::size_t rows = x.value().numel() / last;
  Tensor<T> y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.value().ptr() + r * last;
    T* yr = y.ptr() + r * last;
    const T mx = *std::max_element(xr, xr + last);
    T sum = 0;
    for (int i = 0; i < last; ++i) {
      yr[i] = std::exp(xr[i] - mx);
      sum += yr[i];
    }
    for (int i = 0; i < last; ++i) yr[i] /= sum;
  }
  return make_result<T>(std::move(y), {&x}, [rows, last](Node<T>& self) {
    T* gx = self.parents[0]->ensure_grad().ptr();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yr = self.value.ptr() + r * last;
      const T* gr = self.grad.ptr() + r * last;
      T dot = 0;
      for (int i = 0; i < last; ++i) dot += gr[i] * yr[i];
      for (int i = 0; i < last; ++i) gx[r * last + i] += yr[i] * (gr[i] - dot);
    }
  });
}

template <typename T>
Var<T> spectral_divide(const Var<T>& weight, const std::vector<T>& u, const std::vector<T>& v) {
  const int rows = weight.dim(0);
  const std::size_t cols = weight.value().numel() / rows;
  require(u.size() == static_cast<std::size_t>(rows) && v.size() == cols, ErrorCode::ShapeMismatch,
          "spectral_divide: singular vector sizes");
  const T* w = weight.value().ptr();
  T sigma = 0;
  for (int i = 0; i < rows; ++i) {
    T wv = 0;
    for (std::size_t j = 0; j < cols; ++j) wv += w[i * cols + j] * v[j];
    sigma += u[i] * wv;
  }
  require(std::isfinite(sigma) && sigma != T(0), ErrorCode::DegenerateWeight,
          "spectral_divide: sigma is zero or non-finite");
  Tensor<T> y(weight.shape());
  for (std::size_t i = 0; i < y.numel(); ++i) y.data[i] = w[i] / sigma;
  return make_result<T>(std::move(y), {&weight}, [u, v, sigma, rows, cols](Node<T>& self) {
    // d(W/s)/dW with s = u^T W v:  g/s - (sum(g * W) / s^2) u v^T
    Node<T>& pw = *self.parents[0];
    const T* g = self.grad.ptr();
    const T* wv = pw.value.ptr();
    T gw = 0;
    for (std::size_t i = 0; i < self.grad.numel(); ++i) gw += g[i] * wv[i];
    const T coeff = gw / (sigma * sigma);
    T* gx = pw.ensure_grad().ptr();
    for (int i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j)
        gx[i * cols + j] += g[i * cols + j] / sigma - coeff * u[i] * v[j];
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  T acc = 0;
  for (T v : x.value().data) acc += v;
  const std::size_t n = x.value().numel();
  Tensor<T> y({1}, acc / static_cast<T>(n));
  return make_result<T>(std::move(y), {&x}, [n](Node<T>& self) {
    const T g = self.grad.data[0] / static_cast<T>(n);
    for (T& v : self.parents[0]->ensure_grad().data) v += g;
  });
}

template <typename T>
Var<T> l1_mean(const Var<T>& a, const Var<T>& b) {
  require(a.shape() == b.shape(), ErrorCode::ShapeMismatch,
          "l1_mean: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  T acc = 0;
  const std::size_t n = a.value().numel();
  for (std::size_t i = 0; i < n; ++i) acc += std::abs(a.value().data[i] - b.value().data[i]);
  Tensor<T> y({1}, acc / static_cast<T>(n));
  const bool a_grad = a.requires_grad();
  const bool b_grad = b.requires_grad();
  return make_result<T>(std::move(y), {&a, &b}, [n, a_grad, b_grad](Node<T>& self) {
    Node<T>& pa = *self.parents[0];
    Node<T>& pb = *self.parents[1];
    const T g = self.grad.data[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T d = pa.value.data[i] - pb.value.data[i];
      const T s = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
      if (a_grad) pa.ensure_grad().data[i] += g * s;
      if (b_grad) pb.ensure_grad().data[i] -= g * s;
    }
  });
}

template <typename T>
Var<T> mse_to_constant(const Var<T>& x, T target) {
  T acc = 0;
  const std::size_t n = x.value().numel();
  for (T v : x.value().data) acc += (v - target) * (v - target);
  Tensor<T> y({1}, acc / static_cast<T>(n));
  return make_result<T>(std::move(y), {&x}, [n, target](Node<T>& self) {
    Node<T>& px = *self.parents[0];
    const T g = self.grad.data[0] * T(2) / static_cast<T>(n);
    auto& gx = px.ensure_grad().data;
    for (std::size_t i = 0; i < n; ++i) gx[i] += g * (px.value.data[i] - target);
  });
}

template <typename T>
Var<T> bce_with_logits(const Var<T>& logits, T target) {
  // Stable form: max(z,0) - z*t + log(1 + exp(-|z|)).
  T acc = 0;
  const std::size_t n = logits.value().numel();
  for (T z : logits.value().data) {
    acc += std::max(z, T(0)) - z * target + std::log1p(std::exp(-std::abs(z)));
  }
  Tensor<T> y({1}, acc / static_cast<T>(n));
  return make_result<T>(std::move(y), {&logits}, [n, target](Node<T>& self) {
    Node<T>& px = *self.parents[0];
    const T g = self.grad.data[0] / static_cast<T>(n);
    auto& gx = px.ensure_grad().data;
    for (std::size_t i = 0; i < n; ++i) {
      const T p = T(1) / (T(1) + std::exp(-px.value.data[i]));
      gx[i] += g * (p - target);
    }
  });
}

#define WC_INSTANTIATE(T)                                                                      \
  template class Var<T>;                                                                       \
  template Var<T> detach<T>(const Var<T>&);                                                    \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, int, int);            \
  template Var<T> conv_transpose2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, int, int, int); \
  template Var<T> reflect_pad<T>(const Var<T>&, int);                                          \
  template Var<T> instance_norm<T>(const Var<T>&, T);                                          \
  template Var<T> leaky_relu<T>(const Var<T>&, T);                                             \
  template Var<T> relu<T>(const Var<T>&);                                                      \
  template Var<T> tanh<T>(const Var<T>&);                                                      \
  template Var<T> sigmoid<T>(const Var<T>&);                                                   \
  template Var<T> dropout<T>(const Var<T>&, T, std::mt19937_64&);                              \
  template Var<T> concat_channels<T>(const Var<T>&, const Var<T>&);                            \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                        \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                        \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                        \
  template Var<T> scale<T>(const Var<T>&, T);                                                  \
  template Var<T> add_scalar<T>(const Var<T>&, T);                                             \
  template Var<T> mean_spatial<T>(const Var<T>&);                                              \
  template Var<T> max_spatial<T>(const Var<T>&);                                               \
  template Var<T> mean_channels<T>(const Var<T>&);                                             \
  template Var<T> max_channels<T>(const Var<T>&);                                              \
  template Var<T> reshape<T>(const Var<T>&, Shape);                                            \
  template Var<T> bmm<T>(const Var<T>&, const Var<T>&, bool, bool);                            \
  template Var<T> softmax_last<T>(const Var<T>&);                                              \
  template Var<T> spectral_divide<T>(const Var<T>&, const std::vector<T>&, const std::vector<T>&); \
  template Var<T> mean<T>(const Var<T>&);                                                      \
  template Var<T> l1_mean<T>(const Var<T>&, const Var<T>&);                                    \
  template Var<T> mse_to_constant<T>(const Var<T>&, T);                                        \
  template Var<T> bce_with_logits<T>(const Var<T>&, T);

WC_INSTANTIATE(float)
WC_INSTANTIATE(double)
#undef WC_INSTANTIATE

}  // namespace ag
}  // namespace wc
