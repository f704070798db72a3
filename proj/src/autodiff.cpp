#include "outpaint/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "outpaint/errors.hpp"
#include "outpaint/kernels.hpp"

namespace outpaint::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

using BackwardFn = std::function<void(Node&)>;

Var make(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    node->requires_grad = true;
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward_fn = std::move(fn);
  }
  return Var(std::move(node));
}

Var make_n(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (needs) {
    node->requires_grad = true;
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward_fn = std::move(fn);
  }
  return Var(std::move(node));
}

Node& parent(Node& self, int i) { return *self.parents[i]; }

void require_same(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

void require_rank(const Var& a, int r, const char* op) {
  if (a.value().rank() != r)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                     shape_str(a.shape()));
}

// Elementwise binary op where `b` is either the same shape as `a` or a single
// element broadcast over `a`.
template <class F, class DA, class DB>
Var binary(const Var& a, const Var& b, const char* name, F f, DA da, DB db) {
  const bool scalar_b = b.value().numel() == 1 && a.value().numel() != 1;
  if (!scalar_b) require_same(a, b, name);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.numel(); ++i) out[i] = f(av[i], bv[scalar_b ? 0 : i]);
  return make(std::move(out), {a, b}, [scalar_b, da, db](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    const Tensor& g = self.grad;
    if (pa.requires_grad) {
      Tensor& ga = pa.grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i)
        ga[i] += g[i] * da(pa.value[i], pb.value[scalar_b ? 0 : i]);
    }
    if (pb.requires_grad) {
      Tensor& gb = pb.grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i)
        gb[scalar_b ? 0 : i] += g[i] * db(pa.value[i], pb.value[scalar_b ? 0 : i]);
    }
  });
}

template <class F, class D>
Var unary(const Var& a, F f, D d) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.numel(); ++i) out[i] = f(av[i]);
  return make(std::move(out), {a}, [d](Node& self) {
    Node& pa = parent(self, 0);
    Tensor& ga = pa.grad_buffer();
    for (std::size_t i = 0; i < ga.numel(); ++i)
      ga[i] += self.grad[i] * d(pa.value[i], self.value[i]);
  });
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.empty() || grad.shape() != value.shape()) grad = Tensor(value.shape());
  return grad;
}

double Var::item() const {
  if (value().numel() != 1) throw ShapeError("item() on non-scalar " + shape_str(shape()));
  return value()[0];
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

void backward(const Var& root) {
  if (root.value().numel() != 1)
    throw ShapeError("backward() needs a scalar root, got " + shape_str(root.shape()));
  backward(root, Tensor(root.shape(), 1.0));
}

void backward(const Var& root, const Tensor& seed) {
  if (!root.requires_grad()) return;
  if (seed.shape() != root.shape()) throw ShapeError("backward seed shape mismatch");
  // Iterative post-order DFS for a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  Tensor& g = root.node()->grad_buffer();
  for (std::size_t i = 0; i < g.numel(); ++i) g[i] += seed[i];
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// ---- elementwise -----------------------------------------------------------

Var add(const Var& a, const Var& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(const Var& a, const Var& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var div(const Var& a, const Var& b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Var add_scalar(const Var& a, double s) {
  return unary(
      a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var mul_scalar(const Var& a, double s) {
  return unary(
      a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Var mul_const(const Var& a, const Tensor& c) {
  if (a.value().numel() != c.numel()) throw ShapeError("mul_const: size mismatch");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * c[i];
  return make(std::move(out), {a}, [c](Node& self) {
    Tensor& ga = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += self.grad[i] * c[i];
  });
}

Var abs(const Var& a) {
  return unary(
      a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var square(const Var& a) {
  return unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var tanh(const Var& a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& a) {
  return unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var leaky_relu(const Var& a, double slope, double gain) {
  return unary(
      a, [slope, gain](double x) { return gain * (x >= 0 ? x : slope * x); },
      [slope, gain](double x, double) { return gain * (x >= 0 ? 1.0 : slope); });
}

// ---- reductions ------------------------------------------------------------

Var sum(const Var& a) {
  return make(Tensor({1}, a.value().sum()), {a}, [](Node& self) {
    Tensor& ga = parent(self, 0).grad_buffer();
    const double g = self.grad[0];
    for (auto& v : ga.vec()) v += g;
  });
}

Var sum_per_sample(const Var& a) {
  const int n = a.shape().empty() ? 0 : a.shape()[0];
  if (n == 0) throw ShapeError("sum_per_sample needs a leading batch axis");
  const std::size_t inner = a.value().numel() / n;
  Tensor out({n});
  for (int b = 0; b < n; ++b) {
    double acc = 0.0;
    for (std::size_t k = 0; k < inner; ++k) acc += a.value()[b * inner + k];
    out[b] = acc;
  }
  return make(std::move(out), {a}, [n, inner](Node& self) {
    Tensor& ga = parent(self, 0).grad_buffer();
    for (int b = 0; b < n; ++b)
      for (std::size_t k = 0; k < inner; ++k) ga[b * inner + k] += self.grad[b];
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().numel());
  if (n == 0) throw ShapeError("mean of empty tensor");
  return make(Tensor({1}, a.value().sum() / n), {a}, [n](Node& self) {
    Tensor& ga = parent(self, 0).grad_buffer();
    const double g = self.grad[0] / n;
    for (auto& v : ga.vec()) v += g;
  });
}

Var add_n(const std::vector<Var>& terms) {
  if (terms.empty()) throw ShapeError("add_n of nothing");
  Tensor out(terms[0].shape());
  for (const auto& t : terms) {
    require_same(terms[0], t, "add_n");
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += t.value()[i];
  }
  return make_n(std::move(out), terms, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      Tensor& gp = p->grad_buffer();
      for (std::size_t i = 0; i < gp.numel(); ++i) gp[i] += self.grad[i];
    }
  });
}

// ---- shape -----------------------------------------------------------------

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make(std::move(out), {a}, [](Node& self) {
    Tensor& ga = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += self.grad[i];
  });
}

Var rows(const Var& a, const std::vector<int>& index) {
  const Tensor& av = a.value();
  if (av.rank() < 1) throw ShapeError("rows: rank 0");
  const std::size_t stride = av.numel() / av.dim(0);
  Shape shape = av.shape();
  shape[0] = static_cast<int>(index.size());
  Tensor out(shape);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0 || index[r] >= av.dim(0)) throw ShapeError("rows: index out of range");
    std::copy_n(av.data() + index[r] * stride, stride, out.data() + r * stride);
  }
  return make(std::move(out), {a}, [index, stride](Node& self) {
    Tensor& ga = parent(self, 0).grad_buffer();
    for (std::size_t r = 0; r < index.size(); ++r)
      for (std::size_t k = 0; k < stride; ++k) ga[index[r] * stride + k] += self.grad[r * stride + k];
  });
}

Var concat_cols(const Var& a, const Var& b) {
  require_rank(a, 2, "concat_cols");
  require_rank(b, 2, "concat_cols");
  const int n = a.value().dim(0), da = a.value().dim(1), db = b.value().dim(1);
  if (b.value().dim(0) != n) throw ShapeError("concat_cols: row mismatch");
  Tensor out({n, da + db});
  for (int r = 0; r < n; ++r) {
    std::copy_n(a.value().data() + r * da, da, out.data() + r * (da + db));
    std::copy_n(b.value().data() + r * db, db, out.data() + r * (da + db) + da);
  }
  return make(std::move(out), {a, b}, [n, da, db](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) {
      Tensor& g = pa.grad_buffer();
      for (int r = 0; r < n; ++r)
        for (int k = 0; k < da; ++k) g[r * da + k] += self.grad[r * (da + db) + k];
    }
    if (pb.requires_grad) {
      Tensor& g = pb.grad_buffer();
      for (int r = 0; r < n; ++r)
        for (int k = 0; k < db; ++k) g[r * db + k] += self.grad[r * (da + db) + da + k];
    }
  });
}

Var concat_channels(const Var& a, const Var& b) {
  require_rank(a, 4, "concat_channels");
  require_rank(b, 4, "concat_channels");
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3])
    throw ShapeError("concat_channels: shape mismatch");
  const int n = sa[0];
  const long pa = static_cast<long>(sa[1]) * sa[2] * sa[3];
  const long pb = static_cast<long>(sb[1]) * sb[2] * sb[3];
  Tensor out({n, sa[1] + sb[1], sa[2], sa[3]});
  for (int i = 0; i < n; ++i) {
    std::copy_n(a.value().data() + i * pa, pa, out.data() + i * (pa + pb));
    std::copy_n(b.value().data() + i * pb, pb, out.data() + i * (pa + pb) + pa);
  }
  return make(std::move(out), {a, b}, [n, pa, pb](Node& self) {
    Node& na = parent(self, 0);
    Node& nb = parent(self, 1);
    if (na.requires_grad) {
      Tensor& g = na.grad_buffer();
      for (int i = 0; i < n; ++i)
        for (long k = 0; k < pa; ++k) g[i * pa + k] += self.grad[i * (pa + pb) + k];
    }
    if (nb.requires_grad) {
      Tensor& g = nb.grad_buffer();
      for (int i = 0; i < n; ++i)
        for (long k = 0; k < pb; ++k) g[i * pb + k] += self.grad[i * (pa + pb) + pa + k];
    }
  });
}

Var broadcast0(const Var& a, int n) {
  const Tensor& av = a.value();
  if (av.rank() < 1 || av.dim(0) != 1) throw ShapeError("broadcast0 needs leading dim 1");
  Shape shape = av.shape();
  shape[0] = n;
  Tensor out(shape);
  const std::size_t stride = av.numel();
  for (int i = 0; i < n; ++i) std::copy_n(av.data(), stride, out.data() + i * stride);
  return make(std::move(out), {a}, [n, stride](Node& self) {
    Tensor& ga = parent(self, 0).grad_buffer();
    for (int i = 0; i < n; ++i)
      for (std::size_t k = 0; k < stride; ++k) ga[k] += self.grad[i * stride + k];
  });
}

Var cells_to_rows(const Var& a) {
  require_rank(a, 4, "cells_to_rows");
  const auto& s = a.shape();
  const int nb = s[0], c = s[1], gh = s[2], gw = s[3];
  Tensor out({nb * gh * gw, c});
  auto src_index = [=](int b, int ch, int r, int col) {
    return ((static_cast<long>(b) * c + ch) * gh + r) * gw + col;
  };
  for (int b = 0; b < nb; ++b)
    for (int r = 0; r < gh; ++r)
      for (int col = 0; col < gw; ++col)
        for (int ch = 0; ch < c; ++ch)
          out[((static_cast<long>(b) * gh + r) * gw + col) * c + ch] =
              a.value()[src_index(b, ch, r, col)];
  return make(std::move(out), {a}, [=](Node& self) {
    Tensor& ga = parent(self, 0).grad_buffer();
    for (int b = 0; b < nb; ++b)
      for (int r = 0; r < gh; ++r)
        for (int col = 0; col < gw; ++col)
          for (int ch = 0; ch < c; ++ch)
            ga[src_index(b, ch, r, col)] +=
                self.grad[((static_cast<long>(b) * gh + r) * gw + col) * c + ch];
  });
}

Var assemble_grid(const Var& patches, int n) {
  require_rank(patches, 4, "assemble_grid");
  const auto& s = patches.shape();
  if (n < 1 || s[0] % (n * n) != 0) throw ShapeError("assemble_grid: patch count not a multiple of n*n");
  const int nb = s[0] / (n * n), c = s[1], ph = s[2], pw = s[3];
  const int H = n * ph, W = n * pw;
  Tensor out({nb, c, H, W});
  // Each patch row copies into one contiguous destination run.
  auto for_each_run = [=](auto&& fn) {
    for (int b = 0; b < nb; ++b)
      for (int r = 0; r < n; ++r)
        for (int col = 0; col < n; ++col) {
          const long p = (static_cast<long>(b) * n + r) * n + col;
          for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < ph; ++y) {
              const long src = ((p * c + ch) * ph + y) * pw;
              const long dst = ((static_cast<long>(b) * c + ch) * H + r * ph + y) * W + col * pw;
              fn(src, dst);
            }
        }
  };
  for_each_run([&](long src, long dst) { std::copy_n(patches.value().data() + src, pw, out.data() + dst); });
  return make(std::move(out), {patches}, [for_each_run, pw](Node& self) {
    Tensor& g = parent(self, 0).grad_buffer();
    for_each_run([&](long src, long dst) {
      for (int x = 0; x < pw; ++x) g[src + x] += self.grad[dst + x];
    });
  });
}

// ---- layers ----------------------------------------------------------------

Var linear(const Var& x, const Var& weight, const Var& bias, double gain, double bias_gain) {
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear");
  const int n = x.value().dim(0), in = x.value().dim(1), out_dim = weight.value().dim(0);
  if (weight.value().dim(1) != in)
    throw ShapeError("linear: input width " + std::to_string(in) + " vs weight " +
                     shape_str(weight.shape()));
  Tensor out({n, out_dim});
  // Row-at-a-time products keep each row's result independent of the batch.
  {
    ConstMap wmat(weight.value().data(), out_dim, in);
    for (int r = 0; r < n; ++r) {
      Eigen::Map<const Eigen::VectorXd> xr(x.value().data() + static_cast<long>(r) * in, in);
      Eigen::Map<Eigen::VectorXd> yr(out.data() + static_cast<long>(r) * out_dim, out_dim);
      yr.noalias() = wmat * xr;
      yr *= gain;
    }
  }
  const bool has_bias = bias.defined();
  if (has_bias) {
    if (static_cast<int>(bias.value().numel()) != out_dim) throw ShapeError("linear: bias size");
    for (int r = 0; r < n; ++r)
      for (int k = 0; k < out_dim; ++k) out[r * out_dim + k] += bias_gain * bias.value()[k];
  }
  auto fn = [=](Node& self) {
    Node& px = parent(self, 0);
    Node& pw = parent(self, 1);
    ConstMap g(self.grad.data(), n, out_dim);
    if (px.requires_grad)
      Map(px.grad_buffer().data(), n, in).noalias() += gain * g * ConstMap(pw.value.data(), out_dim, in);
    if (pw.requires_grad)
      Map(pw.grad_buffer().data(), out_dim, in).noalias() +=
          gain * g.transpose() * ConstMap(px.value.data(), n, in);
    if (has_bias && parent(self, 2).requires_grad) {
      Tensor& gb = parent(self, 2).grad_buffer();
      for (int r = 0; r < n; ++r)
        for (int k = 0; k < out_dim; ++k) gb[k] += bias_gain * self.grad[r * out_dim + k];
    }
  };
  if (has_bias) return make(std::move(out), {x, weight, bias}, fn);
  return make(std::move(out), {x, weight}, fn);
}

Var add_channel_bias(const Var& x, const Var& bias, double gain) {
  require_rank(x, 4, "add_channel_bias");
  const auto& s = x.shape();
  const int n = s[0], c = s[1];
  const long hw = static_cast<long>(s[2]) * s[3];
  if (static_cast<int>(bias.value().numel()) != c) throw ShapeError("add_channel_bias: size");
  Tensor out = x.value();
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const double b = gain * bias.value()[ch];
      double* p = out.data() + (static_cast<long>(i) * c + ch) * hw;
      for (long k = 0; k < hw; ++k) p[k] += b;
    }
  return make(std::move(out), {x, bias}, [=](Node& self) {
    Node& px = parent(self, 0);
    Node& pb = parent(self, 1);
    if (px.requires_grad) {
      Tensor& g = px.grad_buffer();
      for (std::size_t k = 0; k < g.numel(); ++k) g[k] += self.grad[k];
    }
    if (pb.requires_grad) {
      Tensor& g = pb.grad_buffer();
      for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch) {
          const double* p = self.grad.data() + (static_cast<long>(i) * c + ch) * hw;
          double acc = 0.0;
          for (long k = 0; k < hw; ++k) acc += p[k];
          g[ch] += gain * acc;
        }
    }
  });
}

Var conv2d(const Var& x, const Var& weight, double gain) {
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d");
  const auto& s = x.shape();
  const auto& ws = weight.shape();
  if (ws[1] != s[1] || ws[2] != ws[3] || ws[2] % 2 == 0)
    throw ShapeError("conv2d: weight " + shape_str(ws) + " incompatible with input " + shape_str(s));
  kernels::ConvDims d{s[0], s[1], s[2], s[3], ws[0], ws[2]};
  Tensor scaled = weight.value();
  for (auto& v : scaled.vec()) v *= gain;
  Tensor out({d.n, d.cout, d.h, d.w});
  kernels::conv2d_forward(d, x.value().span(), scaled.span(), out.span());
  return make(std::move(out), {x, weight}, [d, gain, scaled = std::move(scaled)](Node& self) {
    Node& px = parent(self, 0);
    Node& pw = parent(self, 1);
    if (px.requires_grad) {
      Tensor gx(px.value.shape());
      kernels::conv2d_backward_input(d, self.grad.span(), scaled.span(), gx.span());
      Tensor& g = px.grad_buffer();
      for (std::size_t k = 0; k < g.numel(); ++k) g[k] += gx[k];
    }
    if (pw.requires_grad) {
      Tensor gw(pw.value.shape());
      kernels::conv2d_backward_weight(d, px.value.span(), self.grad.span(), gw.span());
      Tensor& g = pw.grad_buffer();
      for (std::size_t k = 0; k < g.numel(); ++k) g[k] += gain * gw[k];
    }
  });
}

Var scale_channels(const Var& x, const Var& s) {
  require_rank(x, 4, "scale_channels");
  require_rank(s, 2, "scale_channels");
  const auto& xs = x.shape();
  const int n = xs[0], c = xs[1];
  const long hw = static_cast<long>(xs[2]) * xs[3];
  if (s.value().dim(0) != n || s.value().dim(1) != c) throw ShapeError("scale_channels: style shape");
  Tensor out(xs);
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const double f = s.value()[i * c + ch];
      const double* src = x.value().data() + (static_cast<long>(i) * c + ch) * hw;
      double* dst = out.data() + (static_cast<long>(i) * c + ch) * hw;
      for (long k = 0; k < hw; ++k) dst[k] = src[k] * f;
    }
  return make(std::move(out), {x, s}, [=](Node& self) {
    Node& px = parent(self, 0);
    Node& ps = parent(self, 1);
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch) {
        const long off = (static_cast<long>(i) * c + ch) * hw;
        const double* g = self.grad.data() + off;
        if (px.requires_grad) {
          const double f = ps.value[i * c + ch];
          double* gx = px.grad_buffer().data() + off;
          for (long k = 0; k < hw; ++k) gx[k] += g[k] * f;
        }
        if (ps.requires_grad) {
          const double* xv = px.value.data() + off;
          double acc = 0.0;
          for (long k = 0; k < hw; ++k) acc += g[k] * xv[k];
          ps.grad_buffer()[i * c + ch] += acc;
        }
      }
  });
}

Var demod_coefficients(const Var& weight, const Var& s, double gain, double eps) {
  require_rank(weight, 4, "demod_coefficients");
  require_rank(s, 2, "demod_coefficients");
  const auto& ws = weight.shape();
  const int cout = ws[0], cin = ws[1];
  const long kk = static_cast<long>(ws[2]) * ws[3];
  const int n = s.value().dim(0);
  if (s.value().dim(1) != cin) throw ShapeError("demod_coefficients: style width");
  // q[o,i] = sum_k W[o,i,k]^2
  std::vector<double> q(static_cast<long>(cout) * cin, 0.0);
  for (int o = 0; o < cout; ++o)
    for (int i = 0; i < cin; ++i) {
      const double* w = weight.value().data() + (static_cast<long>(o) * cin + i) * kk;
      double acc = 0.0;
      for (long k = 0; k < kk; ++k) acc += w[k] * w[k];
      q[o * cin + i] = acc;
    }
  const double g2 = gain * gain;
  Tensor out({n, cout});
  for (int b = 0; b < n; ++b)
    for (int o = 0; o < cout; ++o) {
      double acc = 0.0;
      for (int i = 0; i < cin; ++i) {
        const double sv = s.value()[b * cin + i];
        acc += sv * sv * q[o * cin + i];
      }
      out[b * cout + o] = 1.0 / std::sqrt(g2 * acc + eps);
    }
  return make(std::move(out), {weight, s}, [=, q = std::move(q)](Node& self) {
    Node& pw = parent(self, 0);
    Node& ps = parent(self, 1);
    // t[b,o] = g[b,o] * d[b,o]^3 * gain^2
    std::vector<double> t(static_cast<long>(n) * cout);
    for (long k = 0; k < static_cast<long>(n) * cout; ++k) {
      const double d = self.value[k];
      t[k] = self.grad[k] * d * d * d * g2;
    }
    if (ps.requires_grad) {
      Tensor& gs = ps.grad_buffer();
      for (int b = 0; b < n; ++b)
        for (int i = 0; i < cin; ++i) {
          double acc = 0.0;
          for (int o = 0; o < cout; ++o) acc += t[b * cout + o] * q[o * cin + i];
          gs[b * cin + i] -= ps.value[b * cin + i] * acc;
        }
    }
    if (pw.requires_grad) {
      Tensor& gw = pw.grad_buffer();
      for (int o = 0; o < cout; ++o)
        for (int i = 0; i < cin; ++i) {
          double acc = 0.0;
          for (int b = 0; b < n; ++b) {
            const double sv = ps.value[b * cin + i];
            acc += t[b * cout + o] * sv * sv;
          }
          const long off = (static_cast<long>(o) * cin + i) * kk;
          for (long k = 0; k < kk; ++k) gw[off + k] -= acc * pw.value[off + k];
        }
    }
  });
}

Var upsample2x(const Var& x) {
  require_rank(x, 4, "upsample2x");
  const auto& s = x.shape();
  const int planes = s[0] * s[1], h = s[2], w = s[3];
  Tensor out({s[0], s[1], 2 * h, 2 * w});
  kernels::upsample2x_forward(planes, h, w, x.value().span(), out.span());
  return make(std::move(out), {x}, [=](Node& self) {
    Tensor gx(parent(self, 0).value.shape());
    kernels::upsample2x_backward(planes, h, w, self.grad.span(), gx.span());
    Tensor& g = parent(self, 0).grad_buffer();
    for (std::size_t k = 0; k < g.numel(); ++k) g[k] += gx[k];
  });
}

Var avgpool2x(const Var& x) {
  require_rank(x, 4, "avgpool2x");
  const auto& s = x.shape();
  if (s[2] % 2 || s[3] % 2) throw ShapeError("avgpool2x: odd spatial size " + shape_str(s));
  const int planes = s[0] * s[1], h = s[2], w = s[3];
  Tensor out({s[0], s[1], h / 2, w / 2});
  kernels::avgpool2x_forward(planes, h, w, x.value().span(), out.span());
  return make(std::move(out), {x}, [=](Node& self) {
    Tensor gx(parent(self, 0).value.shape());
    kernels::avgpool2x_backward(planes, h, w, self.grad.span(), gx.span());
    Tensor& g = parent(self, 0).grad_buffer();
    for (std::size_t k = 0; k < g.numel(); ++k) g[k] += gx[k];
  });
}

Var channel_unit_normalize(const Var& x, double eps) {
  require_rank(x, 4, "channel_unit_normalize");
  const auto& s = x.shape();
  const int n = s[0], c = s[1];
  const long hw = static_cast<long>(s[2]) * s[3];
  Tensor out(s);
  std::vector<double> inv_norm(static_cast<long>(n) * hw);
  for (int b = 0; b < n; ++b)
    for (long p = 0; p < hw; ++p) {
      double acc = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        const double v = x.value()[(static_cast<long>(b) * c + ch) * hw + p];
        acc += v * v;
      }
      const double r = 1.0 / std::sqrt(acc + eps);
      inv_norm[b * hw + p] = r;
      for (int ch = 0; ch < c; ++ch) {
        const long k = (static_cast<long>(b) * c + ch) * hw + p;
        out[k] = x.value()[k] * r;
      }
    }
  return make(std::move(out), {x}, [=, inv_norm = std::move(inv_norm)](Node& self) {
    Node& px = parent(self, 0);
    Tensor& gx = px.grad_buffer();
    // y = x r ; dx = r g - r^3 x (g.x)
    for (int b = 0; b < n; ++b)
      for (long p = 0; p < hw; ++p) {
        const double r = inv_norm[b * hw + p];
        double dot = 0.0;
        for (int ch = 0; ch < c; ++ch) {
          const long k = (static_cast<long>(b) * c + ch) * hw + p;
          dot += self.grad[k] * px.value[k];
        }
        for (int ch = 0; ch < c; ++ch) {
          const long k = (static_cast<long>(b) * c + ch) * hw + p;
          gx[k] += r * self.grad[k] - r * r * r * px.value[k] * dot;
        }
      }
  });
}

// ---- losses ----------------------------------------------------------------

Var quad_form_rows(const Var& x, const Tensor& mu, const Tensor& m) {
  require_rank(x, 2, "quad_form_rows");
  const int n = x.value().dim(0), d = x.value().dim(1);
  if (static_cast<int>(mu.numel()) != d || m.rank() != 2 || m.dim(0) != d || m.dim(1) != d)
    throw ShapeError("quad_form_rows: dimension mismatch (code " + std::to_string(d) + ")");
  Eigen::Map<const Eigen::VectorXd> muv(mu.data(), d);
  ConstMap mm(m.data(), d, d);
  RowMat diff = ConstMap(x.value().data(), n, d);
  diff.rowwise() -= muv.transpose();
  RowMat md = diff * mm.transpose();  // rows: M (x - mu)
  const double total = (diff.array() * md.array()).sum();
  // M is symmetric, so d/dx of diff^T M diff is 2 M diff.
  return make(Tensor({1}, total), {x}, [n, d, md = std::move(md)](Node& self) {
    Tensor& gx = parent(self, 0).grad_buffer();
    Map(gx.data(), n, d) += 2.0 * self.grad[0] * md;
  });
}

Var bce_with_logits(const Var& logits, const Tensor& targets) {
  if (logits.value().numel() != targets.numel()) throw ShapeError("bce_with_logits: size mismatch");
  const double count = static_cast<double>(targets.numel());
  double total = 0.0;
  for (std::size_t k = 0; k < targets.numel(); ++k) {
    const double z = logits.value()[k];
    total += std::max(z, 0.0) - z * targets[k] + std::log1p(std::exp(-std::abs(z)));
  }
  return make(Tensor({1}, total / count), {logits}, [targets, count](Node& self) {
    Node& pz = parent(self, 0);
    Tensor& g = pz.grad_buffer();
    for (std::size_t k = 0; k < g.numel(); ++k) {
      const double p = 1.0 / (1.0 + std::exp(-pz.value[k]));
      g[k] += self.grad[0] * (p - targets[k]) / count;
    }
  });
}

}  // namespace outpaint::ad
