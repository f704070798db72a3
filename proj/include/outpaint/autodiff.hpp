#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "outpaint/tensor.hpp"

// Minimal reverse-mode automatic differentiation over Tensors.
//
// A Var is a handle to a graph node. Leaves created by `parameter` (or any
// leaf with requires_grad) receive gradients from `backward`; everything else
// is an intermediate. Nodes whose inputs do not require gradients keep no
// parents and no closure, so frozen-model forward passes stay cheap and
// read-only, which is what makes a shared generator safe across threads.
namespace outpaint::ad {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  // Gradient buffer, zero-initialised on first use.
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() { node_->grad = Tensor(); }
  const Shape& shape() const { return node_->value.shape(); }
  double item() const;
  bool defined() const { return static_cast<bool>(node_); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
Var parameter(Tensor value);

// Accumulates d(root)/d(leaf) into every reachable leaf that requires grad.
// `root` must hold a single element unless `seed` is given with its shape.
void backward(const Var& root);
void backward(const Var& root, const Tensor& seed);

// ---- elementwise -----------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);
Var mul_const(const Var& a, const Tensor& c);  // elementwise, c same shape
Var abs(const Var& a);
Var square(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
// slope applies to negative inputs; output multiplied by gain.
Var leaky_relu(const Var& a, double slope, double gain = 1.0);

// ---- reductions ------------------------------------------------------------
Var sum(const Var& a);
Var mean(const Var& a);
Var sum_per_sample(const Var& a);  // [N, ...] -> [N]
Var add_n(const std::vector<Var>& terms);

// ---- shape -----------------------------------------------------------------
Var reshape(const Var& a, Shape shape);
Var rows(const Var& a, const std::vector<int>& index);  // gather along axis 0
Var concat_cols(const Var& a, const Var& b);             // [N,A] ++ [N,B]
Var concat_channels(const Var& a, const Var& b);         // [N,C1,H,W] ++ [N,C2,H,W]
Var broadcast0(const Var& a, int n);                     // [1,...] -> [n,...]
// [N, C, n, n] -> [N*n*n, C], row index = b*n*n + row*n + col.
Var cells_to_rows(const Var& a);
// Patches [N*n*n, C, h, w] ordered (b, row, col) -> images [N, C, n*h, n*w].
Var assemble_grid(const Var& patches, int n);

// ---- layers ----------------------------------------------------------------
// y = gain * x W^T + bias_gain * b ; x [N,in], W [out,in], b [out] (may be undefined).
Var linear(const Var& x, const Var& weight, const Var& bias, double gain, double bias_gain);
Var add_channel_bias(const Var& x, const Var& bias, double gain = 1.0);  // x [N,C,H,W], b [C]
Var conv2d(const Var& x, const Var& weight, double gain);                 // stride 1, same pad
Var scale_channels(const Var& x, const Var& s);                           // x [N,C,H,W], s [N,C]
// d[n,o] = 1 / sqrt(gain^2 * sum_{i,k} (W[o,i,k] s[n,i])^2 + eps)
Var demod_coefficients(const Var& weight, const Var& s, double gain, double eps = 1e-8);
Var upsample2x(const Var& x);
Var avgpool2x(const Var& x);
// x / sqrt(sum_c x^2 + eps) at every pixel.
Var channel_unit_normalize(const Var& x, double eps);

// ---- losses ----------------------------------------------------------------
// (x - mu)^T M (x - mu) for every row of x [N,D], summed; M symmetric [D,D].
Var quad_form_rows(const Var& x, const Tensor& mu, const Tensor& m);
// Mean binary cross entropy given logits and {0,1} targets.
Var bce_with_logits(const Var& logits, const Tensor& targets);

}  // namespace outpaint::ad
