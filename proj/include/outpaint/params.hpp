#pragma once

#include <string>
#include <vector>

#include "outpaint/autodiff.hpp"

namespace outpaint {

struct NamedParam {
  std::string name;
  ad::Var var;
};

// Ordered collection of named trainable tensors. Order is the checkpoint order.
class ParamSet {
 public:
  ad::Var add(const std::string& name, Tensor init);
  const ad::Var& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<NamedParam>& items() const { return items_; }
  std::vector<ad::Var> vars() const;

  void set_requires_grad(bool on);
  void zero_grad();
  bool all_finite() const;
  std::size_t total_size() const;

 private:
  std::vector<NamedParam> items_;
};

// Adaptive-moment gradient descent over a fixed list of leaves.
class Adam {
 public:
  Adam(std::vector<ad::Var> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  // Applies one update from the gradients currently stored on the leaves.
  // Leaves without a gradient are treated as having zero gradient.
  void step();
  long steps() const { return t_; }

 private:
  std::vector<ad::Var> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

}  // namespace outpaint
