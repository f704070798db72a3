#include "outpaint/params.hpp"

#include <cmath>

#include "outpaint/errors.hpp"

namespace outpaint {

ad::Var ParamSet::add(const std::string& name, Tensor init) {
  if (contains(name)) throw ConfigError("duplicate parameter " + name);
  items_.push_back({name, ad::parameter(std::move(init))});
  return items_.back().var;
}

const ad::Var& ParamSet::get(const std::string& name) const {
  for (const auto& p : items_)
    if (p.name == name) return p.var;
  throw ConfigError("unknown parameter " + name);
}

bool ParamSet::contains(const std::string& name) const {
  for (const auto& p : items_)
    if (p.name == name) return true;
  return false;
}

std::vector<ad::Var> ParamSet::vars() const {
  std::vector<ad::Var> out;
  out.reserve(items_.size());
  for (const auto& p : items_) out.push_back(p.var);
  return out;
}

void ParamSet::set_requires_grad(bool on) {
  for (auto& p : items_) p.var.set_requires_grad(on);
}

void ParamSet::zero_grad() {
  for (auto& p : items_) p.var.zero_grad();
}

bool ParamSet::all_finite() const {
  for (const auto& p : items_)
    if (!p.var.value().all_finite()) return false;
  return true;
}

std::size_t ParamSet::total_size() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.var.value().numel();
  return n;
}

Adam::Adam(std::vector<ad::Var> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.shape());
    v_.emplace_back(p.shape());
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (!p.has_grad()) continue;
    const Tensor& g = p.grad();
    Tensor& value = p.mutable_value();
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::size_t i = 0; i < value.numel(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

}  // namespace outpaint
