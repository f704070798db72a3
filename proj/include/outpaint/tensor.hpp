#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace outpaint {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor of doubles. Images use NCHW.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor full(Shape shape, double v) { return Tensor(std::move(shape), v); }
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev = 1.0);
  static Tensor uniform(Shape shape, std::mt19937_64& rng, double lo, double hi);

  const Shape& shape() const { return shape_; }
  int dim(int axis) const;
  int rank() const { return static_cast<int>(shape_.size()); }
  std::size_t numel() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(int n, int c, int h, int w);
  double at(int n, int c, int h, int w) const;

  Tensor reshaped(Shape shape) const;
  void reshape(Shape shape);
  void fill(double v);

  // Row `index` of the leading axis as its own tensor.
  Tensor slice0(int index) const;
  void set_slice0(int index, const Tensor& src);

  bool all_finite() const;
  double sum() const;
  double max_abs() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Leading-axis concatenation.
Tensor stack0(const std::vector<Tensor>& parts);

bool same_shape(const Tensor& a, const Tensor& b);

}  // namespace outpaint
