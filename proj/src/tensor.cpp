#include "outpaint/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "outpaint/errors.hpp"

namespace outpaint {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_))
    throw ShapeError("data size " + std::to_string(data_.size()) +
                     " does not match shape " + shape_str(shape_));
}

Tensor Tensor::randn(Shape shape, std::mt19937_64& rng, double stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data_) v = dist(rng);
  return t;
}

Tensor Tensor::uniform(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data_) v = dist(rng);
  return t;
}

int Tensor::dim(int axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank())
    throw ShapeError("axis out of range for shape " + shape_str(shape_));
  return shape_[axis];
}

double& Tensor::at(int n, int c, int h, int w) {
  return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

double Tensor::at(int n, int c, int h, int w) const {
  return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

Tensor Tensor::reshaped(Shape shape) const {
  Tensor t = *this;
  t.reshape(std::move(shape));
  return t;
}

void Tensor::reshape(Shape shape) {
  if (shape_numel(shape) != data_.size())
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  shape_ = std::move(shape);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::slice0(int index) const {
  if (rank() == 0 || index < 0 || index >= shape_[0])
    throw ShapeError("slice index out of range for " + shape_str(shape_));
  Shape inner(shape_.begin() + 1, shape_.end());
  if (inner.empty()) inner = {1};
  const std::size_t stride = data_.size() / shape_[0];
  std::vector<double> d(data_.begin() + index * stride, data_.begin() + (index + 1) * stride);
  return Tensor(std::move(inner), std::move(d));
}

void Tensor::set_slice0(int index, const Tensor& src) {
  const std::size_t stride = data_.size() / shape_[0];
  if (src.numel() != stride) throw ShapeError("slice size mismatch");
  std::copy(src.data_.begin(), src.data_.end(), data_.begin() + index * stride);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Tensor::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

Tensor stack0(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("stack0 of nothing");
  Shape inner = parts[0].shape();
  std::vector<double> data;
  data.reserve(parts[0].numel() * parts.size());
  for (const auto& p : parts) {
    if (p.shape() != inner) throw ShapeError("stack0 shape mismatch");
    data.insert(data.end(), p.vec().begin(), p.vec().end());
  }
  Shape out{static_cast<int>(parts.size())};
  out.insert(out.end(), inner.begin(), inner.end());
  return Tensor(std::move(out), std::move(data));
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape() == b.shape(); }

}  // namespace outpaint
