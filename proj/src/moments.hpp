#pragma once

#include <Eigen/Dense>

namespace outpaint::detail {

// Running mean and unbiased covariance, merged chunk by chunk (Chan et al.)
// so the summation order depends only on the chunking.
class GaussianFit {
 public:
  explicit GaussianFit(int dim) : mean_(Eigen::VectorXd::Zero(dim)), m2_(Eigen::MatrixXd::Zero(dim, dim)) {}

  // rows: n x dim, row-major
  void add(const double* rows, long n) {
    if (n == 0) return;
    const int d = static_cast<int>(mean_.size());
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(rows, n, d);
    const Eigen::VectorXd mb = x.colwise().mean().transpose();
    const Eigen::MatrixXd centered = x.rowwise() - mb.transpose();
    const Eigen::MatrixXd m2b = centered.transpose() * centered;
    const double na = static_cast<double>(count_), nb = static_cast<double>(n), nt = na + nb;
    const Eigen::VectorXd delta = mb - mean_;
    mean_ += delta * (nb / nt);
    m2_ += m2b + delta * delta.transpose() * (na * nb / nt);
    count_ += n;
  }

  long count() const { return count_; }
  const Eigen::VectorXd& mean() const { return mean_; }
  Eigen::MatrixXd covariance() const { return m2_ / static_cast<double>(count_ - 1); }

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd m2_;
  long count_ = 0;
};

}  // namespace outpaint::detail
