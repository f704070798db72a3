#include "outpaint/evaluation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <random>

#include "moments.hpp"
#include "outpaint/errors.hpp"

namespace outpaint {

namespace {

// logits = kTemperature * head . f / sqrt(d); features are tanh means, so
// without the factor every row comes out close to uniform
constexpr double kTemperature = 8.0;

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

detail::GaussianFit fit_rows(const Tensor& f) {
  detail::GaussianFit fit(f.dim(1));
  fit.add(f.data(), f.dim(0));
  return fit;
}

}  // namespace

RandomPyramidEmbedder::RandomPyramidEmbedder(std::uint64_t seed, int feature_dim, int classes)
    : seed_(seed), feature_dim_(feature_dim), classes_(classes), pyramid_(seed, {16, 32, 32, feature_dim}) {
  if (feature_dim < 1 || classes < 2) throw PreconditionError("embedder needs d_f >= 1 and at least 2 classes");
  std::mt19937_64 rng(seed ^ 0xc1a55ull);
  head_ = Tensor::randn({classes, feature_dim}, rng);
}

std::string RandomPyramidEmbedder::id() const {
  return "random-pyramid-embedder-" + std::to_string(seed_) + "-" + std::to_string(feature_dim_) + "-" +
         std::to_string(classes_);
}

Tensor RandomPyramidEmbedder::features(const Tensor& images) const {
  if (images.rank() != 4 || images.dim(0) < 1 || images.dim(1) != 3)
    throw ShapeError("embedder input must be [N, 3, H, W], got " + shape_str(images.shape()));
  if (images.dim(2) < 8 || images.dim(3) < 8) throw ShapeError("embedder needs images of at least 8x8");
  const int n = images.dim(0);
  Tensor out({n, feature_dim_});
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    Tensor one = images.slice0(i);
    const Tensor last = pyramid_.features(ad::constant(one.reshaped({1, 3, images.dim(2), images.dim(3)})))
                            .back()
                            .value();
    const int hw = last.dim(2) * last.dim(3);
    for (int c = 0; c < feature_dim_; ++c) {
      double acc = 0.0;
      for (int p = 0; p < hw; ++p) acc += last[c * hw + p];
      out[i * feature_dim_ + c] = acc / hw;
    }
  }
  return out;
}

Tensor RandomPyramidEmbedder::probabilities(const Tensor& images) const {
  const Tensor f = features(images);
  const int n = f.dim(0);
  Tensor p({n, classes_});
  const double gain = kTemperature / std::sqrt(static_cast<double>(feature_dim_));
  for (int i = 0; i < n; ++i) {
    std::vector<double> logits(classes_);
    for (int k = 0; k < classes_; ++k) {
      double acc = 0.0;
      for (int c = 0; c < feature_dim_; ++c) acc += head_[k * feature_dim_ + c] * f[i * feature_dim_ + c];
      logits[k] = gain * acc;
    }
    const double top = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double& l : logits) z += (l = std::exp(l - top));
    for (int k = 0; k < classes_; ++k) p[i * classes_ + k] = logits[k] / z;
  }
  return p;
}

double fid(const Tensor& features_a, const Tensor& features_b) {
  if (features_a.rank() != 2 || features_b.rank() != 2 || features_a.dim(1) != features_b.dim(1))
    throw ShapeError("fid needs two [N, d] feature sets of equal width");
  const int d = features_a.dim(1);
  if (features_a.dim(0) < d + 1 || features_b.dim(0) < d + 1)
    throw RankError("fid needs at least " + std::to_string(d + 1) + " samples per side, got " +
                    std::to_string(features_a.dim(0)) + " and " + std::to_string(features_b.dim(0)));
  const auto fa = fit_rows(features_a), fb = fit_rows(features_b);
  const Eigen::MatrixXd sa = fa.covariance(), sb = fb.covariance();
  const Eigen::MatrixXd root_a = psd_sqrt(sa);
  const Eigen::MatrixXd inner = root_a * sb * root_a;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double value = (fa.mean() - fb.mean()).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
  return std::max(value, 0.0);
}

double inception_score(const Tensor& probs) {
  if (probs.rank() != 2 || probs.dim(0) < 1 || probs.dim(1) < 1) throw ShapeError("probabilities must be [N, K]");
  const int n = probs.dim(0), k = probs.dim(1);
  std::vector<double> marginal(k, 0.0);
  for (int i = 0; i < n; ++i) {
    double sum = 0.0;
    for (int c = 0; c < k; ++c) {
      const double p = probs[i * k + c];
      if (!(p >= 0.0) || !std::isfinite(p)) throw DomainError("negative or non-finite probability");
      sum += p;
      marginal[c] += p / n;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw DomainError("row " + std::to_string(i) + " sums to " + std::to_string(sum));
  }
  double kl = 0.0;
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < k; ++c) {
      const double p = probs[i * k + c];
      if (p > 0.0) kl += p * (std::log(p) - std::log(marginal[c]));
    }
  return std::exp(kl / n);
}

double diversity_score(const std::vector<CandidateSet>& sets, const PerceptualMetric& metric) {
  if (sets.empty()) throw PreconditionError("diversity score needs at least one candidate set");
  const std::size_t m = sets.front().candidates.size();
  double total = 0.0;
  for (const auto& set : sets) {
    if (set.candidates.size() != m) throw PreconditionError("candidate sets differ in m");
    if (m < 2) throw PreconditionError("diversity score needs m >= 2");
    const Tensor& first = set.candidates.front();
    if (first.rank() != 3 || set.mask.shape() != Shape{first.dim(1), first.dim(2)})
      throw ShapeError("candidates must be [C, H, W] with an [H, W] mask");
    const std::size_t hw = set.mask.numel();
    Tensor region(first.shape());
    double open = 0.0;
    for (std::size_t p = 0; p < hw; ++p) {
      const double r = set.mask[p] > 0.5 ? 0.0 : 1.0;
      open += r;
      for (int c = 0; c < first.dim(0); ++c) region[c * hw + p] = r;
    }
    if (open == 0.0) throw DegenerateMaskError("no outpainted pixels to compare");
    std::vector<Tensor> masked;
    for (const auto& cand : set.candidates) {
      if (cand.shape() != first.shape()) throw ShapeError("candidate shapes differ");
      Tensor t = cand;
      for (std::size_t q = 0; q < t.numel(); ++q) t[q] *= region[q];
      masked.push_back(std::move(t));
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = i + 1; j < m; ++j) sum += metric(masked[i], masked[j]);
    total += sum / static_cast<double>(m * (m - 1) / 2);
  }
  return total / static_cast<double>(sets.size());
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["fid"] = fid;
  j["is_mean"] = is_mean;
  j["diversity"] = diversity;
  j["real_count"] = real_count;
  j["generated_count"] = generated_count;
  j["candidate_sets"] = candidate_sets;
  j["embedder"] = embedder;
  return j.dump(2);
}

MetricReport evaluate(const std::vector<Tensor>& real, const std::vector<Tensor>& generated,
                      const std::vector<CandidateSet>& sets, const FeatureEmbedder& embedder) {
  MetricReport r;
  r.embedder = embedder.id();
  r.real_count = static_cast<long>(real.size());
  r.generated_count = static_cast<long>(generated.size());
  r.candidate_sets = static_cast<long>(sets.size());
  if (!generated.empty()) {
    const Tensor gen = stack0(generated);
    r.is_mean = inception_score(embedder.probabilities(gen));
    if (!real.empty()) r.fid = fid(embedder.features(stack0(real)), embedder.features(gen));
  }
  if (!sets.empty()) r.diversity = diversity_score(sets);
  return r;
}

double seam_gradient_ratio(const Tensor& image, const GridSpec& g) {
  g.validate();
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != g.height() || image.dim(2) != g.width())
    throw ShapeError("seam ratio needs a [3, " + std::to_string(g.height()) + ", " + std::to_string(g.width()) +
                     "] image, got " + shape_str(image.shape()));
  if (g.n < 2) throw InvalidGridError("a 1x1 grid has no seams");
  const int H = g.height(), W = g.width();
  // [seam, other] sums and counts, for steps along x and along y
  double sx[2] = {0, 0}, sy[2] = {0, 0};
  long nx[2] = {0, 0}, ny[2] = {0, 0};
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double v = image[(c * H + y) * W + x];
        if (x + 1 < W) {
          const int k = (x + 1) % g.patch_w == 0 ? 0 : 1;
          sx[k] += std::abs(image[(c * H + y) * W + x + 1] - v);
          ++nx[k];
        }
        if (y + 1 < H) {
          const int k = (y + 1) % g.patch_h == 0 ? 0 : 1;
          sy[k] += std::abs(image[(c * H + y + 1) * W + x] - v);
          ++ny[k];
        }
      }
  if (nx[1] == 0 || ny[1] == 0) throw InvalidGridError("patches need at least two pixels per side");
  const double seam = sx[0] / nx[0] + sy[0] / ny[0];
  const double rest = sx[1] / nx[1] + sy[1] / ny[1];
  if (rest <= 0.0) throw DomainError("image has no gradient away from the seams");
  return seam / rest;
}

double seam_gradient_ratio(const std::vector<Tensor>& images, const GridSpec& grid) {
  if (images.empty()) throw PreconditionError("no images");
  double acc = 0.0;
  for (const auto& img : images) acc += seam_gradient_ratio(img, grid);
  return acc / images.size();
}

}  // namespace outpaint
