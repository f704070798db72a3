#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "outpaint/generator.hpp"
#include "outpaint/perceptual.hpp"
#include "outpaint/tensor.hpp"

namespace outpaint {

// Fixed image -> feature map plus a classifier head for the Inception Score.
class FeatureEmbedder {
 public:
  virtual ~FeatureEmbedder() = default;
  virtual std::string id() const = 0;
  virtual int feature_dim() const = 0;
  virtual int num_classes() const = 0;
  // images [N, 3, H, W] -> [N, feature_dim]
  virtual Tensor features(const Tensor& images) const = 0;
  // images [N, 3, H, W] -> rows of class probabilities [N, num_classes]
  virtual Tensor probabilities(const Tensor& images) const = 0;
};

// Frozen random conv pyramid; features are the spatial means of the last
// level, the head is a fixed random linear map followed by softmax.
class RandomPyramidEmbedder final : public FeatureEmbedder {
 public:
  explicit RandomPyramidEmbedder(std::uint64_t seed = 0x5eed, int feature_dim = 64, int classes = 10);

  std::string id() const override;
  int feature_dim() const override { return feature_dim_; }
  int num_classes() const override { return classes_; }
  Tensor features(const Tensor& images) const override;
  Tensor probabilities(const Tensor& images) const override;

 private:
  std::uint64_t seed_;
  int feature_dim_, classes_;
  RandomPyramidMetric pyramid_;
  Tensor head_;  // [classes, feature_dim]
};

// Frechet distance between the Gaussians fitted (unbiased covariance) to the
// rows of a and b. Needs more rows than columns on both sides.
double fid(const Tensor& features_a, const Tensor& features_b);

// exp(mean_x KL(p(y|x) || p(y))) over rows of probs [N, K].
double inception_score(const Tensor& probs);

// One outpainting request: m >= 2 candidates [3, H, W] and the shared canvas
// mask [H, W] (1 = known).
struct CandidateSet {
  std::vector<Tensor> candidates;
  Tensor mask;
};

// Mean over sets of the mean pairwise perceptual distance between candidates,
// restricted to the outpainted (mask <= 0.5) region.
double diversity_score(const std::vector<CandidateSet>& sets,
                       const PerceptualMetric& metric = default_perceptual_metric());

struct MetricReport {
  double fid = 0.0;
  double is_mean = 1.0;
  double diversity = 0.0;
  long real_count = 0;
  long generated_count = 0;
  long candidate_sets = 0;
  std::string embedder;

  std::string to_json() const;
};

// Any of the three inputs may be empty; the matching metrics are then left
// at their defaults. FID needs both image sets.
MetricReport evaluate(const std::vector<Tensor>& real, const std::vector<Tensor>& generated,
                      const std::vector<CandidateSet>& sets, const FeatureEmbedder& embedder);

// How much sharper the patch boundaries are than the rest of the image:
// mean |pixel step| across the internal grid lines (x and y together) over
// the mean |pixel step| between every other pair of neighbours. 1 means the
// boundaries are invisible in gradient terms. Averaged over images [3, H, W].
double seam_gradient_ratio(const Tensor& image, const GridSpec& grid);
double seam_gradient_ratio(const std::vector<Tensor>& images, const GridSpec& grid);

}  // namespace outpaint
