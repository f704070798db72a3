#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "outpaint/autodiff.hpp"
#include "outpaint/params.hpp"
#include "outpaint/tensor.hpp"

namespace outpaint {

// Slope of the leaky rectifier that maps style space W into the Gaussianized
// space V.
inline constexpr double kGaussianizeSlope = 5.0;

struct LatentCode {
  std::vector<double> values;
};

struct StyleCode {
  std::vector<double> values;
};

struct GaussianizedCode {
  std::vector<double> values;
};

struct PatchCoordinate {
  double x = 0.0;
  double y = 0.0;
};

// n x n grid of micro-patches. Cell (i, j) is 1-based with i the column (x)
// and j the row (y); it covers columns [(i-1)*patch_w, i*patch_w) and rows
// [(j-1)*patch_h, j*patch_h) of the full image.
struct GridSpec {
  int n = 2;
  int patch_h = 32;
  int patch_w = 32;

  int height() const { return n * patch_h; }
  int width() const { return n * patch_w; }
  int cells() const { return n * n; }
  // Row-major cell order used for patch batches: (j-1)*n + (i-1).
  int cell_index(int i, int j) const { return (j - 1) * n + (i - 1); }
  void validate() const;
  bool operator==(const GridSpec&) const = default;
};

struct GridCell {
  int i = 1;
  int j = 1;
  PatchCoordinate coord;
};

// Multi-hot per-patch class label.
struct CategoryVector {
  std::vector<std::uint8_t> bits;

  static CategoryVector zeros(int k) { return {std::vector<std::uint8_t>(k, 0)}; }
  int size() const { return static_cast<int>(bits.size()); }
  bool operator==(const CategoryVector&) const = default;
};

// ---- Gaussianized space ----------------------------------------------------
double gaussianize(double w);
double degaussianize(double v);
GaussianizedCode gaussianize(const StyleCode& w);
StyleCode degaussianize(const GaussianizedCode& v);
Tensor gaussianize(const Tensor& w);
Tensor degaussianize(const Tensor& v);
ad::Var gaussianize(const ad::Var& w);

// Cells in row-major order (j outer, i inner). Endpoints are exactly -1 and 1;
// a 1x1 grid sits at the origin.
std::vector<GridCell> coordinate_grid(const GridSpec& grid);

// Coordinates for `batch` full images, one row per patch in (b, row, col)
// order: shape [batch * n * n, 2].
Tensor grid_coordinates(const GridSpec& grid, int batch);

// Everything latent optimisation needs from a generator. The trained
// Generator implements it; tests substitute small analytic decoders.
class LatentDecoder {
 public:
  virtual ~LatentDecoder() = default;

  virtual int latent_dim() const = 0;
  virtual int style_dim() const = 0;
  virtual const GridSpec& grid() const = 0;
  virtual bool categorical() const { return false; }
  virtual int num_classes() const { return 0; }

  // z [N, latent_dim] -> w (or w_inter for categorical models) [N, style_dim]
  virtual ad::Var map(const ad::Var& z) const = 0;
  // w_inter [N, style_dim], y [N, K] -> w [N, style_dim]
  virtual ad::Var fuse(const ad::Var& w_inter, const Tensor& labels) const;
  // v [N, style_dim], coords [N, 2] -> patches [N, 3, patch_h, patch_w]
  virtual ad::Var synthesize(const ad::Var& v, const Tensor& coords) const = 0;
};

// Full-image decode of per-image codes w [N, style_dim] through
// (fuse) -> gaussianize -> synthesize at every grid cell -> concat.
// `labels` is empty for non-categorical decoders, else [N * n * n, K] in
// (b, row, col) order.
ad::Var decode_full(const LatentDecoder& decoder, const ad::Var& w, const Tensor& labels = {});

// Full-image decode from per-cell Gaussianized codes [N * n * n, style_dim].
ad::Var decode_cells(const LatentDecoder& decoder, const ad::Var& v_cells);

struct GeneratorConfig {
  int z_dim = 128;
  int w_dim = 128;
  int num_classes = 8;
  bool categorical = false;
  GridSpec grid;
  int mapping_layers = 4;
  double mapping_lr_mul = 0.01;
  int base_resolution = 4;
  // Feature channels per synthesis resolution, starting at base_resolution
  // and doubling; the last entry runs at the patch resolution.
  std::vector<int> channels{32, 32, 16, 16};
  std::vector<std::string> class_names;

  void validate() const;
};

// Style-based coordinate-conditioned patch generator.
//
// The coordinate enters twice: appended to v before every per-layer style
// projection, and tiled as two extra channels on the learned constant input.
// Patches never read each other's activations, so full images are exactly
// the concatenation of independently generated patches.
class Generator final : public LatentDecoder {
 public:
  Generator(GeneratorConfig config, std::uint64_t seed);
  Generator(GeneratorConfig config, ParamSet params);

  const GeneratorConfig& config() const { return config_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }
  // Marks parameters as constants for inversion and concurrent use.
  void freeze() { params_.set_requires_grad(false); }

  int latent_dim() const override { return config_.z_dim; }
  int style_dim() const override { return config_.w_dim; }
  const GridSpec& grid() const override { return config_.grid; }
  bool categorical() const override { return config_.categorical; }
  int num_classes() const override { return config_.num_classes; }

  ad::Var map(const ad::Var& z) const override;
  ad::Var fuse(const ad::Var& w_inter, const Tensor& labels) const override;
  ad::Var synthesize(const ad::Var& v, const Tensor& coords) const override;

  // Value-level entry points.
  StyleCode map_latent(const LatentCode& z) const;
  StyleCode fuse_category(const StyleCode& w_inter, const CategoryVector& y) const;
  Tensor synthesize_patch(const GaussianizedCode& v, PatchCoordinate c) const;
  // One shared code, or exactly n*n per-cell codes in row-major cell order.
  Tensor synthesize_full(const std::vector<GaussianizedCode>& codes) const;

 private:
  void build(std::uint64_t seed);
  void check_params() const;

  GeneratorConfig config_;
  ParamSet params_;
};

// Throws DomainError if c is outside [-1, 1]^2.
void check_coordinate(PatchCoordinate c);

}  // namespace outpaint
