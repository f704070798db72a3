#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "outpaint/generator.hpp"
#include "outpaint/inversion.hpp"

namespace outpaint {

enum class Direction { kLeft, kRight, kUp, kDown };

Direction parse_direction(const std::string& s);
std::string to_string(Direction d);

struct OutpaintRequest {
  // Either a partial image placed against the side opposite `direction`, or a
  // canvas-sized image whose known pixels are given by `alpha`.
  Tensor reference;
  std::optional<Tensor> alpha;  // [H, W] canvas mask, 1 = known
  Direction direction = Direction::kRight;
  int m = 1;
  std::vector<CategoryVector> categories;  // per cell, categorical models only
  bool blend = true;
};

struct GridPlan {
  Tensor reference;  // [3, H, W], zero outside the mask
  Tensor mask;       // [H, W]
  std::vector<bool> known_cells;  // row-major; a cell is known when fully masked
};

GridPlan plan_grid(const OutpaintRequest& request, const GridSpec& grid);

// reference where mask > 0.5, generated elsewhere.
Tensor compose(const Tensor& reference, const Tensor& generated, const Tensor& mask);

// One seam between a known and an outpainted cell. The halfway patch sits at
// the coordinate midpoint of the two cells, centred on the seam line, and is
// cross-faded into the `overlap` pixels on each side.
struct Seam {
  bool vertical = true;  // true: cells side by side, seam is a pixel column
  int position = 0;      // pixel column (vertical) or row of the seam line
  int span_begin = 0;    // rows (vertical) or columns covered by the seam
  int span_end = 0;
  int overlap = 0;       // W
  PatchCoordinate halfway;
  int outpaint_cell = 0;  // row-major index of the generated neighbour
};

struct BlendPlan {
  std::vector<Seam> seams;
};

BlendPlan plan_blend(const GridPlan& plan, const GridSpec& grid);

// Within each overlap, out = (1 - a) existing + a halfway with a = (k + 0.5)/W
// and k counted from the overlap edge farthest from the seam.
Tensor blend(const Tensor& composed, const std::vector<Tensor>& halfway, const BlendPlan& plan);

// Halfway patches for one code (w, or w_inter for categorical decoders).
std::vector<Tensor> halfway_patches(const LatentDecoder& decoder, const StyleCode& w, const BlendPlan& plan,
                                    const std::vector<CategoryVector>& categories);

struct OutpaintResult {
  GridPlan plan;
  BlendPlan blend_plan;
  InversionResult inversion;
  std::vector<Tensor> candidates;  // composed, and blended when requested
};

struct OutpaintOptions {
  int steps = 800;
  double lr = 0.05;
  Lambdas lambdas;
  std::uint64_t seed = 0;
  InversionHooks hooks;
};

OutpaintResult outpaint(const OutpaintRequest& request, const LatentDecoder& decoder, const PriorStats& stats,
                        const OutpaintOptions& options = {},
                        const PerceptualMetric& metric = default_perceptual_metric());

// Total objective of each candidate's code as an m = 1 problem on the same
// known region. The joint objective's pair terms cannot rank candidates.
std::vector<double> candidate_objectives(const OutpaintResult& result, const LatentDecoder& decoder,
                                         const PriorStats& stats, const Lambdas& lambdas,
                                         const std::vector<CategoryVector>& categories,
                                         const PerceptualMetric& metric = default_perceptual_metric());

struct PanoramaStep {
  std::uint64_t seed = 0;
  int selected = 0;
  std::vector<double> objectives;  // final total objective per candidate
};

struct PanoramaManifest {
  GridSpec grid;
  Direction direction = Direction::kRight;
  int m = 1;
  int initial_width = 0;
  int inversion_steps = 800;
  std::uint64_t seed = 0;
  std::vector<CategoryVector> categories;
  std::vector<PanoramaStep> steps;

  std::string to_json() const;
  static PanoramaManifest from_json(const std::string& text);
};

// Picks one of the candidates at a step; receives the step index and each
// candidate's final objective. Returning an index outside [0, m) is an error.
using Selector = std::function<int(int step, const std::vector<double>& objectives)>;
Selector lowest_objective_selector();
Selector fixed_selector(std::vector<int> choices);

// Throws unless `current` can seed a panorama step on this grid.
void check_panorama_start(const Tensor& current, Direction direction, const GridSpec& grid);

// One panorama extension: m candidate panoramas, each patch_w wider than
// `current`, with each candidate's objective rescored on its own.
struct PanoramaStepResult {
  std::vector<Tensor> images;
  std::vector<double> objectives;
  OutpaintResult outpaint;
};
PanoramaStepResult panorama_candidates(const Tensor& current, Direction direction, int m,
                                       const LatentDecoder& decoder, const PriorStats& stats,
                                       const OutpaintOptions& options = {},
                                       const std::vector<CategoryVector>& categories = {},
                                       const PerceptualMetric& metric = default_perceptual_metric());

struct PanoramaResult {
  Tensor image;
  PanoramaManifest manifest;
};

// Grows `initial` ([3, n*patch_h, >= (n-1)*patch_w]) by patch_w columns per
// step to the right or left. Each step inverts the trailing (n-1) patch
// columns as the known region and appends the chosen candidate's new column.
PanoramaResult panorama(const Tensor& initial, int steps, Direction direction, int m, const Selector& selector,
                        const LatentDecoder& decoder, const PriorStats& stats, const OutpaintOptions& options = {},
                        const std::vector<CategoryVector>& categories = {},
                        const PerceptualMetric& metric = default_perceptual_metric());

// Rebuilds a panorama from its manifest (same seeds and selections).
PanoramaResult replay_panorama(const Tensor& initial, const PanoramaManifest& manifest,
                               const LatentDecoder& decoder, const PriorStats& stats, const Lambdas& lambdas = {},
                               const PerceptualMetric& metric = default_perceptual_metric());

}  // namespace outpaint
