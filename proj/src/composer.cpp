#include "outpaint/composer.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "outpaint/errors.hpp"

namespace outpaint {

using nlohmann::ordered_json;

Direction parse_direction(const std::string& s) {
  if (s == "left") return Direction::kLeft;
  if (s == "right") return Direction::kRight;
  if (s == "up") return Direction::kUp;
  if (s == "down") return Direction::kDown;
  throw PreconditionError("unknown direction '" + s + "' (left, right, up, down)");
}

std::string to_string(Direction d) {
  switch (d) {
    case Direction::kLeft: return "left";
    case Direction::kRight: return "right";
    case Direction::kUp: return "up";
    case Direction::kDown: return "down";
  }
  return "right";
}

// ---- planning --------------------------------------------------------------

GridPlan plan_grid(const OutpaintRequest& request, const GridSpec& grid) {
  grid.validate();
  const int H = grid.height(), W = grid.width();
  const Tensor& ref = request.reference;
  if (ref.rank() != 3 || ref.dim(0) != 3) throw ShapeError("reference must be [3, h, w]");
  const int h = ref.dim(1), w = ref.dim(2);
  if (h > H || w > W)
    throw ExtentError("reference " + std::to_string(h) + "x" + std::to_string(w) + " exceeds the " +
                      std::to_string(H) + "x" + std::to_string(W) + " canvas");
  GridPlan plan{Tensor({3, H, W}), Tensor({H, W}), std::vector<bool>(grid.cells(), false)};

  if (request.alpha) {
    const Tensor& a = *request.alpha;
    if (h != H || w != W) throw ExtentError("an alpha mask needs a canvas-sized reference");
    if (a.shape() != Shape{H, W}) throw ShapeError("alpha must be [H, W] of the canvas");
    plan.mask = a;
  } else {
    // Place the reference against the side we extend away from.
    const int y0 = request.direction == Direction::kUp ? H - h : 0;
    const int x0 = request.direction == Direction::kLeft ? W - w : 0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) plan.mask[(y0 + y) * W + x0 + x] = 1.0;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) plan.reference[(c * H + y0 + y) * W + x0 + x] = ref[(c * h + y) * w + x];
  }
  if (request.alpha) {
    for (int c = 0; c < 3; ++c)
      for (int p = 0; p < H * W; ++p) plan.reference[c * H * W + p] = plan.mask[p] > 0.5 ? ref[c * H * W + p] : 0.0;
  }

  for (int j = 1; j <= grid.n; ++j)
    for (int i = 1; i <= grid.n; ++i) {
      bool full = true;
      for (int y = (j - 1) * grid.patch_h; y < j * grid.patch_h && full; ++y)
        for (int x = (i - 1) * grid.patch_w; x < i * grid.patch_w; ++x)
          if (!(plan.mask[y * W + x] > 0.5)) {
            full = false;
            break;
          }
      plan.known_cells[grid.cell_index(i, j)] = full;
    }
  return plan;
}

Tensor compose(const Tensor& reference, const Tensor& generated, const Tensor& mask) {
  if (reference.shape() != generated.shape() || reference.rank() != 3 ||
      mask.shape() != Shape{reference.dim(1), reference.dim(2)})
    throw ShapeError("compose: reference " + shape_str(reference.shape()) + ", generated " +
                     shape_str(generated.shape()) + ", mask " + shape_str(mask.shape()));
  Tensor out = generated;
  const std::size_t hw = mask.numel();
  for (int c = 0; c < reference.dim(0); ++c)
    for (std::size_t p = 0; p < hw; ++p)
      if (mask[p] > 0.5) out[c * hw + p] = reference[c * hw + p];
  return out;
}

// ---- blending --------------------------------------------------------------

BlendPlan plan_blend(const GridPlan& plan, const GridSpec& grid) {
  BlendPlan bp;
  const auto cells = coordinate_grid(grid);
  auto known = [&](int i, int j) { return static_cast<bool>(plan.known_cells[grid.cell_index(i, j)]); };
  auto coord = [&](int i, int j) { return cells[grid.cell_index(i, j)].coord; };
  for (int j = 1; j <= grid.n; ++j)
    for (int i = 1; i < grid.n; ++i)
      if (known(i, j) != known(i + 1, j)) {
        Seam s;
        s.vertical = true;
        s.position = i * grid.patch_w;
        s.span_begin = (j - 1) * grid.patch_h;
        s.span_end = j * grid.patch_h;
        s.overlap = grid.patch_w / 2;
        s.halfway = {(coord(i, j).x + coord(i + 1, j).x) / 2, coord(i, j).y};
        s.outpaint_cell = known(i, j) ? grid.cell_index(i + 1, j) : grid.cell_index(i, j);
        bp.seams.push_back(s);
      }
  for (int j = 1; j < grid.n; ++j)
    for (int i = 1; i <= grid.n; ++i)
      if (known(i, j) != known(i, j + 1)) {
        Seam s;
        s.vertical = false;
        s.position = j * grid.patch_h;
        s.span_begin = (i - 1) * grid.patch_w;
        s.span_end = i * grid.patch_w;
        s.overlap = grid.patch_h / 2;
        s.halfway = {coord(i, j).x, (coord(i, j).y + coord(i, j + 1).y) / 2};
        s.outpaint_cell = known(i, j) ? grid.cell_index(i, j + 1) : grid.cell_index(i, j);
        bp.seams.push_back(s);
      }
  return bp;
}

Tensor blend(const Tensor& composed, const std::vector<Tensor>& halfway, const BlendPlan& plan) {
  if (composed.rank() != 3) throw ShapeError("blend: image must be [C, H, W]");
  if (halfway.size() != plan.seams.size()) throw ShapeError("blend: one halfway patch per seam");
  const int C = composed.dim(0), H = composed.dim(1), W = composed.dim(2);
  Tensor out = composed;
  for (std::size_t s = 0; s < plan.seams.size(); ++s) {
    const Seam& seam = plan.seams[s];
    const int ov = seam.overlap;
    const int along = seam.vertical ? W : H, across = seam.vertical ? H : W;
    if (ov < 1 || seam.position - ov < 0 || seam.position + ov > along || seam.span_begin < 0 ||
        seam.span_end > across || seam.span_begin >= seam.span_end)
      throw ExtentError("blend plan range outside the canvas");
    const Tensor& patch = halfway[s];
    const int ph = seam.vertical ? seam.span_end - seam.span_begin : 2 * ov;
    const int pw = seam.vertical ? 2 * ov : seam.span_end - seam.span_begin;
    if (patch.shape() != Shape{C, ph, pw})
      throw ShapeError("halfway patch " + shape_str(patch.shape()) + " does not cover the seam overlap");
    for (int t = -ov; t < ov; ++t) {
      // k counts from the far edge of the overlap on this side of the seam
      const int k = t < 0 ? t + ov : ov - 1 - t;
      const double a = (k + 0.5) / ov;
      const int pos = seam.position + t;
      for (int q = seam.span_begin; q < seam.span_end; ++q) {
        const int y = seam.vertical ? q : pos, x = seam.vertical ? pos : q;
        const int py = seam.vertical ? q - seam.span_begin : t + ov;
        const int px = seam.vertical ? t + ov : q - seam.span_begin;
        for (int c = 0; c < C; ++c) {
          double& o = out[(c * H + y) * W + x];
          o = (1.0 - a) * o + a * patch[(c * ph + py) * pw + px];
        }
      }
    }
  }
  return out;
}

std::vector<Tensor> halfway_patches(const LatentDecoder& decoder, const StyleCode& w, const BlendPlan& plan,
                                    const std::vector<CategoryVector>& categories) {
  std::vector<Tensor> out;
  if (plan.seams.empty()) return out;
  const int d = decoder.style_dim(), n = static_cast<int>(plan.seams.size());
  const GridSpec& g = decoder.grid();
  ad::Var codes = ad::constant(Tensor({n, d}, [&] {
    std::vector<double> rows;
    for (int s = 0; s < n; ++s) rows.insert(rows.end(), w.values.begin(), w.values.end());
    return rows;
  }()));
  if (decoder.categorical()) {
    const int k = decoder.num_classes();
    Tensor labels({n, k});
    for (int s = 0; s < n; ++s)
      for (int b = 0; b < k; ++b) labels[s * k + b] = categories.at(plan.seams[s].outpaint_cell).bits[b];
    codes = decoder.fuse(codes, labels);
  }
  Tensor coords({n, 2});
  for (int s = 0; s < n; ++s) {
    check_coordinate(plan.seams[s].halfway);
    coords[2 * s] = plan.seams[s].halfway.x;
    coords[2 * s + 1] = plan.seams[s].halfway.y;
  }
  const Tensor patches = decoder.synthesize(gaussianize(codes), coords).value();
  for (int s = 0; s < n; ++s) {
    const Seam& seam = plan.seams[s];
    // crop the part of the full patch that straddles the seam
    const Tensor p = patches.slice0(s);
    const int ph = g.patch_h, pw = g.patch_w, ov = seam.overlap;
    const int oh = seam.vertical ? ph : 2 * ov, ow = seam.vertical ? 2 * ov : pw;
    const int y0 = seam.vertical ? 0 : ph / 2 - ov, x0 = seam.vertical ? pw / 2 - ov : 0;
    Tensor crop({3, oh, ow});
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) crop[(c * oh + y) * ow + x] = p[(c * ph + y0 + y) * pw + x0 + x];
    out.push_back(std::move(crop));
  }
  return out;
}

// ---- outpainting -----------------------------------------------------------

OutpaintResult outpaint(const OutpaintRequest& request, const LatentDecoder& decoder, const PriorStats& stats,
                        const OutpaintOptions& options, const PerceptualMetric& metric) {
  OutpaintResult r;
  r.plan = plan_grid(request, decoder.grid());
  InversionProblem problem;
  problem.reference = r.plan.reference;
  problem.mask = r.plan.mask;
  problem.m = request.m;
  problem.lambdas = options.lambdas;
  problem.categories = request.categories;
  problem.steps = options.steps;
  problem.lr = options.lr;
  problem.seed = options.seed;
  r.inversion = invert(problem, decoder, stats, metric, options.hooks);
  r.blend_plan = plan_blend(r.plan, decoder.grid());
  for (int i = 0; i < request.m; ++i) {
    Tensor img = r.inversion.composed[i];
    if (request.blend && !r.blend_plan.seams.empty())
      img = blend(img, halfway_patches(decoder, r.inversion.codes[i], r.blend_plan, request.categories),
                  r.blend_plan);
    r.candidates.push_back(std::move(img));
  }
  return r;
}

std::vector<double> candidate_objectives(const OutpaintResult& result, const LatentDecoder& decoder,
                                         const PriorStats& stats, const Lambdas& lambdas,
                                         const std::vector<CategoryVector>& categories,
                                         const PerceptualMetric& metric) {
  InversionProblem p;
  p.reference = result.plan.reference;
  p.mask = result.plan.mask;
  p.lambdas = lambdas;
  p.categories = categories;
  std::vector<double> out;
  for (const auto& code : result.inversion.codes) {
    ad::Var w = ad::constant(Tensor({1, decoder.style_dim()}, code.values));
    out.push_back(total_objective(p, w, decoder, stats, metric).terms.total);
  }
  return out;
}

// ---- panorama --------------------------------------------------------------

std::string PanoramaManifest::to_json() const {
  ordered_json j;
  j["format"] = "outpaint-panorama";
  j["version"] = 1;
  j["grid"] = {{"n", grid.n}, {"patch_h", grid.patch_h}, {"patch_w", grid.patch_w}};
  j["direction"] = to_string(direction);
  j["m"] = m;
  j["initial_width"] = initial_width;
  j["inversion_steps"] = inversion_steps;
  j["seed"] = seed;
  ordered_json cats = ordered_json::array();
  for (const auto& y : categories) cats.push_back(y.bits);
  j["categories"] = cats;
  ordered_json st = ordered_json::array();
  for (const auto& s : steps) st.push_back({{"seed", s.seed}, {"selected", s.selected}, {"objectives", s.objectives}});
  j["steps"] = st;
  return j.dump(2);
}

PanoramaManifest PanoramaManifest::from_json(const std::string& text) {
  try {
    const auto j = ordered_json::parse(text);
    PanoramaManifest m;
    m.grid = {j.at("grid").at("n"), j.at("grid").at("patch_h"), j.at("grid").at("patch_w")};
    m.direction = parse_direction(j.at("direction"));
    m.m = j.at("m");
    m.initial_width = j.at("initial_width");
    m.inversion_steps = j.at("inversion_steps");
    m.seed = j.at("seed");
    for (const auto& y : j.at("categories")) m.categories.push_back({y.get<std::vector<std::uint8_t>>()});
    for (const auto& s : j.at("steps"))
      m.steps.push_back({s.at("seed"), s.at("selected"), s.at("objectives").get<std::vector<double>>()});
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed panorama manifest: ") + e.what());
  }
}

Selector lowest_objective_selector() {
  return [](int, const std::vector<double>& obj) {
    return static_cast<int>(std::min_element(obj.begin(), obj.end()) - obj.begin());
  };
}

Selector fixed_selector(std::vector<int> choices) {
  return [choices = std::move(choices)](int step, const std::vector<double>&) {
    if (step >= static_cast<int>(choices.size())) throw PreconditionError("no selection recorded for this step");
    return choices[step];
  };
}

void check_panorama_start(const Tensor& current, Direction direction, const GridSpec& g) {
  if (direction != Direction::kLeft && direction != Direction::kRight)
    throw UnsupportedModeError("panoramas extend left or right");
  if (g.n < 2) throw InvalidGridError("panoramas need n >= 2");
  const int known_w = (g.n - 1) * g.patch_w;
  if (current.rank() != 3 || current.dim(0) != 3 || current.dim(1) != g.height() || current.dim(2) < known_w)
    throw ExtentError("panorama start must be [3, " + std::to_string(g.height()) + ", >= " + std::to_string(known_w) +
                      "]");
}

namespace {

Tensor columns(const Tensor& img, int x0, int x1) {
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2), w = x1 - x0;
  Tensor out({C, H, w});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < w; ++x) out[(c * H + y) * w + x] = img[(c * H + y) * W + x0 + x];
  return out;
}

Tensor hconcat(const Tensor& a, const Tensor& b) {
  const int C = a.dim(0), H = a.dim(1), wa = a.dim(2), wb = b.dim(2), W = wa + wb;
  Tensor out({C, H, W});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < wa; ++x) out[(c * H + y) * W + x] = a[(c * H + y) * wa + x];
      for (int x = 0; x < wb; ++x) out[(c * H + y) * W + wa + x] = b[(c * H + y) * wb + x];
    }
  return out;
}

std::uint64_t step_seed(std::uint64_t base, int step) {
  return base * 0x9e3779b97f4a7c15ull + static_cast<std::uint64_t>(step) + 1;
}

PanoramaResult run_panorama(const Tensor& initial, int steps, Direction direction, int m, const Selector& selector,
                            const LatentDecoder& decoder, const PriorStats& stats, const OutpaintOptions& options,
                            const std::vector<CategoryVector>& categories, const PerceptualMetric& metric,
                            const std::vector<std::uint64_t>* seeds) {
  const GridSpec& g = decoder.grid();
  if (steps < 0) throw PreconditionError("panorama steps must be >= 0");
  check_panorama_start(initial, direction, g);
  PanoramaResult res;
  res.manifest.grid = g;
  res.manifest.direction = direction;
  res.manifest.m = m;
  res.manifest.initial_width = initial.dim(2);
  res.manifest.inversion_steps = options.steps;
  res.manifest.seed = options.seed;
  res.manifest.categories = categories;
  Tensor pano = initial;
  for (int s = 0; s < steps; ++s) {
    OutpaintOptions opt = options;
    opt.seed = seeds ? (*seeds)[s] : step_seed(options.seed, s);
    PanoramaStepResult step = panorama_candidates(pano, direction, m, decoder, stats, opt, categories, metric);
    const int pick = selector(s, step.objectives);
    if (pick < 0 || pick >= m)
      throw PreconditionError("selector index " + std::to_string(pick) + " out of range [0, " + std::to_string(m) +
                              ")");
    res.manifest.steps.push_back({opt.seed, pick, step.objectives});
    pano = std::move(step.images[pick]);
  }
  res.image = std::move(pano);
  return res;
}

}  // namespace

PanoramaStepResult panorama_candidates(const Tensor& current, Direction direction, int m,
                                       const LatentDecoder& decoder, const PriorStats& stats,
                                       const OutpaintOptions& options, const std::vector<CategoryVector>& categories,
                                       const PerceptualMetric& metric) {
  const GridSpec& g = decoder.grid();
  check_panorama_start(current, direction, g);
  const int known_w = (g.n - 1) * g.patch_w, W = current.dim(2);
  const bool right = direction == Direction::kRight;
  OutpaintRequest req;
  req.reference = right ? columns(current, W - known_w, W) : columns(current, 0, known_w);
  req.direction = direction;
  req.m = m;
  req.categories = categories;
  PanoramaStepResult r;
  r.outpaint = outpaint(req, decoder, stats, options, metric);
  r.objectives = candidate_objectives(r.outpaint, decoder, stats, options.lambdas, categories, metric);
  for (int i = 0; i < m; ++i) {
    // blending may have touched the known columns, so they are replaced too
    const Tensor& cand = r.outpaint.candidates[i];
    r.images.push_back(right ? hconcat(columns(current, 0, W - known_w), cand)
                             : hconcat(cand, columns(current, known_w, W)));
  }
  return r;
}

PanoramaResult panorama(const Tensor& initial, int steps, Direction direction, int m, const Selector& selector,
                        const LatentDecoder& decoder, const PriorStats& stats, const OutpaintOptions& options,
                        const std::vector<CategoryVector>& categories, const PerceptualMetric& metric) {
  return run_panorama(initial, steps, direction, m, selector, decoder, stats, options, categories, metric, nullptr);
}

PanoramaResult replay_panorama(const Tensor& initial, const PanoramaManifest& manifest,
                               const LatentDecoder& decoder, const PriorStats& stats, const Lambdas& lambdas,
                               const PerceptualMetric& metric) {
  if (!(manifest.grid == decoder.grid())) throw PreconditionError("manifest grid differs from the model");
  if (initial.rank() != 3 || initial.dim(2) != manifest.initial_width)
    throw PreconditionError("initial image width differs from the manifest");
  std::vector<std::uint64_t> seeds;
  std::vector<int> picks;
  for (const auto& s : manifest.steps) {
    seeds.push_back(s.seed);
    picks.push_back(s.selected);
  }
  OutpaintOptions opt;
  opt.steps = manifest.inversion_steps;
  opt.lambdas = lambdas;
  opt.seed = manifest.seed;
  return run_panorama(initial, static_cast<int>(manifest.steps.size()), manifest.direction, manifest.m,
                      fixed_selector(picks), decoder, stats, opt, manifest.categories, metric, &seeds);
}

}  // namespace outpaint
