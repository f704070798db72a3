#include "outpaint/generator.hpp"

#include <cmath>
#include <random>

#include "outpaint/errors.hpp"

namespace outpaint {

namespace {

constexpr double kLeakySlope = 0.2;
const double kActGain = std::sqrt(2.0);

std::string layer(const char* prefix, int l, const char* suffix) {
  return std::string(prefix) + "." + std::to_string(l) + "." + suffix;
}

Tensor row_tensor(const std::vector<double>& v) {
  return Tensor({1, static_cast<int>(v.size())}, v);
}

}  // namespace

// ---- Gaussianized space ----------------------------------------------------

double gaussianize(double w) { return w >= 0.0 ? w : kGaussianizeSlope * w; }
double degaussianize(double v) { return v >= 0.0 ? v : v / kGaussianizeSlope; }

GaussianizedCode gaussianize(const StyleCode& w) {
  GaussianizedCode v{w.values};
  for (auto& x : v.values) x = gaussianize(x);
  return v;
}

StyleCode degaussianize(const GaussianizedCode& v) {
  StyleCode w{v.values};
  for (auto& x : w.values) x = degaussianize(x);
  return w;
}

Tensor gaussianize(const Tensor& w) {
  Tensor v = w;
  for (auto& x : v.vec()) x = gaussianize(x);
  return v;
}

Tensor degaussianize(const Tensor& v) {
  Tensor w = v;
  for (auto& x : w.vec()) x = degaussianize(x);
  return w;
}

ad::Var gaussianize(const ad::Var& w) { return ad::leaky_relu(w, kGaussianizeSlope, 1.0); }

// ---- grid ------------------------------------------------------------------

void GridSpec::validate() const {
  if (n <= 0) throw InvalidGridError("grid needs n >= 1, got " + std::to_string(n));
  if (patch_h <= 0 || patch_w <= 0) throw InvalidGridError("patch size must be positive");
}

std::vector<GridCell> coordinate_grid(const GridSpec& grid) {
  grid.validate();
  auto axis = [&](int k) {
    if (grid.n == 1) return 0.0;
    if (k == 1) return -1.0;
    if (k == grid.n) return 1.0;
    return -1.0 + 2.0 * (k - 1) / (grid.n - 1);
  };
  std::vector<GridCell> cells;
  cells.reserve(grid.cells());
  for (int j = 1; j <= grid.n; ++j)
    for (int i = 1; i <= grid.n; ++i) cells.push_back({i, j, {axis(i), axis(j)}});
  return cells;
}

Tensor grid_coordinates(const GridSpec& grid, int batch) {
  const auto cells = coordinate_grid(grid);
  Tensor out({batch * grid.cells(), 2});
  for (int b = 0; b < batch; ++b)
    for (int k = 0; k < grid.cells(); ++k) {
      out[(b * grid.cells() + k) * 2] = cells[k].coord.x;
      out[(b * grid.cells() + k) * 2 + 1] = cells[k].coord.y;
    }
  return out;
}

void check_coordinate(PatchCoordinate c) {
  if (!(c.x >= -1.0 && c.x <= 1.0 && c.y >= -1.0 && c.y <= 1.0))
    throw DomainError("patch coordinate (" + std::to_string(c.x) + ", " + std::to_string(c.y) +
                      ") outside [-1,1]^2");
}

// ---- decoding pipeline -----------------------------------------------------

ad::Var LatentDecoder::fuse(const ad::Var&, const Tensor&) const {
  throw UnsupportedModeError("category fusion requested on a non-categorical model");
}

ad::Var decode_cells(const LatentDecoder& decoder, const ad::Var& v_cells) {
  const GridSpec& grid = decoder.grid();
  const int rows = v_cells.value().dim(0);
  if (rows % grid.cells() != 0)
    throw ShapeError("per-cell code count " + std::to_string(rows) + " is not a multiple of " +
                     std::to_string(grid.cells()));
  const Tensor coords = grid_coordinates(grid, rows / grid.cells());
  return ad::assemble_grid(decoder.synthesize(v_cells, coords), grid.n);
}

ad::Var decode_full(const LatentDecoder& decoder, const ad::Var& w, const Tensor& labels) {
  const GridSpec& grid = decoder.grid();
  if (w.value().rank() != 2 || w.value().dim(1) != decoder.style_dim())
    throw ShapeError("decode_full expects codes [N, " + std::to_string(decoder.style_dim()) +
                     "], got " + shape_str(w.shape()));
  const int batch = w.value().dim(0);
  std::vector<int> index;
  index.reserve(batch * grid.cells());
  for (int b = 0; b < batch; ++b)
    for (int k = 0; k < grid.cells(); ++k) index.push_back(b);
  ad::Var cells = ad::rows(w, index);
  if (decoder.categorical()) {
    if (labels.empty() || labels.dim(0) != batch * grid.cells())
      throw ShapeError("categorical decode needs one label row per cell");
    cells = decoder.fuse(cells, labels);
  } else if (!labels.empty()) {
    throw UnsupportedModeError("labels supplied to a non-categorical model");
  }
  return decode_cells(decoder, gaussianize(cells));
}

// ---- config ----------------------------------------------------------------

void GeneratorConfig::validate() const {
  grid.validate();
  if (z_dim <= 0 || w_dim <= 0) throw ConfigError("latent sizes must be positive");
  if (mapping_layers < 1) throw ConfigError("mapping network needs at least one layer");
  if (channels.empty()) throw ConfigError("synthesis needs at least one resolution");
  const int res = base_resolution << (channels.size() - 1);
  if (res != grid.patch_h || res != grid.patch_w)
    throw ConfigError("synthesis resolution " + std::to_string(res) + " does not match patch " +
                      std::to_string(grid.patch_h) + "x" + std::to_string(grid.patch_w));
  if (categorical && num_classes < 1) throw ConfigError("categorical model needs classes");
  if (!class_names.empty() && static_cast<int>(class_names.size()) != num_classes)
    throw ConfigError("class_names must list num_classes entries");
}

// ---- Generator -------------------------------------------------------------

Generator::Generator(GeneratorConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  build(seed);
}

Generator::Generator(GeneratorConfig config, ParamSet params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  check_params();
}

void Generator::build(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto& c = config_;
  for (int l = 0; l < c.mapping_layers; ++l) {
    const int in = l == 0 ? c.z_dim : c.w_dim;
    params_.add(layer("mapping", l, "weight"),
                Tensor::randn({c.w_dim, in}, rng, 1.0 / c.mapping_lr_mul));
    params_.add(layer("mapping", l, "bias"), Tensor::zeros({c.w_dim}));
  }
  if (c.categorical) {
    params_.add("fuse.0.weight", Tensor::randn({c.w_dim, c.w_dim + c.num_classes}, rng));
    params_.add("fuse.0.bias", Tensor::zeros({c.w_dim}));
    params_.add("fuse.1.weight", Tensor::randn({c.w_dim, c.w_dim}, rng));
    params_.add("fuse.1.bias", Tensor::zeros({c.w_dim}));
  }
  const int style_in = c.w_dim + 2;
  params_.add("synthesis.const",
              Tensor::randn({1, c.channels[0], c.base_resolution, c.base_resolution}, rng));
  for (std::size_t l = 0; l < c.channels.size(); ++l) {
    const int cin = l == 0 ? c.channels[0] + 2 : c.channels[l - 1];
    const int cout = c.channels[l];
    const int li = static_cast<int>(l);
    params_.add(layer("synthesis", li, "affine.weight"), Tensor::randn({cin, style_in}, rng));
    params_.add(layer("synthesis", li, "affine.bias"), Tensor::full({cin}, 1.0));
    params_.add(layer("synthesis", li, "conv.weight"), Tensor::randn({cout, cin, 3, 3}, rng));
    params_.add(layer("synthesis", li, "bias"), Tensor::zeros({cout}));
  }
  const int last = c.channels.back();
  params_.add("torgb.affine.weight", Tensor::randn({last, style_in}, rng));
  params_.add("torgb.affine.bias", Tensor::full({last}, 1.0));
  params_.add("torgb.weight", Tensor::randn({3, last, 1, 1}, rng));
  params_.add("torgb.bias", Tensor::zeros({3}));
}

void Generator::check_params() const {
  // Building a fresh model yields the canonical name/shape list.
  Generator reference(config_, 0);
  const auto& want = reference.params_.items();
  const auto& have = params_.items();
  if (want.size() != have.size())
    throw ShapeError("checkpoint has " + std::to_string(have.size()) + " tensors, model needs " +
                     std::to_string(want.size()));
  for (std::size_t k = 0; k < want.size(); ++k) {
    if (want[k].name != have[k].name || want[k].var.shape() != have[k].var.shape())
      throw ShapeError("tensor " + have[k].name + " " + shape_str(have[k].var.shape()) +
                       " does not match expected " + want[k].name + " " +
                       shape_str(want[k].var.shape()));
  }
  if (!params_.all_finite()) throw DomainError("non-finite generator parameters");
}

ad::Var Generator::map(const ad::Var& z) const {
  if (z.value().rank() != 2 || z.value().dim(1) != config_.z_dim)
    throw ShapeError("map expects z [N, " + std::to_string(config_.z_dim) + "], got " +
                     shape_str(z.shape()));
  ad::Var x = z;
  const double lrmul = config_.mapping_lr_mul;
  for (int l = 0; l < config_.mapping_layers; ++l) {
    const int in = x.value().dim(1);
    x = ad::linear(x, params_.get(layer("mapping", l, "weight")),
                   params_.get(layer("mapping", l, "bias")), lrmul / std::sqrt(in), lrmul);
    x = ad::leaky_relu(x, kLeakySlope, kActGain);
  }
  return x;
}

ad::Var Generator::fuse(const ad::Var& w_inter, const Tensor& labels) const {
  if (!config_.categorical) return LatentDecoder::fuse(w_inter, labels);
  const int n = w_inter.value().dim(0);
  if (labels.rank() != 2 || labels.dim(0) != n || labels.dim(1) != config_.num_classes)
    throw ShapeError("fuse expects labels [" + std::to_string(n) + ", " +
                     std::to_string(config_.num_classes) + "], got " + shape_str(labels.shape()));
  // Residual fusion: w = w_inter + P(w_inter, y).
  ad::Var h = ad::concat_cols(w_inter, ad::constant(labels));
  h = ad::linear(h, params_.get("fuse.0.weight"), params_.get("fuse.0.bias"),
                 1.0 / std::sqrt(h.value().dim(1)), 1.0);
  h = ad::leaky_relu(h, kLeakySlope, kActGain);
  h = ad::linear(h, params_.get("fuse.1.weight"), params_.get("fuse.1.bias"),
                 1.0 / std::sqrt(config_.w_dim), 1.0);
  return ad::add(w_inter, h);
}

ad::Var Generator::synthesize(const ad::Var& v, const Tensor& coords) const {
  const auto& c = config_;
  if (v.value().rank() != 2 || v.value().dim(1) != c.w_dim)
    throw ShapeError("synthesize expects v [N, " + std::to_string(c.w_dim) + "], got " +
                     shape_str(v.shape()));
  const int n = v.value().dim(0);
  if (coords.rank() != 2 || coords.dim(0) != n || coords.dim(1) != 2)
    throw ShapeError("synthesize expects coords [N, 2]");
  for (int k = 0; k < n; ++k) check_coordinate({coords[2 * k], coords[2 * k + 1]});

  const ad::Var style_in = ad::concat_cols(v, ad::constant(coords));
  const int style_width = c.w_dim + 2;
  const int r0 = c.base_resolution;
  Tensor coord_planes({n, 2, r0, r0});
  for (int k = 0; k < n; ++k)
    for (int a = 0; a < 2; ++a)
      for (int p = 0; p < r0 * r0; ++p) coord_planes[(k * 2 + a) * r0 * r0 + p] = coords[2 * k + a];
  ad::Var x = ad::concat_channels(ad::broadcast0(params_.get("synthesis.const"), n),
                                  ad::constant(std::move(coord_planes)));

  for (std::size_t l = 0; l < c.channels.size(); ++l) {
    const int li = static_cast<int>(l);
    if (l > 0) x = ad::upsample2x(x);
    const int cin = x.value().dim(1);
    const ad::Var s = ad::linear(style_in, params_.get(layer("synthesis", li, "affine.weight")),
                                 params_.get(layer("synthesis", li, "affine.bias")),
                                 1.0 / std::sqrt(style_width), 1.0);
    const ad::Var& weight = params_.get(layer("synthesis", li, "conv.weight"));
    const double gain = 1.0 / std::sqrt(cin * 9.0);
    x = ad::conv2d(ad::scale_channels(x, s), weight, gain);
    x = ad::scale_channels(x, ad::demod_coefficients(weight, s, gain));
    x = ad::add_channel_bias(x, params_.get(layer("synthesis", li, "bias")));
    x = ad::leaky_relu(x, kLeakySlope, kActGain);
  }
  const int last = c.channels.back();
  const ad::Var s = ad::linear(style_in, params_.get("torgb.affine.weight"),
                               params_.get("torgb.affine.bias"), 1.0 / std::sqrt(style_width), 1.0);
  x = ad::conv2d(ad::scale_channels(x, s), params_.get("torgb.weight"), 1.0 / std::sqrt(last));
  x = ad::add_channel_bias(x, params_.get("torgb.bias"));
  return ad::tanh(x);
}

StyleCode Generator::map_latent(const LatentCode& z) const {
  if (static_cast<int>(z.values.size()) != config_.z_dim)
    throw ShapeError("latent code has length " + std::to_string(z.values.size()) + ", model needs " +
                     std::to_string(config_.z_dim));
  const ad::Var w = map(ad::constant(row_tensor(z.values)));
  return {w.value().vec()};
}

StyleCode Generator::fuse_category(const StyleCode& w_inter, const CategoryVector& y) const {
  if (!config_.categorical)
    throw UnsupportedModeError("fuse_category called on a non-categorical model");
  if (y.size() != config_.num_classes)
    throw ShapeError("category vector has " + std::to_string(y.size()) + " entries, model has " +
                     std::to_string(config_.num_classes));
  Tensor labels({1, y.size()});
  for (int k = 0; k < y.size(); ++k) labels[k] = y.bits[k] ? 1.0 : 0.0;
  const ad::Var w = fuse(ad::constant(row_tensor(w_inter.values)), labels);
  return {w.value().vec()};
}

Tensor Generator::synthesize_patch(const GaussianizedCode& v, PatchCoordinate c) const {
  check_coordinate(c);
  const ad::Var out = synthesize(ad::constant(row_tensor(v.values)), Tensor({1, 2}, {c.x, c.y}));
  return out.value().reshaped({3, config_.grid.patch_h, config_.grid.patch_w});
}

Tensor Generator::synthesize_full(const std::vector<GaussianizedCode>& codes) const {
  const GridSpec& g = config_.grid;
  if (codes.size() != 1 && static_cast<int>(codes.size()) != g.cells())
    throw ShapeError("expected 1 or " + std::to_string(g.cells()) + " codes, got " +
                     std::to_string(codes.size()));
  Tensor v({g.cells(), config_.w_dim});
  for (int k = 0; k < g.cells(); ++k) {
    const auto& src = codes.size() == 1 ? codes[0] : codes[k];
    if (static_cast<int>(src.values.size()) != config_.w_dim) throw ShapeError("code length mismatch");
    std::copy(src.values.begin(), src.values.end(), v.data() + k * config_.w_dim);
  }
  const ad::Var img = decode_cells(*this, ad::constant(std::move(v)));
  return img.value().reshaped({3, g.height(), g.width()});
}

}  // namespace outpaint
