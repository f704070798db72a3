#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>

#include "outpaint/checkpoint.hpp"
#include "outpaint/errors.hpp"
#include "outpaint/generator.hpp"
#include "test_util.hpp"

namespace outpaint {
namespace {

namespace fs = std::filesystem;

GeneratorConfig small_config(int n = 2, bool categorical = false) {
  GeneratorConfig c;
  c.z_dim = 12;
  c.w_dim = 10;
  c.num_classes = 4;
  c.categorical = categorical;
  c.grid = {n, 8, 8};
  c.channels = {6, 5};
  return c;
}

std::vector<double> randn(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

TEST(Gaussianize, Branches) {
  const auto v = gaussianize(StyleCode{{2.0, 0.0}});
  EXPECT_EQ(v.values, (std::vector<double>{2.0, 0.0}));
  EXPECT_EQ(gaussianize(StyleCode{{-1.0}}).values, (std::vector<double>{-5.0}));
  EXPECT_EQ(degaussianize(gaussianize(StyleCode{{-0.4, 3.0}})).values,
            (std::vector<double>{-0.4, 3.0}));
}

TEST(Gaussianize, StrictlyIncreasingAndInverted) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> d(0.0, 10.0);
  double prev_w = -1e9, prev_v = gaussianize(prev_w);
  std::vector<double> ws(10000);
  for (auto& w : ws) w = d(rng);
  std::sort(ws.begin(), ws.end());
  for (double w : ws) {
    const double v = gaussianize(w);
    if (w > prev_w) EXPECT_GT(v, prev_v);
    EXPECT_NEAR(degaussianize(v), w, 1e-12 * std::max(1.0, std::abs(w)));
    prev_w = w;
    prev_v = v;
  }
}

TEST(CoordinateGrid, TwoByTwoEndpoints) {
  const auto cells = coordinate_grid({2, 32, 32});
  ASSERT_EQ(cells.size(), 4u);
  auto at = [&](int i, int j) {
    for (const auto& c : cells)
      if (c.i == i && c.j == j) return c.coord;
    ADD_FAILURE() << "missing cell";
    return PatchCoordinate{};
  };
  EXPECT_EQ(at(1, 1).x, -1.0);
  EXPECT_EQ(at(1, 1).y, -1.0);
  EXPECT_EQ(at(1, 2).x, -1.0);
  EXPECT_EQ(at(1, 2).y, 1.0);
  EXPECT_EQ(at(2, 1).x, 1.0);
  EXPECT_EQ(at(2, 1).y, -1.0);
  EXPECT_EQ(at(2, 2).x, 1.0);
  EXPECT_EQ(at(2, 2).y, 1.0);
}

TEST(CoordinateGrid, MiddleAndDegenerate) {
  const auto three = coordinate_grid({3, 8, 8});
  EXPECT_EQ(three[4].i, 2);
  EXPECT_EQ(three[4].j, 2);
  EXPECT_EQ(three[4].coord.x, 0.0);
  EXPECT_EQ(three[4].coord.y, 0.0);
  const auto one = coordinate_grid({1, 8, 8});
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].coord.x, 0.0);
  EXPECT_EQ(one[0].coord.y, 0.0);
  EXPECT_THROW(coordinate_grid({0, 8, 8}), InvalidGridError);
  EXPECT_THROW(coordinate_grid({-2, 8, 8}), InvalidGridError);
}

TEST(CoordinateGrid, SpacingAndSymmetry) {
  for (int n = 2; n <= 9; ++n) {
    const auto cells = coordinate_grid({n, 4, 4});
    for (const auto& c : cells) {
      if (c.i < n) {
        const auto& right = cells[(c.j - 1) * n + c.i];
        EXPECT_NEAR(right.coord.x - c.coord.x, 2.0 / (n - 1), 1e-15);
      }
      // (x, y) -> (-x, -y) with index reversal
      const auto& mirror = cells[(n - c.j) * n + (n - c.i)];
      EXPECT_NEAR(mirror.coord.x, -c.coord.x, 1e-15);
      EXPECT_NEAR(mirror.coord.y, -c.coord.y, 1e-15);
    }
  }
}

TEST(Generator, MapLatentDeterministicAndBiasPath) {
  Generator g(small_config(), 5);
  const LatentCode zero{std::vector<double>(12, 0.0)};
  const auto a = g.map_latent(zero);
  const auto b = g.map_latent(zero);
  EXPECT_EQ(a.values, b.values);
  ASSERT_EQ(a.values.size(), 10u);
  const LatentCode z{randn(12, 1)};
  EXPECT_EQ(g.map_latent(z).values, g.map_latent(LatentCode{z.values}).values);
  EXPECT_THROW(g.map_latent(LatentCode{std::vector<double>(7, 0.0)}), ShapeError);
}

TEST(Generator, IdentityWeightMapping) {
  // One mapping layer whose effective weight is the identity: w = lrelu_0.2(z) * sqrt(2).
  GeneratorConfig c = small_config();
  c.z_dim = c.w_dim = 10;
  c.mapping_layers = 1;
  Generator g(c, 2);
  ad::Var weight = g.params().get("mapping.0.weight");
  Tensor& w = weight.mutable_value();
  w.fill(0.0);
  for (int k = 0; k < 10; ++k) w[k * 10 + k] = std::sqrt(10.0) / c.mapping_lr_mul;
  std::vector<double> z = {0.3, -0.2, 1.0, -1.5, 0.0, 2.0, -0.1, 0.7, -0.9, 0.05};
  const auto out = g.map_latent({z});
  for (int k = 0; k < 10; ++k) {
    const double expect = std::sqrt(2.0) * (z[k] >= 0 ? z[k] : 0.2 * z[k]);
    EXPECT_NEAR(out.values[k], expect, 1e-12);
  }
}

TEST(Generator, FuseCategory) {
  Generator plain(small_config(), 1);
  EXPECT_THROW(plain.fuse_category({randn(10, 2)}, CategoryVector::zeros(4)), UnsupportedModeError);

  Generator cat(small_config(2, true), 1);
  const StyleCode w{randn(10, 3)};
  CategoryVector y{{1, 0, 0, 1}};
  EXPECT_EQ(cat.fuse_category(w, y).values, cat.fuse_category(w, CategoryVector{{1, 0, 0, 1}}).values);
  EXPECT_NE(cat.fuse_category(w, y).values, cat.fuse_category(w, CategoryVector{{0, 1, 0, 0}}).values);
  EXPECT_THROW(cat.fuse_category(w, CategoryVector::zeros(3)), ShapeError);

  // zero residual projection -> output equals the input code
  for (const char* name : {"fuse.1.weight", "fuse.1.bias"}) {
    ad::Var p = cat.params().get(name);
    p.mutable_value().fill(0.0);
  }
  EXPECT_EQ(cat.fuse_category(w, y).values, w.values);
}

TEST(Generator, SynthesizePatchContract) {
  Generator g(small_config(), 3);
  const GaussianizedCode v{randn(10, 4)};
  const Tensor a = g.synthesize_patch(v, {-1, -1});
  EXPECT_EQ(a.shape(), (Shape{3, 8, 8}));
  EXPECT_EQ(a.vec(), g.synthesize_patch(v, {-1, -1}).vec());
  EXPECT_NE(a.vec(), g.synthesize_patch(v, {1, -1}).vec());
  const Tensor half = g.synthesize_patch(v, {0, -1});
  EXPECT_EQ(half.shape(), (Shape{3, 8, 8}));
  EXPECT_LE(a.max_abs(), 1.0);
  EXPECT_THROW(g.synthesize_patch(v, {1.5, 0}), DomainError);
  EXPECT_THROW(g.synthesize_patch(v, {0, -1.01}), DomainError);
}

TEST(Generator, SynthesizeFullIsCellwiseConcatenation) {
  Generator g(small_config(), 4);
  const GaussianizedCode v{randn(10, 5)};
  const Tensor full = g.synthesize_full({v});
  ASSERT_EQ(full.shape(), (Shape{3, 16, 16}));
  const Tensor tl = g.synthesize_patch(v, {-1, -1});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) ASSERT_EQ(full[(c * 16 + y) * 16 + x], tl[(c * 8 + y) * 8 + x]);

  EXPECT_EQ(g.synthesize_full({v, v, v, v}).vec(), full.vec());
  EXPECT_THROW(g.synthesize_full({v, v}), ShapeError);

  // distinct per-cell codes: every block equals its own independent patch
  std::vector<GaussianizedCode> codes;
  for (int k = 0; k < 4; ++k) codes.push_back({randn(10, 10 + k)});
  const Tensor mixed = g.synthesize_full(codes);
  for (const auto& cell : coordinate_grid(g.grid())) {
    const Tensor p = g.synthesize_patch(codes[g.grid().cell_index(cell.i, cell.j)], cell.coord);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
          ASSERT_EQ(mixed[(c * 16 + (cell.j - 1) * 8 + y) * 16 + (cell.i - 1) * 8 + x],
                    p[(c * 8 + y) * 8 + x]);
  }
}

TEST(Generator, SingleCellGrid) {
  Generator g(small_config(1), 6);
  const GaussianizedCode v{randn(10, 7)};
  EXPECT_EQ(g.synthesize_full({v}).vec(), g.synthesize_patch(v, {0, 0}).vec());
}

TEST(Generator, DefaultShapeContract) {
  GeneratorConfig c;
  Generator g(c, 1);
  const GaussianizedCode v{randn(128, 2)};
  EXPECT_EQ(g.synthesize_full({v}).shape(), (Shape{3, 64, 64}));
}

TEST(Generator, SynthesisGradient) {
  Generator g(small_config(), 8);
  g.freeze();
  const Tensor v = testing::random_tensor({2, 10}, 9);
  const Tensor coords({2, 2}, {-1.0, 0.5, 0.25, 1.0});
  const double err = testing::grad_check(
      [&](const std::vector<ad::Var>& x) { return g.synthesize(x[0], coords); }, {v}, 1e-5);
  EXPECT_LT(err, 1e-6);
}

TEST(Generator, ParameterGradients) {
  GeneratorConfig c = small_config();
  c.channels = {3, 2};
  c.grid = {2, 8, 8};
  c.mapping_layers = 2;
  Generator g(c, 9);
  const Tensor z = testing::random_tensor({1, 12}, 10);
  auto loss = [&] {
    ad::Var w = gaussianize(g.map(ad::constant(z)));
    return testing::project(decode_cells(g, ad::rows(w, {0, 0, 0, 0})), 4);
  };
  g.params().zero_grad();
  ad::backward(loss());
  for (const char* name : {"mapping.1.weight", "synthesis.0.affine.weight", "synthesis.1.conv.weight",
                           "torgb.weight", "synthesis.const"}) {
    ad::Var p = g.params().get(name);
    Tensor& v = p.mutable_value();
    const Tensor grad = p.grad();
    double worst = 0.0;
    for (std::size_t k = 0; k < v.numel(); k += std::max<std::size_t>(1, v.numel() / 12)) {
      const double orig = v[k], h = 1e-5;
      v[k] = orig + h;
      const double up = loss().item();
      v[k] = orig - h;
      const double down = loss().item();
      v[k] = orig;
      const double numeric = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(grad[k] - numeric) / std::max(1.0, std::abs(numeric)));
    }
    EXPECT_LT(worst, 1e-6) << name;
  }
}

TEST(Checkpoint, BitExactRoundTrip) {
  const fs::path root = fs::temp_directory_path() / "outpaint_ckpt_test";
  fs::remove_all(root);
  GeneratorConfig c = small_config(2, true);
  c.class_names = {"sky", "tree", "water", "rock"};
  Generator g(c, 11);
  DiscriminatorConfig dc;
  dc.image_h = dc.image_w = 16;
  dc.channels = {4, 4};
  dc.categorical = true;
  dc.num_classes = 4;
  Discriminator d(dc, 12);
  checkpoint::save(root / "a", g, &d);

  Generator loaded = checkpoint::load_generator(root / "a");
  auto loaded_d = checkpoint::load_discriminator(root / "a");
  ASSERT_TRUE(loaded_d.has_value());
  checkpoint::save(root / "b", loaded, &*loaded_d);

  auto bytes = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  for (const char* f : {"manifest.json", "weights.bin", "discriminator.bin"})
    EXPECT_EQ(bytes(root / "a" / f), bytes(root / "b" / f)) << f;

  EXPECT_EQ(loaded.config().class_names, c.class_names);
  EXPECT_TRUE(loaded.categorical());
  ParamSet rounded = g.params();
  for (std::size_t k = 0; k < rounded.items().size(); ++k) {
    const Tensor& orig = g.params().items()[k].var.value();
    const Tensor& back = loaded.params().items()[k].var.value();
    for (std::size_t i = 0; i < orig.numel(); ++i)
      ASSERT_EQ(back[i], static_cast<double>(static_cast<float>(orig[i])));
  }
  fs::remove_all(root);
}

TEST(Checkpoint, MissingManifestIsIoError) {
  EXPECT_THROW(checkpoint::load_generator("/nonexistent/outpaint"), IoError);
}

}  // namespace
}  // namespace outpaint
