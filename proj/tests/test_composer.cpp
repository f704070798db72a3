#include <gtest/gtest.h>

#include <algorithm>

#include "mocks.hpp"
#include "outpaint/composer.hpp"
#include "outpaint/errors.hpp"
#include "test_util.hpp"

namespace outpaint {
namespace {

using testing::constant_seam;
using testing::max_column_jump;
using testing::SeamCase;
using testing::TinyDecoder;

const GridSpec kGrid{2, 32, 32};

OutpaintRequest request(int h, int w, Direction d) {
  OutpaintRequest r;
  r.reference = testing::random_tensor({3, h, w}, 1);
  r.direction = d;
  return r;
}

TEST(PlanGrid, ExtendRight) {
  const GridPlan p = plan_grid(request(64, 32, Direction::kRight), kGrid);
  EXPECT_EQ(p.known_cells, (std::vector<bool>{true, false, true, false}));
  EXPECT_EQ(p.mask[0], 1.0);
  EXPECT_EQ(p.mask[31], 1.0);
  EXPECT_EQ(p.mask[32], 0.0);
  EXPECT_EQ(p.reference[40], 0.0);
}

TEST(PlanGrid, ExtendLeftUpDown) {
  EXPECT_EQ(plan_grid(request(64, 32, Direction::kLeft), kGrid).known_cells,
            (std::vector<bool>{false, true, false, true}));
  EXPECT_EQ(plan_grid(request(32, 64, Direction::kUp), kGrid).known_cells,
            (std::vector<bool>{false, false, true, true}));
  EXPECT_EQ(plan_grid(request(32, 64, Direction::kDown), kGrid).known_cells,
            (std::vector<bool>{true, true, false, false}));
  // a partial cell is not known
  EXPECT_EQ(plan_grid(request(64, 40, Direction::kRight), kGrid).known_cells,
            (std::vector<bool>{true, false, true, false}));
}

TEST(PlanGrid, ReferenceIsPlacedVerbatim) {
  const OutpaintRequest r = request(32, 64, Direction::kUp);
  const GridPlan p = plan_grid(r, kGrid);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 64; ++x) {
        EXPECT_EQ(p.reference[(c * 64 + 32 + y) * 64 + x], r.reference[(c * 32 + y) * 64 + x]);
        EXPECT_EQ(p.reference[(c * 64 + y) * 64 + x], 0.0);
      }
}

TEST(PlanGrid, AlphaPassthroughAndErrors) {
  OutpaintRequest r = request(64, 64, Direction::kRight);
  Tensor alpha({64, 64});
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 64; ++x) alpha[y * 64 + x] = 1.0;
  r.alpha = alpha;
  const GridPlan p = plan_grid(r, kGrid);
  EXPECT_EQ(p.mask.vec(), alpha.vec());
  EXPECT_EQ(p.known_cells, (std::vector<bool>{true, true, false, false}));

  EXPECT_THROW(plan_grid(request(65, 32, Direction::kRight), kGrid), ExtentError);
  EXPECT_THROW(plan_grid(request(64, 80, Direction::kRight), kGrid), ExtentError);
  r.alpha = Tensor({32, 64});
  EXPECT_THROW(plan_grid(r, kGrid), ShapeError);
  OutpaintRequest small = request(32, 32, Direction::kRight);
  small.alpha = Tensor({64, 64});
  EXPECT_THROW(plan_grid(small, kGrid), ExtentError);
}

TEST(Compose, SelectsByMaskAndIsIdempotent) {
  const Tensor ref = testing::random_tensor({3, 8, 8}, 1), gen = testing::random_tensor({3, 8, 8}, 2);
  const Tensor mask = testing::random_tensor({8, 8}, 3, 0, 1);
  const Tensor once = compose(ref, gen, mask);
  EXPECT_EQ(compose(ref, once, mask).vec(), once.vec());
  for (int c = 0; c < 3; ++c)
    for (int p = 0; p < 64; ++p) EXPECT_EQ(once[c * 64 + p], mask[p] > 0.5 ? ref[c * 64 + p] : gen[c * 64 + p]);
  EXPECT_EQ(compose(ref, gen, Tensor({8, 8}, 1.0)).vec(), ref.vec());
  EXPECT_EQ(compose(ref, gen, Tensor({8, 8}, 0.0)).vec(), gen.vec());
  EXPECT_THROW(compose(ref, gen, Tensor({8, 7})), ShapeError);
}

TEST(PlanBlend, SeamsBetweenKnownAndGeneratedCells) {
  const BlendPlan b = plan_blend(plan_grid(request(64, 32, Direction::kRight), kGrid), kGrid);
  ASSERT_EQ(b.seams.size(), 2u);
  for (const auto& s : b.seams) {
    EXPECT_TRUE(s.vertical);
    EXPECT_EQ(s.position, 32);
    EXPECT_EQ(s.overlap, 16);
    EXPECT_EQ(s.halfway.x, 0.0);
  }
  EXPECT_EQ(b.seams[0].halfway.y, -1.0);
  EXPECT_EQ(b.seams[1].halfway.y, 1.0);
  EXPECT_EQ(b.seams[0].outpaint_cell, 1);
  EXPECT_EQ(b.seams[1].outpaint_cell, 3);

  const BlendPlan up = plan_blend(plan_grid(request(32, 64, Direction::kUp), kGrid), kGrid);
  ASSERT_EQ(up.seams.size(), 2u);
  EXPECT_FALSE(up.seams[0].vertical);
  EXPECT_EQ(up.seams[0].halfway.y, 0.0);
  EXPECT_EQ(up.seams[0].outpaint_cell, 0);

  GridPlan all = plan_grid(request(64, 64, Direction::kRight), kGrid);
  EXPECT_TRUE(plan_blend(all, kGrid).seams.empty());
}

TEST(Blend, MidpointOfZeroOneSeam) {
  SeamCase sc = constant_seam(0.0, 1.0, 0.5, 16);
  const Tensor out = blend(sc.image, sc.halfway, sc.plan);
  const int W = 64;
  // innermost columns each side of the seam
  EXPECT_NEAR(out[31], 0.5 - 1.0 / 64, 1e-12);
  EXPECT_NEAR(out[32], 0.5 + 1.0 / 64, 1e-12);
  EXPECT_NEAR(0.5 * (out[31] + out[32]), 0.5, 1.0 / 32);
  // outside the overlap nothing changes
  EXPECT_EQ(out[15], 0.0);
  EXPECT_EQ(out[48], 1.0);
  EXPECT_EQ(out[W - 1], 1.0);
  EXPECT_LE(max_column_jump(out), 1.0 / 16 + 1e-12);
}

TEST(Blend, ConstantSeamJumpShrinksByOverlap) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1), t(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    const double l = u(rng), r = u(rng), h = l + t(rng) * (r - l);
    const int ov = 1 + trial % 20;
    SeamCase sc = constant_seam(l, r, h, ov);
    const double before = max_column_jump(sc.image);
    EXPECT_NEAR(before, std::abs(r - l), 1e-15);
    EXPECT_LE(max_column_jump(blend(sc.image, sc.halfway, sc.plan)), before / ov + 1e-12);
  }
}

TEST(Blend, FixedPointAndConvexity) {
  SeamCase sc = constant_seam(0.3, 0.3, 0.3, 8);
  EXPECT_EQ(blend(sc.image, sc.halfway, sc.plan).vec(), sc.image.vec());
  for (int trial = 0; trial < 20; ++trial) {
    SeamCase rnd = constant_seam(0, 0, 0, 8);
    rnd.image = testing::random_tensor(rnd.image.shape(), 10 + trial);
    rnd.halfway[0] = testing::random_tensor(rnd.halfway[0].shape(), 50 + trial);
    const Tensor out = blend(rnd.image, rnd.halfway, rnd.plan);
    const int W = 32, H = 4;
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 8; x < 24; ++x) {
          const double a = rnd.image[(c * H + y) * W + x], b = rnd.halfway[0][(c * H + y) * 16 + x - 8];
          const double o = out[(c * H + y) * W + x];
          EXPECT_GE(o, std::min(a, b) - 1e-15);
          EXPECT_LE(o, std::max(a, b) + 1e-15);
        }
  }
}

TEST(Blend, RejectsBadPlans) {
  SeamCase sc = constant_seam(0, 1, 0.5, 4);
  EXPECT_THROW(blend(sc.image, {}, sc.plan), ShapeError);
  SeamCase wide = sc;
  wide.plan.seams[0].overlap = 9;
  EXPECT_THROW(blend(wide.image, wide.halfway, wide.plan), ExtentError);
  SeamCase tall = sc;
  tall.plan.seams[0].span_end = 5;
  EXPECT_THROW(blend(tall.image, tall.halfway, tall.plan), ExtentError);
  SeamCase patch = sc;
  patch.halfway[0] = Tensor({3, 4, 7});
  EXPECT_THROW(blend(patch.image, patch.halfway, patch.plan), ShapeError);
}

TEST(HalfwayPatches, CentreCropOfMidpointPatch) {
  TinyDecoder dec(4, {2, 8, 8});
  const GridPlan gp = plan_grid({testing::random_tensor({3, 16, 8}, 1)}, dec.grid());
  const BlendPlan bp = plan_blend(gp, dec.grid());
  const StyleCode w{{0.2, -0.4, 0.9, 0.1}};
  const auto patches = halfway_patches(dec, w, bp, {});
  ASSERT_EQ(patches.size(), 2u);
  const Tensor coords({1, 2}, {0.0, -1.0});
  const Tensor full =
      dec.synthesize(gaussianize(ad::constant(Tensor({1, 4}, w.values))), coords).value().slice0(0);
  ASSERT_EQ(patches[0].shape(), (Shape{3, 8, 8}));
  EXPECT_EQ(patches[0].vec(), full.vec());  // overlap 4 on each side covers the whole 8-wide patch
}

PriorStats unit_prior(int d) {
  std::mt19937_64 rng(3);
  return prior_from_samples(Tensor::randn({40 * d, d}, rng));
}

TEST(Outpaint, CandidatesKeepKnownPixelsOutsideTheBlend) {
  TinyDecoder dec(4, {2, 8, 8});
  const PriorStats prior = unit_prior(4);
  OutpaintRequest r{testing::random_tensor({3, 16, 8}, 4), std::nullopt, Direction::kRight, 3, {}, true};
  OutpaintOptions opt;
  opt.steps = 20;
  const OutpaintResult out = outpaint(r, dec, prior, opt);
  ASSERT_EQ(out.candidates.size(), 3u);
  for (const auto& cand : out.candidates)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 4; ++x) EXPECT_EQ(cand[(c * 16 + y) * 16 + x], r.reference[(c * 16 + y) * 8 + x]);
  r.blend = false;
  const OutpaintResult raw = outpaint(r, dec, prior, opt);
  EXPECT_EQ(raw.candidates[1].vec(), raw.inversion.composed[1].vec());
}

TEST(Panorama, WidthAccounting) {
  TinyDecoder dec(4, {2, 8, 8});
  const PriorStats prior = unit_prior(4);
  OutpaintOptions opt;
  opt.steps = 3;
  const Tensor start = testing::random_tensor({3, 16, 16}, 6);
  const auto zero = panorama(start, 0, Direction::kRight, 2, lowest_objective_selector(), dec, prior, opt);
  EXPECT_EQ(zero.image.vec(), start.vec());
  for (int steps = 1; steps <= 3; ++steps)
    for (Direction d : {Direction::kRight, Direction::kLeft}) {
      const auto p = panorama(start, steps, d, 2, lowest_objective_selector(), dec, prior, opt);
      EXPECT_EQ(p.image.dim(2), 16 + steps * 8);
      EXPECT_EQ(p.manifest.steps.size(), static_cast<std::size_t>(steps));
    }
  // the untouched head of the start image survives a rightward step
  const auto one = panorama(start, 1, Direction::kRight, 1, lowest_objective_selector(), dec, prior, opt);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 8; ++x) EXPECT_EQ(one.image[y * 24 + x], start[y * 16 + x]);
}

TEST(Panorama, SelectorAndModeErrors) {
  TinyDecoder dec(4, {2, 8, 8});
  const PriorStats prior = unit_prior(4);
  OutpaintOptions opt;
  opt.steps = 2;
  const Tensor start = testing::random_tensor({3, 16, 8}, 7);
  auto bad = [](int, const std::vector<double>&) { return 2; };
  EXPECT_THROW(panorama(start, 1, Direction::kRight, 2, bad, dec, prior, opt), PreconditionError);
  EXPECT_THROW(panorama(start, 1, Direction::kUp, 2, lowest_objective_selector(), dec, prior, opt),
               UnsupportedModeError);
  EXPECT_THROW(panorama(testing::random_tensor({3, 16, 4}, 1), 1, Direction::kRight, 1,
                        lowest_objective_selector(), dec, prior, opt),
               ExtentError);
  EXPECT_THROW(panorama(start, -1, Direction::kRight, 1, lowest_objective_selector(), dec, prior, opt),
               PreconditionError);
}

TEST(Panorama, ManifestRoundTripReplaysIdentically) {
  TinyDecoder dec(4, {2, 8, 8});
  const PriorStats prior = unit_prior(4);
  OutpaintOptions opt;
  opt.steps = 4;
  opt.seed = 12;
  const Tensor start = testing::random_tensor({3, 16, 16}, 8);
  const auto pick_last = [](int, const std::vector<double>& o) { return static_cast<int>(o.size()) - 1; };
  const auto p = panorama(start, 3, Direction::kLeft, 3, pick_last, dec, prior, opt);
  const PanoramaManifest m = PanoramaManifest::from_json(p.manifest.to_json());
  EXPECT_EQ(m.to_json(), p.manifest.to_json());
  for (const auto& s : m.steps) EXPECT_EQ(s.selected, 2);
  EXPECT_NE(m.steps[0].seed, m.steps[1].seed);
  const auto again = replay_panorama(start, m, dec, prior);
  EXPECT_EQ(again.image.vec(), p.image.vec());
  EXPECT_EQ(again.manifest.to_json(), p.manifest.to_json());
  EXPECT_THROW(PanoramaManifest::from_json("{}"), ConfigError);
  EXPECT_THROW(replay_panorama(testing::random_tensor({3, 16, 24}, 1), m, dec, prior), PreconditionError);
}

TEST(Direction, ParseAndPrint) {
  for (Direction d : {Direction::kLeft, Direction::kRight, Direction::kUp, Direction::kDown})
    EXPECT_EQ(parse_direction(to_string(d)), d);
  EXPECT_THROW(parse_direction("north"), PreconditionError);
}

}  // namespace
}  // namespace outpaint
