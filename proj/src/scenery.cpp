#include "outpaint/scenery.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <random>

#include "outpaint/errors.hpp"
#include "outpaint/image_io.hpp"

namespace outpaint {

namespace {

enum Class : std::uint8_t { kSky, kCloud, kMountain, kTree, kGrass, kWater, kSand, kTower };

using Rgb = std::array<double, 3>;

Rgb mix(const Rgb& a, const Rgb& b, double t) {
  return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}

struct Canvas {
  int h, w;
  std::vector<Rgb> rgb;
  std::vector<std::uint8_t> ids;

  void put(int y, int x, const Rgb& c, Class k) {
    if (y < 0 || y >= h || x < 0 || x >= w) return;
    rgb[y * w + x] = c;
    ids[y * w + x] = k;
  }
};

}  // namespace

const std::vector<std::string>& scenery_class_names() {
  static const std::vector<std::string> names{"sky",   "cloud", "mountain", "tree",
                                              "grass", "water", "sand",     "tower"};
  return names;
}

DatasetRecord scenery_record(std::uint64_t seed, int index, int height, int width) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), 0x5ce7u};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };

  const int h = height, w = width;
  Canvas cv{h, w, std::vector<Rgb>(h * w), std::vector<std::uint8_t>(h * w, kSky)};
  const double sx = w / 64.0, sy = h / 64.0;

  // sky: vertical gradient, warm or cool
  const double dusk = u(rng);
  const Rgb zenith = mix({0.15, 0.35, 0.85}, {0.35, 0.25, 0.6}, dusk);
  const Rgb haze = mix({0.7, 0.85, 1.0}, {1.0, 0.65, 0.4}, dusk);
  const int horizon = static_cast<int>(uni(0.45, 0.65) * h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) cv.put(y, x, mix(zenith, haze, std::min(1.0, y / double(horizon))), kSky);

  const int clouds = static_cast<int>(uni(0, 4));
  for (int c = 0; c < clouds; ++c) {
    const double cx = uni(0, w), cy = uni(0.05, 0.3) * h, rx = uni(5, 12) * sx, ry = uni(1.5, 3.5) * sy;
    const Rgb col = mix({0.95, 0.95, 0.97}, {0.8, 0.75, 0.8}, dusk);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
        if (dx * dx + dy * dy <= 1.0) cv.put(y, x, col, kCloud);
      }
  }

  // mountain ridge: a few sinusoids above the horizon
  if (u(rng) < 0.8) {
    const double base = horizon, amp = uni(0.1, 0.3) * h;
    const double f1 = uni(0.5, 2.0), f2 = uni(2.0, 5.0), p1 = uni(0, 6.3), p2 = uni(0, 6.3);
    const Rgb rock = mix({0.35, 0.35, 0.42}, {0.45, 0.38, 0.35}, u(rng));
    for (int x = 0; x < w; ++x) {
      const double t = (x + 0.5) / w * 2 * M_PI;
      const double top = base - amp * (0.6 + 0.25 * std::sin(f1 * t + p1) + 0.15 * std::sin(f2 * t + p2));
      for (int y = std::max(0, static_cast<int>(std::ceil(top))); y < horizon; ++y)
        cv.put(y, x, mix(rock, {0.9, 0.9, 0.95}, y < top + 2 * sy ? 0.6 : 0.0), kMountain);
    }
  }

  // ground: up to three horizontal bands below the horizon
  const Class ground_kinds[3] = {kGrass, kWater, kSand};
  const Rgb ground_cols[3] = {{0.2, 0.55, 0.2}, {0.15, 0.35, 0.65}, {0.85, 0.75, 0.5}};
  int y0 = horizon;
  const int bands = 1 + static_cast<int>(uni(0, 3));
  int kind = static_cast<int>(uni(0, 3));
  for (int b = 0; b < bands; ++b) {
    const int y1 = b + 1 == bands ? h : y0 + static_cast<int>((h - y0) * uni(0.3, 0.6));
    const double tilt = uni(-0.15, 0.15);
    for (int x = 0; x < w; ++x) {
      const int lo = b == 0 ? y0 : y0 + static_cast<int>(std::lround(tilt * (x - w / 2.0)));
      for (int y = std::max(lo, horizon); y < h; ++y) {
        const double shade = 0.8 + 0.2 * (y - horizon) / std::max(1.0, double(h - horizon));
        const Rgb& c = ground_cols[kind];
        cv.put(y, x, {c[0] * shade, c[1] * shade, c[2] * shade}, ground_kinds[kind]);
      }
    }
    y0 = y1;
    kind = (kind + 1 + static_cast<int>(uni(0, 2))) % 3;
  }

  // trees on grass near the horizon
  const int trees = static_cast<int>(uni(0, 5));
  for (int t = 0; t < trees; ++t) {
    const int bx = static_cast<int>(uni(0, w)), by = std::min(h - 1, horizon + static_cast<int>(uni(0, 6) * sy));
    if (cv.ids[by * w + bx] != kGrass) continue;
    const double th = uni(8, 16) * sy, tw = uni(3, 6) * sx;
    const Rgb leaf = mix({0.05, 0.35, 0.1}, {0.15, 0.45, 0.15}, u(rng));
    for (int y = static_cast<int>(by - th); y <= by; ++y) {
      const double frac = (by - y) / th;
      const int half = static_cast<int>(std::lround(tw * (1.0 - frac)));
      for (int x = bx - half; x <= bx + half; ++x) cv.put(y, x, leaf, kTree);
    }
  }

  // a tower standing on the horizon
  if (u(rng) < 0.35) {
    const int tx = static_cast<int>(uni(0.1, 0.9) * w), tw = std::max(2, static_cast<int>(uni(2, 5) * sx));
    const int top = static_cast<int>(horizon - uni(0.2, 0.4) * h);
    const Rgb wall = mix({0.55, 0.5, 0.45}, {0.7, 0.3, 0.25}, u(rng));
    for (int y = top; y < horizon + 2; ++y)
      for (int x = tx; x < tx + tw; ++x) cv.put(y, x, wall, kTower);
  }

  DatasetRecord rec;
  rec.image = Tensor({3, h, w});
  std::normal_distribution<double> noise(0.0, 0.02);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        rec.image[(c * h + y) * w + x] = std::clamp(cv.rgb[y * w + x][c] * 2.0 - 1.0 + noise(rng), -1.0, 1.0);
  rec.segmentation = {h, w, std::move(cv.ids)};
  return rec;
}

std::vector<DatasetRecord> synth_scenery_dataset(int count, std::uint64_t seed, int height, int width) {
  if (count < 1) throw PreconditionError("dataset needs count >= 1");
  std::vector<DatasetRecord> out(count);
#pragma omp parallel for schedule(static)
  for (int k = 0; k < count; ++k) out[k] = scenery_record(seed, k, height, width);
  return out;
}

std::vector<CategoryVector> derive_patch_labels(const Segmentation& seg, const GridSpec& grid,
                                                int num_classes, double threshold) {
  grid.validate();
  if (seg.height != grid.height() || seg.width != grid.width())
    throw ShapeError("segmentation is " + std::to_string(seg.height) + "x" + std::to_string(seg.width) +
                     ", grid needs " + std::to_string(grid.height()) + "x" + std::to_string(grid.width()));
  std::vector<CategoryVector> out(grid.cells(), CategoryVector::zeros(num_classes));
  const long pixels = static_cast<long>(grid.patch_h) * grid.patch_w;
  for (int j = 1; j <= grid.n; ++j)
    for (int i = 1; i <= grid.n; ++i) {
      std::vector<long> counts(num_classes, 0);
      for (int y = (j - 1) * grid.patch_h; y < j * grid.patch_h; ++y)
        for (int x = (i - 1) * grid.patch_w; x < i * grid.patch_w; ++x) {
          const int id = seg.at(y, x);
          if (id >= num_classes)
            throw MappingError("class id " + std::to_string(id) + " outside the " +
                               std::to_string(num_classes) + " configured classes");
          ++counts[id];
        }
      auto& bits = out[grid.cell_index(i, j)].bits;
      for (int k = 0; k < num_classes; ++k)
        bits[k] = static_cast<double>(counts[k]) >= threshold * pixels ? 1 : 0;
    }
  return out;
}

void save_dataset(const std::filesystem::path& dir, const std::vector<DatasetRecord>& records) {
  std::filesystem::create_directories(dir);
  for (std::size_t k = 0; k < records.size(); ++k) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "%06zu", k);
    write_image(dir / (std::string(stem) + ".png"), records[k].image);
    if (records[k].labeled()) {
      const auto& s = records[k].segmentation;
      write_png(dir / (std::string(stem) + ".seg"), Raster{s.width, s.height, 1, s.ids});
    }
  }
}

std::vector<DatasetRecord> load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
  std::vector<std::filesystem::path> images;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == ".png") images.push_back(e.path());
  std::sort(images.begin(), images.end());
  if (images.empty()) throw IoError("no PNG images in " + dir.string());
  std::vector<DatasetRecord> out;
  for (const auto& p : images) {
    DatasetRecord rec;
    rec.image = read_image(p);
    auto seg_path = p;
    seg_path.replace_extension(".seg");
    if (std::filesystem::exists(seg_path)) {
      const Raster r = read_png(seg_path);
      if (r.width != rec.image.dim(2) || r.height != rec.image.dim(1))
        throw ShapeError("segmentation size differs from image for " + p.string());
      rec.segmentation.height = r.height;
      rec.segmentation.width = r.width;
      for (int y = 0; y < r.height; ++y)
        for (int x = 0; x < r.width; ++x) rec.segmentation.ids.push_back(r.at(y, x, 0));
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace outpaint
