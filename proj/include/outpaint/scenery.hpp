#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "outpaint/generator.hpp"
#include "outpaint/tensor.hpp"

namespace outpaint {

// Per-pixel class ids, row-major.
struct Segmentation {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> ids;

  std::uint8_t at(int y, int x) const { return ids[y * width + x]; }
};

struct DatasetRecord {
  Tensor image;  // [3, H, W] in [-1, 1]
  Segmentation segmentation;  // empty when unlabeled

  bool labeled() const { return !segmentation.ids.empty(); }
};

const std::vector<std::string>& scenery_class_names();

// Procedural horizon scene: sky gradient with clouds, a mountain ridge,
// ground bands (grass, water, sand), trees and the occasional tower.
// Record k depends only on (seed, k).
DatasetRecord scenery_record(std::uint64_t seed, int index, int height = 64, int width = 64);
std::vector<DatasetRecord> synth_scenery_dataset(int count, std::uint64_t seed, int height = 64,
                                                 int width = 64);

// Bit k of cell (i, j) is set iff class k covers at least `threshold` of the
// cell's pixels. Result is in row-major cell order.
std::vector<CategoryVector> derive_patch_labels(const Segmentation& seg, const GridSpec& grid,
                                                int num_classes, double threshold = 0.01);

// Directory of <stem>.png images with optional <stem>.seg (8-bit gray PNG of
// class ids). Files are read in lexicographic stem order.
void save_dataset(const std::filesystem::path& dir, const std::vector<DatasetRecord>& records);
std::vector<DatasetRecord> load_dataset(const std::filesystem::path& dir);

}  // namespace outpaint
