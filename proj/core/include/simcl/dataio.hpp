#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "simcl/errors.hpp"
#include "simcl/rng.hpp"

namespace simcl {

enum class Split : std::uint8_t { kTrain = 0, kVal = 1, kTest = 2 };

// Labeled 32x32 RGB images, uint8 HWC, plus a per-image split tag.
struct ImageDataset {
  std::string name;
  int num_classes = 0;
  int height = 32;
  int width = 32;
  std::vector<std::uint8_t> pixels;  // count * height * width * 3
  std::vector<int> labels;
  std::vector<Split> splits;

  std::int64_t count() const { return static_cast<std::int64_t>(labels.size()); }
  std::size_t image_bytes() const { return static_cast<std::size_t>(height) * width * 3; }
  const std::uint8_t* image(std::int64_t i) const { return pixels.data() + static_cast<std::size_t>(i) * image_bytes(); }
  std::vector<std::int64_t> indices_of(Split s) const;
  void validate() const;  // throws IngestionError on internal inconsistency
};

enum class CifarVariant { kCifar10, kCifar100 };

// Reads the binary batches under `dir` (data_batch_*.bin / test_batch.bin for
// cifar-10, train.bin / test.bin for cifar-100). Train images get a 10%
// stratified validation carve (fixed internal seed); test file stays test.
ImageDataset load_cifar(const std::filesystem::path& dir, CifarVariant variant);

// Procedural dataset: class k draws shape menu[k % 8] in the hue at fraction
// k/K of the color wheel. Jitter is position +-3 px, scale [0.85, 1.15], a
// small background tint, and optional Gaussian pixel noise.
struct ShapesSpec {
  int num_classes = 5;
  int per_class = 100;
  double noise_std = 0.0;  // in [0,1] pixel units
  std::uint64_t seed = 0;

  void validate() const;
};

ImageDataset generate_shapes(const ShapesSpec& spec);

// Canonical noise-free, jitter-free exemplar of each class (HWC uint8).
std::vector<std::vector<std::uint8_t>> shape_templates(const ShapesSpec& spec);

// Index lists into one dataset; labeled/unlabeled partition the train split.
struct DataSplits {
  std::vector<std::int64_t> labeled;
  std::vector<std::int64_t> unlabeled;
  std::vector<std::int64_t> val;
  std::vector<std::int64_t> test;
};

struct LabelBudget {
  double fraction = 1.0;  // in (0, 1]
  bool stratified = true;
  std::uint64_t seed = 0;
};

DataSplits split_and_subsample(const ImageDataset& ds, const LabelBudget& budget);

}  // namespace simcl
