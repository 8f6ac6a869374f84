#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "simcl/rng.hpp"

namespace simcl {

// Float image, HWC, channels RGB, values in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> px;  // height * width * 3

  float& at(int y, int x, int c) { return px[(static_cast<std::size_t>(y) * width + x) * 3 + static_cast<std::size_t>(c)]; }
  float at(int y, int x, int c) const { return px[(static_cast<std::size_t>(y) * width + x) * 3 + static_cast<std::size_t>(c)]; }
};

// Pinned u8 -> float conversion: v / 255.0f.
Image to_float_image(const std::uint8_t* hwc, int height, int width);

enum class AugmentKind { kRandomCropResize, kRandomHorizontalFlip, kColorDistortion };

struct AugmentOp {
  AugmentKind kind;
  double min_area = 0.3;     // crop: area fraction range
  double max_area = 1.0;
  double probability = 0.5;  // flip
  double strength = 0.5;     // color distortion
};

struct AugmentPipeline {
  std::string name;
  std::vector<AugmentOp> ops;
};

// Named presets: none, crop, flip, color, crop_color, flip_crop, all.
AugmentPipeline preset(const std::string& name);
const std::vector<std::string>& preset_names();

// Applies the pipeline in order. Each op consumes a fixed number of draws
// from `rng` regardless of outcome:
//   crop  - area, aspect, x0, y0            (4 uniforms)
//   flip  - coin                            (1 uniform)
//   color - brightness, contrast, saturation, hue, grayscale coin (5 uniforms)
Image apply(const AugmentPipeline& p, const Image& in, Rng& rng);

struct ViewPair {
  Image x1, x2;
  std::int64_t source_index = -1;
};

// Two independent applications: x1 from rng.fork(0), x2 from rng.fork(1).
ViewPair make_view_pair(const Image& img, const AugmentPipeline& p, const Rng& rng);

}  // namespace simcl
