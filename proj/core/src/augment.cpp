#include "simcl/augment.hpp"

#include <algorithm>
#include <cmath>

#include "simcl/errors.hpp"

namespace simcl {
namespace {

// Luminance with b as the anchor term: exact fixed point when r == g == b.
double luminance(double r, double g, double b) { return b + 0.299 * (r - b) + 0.587 * (g - b); }

Image crop_resize(const Image& in, double min_area, double max_area, Rng& rng) {
  const int h = in.height, w = in.width;
  const double area = rng.uniform(min_area, max_area) * h * w;
  const double aspect = rng.uniform(0.75, 4.0 / 3.0);
  const int cw = static_cast<int>(std::clamp<long>(std::lround(std::sqrt(area * aspect)), 1, w));
  const int ch = static_cast<int>(std::clamp<long>(std::lround(std::sqrt(area / aspect)), 1, h));
  const int x0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(w - cw + 1)));
  const int y0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(h - ch + 1)));

  Image out{h, w, std::vector<float>(in.px.size())};
  for (int oy = 0; oy < h; ++oy) {
    const double sy = (h > 1 && ch > 1) ? static_cast<double>(oy) * (ch - 1) / (h - 1) : 0.0;
    const int iy0 = static_cast<int>(sy);
    const int iy1 = std::min(iy0 + 1, ch - 1);
    const double ty = sy - iy0;
    for (int ox = 0; ox < w; ++ox) {
      const double sx = (w > 1 && cw > 1) ? static_cast<double>(ox) * (cw - 1) / (w - 1) : 0.0;
      const int ix0 = static_cast<int>(sx);
      const int ix1 = std::min(ix0 + 1, cw - 1);
      const double tx = sx - ix0;
      for (int c = 0; c < 3; ++c) {
        const double v00 = in.at(y0 + iy0, x0 + ix0, c);
        const double v01 = in.at(y0 + iy0, x0 + ix1, c);
        const double v10 = in.at(y0 + iy1, x0 + ix0, c);
        const double v11 = in.at(y0 + iy1, x0 + ix1, c);
        out.at(oy, ox, c) = static_cast<float>((1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11));
      }
    }
  }
  return out;
}

void flip_horizontal(Image& img, double probability, Rng& rng) {
  const double coin = rng.uniform();
  if (coin >= probability) return;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width / 2; ++x)
      for (int c = 0; c < 3; ++c) std::swap(img.at(y, x, c), img.at(y, img.width - 1 - x, c));
}

void color_distort(Image& img, double s, Rng& rng) {
  const std::size_t n = img.px.size() / 3;
  auto pix = [&](std::size_t i, int c) -> float& { return img.px[i * 3 + static_cast<std::size_t>(c)]; };

  const double fb = rng.uniform(1 - 0.8 * s, 1 + 0.8 * s);
  for (auto& v : img.px) v = static_cast<float>(v * fb);

  const double fc = rng.uniform(1 - 0.8 * s, 1 + 0.8 * s);
  double mean = 0;
  for (std::size_t i = 0; i < n; ++i) mean += luminance(pix(i, 0), pix(i, 1), pix(i, 2));
  mean /= static_cast<double>(n);
  for (auto& v : img.px) v = static_cast<float>(fc * v + (1 - fc) * mean);

  const double fs = rng.uniform(1 - 0.8 * s, 1 + 0.8 * s);
  for (std::size_t i = 0; i < n; ++i) {
    const double l = luminance(pix(i, 0), pix(i, 1), pix(i, 2));
    for (int c = 0; c < 3; ++c) pix(i, c) = static_cast<float>(fs * pix(i, c) + (1 - fs) * l);
  }

  const double hue = rng.uniform(-0.2 * s, 0.2 * s);
  const double th = 2.0 * M_PI * hue;
  const double ct = std::cos(th), st = std::sin(th);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = pix(i, 0), g = pix(i, 1), b = pix(i, 2);
    const double y = luminance(r, g, b);
    const double iq_i = 0.595716 * r - 0.274453 * g - 0.321263 * b;
    const double iq_q = 0.211456 * r - 0.522591 * g + 0.311135 * b;
    const double i2 = iq_i * ct - iq_q * st;
    const double q2 = iq_i * st + iq_q * ct;
    pix(i, 0) = static_cast<float>(y + 0.9563 * i2 + 0.6210 * q2);
    pix(i, 1) = static_cast<float>(y - 0.2721 * i2 - 0.6474 * q2);
    pix(i, 2) = static_cast<float>(y - 1.1070 * i2 + 1.7046 * q2);
  }

  const double coin = rng.uniform();
  if (coin < 0.2) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto l = static_cast<float>(luminance(pix(i, 0), pix(i, 1), pix(i, 2)));
      pix(i, 0) = pix(i, 1) = pix(i, 2) = l;
    }
  }

  for (auto& v : img.px) v = std::clamp(v, 0.0f, 1.0f);
}

}  // namespace

Image to_float_image(const std::uint8_t* hwc, int height, int width) {
  Image img{height, width, std::vector<float>(static_cast<std::size_t>(height) * width * 3)};
  for (std::size_t i = 0; i < img.px.size(); ++i) img.px[i] = static_cast<float>(hwc[i]) / 255.0f;
  return img;
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"none", "crop", "flip", "color", "crop_color", "flip_crop", "all"};
  return names;
}

AugmentPipeline preset(const std::string& name) {
  const AugmentOp crop{AugmentKind::kRandomCropResize};
  const AugmentOp flip{AugmentKind::kRandomHorizontalFlip};
  const AugmentOp color{AugmentKind::kColorDistortion};
  if (name == "none") return {name, {}};
  if (name == "crop") return {name, {crop}};
  if (name == "flip") return {name, {flip}};
  if (name == "color") return {name, {color}};
  if (name == "crop_color") return {name, {crop, color}};
  if (name == "flip_crop") return {name, {flip, crop}};
  if (name == "all") return {name, {crop, flip, color}};
  throw ConfigError("unknown augmentation preset '" + name + "'");
}

Image apply(const AugmentPipeline& p, const Image& in, Rng& rng) {
  Image img = in;
  for (const auto& op : p.ops) {
    switch (op.kind) {
      case AugmentKind::kRandomCropResize:
        if (!(op.min_area > 0) || op.min_area > op.max_area || op.max_area > 1.0)
          throw ConfigError("crop area range must satisfy 0 < min <= max <= 1");
        img = crop_resize(img, op.min_area, op.max_area, rng);
        break;
      case AugmentKind::kRandomHorizontalFlip:
        if (op.probability < 0 || op.probability > 1) throw ConfigError("flip probability must be in [0,1]");
        flip_horizontal(img, op.probability, rng);
        break;
      case AugmentKind::kColorDistortion:
        if (!(op.strength > 0) || op.strength > 1) throw ConfigError("color strength must be in (0,1]");
        color_distort(img, op.strength, rng);
        break;
    }
  }
  return img;
}

ViewPair make_view_pair(const Image& img, const AugmentPipeline& p, const Rng& rng) {
  ViewPair out;
  Rng r1 = rng.fork(0), r2 = rng.fork(1);
  out.x1 = apply(p, img, r1);
  out.x2 = apply(p, img, r2);
  return out;
}

}  // namespace simcl
