#include "support/augment_reference.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace refimpl {

double luminance(double r, double g, double b) { return b + 0.299 * (r - b) + 0.587 * (g - b); }

// Documented contract: draw area fraction, then aspect ratio in [3/4, 4/3],
// then the top-left corner (two integer draws); resize back to the source
// extents with align-corners bilinear sampling; round extents to the nearest
// integer and clamp into the frame. This version materializes the window
// before resampling, which the production code never does.
simcl::Image crop_resize(const simcl::Image& in, double min_area, double max_area, simcl::Rng& rng) {
  const double area = rng.uniform(min_area, max_area) * in.height * in.width;
  const double aspect = rng.uniform(0.75, 4.0 / 3.0);
  const long cw_raw = std::lround(std::sqrt(area * aspect));
  const long ch_raw = std::lround(std::sqrt(area / aspect));
  const int cw = static_cast<int>(std::min<long>(std::max<long>(cw_raw, 1), in.width));
  const int ch = static_cast<int>(std::min<long>(std::max<long>(ch_raw, 1), in.height));
  const int x0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(in.width - cw + 1)));
  const int y0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(in.height - ch + 1)));

  simcl::Image window{ch, cw, std::vector<float>(static_cast<std::size_t>(ch) * cw * 3)};
  for (int y = 0; y < ch; ++y)
    for (int x = 0; x < cw; ++x)
      for (int c = 0; c < 3; ++c) window.at(y, x, c) = in.at(y0 + y, x0 + x, c);

  simcl::Image out{in.height, in.width, std::vector<float>(in.px.size())};
  for (int oy = 0; oy < in.height; ++oy)
    for (int ox = 0; ox < in.width; ++ox) {
      const double sy = (in.height > 1 && ch > 1) ? oy * double(ch - 1) / (in.height - 1) : 0.0;
      const double sx = (in.width > 1 && cw > 1) ? ox * double(cw - 1) / (in.width - 1) : 0.0;
      const int fy = static_cast<int>(sy), fx = static_cast<int>(sx);
      const int fy1 = std::min(fy + 1, ch - 1), fx1 = std::min(fx + 1, cw - 1);
      const double ty = sy - fy, tx = sx - fx;
      for (int c = 0; c < 3; ++c) {
        const double top = (1 - tx) * window.at(fy, fx, c) + tx * window.at(fy, fx1, c);
        const double bot = (1 - tx) * window.at(fy1, fx, c) + tx * window.at(fy1, fx1, c);
        out.at(oy, ox, c) = static_cast<float>((1 - ty) * top + ty * bot);
      }
    }
  return out;
}

simcl::Image flip(const simcl::Image& in, double probability, simcl::Rng& rng) {
  if (rng.uniform() >= probability) return in;
  simcl::Image out{in.height, in.width, std::vector<float>(in.px.size())};
  for (int y = 0; y < in.height; ++y)
    for (int x = 0; x < in.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = in.at(y, in.width - 1 - x, c);
  return out;
}

// Stage order: brightness scale, contrast toward the mean luminance,
// saturation toward per-pixel luminance, hue rotation in YIQ, a 20%
// grayscale coin, then one final clamp. Five draws always.
simcl::Image color(const simcl::Image& in, double strength, simcl::Rng& rng) {
  simcl::Image img = in;
  const int n = img.height * img.width;
  auto ch = [&](int i, int c) -> float& { return img.px[static_cast<std::size_t>(i) * 3 + static_cast<std::size_t>(c)]; };

  const double lo = 1 - 0.8 * strength, hi = 1 + 0.8 * strength;

  const double fb = rng.uniform(lo, hi);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) ch(i, c) = static_cast<float>(ch(i, c) * fb);

  const double fc = rng.uniform(lo, hi);
  double mean = 0;
  for (int i = 0; i < n; ++i) mean += luminance(ch(i, 0), ch(i, 1), ch(i, 2));
  mean /= n;
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) ch(i, c) = static_cast<float>(fc * ch(i, c) + (1 - fc) * mean);

  const double fs = rng.uniform(lo, hi);
  for (int i = 0; i < n; ++i) {
    const double l = luminance(ch(i, 0), ch(i, 1), ch(i, 2));
    for (int c = 0; c < 3; ++c) ch(i, c) = static_cast<float>(fs * ch(i, c) + (1 - fs) * l);
  }

  const double theta = 2.0 * std::numbers::pi * rng.uniform(-0.2 * strength, 0.2 * strength);
  for (int i = 0; i < n; ++i) {
    const double r = ch(i, 0), g = ch(i, 1), b = ch(i, 2);
    const double y = luminance(r, g, b);
    const double ic = 0.595716 * r - 0.274453 * g - 0.321263 * b;
    const double qc = 0.211456 * r - 0.522591 * g + 0.311135 * b;
    const double ir = ic * std::cos(theta) - qc * std::sin(theta);
    const double qr = ic * std::sin(theta) + qc * std::cos(theta);
    ch(i, 0) = static_cast<float>(y + 0.9563 * ir + 0.6210 * qr);
    ch(i, 1) = static_cast<float>(y - 0.2721 * ir - 0.6474 * qr);
    ch(i, 2) = static_cast<float>(y - 1.1070 * ir + 1.7046 * qr);
  }

  if (rng.uniform() < 0.2)
    for (int i = 0; i < n; ++i) {
      const auto l = static_cast<float>(luminance(ch(i, 0), ch(i, 1), ch(i, 2)));
      ch(i, 0) = ch(i, 1) = ch(i, 2) = l;
    }

  for (auto& v : img.px) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

simcl::Image pipeline(const simcl::AugmentPipeline& p, const simcl::Image& in, simcl::Rng& rng) {
  simcl::Image img = in;
  for (const auto& op : p.ops) switch (op.kind) {
      case simcl::AugmentKind::kRandomCropResize:
        img = crop_resize(img, op.min_area, op.max_area, rng);
        break;
      case simcl::AugmentKind::kRandomHorizontalFlip:
        img = flip(img, op.probability, rng);
        break;
      case simcl::AugmentKind::kColorDistortion:
        img = color(img, op.strength, rng);
        break;
    }
  return img;
}

}  // namespace refimpl
