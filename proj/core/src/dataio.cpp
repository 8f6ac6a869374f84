#include "simcl/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace simcl {
namespace {

constexpr std::uint64_t kValCarveSeed = 0x76616c6361727665ULL;  // "valcarve"

std::vector<std::uint8_t> read_all(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IngestionError("cannot open " + p.string());
  f.seekg(0, std::ios::end);
  const auto n = static_cast<std::size_t>(f.tellg());
  f.seekg(0);
  std::vector<std::uint8_t> buf(n);
  if (n && !f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n)))
    throw IngestionError("short read on " + p.string());
  return buf;
}

// One CIFAR record: label byte(s) then 3072 bytes of planar RGB (row-major
// 32x32 per plane). Appends HWC pixels and the fine label.
void append_cifar_records(const std::filesystem::path& file, int label_bytes, int num_classes,
                          ImageDataset& ds, Split split) {
  const auto buf = read_all(file);
  const std::size_t rec = static_cast<std::size_t>(label_bytes) + 3072;
  if (buf.size() % rec != 0)
    throw FormatError(file.string() + ": size " + std::to_string(buf.size()) + " not a multiple of record length " +
                      std::to_string(rec) + " (stray bytes start at offset " + std::to_string(buf.size() - buf.size() % rec) + ")");
  const std::size_t n = buf.size() / rec;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* r = buf.data() + i * rec;
    const int label = r[label_bytes - 1];  // fine label is the last label byte
    if (label >= num_classes)
      throw FormatError(file.string() + ": label " + std::to_string(label) + " out of range at record " + std::to_string(i));
    const std::uint8_t* planes = r + label_bytes;
    std::size_t base = ds.pixels.size();
    ds.pixels.resize(base + 3072);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x)
        for (int c = 0; c < 3; ++c) ds.pixels[base + (static_cast<std::size_t>(y) * 32 + x) * 3 + c] = planes[c * 1024 + y * 32 + x];
    ds.labels.push_back(label);
    ds.splits.push_back(split);
  }
}

// Moves ~10% of each class's train images to the validation split.
void carve_validation(ImageDataset& ds) {
  std::vector<std::vector<std::int64_t>> by_class(static_cast<std::size_t>(ds.num_classes));
  for (std::int64_t i = 0; i < ds.count(); ++i)
    if (ds.splits[static_cast<std::size_t>(i)] == Split::kTrain) by_class[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])].push_back(i);
  Rng rng(kValCarveSeed);
  for (int c = 0; c < ds.num_classes; ++c) {
    auto& idx = by_class[static_cast<std::size_t>(c)];
    Rng cls = rng.fork(static_cast<std::uint64_t>(c));
    cls.shuffle(idx);
    const std::size_t take = idx.size() / 10;
    for (std::size_t j = 0; j < take; ++j) ds.splits[static_cast<std::size_t>(idx[j])] = Split::kVal;
  }
}

struct Hsv {
  double h, s, v;  // h in [0,1) turns
};

void hsv_to_rgb(const Hsv& c, double& r, double& g, double& b) {
  const double h6 = c.h * 6.0;
  const int sector = static_cast<int>(h6) % 6;
  const double f = h6 - std::floor(h6);
  const double p = c.v * (1 - c.s);
  const double q = c.v * (1 - c.s * f);
  const double t = c.v * (1 - c.s * (1 - f));
  switch (sector) {
    case 0: r = c.v; g = t; b = p; return;
    case 1: r = q; g = c.v; b = p; return;
    case 2: r = p; g = c.v; b = t; return;
    case 3: r = p; g = q; b = c.v; return;
    case 4: r = t; g = p; b = c.v; return;
    default: r = c.v; g = p; b = q; return;
  }
}

// Shape membership test in centered coordinates, nominal radius r.
bool inside_shape(int menu, double u, double v, double r, int px, int py) {
  switch (menu) {
    case 0: return u * u + v * v <= r * r;                               // disk
    case 1: return std::max(std::abs(u), std::abs(v)) <= 0.8 * r;        // square
    case 2: {                                                            // triangle, apex up
      const double h = 0.9 * r;
      return v >= -h && v <= h && std::abs(u) <= (v + h) * 0.5;
    }
    case 3: {                                                            // ring
      const double d2 = u * u + v * v;
      return d2 <= r * r && d2 >= 0.25 * r * r;
    }
    case 4:                                                              // cross
      return std::abs(u) <= r && std::abs(v) <= r && (std::abs(u) <= 0.35 * r || std::abs(v) <= 0.35 * r);
    case 5: return std::abs(u) + std::abs(v) <= r;                       // diamond
    case 6:                                                              // horizontal bars
      return std::abs(u) <= 0.9 * r && std::abs(v) <= 0.9 * r && (py / 3) % 2 == 0;
    default:                                                             // checkerboard
      return std::abs(u) <= 0.9 * r && std::abs(v) <= 0.9 * r && (px / 4 + py / 4) % 2 == 0;
  }
}

constexpr int kSize = 32;
constexpr double kNominalRadius = 10.0;

void render_shape(std::vector<std::uint8_t>& out, std::size_t base, int menu, double fg_r, double fg_g, double fg_b,
                  double cx, double cy, double scale, double tint_r, double tint_g, double tint_b, double noise_std,
                  Rng* noise_rng) {
  const double r = kNominalRadius * scale;
  const double bg[3] = {0.10 + tint_r, 0.10 + tint_g, 0.12 + tint_b};
  const double fg[3] = {fg_r, fg_g, fg_b};
  for (int py = 0; py < kSize; ++py)
    for (int px = 0; px < kSize; ++px) {
      const bool in = inside_shape(menu, px - cx, py - cy, r, px, py);
      for (int c = 0; c < 3; ++c) {
        double v = in ? fg[c] : bg[c];
        if (noise_rng) v += noise_rng->normal() * noise_std;
        v = std::clamp(v, 0.0, 1.0);
        out[base + (static_cast<std::size_t>(py) * kSize + px) * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
}

void class_color(int k, int num_classes, double& r, double& g, double& b) {
  hsv_to_rgb({static_cast<double>(k) / num_classes, 1.0, 0.9}, r, g, b);
}

}  // namespace

std::vector<std::int64_t> ImageDataset::indices_of(Split s) const {
  std::vector<std::int64_t> out;
  for (std::int64_t i = 0; i < count(); ++i)
    if (splits[static_cast<std::size_t>(i)] == s) out.push_back(i);
  return out;
}

void ImageDataset::validate() const {
  if (num_classes <= 0) throw IngestionError(name + ": no classes");
  if (labels.size() != splits.size() || pixels.size() != labels.size() * image_bytes())
    throw IngestionError(name + ": inconsistent buffer sizes");
  for (int l : labels)
    if (l < 0 || l >= num_classes) throw IngestionError(name + ": label out of range");
}

ImageDataset load_cifar(const std::filesystem::path& dir, CifarVariant variant) {
  ImageDataset ds;
  if (variant == CifarVariant::kCifar10) {
    ds.name = "cifar10";
    ds.num_classes = 10;
    for (int b = 1; b <= 5; ++b) append_cifar_records(dir / ("data_batch_" + std::to_string(b) + ".bin"), 1, 10, ds, Split::kTrain);
    append_cifar_records(dir / "test_batch.bin", 1, 10, ds, Split::kTest);
  } else {
    ds.name = "cifar100";
    ds.num_classes = 100;
    append_cifar_records(dir / "train.bin", 2, 100, ds, Split::kTrain);
    append_cifar_records(dir / "test.bin", 2, 100, ds, Split::kTest);
  }
  carve_validation(ds);
  ds.validate();
  return ds;
}

void ShapesSpec::validate() const {
  if (num_classes < 2) throw ConfigError("shapes: num_classes must be >= 2");
  if (per_class < 1) throw ConfigError("shapes: per_class must be >= 1");
  if (noise_std < 0) throw ConfigError("shapes: noise_std must be non-negative");
}

ImageDataset generate_shapes(const ShapesSpec& spec) {
  spec.validate();
  ImageDataset ds;
  ds.name = "shapes" + std::to_string(spec.num_classes);
  ds.num_classes = spec.num_classes;
  const std::int64_t n = static_cast<std::int64_t>(spec.num_classes) * spec.per_class;
  ds.pixels.resize(static_cast<std::size_t>(n) * ds.image_bytes());
  ds.labels.resize(static_cast<std::size_t>(n));
  ds.splits.assign(static_cast<std::size_t>(n), Split::kTrain);

  Rng root(spec.seed);
  for (int k = 0; k < spec.num_classes; ++k) {
    double fr, fg, fb;
    class_color(k, spec.num_classes, fr, fg, fb);
    for (int j = 0; j < spec.per_class; ++j) {
      const std::int64_t idx = static_cast<std::int64_t>(k) * spec.per_class + j;
      Rng rng = root.fork(static_cast<std::uint64_t>(idx));
      // Draw order: dx, dy, scale, tint rgb, then (only when noisy) per-pixel noise.
      const double cx = kSize / 2.0 + (static_cast<double>(rng.uniform_int(7)) - 3.0);
      const double cy = kSize / 2.0 + (static_cast<double>(rng.uniform_int(7)) - 3.0);
      const double scale = rng.uniform(0.85, 1.15);
      const double tr = rng.uniform(-0.02, 0.02);
      const double tg = rng.uniform(-0.02, 0.02);
      const double tb = rng.uniform(-0.02, 0.02);
      Rng* noise = spec.noise_std > 0 ? &rng : nullptr;
      render_shape(ds.pixels, static_cast<std::size_t>(idx) * ds.image_bytes(), k % 8, fr, fg, fb, cx, cy, scale, tr,
                   tg, tb, spec.noise_std, noise);
      ds.labels[static_cast<std::size_t>(idx)] = k;
    }
  }

  // Stratified 80/10/10: within each class (already contiguous), shuffle and
  // peel off val and test tails.
  Rng splitter(hash_combine64(spec.seed, 0x73706c6974ULL));  // "split"
  const int n_val = spec.per_class / 10;
  const int n_test = spec.per_class / 10;
  for (int k = 0; k < spec.num_classes; ++k) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(spec.per_class));
    std::iota(idx.begin(), idx.end(), static_cast<std::int64_t>(k) * spec.per_class);
    Rng cls = splitter.fork(static_cast<std::uint64_t>(k));
    cls.shuffle(idx);
    for (int j = 0; j < n_val; ++j) ds.splits[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])] = Split::kVal;
    for (int j = n_val; j < n_val + n_test; ++j) ds.splits[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])] = Split::kTest;
  }
  ds.validate();
  return ds;
}

std::vector<std::vector<std::uint8_t>> shape_templates(const ShapesSpec& spec) {
  spec.validate();
  std::vector<std::vector<std::uint8_t>> out(static_cast<std::size_t>(spec.num_classes));
  for (int k = 0; k < spec.num_classes; ++k) {
    double fr, fg, fb;
    class_color(k, spec.num_classes, fr, fg, fb);
    out[static_cast<std::size_t>(k)].resize(static_cast<std::size_t>(kSize) * kSize * 3);
    render_shape(out[static_cast<std::size_t>(k)], 0, k % 8, fr, fg, fb, kSize / 2.0, kSize / 2.0, 1.0, 0, 0, 0, 0.0,
                 nullptr);
  }
  return out;
}

DataSplits split_and_subsample(const ImageDataset& ds, const LabelBudget& budget) {
  if (!(budget.fraction > 0.0) || budget.fraction > 1.0) throw ConfigError("label fraction must be in (0, 1]");
  DataSplits out;
  out.val = ds.indices_of(Split::kVal);
  out.test = ds.indices_of(Split::kTest);
  const auto train = ds.indices_of(Split::kTrain);
  const auto target = static_cast<std::size_t>(std::llround(budget.fraction * static_cast<double>(train.size())));

  std::vector<char> picked(ds.labels.size(), 0);
  if (budget.stratified) {
    std::vector<std::vector<std::int64_t>> by_class(static_cast<std::size_t>(ds.num_classes));
    for (auto i : train) by_class[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])].push_back(i);
    // Largest-remainder apportionment of `target` across classes.
    std::vector<std::size_t> quota(by_class.size(), 0);
    std::vector<std::pair<double, int>> rem;
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < by_class.size(); ++c) {
      const double exact = static_cast<double>(target) * static_cast<double>(by_class[c].size()) / static_cast<double>(train.size());
      quota[c] = static_cast<std::size_t>(exact);
      assigned += quota[c];
      rem.emplace_back(exact - std::floor(exact), static_cast<int>(c));
    }
    std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    for (std::size_t r = 0; assigned < target && r < rem.size(); ++r, ++assigned) ++quota[static_cast<std::size_t>(rem[r].second)];
    Rng rng(budget.seed);
    for (std::size_t c = 0; c < by_class.size(); ++c) {
      Rng cls = rng.fork(static_cast<std::uint64_t>(c));
      cls.shuffle(by_class[c]);
      const std::size_t take = std::min(quota[c], by_class[c].size());
      for (std::size_t j = 0; j < take; ++j) picked[static_cast<std::size_t>(by_class[c][j])] = 1;
    }
  } else {
    auto pool = train;
    Rng rng(budget.seed);
    rng.shuffle(pool);
    for (std::size_t j = 0; j < std::min(target, pool.size()); ++j) picked[static_cast<std::size_t>(pool[j])] = 1;
  }
  for (auto i : train) (picked[static_cast<std::size_t>(i)] ? out.labeled : out.unlabeled).push_back(i);
  return out;
}

}  // namespace simcl
