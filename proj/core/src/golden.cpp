#include "simcl/golden.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "simcl/errors.hpp"

namespace simcl {
namespace {

constexpr std::uint64_t kInputSalt = 0x696d616765ULL;  // "image"
constexpr std::uint64_t kViewSalt = 0x76696577ULL;     // "view"

std::vector<std::uint8_t> payload_bytes(const std::vector<float>& v) {
  std::vector<std::uint8_t> bytes(v.size() * sizeof(float));
  std::memcpy(bytes.data(), v.data(), bytes.size());
  return bytes;
}

}  // namespace

const std::vector<GoldenCase>& golden_cases() {
  static const std::vector<GoldenCase> cases = [] {
    std::vector<GoldenCase> cs;
    for (const std::string& p : preset_names())
      for (std::uint64_t seed : {11ULL, 22ULL, 33ULL}) {
        std::ostringstream name;
        name << p << "_s" << seed;
        cs.push_back({name.str(), p, seed, 32, 32});
      }
    // Tiny extents keep one hand-checkable case per geometry-heavy preset.
    cs.push_back({"crop_tiny", "crop", 7, 4, 4});
    cs.push_back({"all_tiny", "all", 7, 4, 4});
    return cs;
  }();
  return cases;
}

Image golden_input(const GoldenCase& c) {
  Rng rng(hash_combine64(c.seed, kInputSalt));
  const double cx = rng.uniform(0.25, 0.75) * c.width;
  const double cy = rng.uniform(0.25, 0.75) * c.height;
  const double radius = rng.uniform(0.15, 0.35) * std::min(c.height, c.width);
  const double disk_r = rng.uniform();
  const double disk_g = rng.uniform();
  const double disk_b = rng.uniform();
  Image img;
  img.height = c.height;
  img.width = c.width;
  img.px.resize(static_cast<std::size_t>(c.height) * c.width * 3);
  for (int y = 0; y < c.height; ++y)
    for (int x = 0; x < c.width; ++x) {
      // Ramp background with a colored disk: enough structure that crops,
      // flips and color shifts all leave distinct fingerprints.
      double r = c.width > 1 ? static_cast<double>(x) / (c.width - 1) : 0.0;
      double g = c.height > 1 ? static_cast<double>(y) / (c.height - 1) : 0.0;
      double b = 0.5 * (r + g);
      const double dx = x + 0.5 - cx;
      const double dy = y + 0.5 - cy;
      if (dx * dx + dy * dy <= radius * radius) {
        r = 0.3 * r + 0.7 * disk_r;
        g = 0.3 * g + 0.7 * disk_g;
        b = 0.3 * b + 0.7 * disk_b;
      }
      img.at(y, x, 0) = static_cast<float>(r);
      img.at(y, x, 1) = static_cast<float>(g);
      img.at(y, x, 2) = static_cast<float>(b);
    }
  return img;
}

std::vector<float> golden_payload(const GoldenCase& c) {
  const Image in = golden_input(c);
  const ViewPair pair = make_view_pair(in, preset(c.preset), Rng(hash_combine64(c.seed, kViewSalt)));
  std::vector<float> out;
  out.reserve(pair.x1.px.size() + pair.x2.px.size());
  out.insert(out.end(), pair.x1.px.begin(), pair.x1.px.end());
  out.insert(out.end(), pair.x2.px.begin(), pair.x2.px.end());
  return out;
}

void write_golden_corpus(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest = nlohmann::ordered_json::array();
  for (const GoldenCase& c : golden_cases()) {
    const auto bytes = payload_bytes(golden_payload(c));
    const std::string file = c.name + ".f32";
    std::ofstream f(dir / file, std::ios::binary | std::ios::trunc);
    if (!f) throw IngestionError("cannot write " + (dir / file).string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    const auto crc = crc32(0L, bytes.data(), static_cast<uInt>(bytes.size()));
    manifest.push_back({{"name", c.name},
                        {"preset", c.preset},
                        {"seed", c.seed},
                        {"height", c.height},
                        {"width", c.width},
                        {"file", file},
                        {"bytes", bytes.size()},
                        {"crc32", static_cast<std::uint32_t>(crc)}});
  }
  std::ofstream mf(dir / "manifest.json", std::ios::binary | std::ios::trunc);
  if (!mf) throw IngestionError("cannot write " + (dir / "manifest.json").string());
  mf << manifest.dump(2) << '\n';
}

std::vector<std::string> check_golden_corpus(const std::filesystem::path& dir) {
  std::vector<std::string> mismatched;
  for (const GoldenCase& c : golden_cases()) {
    const std::filesystem::path p = dir / (c.name + ".f32");
    std::ifstream f(p, std::ios::binary);
    if (!f) throw IngestionError("golden corpus: missing " + p.string());
    std::vector<std::uint8_t> stored((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (stored != payload_bytes(golden_payload(c))) mismatched.push_back(c.name);
  }
  return mismatched;
}

}  // namespace simcl
