#include "simcl/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "simcl/errors.hpp"

namespace simcl {
namespace {

constexpr char kMagic[8] = {'S', 'M', 'C', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::vector<std::uint8_t>& buf, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.insert(buf.end(), raw, raw + sizeof(T));
}

struct Cursor {
  const std::uint8_t* p;
  std::size_t left;
  const std::filesystem::path& path;

  template <typename T>
  T take() {
    if (left < sizeof(T)) throw FormatError(path.string() + ": truncated checkpoint");
    T v;
    std::memcpy(&v, p, sizeof(T));
    p += sizeof(T);
    left -= sizeof(T);
    return v;
  }

  std::string take_string(std::size_t n) {
    if (left < n) throw FormatError(path.string() + ": truncated checkpoint");
    std::string s(reinterpret_cast<const char*>(p), n);
    p += n;
    left -= n;
    return s;
  }
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::vector<std::uint8_t> buf;
  buf.insert(buf.end(), kMagic, kMagic + sizeof(kMagic));
  put(buf, kVersion);
  put(buf, ckpt.step);
  put(buf, ckpt.config_fingerprint);
  put(buf, static_cast<std::uint32_t>(ckpt.descriptor.size()));
  buf.insert(buf.end(), ckpt.descriptor.begin(), ckpt.descriptor.end());
  put(buf, static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& [name, t] : ckpt.entries) {
    put(buf, static_cast<std::uint32_t>(name.size()));
    buf.insert(buf.end(), name.begin(), name.end());
    put(buf, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape) put(buf, static_cast<std::int64_t>(e));
    for (float v : t.vals()) put(buf, v);
  }
  const auto crc = static_cast<std::uint32_t>(crc32(0, buf.data(), static_cast<uInt>(buf.size())));
  put(buf, crc);

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IngestionError("cannot write " + tmp);
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw IngestionError("short write on " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IngestionError("cannot open " + path.string());
  std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kMagic) + 4) throw FormatError(path.string() + ": too short for a checkpoint");

  const std::size_t body = buf.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, buf.data() + body, 4);
  const auto actual = static_cast<std::uint32_t>(crc32(0, buf.data(), static_cast<uInt>(body)));
  if (stored != actual) throw FormatError(path.string() + ": checksum mismatch (file is corrupt)");

  Cursor c{buf.data(), body, path};
  if (std::memcmp(c.p, kMagic, sizeof(kMagic)) != 0) throw FormatError(path.string() + ": bad magic");
  c.p += sizeof(kMagic);
  c.left -= sizeof(kMagic);
  const auto version = c.take<std::uint32_t>();
  if (version != kVersion)
    throw CompatibilityError(path.string() + ": checkpoint version " + std::to_string(version) + ", expected " +
                             std::to_string(kVersion));
  Checkpoint ckpt;
  ckpt.step = c.take<std::uint64_t>();
  ckpt.config_fingerprint = c.take<std::uint64_t>();
  ckpt.descriptor = c.take_string(c.take<std::uint32_t>());
  const auto count = c.take<std::uint32_t>();
  ckpt.entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = c.take_string(c.take<std::uint32_t>());
    const auto rank = c.take<std::uint32_t>();
    Shape shape(rank);
    for (auto& e : shape) e = c.take<std::int64_t>();
    const std::int64_t n = numel_of(shape);
    std::vector<float> vals(static_cast<std::size_t>(n));
    for (auto& v : vals) v = c.take<float>();
    ckpt.entries.emplace_back(std::move(name), tensor_from(std::move(shape), std::move(vals)));
  }
  if (c.left != 0) throw FormatError(path.string() + ": " + std::to_string(c.left) + " trailing bytes");
  return ckpt;
}

}  // namespace simcl
