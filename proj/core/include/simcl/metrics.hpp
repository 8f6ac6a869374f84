#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace simcl {

// One measurement. Final (post-training) values use epoch -1 and split
// "final" so per-epoch curves stay contiguous from 0.
struct MetricRow {
  int epoch = 0;
  std::string split;   // train | val | test | final
  std::string metric;  // loss | accuracy | agreement | ...
  double value = 0;
};

struct RunMetrics {
  std::vector<MetricRow> rows;
  std::uint64_t seed = 0;
  std::uint64_t config_fingerprint = 0;

  void add(int epoch, const std::string& split, const std::string& metric, double value) {
    rows.push_back({epoch, split, metric, value});
  }
  void add_final(const std::string& metric, double value) { rows.push_back({-1, "final", metric, value}); }
  // Last matching value; throws StateError if absent.
  double latest(const std::string& split, const std::string& metric) const;
  bool has(const std::string& split, const std::string& metric) const;
};

// Deterministic number formatting (shortest round-trip via %.9g for floats'
// worth of precision; we emit doubles with %.12g). No wall-clock content:
// identical runs produce byte-identical files.
std::string format_value(double v);

void write_metrics_csv(const RunMetrics& m, const std::filesystem::path& path);
RunMetrics read_metrics_csv(const std::filesystem::path& path);

}  // namespace simcl
