#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace simcl {

// Aggregated view over the run directories beneath one output root.
struct AggRow {
  std::string kind;
  std::string label;
  std::string metric;
  int n = 0;
  double mean = 0;
  double sd = 0;  // population standard deviation
};

struct SeriesPoint {
  std::string label;
  double value = 0;
};

struct Series {
  std::string name;  // also the emitted file stem
  std::string x_name, y_name;
  std::vector<SeriesPoint> points;
};

struct ReportBundle {
  std::string kind;  // root experiment kind, or "mixed" for ad-hoc directories
  std::vector<AggRow> summary;
  std::vector<Series> series;
  std::vector<std::filesystem::path> files;  // everything written under <dir>/report/
};

// Scans `dir` and its immediate subdirectories for (metrics.csv, summary.json)
// run pairs, aggregates mean/sd per (kind, label), writes <dir>/report/ and
// returns the bundle. Pure function of the run files: same inputs give
// byte-identical outputs regardless of filesystem enumeration order.
ReportBundle report(const std::filesystem::path& dir);

}  // namespace simcl
