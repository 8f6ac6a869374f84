#include "simcl/metrics.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "simcl/errors.hpp"

namespace simcl {

double RunMetrics::latest(const std::string& split, const std::string& metric) const {
  for (auto it = rows.rbegin(); it != rows.rend(); ++it)
    if (it->split == split && it->metric == metric) return it->value;
  throw StateError("no metric rows for " + split + "/" + metric);
}

bool RunMetrics::has(const std::string& split, const std::string& metric) const {
  for (const auto& r : rows)
    if (r.split == split && r.metric == metric) return true;
  return false;
}

std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

void write_metrics_csv(const RunMetrics& m, const std::filesystem::path& path) {
  std::ostringstream os;
  os << "epoch,split,metric,value,seed,config_fingerprint\n";
  char fp[24];
  std::snprintf(fp, sizeof(fp), "%016" PRIx64, m.config_fingerprint);
  for (const auto& r : m.rows)
    os << r.epoch << ',' << r.split << ',' << r.metric << ',' << format_value(r.value) << ',' << m.seed << ',' << fp
       << '\n';
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IngestionError("cannot write " + tmp);
    f << os.str();
  }
  std::filesystem::rename(tmp, path);
}

RunMetrics read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IngestionError("cannot open " + path.string());
  std::string line;
  if (!std::getline(f, line) || line != "epoch,split,metric,value,seed,config_fingerprint")
    throw FormatError(path.string() + ": unexpected metrics header");
  RunMetrics m;
  std::size_t lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (fields.size() != 6) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 6 fields");
    MetricRow r;
    r.epoch = std::stoi(fields[0]);
    r.split = fields[1];
    r.metric = fields[2];
    r.value = std::stod(fields[3]);
    m.rows.push_back(std::move(r));
    m.seed = std::stoull(fields[4]);
    m.config_fingerprint = std::stoull(fields[5], nullptr, 16);
  }
  return m;
}

}  // namespace simcl
