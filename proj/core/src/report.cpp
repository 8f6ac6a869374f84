#include "simcl/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

#include "simcl/errors.hpp"
#include "simcl/metrics.hpp"

namespace simcl {
namespace {

using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;

struct RunInfo {
  std::string kind;
  std::string label;
  std::uint64_t seed = 0;
  int classes = -1;
  int batch_size = -1;
  std::map<std::string, double> finals;
};

RunInfo read_run(const fs::path& dir) {
  const fs::path sp = dir / "summary.json";
  std::ifstream f(sp);
  if (!f) throw FormatError(dir.string() + ": run has metrics.csv but no summary.json");
  ordered_json j;
  try {
    j = ordered_json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(sp.string() + ": " + e.what());
  }
  RunInfo r;
  r.kind = j.value("kind", "");
  r.label = j.value("label", "");
  r.seed = j.value("seed", std::uint64_t{0});
  r.classes = j.value("classes", -1);
  r.batch_size = j.value("batch_size", -1);
  if (j.contains("finals"))
    for (auto it = j["finals"].begin(); it != j["finals"].end(); ++it) r.finals[it.key()] = it->get<double>();
  // The CSV is the ground truth for per-run values; reading it also validates
  // the file and keeps the bundle a pure function of the CSVs.
  const RunMetrics m = read_metrics_csv(dir / "metrics.csv");
  for (const auto& row : m.rows)
    if (row.split == "final") r.finals[row.metric] = row.value;
  return r;
}

// Headline metric per run kind.
const char* headline(const std::string& kind) {
  if (kind == "distill") return "teacher_agreement";
  if (kind == "pretrain") return "";
  return "test_accuracy";
}

struct Agg {
  std::vector<double> values;
  void add(double v) { values.push_back(v); }
  int n() const { return static_cast<int>(values.size()); }
  double mean() const {
    double s = 0;
    for (double v : values) s += v;
    return s / n();
  }
  // Two-pass population sd; exactly 0 for a single run.
  double sd() const {
    const double m = mean();
    double s = 0;
    for (double v : values) s += (v - m) * (v - m);
    return std::sqrt(s / n());
  }
};

// Canonical emission order for the augmentation study.
const std::vector<std::string>& preset_order() {
  static const std::vector<std::string> order = {"crop", "flip", "color", "crop_color", "flip_crop", "all", "none"};
  return order;
}

std::vector<std::string> ordered_labels(const std::map<std::string, Agg>& groups, bool preset_style) {
  std::vector<std::string> labels;
  if (preset_style) {
    for (const auto& p : preset_order())
      if (groups.count(p)) labels.push_back(p);
    for (const auto& [l, a] : groups)
      if (std::find(labels.begin(), labels.end(), l) == labels.end()) labels.push_back(l);
  } else {
    for (const auto& [l, a] : groups) labels.push_back(l);
  }
  return labels;
}

void write_text(const fs::path& p, const std::string& text, std::vector<fs::path>& files) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw IngestionError("cannot write " + p.string());
  f << text;
  files.push_back(p);
}

}  // namespace

ReportBundle report(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("report: '" + dir.string() + "' is not a directory");

  // Root summary (if present) names the experiment family.
  std::string root_kind;
  if (fs::exists(dir / "summary.json") && !fs::exists(dir / "metrics.csv")) {
    std::ifstream f(dir / "summary.json");
    ordered_json j = ordered_json::parse(f, nullptr, false);
    if (!j.is_discarded()) root_kind = j.value("kind", "");
  }

  std::vector<fs::path> run_dirs;
  if (fs::exists(dir / "metrics.csv")) run_dirs.push_back(dir);
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && fs::exists(e.path() / "metrics.csv")) run_dirs.push_back(e.path());
  std::sort(run_dirs.begin(), run_dirs.end());
  if (run_dirs.empty()) throw ConfigError("report: no metrics.csv found under " + dir.string());

  std::vector<RunInfo> runs;
  for (const auto& rd : run_dirs) runs.push_back(read_run(rd));

  if (!root_kind.empty() && root_kind.rfind("exp-", 0) == 0) {
    // A study root only aggregates its own family of runs.
    const std::string family = root_kind.substr(4);
    for (const auto& r : runs) {
      const bool ok = (family == "augment" && (r.kind == "pretrain" || r.kind == "finetune")) ||
                      (family == "distill" && (r.kind == "finetune" || r.kind == "distill")) ||
                      (family == "transfer" && (r.kind == "pretrain" || r.kind == "finetune"));
      if (!ok)
        throw ConfigError("report: run kind '" + r.kind + "' does not belong to a " + root_kind + " study");
    }
  }

  ReportBundle bundle;
  bundle.kind = root_kind;
  if (root_kind.empty()) {
    std::string only;
    bool mixed = false;
    for (const auto& r : runs) {
      if (only.empty()) only = r.kind;
      else if (only != r.kind) mixed = true;
    }
    bundle.kind = mixed ? "mixed" : only;
  }

  // Aggregate headline metrics per (kind, label).
  std::map<std::string, std::map<std::string, Agg>> by_kind;
  std::map<std::string, std::map<std::string, std::pair<int, int>>> meta;  // label -> (classes, batch)
  for (const auto& r : runs) {
    const std::string metric = headline(r.kind);
    if (metric.empty()) continue;
    auto it = r.finals.find(metric);
    if (it == r.finals.end()) continue;
    by_kind[r.kind][r.label].add(it->second);
    meta[r.kind][r.label] = {r.classes, r.batch_size};
  }

  const fs::path rep = dir / "report";
  fs::create_directories(rep);

  std::ostringstream sum;
  sum << "kind,label,metric,n,mean,sd\n";
  for (const auto& [kind, groups] : by_kind) {
    const bool preset_style = kind == "finetune" && (root_kind == "exp-augment" || root_kind.empty());
    for (const auto& label : ordered_labels(groups, preset_style)) {
      const Agg& a = groups.at(label);
      bundle.summary.push_back({kind, label, headline(kind), a.n(), a.mean(), a.sd()});
      sum << kind << ',' << label << ',' << headline(kind) << ',' << a.n() << ',' << format_value(a.mean()) << ','
          << format_value(a.sd()) << '\n';
    }
  }
  write_text(rep / "summary.csv", sum.str(), bundle.files);

  // Accuracy-vs-preset series (augmentation study shape).
  if (by_kind.count("finetune")) {
    const auto& groups = by_kind.at("finetune");
    bool any_preset = false;
    for (const auto& p : preset_order()) any_preset = any_preset || groups.count(p);
    if (any_preset) {
      Series s;
      s.name = "series_accuracy_vs_preset";
      s.x_name = "preset";
      s.y_name = "accuracy";
      std::ostringstream os;
      os << "preset,accuracy\n";
      for (const auto& p : preset_order())
        if (groups.count(p)) {
          s.points.push_back({p, groups.at(p).mean()});
          os << p << ',' << format_value(groups.at(p).mean()) << '\n';
        }
      write_text(rep / (s.name + ".csv"), os.str(), bundle.files);
      bundle.series.push_back(std::move(s));
    }
    // Accuracy-vs-class-count series per batch size (transfer study shape).
    std::map<int, std::vector<std::pair<int, double>>> per_batch;
    for (const auto& [label, agg] : groups) {
      const auto [classes, batch] = meta.at("finetune").at(label);
      if (classes > 0 && batch > 0) per_batch[batch].push_back({classes, agg.mean()});
    }
    for (auto& [batch, points] : per_batch) {
      std::sort(points.begin(), points.end());
      Series s;
      s.name = "series_accuracy_vs_classes_bs" + std::to_string(batch);
      s.x_name = "classes";
      s.y_name = "accuracy";
      std::ostringstream os;
      os << "classes,accuracy\n";
      for (const auto& [k, acc] : points) {
        s.points.push_back({std::to_string(k), acc});
        os << k << ',' << format_value(acc) << '\n';
      }
      write_text(rep / (s.name + ".csv"), os.str(), bundle.files);
      bundle.series.push_back(std::move(s));
    }
  }

  // Agreement-vs-student series (distillation study shape).
  if (by_kind.count("distill")) {
    const auto& groups = by_kind.at("distill");
    Series s;
    s.name = "series_agreement_vs_student";
    s.x_name = "student";
    s.y_name = "agreement";
    std::ostringstream os;
    os << "student,agreement\n";
    for (const auto& [label, agg] : groups) {
      s.points.push_back({label, agg.mean()});
      os << label << ',' << format_value(agg.mean()) << '\n';
    }
    write_text(rep / (s.name + ".csv"), os.str(), bundle.files);
    bundle.series.push_back(std::move(s));
  }

  return bundle;
}

}  // namespace simcl
