// simcl — contrastive pretraining workbench.
//
// Subcommands:
//   run <config>       execute the configured experiment
//   report <dir>       aggregate run directories into plot-ready series
//   validate <config>  parse + validate, print the normalized form
//   golden <dir>       regenerate the frozen augmentation corpus (--force)
//
// Exit codes: 0 success, 2 config/usage errors, 1 anything else. Every
// failure prints exactly one diagnostic line on stderr.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "CLI11.hpp"

#include "simcl/config.hpp"
#include "simcl/errors.hpp"
#include "simcl/experiments.hpp"
#include "simcl/golden.hpp"
#include "simcl/metrics.hpp"
#include "simcl/report.hpp"
#include "simcl/runtime.hpp"

namespace fs = std::filesystem;

namespace {

fs::path default_out(const std::string& name) {
  const char* root = std::getenv("SIMCL_OUT_ROOT");
  return fs::path(root && *root ? root : "runs") / name;
}

int cmd_run(const std::string& config_path, const std::string& out, std::uint64_t seed, bool seed_set, int threads) {
  simcl::ExperimentConfig cfg = simcl::load_config(config_path);
  if (seed_set) {
    cfg.seed = seed;
    cfg.seeds = {seed};
  }
  cfg.validate();
  const fs::path out_dir = out.empty() ? default_out(cfg.name) : fs::path(out);
  simcl::run_experiment(cfg, out_dir, threads);
  std::printf("%s: %s -> %s\n", cfg.kind.c_str(), cfg.name.c_str(), out_dir.string().c_str());
  return 0;
}

int cmd_report(const std::string& dir) {
  const simcl::ReportBundle bundle = simcl::report(dir);
  std::printf("kind=%s runs aggregated into %s/report\n", bundle.kind.c_str(), dir.c_str());
  std::printf("%-10s %-16s %-18s %3s %12s %12s\n", "kind", "label", "metric", "n", "mean", "sd");
  for (const auto& row : bundle.summary)
    std::printf("%-10s %-16s %-18s %3d %12s %12s\n", row.kind.c_str(), row.label.c_str(), row.metric.c_str(), row.n,
                simcl::format_value(row.mean).c_str(), simcl::format_value(row.sd).c_str());
  return 0;
}

int cmd_validate(const std::string& config_path) {
  simcl::ExperimentConfig cfg = simcl::load_config(config_path);
  cfg.validate();
  std::fputs(cfg.normalized().c_str(), stdout);
  std::fprintf(stderr, "ok: fingerprint %016llx\n", static_cast<unsigned long long>(cfg.fingerprint()));
  return 0;
}

int cmd_golden(const std::string& dir, bool force) {
  const fs::path p(dir);
  if (fs::exists(p / "manifest.json") && !force)
    throw simcl::ConfigError("golden: " + dir + " already holds a corpus (pass --force to overwrite)");
  simcl::write_golden_corpus(p);
  std::printf("golden: wrote %zu cases to %s\n", simcl::golden_cases().size(), dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  simcl::tune_allocator();
  CLI::App app{"contrastive pretraining workbench"};
  app.require_subcommand(1);

  std::string config_path, out_dir, report_dir, golden_dir;
  std::uint64_t seed = 0;
  int threads = 1;
  bool force = false;

  CLI::App* run = app.add_subcommand("run", "execute an experiment config");
  run->add_option("config", config_path, "config file (json)")->required();
  CLI::Option* seed_opt = run->add_option("--seed", seed, "override the config's seed list with one seed");
  run->add_option("--out", out_dir, "output directory (default: $SIMCL_OUT_ROOT/<name>)");
  run->add_option("--threads", threads, "independent runs in flight")->check(CLI::Range(1, 64));

  CLI::App* report = app.add_subcommand("report", "aggregate run directories");
  report->add_option("dir", report_dir, "directory holding run outputs")->required();

  CLI::App* validate = app.add_subcommand("validate", "parse a config and print its normalized form");
  validate->add_option("config", config_path, "config file (json)")->required();

  CLI::App* golden = app.add_subcommand("golden", "regenerate the augmentation golden corpus");
  golden->add_option("dir", golden_dir, "corpus directory")->required();
  golden->add_flag("--force", force, "overwrite an existing corpus");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path, out_dir, seed, seed_opt->count() > 0, threads);
    if (report->parsed()) return cmd_report(report_dir);
    if (validate->parsed()) return cmd_validate(config_path);
    if (golden->parsed()) return cmd_golden(golden_dir, force);
  } catch (const simcl::ConfigError& e) {
    std::fprintf(stderr, "simcl: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "simcl: %s\n", e.what());
    return 1;
  }
  return 2;
}
