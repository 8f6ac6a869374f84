#pragma once

#include <filesystem>

#include "simcl/config.hpp"
#include "simcl/dataio.hpp"

namespace simcl {

ImageDataset build_dataset(const DataConfig& cfg);

// Executes the configured experiment, writing run directories (checkpoints,
// metrics.csv, summary.json) under `out_dir`. `threads` > 1 runs independent
// seed chains concurrently; artifacts are identical either way.
void run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir, int threads = 1);

}  // namespace simcl
