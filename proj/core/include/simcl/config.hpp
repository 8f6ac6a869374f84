#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace simcl {

// One config file drives one experiment kind. Every field has a default;
// unknown keys anywhere are hard errors. The normalized form (all defaults
// materialized, canonical key order) is what gets fingerprinted.
struct DataConfig {
  std::string source = "shapes";  // shapes | cifar10 | cifar100
  std::string dir;                // cifar batch directory
  int classes = 5;
  int per_class = 500;
  double noise_std = 0.0;
  std::uint64_t seed = 0;
  double label_fraction = 1.0;
  bool stratified = true;
};

struct ModelConfig {
  std::string family = "mini_res";
  int width = 16;
  int depth = 3;
  int proj_dim = 32;
};

struct OptimConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0001;
};

struct ContrastSection {
  double temperature = 1.0;
  std::string augment = "all";
  int epochs = 10;
  int batch_size = 64;
};

struct FinetuneSection {
  std::string mode = "linear_probe";  // linear_probe | full
  std::string augment = "none";
  std::string encoder;                // checkpoint path; empty = fresh weights
  std::string head = "linear";        // linear | stack
  int epochs = 30;
  int batch_size = 64;
  double learning_rate = -1;          // negative = inherit optim section
  double weight_decay = -1;
};

struct DistillSection {
  double temperature = 1.0;
  double alpha = 0.0;
  std::string teacher;                // assembly checkpoint path (required for kind=distill)
  std::string student_encoder;        // encoder checkpoint path; empty = fresh
  std::string augment = "none";
  bool augment_inputs = false;
  int epochs = 30;
  int batch_size = 64;
  int patience = 10;
};

struct TransferSection {
  std::string encoder;                // empty = pretrain first using `contrast`
  std::vector<int> class_counts = {2, 5, 10, 20};
  int per_class = 100;
  double noise_std = 0.0;
  std::uint64_t data_seed = 11;
  std::vector<int> batch_sizes = {64};
  std::string mode = "linear_probe";
  std::string augment = "flip_crop";
  int epochs = 30;
  double learning_rate = 0.1;         // separate recipe from the optim section
  double weight_decay = 0.0;
};

struct StudySection {
  std::vector<std::string> presets = {"none", "crop", "flip", "color", "crop_color", "flip_crop", "all"};
  int teacher_width = 32;
  int teacher_epochs = 30;
  std::string teacher_augment = "none";
  std::vector<std::string> student_families = {"mini_res", "mini_plain"};
};

struct ExperimentConfig {
  std::string kind = "pretrain";  // pretrain | finetune | distill | transfer | exp-augment | exp-distill | exp-transfer
  std::string name;               // default: kind
  std::uint64_t seed = 1;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  DataConfig data;
  ModelConfig model;
  OptimConfig optim;
  ContrastSection contrast;
  FinetuneSection finetune;
  DistillSection distill;
  TransferSection transfer;
  StudySection study;

  void validate() const;                 // cross-field checks beyond parsing
  std::string normalized() const;        // canonical JSON text, all defaults filled
  std::uint64_t fingerprint() const;     // FNV-1a 64 of normalized()
};

ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);

const std::vector<std::string>& experiment_kinds();

}  // namespace simcl
