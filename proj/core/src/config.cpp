#include "simcl/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "simcl/augment.hpp"
#include "simcl/errors.hpp"

namespace simcl {
namespace {

using ordered_json = nlohmann::ordered_json;

// Reads one JSON object with a fixed key set; any unconsumed key is an error
// naming its full path.
class Section {
 public:
  Section(const ordered_json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(path_ + "." + key + ": wrong type (" + it->dump() + ")");
    }
  }

  const ordered_json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown key '" + path_ + "." + it.key() + "'");
  }

 private:
  const ordered_json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::size_t line_of_offset(const std::string& text, std::size_t byte) {
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(std::min(byte, text.size())), '\n'));
}

void check_preset_name(const std::string& name, const std::string& where) {
  const auto& names = preset_names();
  if (std::find(names.begin(), names.end(), name) == names.end())
    throw ConfigError(where + ": unknown augmentation preset '" + name + "'");
}

}  // namespace

const std::vector<std::string>& experiment_kinds() {
  static const std::vector<std::string> kinds = {"pretrain",    "finetune",    "distill",     "transfer",
                                                 "exp-augment", "exp-distill", "exp-transfer"};
  return kinds;
}

ExperimentConfig parse_config(const std::string& json_text) {
  ordered_json root;
  try {
    root = ordered_json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config parse error at line " + std::to_string(line_of_offset(json_text, e.byte)) + ": " +
                      e.what());
  }

  ExperimentConfig c;
  Section top(root, "config");
  top.get("kind", c.kind);
  top.get("name", c.name);
  top.get("seed", c.seed);
  top.get("seeds", c.seeds);

  if (const auto* j = top.child("data")) {
    Section s(*j, "data");
    s.get("source", c.data.source);
    s.get("dir", c.data.dir);
    s.get("classes", c.data.classes);
    s.get("per_class", c.data.per_class);
    s.get("noise_std", c.data.noise_std);
    s.get("seed", c.data.seed);
    s.get("label_fraction", c.data.label_fraction);
    s.get("stratified", c.data.stratified);
    s.finish();
  }
  if (const auto* j = top.child("model")) {
    Section s(*j, "model");
    s.get("family", c.model.family);
    s.get("width", c.model.width);
    s.get("depth", c.model.depth);
    s.get("proj_dim", c.model.proj_dim);
    s.finish();
  }
  if (const auto* j = top.child("optim")) {
    Section s(*j, "optim");
    s.get("learning_rate", c.optim.learning_rate);
    s.get("momentum", c.optim.momentum);
    s.get("weight_decay", c.optim.weight_decay);
    s.finish();
  }
  if (const auto* j = top.child("contrast")) {
    Section s(*j, "contrast");
    s.get("temperature", c.contrast.temperature);
    s.get("augment", c.contrast.augment);
    s.get("epochs", c.contrast.epochs);
    s.get("batch_size", c.contrast.batch_size);
    s.finish();
  }
  if (const auto* j = top.child("finetune")) {
    Section s(*j, "finetune");
    s.get("mode", c.finetune.mode);
    s.get("augment", c.finetune.augment);
    s.get("encoder", c.finetune.encoder);
    s.get("head", c.finetune.head);
    s.get("epochs", c.finetune.epochs);
    s.get("batch_size", c.finetune.batch_size);
    s.get("learning_rate", c.finetune.learning_rate);
    s.get("weight_decay", c.finetune.weight_decay);
    s.finish();
  }
  if (const auto* j = top.child("distill")) {
    Section s(*j, "distill");
    s.get("temperature", c.distill.temperature);
    s.get("alpha", c.distill.alpha);
    s.get("teacher", c.distill.teacher);
    s.get("student_encoder", c.distill.student_encoder);
    s.get("augment", c.distill.augment);
    s.get("augment_inputs", c.distill.augment_inputs);
    s.get("epochs", c.distill.epochs);
    s.get("batch_size", c.distill.batch_size);
    s.get("patience", c.distill.patience);
    s.finish();
  }
  if (const auto* j = top.child("transfer")) {
    Section s(*j, "transfer");
    s.get("encoder", c.transfer.encoder);
    s.get("class_counts", c.transfer.class_counts);
    s.get("per_class", c.transfer.per_class);
    s.get("noise_std", c.transfer.noise_std);
    s.get("data_seed", c.transfer.data_seed);
    s.get("batch_sizes", c.transfer.batch_sizes);
    s.get("mode", c.transfer.mode);
    s.get("augment", c.transfer.augment);
    s.get("epochs", c.transfer.epochs);
    s.get("learning_rate", c.transfer.learning_rate);
    s.get("weight_decay", c.transfer.weight_decay);
    s.finish();
  }
  if (const auto* j = top.child("study")) {
    Section s(*j, "study");
    s.get("presets", c.study.presets);
    s.get("teacher_width", c.study.teacher_width);
    s.get("teacher_epochs", c.study.teacher_epochs);
    s.get("teacher_augment", c.study.teacher_augment);
    s.get("student_families", c.study.student_families);
    s.finish();
  }
  top.finish();

  if (c.name.empty()) c.name = c.kind;
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IngestionError("cannot open config " + path.string());
  std::ostringstream os;
  os << f.rdbuf();
  return parse_config(os.str());
}

void ExperimentConfig::validate() const {
  const auto& kinds = experiment_kinds();
  if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end())
    throw ConfigError("unknown experiment kind '" + kind + "'");
  if (data.source != "shapes" && data.source != "cifar10" && data.source != "cifar100")
    throw ConfigError("data.source must be shapes, cifar10 or cifar100");
  if (data.label_fraction <= 0 || data.label_fraction > 1)
    throw ConfigError("data.label_fraction must be in (0,1]");
  if (model.family != "mini_res" && model.family != "mini_plain")
    throw ConfigError("model.family must be mini_res or mini_plain");
  if (seeds.empty()) throw ConfigError("seeds must be non-empty");
  check_preset_name(contrast.augment, "contrast.augment");
  check_preset_name(finetune.augment, "finetune.augment");
  check_preset_name(distill.augment, "distill.augment");
  check_preset_name(transfer.augment, "transfer.augment");
  for (const auto& p : study.presets) check_preset_name(p, "study.presets");
  if (finetune.mode != "linear_probe" && finetune.mode != "full")
    throw ConfigError("finetune.mode must be linear_probe or full");
  if (transfer.mode != "linear_probe" && transfer.mode != "full")
    throw ConfigError("transfer.mode must be linear_probe or full");
  if (finetune.head != "linear" && finetune.head != "stack")
    throw ConfigError("finetune.head must be linear or stack");
  if (kind == "distill" && distill.teacher.empty())
    throw ConfigError("distill.teacher checkpoint path is required for kind=distill");
  for (const auto& f : study.student_families)
    if (f != "mini_res" && f != "mini_plain") throw ConfigError("study.student_families entries must be mini_res or mini_plain");
}

std::string ExperimentConfig::normalized() const {
  ordered_json j;
  j["kind"] = kind;
  j["name"] = name.empty() ? kind : name;
  j["seed"] = seed;
  j["seeds"] = seeds;
  j["data"] = {{"source", data.source},       {"dir", data.dir},
               {"classes", data.classes},     {"per_class", data.per_class},
               {"noise_std", data.noise_std}, {"seed", data.seed},
               {"label_fraction", data.label_fraction}, {"stratified", data.stratified}};
  j["model"] = {{"family", model.family}, {"width", model.width}, {"depth", model.depth}, {"proj_dim", model.proj_dim}};
  j["optim"] = {{"learning_rate", optim.learning_rate},
                {"momentum", optim.momentum},
                {"weight_decay", optim.weight_decay}};
  j["contrast"] = {{"temperature", contrast.temperature},
                   {"augment", contrast.augment},
                   {"epochs", contrast.epochs},
                   {"batch_size", contrast.batch_size}};
  j["finetune"] = {{"mode", finetune.mode},     {"augment", finetune.augment},
                   {"encoder", finetune.encoder}, {"head", finetune.head},
                   {"epochs", finetune.epochs}, {"batch_size", finetune.batch_size},
                   {"learning_rate", finetune.learning_rate}, {"weight_decay", finetune.weight_decay}};
  j["distill"] = {{"temperature", distill.temperature},
                  {"alpha", distill.alpha},
                  {"teacher", distill.teacher},
                  {"student_encoder", distill.student_encoder},
                  {"augment", distill.augment},
                  {"augment_inputs", distill.augment_inputs},
                  {"epochs", distill.epochs},
                  {"batch_size", distill.batch_size},
                  {"patience", distill.patience}};
  j["transfer"] = {{"encoder", transfer.encoder},
                   {"class_counts", transfer.class_counts},
                   {"per_class", transfer.per_class},
                   {"noise_std", transfer.noise_std},
                   {"data_seed", transfer.data_seed},
                   {"batch_sizes", transfer.batch_sizes},
                   {"mode", transfer.mode},
                   {"augment", transfer.augment},
                   {"epochs", transfer.epochs},
                   {"learning_rate", transfer.learning_rate},
                   {"weight_decay", transfer.weight_decay}};
  j["study"] = {{"presets", study.presets},
                {"teacher_width", study.teacher_width},
                {"teacher_epochs", study.teacher_epochs},
                {"teacher_augment", study.teacher_augment},
                {"student_families", study.student_families}};
  return j.dump(2) + "\n";
}

std::uint64_t ExperimentConfig::fingerprint() const {
  const std::string text = normalized();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace simcl
