#include "qkd/config.hpp"

#include <cstdlib>
#include <fstream>

#include <json.hpp>

#include "qkd/error.hpp"

namespace qkd {

namespace {

using nlohmann::json;

template <class T>
void take(const json& obj, const char* key, T& into) {
  if (obj.contains(key)) {
    try {
      into = obj.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
  }
}

}  // namespace

void ExperimentConfig::apply_json_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config root must be an object");

  if (doc.contains("experiment")) {
    const json& e = doc.at("experiment");
    take(e, "mode", mode);
    take(e, "bits", bits);
    take(e, "seed", seed);
    take(e, "teacher", teacher);
    take(e, "student", student);
    take(e, "temperature", temperature);
    take(e, "output_dir", output_dir);
    take(e, "teacher_checkpoint", teacher_checkpoint);
    take(e, "student_checkpoint", student_checkpoint);
    take(e, "gated_ste", gated_ste);
    take(e, "cs_fresh_teacher_logits", cs_fresh_teacher_logits);
    take(e, "kl_weight", kl_weight);
    take(e, "ad_weight", ad_weight);
  }
  if (doc.contains("phases")) {
    const json& p = doc.at("phases");
    take(p, "epochs_ss", epochs_ss);
    take(p, "epochs_cs", epochs_cs);
    take(p, "epochs_tu", epochs_tu);
    take(p, "batch_size", batch_size);
    take(p, "pretrain_epochs", pretrain_epochs);
  }
  if (doc.contains("optim")) {
    const json& o = doc.at("optim");
    take(o, "lr", lr);
    take(o, "momentum", momentum);
    take(o, "weight_decay", weight_decay);
    take(o, "iw_lr_ratio", iw_lr_ratio);
    take(o, "ix_lr_ratio", ix_lr_ratio);
    take(o, "adam_beta1", adam_beta1);
    take(o, "adam_beta2", adam_beta2);
    take(o, "adam_eps", adam_eps);
  }
  if (doc.contains("data")) {
    const json& d = doc.at("data");
    if (d.contains("kind")) data.kind = parse_dataset_kind(d.at("kind").get<std::string>());
    take(d, "num_classes", data.num_classes);
    take(d, "train_images", data.train_images);
    take(d, "train_labels", data.train_labels);
    take(d, "test_images", data.test_images);
    take(d, "test_labels", data.test_labels);
    take(d, "train_batches", data.train_batches);
    take(d, "test_batches", data.test_batches);
    take(d, "train_samples", data.train_samples);
    take(d, "test_samples", data.test_samples);
    take(d, "dim", data.dim);
    take(d, "spread", data.spread);
    take(d, "data_seed", data.data_seed);
    if (d.contains("normalization")) {
      data.norm = parse_normalization(d.at("normalization").get<std::string>());
    }
    take(d, "norm_a", data.norm_a);
    take(d, "norm_b", data.norm_b);
  }
}

void ExperimentConfig::apply_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  apply_json_text(text);
}

std::string ExperimentConfig::to_json_text() const {
  json doc;
  doc["experiment"] = {{"mode", mode},
                       {"bits", bits},
                       {"seed", seed},
                       {"teacher", teacher},
                       {"student", student},
                       {"temperature", temperature},
                       {"output_dir", output_dir},
                       {"teacher_checkpoint", teacher_checkpoint},
                       {"student_checkpoint", student_checkpoint},
                       {"gated_ste", gated_ste},
                       {"cs_fresh_teacher_logits", cs_fresh_teacher_logits},
                       {"kl_weight", kl_weight},
                       {"ad_weight", ad_weight}};
  doc["phases"] = {{"epochs_ss", epochs_ss},
                   {"epochs_cs", epochs_cs},
                   {"epochs_tu", epochs_tu},
                   {"batch_size", batch_size},
                   {"pretrain_epochs", pretrain_epochs}};
  doc["optim"] = {{"lr", lr},
                  {"momentum", momentum},
                  {"weight_decay", weight_decay},
                  {"iw_lr_ratio", iw_lr_ratio},
                  {"ix_lr_ratio", ix_lr_ratio},
                  {"adam_beta1", adam_beta1},
                  {"adam_beta2", adam_beta2},
                  {"adam_eps", adam_eps}};
  doc["data"] = {{"kind", to_string(data.kind)},
                 {"num_classes", data.num_classes},
                 {"train_images", data.train_images},
                 {"train_labels", data.train_labels},
                 {"test_images", data.test_images},
                 {"test_labels", data.test_labels},
                 {"train_batches", data.train_batches},
                 {"test_batches", data.test_batches},
                 {"train_samples", data.train_samples},
                 {"test_samples", data.test_samples},
                 {"dim", data.dim},
                 {"spread", data.spread},
                 {"data_seed", data.data_seed},
                 {"normalization", to_string(data.norm)},
                 {"norm_a", data.norm_a},
                 {"norm_b", data.norm_b}};
  return doc.dump(2) + "\n";
}

std::string ExperimentConfig::resolved_output_dir() const {
  if (!output_dir.empty()) return output_dir;
  if (const char* env = std::getenv("QKD_OUTPUT_DIR"); env && *env) return env;
  return "qkd-out";
}

std::string ExperimentConfig::resolved_teacher_checkpoint() const {
  if (!teacher_checkpoint.empty()) return teacher_checkpoint;
  return resolved_output_dir() + "/teacher_fp.qkdf";
}

std::string ExperimentConfig::resolved_student_checkpoint() const {
  if (!student_checkpoint.empty()) return student_checkpoint;
  return resolved_output_dir() + "/student_fp.qkdf";
}

void ExperimentConfig::validate() const {
  if (epochs_ss < 0 || epochs_cs < 0 || epochs_tu < 0) {
    throw ConfigError("phase epoch counts must be non-negative");
  }
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  if (lr <= 0.0) throw ConfigError("learning rate must be positive");
  if (temperature <= 0.0) throw ConfigError("temperature must be positive");
  if (bits < 32 && (bits < 2 || bits > 8)) {
    throw ConfigError("bits must be in [2,8], or >=32 for full precision");
  }
}

}  // namespace qkd
