#pragma once

#include <cstdint>
#include <string>

#include "qkd/data.hpp"

namespace qkd {

// Full experiment configuration. Precedence: built-in defaults, then config
// file, then command-line flags. The resolved form (including computed
// normalization constants) is written next to each run's outputs.
struct ExperimentConfig {
  // experiment
  std::string mode = "qkd";
  int bits = 2;
  std::uint64_t seed = 1;
  std::string teacher = "mlp-t";
  std::string student = "mlp-s";
  double temperature = 2.0;
  std::string output_dir;          // empty: QKD_OUTPUT_DIR env, then "qkd-out"
  std::string teacher_checkpoint;  // empty: <output_dir>/teacher_fp.qkdf
  std::string student_checkpoint;  // empty: <output_dir>/student_fp.qkdf
  bool gated_ste = true;
  bool cs_fresh_teacher_logits = true;
  double kl_weight = 1.0;
  double ad_weight = 1.0;

  // phases
  int epochs_ss = 6;
  int epochs_cs = 20;
  int epochs_tu = 14;
  int batch_size = 64;
  int pretrain_epochs = 80;

  // optim
  double lr = 0.002;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double iw_lr_ratio = 0.01;  // weight-interval LR = lr * ratio
  double ix_lr_ratio = 1.0;   // activation-interval LR = lr * ratio
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  // data
  DatasetDescriptor data;

  // Overlays values present in a JSON document (one nesting level:
  // experiment / phases / optim / data).
  void apply_json_text(const std::string& text);
  void apply_json_file(const std::string& path);
  std::string to_json_text() const;

  std::string resolved_output_dir() const;
  std::string resolved_teacher_checkpoint() const;
  std::string resolved_student_checkpoint() const;
  void validate() const;
};

}  // namespace qkd
