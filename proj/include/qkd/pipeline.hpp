#pragma once

#include <string>
#include <vector>

#include "qkd/config.hpp"
#include "qkd/data.hpp"
#include "qkd/models.hpp"

namespace qkd {

// Training recipes of the ablation grid. SS-prefixed modes run the
// self-studying phase first; AP*/AD keep the teacher frozen throughout;
// CS+TU and QKD train the teacher during co-studying only.
enum class RunMode { BL, SS_BL, AP, SS_AP, CS_TU, QKD, AD, SS_AD };

RunMode parse_run_mode(const std::string& s);
std::string to_string(RunMode mode);
std::string cell_name(RunMode mode, int bits, std::uint64_t seed);  // filesystem-safe
std::vector<RunMode> all_run_modes();

struct EvalResult {
  double top1 = 0.0;  // percent
  double top5 = 0.0;  // percent; 100 with the flag set when m < 5
  bool top5_flagged = false;
};

// Top-1: argmax with ties broken toward the lowest class index. Top-5:
// membership among the five best (logit desc, index asc) classes, or always
// a hit when there are fewer than five classes.
struct BatchScore {
  std::size_t top1_hits = 0;
  std::size_t top5_hits = 0;
};
BatchScore score_logits(const Tensor& logits, const std::vector<int>& labels);

EvalResult evaluate(NetworkState& state, const Dataset& ds, int batch_size = 256);

// Mean per-sample KL(teacher || student) at the given temperature.
double mean_test_kl(NetworkState& teacher, NetworkState& student, const Dataset& ds,
                    double temperature, int batch_size = 256);

struct RunRow {
  int epoch = 0;  // 1-based, global across phases
  std::string phase;  // SS / CS / TU / AD
  std::string mode;
  int bits = 0;
  double student_train_top1 = 0.0;
  double student_test_top1 = 0.0;
  double student_test_top5 = 0.0;
  double teacher_test_top1 = 0.0;  // nan when the mode has no teacher
  double loss_ce = 0.0;
  double loss_kl = 0.0;    // distillation term (T^2-scaled KL, or AD MSE)
  double mean_kl_T = 0.0;  // test-set KL(z_T || z_S; T); nan without teacher
  bool teacher_frozen = true;
  double wallclock_s = 0.0;
};

struct RunRecord {
  static const char* kCsvHeader;
  std::vector<RunRow> rows;

  std::string to_csv() const;
  void write_csv(const std::string& path) const;
  static RunRecord read_csv(const std::string& path);
};

// Shared inputs of the phase operations. When `record` is set, one row per
// epoch is appended, with global epoch numbering starting after
// `epoch_offset`.
struct PhaseIO {
  const DatasetPair& data;
  const ExperimentConfig& cfg;
  RunRecord* record = nullptr;
  int epoch_offset = 0;
  NetworkState* metrics_teacher = nullptr;  // teacher used for per-epoch metrics
};

// Phase 1, self-studying: cross-entropy-only fine-tuning of the (already
// interval-initialized) student.
void phase_self_study(NetworkState& student, const PhaseIO& io, int epochs);

// Phases 2 and 3 share one optimizer/schedule span: co-studying updates the
// teacher by its KD loss and then the student by its own on the same batch;
// tutoring continues with the teacher frozen.
void phase_co_study_tutoring(NetworkState& teacher, NetworkState& student, const PhaseIO& io,
                             int cs_epochs, int tu_epochs);
void phase_co_study(NetworkState& teacher, NetworkState& student, const PhaseIO& io, int epochs);
void phase_tutoring(NetworkState& teacher, NetworkState& student, const PhaseIO& io, int epochs);

// Apprentice-style span: fixed full-precision teacher for the whole run.
// With `activation_distill` the transferred signal is the last featuremap
// through a trainable regressor (CE + MSE) instead of the posterior.
void phase_frozen_distill(NetworkState& teacher, NetworkState& student, const PhaseIO& io,
                          int epochs, bool activation_distill);

// Full-precision CE pretraining; writes the teacher/student checkpoints
// that every run mode starts from.
struct PretrainResult {
  std::string teacher_path;
  std::string student_path;
  double teacher_top1 = 0.0;
  double student_top1 = 0.0;
};
PretrainResult pretrain(ExperimentConfig cfg);

// Dispatches one full run per `cfg.mode`, writes the RunRecord CSV, the
// final student checkpoint, and the resolved config under the output
// directory, and returns the record.
RunRecord run_experiment(ExperimentConfig cfg);
RunRecord run_experiment(RunMode mode, int bits, ExperimentConfig cfg);

}  // namespace qkd
