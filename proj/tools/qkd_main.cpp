#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qkd/checkpoint.hpp"
#include "qkd/checks.hpp"
#include "qkd/config.hpp"
#include "qkd/error.hpp"
#include "qkd/pipeline.hpp"

namespace {

using qkd::ExperimentConfig;

struct CommonFlags {
  std::string config_file;
  ExperimentConfig flags;  // values set by passed options
  CLI::App* cmd = nullptr;

  void attach(CLI::App* app) {
    cmd = app;
    app->add_option("--config", config_file, "JSON config file (defaults < file < flags)");
    app->add_option("--mode", flags.mode, "run mode: bl ss+bl ap* ss+ap* cs+tu qkd ad ss+ad");
    app->add_option("--bits", flags.bits, "weight/activation bit-width (2..8, >=32 = fp)");
    app->add_option("--seed", flags.seed, "run seed");
    app->add_option("--teacher", flags.teacher, "teacher network name");
    app->add_option("--student", flags.student, "student network name");
    app->add_option("--epochs-ss", flags.epochs_ss, "self-studying epochs");
    app->add_option("--epochs-cs", flags.epochs_cs, "co-studying epochs");
    app->add_option("--epochs-tu", flags.epochs_tu, "tutoring epochs");
    app->add_option("--epochs-pretrain", flags.pretrain_epochs, "pretraining epochs");
    app->add_option("--batch-size", flags.batch_size, "minibatch size");
    app->add_option("--lr", flags.lr, "base learning rate (weights)");
    app->add_option("--temperature", flags.temperature, "distillation temperature");
    app->add_option("--out", flags.output_dir, "output directory (or QKD_OUTPUT_DIR)");
    app->add_option("--teacher-checkpoint", flags.teacher_checkpoint, "pre-trained teacher path");
    app->add_option("--student-checkpoint", flags.student_checkpoint, "pre-trained student path");
    app->add_option("--data-kind", data_kind, "idx-images | cifar-binary | synthetic-gaussian-clusters");
    app->add_option("--num-classes", flags.data.num_classes, "number of classes");
    app->add_option("--dim", flags.data.dim, "synthetic: feature dimension");
    app->add_option("--spread", flags.data.spread, "synthetic: cluster spread");
    app->add_option("--data-seed", flags.data.data_seed, "synthetic: dataset seed");
    app->add_option("--train-samples", flags.data.train_samples, "synthetic: train sample count");
    app->add_option("--test-samples", flags.data.test_samples, "synthetic: test sample count");
    app->add_option("--train-images", flags.data.train_images, "IDX train images path");
    app->add_option("--train-labels", flags.data.train_labels, "IDX train labels path");
    app->add_option("--test-images", flags.data.test_images, "IDX test images path");
    app->add_option("--test-labels", flags.data.test_labels, "IDX test labels path");
    app->add_option("--train-batches", flags.data.train_batches, "CIFAR binary train files");
    app->add_option("--test-batches", flags.data.test_batches, "CIFAR binary test files");
    app->add_option("--normalization", normalization, "none | mean-std | min-max");
  }

  ExperimentConfig resolve() const {
    ExperimentConfig cfg;  // defaults
    if (cmd->count("--config")) cfg.apply_json_file(config_file);
    const auto take = [&](const char* flag, auto member) {
      if (cmd->count(flag)) cfg.*member = flags.*member;
    };
    take("--mode", &ExperimentConfig::mode);
    take("--bits", &ExperimentConfig::bits);
    take("--seed", &ExperimentConfig::seed);
    take("--teacher", &ExperimentConfig::teacher);
    take("--student", &ExperimentConfig::student);
    take("--epochs-ss", &ExperimentConfig::epochs_ss);
    take("--epochs-cs", &ExperimentConfig::epochs_cs);
    take("--epochs-tu", &ExperimentConfig::epochs_tu);
    take("--epochs-pretrain", &ExperimentConfig::pretrain_epochs);
    take("--batch-size", &ExperimentConfig::batch_size);
    take("--lr", &ExperimentConfig::lr);
    take("--temperature", &ExperimentConfig::temperature);
    take("--out", &ExperimentConfig::output_dir);
    take("--teacher-checkpoint", &ExperimentConfig::teacher_checkpoint);
    take("--student-checkpoint", &ExperimentConfig::student_checkpoint);
    if (cmd->count("--data-kind")) cfg.data.kind = qkd::parse_dataset_kind(data_kind);
    const auto take_data = [&](const char* flag, auto member) {
      if (cmd->count(flag)) cfg.data.*member = flags.data.*member;
    };
    take_data("--num-classes", &qkd::DatasetDescriptor::num_classes);
    take_data("--dim", &qkd::DatasetDescriptor::dim);
    take_data("--spread", &qkd::DatasetDescriptor::spread);
    take_data("--data-seed", &qkd::DatasetDescriptor::data_seed);
    take_data("--train-samples", &qkd::DatasetDescriptor::train_samples);
    take_data("--test-samples", &qkd::DatasetDescriptor::test_samples);
    take_data("--train-images", &qkd::DatasetDescriptor::train_images);
    take_data("--train-labels", &qkd::DatasetDescriptor::train_labels);
    take_data("--test-images", &qkd::DatasetDescriptor::test_images);
    take_data("--test-labels", &qkd::DatasetDescriptor::test_labels);
    take_data("--train-batches", &qkd::DatasetDescriptor::train_batches);
    take_data("--test-batches", &qkd::DatasetDescriptor::test_batches);
    if (cmd->count("--normalization")) cfg.data.norm = qkd::parse_normalization(normalization);
    return cfg;
  }

  std::string data_kind;
  std::string normalization;
};

int cmd_pretrain(const CommonFlags& common) {
  const qkd::PretrainResult res = qkd::pretrain(common.resolve());
  std::printf("teacher: %s (test top-1 %.2f%%)\n", res.teacher_path.c_str(), res.teacher_top1);
  std::printf("student: %s (test top-1 %.2f%%)\n", res.student_path.c_str(), res.student_top1);
  return 0;
}

int cmd_train(const CommonFlags& common) {
  ExperimentConfig cfg = common.resolve();
  const qkd::RunRecord rec = qkd::run_experiment(cfg);
  if (!rec.rows.empty()) {
    const qkd::RunRow& last = rec.rows.back();
    std::printf("%s w%da%d seed %llu: final test top-1 %.2f%% top-5 %.2f%% (%zu epochs)\n",
                last.mode.c_str(), last.bits, last.bits,
                static_cast<unsigned long long>(cfg.seed), last.student_test_top1,
                last.student_test_top5, rec.rows.size());
  } else {
    std::printf("%s: no training epochs requested\n", cfg.mode.c_str());
  }
  return 0;
}

int cmd_eval(const CommonFlags& common, const std::string& checkpoint) {
  ExperimentConfig cfg = common.resolve();
  qkd::DatasetPair data = qkd::load_dataset(cfg.data);
  const qkd::CheckpointData raw = qkd::read_checkpoint(checkpoint);
  qkd::InputShape in;
  if (data.test.inputs.ndim() == 2) {
    in.dim = static_cast<int>(data.test.inputs.dim(1));
  } else {
    in.channels = static_cast<int>(data.test.inputs.dim(1));
    in.hw = static_cast<int>(data.test.inputs.dim(2));
  }
  qkd::NetworkSpec spec = qkd::make_network_spec(raw.spec_name, cfg.bits, raw.num_classes, in);
  qkd::NetworkState net = qkd::load_state(checkpoint, spec);
  net.set_mode(cfg.bits < 32 && net.intervals_initialized() ? qkd::PrecisionMode::Quantized
                                                            : qkd::PrecisionMode::FullPrecision);
  const qkd::EvalResult res = qkd::evaluate(net, data.test, cfg.batch_size);
  std::printf("top-1 %.4f%%  top-5 %.4f%%%s\n", res.top1, res.top5,
              res.top5_flagged ? "  (fewer than 5 classes; top-5 reported as 100%)" : "");
  return 0;
}

int cmd_ablate(const CommonFlags& common, const std::vector<int>& bits_list,
               const std::vector<std::uint64_t>& seeds) {
  ExperimentConfig base = common.resolve();
  const std::string outdir = base.resolved_output_dir();
  std::filesystem::create_directories(outdir);
  if (!std::filesystem::exists(base.resolved_student_checkpoint()) ||
      !std::filesystem::exists(base.resolved_teacher_checkpoint())) {
    std::printf("pretraining full-precision networks...\n");
    qkd::pretrain(base);
  }
  // rows: Table-2 method order plus the activation-distillation baselines
  const std::vector<qkd::RunMode> modes = qkd::all_run_modes();
  std::map<std::pair<std::string, int>, double> medians;
  for (const int bits : bits_list) {
    for (const qkd::RunMode mode : modes) {
      std::vector<double> finals;
      for (const std::uint64_t seed : seeds) {
        ExperimentConfig cfg = base;
        cfg.seed = seed;
        const qkd::RunRecord rec = qkd::run_experiment(mode, bits, cfg);
        finals.push_back(rec.rows.empty() ? 0.0 : rec.rows.back().student_test_top1);
      }
      std::sort(finals.begin(), finals.end());
      const double median = finals[finals.size() / 2];
      medians[{qkd::to_string(mode), bits}] = median;
      std::printf("%-7s W%dA%d: median final top-1 %.2f%%\n", qkd::to_string(mode).c_str(), bits,
                  bits, median);
    }
  }
  // summary mirrors the per-bit-width method tables
  std::string summary = "method";
  for (int b : bits_list) summary += ",W" + std::to_string(b) + "A" + std::to_string(b);
  summary += "\n";
  for (const qkd::RunMode mode : modes) {
    summary += qkd::to_string(mode);
    for (int b : bits_list) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), ",%.4f", medians[{qkd::to_string(mode), b}]);
      summary += buf;
    }
    summary += "\n";
  }
  std::ofstream f(outdir + "/ablate_summary.csv", std::ios::binary | std::ios::trunc);
  f << summary;
  std::printf("summary written to %s/ablate_summary.csv\n", outdir.c_str());
  return 0;
}

int cmd_plotdata(const CommonFlags& common, const std::vector<std::string>& records) {
  ExperimentConfig cfg = common.resolve();
  const std::string outdir = cfg.resolved_output_dir();
  std::filesystem::create_directories(outdir);
  std::string kl = "epoch,mode,bits,mean_kl_T\n";
  std::string tacc = "epoch,mode,bits,teacher_test_top1\n";
  for (const std::string& path : records) {
    const qkd::RunRecord rec = qkd::RunRecord::read_csv(path);
    for (const qkd::RunRow& r : rec.rows) {
      char buf[128];
      if (!std::isnan(r.mean_kl_T)) {
        std::snprintf(buf, sizeof(buf), "%d,%s,%d,%.6f\n", r.epoch, r.mode.c_str(), r.bits,
                      r.mean_kl_T);
        kl += buf;
      }
      if (!std::isnan(r.teacher_test_top1)) {
        std::snprintf(buf, sizeof(buf), "%d,%s,%d,%.4f\n", r.epoch, r.mode.c_str(), r.bits,
                      r.teacher_test_top1);
        tacc += buf;
      }
    }
  }
  std::ofstream(outdir + "/kl_series.csv", std::ios::binary | std::ios::trunc) << kl;
  std::ofstream(outdir + "/teacher_acc_series.csv", std::ios::binary | std::ios::trunc) << tacc;
  std::printf("wrote %s/kl_series.csv and %s/teacher_acc_series.csv\n", outdir.c_str(),
              outdir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trainable-interval quantization-aware training with three-phase distillation"};
  app.require_subcommand(1);

  CommonFlags pretrain_flags, train_flags, eval_flags, ablate_flags, plot_flags;
  std::string eval_checkpoint;
  std::vector<int> ablate_bits{2, 3, 4};
  std::vector<std::uint64_t> ablate_seeds{1};
  std::vector<std::string> plot_records;

  CLI::App* pre = app.add_subcommand("pretrain", "train full-precision teacher/student checkpoints");
  pretrain_flags.attach(pre);
  CLI::App* train = app.add_subcommand("train", "run one experiment cell");
  train_flags.attach(train);
  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  eval_flags.attach(ev);
  ev->add_option("--checkpoint", eval_checkpoint, "checkpoint path")->required();
  CLI::App* grad = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  CLI::App* quant = app.add_subcommand("quantcheck", "quantizer property suite");
  CLI::App* abl = app.add_subcommand("ablate", "mode x bit-width grid with summary table");
  ablate_flags.attach(abl);
  abl->add_option("--bits-list", ablate_bits, "bit-widths to sweep")->delimiter(',');
  abl->add_option("--seeds", ablate_seeds, "seeds to median over")->delimiter(',');
  CLI::App* plot = app.add_subcommand("plotdata", "emit per-epoch KL / teacher-accuracy series");
  plot_flags.attach(plot);
  plot->add_option("records", plot_records, "run-record CSV files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    std::fprintf(stderr, "%s", app.help().c_str());
    return 2;
  }

  try {
    if (pre->parsed()) return cmd_pretrain(pretrain_flags);
    if (train->parsed()) return cmd_train(train_flags);
    if (ev->parsed()) return cmd_eval(eval_flags, eval_checkpoint);
    if (grad->parsed()) return qkd::report_checks(qkd::gradient_check_suite()) ? 0 : 1;
    if (quant->parsed()) return qkd::report_checks(qkd::quantizer_check_suite()) ? 0 : 1;
    if (abl->parsed()) return cmd_ablate(ablate_flags, ablate_bits, ablate_seeds);
    if (plot->parsed()) return cmd_plotdata(plot_flags, plot_records);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
