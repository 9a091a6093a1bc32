#include "qkd/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "qkd/checkpoint.hpp"
#include "qkd/distill.hpp"
#include "qkd/error.hpp"
#include "qkd/optim.hpp"
#include "qkd/rng.hpp"

namespace qkd {

RunMode parse_run_mode(const std::string& s) {
  if (s == "bl") return RunMode::BL;
  if (s == "ss+bl") return RunMode::SS_BL;
  if (s == "ap*" || s == "ap") return RunMode::AP;
  if (s == "ss+ap*" || s == "ss+ap") return RunMode::SS_AP;
  if (s == "cs+tu") return RunMode::CS_TU;
  if (s == "qkd") return RunMode::QKD;
  if (s == "ad") return RunMode::AD;
  if (s == "ss+ad") return RunMode::SS_AD;
  throw ConfigError("unknown run mode '" + s + "'");
}

std::string to_string(RunMode mode) {
  switch (mode) {
    case RunMode::BL: return "bl";
    case RunMode::SS_BL: return "ss+bl";
    case RunMode::AP: return "ap*";
    case RunMode::SS_AP: return "ss+ap*";
    case RunMode::CS_TU: return "cs+tu";
    case RunMode::QKD: return "qkd";
    case RunMode::AD: return "ad";
    case RunMode::SS_AD: return "ss+ad";
  }
  return "?";
}

std::vector<RunMode> all_run_modes() {
  return {RunMode::BL, RunMode::SS_BL, RunMode::AP,  RunMode::SS_AP,
          RunMode::CS_TU, RunMode::QKD, RunMode::AD, RunMode::SS_AD};
}

std::string cell_name(RunMode mode, int bits, std::uint64_t seed) {
  std::string m = to_string(mode);
  std::string safe;
  for (char c : m) {
    if (c == '+') safe += '-';
    else if (c == '*') safe += "star";
    else safe += c;
  }
  return safe + "_w" + std::to_string(bits) + "a" + std::to_string(bits) + "_seed" +
         std::to_string(seed);
}

BatchScore score_logits(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2 || logits.dim(0) != labels.size()) {
    throw ContractError("score_logits: logits/label shape mismatch");
  }
  const std::size_t m = logits.dim(1);
  BatchScore score;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const int y = labels[r];
    std::size_t best = 0;
    for (std::size_t j = 1; j < m; ++j) {
      if (logits[r * m + j] > logits[r * m + best]) best = j;
    }
    if (static_cast<int>(best) == y) ++score.top1_hits;
    if (m < 5) {
      ++score.top5_hits;
    } else {
      // Rank classes by (logit desc, index asc); count label in the top 5.
      std::vector<std::size_t> order(m);
      std::iota(order.begin(), order.end(), 0);
      std::partial_sort(order.begin(), order.begin() + 5, order.end(),
                        [&](std::size_t a, std::size_t b) {
                          if (logits[r * m + a] != logits[r * m + b]) {
                            return logits[r * m + a] > logits[r * m + b];
                          }
                          return a < b;
                        });
      for (int t = 0; t < 5; ++t) {
        if (order[t] == static_cast<std::size_t>(y)) {
          ++score.top5_hits;
          break;
        }
      }
    }
  }
  return score;
}

EvalResult evaluate(NetworkState& state, const Dataset& ds, int batch_size) {
  if (ds.size() == 0) throw ContractError("evaluate: empty dataset");
  const std::size_t n = ds.size();
  std::size_t hit1 = 0, hit5 = 0;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t stop = std::min(n, start + batch_size);
    std::vector<std::size_t> idx(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor logits = forward(state, ds.gather(idx)).tensor();
    const BatchScore score = score_logits(logits, ds.gather_labels(idx));
    hit1 += score.top1_hits;
    hit5 += score.top5_hits;
  }
  EvalResult res;
  res.top1 = 100.0 * static_cast<double>(hit1) / static_cast<double>(n);
  res.top5 = 100.0 * static_cast<double>(hit5) / static_cast<double>(n);
  res.top5_flagged = ds.num_classes < 5;
  return res;
}

double mean_test_kl(NetworkState& teacher, NetworkState& student, const Dataset& ds,
                    double temperature, int batch_size) {
  const std::size_t n = ds.size();
  double acc = 0.0;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t stop = std::min(n, start + batch_size);
    std::vector<std::size_t> idx(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    Tensor bx = ds.gather(idx);
    Tensor zt = forward(teacher, bx).tensor();
    Tensor zs = forward(student, bx).tensor();
    acc += mean_kl(zt, zs, temperature) * static_cast<double>(idx.size());
  }
  return acc / static_cast<double>(n);
}

const char* RunRecord::kCsvHeader =
    "epoch,phase,mode,bits,student_train_top1,student_test_top1,student_test_top5,"
    "teacher_test_top1,loss_ce,loss_kl,mean_kl_T,teacher_frozen,wallclock_s";

namespace {

void append_num(std::string& out, double v, const char* fmt) {
  char buf[64];
  if (std::isnan(v)) {
    out += "nan";
  } else {
    std::snprintf(buf, sizeof(buf), fmt, v);
    out += buf;
  }
}

}  // namespace

std::string RunRecord::to_csv() const {
  std::string out = kCsvHeader;
  out += "\n";
  for (const RunRow& r : rows) {
    out += std::to_string(r.epoch) + "," + r.phase + "," + r.mode + "," + std::to_string(r.bits) + ",";
    append_num(out, r.student_train_top1, "%.4f");
    out += ",";
    append_num(out, r.student_test_top1, "%.4f");
    out += ",";
    append_num(out, r.student_test_top5, "%.4f");
    out += ",";
    append_num(out, r.teacher_test_top1, "%.4f");
    out += ",";
    append_num(out, r.loss_ce, "%.6f");
    out += ",";
    append_num(out, r.loss_kl, "%.6f");
    out += ",";
    append_num(out, r.mean_kl_T, "%.6f");
    out += ",";
    out += r.teacher_frozen ? "1" : "0";
    out += ",";
    append_num(out, r.wallclock_s, "%.3f");
    out += "\n";
  }
  return out;
}

void RunRecord::write_csv(const std::string& path) const {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot open '" + path + "' for writing");
  const std::string text = to_csv();
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
}

RunRecord RunRecord::read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(f, line)) throw FormatError("'" + path + "': empty CSV");
  if (line != kCsvHeader) throw FormatError("'" + path + "': unexpected CSV header");
  RunRecord rec;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 13) throw FormatError("'" + path + "': bad CSV row '" + line + "'");
    RunRow r;
    r.epoch = std::stoi(cells[0]);
    r.phase = cells[1];
    r.mode = cells[2];
    r.bits = std::stoi(cells[3]);
    r.student_train_top1 = std::stod(cells[4]);
    r.student_test_top1 = std::stod(cells[5]);
    r.student_test_top5 = std::stod(cells[6]);
    r.teacher_test_top1 = std::stod(cells[7]);
    r.loss_ce = std::stod(cells[8]);
    r.loss_kl = std::stod(cells[9]);
    r.mean_kl_T = std::stod(cells[10]);
    r.teacher_frozen = cells[11] == "1";
    r.wallclock_s = std::stod(cells[12]);
    rec.rows.push_back(std::move(r));
  }
  return rec;
}

namespace {

// SGD over the weights, Adam over the intervals, per the mixed-optimizer
// recipe: interval LRs derive from the weight LR (I_W at lr/100, I_X at lr
// by default), stepped together and rescheduled together.
struct MixedTrainer {
  MixedTrainer(NetworkState& net, const ExperimentConfig& cfg, int span_epochs, bool ss_span,
               std::vector<Parameter*> extra_weights = {}) {
    std::vector<Parameter*> weights = net.weight_parameters();
    for (Parameter* p : extra_weights) weights.push_back(p);
    std::vector<Parameter*> iw, ix;
    for (Parameter* p : net.interval_parameters()) {
      if (p->name.size() >= 3 && p->name.substr(p->name.size() - 3) == ".iw") {
        iw.push_back(p);
      } else {
        ix.push_back(p);
      }
    }
    all.reserve(weights.size() + iw.size() + ix.size());
    for (Parameter* p : weights) all.push_back(p);
    for (Parameter* p : iw) all.push_back(p);
    for (Parameter* p : ix) all.push_back(p);

    base_lr = cfg.lr;
    sgd = std::make_unique<SgdOptimizer>(weights, cfg.lr, cfg.momentum, cfg.weight_decay);
    if (!iw.empty()) {
      adam_iw = std::make_unique<AdamOptimizer>(iw, cfg.lr * cfg.iw_lr_ratio, cfg.adam_beta1,
                                                cfg.adam_beta2, cfg.adam_eps);
    }
    if (!ix.empty()) {
      adam_ix = std::make_unique<AdamOptimizer>(ix, cfg.lr * cfg.ix_lr_ratio, cfg.adam_beta1,
                                                cfg.adam_beta2, cfg.adam_eps);
    }
    iw_ratio = cfg.iw_lr_ratio;
    ix_ratio = cfg.ix_lr_ratio;
    // Step schedule: /10 at thirds for self-studying spans, at the usual
    // 80/170 and 120/170 marks for the main spans.
    const double fa = ss_span ? 1.0 / 3.0 : 80.0 / 170.0;
    const double fb = ss_span ? 2.0 / 3.0 : 120.0 / 170.0;
    for (double f : {fa, fb}) {
      const int e = static_cast<int>(f * span_epochs);
      if (e > 0) milestones.push_back(e);
    }
  }

  void begin_epoch(int epoch_in_span) {
    double lr = base_lr;
    for (int ms : milestones) {
      if (epoch_in_span >= ms) lr *= 0.1;
    }
    sgd->set_lr(lr);
    if (adam_iw) adam_iw->set_lr(lr * iw_ratio);
    if (adam_ix) adam_ix->set_lr(lr * ix_ratio);
  }

  void step() {
    sgd->step();
    if (adam_iw) adam_iw->step();
    if (adam_ix) adam_ix->step();
  }

  void zero_grad() {
    for (Parameter* p : all) p->zero_grad();
  }

  std::unique_ptr<SgdOptimizer> sgd;
  std::unique_ptr<AdamOptimizer> adam_iw, adam_ix;
  std::vector<Parameter*> all;
  std::vector<int> milestones;
  double base_lr = 0.0;
  double iw_ratio = 0.0, ix_ratio = 0.0;
};

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, int batch_size, Rng& rng) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t stop = std::min(n, start + batch_size);
    batches.emplace_back(perm.begin() + start, perm.begin() + stop);
  }
  return batches;
}

std::size_t count_top1(const Tensor& logits, const std::vector<int>& labels) {
  return score_logits(logits, labels).top1_hits;
}

enum class EpochKind { CrossEntropy, CoStudy, FrozenKd, FrozenAd };

const char* phase_label(EpochKind kind) {
  switch (kind) {
    case EpochKind::CrossEntropy: return "SS";
    case EpochKind::CoStudy: return "CS";
    case EpochKind::FrozenKd: return "TU";
    case EpochKind::FrozenAd: return "AD";
  }
  return "?";
}

struct SpanRunner {
  NetworkState& student;
  NetworkState* teacher = nullptr;  // required except for CrossEntropy epochs
  const PhaseIO& io;
  MixedTrainer& student_trainer;
  MixedTrainer* teacher_trainer = nullptr;  // co-study only
  Parameter* ad_regressor = nullptr;        // FrozenAd only
  Rng& rng;

  void run_epoch(EpochKind kind, int epoch_in_span) {
    const auto t0 = std::chrono::steady_clock::now();
    const ExperimentConfig& cfg = io.cfg;
    const Dataset& train = io.data.train;
    student_trainer.begin_epoch(epoch_in_span);
    if (teacher_trainer) teacher_trainer->begin_epoch(epoch_in_span);

    double ce_sum = 0.0, kd_sum = 0.0;
    std::size_t hits = 0;
    const auto batches = make_batches(train.size(), cfg.batch_size, rng);
    for (const auto& idx : batches) {
      const Tensor bx = train.gather(idx);
      const std::vector<int> by = train.gather_labels(idx);
      const double bn = static_cast<double>(idx.size());

      if (kind == EpochKind::CoStudy) {
        // Alg-order: the teacher minimizes its KD loss against detached
        // student logits, then the student trains on the same batch.
        ag::Value z_s_pre = forward(student, bx);
        ag::Value z_t = forward(*teacher, bx);
        ag::Value ce_t = cross_entropy(z_t, by);
        ag::Value loss_t = ag::add(
            ce_t, ag::scale(kl_divergence(ag::detach(z_s_pre), z_t, cfg.temperature),
                            cfg.kl_weight * cfg.temperature * cfg.temperature));
        ag::backward(loss_t);
        teacher_trainer->step();
        teacher_trainer->zero_grad();
        student_trainer.zero_grad();

        ag::Value z_t_for_student =
            cfg.cs_fresh_teacher_logits ? forward(*teacher, bx) : z_t;
        ag::Value z_s = cfg.cs_fresh_teacher_logits ? forward(student, bx) : z_s_pre;
        ag::Value ce_s = cross_entropy(z_s, by);
        ag::Value kd = ag::scale(kl_divergence(ag::detach(z_t_for_student), z_s, cfg.temperature),
                                 cfg.kl_weight * cfg.temperature * cfg.temperature);
        ag::Value loss_s = ag::add(ce_s, kd);
        ag::backward(loss_s);
        student_trainer.step();
        student_trainer.zero_grad();
        if (teacher_trainer) teacher_trainer->zero_grad();

        ce_sum += ce_s.tensor().item() * bn;
        kd_sum += kd.tensor().item() * bn;
        hits += count_top1(z_s.tensor(), by);
      } else if (kind == EpochKind::FrozenKd) {
        ag::Value z_t = forward(*teacher, bx);
        ag::Value z_s = forward(student, bx);
        ag::Value ce_s = cross_entropy(z_s, by);
        ag::Value kd = ag::scale(kl_divergence(ag::detach(z_t), z_s, cfg.temperature),
                                 cfg.kl_weight * cfg.temperature * cfg.temperature);
        ag::Value loss = ag::add(ce_s, kd);
        ag::backward(loss);
        student_trainer.step();
        student_trainer.zero_grad();
        ce_sum += ce_s.tensor().item() * bn;
        kd_sum += kd.tensor().item() * bn;
        hits += count_top1(z_s.tensor(), by);
      } else if (kind == EpochKind::FrozenAd) {
        ag::Value ft;
        forward(*teacher, bx, &ft);
        ag::Value fs;
        ag::Value z_s = forward(student, bx, &fs);
        ag::Value ce_s = cross_entropy(z_s, by);
        ag::Value ad = ag::scale(
            activation_distill_loss(fs, ft, ag::leaf(*ad_regressor)), cfg.ad_weight);
        ag::Value loss = ag::add(ce_s, ad);
        ag::backward(loss);
        student_trainer.step();
        student_trainer.zero_grad();
        ce_sum += ce_s.tensor().item() * bn;
        kd_sum += ad.tensor().item() * bn;
        hits += count_top1(z_s.tensor(), by);
      } else {
        ag::Value z_s = forward(student, bx);
        ag::Value loss = cross_entropy(z_s, by);
        ag::backward(loss);
        student_trainer.step();
        student_trainer.zero_grad();
        ce_sum += loss.tensor().item() * bn;
        hits += count_top1(z_s.tensor(), by);
      }
    }

    if (io.record) {
      const double n = static_cast<double>(train.size());
      RunRow row;
      row.epoch = io.epoch_offset + epoch_in_span + 1;
      row.phase = phase_label(kind);
      row.mode = cfg.mode;
      row.bits = cfg.bits;
      row.student_train_top1 = 100.0 * static_cast<double>(hits) / n;
      const EvalResult ev = evaluate(student, io.data.test, cfg.batch_size);
      row.student_test_top1 = ev.top1;
      row.student_test_top5 = ev.top5;
      row.loss_ce = ce_sum / n;
      row.loss_kl = kd_sum / n;
      NetworkState* mt = teacher ? teacher : io.metrics_teacher;
      if (mt) {
        row.teacher_test_top1 = evaluate(*mt, io.data.test, cfg.batch_size).top1;
        row.mean_kl_T = mean_test_kl(*mt, student, io.data.test, cfg.temperature, cfg.batch_size);
      } else {
        row.teacher_test_top1 = std::nan("");
        row.mean_kl_T = std::nan("");
      }
      row.teacher_frozen = kind != EpochKind::CoStudy;
      row.wallclock_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      io.record->rows.push_back(std::move(row));
    }
  }
};

}  // namespace

void phase_self_study(NetworkState& student, const PhaseIO& io, int epochs) {
  if (epochs <= 0) return;
  if (student.mode() == PrecisionMode::Quantized && !student.intervals_initialized()) {
    throw StateError("self-studying requires initialized quantizer intervals");
  }
  MixedTrainer trainer(student, io.cfg, epochs, true);
  Rng rng(Rng::derive(io.cfg.seed, 0x5501u + static_cast<std::uint64_t>(io.epoch_offset)));
  SpanRunner runner{student, nullptr, io, trainer, nullptr, nullptr, rng};
  for (int e = 0; e < epochs; ++e) runner.run_epoch(EpochKind::CrossEntropy, e);
}

void phase_co_study_tutoring(NetworkState& teacher, NetworkState& student, const PhaseIO& io,
                             int cs_epochs, int tu_epochs) {
  const int span = cs_epochs + tu_epochs;
  if (span <= 0) return;
  if (teacher.mode() != PrecisionMode::FullPrecision) {
    throw StateError("the teacher runs in full precision during distillation");
  }
  MixedTrainer student_trainer(student, io.cfg, span, false);
  MixedTrainer teacher_trainer(teacher, io.cfg, span, false);
  Rng rng(Rng::derive(io.cfg.seed, 0xc57uL));
  SpanRunner runner{student, &teacher, io, student_trainer, &teacher_trainer, nullptr, rng};
  for (int e = 0; e < cs_epochs; ++e) runner.run_epoch(EpochKind::CoStudy, e);
  runner.teacher_trainer = nullptr;  // tutoring freezes the teacher
  for (int e = cs_epochs; e < span; ++e) runner.run_epoch(EpochKind::FrozenKd, e);
}

void phase_co_study(NetworkState& teacher, NetworkState& student, const PhaseIO& io, int epochs) {
  phase_co_study_tutoring(teacher, student, io, epochs, 0);
}

void phase_tutoring(NetworkState& teacher, NetworkState& student, const PhaseIO& io, int epochs) {
  phase_co_study_tutoring(teacher, student, io, 0, epochs);
}

void phase_frozen_distill(NetworkState& teacher, NetworkState& student, const PhaseIO& io,
                          int epochs, bool activation_distill) {
  if (epochs <= 0) return;
  if (teacher.mode() != PrecisionMode::FullPrecision) {
    throw StateError("the teacher runs in full precision during distillation");
  }
  std::unique_ptr<Parameter> regressor;
  std::vector<Parameter*> extra;
  if (activation_distill) {
    // Size the regressor from one probe featuremap of each network.
    std::vector<std::size_t> one{0};
    const Tensor probe = io.data.train.gather(one);
    ag::Value fs, ft;
    forward(student, probe, &fs);
    forward(teacher, probe, &ft);
    const auto& ss = fs.tensor().shape();
    const auto& ts = ft.tensor().shape();
    Tensor w;
    if (ss.size() == 2) {
      w = Tensor({ss[1], ts[1]});
    } else {
      w = Tensor({ts[1], ss[1], 1, 1});
    }
    Rng init_rng(Rng::derive(io.cfg.seed, 0xadadULL));
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.01 * init_rng.normal();
    regressor = std::make_unique<Parameter>("ad.regressor", std::move(w), ParamKind::Weight);
    extra.push_back(regressor.get());
  }
  MixedTrainer trainer(student, io.cfg, epochs, false, extra);
  Rng rng(Rng::derive(io.cfg.seed, activation_distill ? 0xad00ULL : 0xa900ULL));
  SpanRunner runner{student, &teacher, io, trainer, nullptr, regressor.get(), rng};
  for (int e = 0; e < epochs; ++e) {
    runner.run_epoch(activation_distill ? EpochKind::FrozenAd : EpochKind::FrozenKd, e);
  }
}

namespace {

InputShape input_shape_of(const Dataset& ds) {
  InputShape in;
  if (ds.inputs.ndim() == 2) {
    in.dim = static_cast<int>(ds.inputs.dim(1));
  } else if (ds.inputs.ndim() == 4) {
    in.channels = static_cast<int>(ds.inputs.dim(1));
    in.hw = static_cast<int>(ds.inputs.dim(2));
  } else {
    throw StateError("dataset inputs must be 2-d or 4-d");
  }
  return in;
}

Tensor probe_batch(const Dataset& ds, int batch_size) {
  const std::size_t n = std::min<std::size_t>(ds.size(), static_cast<std::size_t>(batch_size));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  return ds.gather(idx);
}

}  // namespace

PretrainResult pretrain(ExperimentConfig cfg) {
  cfg.validate();
  const std::string outdir = cfg.resolved_output_dir();
  std::filesystem::create_directories(outdir);
  DatasetPair data = load_dataset(cfg.data);
  const InputShape in = input_shape_of(data.train);
  const int m = data.train.num_classes;

  PretrainResult res;
  res.teacher_path = cfg.resolved_teacher_checkpoint();
  res.student_path = cfg.resolved_student_checkpoint();

  const auto train_fp = [&](const std::string& name, std::uint64_t tag, const std::string& path) {
    NetworkSpec spec = make_network_spec(name, 32, m, in);
    NetworkState net(spec, Rng::derive(cfg.seed, tag));
    net.set_mode(PrecisionMode::FullPrecision);
    ExperimentConfig local = cfg;
    local.seed = Rng::derive(cfg.seed, tag + 1);
    PhaseIO io{data, local, nullptr, 0, nullptr};
    phase_self_study(net, io, cfg.pretrain_epochs);
    save_state(net, path);
    return evaluate(net, data.test, cfg.batch_size).top1;
  };
  res.teacher_top1 = train_fp(cfg.teacher, 0x7e00, res.teacher_path);
  res.student_top1 = train_fp(cfg.student, 0x5700, res.student_path);
  return res;
}

RunRecord run_experiment(RunMode mode, int bits, ExperimentConfig cfg) {
  cfg.mode = to_string(mode);
  cfg.bits = bits;
  return run_experiment(std::move(cfg));
}

RunRecord run_experiment(ExperimentConfig cfg) {
  cfg.validate();
  const RunMode mode = parse_run_mode(cfg.mode);
  cfg.mode = to_string(mode);  // canonical name in records and file names
  const std::string outdir = cfg.resolved_output_dir();
  std::filesystem::create_directories(outdir);

  DatasetPair data = load_dataset(cfg.data);
  const InputShape in = input_shape_of(data.train);
  const int m = data.train.num_classes;

  const bool needs_teacher = mode != RunMode::BL && mode != RunMode::SS_BL;
  const std::string s_ckpt = cfg.resolved_student_checkpoint();
  if (!std::filesystem::exists(s_ckpt)) {
    throw ConfigError("missing pre-trained student checkpoint '" + s_ckpt + "' (run pretrain)");
  }
  const std::string t_ckpt = cfg.resolved_teacher_checkpoint();
  if (needs_teacher && !std::filesystem::exists(t_ckpt)) {
    throw ConfigError("missing pre-trained teacher checkpoint '" + t_ckpt + "' (run pretrain)");
  }

  // Student starts from the pre-trained full-precision weights; intervals
  // come from min-max over the weights and one probe batch.
  NetworkSpec s_spec = make_network_spec(cfg.student, cfg.bits, m, in);
  NetworkState student = load_state(s_ckpt, s_spec);
  student.set_gated_ste(cfg.gated_ste);
  const bool quantized = cfg.bits < 32;
  student.set_mode(quantized ? PrecisionMode::Quantized : PrecisionMode::FullPrecision);
  if (quantized) init_intervals_minmax(student, probe_batch(data.train, cfg.batch_size));

  std::unique_ptr<NetworkState> teacher;
  if (needs_teacher) {
    NetworkSpec t_spec = make_network_spec(cfg.teacher, 32, m, in);
    teacher = std::make_unique<NetworkState>(load_state(t_ckpt, t_spec));
    teacher->set_mode(PrecisionMode::FullPrecision);
  }

  RunRecord record;
  const int p1 = cfg.epochs_ss, p2 = cfg.epochs_cs, p3 = cfg.epochs_tu;
  const int total = p1 + p2 + p3;
  PhaseIO io{data, cfg, &record, 0, teacher.get()};

  switch (mode) {
    case RunMode::BL:
      phase_self_study(student, io, total);
      break;
    case RunMode::SS_BL:
      phase_self_study(student, io, p1);
      io.epoch_offset = p1;
      phase_self_study(student, io, p2 + p3);
      break;
    case RunMode::AP:
      phase_frozen_distill(*teacher, student, io, total, false);
      break;
    case RunMode::SS_AP:
      phase_self_study(student, io, p1);
      io.epoch_offset = p1;
      phase_frozen_distill(*teacher, student, io, p2 + p3, false);
      break;
    case RunMode::CS_TU:
      phase_co_study_tutoring(*teacher, student, io, p2, p3);
      break;
    case RunMode::QKD:
      phase_self_study(student, io, p1);
      io.epoch_offset = p1;
      phase_co_study_tutoring(*teacher, student, io, p2, p3);
      break;
    case RunMode::AD:
      phase_frozen_distill(*teacher, student, io, total, true);
      break;
    case RunMode::SS_AD:
      phase_self_study(student, io, p1);
      io.epoch_offset = p1;
      phase_frozen_distill(*teacher, student, io, p2 + p3, true);
      break;
  }

  const std::string cell = cell_name(mode, cfg.bits, cfg.seed);
  record.write_csv(outdir + "/" + cell + ".csv");
  save_state(student, outdir + "/" + cell + "_student.qkdf");
  std::ofstream cfg_out(outdir + "/" + cell + "_config.json", std::ios::binary | std::ios::trunc);
  cfg_out << cfg.to_json_text();
  return record;
}

}  // namespace qkd
