// Acceptance gate: runs every criterion at its stated tolerance and prints
// one PASS/FAIL line per criterion. Exit code 0 only if all gates pass.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "qkd/checkpoint.hpp"
#include "qkd/checks.hpp"
#include "qkd/distill.hpp"
#include "qkd/pipeline.hpp"
#include "qkd/quant.hpp"
#include "qkd/rng.hpp"

using namespace qkd;

namespace {

int g_failures = 0;

void report(const std::string& name, bool ok, const std::string& detail) {
  std::printf("%s  %-34s %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

std::string file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

std::string mask_wallclock(const std::string& csv) {
  std::string out;
  std::size_t start = 0;
  while (start < csv.size()) {
    std::size_t end = csv.find('\n', start);
    if (end == std::string::npos) end = csv.size();
    const std::string line = csv.substr(start, end - start);
    const std::size_t comma = line.rfind(',');
    out += comma == std::string::npos ? line : line.substr(0, comma);
    out += '\n';
    start = end + 1;
  }
  return out;
}

char fmtbuf[512];

// --- criterion 1: quantizer exactness + randomized properties, < 10 s ---
void criterion_quantizer() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = quantizer_check_suite(20240902, 10000);
  bool ok = true;
  std::string first_fail;
  for (const auto& r : results) {
    if (!r.passed && first_fail.empty()) first_fail = r.name + " " + r.detail;
    ok = ok && r.passed;
  }
  const double dt = seconds_since(t0);
  ok = ok && dt < 10.0;
  std::snprintf(fmtbuf, sizeof(fmtbuf), "%zu checks, %.2f s (budget 10 s)%s%s", results.size(), dt,
                first_fail.empty() ? "" : " first failure: ", first_fail.c_str());
  report("1 quantizer exactness", ok, fmtbuf);
}

// --- criterion 2: gradient correctness, < 60 s ---
void criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = gradient_check_suite(20240901);
  bool ok = true;
  std::string first_fail;
  for (const auto& r : results) {
    if (!r.passed && first_fail.empty()) first_fail = r.name + " " + r.detail;
    ok = ok && r.passed;
  }
  // quantizer closed form and within-cell interval recovery run in the
  // quantizer suite; re-run here so this criterion stands alone
  const auto qres = quantizer_check_suite(414243, 2000);
  for (const auto& r : qres) {
    if (r.name.rfind("interval-grad", 0) == 0) {
      if (!r.passed && first_fail.empty()) first_fail = r.name;
      ok = ok && r.passed;
    }
  }
  const double dt = seconds_since(t0);
  ok = ok && dt < 60.0;
  std::snprintf(fmtbuf, sizeof(fmtbuf), "%zu finite-difference cases, %.2f s (budget 60 s)%s%s",
                results.size(), dt, first_fail.empty() ? "" : " first failure: ",
                first_fail.c_str());
  report("2 gradient correctness", ok, fmtbuf);
}

// --- criterion 3: loss identities ---
void criterion_losses() {
  bool ok = true;
  std::string why;

  Tensor z({1, 4}, {0.3, -1.0, 2.0, 0.1});
  if (kl_divergence(ag::constant(z), ag::constant(z), 2.0).tensor().item() > 1e-12) {
    ok = false;
    why = "KL(p||p) != 0;";
  }

  Rng rng(515253);
  for (int i = 0; i < 10000 && ok; ++i) {
    Tensor a({1, 6}), b({1, 6});
    for (std::size_t j = 0; j < 6; ++j) {
      a[j] = rng.uniform(-10.0, 10.0);
      b[j] = rng.uniform(-10.0, 10.0);
    }
    if (mean_kl(a, b, rng.uniform(0.5, 4.0)) < 0.0) {
      ok = false;
      why = "negative KL;";
    }
  }

  // T = 1 makes the student loss exactly CE + KL
  Tensor zs({2, 3}, {0.3, 1.0, -0.5, 0.0, 0.2, 0.4});
  Tensor zt({2, 3}, {1.1, -0.3, 0.8, 0.5, 0.5, -0.2});
  const std::vector<int> y{2, 0};
  const double kd = student_kd_loss(ag::constant(zs), ag::constant(zt), y, 1.0).tensor().item();
  const double ce = cross_entropy(ag::constant(zs), y).tensor().item();
  const double kl = kl_divergence(ag::constant(zt), ag::constant(zs), 1.0).tensor().item();
  if (kd != ce + kl) {
    ok = false;
    why += " T=1 composition not exact;";
  }

  const double v =
      kl_divergence(ag::constant(Tensor({1, 2}, {1.0, 0.0})), ag::constant(Tensor({1, 2}, {0.0, 1.0})), 1.0)
          .tensor()
          .item();
  // independent oracle: KL = (e-1)/(e+1) for this pair
  const double oracle = (std::exp(1.0) - 1.0) / (std::exp(1.0) + 1.0);
  if (std::abs(v - 0.462117) > 1e-6 || std::abs(v - oracle) > 1e-12) {
    ok = false;
    why += " KL([1,0]||[0,1]) mismatch;";
  }
  std::snprintf(fmtbuf, sizeof(fmtbuf), "KL(p||p)=0, 10^4 nonneg draws, T=1 exact, 0.462117%s%s",
                why.empty() ? "" : " | ", why.c_str());
  report("3 loss identities", ok, fmtbuf);
}

struct DeskResults {
  std::vector<double> qkd2, bl2, qkd4, bl4, ap2, ssap2, ad2;
  std::vector<double> teacher_delta;           // end-of-CS minus start-of-CS
  std::vector<double> kl_qkd, kl_ssap;         // final-quarter means
  double teacher_start = 0.0;
  double max_cell_seconds = 0.0;
};

double final_quarter_kl(const RunRecord& rec) {
  const std::size_t n = rec.rows.size();
  const std::size_t q = n / 4;
  double acc = 0.0;
  for (std::size_t i = n - q; i < n; ++i) acc += rec.rows[i].mean_kl_T;
  return acc / static_cast<double>(q);
}

// --- criteria 4 and 5: desk-scale directional reproductions ---
DeskResults run_desk_grid(const std::string& outdir) {
  ExperimentConfig base;
  base.output_dir = outdir;
  std::filesystem::create_directories(outdir);

  ExperimentConfig precfg = base;
  precfg.seed = 7;
  const PretrainResult pre = pretrain(precfg);
  std::printf("     desk pretrain: teacher %.2f%%, student %.2f%%\n", pre.teacher_top1,
              pre.student_top1);

  DeskResults res;
  res.teacher_start = pre.teacher_top1;
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    ExperimentConfig cfg = base;
    cfg.seed = seed;
    const auto cell = [&](RunMode mode, int bits) {
      const auto t0 = std::chrono::steady_clock::now();
      RunRecord rec = run_experiment(mode, bits, cfg);
      res.max_cell_seconds = std::max(res.max_cell_seconds, seconds_since(t0));
      return rec;
    };
    RunRecord qkd2 = cell(RunMode::QKD, 2);
    res.qkd2.push_back(qkd2.rows.back().student_test_top1);
    res.kl_qkd.push_back(final_quarter_kl(qkd2));
    double end_cs = 0.0;
    for (const RunRow& r : qkd2.rows) {
      if (r.phase == "CS") end_cs = r.teacher_test_top1;
    }
    res.teacher_delta.push_back(end_cs - res.teacher_start);

    res.bl2.push_back(cell(RunMode::BL, 2).rows.back().student_test_top1);
    res.qkd4.push_back(cell(RunMode::QKD, 4).rows.back().student_test_top1);
    res.bl4.push_back(cell(RunMode::BL, 4).rows.back().student_test_top1);
    res.ap2.push_back(cell(RunMode::AP, 2).rows.back().student_test_top1);

    RunRecord ssap = cell(RunMode::SS_AP, 2);
    res.ssap2.push_back(ssap.rows.back().student_test_top1);
    res.kl_ssap.push_back(final_quarter_kl(ssap));

    res.ad2.push_back(cell(RunMode::AD, 2).rows.back().student_test_top1);
    std::printf("     seed %llu: qkd2 %.2f bl2 %.2f qkd4 %.2f bl4 %.2f ap* %.2f ss+ap* %.2f ad %.2f\n",
                static_cast<unsigned long long>(seed), res.qkd2.back(), res.bl2.back(),
                res.qkd4.back(), res.bl4.back(), res.ap2.back(), res.ssap2.back(), res.ad2.back());
  }
  return res;
}

void criteria_desk(const DeskResults& r) {
  {
    const bool low = median(r.qkd2) >= median(r.bl2) - 0.2;
    const bool mid = median(r.qkd4) >= median(r.bl4);
    const bool budget = r.max_cell_seconds < 1800.0;
    std::snprintf(fmtbuf, sizeof(fmtbuf),
                  "median qkd/bl W2A2 %.2f/%.2f (floor -0.2), W4A4 %.2f/%.2f, max cell %.1f s "
                  "(budget 1800 s)",
                  median(r.qkd2), median(r.bl2), median(r.qkd4), median(r.bl4),
                  r.max_cell_seconds);
    report("4a qkd vs baseline", low && mid && budget, fmtbuf);
  }
  {
    const bool ok = median(r.ssap2) >= median(r.ap2);
    std::snprintf(fmtbuf, sizeof(fmtbuf), "median ss+ap* %.2f >= ap* %.2f at W2A2",
                  median(r.ssap2), median(r.ap2));
    report("4b self-studying before ap*", ok, fmtbuf);
  }
  {
    const bool ok = median(r.teacher_delta) >= -0.5;
    std::snprintf(fmtbuf, sizeof(fmtbuf),
                  "teacher start %.2f%%, median end-of-CS delta %+.2f points (floor -0.5)",
                  r.teacher_start, median(r.teacher_delta));
    report("4c teacher holds through CS", ok, fmtbuf);
  }
  {
    const bool ok = median(r.kl_qkd) < median(r.kl_ssap);
    std::snprintf(fmtbuf, sizeof(fmtbuf),
                  "final-quarter mean KL: qkd %.4f < ss+ap* %.4f", median(r.kl_qkd),
                  median(r.kl_ssap));
    report("4d teacher-student adaptability", ok, fmtbuf);
  }
  {
    const bool ok = median(r.qkd2) > median(r.ad2);
    std::snprintf(fmtbuf, sizeof(fmtbuf), "median qkd %.2f > activation distillation %.2f at W2A2",
                  median(r.qkd2), median(r.ad2));
    report("5 posterior beats activations", ok, fmtbuf);
  }
}

// --- criterion 6: determinism through the command-line tool ---
void criterion_determinism(const std::string& outdir) {
#ifdef QKD_CLI_PATH
  const std::string cli = QKD_CLI_PATH;
  const std::string cmd = cli + " train --out " + outdir +
                          " --mode qkd --bits 2 --seed 21 --epochs-ss 2 --epochs-cs 3 "
                          "--epochs-tu 2 > /dev/null 2>&1";
  bool ok = std::system(cmd.c_str()) == 0;
  const std::string csv = outdir + "/qkd_w2a2_seed21.csv";
  const std::string ckpt = outdir + "/qkd_w2a2_seed21_student.qkdf";
  const std::string csv1 = file_bytes(csv);
  const std::string ckpt1 = file_bytes(ckpt);
  ok = ok && std::system(cmd.c_str()) == 0;
  const bool ckpt_same = file_bytes(ckpt) == ckpt1;
  const bool csv_same = mask_wallclock(file_bytes(csv)) == mask_wallclock(csv1);
  ok = ok && ckpt_same && csv_same;
  std::snprintf(fmtbuf, sizeof(fmtbuf),
                "repeated `train`: checkpoints byte-identical %s, CSV byte-identical outside the "
                "measured wallclock_s column %s",
                ckpt_same ? "yes" : "NO", csv_same ? "yes" : "NO");
  report("6 determinism", ok, fmtbuf);
#else
  report("6 determinism", false, "CLI path not wired into the build");
#endif
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string outdir = "qkd_acceptance_out";
  std::filesystem::remove_all(outdir);

  criterion_quantizer();
  criterion_gradients();
  criterion_losses();
  const DeskResults desk = run_desk_grid(outdir);
  criteria_desk(desk);
  criterion_determinism(outdir);
  std::printf("SKIP  %-34s %s\n", "7 extended cifar recipe",
              "multi-hour full-CIFAR run; documented in the README, not a gate");

  std::printf("%s in %.1f s\n", g_failures == 0 ? "all criteria passed" : "CRITERIA FAILED",
              seconds_since(t0));
  return g_failures == 0 ? 0 : 1;
}
