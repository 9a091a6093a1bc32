#include <cmath>
#include <vector>

#include <doctest.h>

#include "qkd/checks.hpp"
#include "qkd/distill.hpp"
#include "qkd/rng.hpp"

using namespace qkd;

namespace {

// Independent scalar oracle: long-double softmax/CE/KL straight from the
// definitions, no shared code with the implementation under test.
std::vector<long double> oracle_posterior(const std::vector<long double>& z, long double t) {
  long double denom = 0.0L;
  for (long double v : z) denom += std::exp(v / t);
  std::vector<long double> p;
  for (long double v : z) p.push_back(std::exp(v / t) / denom);
  return p;
}

long double oracle_ce(const std::vector<long double>& z, int y) {
  return -std::log(oracle_posterior(z, 1.0L)[y]);
}

long double oracle_kl(const std::vector<long double>& from, const std::vector<long double>& to,
                      long double t) {
  const auto p = oracle_posterior(from, t);
  const auto q = oracle_posterior(to, t);
  long double acc = 0.0L;
  for (std::size_t i = 0; i < p.size(); ++i) acc += p[i] * std::log(p[i] / q[i]);
  return acc;
}

long double oracle_entropy(const std::vector<long double>& z, long double t) {
  const auto p = oracle_posterior(z, t);
  long double h = 0.0L;
  for (long double v : p) h -= v * std::log(v);
  return h;
}

Tensor row(std::initializer_list<double> vals) {
  return Tensor({1, vals.size()}, std::vector<double>(vals));
}

}  // namespace

TEST_SUITE_BEGIN("distill");

TEST_CASE("softened posterior hand values") {
  Tensor u = softened_posterior(row({4.2, 4.2, 4.2}), 3.7);
  for (std::size_t i = 0; i < 3; ++i) CHECK(u[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  Tensor p = softened_posterior(row({1.0, 0.0}), 1.0);
  CHECK(p[0] == doctest::Approx(0.731059).epsilon(1e-5));
  CHECK(p[1] == doctest::Approx(0.268941).epsilon(1e-5));
  const auto op = oracle_posterior({1.0L, 0.0L}, 1.0L);
  CHECK(p[0] == doctest::Approx(static_cast<double>(op[0])).epsilon(1e-12));
  CHECK(p[1] == doctest::Approx(static_cast<double>(op[1])).epsilon(1e-12));

  // z/T equivalence: [2,0] at T=2 equals [1,0] at T=1
  Tensor q = softened_posterior(row({2.0, 0.0}), 2.0);
  CHECK(q[0] == p[0]);
  CHECK(q[1] == p[1]);

  CHECK_THROWS_AS(softened_posterior(row({1.0, 0.0}), 0.0), ContractError);
  CHECK_THROWS_AS(softened_posterior(row({1.0, 0.0}), -2.0), ContractError);
}

TEST_CASE("tape and plain posterior paths agree") {
  Rng rng(30);
  Tensor z({3, 5});
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = rng.uniform(-4.0, 4.0);
  Tensor plain = softened_posterior(z, 2.0);
  Parameter p("z", z);
  ag::Value soft = softened_posterior(ag::leaf(p), 2.0);
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(soft.tensor()[i] == plain[i]);
  ag::backward(ag::sum(soft));
  // rows sum to 1 whatever the logits, so the pulled-back gradient of the
  // row sums vanishes
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(std::abs(p.grad[i]) < 1e-12);
}

TEST_CASE("posterior rows sum to one within 1e-12") {
  Rng rng(31);
  for (int rep = 0; rep < 200; ++rep) {
    Tensor z({4, 7});
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = rng.uniform(-50.0, 50.0);
    const double t = rng.uniform(0.5, 8.0);
    Tensor p = softened_posterior(z, t);
    for (std::size_t r = 0; r < 4; ++r) {
      double sum = 0.0;
      for (std::size_t j = 0; j < 7; ++j) sum += p[r * 7 + j];
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("cross-entropy hand values") {
  // near-perfect prediction
  CHECK(cross_entropy(ag::constant(row({50.0, 0.0, 0.0})), {0}).tensor().item() < 1e-12);
  CHECK(cross_entropy(ag::constant(row({0.0, 0.0})), {0}).tensor().item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(cross_entropy(ag::constant(row({0.0, 0.0, 0.0, 0.0})), {2}).tensor().item() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK_THROWS_AS(cross_entropy(ag::constant(row({0.0, 0.0})), {2}), ContractError);
  CHECK_THROWS_AS(cross_entropy(ag::constant(row({0.0, 0.0})), {-1}), ContractError);
}

TEST_CASE("cross-entropy averages the batch at T=1") {
  Tensor z({2, 2}, {0.0, 0.0, 3.0, -1.0});
  const double got = cross_entropy(ag::constant(z), {0, 1}).tensor().item();
  const long double want = (oracle_ce({0.0L, 0.0L}, 0) + oracle_ce({3.0L, -1.0L}, 1)) / 2.0L;
  CHECK(got == doctest::Approx(static_cast<double>(want)).epsilon(1e-12));
}

TEST_CASE("kl divergence values and asymmetry") {
  CHECK(kl_divergence(ag::constant(row({0.3, -1.2, 4.0})), ag::constant(row({0.3, -1.2, 4.0})), 2.0)
            .tensor()
            .item() == 0.0);

  const double v = kl_divergence(ag::constant(row({1.0, 0.0})), ag::constant(row({0.0, 1.0})), 1.0)
                       .tensor()
                       .item();
  CHECK(v == doctest::Approx(0.462117).epsilon(1e-6));
  CHECK(v == doctest::Approx(static_cast<double>(oracle_kl({1.0L, 0.0L}, {0.0L, 1.0L}, 1.0L)))
                 .epsilon(1e-12));

  // that pair is symmetric by accident; this one is not
  const double a = kl_divergence(ag::constant(row({2.0, 0.0})), ag::constant(row({0.0, 1.0})), 1.0)
                       .tensor()
                       .item();
  const double b = kl_divergence(ag::constant(row({0.0, 1.0})), ag::constant(row({2.0, 0.0})), 1.0)
                       .tensor()
                       .item();
  CHECK(a != b);
  CHECK(a == doctest::Approx(static_cast<double>(oracle_kl({2.0L, 0.0L}, {0.0L, 1.0L}, 1.0L)))
                 .epsilon(1e-12));

  CHECK_THROWS_AS(
      kl_divergence(ag::constant(row({1.0, 0.0})), ag::constant(Tensor({1, 3})), 1.0),
      ContractError);
}

TEST_CASE("kl divergence is non-negative on random pairs") {
  Rng rng(33);
  for (int rep = 0; rep < 2000; ++rep) {
    Tensor a({2, 5}), b({2, 5});
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = rng.uniform(-8.0, 8.0);
      b[i] = rng.uniform(-8.0, 8.0);
    }
    const double t = rng.uniform(0.5, 4.0);
    CHECK(kl_divergence(ag::constant(a), ag::constant(b), t).tensor().item() >= 0.0);
    CHECK(mean_kl(a, b, t) >= 0.0);
  }
}

TEST_CASE("kd losses compose CE and the T^2-scaled KL") {
  const std::vector<int> y{0};
  // equal logits: the KL term vanishes
  {
    Tensor z = row({0.7, -0.2});
    const double kd = student_kd_loss(ag::constant(z), ag::constant(z), y, 2.0).tensor().item();
    CHECK(kd == cross_entropy(ag::constant(z), y).tensor().item());
  }
  // T = 1: loss is exactly CE + KL
  {
    Tensor zs = row({0.2, 1.4});
    Tensor zt = row({1.0, -0.5});
    const double kd = student_kd_loss(ag::constant(zs), ag::constant(zt), y, 1.0).tensor().item();
    const double ce = cross_entropy(ag::constant(zs), y).tensor().item();
    const double kl = kl_divergence(ag::constant(zt), ag::constant(zs), 1.0).tensor().item();
    CHECK(kd == ce + kl);
  }
  // the frozen T=2 example, fixed by the independent oracle
  {
    const long double want =
        oracle_ce({0.0L, 1.0L}, 0) + 4.0L * oracle_kl({1.0L, 0.0L}, {0.0L, 1.0L}, 2.0L);
    CHECK(static_cast<double>(want) == doctest::Approx(1.8030991).epsilon(1e-6));
    const double got =
        student_kd_loss(ag::constant(row({0.0, 1.0})), ag::constant(row({1.0, 0.0})), y, 2.0)
            .tensor()
            .item();
    CHECK(got == doctest::Approx(static_cast<double>(want)).epsilon(1e-12));
    // and the teacher-side loss swaps the KL direction
    const long double want_t =
        oracle_ce({1.0L, 0.0L}, 0) + 4.0L * oracle_kl({0.0L, 1.0L}, {1.0L, 0.0L}, 2.0L);
    const double got_t =
        teacher_kd_loss(ag::constant(row({1.0, 0.0})), ag::constant(row({0.0, 1.0})), y, 2.0)
            .tensor()
            .item();
    CHECK(got_t == doctest::Approx(static_cast<double>(want_t)).epsilon(1e-12));
  }
}

TEST_CASE("raising the temperature raises posterior entropy") {
  Rng rng(34);
  for (int rep = 0; rep < 300; ++rep) {
    std::vector<long double> z;
    Tensor zt({1, 6});
    for (std::size_t i = 0; i < 6; ++i) {
      zt[i] = rng.uniform(-5.0, 5.0);
      z.push_back(zt[i]);
    }
    const double t1 = rng.uniform(0.5, 3.0);
    const double t2 = t1 * rng.uniform(1.5, 3.0);
    const auto entropy = [&](double t) {
      Tensor p = softened_posterior(zt, t);
      double h = 0.0;
      for (std::size_t i = 0; i < 6; ++i) h -= p[i] * std::log(p[i]);
      return h;
    };
    CHECK(entropy(t2) > entropy(t1));
    CHECK(entropy(t2) == doctest::Approx(static_cast<double>(oracle_entropy(z, t2))).epsilon(1e-10));
  }
}

TEST_CASE("student kd loss gradient matches central differences") {
  Rng rng(35);
  Tensor zs({2, 4}), zt({2, 4});
  for (std::size_t i = 0; i < zs.size(); ++i) {
    zs[i] = rng.uniform(-2.0, 2.0);
    zt[i] = rng.uniform(-2.0, 2.0);
  }
  const std::vector<int> y{1, 3};
  Parameter p("zs", zs);
  ag::backward(student_kd_loss(ag::leaf(p), ag::constant(zt), y, 2.0));
  Tensor fd = central_difference(
      [&](const Tensor& t) {
        return student_kd_loss(ag::constant(t), ag::constant(zt), y, 2.0).tensor().item();
      },
      zs, 1e-5);
  for (std::size_t i = 0; i < zs.size(); ++i) CHECK(rel_close(p.grad[i], fd[i], 1e-6));
}

TEST_CASE("no gradient crosses between the networks") {
  Rng rng(36);
  Tensor zs({2, 3}), zt({2, 3});
  for (std::size_t i = 0; i < zs.size(); ++i) {
    zs[i] = rng.uniform(-1.0, 1.0);
    zt[i] = rng.uniform(-1.0, 1.0);
  }
  const std::vector<int> y{0, 2};
  {
    Parameter ps("zs", zs), pt("zt", zt);
    ag::backward(student_kd_loss(ag::leaf(ps), ag::leaf(pt), y, 2.0));
    bool student_moved = false;
    for (std::size_t i = 0; i < zs.size(); ++i) {
      student_moved = student_moved || ps.grad[i] != 0.0;
      CHECK(pt.grad[i] == 0.0);
    }
    CHECK(student_moved);
  }
  {
    Parameter ps("zs", zs), pt("zt", zt);
    ag::backward(teacher_kd_loss(ag::leaf(pt), ag::leaf(ps), y, 2.0));
    bool teacher_moved = false;
    for (std::size_t i = 0; i < zt.size(); ++i) {
      teacher_moved = teacher_moved || pt.grad[i] != 0.0;
      CHECK(ps.grad[i] == 0.0);
    }
    CHECK(teacher_moved);
  }
}

TEST_CASE("activation distillation loss") {
  // identical featuremaps through an identity regressor
  Tensor fm({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(activation_distill_loss(ag::constant(fm), ag::constant(fm), ag::constant(eye))
            .tensor()
            .item() == 0.0);

  // all-zero student vs all-one teacher: MSE is exactly 1
  Tensor zero({2, 3});
  Tensor one = Tensor::full({2, 3}, 1.0);
  CHECK(activation_distill_loss(ag::constant(zero), ag::constant(one), ag::constant(eye))
            .tensor()
            .item() == 1.0);

  // width mismatch after the regressor
  CHECK_THROWS_AS(
      activation_distill_loss(ag::constant(fm), ag::constant(Tensor({2, 5})), ag::constant(eye)),
      ContractError);

  // 1x1-conv form for spatial featuremaps
  Tensor fs({1, 2, 3, 3});
  Tensor ft({1, 3, 3, 3});
  for (std::size_t i = 0; i < fs.size(); ++i) fs[i] = 0.1 * static_cast<double>(i);
  Tensor reg({3, 2, 1, 1}, {1, 0, 0, 1, 0.5, 0.5});
  CHECK(activation_distill_loss(ag::constant(fs), ag::constant(ft), ag::constant(reg))
            .tensor()
            .item() > 0.0);

  // regressor gradient against central differences
  Rng rng(37);
  Tensor s2({3, 2}), t2({3, 4}), w({2, 4});
  for (std::size_t i = 0; i < s2.size(); ++i) s2[i] = rng.uniform(-1.0, 1.0);
  for (std::size_t i = 0; i < t2.size(); ++i) t2[i] = rng.uniform(-1.0, 1.0);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-0.5, 0.5);
  Parameter pw("reg", w);
  ag::backward(activation_distill_loss(ag::constant(s2), ag::constant(t2), ag::leaf(pw)));
  Tensor fd = central_difference(
      [&](const Tensor& t) {
        return activation_distill_loss(ag::constant(s2), ag::constant(t2), ag::constant(t))
            .tensor()
            .item();
      },
      w, 1e-5);
  for (std::size_t i = 0; i < w.size(); ++i) CHECK(rel_close(pw.grad[i], fd[i], 1e-6));
}

TEST_SUITE_END();
