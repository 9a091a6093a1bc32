#include "qkd/checks.hpp"

#include <cmath>
#include <cstdio>
#include <set>

#include "qkd/autograd.hpp"
#include "qkd/quant.hpp"
#include "qkd/rng.hpp"

namespace qkd {

bool rel_close(double a, double b, double tol) {
  const double scale = std::max({1.0, std::abs(a), std::abs(b)});
  return std::abs(a - b) <= tol * scale;
}

Tensor central_difference(const std::function<double(const Tensor&)>& f, const Tensor& x,
                          double step) {
  Tensor grad = Tensor::zeros_like(x);
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = probe[i];
    probe[i] = saved + step;
    const double hi = f(probe);
    probe[i] = saved - step;
    const double lo = f(probe);
    probe[i] = saved;
    grad[i] = (hi - lo) / (2.0 * step);
  }
  return grad;
}

namespace {

Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape, double lo = -2.0, double hi = 2.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Keeps samples away from the relu kink so finite differences stay valid.
Tensor random_tensor_off_kink(Rng& rng, std::vector<std::size_t> shape) {
  Tensor t = random_tensor(rng, std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (std::abs(t[i]) < 0.05) t[i] += t[i] >= 0.0 ? 0.1 : -0.1;
  }
  return t;
}

struct GradCase {
  std::string name;
  // Builds a scalar tape value from the tested input (as a leaf) and
  // returns it; `probe` evaluates the same scalar from a plain tensor.
  std::function<ag::Value(Parameter&)> build;
  std::function<double(const Tensor&)> probe;
  Tensor at;
  double tol = 1e-5;
};

CheckResult run_grad_case(GradCase c) {
  Parameter p("x", c.at);
  ag::Value loss = c.build(p);
  ag::backward(loss);
  const Tensor fd = central_difference(c.probe, c.at);
  CheckResult res;
  res.name = c.name;
  res.passed = true;
  for (std::size_t i = 0; i < fd.size(); ++i) {
    if (!rel_close(p.grad[i], fd[i], c.tol)) {
      res.passed = false;
      char buf[160];
      std::snprintf(buf, sizeof(buf), "element %zu: backward %.12g vs central-diff %.12g",
                    i, p.grad[i], fd[i]);
      res.detail = buf;
      break;
    }
  }
  return res;
}

// Weighted-sum head so the upstream gradient is non-uniform.
ag::Value weighted_sum(const ag::Value& v, const Tensor& weights) {
  return ag::sum(ag::mul(v, ag::constant(weights)));
}

double weighted_sum_plain(const Tensor& v, const Tensor& weights) {
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) acc += v[i] * weights[i];
  return acc;
}

}  // namespace

std::vector<CheckResult> gradient_check_suite(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<CheckResult> results;
  const auto add_case = [&](GradCase c) { results.push_back(run_grad_case(std::move(c))); };

  for (int rep = 0; rep < 10; ++rep) {
    // matmul, both operands
    {
      Tensor a = random_tensor(rng, {3, 4});
      Tensor b = random_tensor(rng, {4, 2});
      Tensor w = random_tensor(rng, {3, 2});
      add_case({"matmul/dA#" + std::to_string(rep),
                [=](Parameter& p) { return weighted_sum(ag::matmul(ag::leaf(p), ag::constant(b)), w); },
                [=](const Tensor& t) {
                  Tensor out({3, 2});
                  for (std::size_t i = 0; i < 3; ++i)
                    for (std::size_t j = 0; j < 2; ++j) {
                      double acc = 0.0;
                      for (std::size_t k = 0; k < 4; ++k) acc += t[i * 4 + k] * b[k * 2 + j];
                      out[i * 2 + j] = acc;
                    }
                  return weighted_sum_plain(out, w);
                },
                a});
      add_case({"matmul/dB#" + std::to_string(rep),
                [=](Parameter& p) { return weighted_sum(ag::matmul(ag::constant(a), ag::leaf(p)), w); },
                [=](const Tensor& t) {
                  Tensor out({3, 2});
                  for (std::size_t i = 0; i < 3; ++i)
                    for (std::size_t j = 0; j < 2; ++j) {
                      double acc = 0.0;
                      for (std::size_t k = 0; k < 4; ++k) acc += a[i * 4 + k] * t[k * 2 + j];
                      out[i * 2 + j] = acc;
                    }
                  return weighted_sum_plain(out, w);
                },
                b});
    }
    // elementwise and reduction ops
    {
      Tensor x = random_tensor_off_kink(rng, {2, 6});
      Tensor w = random_tensor(rng, {2, 6});
      add_case({"relu#" + std::to_string(rep),
                [=](Parameter& p) { return weighted_sum(ag::relu(ag::leaf(p)), w); },
                [=](const Tensor& t) {
                  Tensor out = t;
                  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(out[i], 0.0);
                  return weighted_sum_plain(out, w);
                },
                x});
    }
    {
      Tensor x = random_tensor(rng, {3, 5});
      Tensor y = random_tensor(rng, {3, 5});
      Tensor w = random_tensor(rng, {3, 5});
      add_case({"mul#" + std::to_string(rep),
                [=](Parameter& p) { return weighted_sum(ag::mul(ag::leaf(p), ag::constant(y)), w); },
                [=](const Tensor& t) {
                  double acc = 0.0;
                  for (std::size_t i = 0; i < t.size(); ++i) acc += t[i] * y[i] * w[i];
                  return acc;
                },
                x});
      add_case({"add-sub-scale#" + std::to_string(rep),
                [=](Parameter& p) {
                  ag::Value v = ag::leaf(p);
                  return weighted_sum(ag::sub(ag::add(v, ag::constant(y)), ag::scale(v, 0.25)), w);
                },
                [=](const Tensor& t) {
                  double acc = 0.0;
                  for (std::size_t i = 0; i < t.size(); ++i) acc += (t[i] + y[i] - 0.25 * t[i]) * w[i];
                  return acc;
                },
                x});
    }
    {
      Tensor z = random_tensor(rng, {3, 6}, -4.0, 4.0);
      Tensor w = random_tensor(rng, {3, 6});
      add_case({"log_softmax#" + std::to_string(rep),
                [=](Parameter& p) { return weighted_sum(ag::log_softmax(ag::leaf(p)), w); },
                [=](const Tensor& t) {
                  Tensor out({3, 6});
                  for (std::size_t i = 0; i < 3; ++i) {
                    double mx = t[i * 6];
                    for (std::size_t j = 1; j < 6; ++j) mx = std::max(mx, t[i * 6 + j]);
                    double lse = 0.0;
                    for (std::size_t j = 0; j < 6; ++j) lse += std::exp(t[i * 6 + j] - mx);
                    lse = std::log(lse) + mx;
                    for (std::size_t j = 0; j < 6; ++j) out[i * 6 + j] = t[i * 6 + j] - lse;
                  }
                  return weighted_sum_plain(out, w);
                },
                z});
      add_case({"exp#" + std::to_string(rep),
                [=](Parameter& p) { return weighted_sum(ag::exp(ag::scale(ag::leaf(p), 0.5)), w); },
                [=](const Tensor& t) {
                  double acc = 0.0;
                  for (std::size_t i = 0; i < t.size(); ++i) acc += std::exp(0.5 * t[i]) * w[i];
                  return acc;
                },
                z});
    }
    {
      Tensor x = random_tensor(rng, {2, 3, 4, 4});
      Tensor w = random_tensor(rng, {2, 3});
      add_case({"global_avg_pool#" + std::to_string(rep),
                [=](Parameter& p) { return weighted_sum(ag::global_avg_pool(ag::leaf(p)), w); },
                [=](const Tensor& t) {
                  Tensor out({2, 3});
                  for (std::size_t n = 0; n < 2; ++n)
                    for (std::size_t c = 0; c < 3; ++c) {
                      double acc = 0.0;
                      for (std::size_t i = 0; i < 16; ++i) acc += t[(n * 3 + c) * 16 + i];
                      out[n * 3 + c] = acc / 16.0;
                    }
                  return weighted_sum_plain(out, w);
                },
                x});
    }
    {
      Tensor x = random_tensor(rng, {4, 3});
      Tensor s = random_tensor(rng, {3}, 0.5, 1.5);
      Tensor b = random_tensor(rng, {3});
      Tensor w = random_tensor(rng, {4, 3});
      add_case({"channel_affine/dx#" + std::to_string(rep),
                [=](Parameter& p) {
                  return weighted_sum(ag::channel_affine(ag::leaf(p), ag::constant(s), ag::constant(b)), w);
                },
                [=](const Tensor& t) {
                  double acc = 0.0;
                  for (std::size_t n = 0; n < 4; ++n)
                    for (std::size_t c = 0; c < 3; ++c) acc += (t[n * 3 + c] * s[c] + b[c]) * w[n * 3 + c];
                  return acc;
                },
                x});
      add_case({"add_bias/db#" + std::to_string(rep),
                [=](Parameter& p) { return weighted_sum(ag::add_bias(ag::constant(x), ag::leaf(p)), w); },
                [=](const Tensor& t) {
                  double acc = 0.0;
                  for (std::size_t n = 0; n < 4; ++n)
                    for (std::size_t c = 0; c < 3; ++c) acc += (x[n * 3 + c] + t[c]) * w[n * 3 + c];
                  return acc;
                },
                b});
    }
  }

  // conv2d on the spec's 1x2x5x5 geometry, both operands.
  for (int rep = 0; rep < 6; ++rep) {
    Tensor x = random_tensor(rng, {1, 2, 5, 5});
    Tensor k = random_tensor(rng, {2, 2, 3, 3});
    Tensor w = random_tensor(rng, {1, 2, 3, 3});  // matches the 1x2x3x3 output at stride 2, pad 1
    const auto conv_plain = [](const Tensor& in, const Tensor& kr) {
      // stride 2, pad 1
      Tensor out({1, 2, 3, 3});
      for (std::size_t o = 0; o < 2; ++o)
        for (std::size_t i = 0; i < 3; ++i)
          for (std::size_t j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (std::size_t c = 0; c < 2; ++c)
              for (std::size_t u = 0; u < 3; ++u)
                for (std::size_t v = 0; v < 3; ++v) {
                  const long hh = static_cast<long>(i) * 2 + static_cast<long>(u) - 1;
                  const long ww = static_cast<long>(j) * 2 + static_cast<long>(v) - 1;
                  if (hh < 0 || hh >= 5 || ww < 0 || ww >= 5) continue;
                  acc += in[(c * 5 + hh) * 5 + ww] * kr[((o * 2 + c) * 3 + u) * 3 + v];
                }
            out[(o * 3 + i) * 3 + j] = acc;
          }
      return out;
    };
    results.push_back(run_grad_case(
        {"conv2d/dx#" + std::to_string(rep),
         [=](Parameter& p) { return weighted_sum(ag::conv2d(ag::leaf(p), ag::constant(k), 2, 1), w); },
         [=](const Tensor& t) { return weighted_sum_plain(conv_plain(t, k), w); },
         x}));
    results.push_back(run_grad_case(
        {"conv2d/dw#" + std::to_string(rep),
         [=](Parameter& p) { return weighted_sum(ag::conv2d(ag::constant(x), ag::leaf(p), 2, 1), w); },
         [=](const Tensor& t) { return weighted_sum_plain(conv_plain(x, t), w); },
         k}));
  }

  // nll through log_softmax (the cross-entropy path).
  for (int rep = 0; rep < 4; ++rep) {
    Tensor z = random_tensor(rng, {3, 5}, -3.0, 3.0);
    std::vector<int> labels = {static_cast<int>(rng.below(5)), static_cast<int>(rng.below(5)),
                               static_cast<int>(rng.below(5))};
    results.push_back(run_grad_case(
        {"nll-log_softmax#" + std::to_string(rep),
         [=](Parameter& p) { return ag::nll(ag::log_softmax(ag::leaf(p)), labels); },
         [=](const Tensor& t) {
           double acc = 0.0;
           for (std::size_t i = 0; i < 3; ++i) {
             double mx = t[i * 5];
             for (std::size_t j = 1; j < 5; ++j) mx = std::max(mx, t[i * 5 + j]);
             double lse = 0.0;
             for (std::size_t j = 0; j < 5; ++j) lse += std::exp(t[i * 5 + j] - mx);
             lse = std::log(lse) + mx;
             acc -= t[i * 5 + labels[i]] - lse;
           }
           return acc / 3.0;
         },
         z}));
  }
  return results;
}

std::vector<CheckResult> quantizer_check_suite(std::uint64_t seed, int fuzz_tensors) {
  std::vector<CheckResult> results;
  const auto expect = [&](const std::string& name, bool cond, const std::string& detail = "") {
    results.push_back({name, cond, cond ? "" : detail});
  };

  // Hand-evaluated values, asserted bit-exactly.
  {
    expect("clamp/high", clamp_value(1.4, -2.0, 1.0) == 1.0);
    expect("clamp/identity", clamp_value(0.4, -2.0, 1.0) == 0.4);
    expect("clamp/low", clamp_value(-3.0, -2.0, 1.0) == -2.0);

    const QuantSpec s2 = QuantSpec::weight(2);
    const auto q1 = [&](double v) { return quantize_dequantize(Tensor::scalar(v), 0.5, s2)[0]; };
    expect("qdq/signed 0.7", q1(0.7) == 0.5);
    expect("qdq/signed -0.3", q1(-0.3) == -0.5);
    expect("qdq/signed -1.3", q1(-1.3) == -1.0);
    expect("qdq/signed 0.0", q1(0.0) == 0.0);

    const QuantSpec u2 = QuantSpec::activation(2);
    const auto q2 = [&](double v) { return quantize_dequantize(Tensor::scalar(v), 1.0, u2)[0]; };
    expect("qdq/unsigned 2.4", q2(2.4) == 2.0);
    expect("qdq/unsigned clamp 5.0", q2(5.0) == 3.0);

    // Backward closed-form spot values.
    QuantGrad g = quantize_backward(Tensor::scalar(1.0), Tensor::scalar(0.2), 0.5, s2);
    expect("grad/in-range g=-0.4", g.wrt_interval == 0.0 - 0.4 && g.wrt_input[0] == 1.0,
           "got " + std::to_string(g.wrt_interval));
    g = quantize_backward(Tensor::scalar(1.0), Tensor::scalar(1.5), 0.5, s2);  // u = 3 > qmax = 1
    expect("grad/saturated g=qmax", g.wrt_interval == 1.0 && g.wrt_input[0] == 0.0);
    g = quantize_backward(Tensor::scalar(1.0), Tensor::scalar(0.5), 0.5, s2);  // u = 1 on a level
    expect("grad/on-level g=0", g.wrt_interval == 0.0 && g.wrt_input[0] == 1.0);

    // Min-max initialization examples.
    Tensor wr({2}, {-1.0, 1.0});
    expect("init/weights [-1,1] k=2", init_weight_interval(wr, s2) == 1.0);
    Tensor wz({3});
    expect("init/all-zero floor", init_weight_interval(wz, s2) == kIntervalFloor);
    expect("init/activation 6@k4", init_activation_interval(6.0, QuantSpec::activation(4)) == 0.4);
  }

  // Randomized properties.
  Rng rng(seed);
  bool levels_ok = true, multiples_ok = true, idem_ok = true, mono_ok = true, identity_ok = true;
  std::string detail;
  for (int it = 0; it < fuzz_tensors && (levels_ok && multiples_ok && idem_ok && mono_ok); ++it) {
    const int bits = 2 + static_cast<int>(rng.below(4));  // 2..5
    const QuantSpec spec{bits, rng.below(2) == 0, true};
    const double interval = rng.uniform(0.01, 2.0);
    Tensor x({32});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-6.0, 6.0);
    const Tensor y = quantize_dequantize(x, interval, spec);

    std::set<double> levels(y.vec().begin(), y.vec().end());
    if (levels.size() > (1u << bits)) {
      levels_ok = false;
      detail = "level count " + std::to_string(levels.size()) + " at k=" + std::to_string(bits);
    }
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double q = std::nearbyint(y[i] / interval);
      if (q < spec.qmin() || q > spec.qmax() || q * interval != y[i]) {
        multiples_ok = false;
        detail = "non-multiple output " + std::to_string(y[i]);
        break;
      }
    }
    const Tensor yy = quantize_dequantize(y, interval, spec);
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (yy[i] != y[i]) {
        idem_ok = false;
        detail = "idempotence broke at " + std::to_string(x[i]);
        break;
      }
    }
    Tensor x2 = x;
    for (std::size_t i = 0; i < x2.size(); ++i) x2[i] += rng.uniform(0.0, 3.0);
    const Tensor y2 = quantize_dequantize(x2, interval, spec);
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (y2[i] < y[i]) {
        mono_ok = false;
        detail = "monotonicity broke";
        break;
      }
    }
  }
  {
    QuantSpec off = QuantSpec::weight(2, false);
    Tensor x({16});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-5.0, 5.0);
    const Tensor y = quantize_dequantize(x, 0.25, off);
    for (std::size_t i = 0; i < x.size(); ++i) identity_ok = identity_ok && x[i] == y[i];
  }
  expect("property/level-count", levels_ok, detail);
  expect("property/grid-multiples", multiples_ok, detail);
  expect("property/idempotence", idem_ok, detail);
  expect("property/monotonicity", mono_ok, detail);
  expect("property/disabled-identity", identity_ok);

  // Interval-gradient consistency: closed form away from boundaries, and a
  // finite difference of x_hat wrt I recovering q inside a rounding cell.
  bool closed_ok = true, cell_ok = true;
  for (int it = 0; it < 2000 && (closed_ok && cell_ok); ++it) {
    const int bits = 2 + static_cast<int>(rng.below(3));
    const QuantSpec spec{bits, rng.below(2) == 0, true};
    const double interval = rng.uniform(0.05, 1.5);
    const double u = rng.uniform(spec.qmin() - 2.0, spec.qmax() + 2.0);
    const double x = u * interval;
    const double nearest_half = std::abs(u - (std::floor(u) + 0.5));
    if (std::min(nearest_half, 0.5 - nearest_half) < 1e-3) continue;
    if (std::abs(u - spec.qmin()) < 1e-3 || std::abs(u - spec.qmax()) < 1e-3) continue;

    const double up = rng.uniform(-2.0, 2.0);
    QuantGrad g = quantize_backward(Tensor::scalar(up), Tensor::scalar(x), interval, spec);
    long double expected;
    const long double ul = static_cast<long double>(x) / interval;
    if (ul < spec.qmin()) {
      expected = up * static_cast<long double>(spec.qmin());
    } else if (ul > spec.qmax()) {
      expected = up * static_cast<long double>(spec.qmax());
    } else {
      expected = up * (std::floor(ul + 0.5L) - ul);
    }
    if (!rel_close(g.wrt_interval, static_cast<double>(expected), 1e-12)) {
      closed_ok = false;
    }

    // Inside the clamp range and off the cell edge: d x_hat / dI == q.
    if (u > spec.qmin() + 0.1 && u < spec.qmax() - 0.1 && std::min(nearest_half, 0.5 - nearest_half) > 0.05) {
      const double h = 1e-6 * interval;
      const double hi = quantize_dequantize(Tensor::scalar(x), interval + h, spec)[0];
      const double lo = quantize_dequantize(Tensor::scalar(x), interval - h, spec)[0];
      const double fd = (hi - lo) / (2.0 * h);
      const double q = std::floor(u + 0.5);
      if (!rel_close(fd, q, 1e-6)) cell_ok = false;
    }
  }
  expect("interval-grad/closed-form", closed_ok);
  expect("interval-grad/cell-recovers-q", cell_ok);
  return results;
}

bool report_checks(const std::vector<CheckResult>& results) {
  bool all = true;
  for (const CheckResult& r : results) {
    std::printf("%-36s %s%s%s\n", r.name.c_str(), r.passed ? "PASS" : "FAIL",
                r.detail.empty() ? "" : "  ", r.detail.c_str());
    all = all && r.passed;
  }
  return all;
}

}  // namespace qkd
