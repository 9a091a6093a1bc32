#pragma once

#include <functional>
#include <string>
#include <vector>

#include "qkd/tensor.hpp"

namespace qkd {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

// |a - b| <= tol * max(1, |a|, |b|)
bool rel_close(double a, double b, double tol);

// Central-difference gradient of a scalar function of one tensor argument.
// The oracle side of every gradient check: forward evaluations only.
Tensor central_difference(const std::function<double(const Tensor&)>& f, const Tensor& x,
                          double step = 1e-5);

// Finite-difference checks of every differentiable tape op (quantizers
// excluded) against backward(), at 1e-5 relative tolerance.
std::vector<CheckResult> gradient_check_suite(std::uint64_t seed = 20240901);

// Quantizer properties: hand values, level count, grid multiples,
// idempotence, monotonicity, disabled identity, and the interval-gradient
// consistency checks.
std::vector<CheckResult> quantizer_check_suite(std::uint64_t seed = 20240902, int fuzz_tensors = 10000);

// Prints one line per result; returns true when everything passed.
bool report_checks(const std::vector<CheckResult>& results);

}  // namespace qkd
