#pragma once

#include <string>
#include <utility>

#include "qkd/tensor.hpp"

namespace qkd {

enum class ParamKind { Weight, Interval };

// Interval parameters are projected onto [kIntervalFloor, inf) after every
// optimizer step so the quantizer grid stays well-defined.
inline constexpr double kIntervalFloor = 1e-8;

// A named trainable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  ParamKind kind = ParamKind::Weight;

  Parameter() = default;
  Parameter(std::string n, Tensor v, ParamKind k = ParamKind::Weight)
      : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros_like(value)), kind(k) {}

  void zero_grad() { grad.fill(0.0); }
};

}  // namespace qkd
