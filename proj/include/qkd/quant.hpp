#pragma once

#include <cmath>

#include "qkd/autograd.hpp"
#include "qkd/tensor.hpp"

namespace qkd {

// Per-tensor uniform quantizer configuration. Weights use the signed range
// [-2^(k-1), 2^(k-1)-1]; activations the unsigned range [0, 2^k-1].
struct QuantSpec {
  int bits = 8;
  bool is_signed = true;
  bool enabled = true;

  double qmin() const { return is_signed ? -std::ldexp(1.0, bits - 1) : 0.0; }
  double qmax() const { return is_signed ? std::ldexp(1.0, bits - 1) - 1.0 : std::ldexp(1.0, bits) - 1.0; }

  static QuantSpec weight(int bits, bool enabled = true) { return {bits, true, enabled}; }
  static QuantSpec activation(int bits, bool enabled = true) { return {bits, false, enabled}; }
};

// Range clamp; contract: lo <= hi.
double clamp_value(double x, double lo, double hi);

// Quantize-dequantize: x_hat = floor(clamp(x / I, qmin, qmax) + 1/2) * I.
// Rounding is half-up, for negatives too. A disabled spec is the identity.
Tensor quantize_dequantize(const Tensor& x, double interval, const QuantSpec& spec);

struct QuantGrad {
  Tensor wrt_input;
  double wrt_interval = 0.0;
};

// Straight-through backward for the quantizer above. With u = x/I and
// q = floor(clamp(u) + 1/2):
//   d x_hat / dx = 1 inside [qmin, qmax] (0 outside when gated; 1 when not),
//   d x_hat / dI = q - u inside the range, qmin/qmax on the saturated sides.
QuantGrad quantize_backward(const Tensor& upstream, const Tensor& x, double interval,
                            const QuantSpec& spec, bool gated_ste = true);

// Min-max interval initialization.
//   weights (signed):      I = max(|w_min| / |qmin|, w_max / qmax)
//   activations (unsigned): I = x_max / qmax
// Degenerate results are floored at kIntervalFloor.
double init_weight_interval(const Tensor& w, const QuantSpec& spec);
double init_activation_interval(double observed_max, const QuantSpec& spec);

// Tape op wiring quantize_dequantize/quantize_backward into autograd.
// `interval` must be a scalar value (typically a leaf of an interval
// Parameter); its gradient receives d loss / d I.
ag::Value fake_quantize(const ag::Value& x, const ag::Value& interval, const QuantSpec& spec,
                        bool gated_ste = true);

}  // namespace qkd
