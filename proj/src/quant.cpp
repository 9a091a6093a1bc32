#include "qkd/quant.hpp"

#include <cmath>

#include "qkd/error.hpp"

namespace qkd {

namespace {

void check_spec(const QuantSpec& spec) {
  if (spec.bits < 2) {
    throw ContractError("quantizer bit-width must be >= 2, got " + std::to_string(spec.bits));
  }
}

void check_interval(double interval) {
  if (!(interval > 0.0)) {
    throw ContractError("quantizer interval must be positive, got " + std::to_string(interval));
  }
}

}  // namespace

double clamp_value(double x, double lo, double hi) {
  if (lo > hi) throw ContractError("clamp: min > max");
  if (x > hi) return hi;
  if (x < lo) return lo;
  return x;
}

Tensor quantize_dequantize(const Tensor& x, double interval, const QuantSpec& spec) {
  if (!spec.enabled) return x;
  check_spec(spec);
  check_interval(interval);
  const double qmin = spec.qmin();
  const double qmax = spec.qmax();
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double u = x[i] / interval;
    const double q = std::floor(clamp_value(u, qmin, qmax) + 0.5);
    out[i] = q * interval;
  }
  return out;
}

QuantGrad quantize_backward(const Tensor& upstream, const Tensor& x, double interval,
                            const QuantSpec& spec, bool gated_ste) {
  if (!upstream.same_shape(x)) {
    throw ContractError("quantize_backward: upstream shape " + shape_to_string(upstream.shape()) +
                        " does not match forward input " + shape_to_string(x.shape()));
  }
  QuantGrad grad;
  if (!spec.enabled) {
    grad.wrt_input = upstream;
    return grad;
  }
  check_spec(spec);
  check_interval(interval);
  const double qmin = spec.qmin();
  const double qmax = spec.qmax();
  grad.wrt_input = Tensor::zeros_like(x);
  double gi = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double u = x[i] / interval;
    if (u < qmin) {
      gi += upstream[i] * qmin;
      if (!gated_ste) grad.wrt_input[i] = upstream[i];
    } else if (u > qmax) {
      gi += upstream[i] * qmax;
      if (!gated_ste) grad.wrt_input[i] = upstream[i];
    } else {
      const double q = std::floor(u + 0.5);
      gi += upstream[i] * (q - u);
      grad.wrt_input[i] = upstream[i];
    }
  }
  grad.wrt_interval = gi;
  return grad;
}

double init_weight_interval(const Tensor& w, const QuantSpec& spec) {
  if (w.empty()) throw ContractError("init_weight_interval: empty weight tensor");
  check_spec(spec);
  double wmin = w[0], wmax = w[0];
  for (std::size_t i = 1; i < w.size(); ++i) {
    wmin = std::min(wmin, w[i]);
    wmax = std::max(wmax, w[i]);
  }
  double interval = 0.0;
  if (spec.is_signed) {
    interval = std::max(std::abs(wmin) / std::abs(spec.qmin()), wmax / spec.qmax());
  } else {
    interval = wmax / spec.qmax();
  }
  return interval > kIntervalFloor ? interval : kIntervalFloor;
}

double init_activation_interval(double observed_max, const QuantSpec& spec) {
  check_spec(spec);
  const double interval = observed_max / spec.qmax();
  return interval > kIntervalFloor ? interval : kIntervalFloor;
}

ag::Value fake_quantize(const ag::Value& x, const ag::Value& interval, const QuantSpec& spec,
                        bool gated_ste) {
  if (interval.tensor().size() != 1) {
    throw ContractError("fake_quantize: interval must be scalar");
  }
  const double iv = interval.tensor()[0];
  Tensor out = quantize_dequantize(x.tensor(), iv, spec);
  auto node = std::make_shared<ag::Node>();
  node->value = std::move(out);
  node->inputs = {x.node(), interval.node()};
  node->requires_grad = x.node()->requires_grad || interval.node()->requires_grad;
  if (node->requires_grad) {
    node->backprop = [spec, gated_ste, iv](ag::Node& self) {
      QuantGrad g = quantize_backward(self.grad, self.inputs[0]->value, iv, spec, gated_ste);
      self.inputs[0]->grad.add_(g.wrt_input);
      self.inputs[1]->grad[0] += g.wrt_interval;
    };
  }
  return ag::Value(node);
}

}  // namespace qkd
