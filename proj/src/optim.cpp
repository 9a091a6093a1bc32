#include "qkd/optim.hpp"

#include <cmath>

#include "qkd/error.hpp"

namespace qkd {

namespace {

void project_interval(Parameter& p) {
  if (p.kind != ParamKind::Interval) return;
  for (std::size_t i = 0; i < p.value.size(); ++i) {
    if (p.value[i] < kIntervalFloor) p.value[i] = kIntervalFloor;
  }
}

void check_lr(double lr) {
  if (lr <= 0.0) throw ConfigError("learning rate must be positive, got " + std::to_string(lr));
}

}  // namespace

SgdOptimizer::SgdOptimizer(std::vector<Parameter*> params, double lr, double momentum,
                           double weight_decay)
    : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
  check_lr(lr);
  slots_.reserve(params.size());
  for (Parameter* p : params) slots_.push_back({p, Tensor::zeros_like(p->value)});
}

void SgdOptimizer::set_lr(double lr) {
  check_lr(lr);
  lr_ = lr;
}

void SgdOptimizer::step() {
  for (Slot& s : slots_) {
    Parameter& p = *s.p;
    const bool decay = weight_decay_ != 0.0 && p.kind == ParamKind::Weight;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      double g = p.grad[i];
      if (decay) g += weight_decay_ * p.value[i];
      s.velocity[i] = momentum_ * s.velocity[i] + g;
      p.value[i] -= lr_ * s.velocity[i];
    }
    project_interval(p);
  }
}

void SgdOptimizer::zero_grad() {
  for (Slot& s : slots_) s.p->zero_grad();
}

std::vector<std::pair<std::string, Tensor>> SgdOptimizer::export_state() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(slots_.size());
  for (const Slot& s : slots_) out.emplace_back("opt.sgd.v." + s.p->name, s.velocity);
  return out;
}

void SgdOptimizer::import_state(const std::vector<std::pair<std::string, Tensor>>& records) {
  for (Slot& s : slots_) {
    const std::string key = "opt.sgd.v." + s.p->name;
    for (const auto& [name, t] : records) {
      if (name == key) {
        if (!t.same_shape(s.velocity)) throw FormatError("optimizer state shape mismatch for " + key);
        s.velocity = t;
        break;
      }
    }
  }
}

AdamOptimizer::AdamOptimizer(std::vector<Parameter*> params, double lr, double beta1, double beta2,
                             double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  check_lr(lr);
  slots_.reserve(params.size());
  for (Parameter* p : params)
    slots_.push_back({p, Tensor::zeros_like(p->value), Tensor::zeros_like(p->value)});
}

void AdamOptimizer::set_lr(double lr) {
  check_lr(lr);
  lr_ = lr;
}

void AdamOptimizer::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (Slot& s : slots_) {
    Parameter& p = *s.p;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * g;
      s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * g * g;
      const double mhat = s.m[i] / bc1;
      const double vhat = s.v[i] / bc2;
      p.value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
    project_interval(p);
  }
}

void AdamOptimizer::zero_grad() {
  for (Slot& s : slots_) s.p->zero_grad();
}

std::vector<std::pair<std::string, Tensor>> AdamOptimizer::export_state() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(slots_.size() * 2 + 1);
  out.emplace_back("opt.adam.t", Tensor::scalar(static_cast<double>(t_)));
  for (const Slot& s : slots_) {
    out.emplace_back("opt.adam.m." + s.p->name, s.m);
    out.emplace_back("opt.adam.v." + s.p->name, s.v);
  }
  return out;
}

void AdamOptimizer::import_state(const std::vector<std::pair<std::string, Tensor>>& records) {
  for (const auto& [name, t] : records) {
    if (name == "opt.adam.t") t_ = static_cast<std::int64_t>(t.item());
  }
  for (Slot& s : slots_) {
    const std::string mk = "opt.adam.m." + s.p->name;
    const std::string vk = "opt.adam.v." + s.p->name;
    for (const auto& [name, t] : records) {
      if (name == mk) s.m = t;
      if (name == vk) s.v = t;
    }
  }
}

}  // namespace qkd
