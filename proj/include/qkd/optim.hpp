#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "qkd/param.hpp"

namespace qkd {

// SGD with momentum and decoupled-from-intervals weight decay. Interval
// parameters are projected back above kIntervalFloor after each step.
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<Parameter*> params, double lr, double momentum, double weight_decay);

  void step();
  void zero_grad();
  double lr() const { return lr_; }
  void set_lr(double lr);

  std::vector<std::pair<std::string, Tensor>> export_state() const;
  void import_state(const std::vector<std::pair<std::string, Tensor>>& records);

 private:
  struct Slot {
    Parameter* p;
    Tensor velocity;
  };
  std::vector<Slot> slots_;
  double lr_;
  double momentum_;
  double weight_decay_;
};

// Adam with bias correction; used for the trainable quantizer intervals.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Parameter*> params, double lr, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);

  void step();
  void zero_grad();
  double lr() const { return lr_; }
  void set_lr(double lr);

  std::vector<std::pair<std::string, Tensor>> export_state() const;
  void import_state(const std::vector<std::pair<std::string, Tensor>>& records);

 private:
  struct Slot {
    Parameter* p;
    Tensor m;
    Tensor v;
  };
  std::vector<Slot> slots_;
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  std::int64_t t_ = 0;
};

}  // namespace qkd
