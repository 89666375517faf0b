#pragma once

#include <vector>

#include "h2o/autodiff.hpp"

namespace h2o {

// Step-decay schedule: lr(epoch) = initial * decay^(#milestones passed).
struct LrSchedule {
  double initial = 0.0005;
  double decay = 0.1;
  std::vector<std::size_t> milestones = {60};

  double at_epoch(std::size_t epoch) const;
};

// Plain SGD update: value <- value - lr * grad.
void sgd_step(std::vector<Parameter>& params, double lr);

}  // namespace h2o
