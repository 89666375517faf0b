#include "h2o/optim.hpp"

namespace h2o {

double LrSchedule::at_epoch(std::size_t epoch) const {
  double lr = initial;
  for (std::size_t ms : milestones)
    if (epoch >= ms) lr *= decay;
  return lr;
}

void sgd_step(std::vector<Parameter>& params, double lr) {
  for (auto& p : params) {
    NdArray& v = p.tensor.value();
    const NdArray& g = p.tensor.grad();
    for (std::size_t i = 0; i < v.numel(); ++i) v[i] -= lr * g[i];
    v.quantize();
  }
}

}  // namespace h2o
