#pragma once

#include <functional>
#include <string>
#include <vector>

#include "h2o/autodiff.hpp"

namespace h2o {

struct FiniteDiffEntry {
  std::string param;
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double worst_ad = 0.0;
  double worst_fd = 0.0;
  std::size_t sampled = 0;
  bool pass = true;
};

struct FiniteDiffReport {
  std::vector<FiniteDiffEntry> entries;
  double tolerance = 1e-4;
  double epsilon = 1e-5;
  bool pass = true;

  std::string to_table() const;
};

// Compares reverse-mode gradients of loss_fn() against central finite
// differences on >= samples_per_tensor random entries of each parameter.
// Relative error: |g_ad - g_fd| / max(1, |g_ad|, |g_fd|). Parameters must be
// float64; loss_fn must rebuild the loss from current parameter values.
FiniteDiffReport finite_diff_check(const std::function<Tensor()>& loss_fn,
                                   std::vector<Parameter>& params, double epsilon = 1e-5,
                                   double tolerance = 1e-4, std::size_t samples_per_tensor = 32,
                                   std::uint64_t seed = 0);

}  // namespace h2o
