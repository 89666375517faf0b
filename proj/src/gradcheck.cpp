#include "h2o/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace h2o {

std::string FiniteDiffReport::to_table() const {
  std::ostringstream os;
  os << std::left << std::setw(44) << "parameter" << std::setw(12) << "entries" << std::setw(14)
     << "max_rel_err"
     << "status\n";
  for (const auto& e : entries) {
    os << std::left << std::setw(44) << e.param << std::setw(12) << e.sampled << std::setw(14)
       << std::scientific << std::setprecision(3) << e.max_rel_err
       << (e.pass ? "ok" : "FAIL") << "\n";
  }
  os << (pass ? "gradcheck passed" : "gradcheck FAILED") << " (tolerance " << std::scientific
     << std::setprecision(1) << tolerance << ")\n";
  return os.str();
}

FiniteDiffReport finite_diff_check(const std::function<Tensor()>& loss_fn,
                                   std::vector<Parameter>& params, double epsilon,
                                   double tolerance, std::size_t samples_per_tensor,
                                   std::uint64_t seed) {
  for (const auto& p : params)
    if (p.tensor.dtype() != Dtype::f64)
      throw ValidationError("finite_diff_check: parameter '" + p.name + "' is not float64");

  zero_grads(params);
  Tensor loss = loss_fn();
  backward(loss);
  std::vector<NdArray> ad_grads;
  ad_grads.reserve(params.size());
  for (auto& p : params) ad_grads.push_back(p.tensor.grad());

  const auto eval_loss = [&]() {
    NoGradGuard guard;
    return loss_fn().scalar();
  };

  FiniteDiffReport report;
  report.tolerance = tolerance;
  report.epsilon = epsilon;
  Rng rng(Rng::derive(seed, "finite_diff_check"));

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = params[pi];
    NdArray& value = p.tensor.value();
    const std::size_t n = value.numel();

    std::vector<std::size_t> picks;
    if (n <= samples_per_tensor) {
      picks.resize(n);
      std::iota(picks.begin(), picks.end(), 0);
    } else {
      std::vector<std::size_t> all(n);
      std::iota(all.begin(), all.end(), 0);
      std::shuffle(all.begin(), all.end(), rng.engine());
      picks.assign(all.begin(), all.begin() + samples_per_tensor);
    }

    FiniteDiffEntry entry;
    entry.param = p.name;
    entry.sampled = picks.size();
    for (std::size_t idx : picks) {
      const double orig = value[idx];
      value[idx] = orig + epsilon;
      const double up = eval_loss();
      value[idx] = orig - epsilon;
      const double down = eval_loss();
      value[idx] = orig;
      const double g_fd = (up - down) / (2.0 * epsilon);
      const double g_ad = ad_grads[pi][idx];
      const double rel = std::fabs(g_ad - g_fd) /
                         std::max({1.0, std::fabs(g_ad), std::fabs(g_fd)});
      if (rel > entry.max_rel_err) {
        entry.max_rel_err = rel;
        entry.worst_index = idx;
        entry.worst_ad = g_ad;
        entry.worst_fd = g_fd;
      }
    }
    entry.pass = entry.max_rel_err <= tolerance;
    report.pass = report.pass && entry.pass;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace h2o
