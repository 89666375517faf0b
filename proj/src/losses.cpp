#include "h2o/losses.hpp"

#include <cmath>

namespace h2o {

Tensor loss_rec(const std::vector<Tensor>& xhats, const std::vector<NdArray>& targets) {
  if (xhats.empty() || xhats.size() != targets.size())
    throw ValidationError("loss_rec: " + std::to_string(xhats.size()) + " predictions vs " +
                          std::to_string(targets.size()) + " targets");
  Tensor total;
  for (std::size_t i = 0; i < xhats.size(); ++i) {
    Tensor term = rec_loss_seq(xhats[i], targets[i]);
    total = total.defined() ? add(total, term) : term;
  }
  return scale(total, 1.0 / static_cast<double>(xhats.size()));
}

Tensor loss_cls(const std::vector<Tensor>& probabilities, const std::vector<int>& labels) {
  return bce_loss(stack_scalars(probabilities), labels);
}

Tensor combined_loss(const Tensor& l_rec, const Tensor& l_cls, double lambda1, double lambda2) {
  if (lambda1 < 0.0 || lambda2 < 0.0)
    throw ValidationError("combined_loss: loss weights must be nonnegative");
  if (!l_rec.defined() || lambda1 == 0.0) return scale(l_cls, lambda2);
  return add(scale(l_rec, lambda1), scale(l_cls, lambda2));
}

double suggest_lambda1(double l_rec, double l_cls) {
  if (l_rec <= 0.0 || l_cls <= 0.0) return 1.0;
  const double ratio = l_rec / l_cls;
  const double decades = std::round(std::log10(ratio));
  return std::pow(10.0, -decades);
}

}  // namespace h2o
