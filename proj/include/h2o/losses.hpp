#pragma once

#include <vector>

#include "h2o/autodiff.hpp"

namespace h2o {

// (1/(N*T)) sum_i sum_t ||xhat_t(i) - x_t(i)||_F over the batch; each element
// is one sequence's (T,V,C) prediction against its target.
Tensor loss_rec(const std::vector<Tensor>& xhats, const std::vector<NdArray>& targets);

// Mean binary cross-entropy of per-sample positive-class probabilities.
Tensor loss_cls(const std::vector<Tensor>& probabilities, const std::vector<int>& labels);

Tensor combined_loss(const Tensor& l_rec, const Tensor& l_cls, double lambda1, double lambda2);

// Order-of-magnitude rebalancing hint: the lambda1 that brings
// lambda1*L_rec within one decade of L_cls. Returns 1.0 when already matched.
double suggest_lambda1(double l_rec, double l_cls);

}  // namespace h2o
