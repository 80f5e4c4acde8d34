#pragma once

#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "deepap/grad/tensor.h"

namespace deepap::grad {

struct GradCheckResult {
  // max over coordinates of |analytic - central| / max(1, |central|)
  double max_relative_error = 0.0;
  // Closest approach of any relu input to 0 or of any max-pool winner to a tie
  // during the unperturbed forward pass; +inf when the function has no kinks.
  double kink_distance = std::numeric_limits<double>::infinity();
  std::size_t coordinates = 0;
};

using ScalarFunction = std::function<Tensor(std::span<const Tensor>)>;

// Compares reverse-mode gradients of `f` at the current values of `leaves`
// against central differences with step `eps`. Leaves are perturbed in place
// and restored. Throws NumericError if any evaluation produces non-finite
// values.
GradCheckResult grad_check(const ScalarFunction& f, std::span<Tensor> leaves, double eps = 1e-5);

// Single-input form.
GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor point, double eps = 1e-5);

}  // namespace deepap::grad
