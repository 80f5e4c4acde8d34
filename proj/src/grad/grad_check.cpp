#include "deepap/grad/grad_check.h"

#include <algorithm>
#include <cmath>

#include "deepap/errors.h"
#include "deepap/grad/ops.h"

namespace deepap::grad {

GradCheckResult grad_check(const ScalarFunction& f, std::span<Tensor> leaves, double eps) {
  GradCheckResult result;
  std::vector<std::vector<double>> analytic;
  {
    KinkMonitor monitor;
    const Tensor root = f(leaves);
    result.kink_distance = monitor.min_distance();
    analytic = gradients(root, leaves);
  }
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    auto values = leaves[l].mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = f(leaves).item();
      values[i] = saved - eps;
      const double down = f(leaves).item();
      values[i] = saved;
      const double central = (up - down) / (2.0 * eps);
      if (!std::isfinite(central)) throw NumericError("grad_check: non-finite central difference");
      const double err = std::abs(analytic[l][i] - central) / std::max(1.0, std::abs(central));
      result.max_relative_error = std::max(result.max_relative_error, err);
      ++result.coordinates;
    }
  }
  return result;
}

GradCheckResult grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor point, double eps) {
  std::vector<Tensor> leaves{std::move(point)};
  return grad_check([&f](std::span<const Tensor> xs) { return f(xs[0]); }, leaves, eps);
}

}  // namespace deepap::grad
