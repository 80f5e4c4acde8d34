#include "deepap/train/regularization.h"

#include "deepap/errors.h"
#include "deepap/grad/ops.h"

namespace deepap::train {

grad::Tensor apply_dropout(const grad::Tensor& h, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  if (mode == Mode::eval || rate == 0.0) return h;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(h.size());
  for (auto& m : mask) m = uniform01(rng) < rate ? 0.0 : keep_scale;
  return grad::mul(h, grad::Tensor::constant(h.shape(), std::move(mask)));
}

grad::Tensor layer_norm(const grad::Tensor& h, double eps) { return grad::layer_norm(h, eps); }

}  // namespace deepap::train
