#pragma once

#include <cstdint>

#include "deepap/models/model.h"

namespace deepap::models {

// Reduced sizes used for finite-difference checks.
Hyper gradcheck_hyper(Arch arch, std::size_t input_width, std::size_t seq_len);

struct ModelGradCheck {
  Arch arch = Arch::OLS;
  std::uint64_t seed = 0;
  double max_relative_error = 0.0;
  double kink_distance = 0.0;
  std::size_t coordinates = 0;
  std::size_t draws = 0;  // input draws tried before one stayed clear of relu/max-pool kinks
};

// Checks mean((forward(x) - y)^2) against central differences over every
// trainable parameter of a small randomly initialized model. Inputs are
// redrawn (up to 20 times) until no kink lies within `min_kink` of the
// evaluation point.
ModelGradCheck check_model_gradients(Arch arch, std::uint64_t seed, double eps = 1e-5, double min_kink = 1e-3);

}  // namespace deepap::models
