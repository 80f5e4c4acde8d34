#pragma once

#include "deepap/grad/tensor.h"
#include "deepap/rng.h"

namespace deepap::train {

enum class Mode { train, eval };

// Inverted dropout. In train mode each unit is zeroed with probability `rate`
// and survivors are scaled by 1 / (1 - rate); eval mode returns `h` itself.
// Throws ConfigError unless 0 <= rate < 1.
grad::Tensor apply_dropout(const grad::Tensor& h, double rate, Mode mode, Rng& rng);

// Per-example standardization over the feature (last) axis before any learned
// scale/shift. A constant feature vector has zero variance; `eps` in the
// denominator keeps the result finite (it maps to all zeros).
grad::Tensor layer_norm(const grad::Tensor& h, double eps = 1e-10);

}  // namespace deepap::train
