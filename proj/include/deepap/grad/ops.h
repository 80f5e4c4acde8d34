#pragma once

#include <span>
#include <vector>

#include "deepap/grad/tensor.h"

namespace deepap::grad {

// ---- linear algebra -------------------------------------------------------

// [m,k] x [k,n] -> [m,n].
Tensor matmul(const Tensor& a, const Tensor& b);
// Batched product [b,m,k] x [b,k,n] -> [b,m,n].
Tensor bmm(const Tensor& a, const Tensor& b);
// Swaps the last two axes of a rank-2 or rank-3 tensor.
Tensor transpose_last2(const Tensor& a);

// ---- elementwise ----------------------------------------------------------
//
// Binary ops broadcast when the shapes are equal, when one operand has a
// single element, or when one operand's shape is a trailing suffix of the
// other's (e.g. a bias [n] against activations [b,n]).

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);
// 1 - a, used by GRU update interpolation.
Tensor one_minus(const Tensor& a);
Tensor square(const Tensor& a);

// max{0, x}; the subgradient at 0 is 0.
Tensor relu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// ---- reductions -----------------------------------------------------------

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Softmax over the last axis. Throws on an empty axis.
Tensor softmax_last(const Tensor& a);

// ---- structure ------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape);
// Concatenate along the last axis; leading extents must agree.
Tensor concat_last(std::span<const Tensor> parts);
// Columns [begin, end) of the last axis.
Tensor slice_last(const Tensor& a, std::size_t begin, std::size_t end);
// Stack k tensors of shape [b, d] into [b, k, d].
Tensor stack_steps(std::span<const Tensor> steps);
// Index `step` of axis 1 of a [b, L, d] tensor -> [b, d].
Tensor select_step(const Tensor& a, std::size_t step);

// ---- convolution / pooling on [batch, channels, height, width] ------------

// Valid cross-correlation (no kernel flip) with zero padding `pad` on both
// spatial axes and unit stride. kernel: [out, in, kh, kw], bias: [out].
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, std::size_t pad = 0);
Tensor max_pool2d(const Tensor& input, std::size_t window, std::size_t stride);
Tensor avg_pool2d(const Tensor& input, std::size_t window, std::size_t stride);

// ---- normalization --------------------------------------------------------

// Standardize each row over the last axis: (x - mean) / sqrt(var + eps) with
// population variance. No learned scale or shift.
Tensor layer_norm(const Tensor& a, double eps = 1e-5);
// Standardize each column of a [b, f] tensor over the batch axis. The batch
// mean and population variance are written to `batch_mean` / `batch_var`
// when non-null.
Tensor batch_norm(const Tensor& a, double eps, std::vector<double>* batch_mean,
                  std::vector<double>* batch_var);

// ---- diagnostics ----------------------------------------------------------

// While alive on a thread, records how close relu inputs come to the kink at
// zero and how close max-pool winners come to a tie. Finite-difference checks
// use it to reject evaluation points near non-differentiable kinks.
class KinkMonitor {
 public:
  KinkMonitor();
  ~KinkMonitor();
  KinkMonitor(const KinkMonitor&) = delete;
  KinkMonitor& operator=(const KinkMonitor&) = delete;

  double min_distance() const { return min_distance_; }
  void observe(double distance) {
    if (distance < min_distance_) min_distance_ = distance;
  }
  static KinkMonitor* active();

 private:
  double min_distance_;
  KinkMonitor* previous_;
};

}  // namespace deepap::grad
