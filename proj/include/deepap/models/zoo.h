#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "deepap/grad/tensor.h"
#include "deepap/models/model.h"
#include "deepap/rng.h"

namespace deepap::models {

struct ParamSpec {
  std::string name;
  grad::Shape shape;
  // Glorot fans; when both are zero every entry starts at `fill`.
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;
  double fill = 0.0;
};

// Every trainable parameter of `arch` apart from normalization-site gains.
std::vector<ParamSpec> parameter_layout(Arch arch, const Hyper& hyper);

// (prefix, width) of every normalization site for `arch`; empty for OLS and
// for the Transformer, whose layer norms are part of the architecture.
std::vector<std::pair<std::string, std::size_t>> normalization_sites(Arch arch, const Hyper& hyper);

// Per-call options. Inference mode (the default) is deterministic.
struct ForwardContext {
  bool training = false;
  double dropout_rate = 0.0;
  Rng* rng = nullptr;  // required when training with dropout_rate > 0
  // Batch statistics observed by batch-norm sites in training mode, keyed by
  // site prefix: (mean, population variance).
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> batch_stats;
};

// Dispatches on the model's architecture. Input is [batch, P] or a window
// [batch, L, P]; feed-forward models given a window read its last step.
// Returns forecasts of shape [batch, 1].
grad::Tensor forward(const ModelHandle& model, const grad::Tensor& input, ForwardContext& ctx);
grad::Tensor forward(const ModelHandle& model, const grad::Tensor& input);

grad::Tensor ols_forward(const ModelHandle& model, const grad::Tensor& x);
grad::Tensor mlp_forward(const ModelHandle& model, const grad::Tensor& x, ForwardContext& ctx);
grad::Tensor residual_forward(const ModelHandle& model, const grad::Tensor& x, ForwardContext& ctx);
grad::Tensor cnn_forward(const ModelHandle& model, const grad::Tensor& window, ForwardContext& ctx);
grad::Tensor rnn_forward(const ModelHandle& model, const grad::Tensor& window, ForwardContext& ctx);
grad::Tensor lstm_forward(const ModelHandle& model, const grad::Tensor& window, ForwardContext& ctx);
grad::Tensor gru_forward(const ModelHandle& model, const grad::Tensor& window, ForwardContext& ctx);
grad::Tensor attention_rnn_forward(const ModelHandle& model, const grad::Tensor& window, ForwardContext& ctx);
grad::Tensor transformer_forward(const ModelHandle& model, const grad::Tensor& window, ForwardContext& ctx);

// ---- recurrent internals exposed for inspection ---------------------------

struct StepState {
  grad::Tensor hidden;  // h^{<t>}, [batch, H]
  grad::Tensor cell;    // c^{<t>} for LSTM/GRU (GRU: equals hidden); undefined for RNN
};

// Runs the recurrence of an RNN, GRU or LSTM (or the encoder of an
// RNN_Attention model) and returns the state after every step. Initial
// states default to zero.
std::vector<StepState> run_recurrence(const ModelHandle& model, const grad::Tensor& window, ForwardContext& ctx,
                                      const grad::Tensor* initial_hidden = nullptr,
                                      const grad::Tensor* initial_cell = nullptr);

enum class Gate { relevance, update, forget, output };

// Column block of `gate` inside the fused gate parameters (`lstm.Wg`,
// `lstm.Ug`, `lstm.bg`, or the `gru.*` equivalents). Throws for gates the
// variant does not have.
std::size_t gate_block(Arch arch, const Hyper& hyper, Gate gate);

// Softmax weights over the window steps used by an RNN_Attention model,
// [batch, L].
grad::Tensor attention_weights(const ModelHandle& model, const grad::Tensor& window);

// Multi-head scaled dot-product self-attention over x: [batch, L, d].
// Projections are [d, d]; heads split the projected width evenly. Returns
// Concat(head_1..head_h) W_O as [batch, L, d].
grad::Tensor multi_head_attention(const grad::Tensor& x, const grad::Tensor& wq, const grad::Tensor& wk,
                                  const grad::Tensor& wv, const grad::Tensor& wo, std::size_t heads);

// Fixed sinusoidal position codes, [L, d].
grad::Tensor positional_encoding(std::size_t length, std::size_t width);

// ---- closed-form baseline -------------------------------------------------

// Least-squares coefficients for a row-major n x p design. Throws DataError
// when X'X is singular (collinear columns) or n < p; no pseudo-inverse.
std::vector<double> fit_ols(std::span<const double> design, std::size_t rows, std::size_t cols,
                            std::span<const double> targets);

}  // namespace deepap::models
