#include "deepap/models/zoo.h"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "deepap/errors.h"
#include "deepap/grad/ops.h"
#include "deepap/train/regularization.h"

namespace deepap::models {

using grad::Shape;
using grad::Tensor;

namespace {

constexpr double kNormEps = 1e-5;

std::size_t lstm_gate_count(const Hyper& h) { return h.lstm_tanh_output ? 3 : 4; }

struct ConvStage {
  std::size_t in_ch, out_ch, height, width;  // spatial extents entering the stage
};

// Spatial bookkeeping shared by layout, normalization sites and forward.
struct CnnPlan {
  std::vector<ConvStage> stages;  // CNN: one per channel entry; CNN_Residual: stem then blocks
  std::size_t flat_width = 0;
};

std::size_t pooled(std::size_t extent, std::size_t pool) {
  if (extent < pool) {
    throw ShapeError("cnn: pooling window " + std::to_string(pool) + " larger than feature map extent " +
                     std::to_string(extent));
  }
  return (extent - pool) / pool + 1;
}

CnnPlan plan_cnn(Arch arch, const Hyper& h) {
  if (h.kernel % 2 == 0) throw ConfigError("cnn kernel size must be odd for same padding");
  if (h.channels.empty()) throw ConfigError("cnn requires at least one channel entry");
  CnnPlan plan;
  std::size_t height = h.seq_len, width = h.input_width, in = 1;
  if (arch == Arch::CNN) {
    for (std::size_t c : h.channels) {
      plan.stages.push_back({in, c, height, width});
      height = pooled(height, h.pool);
      width = pooled(width, h.pool);
      in = c;
    }
  } else {
    const std::size_t c = h.channels.front();
    plan.stages.push_back({1, c, height, width});
    height = pooled(height, h.pool);
    width = pooled(width, h.pool);
    for (std::size_t k = 0; k < h.residual_blocks; ++k) plan.stages.push_back({c, c, height, width});
    height = pooled(height, h.pool);
    width = pooled(width, h.pool);
    in = c;
  }
  plan.flat_width = in * height * width;
  return plan;
}

void add_affine(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t in, std::size_t width) {
  out.push_back({prefix + ".W", {in, width}, in, width});
  out.push_back({prefix + ".b", {width}, 0, 0});
}

std::string idx(const std::string& stem, std::size_t i) { return stem + std::to_string(i); }

// ---- small building blocks -------------------------------------------------

Tensor affine(const ModelHandle& m, const std::string& prefix, const Tensor& x) {
  return grad::add(grad::matmul(x, m.param(prefix + ".W")), m.param(prefix + ".b"));
}

Tensor head(const ModelHandle& m, const Tensor& h) { return affine(m, "head", h); }

Tensor dropout(const Tensor& h, ForwardContext& ctx) {
  if (!ctx.training || ctx.dropout_rate == 0.0) return h;
  if (!ctx.rng) throw std::logic_error("training-mode dropout requires an RNG");
  return train::apply_dropout(h, ctx.dropout_rate, train::Mode::train, *ctx.rng);
}

// Normalization site over a [batch, F] tensor. Recurrent sites always use
// layer statistics since batch statistics across time steps are undefined.
Tensor normalize(const ModelHandle& m, const std::string& site, const Tensor& h, ForwardContext& ctx,
                 bool recurrent = false) {
  const Normalization norm = m.hyper().normalization;
  if (norm == Normalization::none) return h;
  Tensor z;
  if (norm == Normalization::layer || recurrent) {
    z = grad::layer_norm(h, kNormEps);
  } else if (ctx.training) {
    std::vector<double> mu, var;
    z = grad::batch_norm(h, kNormEps, &mu, &var);
    ctx.batch_stats[site] = {std::move(mu), std::move(var)};
  } else {
    const auto rm = m.buffer(site + ".mean").values();
    const auto rv = m.buffer(site + ".var").values();
    std::vector<double> inv(rv.size());
    for (std::size_t i = 0; i < rv.size(); ++i) inv[i] = 1.0 / std::sqrt(rv[i] + kNormEps);
    z = grad::mul(grad::sub(h, m.buffer(site + ".mean")), Tensor::constant({rm.size()}, std::move(inv)));
  }
  return grad::add(grad::mul(z, m.param(site + ".g")), m.param(site + ".b"));
}

Tensor normalize_map(const ModelHandle& m, const std::string& site, const Tensor& maps, ForwardContext& ctx) {
  if (m.hyper().normalization == Normalization::none) return maps;
  const Shape shape = maps.shape();
  const Tensor flat = grad::reshape(maps, {shape[0], shape[1] * shape[2] * shape[3]});
  return grad::reshape(normalize(m, site + ".norm", flat, ctx), shape);
}

void check_width(const ModelHandle& m, const Tensor& x) {
  if (x.rank() < 2 || x.shape().back() != m.hyper().input_width) {
    throw ShapeError(to_string(m.arch()) + ": input width mismatch, expected " +
                     std::to_string(m.hyper().input_width) + " got shape " + grad::shape_string(x.shape()));
  }
}

Tensor last_step(const Tensor& x) { return x.rank() == 3 ? grad::select_step(x, x.dim(1) - 1) : x; }

Tensor as_window(const ModelHandle& m, const Tensor& x) {
  check_width(m, x);
  if (x.rank() == 2) return grad::reshape(x, {x.dim(0), 1, x.dim(1)});
  if (x.rank() != 3) throw ShapeError(to_string(m.arch()) + ": expected [batch, L, P] window");
  return x;
}

void require_arch(const ModelHandle& m, std::initializer_list<Arch> archs, const char* fn) {
  for (Arch a : archs) {
    if (m.arch() == a) return;
  }
  throw std::invalid_argument(std::string(fn) + " called on " + to_string(m.arch()) + " model");
}

}  // namespace

// ---- layout ----------------------------------------------------------------

std::vector<ParamSpec> parameter_layout(Arch arch, const Hyper& h) {
  const std::size_t P = h.input_width, H = h.state_size;
  std::vector<ParamSpec> out;
  switch (arch) {
    case Arch::OLS:
      out.push_back({"ols.theta", {P, 1}, 0, 0});
      if (h.ols_intercept) out.push_back({"ols.intercept", {1}, 0, 0});
      return out;
    case Arch::MLP: {
      std::size_t prev = P;
      for (std::size_t i = 0; i < h.hidden.size(); ++i) {
        add_affine(out, idx("mlp.", i), prev, h.hidden[i]);
        prev = h.hidden[i];
      }
      add_affine(out, "head", prev, 1);
      return out;
    }
    case Arch::MLP_Residual:
      add_affine(out, "proj", P, h.residual_width);
      for (std::size_t k = 0; k < h.residual_blocks; ++k) add_affine(out, idx("block", k), h.residual_width, h.residual_width);
      add_affine(out, "head", h.residual_width, 1);
      return out;
    case Arch::CNN:
    case Arch::CNN_Residual: {
      const CnnPlan plan = plan_cnn(arch, h);
      const std::size_t k2 = h.kernel * h.kernel;
      for (std::size_t s = 0; s < plan.stages.size(); ++s) {
        const auto& st = plan.stages[s];
        const std::string name = arch == Arch::CNN ? idx("conv", s) : (s == 0 ? "stem" : idx("block", s - 1));
        out.push_back({name + ".K", {st.out_ch, st.in_ch, h.kernel, h.kernel}, st.in_ch * k2, st.out_ch * k2});
        out.push_back({name + ".b", {st.out_ch}, 0, 0});
      }
      add_affine(out, "head", plan.flat_width, 1);
      return out;
    }
    case Arch::RNN:
      out.push_back({"rnn.U", {P, H}, P, H});
      out.push_back({"rnn.W", {H, H}, H, H});
      out.push_back({"rnn.b", {H}, 0, 0});
      add_affine(out, "head", H, 1);
      return out;
    case Arch::LSTM:
    case Arch::GRU: {
      const std::string p = arch == Arch::LSTM ? "lstm" : "gru";
      const std::size_t G = arch == Arch::LSTM ? lstm_gate_count(h) : 2;
      out.push_back({p + ".Wg", {P, G * H}, P, H});
      out.push_back({p + ".Ug", {H, G * H}, H, H});
      out.push_back({p + ".bg", {G * H}, 0, 0});
      out.push_back({p + ".Wc", {P, H}, P, H});
      out.push_back({p + ".Uc", {H, H}, H, H});
      out.push_back({p + ".bc", {H}, 0, 0});
      add_affine(out, "head", H, 1);
      return out;
    }
    case Arch::RNN_Attention: {
      const std::size_t L = h.seq_len;
      out.push_back({"enc.U", {P, H}, P, H});
      out.push_back({"enc.W", {H, H}, H, H});
      out.push_back({"enc.b", {H}, 0, 0});
      out.push_back({"enc.V", {H, H}, H, H});
      out.push_back({"enc.bv", {H}, 0, 0});
      out.push_back({"att.W", {P + H, L}, P + H, L});
      out.push_back({"att.b", {L}, 0, 0});
      out.push_back({"att.Wc", {2 * H, H}, 2 * H, H});
      out.push_back({"dec.W", {H, H}, H, H});
      out.push_back({"dec.U", {P, H}, P, H});
      out.push_back({"dec.b", {H}, 0, 0});
      add_affine(out, "head", H, 1);
      return out;
    }
    case Arch::Transformer: {
      const std::size_t d = h.model_width;
      add_affine(out, "in", P, d);
      for (std::size_t l = 0; l < h.layers; ++l) {
        const std::string p = idx("l", l);
        for (const char* w : {".Wq", ".Wk", ".Wv", ".Wo"}) out.push_back({p + w, {d, d}, d, d});
        out.push_back({p + ".bo", {d}, 0, 0});
        add_affine(out, p + ".ff1", d, h.ff_width);
        add_affine(out, p + ".ff2", h.ff_width, d);
        for (const char* ln : {".ln1", ".ln2"}) {
          out.push_back({p + ln + ".g", {d}, 0, 0, 1.0});
          out.push_back({p + ln + ".b", {d}, 0, 0, 0.0});
        }
      }
      add_affine(out, "head", d, 1);
      return out;
    }
  }
  return out;
}

std::vector<std::pair<std::string, std::size_t>> normalization_sites(Arch arch, const Hyper& h) {
  std::vector<std::pair<std::string, std::size_t>> out;
  switch (arch) {
    case Arch::MLP:
      for (std::size_t i = 0; i < h.hidden.size(); ++i) out.emplace_back(idx("mlp.", i) + ".norm", h.hidden[i]);
      break;
    case Arch::MLP_Residual:
      out.emplace_back("proj.norm", h.residual_width);
      for (std::size_t k = 0; k < h.residual_blocks; ++k) out.emplace_back(idx("block", k) + ".norm", h.residual_width);
      break;
    case Arch::CNN:
    case Arch::CNN_Residual: {
      const CnnPlan plan = plan_cnn(arch, h);
      for (std::size_t s = 0; s < plan.stages.size(); ++s) {
        const auto& st = plan.stages[s];
        const std::string name = arch == Arch::CNN ? idx("conv", s) : (s == 0 ? "stem" : idx("block", s - 1));
        out.emplace_back(name + ".norm", st.out_ch * st.height * st.width);
      }
      break;
    }
    case Arch::RNN:
      out.emplace_back("rnn.norm", h.state_size);
      break;
    case Arch::LSTM:
      out.emplace_back("lstm.norm", h.state_size);
      break;
    case Arch::GRU:
      out.emplace_back("gru.norm", h.state_size);
      break;
    case Arch::RNN_Attention:
      out.emplace_back("enc.norm", h.state_size);
      break;
    case Arch::OLS:
    case Arch::Transformer:
      break;
  }
  return out;
}

// ---- forward passes ---------------------------------------------------------

Tensor forward(const ModelHandle& model, const Tensor& input) {
  ForwardContext ctx;
  return forward(model, input, ctx);
}

Tensor forward(const ModelHandle& model, const Tensor& input, ForwardContext& ctx) {
  switch (model.arch()) {
    case Arch::OLS:
      return ols_forward(model, input);
    case Arch::MLP:
      return mlp_forward(model, input, ctx);
    case Arch::MLP_Residual:
      return residual_forward(model, input, ctx);
    case Arch::CNN:
    case Arch::CNN_Residual:
      return cnn_forward(model, input, ctx);
    case Arch::RNN:
      return rnn_forward(model, input, ctx);
    case Arch::LSTM:
      return lstm_forward(model, input, ctx);
    case Arch::GRU:
      return gru_forward(model, input, ctx);
    case Arch::RNN_Attention:
      return attention_rnn_forward(model, input, ctx);
    case Arch::Transformer:
      return transformer_forward(model, input, ctx);
  }
  throw std::logic_error("unhandled architecture");
}

Tensor ols_forward(const ModelHandle& m, const Tensor& input) {
  require_arch(m, {Arch::OLS}, "ols_forward");
  check_width(m, input);
  Tensor out = grad::matmul(last_step(input), m.param("ols.theta"));
  if (m.hyper().ols_intercept) out = grad::add(out, m.param("ols.intercept"));
  return out;
}

Tensor mlp_forward(const ModelHandle& m, const Tensor& input, ForwardContext& ctx) {
  require_arch(m, {Arch::MLP}, "mlp_forward");
  check_width(m, input);
  Tensor h = last_step(input);
  for (std::size_t i = 0; i < m.hyper().hidden.size(); ++i) {
    const std::string p = idx("mlp.", i);
    h = dropout(grad::relu(normalize(m, p + ".norm", affine(m, p, h), ctx)), ctx);
  }
  return head(m, h);
}

Tensor residual_forward(const ModelHandle& m, const Tensor& input, ForwardContext& ctx) {
  if (m.arch() == Arch::CNN_Residual) return cnn_forward(m, input, ctx);
  require_arch(m, {Arch::MLP_Residual}, "residual_forward");
  check_width(m, input);
  Tensor h = dropout(grad::relu(normalize(m, "proj.norm", affine(m, "proj", last_step(input)), ctx)), ctx);
  for (std::size_t k = 0; k < m.hyper().residual_blocks; ++k) {
    const std::string p = idx("block", k);
    Tensor inner = dropout(grad::relu(normalize(m, p + ".norm", affine(m, p, h), ctx)), ctx);
    if (inner.shape() != h.shape()) {
      throw ShapeError("residual skip junction " + p + ": " + grad::shape_string(inner.shape()) + " vs " +
                       grad::shape_string(h.shape()));
    }
    h = grad::add(inner, h);
  }
  return head(m, h);
}

Tensor cnn_forward(const ModelHandle& m, const Tensor& input, ForwardContext& ctx) {
  require_arch(m, {Arch::CNN, Arch::CNN_Residual}, "cnn_forward");
  const Hyper& hp = m.hyper();
  const Tensor window = as_window(m, input);
  const std::size_t B = window.dim(0), L = window.dim(1), P = window.dim(2);
  if (L < hp.kernel || P < hp.kernel) {
    throw ShapeError("cnn: kernel " + std::to_string(hp.kernel) + "x" + std::to_string(hp.kernel) +
                     " larger than input window " + std::to_string(L) + "x" + std::to_string(P));
  }
  if (L != hp.seq_len) throw ShapeError("cnn: window length differs from the model's seq_len");
  const std::size_t pad = hp.kernel / 2;
  Tensor maps = grad::reshape(window, {B, 1, L, P});
  auto stage = [&](const std::string& name, const Tensor& x) {
    Tensor y = grad::conv2d(x, m.param(name + ".K"), m.param(name + ".b"), pad);
    return grad::relu(normalize_map(m, name, y, ctx));
  };
  if (m.arch() == Arch::CNN) {
    for (std::size_t s = 0; s < hp.channels.size(); ++s) {
      maps = grad::max_pool2d(stage(idx("conv", s), maps), hp.pool, hp.pool);
    }
  } else {
    maps = grad::max_pool2d(stage("stem", maps), hp.pool, hp.pool);
    for (std::size_t k = 0; k < hp.residual_blocks; ++k) {
      const std::string p = idx("block", k);
      Tensor inner = stage(p, maps);
      if (inner.shape() != maps.shape()) throw ShapeError("residual skip junction " + p + " changes shape");
      maps = grad::add(inner, maps);
    }
    maps = grad::max_pool2d(maps, hp.pool, hp.pool);
  }
  const Tensor flat = grad::reshape(maps, {B, maps.size() / B});
  return head(m, dropout(flat, ctx));
}

std::size_t gate_block(Arch arch, const Hyper& hyper, Gate gate) {
  if (arch == Arch::GRU) {
    if (gate == Gate::relevance) return 0;
    if (gate == Gate::update) return 1;
    throw std::invalid_argument("GRU has only relevance and update gates");
  }
  if (arch != Arch::LSTM) throw std::invalid_argument("gate_block: not a gated architecture");
  const bool paper = !hyper.lstm_tanh_output;
  switch (gate) {
    case Gate::relevance:
      if (!paper) throw std::invalid_argument("conventional LSTM has no relevance gate");
      return 0;
    case Gate::update:
      return paper ? 1 : 0;
    case Gate::forget:
      return paper ? 2 : 1;
    case Gate::output:
      return paper ? 3 : 2;
  }
  return 0;
}

std::vector<StepState> run_recurrence(const ModelHandle& m, const Tensor& input, ForwardContext& ctx,
                                      const Tensor* initial_hidden, const Tensor* initial_cell) {
  require_arch(m, {Arch::RNN, Arch::RNN_Attention, Arch::LSTM, Arch::GRU}, "run_recurrence");
  const Tensor window = as_window(m, input);
  const std::size_t B = window.dim(0), L = window.dim(1), P = window.dim(2), H = m.hyper().state_size;
  const Tensor flat = grad::reshape(window, {B * L, P});
  Tensor h = initial_hidden ? *initial_hidden : Tensor::zeros({B, H});
  if (h.shape() != Shape{B, H}) throw ShapeError("initial hidden state must be [batch, state_size]");
  std::vector<StepState> states;
  states.reserve(L);

  if (m.arch() == Arch::RNN || m.arch() == Arch::RNN_Attention) {
    const std::string p = m.arch() == Arch::RNN ? "rnn" : "enc";
    const Tensor xu = grad::reshape(grad::matmul(flat, m.param(p + ".U")), {B, L, H});
    for (std::size_t t = 0; t < L; ++t) {
      Tensor pre = grad::add(grad::add(grad::select_step(xu, t), grad::matmul(h, m.param(p + ".W"))), m.param(p + ".b"));
      h = grad::tanh(normalize(m, p + ".norm", pre, ctx, true));
      states.push_back({h, Tensor()});
    }
    return states;
  }

  const bool lstm = m.arch() == Arch::LSTM;
  const std::string p = lstm ? "lstm" : "gru";
  const bool paper = !lstm || !m.hyper().lstm_tanh_output;
  const std::size_t G = lstm ? lstm_gate_count(m.hyper()) : 2;
  Tensor c = initial_cell ? *initial_cell : (lstm ? Tensor::zeros({B, H}) : h);
  if (c.shape() != Shape{B, H}) throw ShapeError("initial cell state must be [batch, state_size]");
  const Tensor xg = grad::reshape(grad::matmul(flat, m.param(p + ".Wg")), {B, L, G * H});
  const Tensor xc = grad::reshape(grad::matmul(flat, m.param(p + ".Wc")), {B, L, H});
  auto block = [&](const Tensor& gates, Gate g) {
    const std::size_t k = gate_block(m.arch(), m.hyper(), g);
    return grad::slice_last(gates, k * H, (k + 1) * H);
  };
  for (std::size_t t = 0; t < L; ++t) {
    // GRU carries a single state: the previous hidden state is the cell.
    const Tensor& prev = lstm ? h : c;
    const Tensor gates = grad::sigmoid(
        grad::add(grad::add(grad::select_step(xg, t), grad::matmul(prev, m.param(p + ".Ug"))), m.param(p + ".bg")));
    const Tensor recur = paper ? grad::mul(block(gates, Gate::relevance), prev) : prev;
    Tensor pre = grad::add(grad::add(grad::select_step(xc, t), grad::matmul(recur, m.param(p + ".Uc"))), m.param(p + ".bc"));
    const Tensor candidate = grad::tanh(normalize(m, p + ".norm", pre, ctx, true));
    const Tensor update = block(gates, Gate::update);
    if (lstm) {
      c = grad::add(grad::mul(update, candidate), grad::mul(block(gates, Gate::forget), c));
      const Tensor out_gate = block(gates, Gate::output);
      h = paper ? grad::mul(out_gate, c) : grad::mul(out_gate, grad::tanh(c));
    } else {
      c = grad::add(grad::mul(update, candidate), grad::mul(grad::one_minus(update), c));
      h = c;
    }
    states.push_back({h, c});
  }
  return states;
}

Tensor rnn_forward(const ModelHandle& m, const Tensor& input, ForwardContext& ctx) {
  require_arch(m, {Arch::RNN}, "rnn_forward");
  return head(m, dropout(run_recurrence(m, input, ctx).back().hidden, ctx));
}

Tensor lstm_forward(const ModelHandle& m, const Tensor& input, ForwardContext& ctx) {
  require_arch(m, {Arch::LSTM}, "lstm_forward");
  return head(m, dropout(run_recurrence(m, input, ctx).back().hidden, ctx));
}

Tensor gru_forward(const ModelHandle& m, const Tensor& input, ForwardContext& ctx) {
  require_arch(m, {Arch::GRU}, "gru_forward");
  return head(m, dropout(run_recurrence(m, input, ctx).back().hidden, ctx));
}

namespace {

struct AttentionPass {
  Tensor weights;  // [B, L]
  Tensor output;   // decoder hidden state [B, H]
};

AttentionPass attention_pass(const ModelHandle& m, const Tensor& input, ForwardContext& ctx) {
  require_arch(m, {Arch::RNN_Attention}, "attention_rnn_forward");
  const Tensor window = as_window(m, input);
  const std::size_t B = window.dim(0), L = window.dim(1), H = m.hyper().state_size;
  if (L != m.hyper().seq_len) throw ShapeError("attention rnn: window length differs from the model's seq_len");
  const auto states = run_recurrence(m, window, ctx);
  std::vector<Tensor> hidden;
  hidden.reserve(L);
  for (const auto& s : states) hidden.push_back(s.hidden);
  // Encoder outputs y^{<s>} = V h^{<s>} + b_v for every step.
  const Tensor stacked = grad::reshape(grad::stack_steps(hidden), {B * L, H});
  const Tensor outputs = grad::reshape(grad::add(grad::matmul(stacked, m.param("enc.V")), m.param("enc.bv")), {B, L, H});

  const Tensor x_last = grad::select_step(window, L - 1);
  const Tensor& h_last = hidden.back();
  const std::vector<Tensor> query_parts{x_last, h_last};
  const Tensor scores = grad::add(grad::matmul(grad::concat_last(query_parts), m.param("att.W")), m.param("att.b"));
  const Tensor weights = grad::softmax_last(scores);
  const Tensor context = grad::reshape(grad::bmm(grad::reshape(weights, {B, 1, L}), outputs), {B, H});
  const std::vector<Tensor> mix_parts{context, h_last};
  const Tensor mixed = grad::matmul(grad::concat_last(mix_parts), m.param("att.Wc"));
  const Tensor out = grad::tanh(grad::add(
      grad::add(grad::matmul(mixed, m.param("dec.W")), grad::matmul(x_last, m.param("dec.U"))), m.param("dec.b")));
  return {weights, out};
}

}  // namespace

Tensor attention_weights(const ModelHandle& m, const Tensor& window) {
  ForwardContext ctx;
  return attention_pass(m, window, ctx).weights;
}

Tensor attention_rnn_forward(const ModelHandle& m, const Tensor& input, ForwardContext& ctx) {
  return head(m, dropout(attention_pass(m, input, ctx).output, ctx));
}

Tensor positional_encoding(std::size_t length, std::size_t width) {
  std::vector<double> pe(length * width);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < width; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(width));
      pe[pos * width + i] = i % 2 == 0 ? std::sin(pos * rate) : std::cos(pos * rate);
    }
  }
  return Tensor::constant({length, width}, std::move(pe));
}

Tensor multi_head_attention(const Tensor& x, const Tensor& wq, const Tensor& wk, const Tensor& wv, const Tensor& wo,
                            std::size_t heads) {
  if (x.rank() != 3) throw ShapeError("multi_head_attention: expected [batch, L, d]");
  const std::size_t B = x.dim(0), L = x.dim(1), d = x.dim(2);
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("multi_head_attention: width " + std::to_string(d) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  const std::size_t dk = d / heads;
  const Tensor flat = grad::reshape(x, {B * L, d});
  const Tensor q = grad::reshape(grad::matmul(flat, wq), {B, L, d});
  const Tensor k = grad::reshape(grad::matmul(flat, wk), {B, L, d});
  const Tensor v = grad::reshape(grad::matmul(flat, wv), {B, L, d});
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    const std::size_t lo = hd * dk, hi = lo + dk;
    const Tensor qh = heads == 1 ? q : grad::slice_last(q, lo, hi);
    const Tensor kh = heads == 1 ? k : grad::slice_last(k, lo, hi);
    const Tensor vh = heads == 1 ? v : grad::slice_last(v, lo, hi);
    const Tensor attn = grad::softmax_last(grad::scale(grad::bmm(qh, grad::transpose_last2(kh)), inv_sqrt));
    outs.push_back(grad::bmm(attn, vh));
  }
  const Tensor joined = heads == 1 ? outs.front() : grad::concat_last(outs);
  return grad::reshape(grad::matmul(grad::reshape(joined, {B * L, d}), wo), {B, L, d});
}

Tensor transformer_forward(const ModelHandle& model, const Tensor& input, ForwardContext& ctx) {
  require_arch(model, {Arch::Transformer}, "transformer_forward");
  const Hyper& hp = model.hyper();
  const Tensor window = as_window(model, input);
  const std::size_t B = window.dim(0), L = window.dim(1), P = window.dim(2), d = hp.model_width;
  if (hp.heads == 0 || d % hp.heads != 0) {
    throw ShapeError("transformer: width " + std::to_string(d) + " not divisible by " + std::to_string(hp.heads) +
                     " heads");
  }
  const ModelHandle* m = &model;
  Tensor x = grad::reshape(affine(*m, "in", grad::reshape(window, {B * L, P})), {B, L, d});
  x = grad::add(x, positional_encoding(L, d));
  auto norm = [&](const std::string& p, const Tensor& t) {
    const Tensor flat = grad::layer_norm(grad::reshape(t, {B * L, d}), kNormEps);
    return grad::reshape(grad::add(grad::mul(flat, m->param(p + ".g")), m->param(p + ".b")), {B, L, d});
  };
  for (std::size_t l = 0; l < hp.layers; ++l) {
    const std::string p = idx("l", l);
    Tensor attn = multi_head_attention(x, m->param(p + ".Wq"), m->param(p + ".Wk"), m->param(p + ".Wv"),
                                       m->param(p + ".Wo"), hp.heads);
    attn = grad::add(attn, m->param(p + ".bo"));
    x = norm(p + ".ln1", grad::add(x, dropout(attn, ctx)));
    const Tensor flat = grad::reshape(x, {B * L, d});
    const Tensor ff = affine(*m, p + ".ff2", grad::relu(affine(*m, p + ".ff1", flat)));
    x = norm(p + ".ln2", grad::add(x, dropout(grad::reshape(ff, {B, L, d}), ctx)));
  }
  return head(*m, grad::select_step(x, L - 1));
}

// ---- OLS --------------------------------------------------------------------

std::vector<double> fit_ols(std::span<const double> design, std::size_t rows, std::size_t cols,
                            std::span<const double> targets) {
  if (design.size() != rows * cols || targets.size() != rows) throw ShapeError("fit_ols: design/target size mismatch");
  if (rows < cols) {
    throw DataError("fit_ols: " + std::to_string(rows) + " observations for " + std::to_string(cols) + " coefficients");
  }
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const RowMatrix> X(design.data(), rows, cols);
  const Eigen::Map<const Eigen::VectorXd> y(targets.data(), rows);
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  if (qr.rank() < static_cast<Eigen::Index>(cols)) {
    throw DataError("fit_ols: design is rank deficient (rank " + std::to_string(qr.rank()) + " < " +
                    std::to_string(cols) + "); X'X is singular");
  }
  const Eigen::VectorXd theta = qr.solve(y);
  return {theta.data(), theta.data() + theta.size()};
}

}  // namespace deepap::models
