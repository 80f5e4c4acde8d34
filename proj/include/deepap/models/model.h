#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "deepap/grad/tensor.h"

namespace deepap::models {

enum class Arch { OLS, MLP, MLP_Residual, CNN, CNN_Residual, RNN, RNN_Attention, GRU, LSTM, Transformer };

enum class Normalization { none, batch, layer };

const std::vector<Arch>& all_archs();
std::string to_string(Arch arch);
Arch parse_arch(const std::string& name);
std::string to_string(Normalization norm);
Normalization parse_normalization(const std::string& name);

// True for architectures that consume a [batch, L, P] window.
bool is_sequence_arch(Arch arch);

// Architecture-specific sizes. Fields that an architecture does not use are
// ignored by it.
struct Hyper {
  std::size_t input_width = 0;  // P
  std::size_t seq_len = 12;     // L, for window-consuming models
  std::vector<std::size_t> hidden{32, 16, 8};  // MLP widths; empty gives a linear network
  std::size_t residual_width = 32;
  std::size_t residual_blocks = 2;
  std::size_t state_size = 32;
  std::vector<std::size_t> channels{8, 16};
  std::size_t kernel = 3;
  std::size_t pool = 2;
  std::size_t model_width = 32;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t ff_width = 64;
  bool ols_intercept = true;
  // false: h = output_gate * c as in the gated-RNN equations used here;
  // true: conventional LSTM with h = output_gate * tanh(c) and no relevance gate.
  bool lstm_tanh_output = false;
  Normalization normalization = Normalization::none;

  bool operator==(const Hyper&) const = default;
};

// Defaults per architecture with the given input width and window length.
Hyper default_hyper(Arch arch, std::size_t input_width, std::size_t seq_len = 12);

// Trained or freshly initialized predictor: architecture tag, sizes, named
// parameters and non-trainable buffers. Copies are deep.
class ModelHandle {
 public:
  ModelHandle() = default;
  ModelHandle(Arch arch, Hyper hyper, std::uint64_t seed);
  ModelHandle(const ModelHandle& other);
  ModelHandle& operator=(const ModelHandle& other);
  ModelHandle(ModelHandle&&) noexcept = default;
  ModelHandle& operator=(ModelHandle&&) noexcept = default;

  Arch arch() const { return arch_; }
  const Hyper& hyper() const { return hyper_; }
  std::uint64_t seed() const { return seed_; }

  const std::map<std::string, grad::Tensor>& params() const { return params_; }
  const std::map<std::string, grad::Tensor>& buffers() const { return buffers_; }
  const grad::Tensor& param(const std::string& name) const;
  const grad::Tensor& buffer(const std::string& name) const;
  grad::Tensor& mutable_param(const std::string& name);
  grad::Tensor& mutable_buffer(const std::string& name);
  bool has_param(const std::string& name) const { return params_.count(name) > 0; }

  void set_param(const std::string& name, grad::Tensor value);
  void set_buffer(const std::string& name, grad::Tensor value);

  // Trainable leaves in name order.
  std::vector<grad::Tensor> trainable() const;
  std::size_t parameter_count() const;

  // Adds normalization parameters for `norm` if absent (gain 1, shift 0,
  // running mean 0, running variance 1) and records it in the hyper.
  void set_normalization(Normalization norm);

  bool operator==(const ModelHandle& other) const;

 private:
  friend ModelHandle load_model(const std::filesystem::path& path);
  Arch arch_ = Arch::OLS;
  Hyper hyper_;
  std::uint64_t seed_ = 0;
  std::map<std::string, grad::Tensor> params_;
  std::map<std::string, grad::Tensor> buffers_;
};

// Allocates every parameter for `arch` with Glorot-uniform weights drawn from
// a generator seeded by `seed`; biases start at zero.
ModelHandle init_model(Arch arch, const Hyper& hyper, std::uint64_t seed);

// Checkpoint: little-endian binary container. Magic "DEEPAPCK", format
// version, arch tag, hyper map (JSON text), seed, then named arrays with
// declared shapes in row-major order.
void save_model(const ModelHandle& model, const std::filesystem::path& path);
ModelHandle load_model(const std::filesystem::path& path);

}  // namespace deepap::models
