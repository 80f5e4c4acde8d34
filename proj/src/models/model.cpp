#include "deepap/models/model.h"

#include <json.hpp>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "deepap/errors.h"
#include "deepap/models/zoo.h"
#include "deepap/rng.h"

namespace deepap::models {

namespace {

const std::vector<std::pair<Arch, std::string>>& arch_names() {
  static const std::vector<std::pair<Arch, std::string>> names{
      {Arch::OLS, "OLS"},
      {Arch::MLP, "MLP"},
      {Arch::MLP_Residual, "MLP_Residual"},
      {Arch::CNN, "CNN"},
      {Arch::CNN_Residual, "CNN_Residual"},
      {Arch::RNN, "RNN"},
      {Arch::RNN_Attention, "RNN_Attention"},
      {Arch::GRU, "GRU"},
      {Arch::LSTM, "LSTM"},
      {Arch::Transformer, "Transformer"},
  };
  return names;
}

}  // namespace

const std::vector<Arch>& all_archs() {
  static const std::vector<Arch> archs = [] {
    std::vector<Arch> out;
    for (const auto& [a, _] : arch_names()) out.push_back(a);
    return out;
  }();
  return archs;
}

std::string to_string(Arch arch) {
  for (const auto& [a, name] : arch_names()) {
    if (a == arch) return name;
  }
  return "unknown";
}

Arch parse_arch(const std::string& name) {
  for (const auto& [a, n] : arch_names()) {
    if (n == name) return a;
  }
  throw ConfigError("unknown architecture '" + name + "'");
}

std::string to_string(Normalization norm) {
  switch (norm) {
    case Normalization::none:
      return "none";
    case Normalization::batch:
      return "batch";
    case Normalization::layer:
      return "layer";
  }
  return "none";
}

Normalization parse_normalization(const std::string& name) {
  if (name == "none") return Normalization::none;
  if (name == "batch") return Normalization::batch;
  if (name == "layer") return Normalization::layer;
  throw ConfigError("unknown normalization '" + name + "'");
}

bool is_sequence_arch(Arch arch) {
  switch (arch) {
    case Arch::OLS:
    case Arch::MLP:
    case Arch::MLP_Residual:
      return false;
    default:
      return true;
  }
}

Hyper default_hyper(Arch arch, std::size_t input_width, std::size_t seq_len) {
  Hyper h;
  h.input_width = input_width;
  h.seq_len = is_sequence_arch(arch) ? seq_len : 1;
  if (arch == Arch::CNN_Residual) h.channels = {8};
  return h;
}

// ---- ModelHandle ----------------------------------------------------------

ModelHandle::ModelHandle(Arch arch, Hyper hyper, std::uint64_t seed)
    : arch_(arch), hyper_(std::move(hyper)), seed_(seed) {}

ModelHandle::ModelHandle(const ModelHandle& other)
    : arch_(other.arch_), hyper_(other.hyper_), seed_(other.seed_) {
  for (const auto& [k, v] : other.params_) params_.emplace(k, v.clone());
  for (const auto& [k, v] : other.buffers_) buffers_.emplace(k, v.clone());
}

ModelHandle& ModelHandle::operator=(const ModelHandle& other) {
  if (this != &other) {
    ModelHandle copy(other);
    *this = std::move(copy);
  }
  return *this;
}

const grad::Tensor& ModelHandle::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("model has no parameter '" + name + "'");
  return it->second;
}

const grad::Tensor& ModelHandle::buffer(const std::string& name) const {
  auto it = buffers_.find(name);
  if (it == buffers_.end()) throw std::out_of_range("model has no buffer '" + name + "'");
  return it->second;
}

grad::Tensor& ModelHandle::mutable_param(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("model has no parameter '" + name + "'");
  return it->second;
}

grad::Tensor& ModelHandle::mutable_buffer(const std::string& name) {
  auto it = buffers_.find(name);
  if (it == buffers_.end()) throw std::out_of_range("model has no buffer '" + name + "'");
  return it->second;
}

void ModelHandle::set_param(const std::string& name, grad::Tensor value) {
  params_[name] = grad::Tensor::parameter(value.shape(), {value.values().begin(), value.values().end()});
}

void ModelHandle::set_buffer(const std::string& name, grad::Tensor value) {
  buffers_[name] = grad::Tensor::constant(value.shape(), {value.values().begin(), value.values().end()});
}

std::vector<grad::Tensor> ModelHandle::trainable() const {
  std::vector<grad::Tensor> out;
  out.reserve(params_.size());
  for (const auto& [_, t] : params_) out.push_back(t);
  return out;
}

std::size_t ModelHandle::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.size();
  return n;
}

void ModelHandle::set_normalization(Normalization norm) {
  hyper_.normalization = norm;
  if (norm == Normalization::none) return;
  for (const auto& [prefix, width] : normalization_sites(arch_, hyper_)) {
    if (!params_.count(prefix + ".g")) {
      params_[prefix + ".g"] = grad::Tensor::full({width}, 1.0, true);
      params_[prefix + ".b"] = grad::Tensor::zeros({width}, true);
    }
    if (norm == Normalization::batch && !buffers_.count(prefix + ".mean")) {
      buffers_[prefix + ".mean"] = grad::Tensor::zeros({width});
      buffers_[prefix + ".var"] = grad::Tensor::full({width}, 1.0);
    }
  }
}

bool ModelHandle::operator==(const ModelHandle& other) const {
  auto same = [](const std::map<std::string, grad::Tensor>& a, const std::map<std::string, grad::Tensor>& b) {
    if (a.size() != b.size()) return false;
    for (auto ia = a.begin(), ib = b.begin(); ia != a.end(); ++ia, ++ib) {
      if (ia->first != ib->first || ia->second.shape() != ib->second.shape()) return false;
      if (std::memcmp(ia->second.values().data(), ib->second.values().data(), ia->second.size() * sizeof(double)) != 0) {
        return false;
      }
    }
    return true;
  };
  return arch_ == other.arch_ && hyper_ == other.hyper_ && seed_ == other.seed_ && same(params_, other.params_) &&
         same(buffers_, other.buffers_);
}

// ---- initialization -------------------------------------------------------

ModelHandle init_model(Arch arch, const Hyper& hyper, std::uint64_t seed) {
  if (hyper.input_width == 0) throw ConfigError("input_width must be positive");
  ModelHandle model(arch, hyper, seed);
  Rng rng(seed);
  for (const auto& spec : parameter_layout(arch, hyper)) {
    const std::size_t n = grad::shape_size(spec.shape);
    std::vector<double> values(n, spec.fill);
    if (spec.fan_in + spec.fan_out > 0) {
      const double s = std::sqrt(6.0 / static_cast<double>(spec.fan_in + spec.fan_out));
      for (auto& v : values) v = uniform(rng, -s, s);
    }
    model.set_param(spec.name, grad::Tensor::constant(spec.shape, std::move(values)));
  }
  model.set_normalization(hyper.normalization);
  return model;
}

// ---- checkpoint I/O -------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'D', 'E', 'E', 'P', 'A', 'P', 'C', 'K'};
constexpr std::uint32_t kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

nlohmann::json hyper_to_json(const Hyper& h) {
  return {{"input_width", h.input_width}, {"seq_len", h.seq_len},
          {"hidden", h.hidden},           {"residual_width", h.residual_width},
          {"residual_blocks", h.residual_blocks}, {"state_size", h.state_size},
          {"channels", h.channels},       {"kernel", h.kernel},
          {"pool", h.pool},               {"model_width", h.model_width},
          {"heads", h.heads},             {"layers", h.layers},
          {"ff_width", h.ff_width},       {"ols_intercept", h.ols_intercept},
          {"lstm_tanh_output", h.lstm_tanh_output}, {"normalization", to_string(h.normalization)}};
}

Hyper hyper_from_json(const nlohmann::json& j) {
  Hyper h;
  h.input_width = j.at("input_width");
  h.seq_len = j.at("seq_len");
  h.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  h.residual_width = j.at("residual_width");
  h.residual_blocks = j.at("residual_blocks");
  h.state_size = j.at("state_size");
  h.channels = j.at("channels").get<std::vector<std::size_t>>();
  h.kernel = j.at("kernel");
  h.pool = j.at("pool");
  h.model_width = j.at("model_width");
  h.heads = j.at("heads");
  h.layers = j.at("layers");
  h.ff_width = j.at("ff_width");
  h.ols_intercept = j.at("ols_intercept");
  h.lstm_tanh_output = j.at("lstm_tanh_output");
  h.normalization = parse_normalization(j.at("normalization"));
  return h;
}

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ostream& os, const std::string& s) {
  put<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw DataError("checkpoint truncated");
  return v;
}

std::string get_string(std::istream& is) {
  const auto n = get<std::uint64_t>(is);
  if (n > (1u << 26)) throw DataError("checkpoint string length implausible");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw DataError("checkpoint truncated");
  return s;
}

void put_arrays(std::ostream& os, const std::map<std::string, grad::Tensor>& arrays) {
  put<std::uint64_t>(os, arrays.size());
  for (const auto& [name, t] : arrays) {
    put_string(os, name);
    put<std::uint64_t>(os, t.rank());
    for (auto e : t.shape()) put<std::uint64_t>(os, e);
    os.write(reinterpret_cast<const char*>(t.values().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
}

std::vector<std::pair<std::string, grad::Tensor>> get_arrays(std::istream& is) {
  const auto count = get<std::uint64_t>(is);
  std::vector<std::pair<std::string, grad::Tensor>> out;
  for (std::uint64_t k = 0; k < count; ++k) {
    std::string name = get_string(is);
    const auto rank = get<std::uint64_t>(is);
    if (rank == 0 || rank > 8) throw DataError("checkpoint array '" + name + "' has invalid rank");
    grad::Shape shape(rank);
    for (auto& e : shape) e = get<std::uint64_t>(is);
    std::vector<double> values(grad::shape_size(shape));
    is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!is) throw DataError("checkpoint truncated in array '" + name + "'");
    out.emplace_back(std::move(name), grad::Tensor::constant(std::move(shape), std::move(values)));
  }
  return out;
}

}  // namespace

void save_model(const ModelHandle& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kFormatVersion);
  put_string(os, to_string(model.arch()));
  put_string(os, hyper_to_json(model.hyper()).dump());
  put<std::uint64_t>(os, model.seed());
  put_arrays(os, model.params());
  put_arrays(os, model.buffers());
  if (!os) throw DataError("failed writing checkpoint " + path.string());
}

ModelHandle load_model(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw DataError(path.string() + " is not a checkpoint");
  const auto version = get<std::uint32_t>(is);
  if (version != kFormatVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  const Arch arch = parse_arch(get_string(is));
  Hyper hyper;
  try {
    hyper = hyper_from_json(nlohmann::json::parse(get_string(is)));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint hyper block malformed: ") + e.what());
  }
  const auto seed = get<std::uint64_t>(is);
  ModelHandle model(arch, hyper, seed);
  for (auto& [name, t] : get_arrays(is)) model.set_param(name, t);
  for (auto& [name, t] : get_arrays(is)) model.set_buffer(name, t);
  return model;
}

}  // namespace deepap::models
