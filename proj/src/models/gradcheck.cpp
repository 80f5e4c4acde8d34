#include "deepap/models/gradcheck.h"

#include "deepap/grad/grad_check.h"
#include "deepap/grad/ops.h"
#include "deepap/models/zoo.h"
#include "deepap/rng.h"

namespace deepap::models {

Hyper gradcheck_hyper(Arch arch, std::size_t input_width, std::size_t seq_len) {
  Hyper h = default_hyper(arch, input_width, seq_len);
  h.hidden = {5, 4};
  h.residual_width = 4;
  h.state_size = 3;
  h.channels = arch == Arch::CNN_Residual ? std::vector<std::size_t>{2} : std::vector<std::size_t>{2, 3};
  h.model_width = 4;
  h.heads = 2;
  h.layers = 1;
  h.ff_width = 6;
  return h;
}

namespace {

grad::Tensor normal_tensor(grad::Shape shape, Rng& rng) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = 0.5 * standard_normal(rng);
  return grad::Tensor::constant(std::move(shape), std::move(v));
}

}  // namespace

ModelGradCheck check_model_gradients(Arch arch, std::uint64_t seed, double eps, double min_kink) {
  constexpr std::size_t P = 4, L = 4, B = 3, kMaxDraws = 20;
  ModelGradCheck out;
  out.arch = arch;
  out.seed = seed;
  auto model = init_model(arch, gradcheck_hyper(arch, P, L), derive_seed(seed, 0));
  if (arch == Arch::OLS) {
    // OLS starts at zero; move off that point so the check is not trivial.
    Rng rng(derive_seed(seed, 1));
    for (const auto& [name, t] : model.params()) model.set_param(name, normal_tensor(t.shape(), rng));
  }
  std::vector<std::string> names;
  for (const auto& [name, _] : model.params()) names.push_back(name);

  for (std::size_t draw = 0; draw < kMaxDraws; ++draw) {
    Rng rng(derive_seed(seed, 100 + draw));
    const auto x = is_sequence_arch(arch) ? normal_tensor({B, L, P}, rng) : normal_tensor({B, P}, rng);
    const auto y = normal_tensor({B, 1}, rng);
    auto leaves = model.trainable();
    auto f = [&](std::span<const grad::Tensor> ps) {
      ModelHandle view = model;
      for (std::size_t i = 0; i < names.size(); ++i) view.mutable_param(names[i]) = ps[i];
      return grad::mean(grad::square(grad::sub(forward(view, x), y)));
    };
    const auto r = grad::grad_check(f, leaves, eps);
    out.max_relative_error = r.max_relative_error;
    out.kink_distance = r.kink_distance;
    out.coordinates = r.coordinates;
    out.draws = draw + 1;
    if (r.kink_distance >= min_kink) break;
  }
  return out;
}

}  // namespace deepap::models
