#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "deepap/errors.h"
#include "deepap/grad/grad_check.h"
#include "deepap/grad/ops.h"

using namespace deepap;
using namespace deepap::grad;

namespace {

std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

Tensor random_param(Shape shape, std::mt19937_64& rng) {
  const auto n = shape_size(shape);
  return Tensor::parameter(std::move(shape), random_values(n, rng));
}

// Values bounded away from 0 so relu/abs-like kinks are never within reach of
// a finite-difference step.
Tensor kink_free_param(Shape shape, std::mt19937_64& rng) {
  auto v = random_values(shape_size(shape), rng, 0.1, 1.0);
  std::bernoulli_distribution flip(0.5);
  for (auto& x : v) {
    if (flip(rng)) x = -x;
  }
  return Tensor::parameter(std::move(shape), std::move(v));
}

void expect_values(const Tensor& t, const std::vector<double>& expected, double tol = 0.0) {
  ASSERT_EQ(t.size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(t.at(i), expected[i], tol) << "index " << i;
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  auto a = Tensor::constant({2, 2}, {1, 2, 3, 4});
  auto eye = Tensor::constant({2, 2}, {1, 0, 0, 1});
  expect_values(matmul(a, eye), {1, 2, 3, 4});
}

TEST(Matmul, HandComputedColumnProduct) {
  auto a = Tensor::constant({2, 2}, {1, 2, 3, 4});
  auto b = Tensor::constant({2, 1}, {5, 6});
  auto c = matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  expect_values(c, {17, 39});
}

TEST(Matmul, ZeroMatrixAnnihilates) {
  auto z = Tensor::zeros({3, 2});
  auto b = Tensor::constant({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  expect_values(matmul(z, b), std::vector<double>(12, 0.0));
}

TEST(Matmul, InnerMismatchThrows) {
  auto a = Tensor::zeros({2, 3});
  auto b = Tensor::zeros({2, 3});
  EXPECT_THROW(matmul(a, b), ShapeError);
}

TEST(Pointwise, ReluSoftmaxSigmoidTanhCenters) {
  expect_values(relu(Tensor::constant({3}, {-1, 0, 2})), {0, 0, 2});
  expect_values(softmax_last(Tensor::constant({2}, {0, 0})), {0.5, 0.5});
  EXPECT_EQ(sigmoid(Tensor::scalar(0.0)).item(), 0.5);
  EXPECT_EQ(grad::tanh(Tensor::scalar(0.0)).item(), 0.0);
}

TEST(Pointwise, BroadcastBiasAndErrors) {
  auto x = Tensor::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = Tensor::constant({3}, {10, 20, 30});
  expect_values(add(x, b), {11, 22, 33, 14, 25, 36});
  expect_values(mul(Tensor::scalar(2.0), x), {2, 4, 6, 8, 10, 12});
  EXPECT_THROW(add(x, Tensor::zeros({2})), ShapeError);
  EXPECT_THROW(add(x, Tensor::zeros({3, 2})), ShapeError);
}

TEST(Pointwise, ConcatAndSlice) {
  auto a = Tensor::constant({2, 1}, {1, 2});
  auto b = Tensor::constant({2, 2}, {3, 4, 5, 6});
  std::vector<Tensor> parts{a, b};
  auto c = concat_last(parts);
  expect_values(c, {1, 3, 4, 2, 5, 6});
  expect_values(slice_last(c, 1, 3), {3, 4, 5, 6});
  EXPECT_THROW(slice_last(c, 2, 4), ShapeError);
}

TEST(Pointwise, NonFiniteResultNamesOperation) {
  auto big = Tensor::constant({1}, {1e300});
  try {
    mul(big, big);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("mul"), std::string::npos);
  }
}

TEST(Softmax, RowsAreDistributions) {
  std::mt19937_64 rng(7);
  auto x = Tensor::constant({16, 9}, random_values(144, rng, -30.0, 30.0));
  auto y = softmax_last(x);
  for (std::size_t r = 0; r < 16; ++r) {
    double total = 0.0;
    for (std::size_t j = 0; j < 9; ++j) {
      EXPECT_GE(y.at(r * 9 + j), 0.0);
      total += y.at(r * 9 + j);
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Backward, SumGivesOnes) {
  auto x = Tensor::parameter({2, 3}, {1, -2, 3, 4, 5, 6});
  auto g = backward(sum(x)).of(x);
  EXPECT_EQ(g, std::vector<double>(6, 1.0));
}

TEST(Backward, DotWithItselfGivesTwoX) {
  auto x = Tensor::parameter({2}, {1, 2});
  auto g = backward(sum(mul(x, x))).of(x);
  EXPECT_EQ(g, (std::vector<double>{2, 4}));
}

TEST(Backward, NonScalarRootThrows) {
  auto x = Tensor::parameter({2}, {1, 2});
  EXPECT_THROW(backward(scale(x, 2.0)), ShapeError);
}

TEST(Backward, IndependentLeafGetsExactZero) {
  auto x = Tensor::parameter({3}, {1, 2, 3});
  auto unused = Tensor::parameter({2}, {4, 5});
  auto grads = backward(sum(square(x)));
  EXPECT_FALSE(grads.contains(unused));
  EXPECT_EQ(grads.of(unused), (std::vector<double>{0.0, 0.0}));
}

TEST(Backward, LeafUsedTwiceAccumulatesBothPaths) {
  std::mt19937_64 rng(3);
  auto w = random_param({3, 3}, rng);
  auto x = Tensor::constant({2, 3}, random_values(6, rng));
  // root = sum(tanh(x W) * sigmoid(x W)) with W appearing on two paths.
  auto root = sum(mul(grad::tanh(matmul(x, w)), sigmoid(matmul(x, w))));
  auto shared = backward(root).of(w);

  // Oracle: two independent copies of W, one per path; gradients add.
  auto w1 = w.clone();
  auto w2 = w.clone();
  auto split = sum(mul(grad::tanh(matmul(x, w1)), sigmoid(matmul(x, w2))));
  auto grads = backward(split);
  auto g1 = grads.of(w1), g2 = grads.of(w2);
  for (std::size_t i = 0; i < shared.size(); ++i) EXPECT_NEAR(shared[i], g1[i] + g2[i], 1e-14);
}

TEST(Backward, RandomThreeLayerCompositeMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  auto x = Tensor::constant({4, 5}, random_values(20, rng));
  auto w1 = random_param({5, 6}, rng);
  auto w2 = random_param({6, 4}, rng);
  auto w3 = random_param({4, 1}, rng);
  auto f = [&]() { return sum(square(matmul(sigmoid(matmul(grad::tanh(matmul(x, w1)), w2)), w3))); };
  auto grads = backward(f());
  const double eps = 1e-5;
  double worst = 0.0;
  for (Tensor* w : {&w1, &w2, &w3}) {
    auto analytic = grads.of(*w);
    auto v = w->mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double saved = v[i];
      v[i] = saved + eps;
      const double up = f().item();
      v[i] = saved - eps;
      const double down = f().item();
      v[i] = saved;
      const double fd = (up - down) / (2 * eps);
      worst = std::max(worst, std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(GradCheck, LinearFunctionIsExact) {
  std::mt19937_64 rng(5);
  auto a = Tensor::constant({3, 1}, random_values(3, rng));
  auto x = random_param({2, 3}, rng);
  auto r = grad_check([&](const Tensor& p) { return sum(matmul(p, a)); }, x);
  EXPECT_LT(r.max_relative_error, 1e-8);
  EXPECT_EQ(r.coordinates, 6u);
}

TEST(GradCheck, MlpForwardWithMse) {
  std::mt19937_64 rng(13);
  auto x = Tensor::constant({8, 4}, random_values(32, rng));
  auto y = Tensor::constant({8, 1}, random_values(8, rng));
  std::vector<Tensor> params{random_param({4, 6}, rng), random_param({6}, rng), random_param({6, 1}, rng),
                             random_param({1}, rng)};
  auto f = [&](std::span<const Tensor> p) {
    auto h = relu(add(matmul(x, p[0]), p[1]));
    return mean(square(sub(add(matmul(h, p[2]), p[3]), y)));
  };
  auto r = grad_check(f, params);
  ASSERT_GT(r.kink_distance, 1e-3);
  EXPECT_LT(r.max_relative_error, 1e-4);
}

TEST(GradCheck, LstmSingleStepWithMse) {
  std::mt19937_64 rng(17);
  const std::size_t batch = 3, in = 2, hid = 3;
  auto x = Tensor::constant({batch, in}, random_values(batch * in, rng));
  auto h0 = Tensor::constant({batch, hid}, random_values(batch * hid, rng));
  auto c0 = Tensor::constant({batch, hid}, random_values(batch * hid, rng));
  auto y = Tensor::constant({batch, 1}, random_values(batch, rng));
  std::vector<Tensor> params{random_param({in, 3 * hid}, rng), random_param({hid, 3 * hid}, rng),
                             random_param({3 * hid}, rng),     random_param({in, hid}, rng),
                             random_param({hid, hid}, rng),    random_param({hid, 1}, rng)};
  auto f = [&](std::span<const Tensor> p) {
    auto gates = sigmoid(add(add(matmul(x, p[0]), matmul(h0, p[1])), p[2]));
    auto update = slice_last(gates, 0, hid);
    auto forget = slice_last(gates, hid, 2 * hid);
    auto output = slice_last(gates, 2 * hid, 3 * hid);
    auto cand = grad::tanh(add(matmul(x, p[3]), matmul(h0, p[4])));
    auto c = add(mul(update, cand), mul(forget, c0));
    auto h = mul(output, c);
    return mean(square(sub(matmul(h, p[5]), y)));
  };
  EXPECT_LT(grad_check(f, params).max_relative_error, 1e-4);
}

// Every primitive against central differences at random non-kink points.
TEST(GradCheck, EveryPrimitive) {
  std::mt19937_64 rng(23);
  const double tol = 1e-4;
  auto w = Tensor::constant({4, 3}, random_values(12, rng));
  auto weights = Tensor::constant({2, 3, 4}, random_values(24, rng));
  auto check1 = [&](const char* name, Shape shape, std::function<Tensor(const Tensor&)> op) {
    auto p = kink_free_param(shape, rng);
    // Contract with fixed random weights so each output entry has a distinct
    // sensitivity.
    auto f = [&](const Tensor& t) {
      auto out = op(t);
      std::mt19937_64 coeff_rng(99);
      auto coeff = Tensor::constant(out.shape(), random_values(out.size(), coeff_rng));
      return sum(mul(out, coeff));
    };
    EXPECT_LT(grad_check(f, p).max_relative_error, tol) << name;
  };
  check1("relu", {3, 4}, [](const Tensor& t) { return relu(t); });
  check1("tanh", {3, 4}, [](const Tensor& t) { return grad::tanh(t); });
  check1("sigmoid", {3, 4}, [](const Tensor& t) { return sigmoid(t); });
  check1("square", {3, 4}, [](const Tensor& t) { return square(t); });
  check1("scale", {3, 4}, [](const Tensor& t) { return scale(t, -1.5); });
  check1("add_scalar", {3, 4}, [](const Tensor& t) { return add_scalar(t, 0.3); });
  check1("one_minus", {3, 4}, [](const Tensor& t) { return one_minus(t); });
  check1("softmax", {3, 4}, [](const Tensor& t) { return softmax_last(t); });
  check1("mean", {3, 4}, [](const Tensor& t) { return mean(t); });
  check1("matmul_left", {3, 4}, [&](const Tensor& t) { return matmul(t, w); });
  check1("matmul_right", {5, 4}, [&](const Tensor& t) { return matmul(transpose_last2(t), grad::tanh(t)); });
  check1("transpose3", {2, 3, 4}, [](const Tensor& t) { return transpose_last2(t); });
  check1("bmm", {2, 4, 3}, [&](const Tensor& t) { return bmm(t, weights); });
  check1("bmm_self", {2, 3, 3}, [](const Tensor& t) { return bmm(t, transpose_last2(t)); });
  check1("reshape", {3, 4}, [](const Tensor& t) { return reshape(t, {2, 6}); });
  check1("slice", {3, 4}, [](const Tensor& t) { return slice_last(t, 1, 3); });
  check1("concat", {3, 4}, [](const Tensor& t) {
    std::vector<Tensor> parts{t, square(t)};
    return concat_last(parts);
  });
  check1("stack", {3, 4}, [](const Tensor& t) {
    std::vector<Tensor> parts{t, grad::tanh(t), t};
    return stack_steps(parts);
  });
  check1("select_step", {2, 3, 4}, [](const Tensor& t) { return select_step(t, 1); });
  check1("layer_norm", {3, 4}, [](const Tensor& t) { return layer_norm(t); });
  check1("batch_norm", {5, 3}, [](const Tensor& t) { return batch_norm(t, 1e-5, nullptr, nullptr); });
  check1("add_bcast", {3, 4}, [](const Tensor& t) { return add(t, reshape(slice_last(reshape(t, {12}), 0, 4), {4})); });
  check1("mul_bcast", {2, 4}, [](const Tensor& t) {
    return mul(t, reshape(slice_last(reshape(t, {8}), 0, 4), {4}));
  });
  check1("avg_pool", {1, 2, 4, 4}, [](const Tensor& t) { return avg_pool2d(t, 2, 2); });
  check1("max_pool", {1, 2, 4, 4}, [](const Tensor& t) { return max_pool2d(t, 2, 2); });
  check1("conv_input", {2, 2, 5, 4}, [&](const Tensor& t) {
    std::mt19937_64 local(1);
    auto k = Tensor::constant({3, 2, 3, 3}, random_values(54, local));
    auto b = Tensor::constant({3}, random_values(3, local));
    return conv2d(t, k, b, 1);
  });
  check1("conv_kernel", {3, 2, 2, 3}, [&](const Tensor& k) {
    std::mt19937_64 local(2);
    auto in = Tensor::constant({2, 2, 4, 5}, random_values(80, local));
    auto b = Tensor::constant({3}, random_values(3, local));
    return conv2d(in, k, b, 0);
  });
  check1("conv_bias", {3}, [&](const Tensor& b) {
    std::mt19937_64 local(3);
    auto in = Tensor::constant({2, 1, 3, 3}, random_values(18, local));
    auto k = Tensor::constant({3, 1, 2, 2}, random_values(12, local));
    return conv2d(in, k, b, 0);
  });
}

TEST(Conv, IdentityKernelAndHandCase) {
  auto in = Tensor::constant({1, 1, 2, 3}, {1, 2, 3, 4, 5, 6});
  auto one = Tensor::constant({1, 1, 1, 1}, {1});
  auto zero_bias = Tensor::constant({1}, {0});
  expect_values(conv2d(in, one, zero_bias), {1, 2, 3, 4, 5, 6});

  auto row = Tensor::constant({1, 1, 1, 4}, {1, 3, 2, 5});
  auto pair = Tensor::constant({1, 1, 1, 2}, {1, 1});
  expect_values(conv2d(row, pair, zero_bias), {4, 5, 7});
  // Pool over a 4x2 image whose second column duplicates the first.
  auto dup = Tensor::constant({1, 1, 2, 4}, {1, 3, 2, 5, 1, 3, 2, 5});
  expect_values(max_pool2d(dup, 2, 2), {3, 5});
  EXPECT_THROW(conv2d(row, Tensor::constant({1, 1, 2, 2}, {1, 1, 1, 1}), zero_bias), ShapeError);
}

TEST(Conv, NonFlippedCrossCorrelation) {
  auto row = Tensor::constant({1, 1, 1, 3}, {1, 2, 3});
  auto k = Tensor::constant({1, 1, 1, 2}, {1, 0});
  // Cross-correlation picks the left element of each pair; a flipped
  // convolution would pick the right.
  expect_values(conv2d(row, k, Tensor::constant({1}, {0})), {1, 2});
}

TEST(LayerNorm, TwoPointStandardization) {
  auto y = layer_norm(Tensor::constant({1, 2}, {1, 3}), 0.0);
  expect_values(y, {-1, 1}, 1e-15);
  EXPECT_THROW(layer_norm(Tensor::constant({2, 1}, {1, 2})), ShapeError);
}

TEST(Tensor, ShapeValidation) {
  EXPECT_THROW(Tensor::constant({2, 2}, {1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor::zeros({0, 2}), ShapeError);
  EXPECT_THROW(Tensor::constant({1}, {std::nan("")}), NumericError);
}
