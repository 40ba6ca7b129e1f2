#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "tfgrasp/adamw.hpp"
#include "tfgrasp/errors.hpp"
#include "tfgrasp/ops.hpp"
#include "tfgrasp/random.hpp"
#include "tfgrasp/verify/oracles.hpp"

namespace tfgrasp {
namespace {

using T = Tensor<float>;
using D = Tensor<double>;

template <typename S>
std::vector<S> values(const Tensor<S>& t) {
  return {t.data().begin(), t.data().end()};
}

template <typename S>
std::vector<S> grads(const Tensor<S>& t) {
  return {t.grad().begin(), t.grad().end()};
}

D random_double(Shape shape, std::uint64_t seed, bool grad = true) {
  Rng rng(seed);
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(-1, 1);
  return D(std::move(shape), std::move(v), grad);
}

TEST(Tensor, ShapeMustMatchValues) {
  EXPECT_THROW(T({2, 3}, std::vector<float>(5)), ShapeError);
  EXPECT_THROW(T::zeros({2, 0}), ShapeError);
  const T t({2, 3}, {0, 1, 2, 3, 4, 5});
  EXPECT_EQ(t.numel(), 6);
  EXPECT_EQ(t.dim(-1), 3);
  EXPECT_THROW(t.dim(2), ShapeError);
}

TEST(Tensor, ReshapeIsRowMajorView) {
  const T t({6}, {0, 1, 2, 3, 4, 5});
  const T r = t.reshape({2, 3});
  EXPECT_EQ(r.data()[1 * 3 + 2], 5.0f);
  EXPECT_EQ(r.storage_id(), t.storage_id());
  EXPECT_THROW(t.reshape({4, 2}), ShapeError);
}

TEST(Tensor, GradBufferMatchesDataLength) {
  const T t({4}, {1, 2, 3, 4}, true);
  EXPECT_FALSE(t.has_grad());
  EXPECT_EQ(t.grad_mut().size(), 4u);
}

TEST(Tape, SquareGradient) {
  T x({1}, {3}, true);
  Tape<float> tape;
  TapeScope<float> scope(tape);
  const T y = mul(x, x);
  tape.backward(y);
  EXPECT_FLOAT_EQ(x.grad()[0], 6.0f);
}

TEST(Tape, RepeatedBackwardAccumulates) {
  T x({1}, {3}, true);
  Tape<float> tape;
  TapeScope<float> scope(tape);
  const T y = mul(x, x);
  tape.backward(y);
  tape.backward(y);
  EXPECT_FLOAT_EQ(x.grad()[0], 12.0f);
}

TEST(Tape, NonScalarLossIsContractError) {
  T x({2}, {1, 2}, true);
  Tape<float> tape;
  TapeScope<float> scope(tape);
  const T y = scale(x, 2.0f);
  EXPECT_THROW(tape.backward(y), ContractError);
}

TEST(Tape, NoGradScopeRecordsNothing) {
  T x({2}, {1, 2}, true);
  Tape<float> tape;
  TapeScope<float> scope(tape);
  {
    NoGradScope<float> off;
    (void)scale(x, 2.0f);
  }
  EXPECT_EQ(tape.size(), 0u);
  (void)scale(x, 2.0f);
  EXPECT_EQ(tape.size(), 1u);
}

TEST(Tape, BackwardIsLinearInTheLoss) {
  const D a = random_double({3, 4}, 1);
  const D w = random_double({4, 2}, 2);
  auto run = [&](int which) {
    a.drop_grad();
    w.drop_grad();
    Tape<double> tape;
    TapeScope<double> scope(tape);
    const D y = matmul(a, w);
    const D l1 = sum(mul(y, y));
    const D l2 = mean(gelu(y));
    const D loss = which == 0 ? add(l1, l2) : (which == 1 ? l1 : l2);
    tape.backward(loss);
    return std::make_pair(grads(a), grads(w));
  };
  const auto both = run(0);
  const auto first = run(1);
  const auto second = run(2);
  for (std::size_t i = 0; i < both.first.size(); ++i) {
    EXPECT_NEAR(both.first[i], first.first[i] + second.first[i], 1e-14);
  }
  for (std::size_t i = 0; i < both.second.size(); ++i) {
    EXPECT_NEAR(both.second[i], first.second[i] + second.second[i], 1e-14);
  }
}

TEST(Matmul, IdentityAndHandArithmetic) {
  const T a({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(values(matmul(a, T({2, 2}, {1, 0, 0, 1}))), (std::vector<float>{1, 2, 3, 4}));
  EXPECT_EQ(values(matmul(a, T({2, 2}, {5, 6, 7, 8}))), (std::vector<float>{19, 22, 43, 50}));
}

TEST(Matmul, GradientOfSum) {
  T a({2, 2}, {1, 1, 1, 1}, true);
  const T b({2, 2}, {2, 0, 0, 2});
  Tape<float> tape;
  TapeScope<float> scope(tape);
  tape.backward(sum(matmul(a, b)));
  EXPECT_EQ(grads(a), (std::vector<float>{2, 2, 2, 2}));
}

TEST(Matmul, MismatchNamesBothShapes) {
  try {
    matmul(T::zeros({2, 3}), T::zeros({4, 2}));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("[2, 3]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[4, 2]"), std::string::npos);
  }
}

TEST(Softmax, Examples) {
  EXPECT_EQ(values(softmax(T({2}, {0, 0}), -1)), (std::vector<float>{0.5f, 0.5f}));
  const auto v = values(softmax(T({2}, {0, std::log(3.0f)}), -1));
  EXPECT_NEAR(v[0], 0.25f, 1e-6);
  EXPECT_NEAR(v[1], 0.75f, 1e-6);
  const auto m = values(softmax(T({2}, {0, -1e9f}), -1));
  EXPECT_FLOAT_EQ(m[0], 1.0f);
  EXPECT_LT(m[1], 1e-7f);
  EXPECT_THROW(softmax(T({2}, {0, NAN}), -1), NumericError);
}

TEST(Softmax, RowsSumToOne) {
  const D x = random_double({5, 7}, 3);
  const T xf = x.cast<float>();
  const auto s = values(softmax(scale(xf, 20.0f), -1));
  for (int r = 0; r < 5; ++r) {
    float total = 0;
    for (int c = 0; c < 7; ++c) {
      const float v = s[r * 7 + c];
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
      total += v;
    }
    EXPECT_NEAR(total, 1.0f, 1e-6);
  }
}

TEST(LayerNorm, Examples) {
  const T ones = T::full({2}, 1), zeros = T::zeros({2});
  for (float v : values(layer_norm(T({3, 2}, {4, 4, 4, 4, 4, 4}).reshape({3, 2}), ones, zeros))) EXPECT_EQ(v, 0.0f);
  const auto n = values(layer_norm(T({2}, {1, 3}), ones, zeros, 1e-12));
  EXPECT_NEAR(n[0], -1.0f, 1e-6);
  EXPECT_NEAR(n[1], 1.0f, 1e-6);
  for (float v : values(layer_norm(T({2}, {1, 3}), zeros, T::full({2}, 5)))) EXPECT_EQ(v, 5.0f);
  EXPECT_THROW(layer_norm(T({2}, {1, 3}), ones, zeros, 0.0), ParameterError);
}

TEST(Elementwise, Examples) {
  EXPECT_EQ(gelu(T({1}, {0})).item(), 0.0f);
  EXPECT_NEAR(gelu(T({1}, {1})).item(), 0.84134f, 1e-4);
  const T x({3}, {1, -2, 3});
  EXPECT_EQ(values(add(x, T::zeros({3}))), values(x));
  EXPECT_THROW(add(x, T::zeros({2})), ShapeError);
  EXPECT_EQ(values(add(x, T::scalar(1))), (std::vector<float>{2, -1, 4}));
}

TEST(StridedConv, ShapeAndZeroInput) {
  const T k = T::full({2, 1, 4, 4}, 0.5f);
  const T out = strided_conv2d(T::zeros({1, 8, 8}), k, T(), 4);
  EXPECT_EQ(out.shape(), (Shape{2, 2, 2}));
  for (float v : values(out)) EXPECT_EQ(v, 0.0f);
  EXPECT_THROW(strided_conv2d(T::zeros({1, 9, 8}), k, T(), 4), ShapeError);
}

TEST(StridedConv, OneHotKernelSamplesPatchCorners) {
  std::vector<float> img(64);
  for (int i = 0; i < 64; ++i) img[i] = static_cast<float>(i);
  std::vector<float> kv(16, 0.0f);
  kv[0] = 1.0f;
  const T out = strided_conv2d(T({1, 8, 8}, img), T({1, 1, 4, 4}, kv), T(), 4);
  EXPECT_EQ(values(out), (std::vector<float>{0, 4, 32, 36}));
}

TEST(Layout, PermuteInverseAndConcat) {
  const D x = random_double({2, 3, 4}, 4, false);
  const D p = permute(x, {2, 0, 1});
  EXPECT_EQ(p.shape(), (Shape{4, 2, 3}));
  EXPECT_EQ(values(permute(p, {1, 2, 0})), values(x));
  auto sorted = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v;
  };
  EXPECT_EQ(sorted(values(p)), sorted(values(x)));
  const D parts[] = {D::zeros({2, 3}), D::full({2, 5}, 1)};
  const D c = concat<double>(parts, 1);
  EXPECT_EQ(c.shape(), (Shape{2, 8}));
  EXPECT_EQ(c.data()[3], 1.0);
  EXPECT_EQ(c.data()[8 + 2], 0.0);
  EXPECT_THROW(permute(x, {0, 0, 1}), ShapeError);
}

TEST(MseLoss, Examples) {
  EXPECT_EQ(mse_loss(T({2}, {1, 2}), T({2}, {1, 2})).item(), 0.0f);
  EXPECT_FLOAT_EQ(mse_loss(T({2}, {1, 2}), T::zeros({2})).item(), 2.5f);
  T p({1}, {1}, true);
  Tape<float> tape;
  TapeScope<float> scope(tape);
  tape.backward(mse_loss(p, T::zeros({1})));
  EXPECT_FLOAT_EQ(p.grad()[0], 2.0f);
  EXPECT_THROW(mse_loss(T::zeros({2}), T::zeros({3})), ShapeError);
}

// mse(softmax(W x), t) in float32 against central differences of the
// float64 shadow.
TEST(Gradcheck, FloatCompositeAgainstDoubleShadow) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const D w = random_double({4, 3}, seed);
    const D x = random_double({2, 4}, seed + 100, false);
    const D t = random_double({2, 3}, seed + 200, false);
    T wf = w.cast<float>();
    wf.set_requires_grad(true);
    {
      Tape<float> tape;
      TapeScope<float> scope(tape);
      tape.backward(mse_loss(softmax(matmul(x.cast<float>(), wf), -1), t.cast<float>()));
    }
    auto f = [&](const D& wd) {
      NoGradScope<double> off;
      return mse_loss(softmax(matmul(x, wd), -1), t).item();
    };
    D probe = w.detach();
    for (Index i = 0; i < w.numel(); ++i) {
      const double keep = probe.data()[i];
      probe.mutable_data()[i] = keep + 1e-6;
      const double up = f(probe);
      probe.mutable_data()[i] = keep - 1e-6;
      const double down = f(probe);
      probe.mutable_data()[i] = keep;
      EXPECT_LT(verify::gradient_error(wf.grad()[i], (up - down) / 2e-6, 1e-6), 1e-3) << "seed " << seed;
    }
  }
}

TEST(AdamW, FirstStepFromZero) {
  std::vector<float> p{0}, g{1}, m{0}, v{0};
  AdamWOptions o;
  o.weight_decay = 0;
  adamw_update<float>(p, g, m, v, 1, o);
  EXPECT_NEAR(p[0], -1e-3f, 1e-7);
}

TEST(AdamW, ZeroGradientWithoutDecayKeepsParameters) {
  std::vector<float> p{0.3f, -2.0f}, g{0, 0}, m{0, 0}, v{0, 0};
  AdamWOptions o;
  o.weight_decay = 0;
  for (long step = 1; step <= 5; ++step) adamw_update<float>(p, g, m, v, step, o);
  EXPECT_EQ(p, (std::vector<float>{0.3f, -2.0f}));
}

TEST(AdamW, DecoupledDecayIsExact) {
  std::vector<double> p{1}, g{0}, m{0}, v{0};
  AdamWOptions o;
  o.learning_rate = 1e-3;
  o.weight_decay = 1e-2;
  adamw_update<double>(p, g, m, v, 1, o);
  EXPECT_DOUBLE_EQ(p[0], 1.0 - 1e-3 * 1e-2);
}

TEST(AdamW, LengthMismatchIsParameterError) {
  std::vector<float> p{0, 0}, g{1}, m{0, 0}, v{0, 0};
  EXPECT_THROW(adamw_update<float>(p, g, m, v, 1, AdamWOptions{}), ParameterError);
}

TEST(AdamW, StepCounterAdvances) {
  std::vector<T> params{T({2}, {1, 2}, true)};
  auto state = make_adamw_state<float>(params, AdamWOptions{});
  params[0].grad_mut()[0] = 1;
  adamw_step<float>(params, state);
  adamw_step<float>(params, state);
  EXPECT_EQ(state.step, 2);
  EXPECT_EQ(state.m[0].size(), 2u);
}

}  // namespace
}  // namespace tfgrasp
