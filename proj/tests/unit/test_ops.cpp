#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "kmbart/ops.hpp"
#include "kmbart/rng.hpp"

namespace kmbart {
namespace {

using T = Tensor<double>;

T random_tensor(Shape shape, std::uint64_t seed, bool grad = true) {
  Rng rng(seed);
  auto t = T::zeros(std::move(shape), grad);
  for (Index i = 0; i < t.numel(); ++i) t.data()[i] = rng.normal();
  return t;
}

// Central differences with step 1e-3 against the tape gradient, per input,
// relative to the larger gradient norm.
void expect_gradients(std::vector<T> inputs, const std::function<T(Tape<double>&)>& f) {
  for (auto& x : inputs) x.clear_grad();
  {
    Tape<double> tape;
    tape.backward(f(tape));
  }
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& x = inputs[k];
    Eigen::ArrayXd numeric(x.numel());
    for (Index i = 0; i < x.numel(); ++i) {
      const double saved = x.data()[i];
      Tape<double> t1(false), t2(false);
      x.data()[i] = saved + 1e-3;
      const double up = f(t1).item();
      x.data()[i] = saved - 1e-3;
      const double down = f(t2).item();
      x.data()[i] = saved;
      numeric[i] = (up - down) / 2e-3;
    }
    const Eigen::ArrayXd analytic = x.has_grad() ? Eigen::ArrayXd(x.grad()) : Eigen::ArrayXd::Zero(x.numel());
    const double scale = std::max(analytic.matrix().norm(), numeric.matrix().norm());
    EXPECT_LE((analytic - numeric).matrix().norm(), 1e-3 * scale + 1e-9) << "input " << k;
  }
}

// Weighted sum so every output element gets a distinct upstream gradient.
T weighted(Tape<double>& tape, const T& y) {
  auto w = T::zeros(y.shape());
  for (Index i = 0; i < w.numel(); ++i) w.data()[i] = 0.3 + 0.17 * static_cast<double>(i % 7) - 0.05 * static_cast<double>(i);
  return sum(tape, mul(tape, y, w));
}

TEST(Matmul, IdentityAndHandArithmetic) {
  Tape<double> tape;
  auto eye = T::from_values({2, 2}, {1, 0, 0, 1});
  auto m = T::from_values({2, 2}, {1, 2, 3, 4});
  EXPECT_TRUE((matmul(tape, eye, m).data() == m.data()).all());
  auto r = matmul(tape, T::from_values({1, 2}, {1, 2}), T::from_values({2, 1}, {3, 4}));
  EXPECT_EQ(r.shape(), (Shape{1, 1}));
  EXPECT_EQ(r.item(), 11.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tape<double> tape;
  try {
    matmul(tape, T::zeros({2, 3}), T::zeros({2, 3}));
    FAIL();
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3] x [2x3]"), std::string::npos) << msg;
  }
}

TEST(Softmax, UniformStableAndClosedForm) {
  Tape<double> tape;
  auto u = softmax(tape, T::zeros({1, 4}));
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(u.data()[i], 0.25);
  auto big = softmax(tape, T::from_values({1, 2}, {1000, 0}));
  EXPECT_TRUE(std::isfinite(big.data()[0]));
  EXPECT_NEAR(big.data()[0], 1.0, 1e-30);
  EXPECT_NEAR(big.data()[1], 0.0, 1e-30);
  auto l2 = softmax(tape, T::from_values({1, 2}, {std::log(2.0), 0}));
  EXPECT_NEAR(l2.data()[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(l2.data()[1], 1.0 / 3.0, 1e-15);
}

TEST(Softmax, RowsSumToOne) {
  Tape<float> tape;
  Rng rng(3);
  auto x = Tensor<float>::zeros({50, 13});
  for (Index i = 0; i < x.numel(); ++i) x.data()[i] = static_cast<float>(rng.normal() * 20.0);
  auto y = softmax(tape, x);
  for (Index r = 0; r < 50; ++r) EXPECT_NEAR(y.matrix().row(r).sum(), 1.0F, 1e-5F);
}

TEST(CrossEntropy, UniformOneHotAndScalarOracle) {
  Tape<double> tape;
  const std::vector<int> targets = {0, 3, 2};
  EXPECT_NEAR(cross_entropy(tape, T::zeros({3, 4}), targets, -1).item(), std::log(4.0), 1e-15);
  auto sharp = T::filled({2, 4}, -1e4);
  sharp.data()[1] = 0;
  sharp.data()[4 + 2] = 0;
  EXPECT_NEAR(cross_entropy(tape, sharp, std::vector<int>{1, 2}, -1).item(), 0.0, 1e-12);

  auto logits = random_tensor({3, 5}, 11, false);
  const std::vector<int> t = {4, 0, 2};
  double expected = 0.0;
  for (int r = 0; r < 3; ++r) {
    double z = 0.0;
    for (int c = 0; c < 5; ++c) z += std::exp(logits.data()[r * 5 + c]);
    expected += -(logits.data()[r * 5 + t[r]] - std::log(z));
  }
  EXPECT_NEAR(cross_entropy(tape, logits, t, -1).item(), expected / 3.0, 1e-12);
}

TEST(CrossEntropy, IgnoredPositionsAndEmptyLoss) {
  Tape<double> tape;
  auto logits = random_tensor({3, 5}, 12, false);
  const auto all = cross_entropy(tape, slice_rows(tape, logits, 1, 1), std::vector<int>{2}, -1).item();
  EXPECT_NEAR(cross_entropy(tape, logits, std::vector<int>{-1, 2, -1}, -1).item(), all, 1e-14);
  EXPECT_THROW(cross_entropy(tape, logits, std::vector<int>{-1, -1, -1}, -1), EmptyLossError);
  try {
    cross_entropy(tape, logits, std::vector<int>{-1, -1, -1}, -1);
  } catch (const EmptyLossError& e) {
    EXPECT_NE(std::string(e.what()).find("empty loss"), std::string::npos);
  }
}

TEST(CrossEntropy, NonNegative) {
  Tape<double> tape;
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto logits = random_tensor({4, 6}, s, false);
    EXPECT_GE(cross_entropy(tape, logits, std::vector<int>{0, 1, 2, 5}, -1).item(), 0.0);
  }
}

TEST(KlDivergence, ClosedFormsAndScalarOracle) {
  Tape<double> tape;
  auto p = T::from_values({1, 2}, {1, 0});
  auto log_q = T::from_values({1, 2}, {std::log(0.5), std::log(0.5)});
  EXPECT_NEAR(kl_divergence(tape, p, log_q).item(), std::log(2.0), 1e-15);

  auto same = log_softmax(tape, random_tensor({3, 4}, 5, false));
  auto same_p = T(same.shape(), same.data().exp());
  EXPECT_NEAR(kl_divergence(tape, same_p, same).item(), 0.0, 1e-12);

  auto pp = softmax(tape, random_tensor({3, 4}, 6, false));
  auto lq = log_softmax(tape, random_tensor({3, 4}, 7, false));
  double expected = 0.0;
  for (Index i = 0; i < 12; ++i) expected += pp.data()[i] * (std::log(pp.data()[i]) - lq.data()[i]);
  EXPECT_NEAR(kl_divergence(tape, pp, lq).item(), expected / 3.0, 1e-12);
  EXPECT_GE(kl_divergence(tape, pp, lq).item(), 0.0);
}

TEST(KlDivergence, RejectsUnnormalizedRows) {
  Tape<double> tape;
  auto p = T::from_values({1, 2}, {0.5, 0.3});
  EXPECT_THROW(kl_divergence(tape, p, T::zeros({1, 2})), ValidationError);
}

TEST(Elementwise, LayerNormGeluDropoutTrivia) {
  Tape<double> tape;
  auto constant = layer_norm(tape, T::filled({2, 5}, 3.0));
  EXPECT_TRUE((constant.data() == 0.0).all());
  EXPECT_EQ(gelu(tape, T::zeros({1})).item(), 0.0);
  auto x = random_tensor({2, 3}, 1);
  Rng rng(1);
  auto y = dropout(tape, x, 0.0, &rng, true);
  EXPECT_EQ(y.id(), x.id());
  EXPECT_EQ(dropout(tape, x, 0.5, &rng, false).id(), x.id());
}

TEST(Elementwise, DropoutKeepsExpectation) {
  Tape<double> tape;
  Rng rng(9);
  auto ones = T::filled({1, 20000}, 1.0);
  auto y = dropout(tape, ones, 0.3, &rng, true);
  EXPECT_NEAR(y.data().mean(), 1.0, 0.03);
  EXPECT_TRUE(((y.data() == 0.0) || (y.data() - 1.0 / 0.7).abs() < 1e-12).all());
}

TEST(Shapes, MismatchesRaiseDimensionError) {
  Tape<double> tape;
  EXPECT_THROW(add(tape, T::zeros({2, 3}), T::zeros({3, 2})), DimensionError);
  EXPECT_THROW(add_bias(tape, T::zeros({2, 3}), T::zeros({2})), DimensionError);
  EXPECT_THROW(layer_norm(tape, T::zeros({2, 3}), T::zeros({2}), T::zeros({3})), DimensionError);
  EXPECT_THROW(slice_rows(tape, T::zeros({2, 3}), 1, 2), DimensionError);
  EXPECT_THROW(gather_rows(tape, T::zeros({2, 3}), std::vector<int>{2}), RangeError);
}

TEST(Gradients, MatmulTransposeAddBias) {
  auto a = random_tensor({3, 4}, 1), b = random_tensor({4, 2}, 2), bias = random_tensor({2}, 3);
  expect_gradients({a, b, bias}, [&](Tape<double>& t) {
    return weighted(t, add_bias(t, transpose(t, transpose(t, matmul(t, a, b))), bias));
  });
}

TEST(Gradients, AddMulScaleSum) {
  auto a = random_tensor({2, 3}, 4), b = random_tensor({2, 3}, 5);
  expect_gradients({a, b}, [&](Tape<double>& t) {
    return weighted(t, scale(t, add(t, mul(t, a, b), a), -1.7));
  });
}

TEST(Gradients, LinearGelu) {
  auto x = random_tensor({3, 4}, 6), w = random_tensor({4, 5}, 7), b = random_tensor({5}, 8);
  expect_gradients({x, w, b}, [&](Tape<double>& t) { return weighted(t, gelu(t, linear(t, x, w, b))); });
}

TEST(Gradients, LayerNormAffineAndPlain) {
  auto x = random_tensor({3, 6}, 9), g = random_tensor({6}, 10), b = random_tensor({6}, 11);
  expect_gradients({x, g, b}, [&](Tape<double>& t) { return weighted(t, layer_norm(t, x, g, b)); });
  expect_gradients({x}, [&](Tape<double>& t) { return weighted(t, layer_norm(t, x)); });
}

TEST(Gradients, SoftmaxLogSoftmaxWithMask) {
  auto x = random_tensor({3, 4}, 12);
  T::Array mask = T::Array::Zero(12);
  mask[3] = -std::numeric_limits<double>::infinity();
  mask[4] = -std::numeric_limits<double>::infinity();
  expect_gradients({x}, [&](Tape<double>& t) { return weighted(t, softmax(t, add_constant(t, x, mask))); });
  expect_gradients({x}, [&](Tape<double>& t) { return weighted(t, log_softmax(t, x)); });
}

TEST(Gradients, ConcatSliceGather) {
  auto a = random_tensor({2, 3}, 13), b = random_tensor({1, 3}, 14), c = random_tensor({2, 2}, 15);
  const std::vector<int> idx = {2, 0, 2, 1};
  expect_gradients({a, b, c}, [&](Tape<double>& t) {
    auto rows = concat_rows(t, {a, b});
    auto picked = gather_rows(t, rows, idx);
    auto cols = concat_cols(t, {slice_rows(t, picked, 1, 2), c});
    return weighted(t, slice_cols(t, cols, 1, 3));
  });
}

TEST(Gradients, CrossEntropyAndKl) {
  auto logits = random_tensor({4, 5}, 16);
  const std::vector<int> targets = {1, -1, 4, 0};
  expect_gradients({logits}, [&](Tape<double>& t) { return cross_entropy(t, logits, targets, -1); });
  expect_gradients({logits}, [&](Tape<double>& t) {
    return cross_entropy(t, logits, targets, -1, Reduction::sum);
  });
  Tape<double> setup(false);
  auto p = softmax(setup, random_tensor({4, 5}, 17, false));
  expect_gradients({logits}, [&](Tape<double>& t) { return kl_divergence(t, p, log_softmax(t, logits)); });
}

TEST(Gradients, DropoutUsesFixedMask) {
  auto x = random_tensor({3, 4}, 18);
  expect_gradients({x}, [&](Tape<double>& t) {
    Rng rng(5);
    return weighted(t, dropout(t, x, 0.4, &rng, true));
  });
}

}  // namespace
}  // namespace kmbart
