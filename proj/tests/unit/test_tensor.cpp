#include <gtest/gtest.h>

#include "kmbart/ops.hpp"
#include "kmbart/tensor.hpp"

namespace kmbart {
namespace {

using T = Tensor<double>;

TEST(Tensor, RejectsDataOfWrongSize) {
  EXPECT_THROW(T({2, 3}, T::Array::Zero(5)), DimensionError);
  EXPECT_THROW(T::zeros({0, 3}), DimensionError);
  EXPECT_THROW(T::zeros({}), DimensionError);
}

TEST(Tensor, CopiesShareStorage) {
  auto a = T::zeros({2, 2});
  auto b = a;
  b.data()[3] = 7.0;
  EXPECT_EQ(a.data()[3], 7.0);
  auto c = a.clone();
  c.data()[3] = 1.0;
  EXPECT_EQ(a.data()[3], 7.0);
}

TEST(Tensor, ItemNeedsOneElement) {
  EXPECT_EQ(T::scalar(2.5).item(), 2.5);
  EXPECT_THROW(T::zeros({2}).item(), DimensionError);
}

TEST(Backward, SumGivesOnes) {
  Tape<double> tape;
  auto x = T::from_values({2, 3}, {1, -2, 3, 4, 5, -6}, true);
  tape.backward(sum(tape, x));
  EXPECT_TRUE(x.grad().isApprox(T::Array::Ones(6)));
}

TEST(Backward, SquareGivesTwiceInput) {
  Tape<double> tape;
  auto x = T::from_values({4}, {1, -2, 0.5, 3}, true);
  tape.backward(sum(tape, mul(tape, x, x)));
  EXPECT_TRUE(x.grad().isApprox(2.0 * x.data()));
}

TEST(Backward, RejectsNonScalarLoss) {
  Tape<double> tape;
  auto x = T::from_values({2}, {1, 2}, true);
  auto y = scale(tape, x, 2.0);
  EXPECT_THROW(tape.backward(y), DimensionError);
}

TEST(Backward, RepeatsIdenticallyAfterReset) {
  auto x = T::from_values({2, 2}, {0.3, -1.2, 2.0, 0.7}, true);
  auto w = T::from_values({2, 2}, {1.5, 0.1, -0.4, 0.9}, true);
  Tape<double> tape;
  auto loss = sum(tape, softmax(tape, matmul(tape, x, w)));
  loss = sum(tape, mul(tape, log_softmax(tape, matmul(tape, x, w)), x));
  tape.backward(loss);
  const T::Array first = w.grad();
  w.clear_grad();
  x.clear_grad();
  tape.backward(loss);
  EXPECT_TRUE((w.grad() == first).all());
}

TEST(Backward, AccumulatesWithoutReset) {
  auto x = T::from_values({3}, {1, 2, 3}, true);
  Tape<double> tape;
  auto loss = sum(tape, mul(tape, x, x));
  tape.backward(loss);
  tape.backward(loss);
  EXPECT_TRUE(x.grad().isApprox(4.0 * x.data()));
}

TEST(Tape, NonRecordingTapeRecordsNothing) {
  Tape<double> tape(false);
  auto x = T::from_values({2}, {1, 2}, true);
  auto y = sum(tape, x);
  EXPECT_EQ(tape.size(), 0U);
  EXPECT_FALSE(y.requires_grad());
}

TEST(ParameterSet, LooksUpByNameAndCounts) {
  ParameterSet<double> params;
  params.add("a", T::zeros({2, 3}, true), true);
  params.add("b", T::zeros({4}, true), false);
  EXPECT_EQ(params.numel(), 10);
  EXPECT_TRUE(params.contains("b"));
  EXPECT_THROW(params.at("c"), RangeError);
  EXPECT_THROW(params.add("a", T::zeros({1}), true), ValidationError);
}

}  // namespace
}  // namespace kmbart
