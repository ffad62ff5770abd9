// Copyright (c) 2026 The vimoe-lab Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "vimoe/ops.hpp"
#include "vimoe/rng.hpp"
#include "vimoe/tensor.hpp"

namespace vimoe {
namespace {

using testing::central_diff;
using testing::rel_err;

Tensor random_param(Shape shape, std::uint64_t key) {
  rng::Stream s(key);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = s.normal();
  return Tensor::from(std::move(shape), std::move(v), true);
}

TEST(Matmul, IdentityCase) {
  Tape tape;
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor y = matmul(tape, eye, b);
  EXPECT_EQ(y.data(), b.data());
}

TEST(Matmul, HandChecked1x2by2x1) {
  Tape tape;
  Tensor a = Tensor::from({1, 2}, {1, 2});
  Tensor b = Tensor::from({2, 1}, {3, 4});
  Tensor y = matmul(tape, a, b);
  ASSERT_EQ(y.size(), 1u);
  EXPECT_DOUBLE_EQ(y.at(0), 11.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tape tape;
  Tensor a = Tensor::from({2, 3}, std::vector<double>(6, 1.0));
  Tensor b = Tensor::from({2, 2}, std::vector<double>(4, 1.0));
  try {
    matmul(tape, a, b);
    FAIL() << "expected shape_error";
  } catch (const shape_error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
    EXPECT_NE(msg.find("[2x2]"), std::string::npos);
  }
}

TEST(Matmul, GradOfSumIsRowSumsOfB) {
  Tensor a = random_param({3, 4}, 11);
  Tensor b = random_param({4, 2}, 12);
  Tape tape;
  Tensor loss = sum(tape, matmul(tape, a, b));
  tape.backward(loss);

  // d sum(AB) / dA[i,k] = sum_j B[k,j]
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 4; ++k) {
      double row_sum = 0.0;
      for (std::size_t j = 0; j < 2; ++j) row_sum += b.at(k, j);
      EXPECT_NEAR(a.grad()[i * 4 + k], row_sum, 1e-12);
    }

  auto f = [&] {
    Tape t;
    return sum(t, matmul(t, a, b)).at(0);
  };
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double fd = central_diff(a, i, f);
    EXPECT_LT(rel_err(a.grad()[i], fd), 1e-6);
  }
}

TEST(Softmax, Symmetry) {
  Tape tape;
  Tensor y = softmax(tape, Tensor::from({2}, {0, 0}));
  EXPECT_DOUBLE_EQ(y.at(0), 0.5);
  EXPECT_DOUBLE_EQ(y.at(1), 0.5);
}

TEST(Softmax, LargeInputDoesNotOverflow) {
  Tape tape;
  Tensor y = softmax(tape, Tensor::from({2}, {1000, 0}));
  EXPECT_TRUE(std::isfinite(y.at(0)));
  EXPECT_NEAR(y.at(0), 1.0, 1e-12);
  EXPECT_NEAR(y.at(1), 0.0, 1e-12);
}

TEST(Softmax, MatchesBruteForce) {
  Tape tape;
  Tensor y = softmax(tape, Tensor::from({3}, {1, 2, 3}));
  const auto want = testing::naive_softmax_row({1, 2, 3});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(y.at(i), want[i], 1e-12);
}

TEST(Softmax, RowsSumToOne) {
  Tensor x = random_param({5, 7}, 21);
  Tape tape;
  Tensor y = softmax(tape, x);
  for (std::size_t r = 0; r < 5; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 7; ++c) {
      EXPECT_GE(y.at(r, c), 0.0);
      s += y.at(r, c);
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Softmax, NanInputRaisesNumericError) {
  Tape tape;
  Tensor x = Tensor::from({2}, {std::nan(""), 0.0});
  EXPECT_THROW(softmax(tape, x), numeric_error);
}

TEST(Softmax, GradientMatchesFiniteDifference) {
  Tensor x = random_param({3, 4}, 31);
  Tensor w = Tensor::from({3, 4}, {0.3, -1.2, 0.7, 0.1, 1.5, -0.4, 0.2, -0.9, 0.5, 0.6, -1.1, 0.8});
  auto f = [&] {
    Tape t;
    return sum(t, mul(t, softmax(t, x), w)).at(0);
  };
  Tape tape;
  Tensor loss = sum(tape, mul(tape, softmax(tape, x), w));
  tape.backward(loss);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_LT(rel_err(x.grad()[i], central_diff(x, i, f)), 1e-6);
  }
}

TEST(Layernorm, ConstantRowGoesToZero) {
  Tape tape;
  Tensor x = Tensor::from({1, 4}, {3, 3, 3, 3});
  Tensor g = Tensor::from({4}, {1, 1, 1, 1});
  Tensor b = Tensor::zeros({4});
  Tensor y = layernorm(tape, x, g, b);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y.at(i), 0.0, 1e-12);
}

TEST(Layernorm, TwoPointStandardization) {
  Tape tape;
  Tensor x = Tensor::from({1, 2}, {1, 3});
  Tensor g = Tensor::from({2}, {1, 1});
  Tensor b = Tensor::zeros({2});
  Tensor y = layernorm(tape, x, g, b);
  EXPECT_NEAR(y.at(0), -1.0, 1e-5);
  EXPECT_NEAR(y.at(1), 1.0, 1e-5);
}

TEST(Layernorm, GradientMatchesFiniteDifference) {
  Tensor x = random_param({4, 8}, 41);
  Tensor g = random_param({8}, 42);
  Tensor b = random_param({8}, 43);
  Tensor w = random_param({4, 8}, 44);
  w.node()->requires_grad = false;
  auto f = [&] {
    Tape t;
    return sum(t, mul(t, layernorm(t, x, g, b), w)).at(0);
  };
  Tape tape;
  Tensor loss = sum(tape, mul(tape, layernorm(tape, x, g, b), w));
  tape.backward(loss);
  for (Tensor* p : {&x, &g, &b})
    for (std::size_t i = 0; i < p->size(); ++i) {
      EXPECT_LT(rel_err(p->grad()[i], central_diff(*p, i, f)), 1e-5);
    }
}

TEST(Gelu, OddFunctionFixedPoint) {
  Tape tape;
  Tensor y = gelu(tape, Tensor::from({1}, {0.0}));
  EXPECT_DOUBLE_EQ(y.at(0), 0.0);
}

TEST(Gelu, KnownValueAtTwo) {
  Tape tape;
  Tensor y = gelu(tape, Tensor::from({1}, {2.0}));
  // 0.5 * 2 * (1 + erf(2 / sqrt(2)))
  EXPECT_NEAR(y.at(0), 2.0 * 0.5 * (1.0 + std::erf(2.0 / std::sqrt(2.0))), 1e-15);
  EXPECT_NEAR(y.at(0), 1.9545, 1e-4);
}

TEST(Gelu, GradientMatchesFiniteDifference) {
  Tensor x = random_param({10}, 51);
  auto f = [&] {
    Tape t;
    return sum(t, gelu(t, x)).at(0);
  };
  Tape tape;
  Tensor loss = sum(tape, gelu(tape, x));
  tape.backward(loss);
  for (std::size_t i = 0; i < x.size(); ++i)
    EXPECT_LT(rel_err(x.grad()[i], central_diff(x, i, f)), 1e-7);
}

TEST(CrossEntropy, UniformLogitsGiveLogC) {
  for (std::size_t c : {2u, 5u, 10u}) {
    Tape tape;
    Tensor logits = Tensor::zeros({c});
    Tensor y = cross_entropy(tape, logits, 0);
    EXPECT_NEAR(y.at(0), std::log(static_cast<double>(c)), 1e-12);
  }
}

TEST(CrossEntropy, TargetOutOfRange) {
  Tape tape;
  Tensor logits = Tensor::zeros({3});
  EXPECT_THROW(cross_entropy(tape, logits, 3), contract_error);
  EXPECT_THROW(cross_entropy(tape, logits, -1), contract_error);
}

TEST(CrossEntropy, GradientIsSoftmaxMinusOneHot) {
  Tensor logits = random_param({6}, 61);
  const int target = 2;
  Tape tape;
  Tensor loss = cross_entropy(tape, logits, target);
  tape.backward(loss);

  std::vector<double> probs = testing::naive_softmax_row(logits.data());
  for (std::size_t i = 0; i < 6; ++i) {
    const double want = probs[i] - (i == target ? 1.0 : 0.0);
    EXPECT_NEAR(logits.grad()[i], want, 1e-12);
  }
  auto f = [&] {
    Tape t;
    return cross_entropy(t, logits, target).at(0);
  };
  for (std::size_t i = 0; i < 6; ++i)
    EXPECT_LT(rel_err(logits.grad()[i], central_diff(logits, i, f)), 1e-6);
}

TEST(Backward, SumGivesOnes) {
  Tensor x = random_param({3, 5}, 71);
  Tape tape;
  Tensor loss = sum(tape, x);
  tape.backward(loss);
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Backward, HalfSquaredNormGivesX) {
  Tensor x = random_param({7}, 72);
  Tape tape;
  Tensor loss = scale(tape, sum(tape, mul(tape, x, x)), 0.5);
  tape.backward(loss);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(x.grad()[i], x.at(i));
}

TEST(Backward, NonScalarLossIsContractError) {
  Tensor x = random_param({2, 2}, 73);
  Tape tape;
  Tensor y = mul(tape, x, x);
  EXPECT_THROW(tape.backward(y), contract_error);
}

TEST(Backward, AccumulatesAcrossCalls) {
  Tensor x = random_param({4}, 74);
  Tape tape;
  Tensor loss = sum(tape, x);
  tape.backward(loss);
  tape.backward(loss);
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 2.0);
}

TEST(Tape, NodeIdsIncreaseInCreationOrder) {
  Tensor a = random_param({2, 2}, 81);
  Tensor b = random_param({2, 2}, 82);
  Tape tape;
  Tensor c = matmul(tape, a, b);
  Tensor d = add(tape, c, a);
  Tensor e = sum(tape, d);
  EXPECT_LT(a.node_id(), c.node_id());
  EXPECT_LT(b.node_id(), c.node_id());
  EXPECT_LT(c.node_id(), d.node_id());
  EXPECT_LT(d.node_id(), e.node_id());
}

TEST(SliceConcatGatherScatter, RoundTripsAndGradients) {
  Tensor x = random_param({4, 6}, 91);

  Tape tape;
  Tensor top = slice_rows(tape, x, 0, 2);
  Tensor bottom = slice_rows(tape, x, 2, 4);
  Tensor back = concat(tape, {top, bottom}, 0);
  EXPECT_EQ(back.data(), x.data());

  Tensor left = slice_cols(tape, x, 0, 3);
  Tensor right = slice_cols(tape, x, 3, 6);
  Tensor back2 = concat(tape, {left, right}, 1);
  EXPECT_EQ(back2.data(), x.data());

  Tensor g = gather(tape, x, {0, 5, 5, 23});
  EXPECT_DOUBLE_EQ(g.at(0), x.at(0));
  EXPECT_DOUBLE_EQ(g.at(3), x.at(23));

  Tensor sc = scatter(tape, g, {1, 3, 5, 7}, 9);
  EXPECT_DOUBLE_EQ(sc.at(1), x.at(0));
  EXPECT_DOUBLE_EQ(sc.at(0), 0.0);

  Tensor loss = sum(tape, mul(tape, sc, sc));
  tape.backward(loss);
  auto f = [&] {
    Tape t;
    Tensor gg = gather(t, x, {0, 5, 5, 23});
    Tensor ss = scatter(t, gg, {1, 3, 5, 7}, 9);
    return sum(t, mul(t, ss, ss)).at(0);
  };
  for (std::size_t i : {0u, 5u, 23u, 11u})
    EXPECT_LT(rel_err(x.grad()[i], central_diff(x, i, f)), 1e-6) << "flat index " << i;
}

TEST(ElementwiseOps, FiniteDifferenceSweep) {
  Tensor a = random_param({3, 3}, 101);
  Tensor b = random_param({3, 3}, 102);
  for (double& v : b.data()) v += (v >= 0 ? 2.0 : -2.0);  // keep divisors away from zero
  Tensor v = random_param({3}, 103);
  Tensor s = random_param({1}, 104);
  s.at(0) += 2.0;

  auto f = [&] {
    Tape t;
    Tensor y = add(t, mul(t, a, b), div(t, a, b));
    y = add_rowvec(t, y, v);
    y = rowwise_scale(t, y, v);
    y = mul_bcast(t, y, s);
    y = div_bcast(t, y, s);
    Tensor z = sub(t, y, a);
    return mean(t, z).at(0);
  };
  Tape tape;
  Tensor y = add(tape, mul(tape, a, b), div(tape, a, b));
  y = add_rowvec(tape, y, v);
  y = rowwise_scale(tape, y, v);
  y = mul_bcast(tape, y, s);
  y = div_bcast(tape, y, s);
  Tensor loss = mean(tape, sub(tape, y, a));
  tape.backward(loss);

  for (Tensor* p : {&a, &b, &v, &s})
    for (std::size_t i = 0; i < p->size(); ++i)
      EXPECT_LT(rel_err(p->grad()[i], central_diff(*p, i, f)), 1e-5);
}

TEST(TransposeReshape, GradientFlow) {
  Tensor x = random_param({2, 3}, 111);
  Tape tape;
  Tensor y = transpose(tape, x);
  Tensor z = reshape(tape, y, {6});
  Tensor loss = sum(tape, mul(tape, z, z));
  tape.backward(loss);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * x.at(i));
}

TEST(Determinism, IdenticalRunsBitIdentical) {
  auto run = [] {
    Tensor a = random_param({6, 6}, 121);
    Tensor b = random_param({6, 6}, 122);
    Tape tape;
    Tensor h = gelu(tape, matmul(tape, a, b));
    Tensor sm = softmax(tape, h);
    Tensor loss = mean(tape, sm);
    tape.backward(loss);
    return std::make_pair(loss.at(0), a.grad());
  };
  auto [l1, g1] = run();
  auto [l2, g2] = run();
  EXPECT_EQ(l1, l2);
  EXPECT_EQ(g1, g2);
}

}  // namespace
}  // namespace vimoe
