#include <gtest/gtest.h>

#include <cmath>

#include "affect/gradcheck.hpp"
#include "affect/graph.hpp"
#include "affect/ops.hpp"
#include "test_util.hpp"

using namespace affect;
using test::random_tensor;
using test::weighted_sum;

namespace {

// Builds the scalar target f = mean(coeffs * op(params...)) and runs the
// finite-difference comparison over all listed parameters.
template <typename BuildOp>
GradCheckReport check_op(const std::vector<std::pair<std::string, Tensor*>>& params,
                         BuildOp&& build_op, Rng& rng) {
  Shape out_shape = test::probe_shape(build_op);
  Tensor coeffs = random_tensor(out_shape, rng, 0.5, 1.5);
  auto build = [&](Graph& g) { return weighted_sum(g, build_op(g), coeffs); };
  return grad_check(params, build, 1e-4);
}

}  // namespace

TEST(Conv2d, ScalarProduct) {
  Graph g;
  Var x = g.input(Tensor({1, 1, 1, 1}, {2.0}));
  Var w = g.input(Tensor({1, 1, 1, 1}, {3.0}));
  Var b = g.input(Tensor({1}, {0.0}));
  Var y = conv2d(x, w, b);
  EXPECT_EQ(g.val(y).shape(), (Shape{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(g.val(y)[0], 6.0);
}

TEST(Conv2d, SumOfOnes) {
  Graph g;
  Var x = g.input(full({1, 1, 3, 3}, 1.0));
  Var w = g.input(full({1, 1, 3, 3}, 1.0));
  Var b = g.input(Tensor({1}));
  Var y = conv2d(x, w, b, 1, 0);
  ASSERT_EQ(g.val(y).numel(), 1u);
  EXPECT_DOUBLE_EQ(g.val(y)[0], 9.0);
}

TEST(Conv2d, OutputExtentsAndBias) {
  Graph g;
  Var x = g.input(full({2, 3, 8, 8}, 0.0));
  Var w = g.input(full({4, 3, 3, 3}, 0.0));
  Var b = g.input(Tensor({4}, {1.0, 2.0, 3.0, 4.0}));
  Var y = conv2d(x, w, b, 1, 1);
  EXPECT_EQ(g.val(y).shape(), (Shape{2, 4, 8, 8}));
  EXPECT_DOUBLE_EQ(g.val(y).at4(1, 2, 5, 5), 3.0);
  Var ys = conv2d(x, w, b, 2, 1);
  EXPECT_EQ(g.val(ys).shape(), (Shape{2, 4, 4, 4}));
}

TEST(Conv2d, IdentityKernelIsIdentity) {
  Rng rng(11);
  Tensor x = random_tensor({2, 3, 5, 5}, rng);
  Tensor w({3, 3, 1, 1});
  for (int f = 0; f < 3; ++f) w.at4(f, f, 0, 0) = 1.0;
  Graph g;
  Var y = conv2d(g.param(x), g.param(w), g.input(Tensor({3})));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(g.val(y)[i], x[i]);
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
  Rng rng(42);
  Tensor x = random_tensor({2, 3, 8, 8}, rng);
  Tensor w = random_tensor({4, 3, 3, 3}, rng);
  Tensor b = random_tensor({4}, rng);
  auto rep = check_op({{"x", &x}, {"w", &w}, {"b", &b}},
                      [&](Graph& g) { return conv2d(g.param(x), g.param(w), g.param(b), 1, 1); },
                      rng);
  EXPECT_LE(rep.max_rel_err(), 1e-3);
}

TEST(Conv2d, StridedGradient) {
  Rng rng(43);
  Tensor x = random_tensor({1, 2, 7, 7}, rng);
  Tensor w = random_tensor({3, 2, 3, 3}, rng);
  Tensor b = random_tensor({3}, rng);
  auto rep = check_op({{"x", &x}, {"w", &w}, {"b", &b}},
                      [&](Graph& g) { return conv2d(g.param(x), g.param(w), g.param(b), 2, 1); },
                      rng);
  EXPECT_LE(rep.max_rel_err(), 1e-3);
}

TEST(Conv2d, ShapeErrorsNameTheDimension) {
  Graph g;
  Var x = g.input(full({1, 3, 4, 4}, 0.0));
  Var w = g.input(full({2, 4, 3, 3}, 0.0));
  Var b = g.input(Tensor({2}));
  try {
    conv2d(x, w, b, 1, 1);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("channel"), std::string::npos);
  }
  Var wbig = g.input(full({2, 3, 9, 3}, 0.0));
  EXPECT_THROW(conv2d(x, wbig, b, 1, 0), ShapeError);
}

TEST(Maxpool2d, MaxOfFour) {
  Graph g;
  Var x = g.input(Tensor({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0}));
  Var y = maxpool2d(x, 2, 2);
  EXPECT_EQ(g.val(y).shape(), (Shape{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(g.val(y)[0], 4.0);
}

TEST(Maxpool2d, TieRoutesGradientToFirstPosition) {
  Tensor x = full({1, 1, 2, 2}, 7.0);
  Graph g;
  Var xv = g.param(x);
  Var y = maxpool2d(xv, 2, 2);
  EXPECT_DOUBLE_EQ(g.val(y)[0], 7.0);
  g.backward(mean_all(y));
  const Tensor& dx = *g.grad_for(x);
  EXPECT_DOUBLE_EQ(dx[0], 1.0);
  EXPECT_DOUBLE_EQ(dx[1], 0.0);
  EXPECT_DOUBLE_EQ(dx[2], 0.0);
  EXPECT_DOUBLE_EQ(dx[3], 0.0);
}

TEST(Maxpool2d, GradientMatchesFiniteDifferences) {
  Rng rng(7);
  Tensor x = random_tensor({1, 1, 6, 6}, rng);  // continuous draws: ties have measure zero
  auto rep = check_op({{"x", &x}}, [&](Graph& g) { return maxpool2d(g.param(x), 2, 2); }, rng);
  EXPECT_LE(rep.max_rel_err(), 1e-3);
}

TEST(Maxpool2d, WindowLargerThanInputFails) {
  Graph g;
  Var x = g.input(full({1, 1, 2, 2}, 0.0));
  EXPECT_THROW(maxpool2d(x, 3, 1), ShapeError);
}

TEST(UpsampleBilinear, ConstantField) {
  Graph g;
  Var x = g.input(Tensor({1, 1, 1, 1}, {5.0}));
  Var y = upsample_bilinear(x, 3, 3);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(g.val(y)[i], 5.0);
}

TEST(UpsampleBilinear, AlignCornersMidpoint) {
  Graph g;
  Var x = g.input(Tensor({1, 1, 2, 1}, {0.0, 2.0}));
  Var y = upsample_bilinear(x, 3, 1);
  EXPECT_DOUBLE_EQ(g.val(y)[0], 0.0);
  EXPECT_DOUBLE_EQ(g.val(y)[1], 1.0);
  EXPECT_DOUBLE_EQ(g.val(y)[2], 2.0);
}

TEST(UpsampleBilinear, GradientMatchesFiniteDifferences) {
  Rng rng(8);
  Tensor x = random_tensor({1, 1, 3, 3}, rng);
  auto rep =
      check_op({{"x", &x}}, [&](Graph& g) { return upsample_bilinear(g.param(x), 6, 6); }, rng);
  EXPECT_LE(rep.max_rel_err(), 1e-3);
}

TEST(UpsampleBilinear, DownsamplingRejected) {
  Graph g;
  Var x = g.input(full({1, 1, 4, 4}, 0.0));
  EXPECT_THROW(upsample_bilinear(x, 2, 2), ShapeError);
}

TEST(GlobalAvgPool, ArithmeticMean) {
  Graph g;
  Var x = g.input(Tensor({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0}));
  Var y = global_avg_pool(x);
  EXPECT_EQ(g.val(y).shape(), (Shape{1, 1}));
  EXPECT_DOUBLE_EQ(g.val(y)[0], 2.5);
}

TEST(GlobalAvgPool, ConstantChannel) {
  Graph g;
  Var x = g.input(full({2, 3, 4, 5}, -0.75));
  Var y = global_avg_pool(x);
  for (std::size_t i = 0; i < g.val(y).numel(); ++i) EXPECT_DOUBLE_EQ(g.val(y)[i], -0.75);
}

TEST(GlobalAvgPool, GradientIsBroadcastMean) {
  Rng rng(9);
  Tensor x = random_tensor({2, 2, 3, 3}, rng);
  auto rep = check_op({{"x", &x}}, [&](Graph& g) { return global_avg_pool(g.param(x)); }, rng);
  EXPECT_LE(rep.max_rel_err(), 1e-3);

  Graph g;
  Var y = global_avg_pool(g.param(x));
  g.backward(mean_all(y));
  const Tensor& dx = *g.grad_for(x);
  // every position in one channel shares the same 1/(H*W)-scaled weight
  EXPECT_DOUBLE_EQ(dx.at4(0, 0, 0, 0), dx.at4(0, 0, 2, 2));
  EXPECT_NEAR(dx.at4(1, 1, 1, 1), 1.0 / 9.0 / 4.0, 1e-15);
}

TEST(Dense, IdentityWeight) {
  Rng rng(10);
  Tensor x = random_tensor({3, 4}, rng);
  Tensor w({4, 4});
  for (int i = 0; i < 4; ++i) w.at2(i, i) = 1.0;
  Graph g;
  Var y = dense(g.param(x), g.param(w), g.input(Tensor({4})));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(g.val(y)[i], x[i]);
}

TEST(Dense, ZeroWeightReplicatesBias) {
  Graph g;
  Var x = g.input(full({3, 4}, 2.0));
  Var w = g.input(Tensor({4, 2}));
  Var b = g.input(Tensor({2}, {0.5, -0.25}));
  Var y = dense(x, w, b);
  for (int n = 0; n < 3; ++n) {
    EXPECT_DOUBLE_EQ(g.val(y).at2(n, 0), 0.5);
    EXPECT_DOUBLE_EQ(g.val(y).at2(n, 1), -0.25);
  }
}

TEST(Dense, GradientMatchesFiniteDifferences) {
  Rng rng(12);
  Tensor x = random_tensor({4, 8}, rng);
  Tensor w = random_tensor({8, 3}, rng);
  Tensor b = random_tensor({3}, rng);
  auto rep = check_op({{"x", &x}, {"w", &w}, {"b", &b}},
                      [&](Graph& g) { return dense(g.param(x), g.param(w), g.param(b)); }, rng);
  EXPECT_LE(rep.max_rel_err(), 1e-3);
}

TEST(Dense, DimensionMismatchFails) {
  Graph g;
  Var x = g.input(full({4, 8}, 0.0));
  Var w = g.input(full({7, 3}, 0.0));
  Var b = g.input(Tensor({3}));
  EXPECT_THROW(dense(x, w, b), ShapeError);
}

TEST(Activation, PointValues) {
  Graph g;
  Var x = g.input(Tensor({3}, {0.0, -3.0, 3.0}));
  EXPECT_DOUBLE_EQ(g.val(sigmoid(x))[0], 0.5);
  const Tensor& r = g.val(relu(x));
  EXPECT_DOUBLE_EQ(r[1], 0.0);
  EXPECT_DOUBLE_EQ(r[2], 3.0);
}

TEST(Activation, UnknownKindRejected) {
  EXPECT_THROW(parse_act("gelu"), ValueError);
  EXPECT_EQ(parse_act("tanh"), Act::tanh);
}

TEST(Activation, TanhGradient) {
  Rng rng(13);
  Tensor x = random_tensor({6}, rng, -2.0, 2.0);
  auto rep = check_op({{"x", &x}}, [&](Graph& g) { return tanh_op(g.param(x)); }, rng);
  EXPECT_LE(rep.max_rel_err(), 1e-3);
}

TEST(Activation, SigmoidOutputStrictlyInUnitInterval) {
  Rng rng(14);
  Tensor x = random_tensor({64}, rng, -30.0, 30.0);
  Graph g;
  const Tensor& y = g.val(sigmoid(g.param(x)));
  for (std::size_t i = 0; i < y.numel(); ++i) {
    EXPECT_GT(y[i], 0.0);
    EXPECT_LT(y[i], 1.0);
  }
}

TEST(Softmax, UniformOnEqualScores) {
  Graph g;
  Var y = softmax_vec(g.input(Tensor({3})));
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(g.val(y)[i], 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeScoresDoNotOverflow) {
  Graph g;
  Var y = softmax_vec(g.input(Tensor({2}, {1000.0, 0.0})));
  EXPECT_NEAR(g.val(y)[0], 1.0, 1e-12);
  EXPECT_NEAR(g.val(y)[1], 0.0, 1e-12);
  EXPECT_TRUE(g.val(y).all_finite());
}

TEST(Softmax, SumsToOne) {
  Rng rng(15);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({5}, rng, -5.0, 5.0);
    Graph g;
    const Tensor& y = g.val(softmax_vec(g.param(x)));
    real sum = 0.0;
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_GT(y[i], 0.0);
      EXPECT_LT(y[i], 1.0);
      sum += y[i];
    }
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(Softmax, JacobianMatchesFiniteDifferences) {
  Rng rng(16);
  Tensor x = random_tensor({5}, rng, -2.0, 2.0);
  // three independent random projections probe the full Jacobian
  for (int trial = 0; trial < 3; ++trial) {
    auto rep = check_op({{"x", &x}}, [&](Graph& g) { return softmax_vec(g.param(x)); }, rng);
    EXPECT_LE(rep.max_rel_err(), 1e-3);
  }
}

TEST(Softmax, RowwiseOnMatrix) {
  Graph g;
  Var y = softmax_rows(g.input(Tensor({2, 2}, {0.0, 0.0, 100.0, 0.0})));
  EXPECT_NEAR(g.val(y).at2(0, 0), 0.5, 1e-12);
  EXPECT_NEAR(g.val(y).at2(1, 0), 1.0, 1e-12);
}

TEST(StructuralOps, ConcatSliceDotMulColsGradients) {
  Rng rng(17);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({3, 2}, rng);
  Tensor s = random_tensor({3, 1}, rng);
  auto rep = check_op({{"a", &a}, {"b", &b}, {"s", &s}},
                      [&](Graph& g) {
                        Var cat = concat_cols(g.param(a), g.param(b));  // [3,6]
                        Var left = slice_cols(cat, 0, 4);
                        Var scores = dot_rows(left, g.param(a));  // [3,1]
                        Var scaled = mul_cols(cat, g.param(s));
                        return add(mean_all(scaled), mean_all(scores));
                      },
                      rng);
  EXPECT_LE(rep.max_rel_err(), 1e-3);
}

TEST(StructuralOps, ReshapeRoundTrip) {
  Rng rng(18);
  Tensor x = random_tensor({2, 3, 2, 2}, rng);
  Graph g;
  Var f = flatten(g.param(x));
  EXPECT_EQ(g.val(f).shape(), (Shape{2, 12}));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(g.val(f)[i], x[i]);
}

TEST(Losses, SoftmaxXentGradient) {
  Rng rng(19);
  Tensor logits = random_tensor({4, 7}, rng);
  std::vector<int> labels = {0, 3, 6, 2};
  auto build = [&](Graph& g) { return softmax_xent(g.param(logits), labels); };
  auto rep = grad_check({{"logits", &logits}}, build, 1e-4);
  EXPECT_LE(rep.max_rel_err(), 1e-3);
}

TEST(Losses, SoftmaxXentRejectsBadLabels) {
  Graph g;
  Var logits = g.input(full({2, 7}, 0.0));
  EXPECT_THROW(softmax_xent(logits, {0, 7}), ValueError);
  EXPECT_THROW(softmax_xent(logits, {0}), ShapeError);
}

TEST(Losses, MseAndTukeyOpGradients) {
  Rng rng(20);
  Tensor pred = random_tensor({6, 1}, rng);
  Tensor target = random_tensor({6, 1}, rng);
  auto rep1 = grad_check({{"pred", &pred}},
                         [&](Graph& g) { return mse_loss(g.param(pred), target); }, 1e-4);
  EXPECT_LE(rep1.max_rel_err(), 1e-3);
  auto rep2 = grad_check({{"pred", &pred}},
                         [&](Graph& g) { return tukey_loss_op(g.param(pred), target, 4.685); },
                         1e-4);
  EXPECT_LE(rep2.max_rel_err(), 1e-3);
}

TEST(GradCheckOp, QuadraticAtThree) {
  Tensor x({1}, {3.0});
  auto build = [&](Graph& g) {
    Var xv = g.param(x);
    return mean_all(mul(xv, xv));
  };
  Graph g;
  Var root = build(g);
  g.backward(root);
  EXPECT_NEAR((*g.grad_for(x))[0], 6.0, 1e-12);
  auto rep = grad_check({{"x", &x}}, build, 1e-4);
  EXPECT_LE(rep.max_rel_err(), 1e-3);
  EXPECT_NEAR(rep.entries[0].numeric_at_worst, 6.0, 1e-6);
}

TEST(GradCheckOp, ConstantFunctionHasZeroGradient) {
  Tensor x({3}, {1.0, 2.0, 3.0});
  Tensor konst({1}, {5.0});
  auto build = [&](Graph& g) {
    g.param(x);  // joins the graph but the output ignores it
    return mean_all(g.input(konst));
  };
  auto rep = grad_check({{"x", &x}}, build, 1e-4);
  EXPECT_LE(rep.max_rel_err(), 1e-9);
}

TEST(GradCheckOp, NonFiniteIntermediateIsReported) {
  Tensor x({1}, {std::numeric_limits<real>::infinity()});
  auto build = [&](Graph& g) {
    Var xv = g.param(x);
    return mean_all(mul(xv, g.input(Tensor({1}, {0.0}))));  // inf * 0 = NaN
  };
  EXPECT_THROW(grad_check({{"x", &x}}, build, 1e-4), NonFiniteError);
}
