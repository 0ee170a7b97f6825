#include <gtest/gtest.h>

#include "affect/gradcheck.hpp"
#include "affect/graph.hpp"
#include "affect/ops.hpp"
#include "test_util.hpp"

using namespace affect;
using test::random_tensor;

TEST(Graph, ParamBindingDeduplicates) {
  Tensor t({2}, {1.0, 2.0});
  Graph g;
  Var a = g.param(t);
  Var b = g.param(t);
  EXPECT_EQ(a.id, b.id);
}

TEST(Graph, BackwardRequiresScalarRoot) {
  Graph g;
  Var x = g.input(Tensor({2}, {1.0, 2.0}));
  EXPECT_THROW(g.backward(x), ShapeError);
}

TEST(Graph, TwoConsumersAccumulateGradientSum) {
  // f(x) = g(x) + g(x) must produce exactly the gradient of 2*g(x).
  Rng rng(21);
  Tensor x = random_tensor({5}, rng);

  Graph g1;
  {
    Var xv = g1.param(x);
    Var gx = tanh_op(xv);
    g1.backward(mean_all(add(gx, gx)));
  }
  Graph g2;
  {
    Var xv = g2.param(x);
    Var gx = tanh_op(xv);
    g2.backward(mean_all(scale(gx, 2.0)));
  }
  const Tensor& d1 = *g1.grad_for(x);
  const Tensor& d2 = *g2.grad_for(x);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(d1[i], d2[i], 1e-14);
}

TEST(Graph, DiamondDependencyGradient) {
  Rng rng(22);
  Tensor x = random_tensor({4}, rng, -1.5, 1.5);
  auto build = [&](Graph& g) {
    Var xv = g.param(x);
    return mean_all(mul(tanh_op(xv), sigmoid(xv)));
  };
  auto rep = grad_check({{"x", &x}}, build, 1e-4);
  EXPECT_LE(rep.max_rel_err(), 1e-3);
}

TEST(Graph, GradForUnboundTensorIsNull) {
  Tensor t({1}, {1.0});
  Graph g;
  g.input(Tensor({1}, {2.0}));
  EXPECT_EQ(g.grad_for(t), nullptr);
}

TEST(Graph, ValuesStayFiniteThroughDeepChain) {
  Rng rng(23);
  Tensor x = random_tensor({8}, rng);
  Graph g;
  Var v = g.param(x);
  for (int i = 0; i < 10; ++i) v = tanh_op(add_scalar(v, 0.1));
  g.backward(mean_all(v));
  EXPECT_TRUE(g.first_non_finite().empty());
}
