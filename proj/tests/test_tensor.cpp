#include <gtest/gtest.h>

#include <stdexcept>

#include "ilaprop/ops.hpp"
#include "ilaprop/tensor.hpp"

namespace ilaprop {
namespace {

TEST(Tensor, FromDataRejectsLengthMismatch) {
  EXPECT_THROW(Tensor::from_data({2, 2}, {1.0, 2.0, 3.0}), std::invalid_argument);
}

TEST(Tensor, CopiesShareStorageAndCloneDoesNot) {
  Tensor a = Tensor::full({3}, 1.0);
  Tensor b = a;
  Tensor c = a.clone();
  b.mutable_data()[0] = 5.0;
  EXPECT_EQ(a.data()[0], 5.0);
  EXPECT_EQ(c.data()[0], 1.0);
}

TEST(Tensor, ProductRuleThroughSharedInput) {
  Tensor x = Tensor::from_data({1}, {3.0}, true);
  backward(sum(mul(x, x)));
  ASSERT_TRUE(x.has_grad());
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Tensor, GradientsAccumulateUntilZeroed) {
  Tensor x = Tensor::from_data({2}, {1.0, -2.0}, true);
  backward(sum(scale(x, 2.0)));
  backward(sum(scale(x, 2.0)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
  Tensor leaves[] = {x};
  zero_grads(leaves);
  EXPECT_DOUBLE_EQ(x.grad()[1], 0.0);
}

TEST(Tensor, ReplayingAConsumedGraphThrows) {
  Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
  Tensor loss = sum(mul(x, x));
  auto graph = OpGraph::from_root(loss);
  backward(graph);
  EXPECT_TRUE(graph.consumed());
  EXPECT_THROW(backward(graph), std::logic_error);
  EXPECT_THROW(backward(loss), std::logic_error);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST(Tensor, ReusingAReleasedIntermediateThrows) {
  Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
  Tensor y = scale(x, 3.0);
  backward(sum(y));
  EXPECT_THROW(sum(y), std::logic_error);
}

TEST(Tensor, BackwardNeedsScalarRoot) {
  Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
  EXPECT_THROW(backward(scale(x, 2.0)), std::invalid_argument);
}

TEST(Tensor, NoGradGuardSkipsRecording) {
  Tensor x = Tensor::from_data({2}, {1.0, 2.0}, true);
  {
    NoGradGuard guard;
    EXPECT_TRUE(NoGradGuard::active());
    Tensor y = scale(x, 2.0);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_FALSE(NoGradGuard::active());
  EXPECT_TRUE(scale(x, 2.0).requires_grad());
}

TEST(Tensor, DetachCutsTheGraph) {
  Tensor x = Tensor::from_data({1}, {2.0}, true);
  Tensor y = mul(x, x.detach());
  backward(sum(y));
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
}

TEST(Tensor, TopologicalOrderPutsInputsFirst) {
  Tensor x = Tensor::from_data({1}, {1.0}, true);
  Tensor a = scale(x, 2.0);
  Tensor b = add(a, x);
  Tensor root = sum(b);
  auto graph = OpGraph::from_root(root);
  const auto& nodes = graph.nodes();
  ASSERT_EQ(nodes.back(), root.node());
  auto pos = [&](const Tensor& t) {
    return std::find(nodes.begin(), nodes.end(), t.node()) - nodes.begin();
  };
  EXPECT_LT(pos(x), pos(a));
  EXPECT_LT(pos(a), pos(b));
  EXPECT_EQ(graph.leaves().size(), 1u);
}

}  // namespace
}  // namespace ilaprop
