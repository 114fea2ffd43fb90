#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

#include "ilaprop/gradcheck.hpp"
#include "ilaprop/layers.hpp"
#include "ilaprop/ops.hpp"
#include "ilaprop/training.hpp"
#include "test_util.hpp"

namespace ilaprop {
namespace {

using testing::random_coeffs;
using testing::random_tensor;

// D with a zero last layer outputs sigmoid(0) = 0.5 for any input.
Discriminator half_discriminator(std::size_t channels) {
  std::mt19937_64 rng(3);
  ConvParams c1 = make_conv(channels, 4, 3, 1, 1, rng);
  ConvParams c2 = make_conv(4, 4, 3, 1, 1, rng);
  ConvParams c3 = make_conv(4, 1, 3, 1, 1, rng);
  for (double& w : c3.weights.mutable_data()) w = 0.0;
  return Discriminator(c1, c2, c3);
}

TEST(Discriminator, OutputsOneProbabilityPerSample) {
  std::mt19937_64 rng(1);
  Discriminator d(6, 8, rng);
  Tensor p = discriminator_forward(d, random_tensor({3, 6, 5, 4}, rng));
  EXPECT_EQ(p.shape(), (Shape{3, 1, 1, 1}));
  for (double v : p.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_EQ(d.parameters().size(), 6u);
  EXPECT_EQ(d.parameters()[0].name, "disc.conv1.weight");
}

TEST(MimicLoss, MatchedFeaturesAndHalfDiscriminator) {
  std::mt19937_64 rng(2);
  Tensor f = random_tensor({2, 4, 3, 3}, rng);
  Discriminator d = half_discriminator(4);
  for (const auto& [alpha, beta] : {std::pair{1.0, 1.0}, std::pair{0.3, 2.5}, std::pair{1.0, 0.0}}) {
    LossConfig cfg;
    cfg.alpha = alpha;
    cfg.beta = beta;
    const auto m = mimic_loss(f, f.clone(), d, cfg);
    EXPECT_EQ(m.l1.item(), 0.0);
    EXPECT_NEAR(m.adversarial.item(), 2.0 * std::numbers::ln2, 1e-12);
    EXPECT_NEAR(m.total.item(), beta * 2.0 * std::numbers::ln2, 1e-9);
  }
}

TEST(MimicLoss, BreakdownReconstitutesTotal) {
  std::mt19937_64 rng(4);
  Discriminator d(4, 4, rng);
  LossConfig cfg;
  cfg.alpha = 0.7;
  cfg.beta = 1.3;
  const auto m =
      mimic_loss(random_tensor({2, 4, 3, 3}, rng), random_tensor({2, 4, 3, 3}, rng), d, cfg);
  EXPECT_NEAR(m.total.item(), 0.7 * m.l1.item() + 1.3 * m.adversarial.item(), 1e-12);
}

TEST(MimicLoss, BetaZeroIsPlainL1) {
  std::mt19937_64 rng(5);
  Discriminator d(2, 4, rng);
  LossConfig cfg;
  cfg.beta = 0.0;
  Tensor a = Tensor::from_data({1, 2, 1, 2}, {1.0, 2.0, 3.0, 4.0});
  Tensor b = Tensor::from_data({1, 2, 1, 2}, {0.0, 2.5, 3.0, 1.0});
  EXPECT_DOUBLE_EQ(mimic_loss(a, b, d, cfg).total.item(), (1.0 + 0.5 + 0.0 + 3.0) / 4.0);
}

TEST(MimicLoss, SlowEncoderGetsNoDiscriminatorGradient) {
  std::mt19937_64 rng(6);
  ConvParams slow_enc = make_conv(3, 4, 3, 1, 1, rng);
  ConvParams fast_enc = make_conv(3, 4, 3, 1, 1, rng);
  Discriminator d(4, 4, rng);
  Tensor x = random_tensor({2, 3, 4, 4}, rng);
  LossConfig cfg;
  cfg.alpha = 0.0;
  const auto m = mimic_loss(conv2d(x, slow_enc), conv2d(x, fast_enc), d, cfg);
  backward(m.total);
  for (const Tensor* t : {&slow_enc.weights, &slow_enc.bias}) {
    if (t->has_grad()) {
      for (double g : t->grad()) EXPECT_EQ(g, 0.0);
    }
  }
  double fast_norm = 0.0;
  for (double g : fast_enc.weights.grad()) fast_norm += std::abs(g);
  EXPECT_GT(fast_norm, 0.0);
}

// D parameters see the plain derivative of L_D. The fast features see it
// through the reversal, so their analytic gradient must be the negated
// central difference of the same loss.
TEST(MimicLoss, DiscriminatorPathGradients) {
  std::mt19937_64 rng(7);
  Discriminator d(3, 4, rng);
  for (std::size_t i = 0; i < 3; ++i) d.conv(i).bias = random_tensor({i == 2 ? 1u : 4u}, rng, true);
  Tensor slow = random_tensor({2, 3, 3, 3}, rng);
  Tensor fast = random_tensor({2, 3, 3, 3}, rng, true);
  LossConfig cfg;
  cfg.alpha = 0.0;
  auto loss = [&] { return mimic_loss(slow, fast, d, cfg).total; };

  std::vector<Tensor> d_leaves;
  for (auto& p : d.parameters()) d_leaves.push_back(p.tensor);
  EXPECT_LT(finite_diff_check(loss, d_leaves, 1e-5), 1e-4);

  fast.zero_grad();
  backward(loss());
  const std::vector<double> analytic(fast.grad().begin(), fast.grad().end());
  const double eps = 1e-5;
  double worst = 0.0;
  auto x = fast.mutable_data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + eps;
    const double up = loss().item();
    x[i] = keep - eps;
    const double down = loss().item();
    x[i] = keep;
    const double numeric = (up - down) / (2.0 * eps);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] + numeric) / denom);
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(GradientReversal, ExactlyNegLambdaTimesPlainGradient) {
  std::mt19937_64 rng(8);
  Discriminator d(3, 4, rng);
  Tensor x = random_tensor({2, 3, 4, 4}, rng, true);
  const auto c = random_coeffs(2, rng);
  backward(dot(discriminator_forward(d, x), c));
  const std::vector<double> plain(x.grad().begin(), x.grad().end());
  for (double lambda : {0.0, 0.5, 1.0}) {
    x.zero_grad();
    backward(dot(discriminator_forward(d, gradient_reversal(x, lambda)), c));
    for (std::size_t i = 0; i < plain.size(); ++i) {
      EXPECT_EQ(x.grad()[i], -lambda * plain[i]) << "lambda " << lambda << " index " << i;
    }
  }
}

TEST(TaskLoss, CombinesWeightedTasks) {
  std::vector<TaskSpec> tasks{{"seg", TaskKind::segmentation, 4}, {"depth", TaskKind::depth, 1}};
  std::vector<Tensor> preds{Tensor::zeros({1, 4, 1, 2}),
                            Tensor::from_data({1, 1, 1, 2}, {1.0, 5.0})};
  std::vector<TaskTarget> targets(2);
  targets[0].classes = {1, 3};
  targets[1].depth = {2.0, 0.0};
  targets[1].depth_mask = {1, 0};
  LossConfig cfg;
  cfg.task_weights = {2.0, 0.5};
  const auto terms = task_loss(preds, targets, tasks, cfg);
  EXPECT_NEAR(terms.per_task[0].item(), std::log(4.0), 1e-15);
  EXPECT_DOUBLE_EQ(terms.per_task[1].item(), 1.0);
  EXPECT_NEAR(terms.total.item(), 2.0 * std::log(4.0) + 0.5, 1e-12);
  cfg.task_weights = {1.0};
  EXPECT_THROW(task_loss(preds, targets, tasks, cfg), std::invalid_argument);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor p = Tensor::from_data({3}, {1.0, -2.0, 0.5}, true);
  ParameterList params{{"p", p}};
  AdamState state(params, {});
  backward(dot(p, std::vector<double>{3.0, -0.01, 0.0}));
  adam_step(params, state);
  // Bias correction makes the first update lr * g / (|g| + eps).
  EXPECT_NEAR(p.data()[0], 1.0 - 1e-4, 1e-12);
  EXPECT_NEAR(p.data()[1], -2.0 + 1e-4, 1e-10);
  EXPECT_DOUBLE_EQ(p.data()[2], 0.5);
  EXPECT_EQ(state.steps(), 1u);
  EXPECT_NEAR(state.first_moment(0)[0], 0.3, 1e-15);
  EXPECT_NEAR(state.second_moment(0)[0], 0.09, 1e-15);
}

TEST(Adam, MatchesHandRolledRecurrence) {
  Tensor p = Tensor::from_data({1}, {0.0}, true);
  ParameterList params{{"p", p}};
  AdamConfig cfg{0.01, 0.8, 0.9, 1e-8};
  AdamState state(params, cfg);
  double x = 0.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 5; ++t) {
    p.zero_grad();
    // d/dx (x - 3)^2
    const double g = 2.0 * (x - 3.0);
    backward(mul(sub(p, Tensor::from_data({1}, {3.0})), sub(p, Tensor::from_data({1}, {3.0}))));
    adam_step(params, state);
    m = 0.8 * m + 0.2 * g;
    v = 0.9 * v + 0.1 * g * g;
    x -= 0.01 * (m / (1 - std::pow(0.8, t))) / (std::sqrt(v / (1 - std::pow(0.9, t))) + 1e-8);
    EXPECT_NEAR(p.data()[0], x, 1e-14);
  }
}

TEST(Adam, NaNGradientNamesTheParameter) {
  Tensor p = Tensor::from_data({1}, {1.0}, true);
  ParameterList params{{"enc.w", p}};
  AdamState state(params, {});
  p.mutable_grad()[0] = std::nan("");
  try {
    adam_step(params, state);
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("enc.w"), std::string::npos);
  }
  EXPECT_DOUBLE_EQ(p.data()[0], 1.0);
}

TEST(Adam, RejectsBadHyperparameters) {
  ParameterList params;
  EXPECT_THROW(AdamState(params, {0.0}), std::invalid_argument);
  EXPECT_THROW(AdamState(params, {1e-3, 1.0}), std::invalid_argument);
}

class TrainStepTest : public ::testing::Test {
 protected:
  static ModelConfig tiny() {
    ModelConfig c = desk_model_config(3, 4);
    c.decoder_width1 = 6;
    c.decoder_width2 = 4;
    c.window = 3;
    return c;
  }

  static TrainBatch batch(std::size_t frames) {
    std::mt19937_64 rng(9);
    TrainBatch b;
    std::uniform_int_distribution<int> label(0, 2);
    for (std::size_t t = 0; t < frames; ++t) {
      b.frames.push_back(random_tensor({2, 3, 8, 8}, rng, false, 0.0, 1.0));
      std::vector<TaskTarget> tg(2);
      for (int i = 0; i < 128; ++i) tg[0].classes.push_back(label(rng));
      tg[1].depth = random_coeffs(128, rng);
      tg[1].depth_mask.assign(128, 1);
      b.targets.push_back(tg);
    }
    return b;
  }
};

TEST_F(TrainStepTest, RecordReconstitutesTotal) {
  SlowFastModel model(tiny(), 1);
  std::mt19937_64 rng(2);
  Discriminator d(4, 4, rng);
  AdamState mo(model.parameters(), {1e-3}), dopt(d.parameters(), {1e-3});
  LossConfig loss;
  loss.alpha = 0.6;
  loss.beta = 0.8;
  Trainer tr{model, d, mo, dopt, loss, 3};
  const auto rec = train_step(batch(4), tr);
  ASSERT_EQ(rec.task.size(), 2u);
  EXPECT_NEAR(rec.total, rec.task[0] + rec.task[1] + 0.6 * rec.l1 + 0.8 * rec.adversarial, 1e-9);
  EXPECT_EQ(mo.steps(), 1u);
  EXPECT_EQ(dopt.steps(), 1u);
}

TEST_F(TrainStepTest, BetaZeroFreezesDiscriminator) {
  SlowFastModel model(tiny(), 1);
  std::mt19937_64 rng(2);
  Discriminator d(4, 4, rng);
  const std::vector<double> before(d.conv(0).weights.data().begin(),
                                   d.conv(0).weights.data().end());
  AdamState mo(model.parameters(), {1e-3}), dopt(d.parameters(), {1e-3});
  LossConfig loss;
  loss.beta = 0.0;
  Trainer tr{model, d, mo, dopt, loss, 3};
  train_step(batch(4), tr);
  EXPECT_EQ(dopt.steps(), 0u);
  for (std::size_t i = 0; i < before.size(); ++i)
    EXPECT_EQ(d.conv(0).weights.data()[i], before[i]);
}

TEST_F(TrainStepTest, RepeatedStepsReduceTheLoss) {
  SlowFastModel model(tiny(), 3);
  std::mt19937_64 rng(4);
  Discriminator d(4, 4, rng);
  AdamState mo(model.parameters(), {3e-3}), dopt(d.parameters(), {3e-3});
  LossConfig loss;
  loss.beta = 0.0;
  Trainer tr{model, d, mo, dopt, loss, 3};
  const auto b = batch(4);
  const double first = train_step(b, tr).total;
  double last = first;
  for (int i = 0; i < 30; ++i) last = train_step(b, tr).total;
  EXPECT_LT(last, 0.9 * first);
}

TEST_F(TrainStepTest, RejectsMismatchedTargets) {
  SlowFastModel model(tiny(), 1);
  std::mt19937_64 rng(2);
  Discriminator d(4, 4, rng);
  AdamState mo(model.parameters(), {}), dopt(d.parameters(), {});
  Trainer tr{model, d, mo, dopt, LossConfig{}, 3};
  auto b = batch(3);
  b.targets.pop_back();
  EXPECT_THROW(train_step(b, tr), std::invalid_argument);
}

}  // namespace
}  // namespace ilaprop
