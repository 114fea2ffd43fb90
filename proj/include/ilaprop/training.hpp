#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ilaprop/layers.hpp"
#include "ilaprop/model_config.hpp"
#include "ilaprop/network.hpp"
#include "ilaprop/tensor.hpp"

namespace ilaprop {

/// Three 3x3 convolutions (ReLU between them), global average pooling and a
/// sigmoid: one probability per batch element that the features come from the
/// Slow encoder.
class Discriminator {
 public:
  Discriminator(std::size_t in_channels, std::size_t width, std::mt19937_64& rng);
  Discriminator(ConvParams c1, ConvParams c2, ConvParams c3);

  std::size_t in_channels() const { return c1_.in_channels(); }
  const ConvParams& conv(std::size_t i) const;
  ConvParams& conv(std::size_t i);
  ParameterList parameters(const std::string& prefix = "disc") const;

 private:
  ConvParams c1_, c2_, c3_;
};

/// Probabilities [B,1,1,1].
Tensor discriminator_forward(const Discriminator& d, const Tensor& features);

struct LossConfig {
  double alpha = 1.0;
  double beta = 1.0;
  /// One weight per task; empty means all 1.
  std::vector<double> task_weights;
  double grl_lambda = 1.0;
  /// D outputs are clamped to [eps, 1 - eps] before the logs.
  double prob_eps = 1e-7;

  double task_weight(std::size_t task) const;
};

void validate(const LossConfig& config, std::size_t num_tasks);

/// Ground truth for one task on a [B,...,H,W] batch. Segmentation uses
/// `classes`; depth uses `depth` and `depth_mask`.
struct TaskTarget {
  std::vector<int> classes;
  std::vector<double> depth;
  std::vector<std::uint8_t> depth_mask;
};

struct TaskLossTerms {
  std::vector<Tensor> per_task;  // unweighted
  Tensor total;                  // sum of weight * per_task
};

/// Cross-entropy for segmentation tasks, masked mean absolute error for
/// depth tasks, combined with the configured task weights.
TaskLossTerms task_loss(std::span<const Tensor> predictions, std::span<const TaskTarget> targets,
                        std::span<const TaskSpec> tasks, const LossConfig& config);

struct MimicTerms {
  Tensor l1;           // mean |slow - fast|
  Tensor adversarial;  // L_D = -[log D(slow) + log(1 - D(GRL(fast)))], batch mean
  Tensor total;        // alpha * l1 + beta * adversarial
  double d_accuracy = 0.0;
};

/// Feature mimicking objective. Slow features are treated as constants; the
/// fast features reach D through a gradient-reversal layer, so a single
/// minimisation trains D to discriminate and the Fast encoder to fool it.
MimicTerms mimic_loss(const Tensor& slow_features, const Tensor& fast_features,
                      const Discriminator& d, const LossConfig& config);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
};

class AdamState {
 public:
  AdamState(const ParameterList& params, AdamConfig config);

  const AdamConfig& config() const { return config_; }
  std::size_t steps() const { return step_; }
  std::span<const double> first_moment(std::size_t i) const { return m_.at(i); }
  std::span<const double> second_moment(std::size_t i) const { return v_.at(i); }

 private:
  friend void adam_step(ParameterList& params, AdamState& state);
  AdamConfig config_;
  std::vector<Shape> shapes_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t step_ = 0;
};

/// Bias-corrected Adam update from the gradients stored on `params`. A
/// parameter without gradient is treated as having a zero gradient.
void adam_step(ParameterList& params, AdamState& state);

/// One batch of clips folded into the batch axis: frames[t] is [B,3,H,W] and
/// targets[t][task] covers the same B clips.
struct TrainBatch {
  std::vector<Tensor> frames;
  std::vector<std::vector<TaskTarget>> targets;
};

struct LossRecord {
  std::vector<double> task;  // unweighted, averaged over frames
  double l1 = 0.0;
  double adversarial = 0.0;
  double total = 0.0;
  double d_accuracy = 0.0;
};

struct Trainer {
  SlowFastModel& model;
  Discriminator& discriminator;
  AdamState& model_optimizer;
  AdamState& discriminator_optimizer;
  LossConfig loss;
  std::size_t keyframe_interval = 5;
};

/// Forward over the periodic schedule, one joint backward of the task and
/// mimicking losses, then one Adam step for the model and one for D (skipped
/// when beta is 0). Keyframes are also encoded by the Fast branch to form
/// the mimicking pairs.
LossRecord train_step(const TrainBatch& batch, Trainer& trainer);

}  // namespace ilaprop
