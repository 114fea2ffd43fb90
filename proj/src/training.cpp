#include "ilaprop/training.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

#include "ilaprop/ops.hpp"
#include "ilaprop/schedule.hpp"

namespace ilaprop {

Discriminator::Discriminator(std::size_t in_channels, std::size_t width, std::mt19937_64& rng)
    : c1_(make_conv(in_channels, width, 3, 1, 1, rng)),
      c2_(make_conv(width, width, 3, 1, 1, rng)),
      c3_(make_conv(width, 1, 3, 1, 1, rng)) {}

Discriminator::Discriminator(ConvParams c1, ConvParams c2, ConvParams c3)
    : c1_(std::move(c1)), c2_(std::move(c2)), c3_(std::move(c3)) {
  if (c2_.in_channels() != c1_.out_channels() || c3_.in_channels() != c2_.out_channels() ||
      c3_.out_channels() != 1) {
    throw std::invalid_argument("discriminator convolutions do not chain to one output channel");
  }
}

const ConvParams& Discriminator::conv(std::size_t i) const {
  switch (i) {
    case 0: return c1_;
    case 1: return c2_;
    case 2: return c3_;
  }
  throw std::out_of_range("discriminator has three convolutions");
}

ConvParams& Discriminator::conv(std::size_t i) {
  return const_cast<ConvParams&>(std::as_const(*this).conv(i));
}

ParameterList Discriminator::parameters(const std::string& prefix) const {
  ParameterList out;
  append_conv(out, prefix + ".conv1", c1_);
  append_conv(out, prefix + ".conv2", c2_);
  append_conv(out, prefix + ".conv3", c3_);
  return out;
}

Tensor discriminator_forward(const Discriminator& d, const Tensor& features) {
  const auto dims = features.dims4();
  if (dims.c != d.in_channels()) {
    throw std::invalid_argument("discriminator expects " + std::to_string(d.in_channels()) +
                                " channels, got features " + to_string(features.shape()));
  }
  Tensor x = relu(conv2d(features, d.conv(0)));
  x = relu(conv2d(x, d.conv(1)));
  x = conv2d(x, d.conv(2));
  return sigmoid(global_avg_pool(x));
}

double LossConfig::task_weight(std::size_t task) const {
  return task_weights.empty() ? 1.0 : task_weights.at(task);
}

void validate(const LossConfig& c, std::size_t num_tasks) {
  if (!(c.alpha >= 0.0) || !(c.beta >= 0.0)) {
    throw std::invalid_argument("loss weights alpha and beta must be >= 0");
  }
  if (!c.task_weights.empty() && c.task_weights.size() != num_tasks) {
    throw std::invalid_argument("expected " + std::to_string(num_tasks) + " task weights, got " +
                                std::to_string(c.task_weights.size()));
  }
  for (double w : c.task_weights) {
    if (!(w >= 0.0)) throw std::invalid_argument("task weights must be >= 0");
  }
  if (!(c.prob_eps > 0.0 && c.prob_eps < 0.5)) {
    throw std::invalid_argument("probability clamp must be in (0, 0.5)");
  }
}

TaskLossTerms task_loss(std::span<const Tensor> predictions, std::span<const TaskTarget> targets,
                        std::span<const TaskSpec> tasks, const LossConfig& config) {
  if (predictions.size() != tasks.size() || targets.size() != tasks.size()) {
    throw std::invalid_argument("task_loss: " + std::to_string(tasks.size()) + " tasks, " +
                                std::to_string(predictions.size()) + " predictions, " +
                                std::to_string(targets.size()) + " targets");
  }
  validate(config, tasks.size());
  TaskLossTerms out;
  std::vector<double> weights;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    if (tasks[t].kind == TaskKind::segmentation) {
      out.per_task.push_back(cross_entropy(predictions[t], targets[t].classes));
    } else {
      out.per_task.push_back(masked_l1(predictions[t], targets[t].depth, targets[t].depth_mask));
    }
    weights.push_back(config.task_weight(t));
  }
  out.total = weighted_total(out.per_task, weights);
  return out;
}

MimicTerms mimic_loss(const Tensor& slow_features, const Tensor& fast_features,
                      const Discriminator& d, const LossConfig& config) {
  if (slow_features.shape() != fast_features.shape()) {
    throw std::invalid_argument("mimic_loss: slow " + to_string(slow_features.shape()) +
                                " vs fast " + to_string(fast_features.shape()));
  }
  const double lo = config.prob_eps;
  const double hi = 1.0 - config.prob_eps;
  const Tensor slow = slow_features.detach();

  MimicTerms out;
  out.l1 = mean(abs(sub(slow, fast_features)));
  const Tensor p_slow = discriminator_forward(d, slow);
  const Tensor p_fast =
      discriminator_forward(d, gradient_reversal(fast_features, config.grl_lambda));
  const Tensor log_real = mean(log_clamped(p_slow, lo, hi));
  const Tensor log_fake = mean(log_clamped(one_minus(p_fast), lo, hi));
  const Tensor parts[] = {log_real, log_fake};
  const double minus_one[] = {-1.0, -1.0};
  out.adversarial = weighted_total(parts, minus_one);
  const Tensor terms[] = {out.l1, out.adversarial};
  const double weights[] = {config.alpha, config.beta};
  out.total = weighted_total(terms, weights);

  std::size_t correct = 0;
  for (double p : p_slow.data()) correct += p > 0.5;
  for (double p : p_fast.data()) correct += p < 0.5;
  out.d_accuracy = static_cast<double>(correct) / static_cast<double>(2 * p_slow.numel());
  return out;
}

AdamState::AdamState(const ParameterList& params, AdamConfig config) : config_(config) {
  if (!(config_.lr > 0.0)) throw std::invalid_argument("Adam learning rate must be > 0");
  if (!(config_.beta1 >= 0.0 && config_.beta1 < 1.0) ||
      !(config_.beta2 >= 0.0 && config_.beta2 < 1.0)) {
    throw std::invalid_argument("Adam betas must be in [0, 1)");
  }
  if (!(config_.eps > 0.0)) throw std::invalid_argument("Adam epsilon must be > 0");
  for (const auto& p : params) {
    shapes_.push_back(p.tensor.shape());
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void adam_step(ParameterList& params, AdamState& state) {
  if (params.size() != state.m_.size()) {
    throw std::invalid_argument("Adam state tracks " + std::to_string(state.m_.size()) +
                                " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].tensor.shape() != state.shapes_[i]) {
      throw std::invalid_argument("Adam: parameter " + params[i].name + " changed shape");
    }
    if (!params[i].tensor.has_grad()) continue;
    for (double g : params[i].tensor.grad()) {
      if (std::isnan(g)) throw std::runtime_error("NaN gradient in parameter " + params[i].name);
    }
  }
  const auto& c = state.config_;
  ++state.step_;
  const double t = static_cast<double>(state.step_);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& tensor = params[i].tensor;
    auto value = tensor.mutable_data();
    auto& m = state.m_[i];
    auto& v = state.v_[i];
    const bool has = tensor.has_grad();
    const std::span<const double> grad = has ? tensor.grad() : std::span<const double>{};
    for (std::size_t k = 0; k < value.size(); ++k) {
      const double g = has ? grad[k] : 0.0;
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g;
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g * g;
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      value[k] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  }
}

LossRecord train_step(const TrainBatch& batch, Trainer& trainer) {
  const auto& model = trainer.model;
  const auto& cfg = model.config();
  const std::size_t num_frames = batch.frames.size();
  if (num_frames == 0) throw std::invalid_argument("train_step: empty batch");
  if (batch.targets.size() != num_frames) {
    throw std::invalid_argument("train_step: targets cover " +
                                std::to_string(batch.targets.size()) + " frames, batch has " +
                                std::to_string(num_frames));
  }
  validate(trainer.loss, cfg.tasks.size());
  const Schedule schedule = periodic_schedule(num_frames, trainer.keyframe_interval, cfg.routing);

  PropagationState state;
  std::vector<std::vector<Tensor>> per_task(cfg.tasks.size());
  std::vector<Tensor> l1_terms;
  std::vector<Tensor> adv_terms;
  double d_accuracy = 0.0;
  for (std::size_t t = 0; t < num_frames; ++t) {
    const FrameOutput out = model.forward_frame(batch.frames[t], schedule[t], state);
    const auto losses = task_loss(out.predictions, batch.targets[t], cfg.tasks, trainer.loss);
    for (std::size_t k = 0; k < cfg.tasks.size(); ++k) per_task[k].push_back(losses.per_task[k]);
    if (schedule[t].branch == Branch::Slow) {
      const Tensor fast = model.encode(batch.frames[t], Branch::Fast);
      const auto mimic =
          mimic_loss(out.encoder_features, fast, trainer.discriminator, trainer.loss);
      l1_terms.push_back(mimic.l1);
      adv_terms.push_back(mimic.adversarial);
      d_accuracy += mimic.d_accuracy;
    }
  }

  std::vector<Tensor> terms;
  std::vector<double> weights;
  for (std::size_t k = 0; k < cfg.tasks.size(); ++k) {
    const std::vector<double> avg(num_frames, 1.0 / static_cast<double>(num_frames));
    terms.push_back(weighted_total(per_task[k], avg));
    weights.push_back(trainer.loss.task_weight(k));
  }
  const std::vector<double> pair_avg(l1_terms.size(), 1.0 / static_cast<double>(l1_terms.size()));
  terms.push_back(weighted_total(l1_terms, pair_avg));
  weights.push_back(trainer.loss.alpha);
  terms.push_back(weighted_total(adv_terms, pair_avg));
  weights.push_back(trainer.loss.beta);
  const Tensor total = weighted_total(terms, weights);

  LossRecord record;
  for (std::size_t k = 0; k < cfg.tasks.size(); ++k) record.task.push_back(terms[k].item());
  record.l1 = terms[cfg.tasks.size()].item();
  record.adversarial = terms[cfg.tasks.size() + 1].item();
  record.total = total.item();
  record.d_accuracy = d_accuracy / static_cast<double>(l1_terms.size());

  auto model_params = model.parameters();
  auto disc_params = trainer.discriminator.parameters();
  for (auto& p : model_params) p.tensor.zero_grad();
  for (auto& p : disc_params) p.tensor.zero_grad();
  backward(total);
  adam_step(model_params, trainer.model_optimizer);
  if (trainer.loss.beta > 0.0) adam_step(disc_params, trainer.discriminator_optimizer);
  return record;
}

}  // namespace ilaprop
