#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ilaprop/model_config.hpp"
#include "ilaprop/synthetic.hpp"
#include "ilaprop/training.hpp"

namespace ilaprop {

/// Everything one benchmark run depends on. Stored as `key = value` text.
struct ExperimentConfig {
  std::string name = "desk";

  // Model.
  std::size_t channels = 16;
  std::vector<StageSpec> slow_stages = {{16, 2}, {16, 1}, {16, 2}, {16, 1}, {16, 1}, {16, 1}};
  std::vector<StageSpec> fast_stages = {{16, 2}, {16, 2}};
  std::size_t se_reduction = 4;
  std::size_t decoder_width1 = 32;
  std::size_t decoder_width2 = 16;
  bool segmentation = true;
  bool depth = true;
  std::size_t keyframe_interval = 5;
  std::size_t window = 5;
  double logit_scale = 1.0;
  Propagation propagation = Propagation::ila;
  Routing routing = Routing::previous_frame;

  // Losses.
  double alpha = 1.0;
  double beta = 1.0;
  double grl_lambda = 1.0;
  double seg_weight = 1.0;
  double depth_weight = 1.0;
  // Narrow on purpose: a wider critic separates Slow from Fast within a few
  // dozen steps at this scale and its reversed gradient then dominates.
  std::size_t disc_width = 4;

  // Data.
  std::size_t height = 32;
  std::size_t width = 48;
  std::size_t shape_classes = 3;
  std::size_t objects = 3;
  std::size_t train_sequences = 96;
  std::size_t eval_sequences = 48;
  int max_speed = 2;
  double noise = 0.06;

  // Optimisation.
  double lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.99;
  double adam_eps = 1e-8;
  std::size_t steps = 600;
  std::size_t batch_size = 4;

  /// Model initialisation and batch order.
  std::uint64_t seed = 1;
  /// Train and held-out sequences; fixed across training seeds.
  std::uint64_t data_seed = 2024;
  std::string output_dir = "runs/desk";

  bool operator==(const ExperimentConfig&) const = default;
};

/// Throws std::invalid_argument naming the offending field.
void validate(const ExperimentConfig& config);

/// Parses `key = value` lines; `#` starts a comment line. Unknown or repeated
/// keys are errors. Missing keys keep their defaults. The result is validated.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

/// Every key, one per line, in a fixed order; parse_config inverts it.
std::string serialize_config(const ExperimentConfig& config);

/// Applies one `key=value` assignment, then re-validates.
void apply_override(ExperimentConfig& config, const std::string& assignment);
/// Applies every assignment in order and validates once at the end, so
/// coupled settings (channels and stages) can change together.
void apply_overrides(ExperimentConfig& config, std::span<const std::string> assignments);

/// Names of all accepted keys, in serialisation order.
std::vector<std::string> config_keys();

ModelConfig to_model_config(const ExperimentConfig& config);
SyntheticParams to_synthetic_params(const ExperimentConfig& config);
LossConfig to_loss_config(const ExperimentConfig& config);
AdamConfig to_adam_config(const ExperimentConfig& config);

}  // namespace ilaprop
