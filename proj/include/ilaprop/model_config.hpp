#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ilaprop/schedule.hpp"

namespace ilaprop {

/// One conv block. Stride 1 blocks use a 3x3 kernel with pad 1; stride 2
/// blocks use a 4x4 kernel with pad 1 so even extents halve exactly.
struct StageSpec {
  std::size_t out_channels = 16;
  std::size_t stride = 1;

  std::size_t kernel() const { return stride == 1 ? 3 : 2 * stride; }
  std::size_t padding() const { return stride == 1 ? 1 : stride / 2; }
  bool operator==(const StageSpec&) const = default;
};

struct EncoderConfig {
  Branch branch = Branch::Slow;
  std::size_t in_channels = 3;
  std::vector<StageSpec> stages;

  std::size_t feature_channels() const;
  std::size_t total_stride() const;
  bool operator==(const EncoderConfig&) const = default;
};

enum class TaskKind { segmentation, depth };

struct TaskSpec {
  std::string name;
  TaskKind kind = TaskKind::segmentation;
  /// Class count for segmentation, 1 for depth.
  std::size_t out_channels = 1;

  bool operator==(const TaskSpec&) const = default;
};

/// How propagated slots are filled for the decoder.
enum class Propagation {
  ila,     // local window attention
  global,  // dense attention over the whole map
  none,    // every slot holds the current frame's own features
};

std::string to_string(Propagation p);
std::string to_string(Routing r);

struct ModelConfig {
  std::size_t channels = 16;
  EncoderConfig slow;
  EncoderConfig fast;
  std::size_t se_reduction = 4;
  std::size_t decoder_width1 = 32;
  std::size_t decoder_width2 = 16;
  std::vector<TaskSpec> tasks;
  std::size_t window = 5;
  double logit_scale = 1.0;
  Propagation propagation = Propagation::ila;
  Routing routing = Routing::previous_frame;

  std::size_t feature_stride() const { return slow.total_stride(); }
  bool operator==(const ModelConfig&) const = default;
};

/// Slow: 6 blocks, Fast: 2 blocks, both ending at stride 4 with `channels`
/// features; decoder widths 2C and C; segmentation + depth tasks.
ModelConfig desk_model_config(std::size_t num_classes = 4, std::size_t channels = 16);

EncoderConfig default_encoder(Branch branch, std::size_t channels, std::size_t in_channels = 3);

/// Throws std::invalid_argument naming the first violated constraint.
void validate(const ModelConfig& config);

}  // namespace ilaprop
