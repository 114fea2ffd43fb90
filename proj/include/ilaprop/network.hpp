#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ilaprop/flops.hpp"
#include "ilaprop/ila.hpp"
#include "ilaprop/layers.hpp"
#include "ilaprop/model_config.hpp"
#include "ilaprop/schedule.hpp"
#include "ilaprop/tensor.hpp"

namespace ilaprop {

/// Stack of conv blocks; ReLU after every block except the last.
class Encoder {
 public:
  Encoder() = default;
  Encoder(EncoderConfig config, std::mt19937_64& rng);

  Tensor forward(const Tensor& frame) const;
  const EncoderConfig& config() const { return config_; }
  ParameterList parameters(const std::string& prefix) const;

 private:
  EncoderConfig config_;
  std::vector<ConvParams> convs_;
};

/// Squeeze-and-excitation: x * sigmoid(W2 relu(W1 gap(x))), per channel.
class SEBlock {
 public:
  SEBlock(std::size_t channels, std::size_t reduction, std::mt19937_64& rng);

  /// Per-channel gate in (0,1), shape [B,C,1,1].
  Tensor gate(const Tensor& x) const;
  Tensor forward(const Tensor& x) const;
  ParameterList parameters(const std::string& prefix) const;

  ConvParams& reduce() { return reduce_; }
  ConvParams& expand() { return expand_; }

 private:
  ConvParams reduce_;
  ConvParams expand_;
};

/// Per-task decoder path: SE block, one ILA module per propagation edge, and
/// the fuse-and-decode convolutions ending in a 1x1 head.
struct TaskBranch {
  std::size_t task_id = 0;
  TaskSpec spec;
  SEBlock se;
  ILAModule key_edge;
  ILAModule prev_edge;
  ConvParams decode1;  // 3x3, 3C -> width1
  ConvParams decode2;  // 1x1, width1 -> width2
  ConvParams decode3;  // 1x1, width2 -> width2
  ConvParams head;     // 1x1, width2 -> task outputs

  ParameterList parameters() const;
};

struct FeatureCache {
  std::optional<std::size_t> frame;
  std::vector<Tensor> features;  // per task SE outputs
};

/// Sources for multi-frame routing. Updated after every frame.
struct PropagationState {
  FeatureCache keyframe;
  FeatureCache previous;
  FeatureCache last_non_keyframe;

  void reset() { *this = PropagationState{}; }
};

struct FrameOutput {
  std::size_t frame_index = 0;
  Branch branch = Branch::Slow;
  Tensor encoder_features;
  std::vector<Tensor> task_features;
  /// Decoder inputs [f_cur, propagated_key, propagated_prev], per task.
  std::vector<Tensor> decoder_inputs;
  /// Per-task predictions at input resolution.
  std::vector<Tensor> predictions;
};

class SlowFastModel {
 public:
  SlowFastModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const std::vector<TaskBranch>& branches() const { return branches_; }
  std::vector<TaskBranch>& branches() { return branches_; }

  Tensor encode(const Tensor& frame, Branch branch) const;

  /// Runs one frame and updates the caches in `state`.
  FrameOutput forward_frame(const Tensor& frame, const ScheduleEntry& entry,
                            PropagationState& state) const;

  std::vector<FrameOutput> forward_sequence(std::span<const Tensor> frames,
                                            const Schedule& schedule) const;
  /// Periodic schedule with keyframe interval K.
  std::vector<FrameOutput> forward_sequence(std::span<const Tensor> frames,
                                            std::size_t keyframe_interval) const;

  ParameterList parameters() const;
  ParameterList encoder_parameters(Branch branch) const;

 private:
  ModelConfig config_;
  Encoder slow_;
  Encoder fast_;
  std::vector<TaskBranch> branches_;
};

/// Frames of one evaluation clip in temporal order; the last one is annotated.
struct AnnotatedClip {
  std::vector<Tensor> frames;
};

/// Metric values for the annotated frame of clip `clip_index`.
using MetricsFn = std::function<std::vector<double>(const FrameOutput&, std::size_t clip_index)>;

struct OffsetEvaluation {
  /// per_offset[d] = metrics averaged over clips at keyframe distance d.
  std::vector<std::vector<double>> per_offset;
  /// Unweighted mean over offsets.
  std::vector<double> mean;
  /// Cost of the annotated frame at each offset.
  std::vector<double> gflops_per_offset;
  double mean_gflops = 0.0;
};

/// Evaluates each annotated frame at every keyframe distance d in [0, K-1]
/// by running the eval_clip(d) schedule over its last d+1 frames.
OffsetEvaluation eval_offset_averaged(const SlowFastModel& model,
                                      std::span<const AnnotatedClip> clips,
                                      std::size_t keyframe_interval, const MetricsFn& metrics,
                                      flops::CountingMode mode = flops::CountingMode::mac_as_1);

}  // namespace ilaprop
