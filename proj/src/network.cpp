#include "ilaprop/network.hpp"

#include <stdexcept>
#include <utility>

#include "ilaprop/ops.hpp"

namespace ilaprop {

Encoder::Encoder(EncoderConfig config, std::mt19937_64& rng) : config_(std::move(config)) {
  std::size_t cin = config_.in_channels;
  for (const auto& s : config_.stages) {
    convs_.push_back(make_conv(cin, s.out_channels, s.kernel(), s.stride, s.padding(), rng));
    cin = s.out_channels;
  }
}

Tensor Encoder::forward(const Tensor& frame) const {
  const auto d = frame.dims4();
  if (d.c != config_.in_channels) {
    throw std::invalid_argument("encoder expects " + std::to_string(config_.in_channels) +
                                " input channels, got frame " + to_string(frame.shape()));
  }
  const std::size_t stride = config_.total_stride();
  if (d.h % stride != 0 || d.w % stride != 0) {
    throw std::invalid_argument("frame extents " + std::to_string(d.h) + "x" +
                                std::to_string(d.w) + " are not multiples of the encoder stride " +
                                std::to_string(stride));
  }
  Tensor x = frame;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    x = conv2d(x, convs_[i]);
    if (i + 1 < convs_.size()) x = relu(x);
  }
  return x;
}

ParameterList Encoder::parameters(const std::string& prefix) const {
  ParameterList out;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    append_conv(out, prefix + ".stage" + std::to_string(i), convs_[i]);
  }
  return out;
}

SEBlock::SEBlock(std::size_t channels, std::size_t reduction, std::mt19937_64& rng)
    : reduce_(make_conv(channels, channels / reduction, 1, 1, 0, rng)),
      expand_(make_conv(channels / reduction, channels, 1, 1, 0, rng)) {}

Tensor SEBlock::gate(const Tensor& x) const {
  return sigmoid(conv2d(relu(conv2d(global_avg_pool(x), reduce_)), expand_));
}

Tensor SEBlock::forward(const Tensor& x) const { return channel_scale(x, gate(x)); }

ParameterList SEBlock::parameters(const std::string& prefix) const {
  ParameterList out;
  append_conv(out, prefix + ".reduce", reduce_);
  append_conv(out, prefix + ".expand", expand_);
  return out;
}

ParameterList TaskBranch::parameters() const {
  const std::string p = "task" + std::to_string(task_id);
  ParameterList out = se.parameters(p + ".se");
  for (auto& n : key_edge.parameters(p + ".ila_key")) out.push_back(n);
  for (auto& n : prev_edge.parameters(p + ".ila_prev")) out.push_back(n);
  append_conv(out, p + ".decoder.conv1", decode1);
  append_conv(out, p + ".decoder.conv2", decode2);
  append_conv(out, p + ".decoder.conv3", decode3);
  append_conv(out, p + ".head", head);
  return out;
}

namespace {

ILAConfig edge_config(const ModelConfig& c) {
  ILAConfig ila;
  ila.window = c.window;
  ila.channels = c.channels;
  ila.logit_scale = c.logit_scale;
  return ila;
}

const FeatureCache& find_source(const PropagationState& state, std::size_t frame,
                                const char* edge) {
  for (const FeatureCache* c : {&state.previous, &state.last_non_keyframe, &state.keyframe}) {
    if (c->frame && *c->frame == frame && !c->features.empty()) return *c;
  }
  throw std::logic_error(std::string("propagation state holds no cached features of frame ") +
                         std::to_string(frame) + " for the " + edge + " edge");
}

}  // namespace

SlowFastModel::SlowFastModel(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)) {
  validate(config_);
  std::mt19937_64 rng(seed);
  slow_ = Encoder(config_.slow, rng);
  fast_ = Encoder(config_.fast, rng);
  const std::size_t c = config_.channels;
  for (std::size_t t = 0; t < config_.tasks.size(); ++t) {
    SEBlock se(c, config_.se_reduction, rng);
    ILAModule key(edge_config(config_), rng);
    ILAModule prev(edge_config(config_), rng);
    auto d1 = make_conv(3 * c, config_.decoder_width1, 3, 1, 1, rng);
    auto d2 = make_conv(config_.decoder_width1, config_.decoder_width2, 1, 1, 0, rng);
    auto d3 = make_conv(config_.decoder_width2, config_.decoder_width2, 1, 1, 0, rng);
    auto head = make_conv(config_.decoder_width2, config_.tasks[t].out_channels, 1, 1, 0, rng);
    branches_.push_back(TaskBranch{t, config_.tasks[t], std::move(se), std::move(key),
                                   std::move(prev), std::move(d1), std::move(d2), std::move(d3),
                                   std::move(head)});
  }
}

Tensor SlowFastModel::encode(const Tensor& frame, Branch branch) const {
  return branch == Branch::Slow ? slow_.forward(frame) : fast_.forward(frame);
}

FrameOutput SlowFastModel::forward_frame(const Tensor& frame, const ScheduleEntry& entry,
                                         PropagationState& state) const {
  for (const FeatureCache* c : {&state.previous, &state.keyframe, &state.last_non_keyframe}) {
    if (c->frame && *c->frame >= entry.frame_index) {
      throw std::logic_error("frame " + std::to_string(entry.frame_index) +
                             " processed after frame " + std::to_string(*c->frame));
    }
  }
  const FeatureCache* key_src =
      entry.keyframe_source ? &find_source(state, *entry.keyframe_source, "keyframe") : nullptr;
  const FeatureCache* prev_src =
      entry.previous_source ? &find_source(state, *entry.previous_source, "previous") : nullptr;

  FrameOutput out;
  out.frame_index = entry.frame_index;
  out.branch = entry.branch;
  out.encoder_features = encode(frame, entry.branch);
  const std::size_t stride = config_.feature_stride();

  for (const auto& br : branches_) {
    const Tensor f_cur = br.se.forward(out.encoder_features);
    auto propagate_from = [&](const FeatureCache* src, const ILAModule& edge) {
      if (!src || config_.propagation == Propagation::none) return f_cur;
      const Tensor& f_src = src->features[br.task_id];
      if (config_.propagation == Propagation::global) return global_attention(edge, f_src, f_cur);
      return ila_forward(edge, f_src, f_cur);
    };
    const Tensor slots[] = {f_cur, propagate_from(key_src, br.key_edge),
                            propagate_from(prev_src, br.prev_edge)};
    Tensor x = concat_channels(slots);
    out.decoder_inputs.push_back(x);
    x = relu(conv2d(x, br.decode1));
    x = relu(conv2d(x, br.decode2));
    x = relu(conv2d(x, br.decode3));
    x = conv2d(x, br.head);
    out.predictions.push_back(stride == 1 ? x : upsample_nearest(x, stride));
    out.task_features.push_back(f_cur);
  }

  FeatureCache current{entry.frame_index, out.task_features};
  if (entry.branch == Branch::Slow) {
    state.keyframe = current;
  } else {
    state.last_non_keyframe = current;
  }
  state.previous = std::move(current);
  return out;
}

std::vector<FrameOutput> SlowFastModel::forward_sequence(std::span<const Tensor> frames,
                                                         const Schedule& schedule) const {
  if (frames.empty()) throw std::invalid_argument("forward_sequence: empty frame sequence");
  if (schedule.size() != frames.size()) {
    throw std::invalid_argument("forward_sequence: schedule covers " +
                                std::to_string(schedule.size()) + " frames, got " +
                                std::to_string(frames.size()));
  }
  PropagationState state;
  std::vector<FrameOutput> outputs;
  outputs.reserve(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].shape() != frames[0].shape()) {
      throw std::invalid_argument("forward_sequence: inconsistent frame shapes");
    }
    outputs.push_back(forward_frame(frames[i], schedule[i], state));
  }
  return outputs;
}

std::vector<FrameOutput> SlowFastModel::forward_sequence(std::span<const Tensor> frames,
                                                         std::size_t keyframe_interval) const {
  return forward_sequence(frames,
                          periodic_schedule(frames.size(), keyframe_interval, config_.routing));
}

ParameterList SlowFastModel::parameters() const {
  ParameterList out = slow_.parameters("slow");
  for (auto& n : fast_.parameters("fast")) out.push_back(n);
  for (const auto& br : branches_) {
    for (auto& n : br.parameters()) out.push_back(n);
  }
  return out;
}

ParameterList SlowFastModel::encoder_parameters(Branch branch) const {
  return branch == Branch::Slow ? slow_.parameters("slow") : fast_.parameters("fast");
}

OffsetEvaluation eval_offset_averaged(const SlowFastModel& model,
                                      std::span<const AnnotatedClip> clips,
                                      std::size_t keyframe_interval, const MetricsFn& metrics,
                                      flops::CountingMode mode) {
  if (clips.empty()) throw std::invalid_argument("eval_offset_averaged: empty dataset");
  if (keyframe_interval == 0) throw std::invalid_argument("keyframe interval K must be >= 1");
  for (const auto& clip : clips) {
    if (clip.frames.size() < keyframe_interval) {
      throw std::invalid_argument("eval_offset_averaged: each clip needs at least K=" +
                                  std::to_string(keyframe_interval) + " frames");
    }
  }
  const auto d0 = clips[0].frames[0].dims4();
  OffsetEvaluation result;
  NoGradGuard no_grad;
  for (std::size_t offset = 0; offset < keyframe_interval; ++offset) {
    const Schedule schedule = eval_clip_schedule(offset, keyframe_interval, model.config().routing);
    std::vector<double> acc;
    for (std::size_t ci = 0; ci < clips.size(); ++ci) {
      const auto& frames = clips[ci].frames;
      std::span<const Tensor> window(frames.data() + frames.size() - (offset + 1), offset + 1);
      const auto outputs = model.forward_sequence(window, schedule);
      const auto values = metrics(outputs.back(), ci);
      if (acc.empty()) acc.assign(values.size(), 0.0);
      if (values.size() != acc.size()) {
        throw std::logic_error("metrics function returned a varying number of values");
      }
      for (std::size_t k = 0; k < values.size(); ++k) acc[k] += values[k];
    }
    for (auto& v : acc) v /= static_cast<double>(clips.size());
    result.per_offset.push_back(std::move(acc));
    result.gflops_per_offset.push_back(
        static_cast<double>(flops::frame_flops(model.config(), d0.h, d0.w, schedule.back(), mode)) /
        1e9);
  }
  const double n = static_cast<double>(keyframe_interval);
  result.mean.assign(result.per_offset[0].size(), 0.0);
  for (const auto& row : result.per_offset) {
    for (std::size_t k = 0; k < row.size(); ++k) result.mean[k] += row[k] / n;
  }
  for (double g : result.gflops_per_offset) result.mean_gflops += g / n;
  return result;
}

}  // namespace ilaprop
