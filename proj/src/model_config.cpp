#include "ilaprop/model_config.hpp"

#include <stdexcept>

namespace ilaprop {

std::size_t EncoderConfig::feature_channels() const {
  return stages.empty() ? 0 : stages.back().out_channels;
}

std::size_t EncoderConfig::total_stride() const {
  std::size_t s = 1;
  for (const auto& st : stages) s *= st.stride;
  return s;
}

std::string to_string(Propagation p) {
  switch (p) {
    case Propagation::ila: return "ila";
    case Propagation::global: return "global";
    case Propagation::none: return "none";
  }
  return "?";
}

std::string to_string(Routing r) {
  return r == Routing::previous_frame ? "previous_frame" : "last_non_keyframe";
}

EncoderConfig default_encoder(Branch branch, std::size_t channels, std::size_t in_channels) {
  EncoderConfig e;
  e.branch = branch;
  e.in_channels = in_channels;
  if (branch == Branch::Slow) {
    e.stages = {{channels, 2}, {channels, 1}, {channels, 2},
                {channels, 1}, {channels, 1}, {channels, 1}};
  } else {
    e.stages = {{channels, 2}, {channels, 2}};
  }
  return e;
}

ModelConfig desk_model_config(std::size_t num_classes, std::size_t channels) {
  ModelConfig m;
  m.channels = channels;
  m.slow = default_encoder(Branch::Slow, channels);
  m.fast = default_encoder(Branch::Fast, channels);
  m.decoder_width1 = 2 * channels;
  m.decoder_width2 = channels;
  m.tasks = {{"segmentation", TaskKind::segmentation, num_classes},
             {"depth", TaskKind::depth, 1}};
  return m;
}

namespace {

void check_encoder(const EncoderConfig& e, const char* name) {
  if (e.stages.empty()) throw std::invalid_argument(std::string(name) + " encoder has no stages");
  if (e.in_channels == 0) throw std::invalid_argument(std::string(name) + " encoder input has no channels");
  for (const auto& s : e.stages) {
    if (s.out_channels == 0 || (s.stride != 1 && s.stride != 2)) {
      throw std::invalid_argument(std::string(name) +
                                  " encoder stages need positive channels and stride 1 or 2");
    }
  }
}

std::size_t total_width(const EncoderConfig& e) {
  std::size_t w = 0;
  for (const auto& s : e.stages) w += s.out_channels;
  return w;
}

}  // namespace

void validate(const ModelConfig& config) {
  check_encoder(config.slow, "slow");
  check_encoder(config.fast, "fast");
  if (config.slow.branch != Branch::Slow || config.fast.branch != Branch::Fast) {
    throw std::invalid_argument("encoder branch tags are swapped");
  }
  if (config.slow.feature_channels() != config.channels ||
      config.fast.feature_channels() != config.channels) {
    throw std::invalid_argument("both encoders must end with " + std::to_string(config.channels) +
                                " feature channels");
  }
  if (config.slow.total_stride() != config.fast.total_stride()) {
    throw std::invalid_argument("slow and fast encoders must share the same total stride");
  }
  if (config.slow.in_channels != config.fast.in_channels) {
    throw std::invalid_argument("slow and fast encoders must take the same input channels");
  }
  const bool deeper = config.slow.stages.size() > config.fast.stages.size();
  const bool wider = total_width(config.slow) > total_width(config.fast);
  if (!deeper && !wider) {
    throw std::invalid_argument("slow encoder must have more stages or channels than fast");
  }
  if (config.se_reduction == 0 || config.channels % config.se_reduction != 0 ||
      config.channels / config.se_reduction == 0) {
    throw std::invalid_argument("SE reduction must divide the channel count");
  }
  if (config.decoder_width1 == 0 || config.decoder_width2 == 0) {
    throw std::invalid_argument("decoder widths must be positive");
  }
  if (config.tasks.empty()) throw std::invalid_argument("model needs at least one task");
  for (const auto& t : config.tasks) {
    if (t.out_channels == 0) throw std::invalid_argument("task " + t.name + " has no outputs");
    if (t.kind == TaskKind::depth && t.out_channels != 1) {
      throw std::invalid_argument("depth task " + t.name + " must have one output channel");
    }
    if (t.kind == TaskKind::segmentation && t.out_channels < 2) {
      throw std::invalid_argument("segmentation task " + t.name + " needs at least two classes");
    }
  }
  if (config.window == 0 || config.window % 2 == 0) {
    throw std::invalid_argument("ILA window must be odd and positive, got " +
                                std::to_string(config.window));
  }
  if (!(config.logit_scale > 0.0)) throw std::invalid_argument("logit scale must be positive");
}

}  // namespace ilaprop
