#include "ilaprop/ila.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace ilaprop {

void validate(const ILAConfig& config) {
  if (config.window == 0 || config.window % 2 == 0) {
    throw std::invalid_argument("ILA window must be odd and positive, got " +
                                std::to_string(config.window));
  }
  if (config.channels == 0) throw std::invalid_argument("ILA channel count must be positive");
  if (!(config.logit_scale > 0.0)) throw std::invalid_argument("ILA logit scale must be > 0");
}

ILAModule::ILAModule(ILAConfig config, std::mt19937_64& rng) : config_(config) {
  validate(config_);
  h_ = make_conv(config_.channels, config_.channels, 3, 1, 1, rng);
}

ILAModule::ILAModule(ILAConfig config, ConvParams h) : config_(config), h_(std::move(h)) {
  validate(config_);
  const auto& s = h_.weights.shape();
  if (s != Shape{config_.channels, config_.channels, 3, 3} || h_.stride != 1 ||
      h_.padding != 1) {
    throw std::invalid_argument("ILA h must be a 3x3 C->C convolution with stride 1, pad 1; got " +
                                to_string(s));
  }
}

ParameterList ILAModule::parameters(const std::string& prefix) const {
  ParameterList out;
  append_conv(out, prefix + ".h", h_);
  return out;
}

namespace {

void check_inputs(const ILAModule& module, const Tensor& f_k, const Tensor& f_t) {
  const auto dk = f_k.dims4();
  const auto dt = f_t.dims4();
  if (!(dk == dt)) {
    throw std::invalid_argument("ILA inputs differ in shape: " + to_string(f_k.shape()) +
                                " vs " + to_string(f_t.shape()));
  }
  if (dk.c != module.config().channels) {
    throw std::invalid_argument("ILA input channels " + std::to_string(dk.c) +
                                " do not match module channels " +
                                std::to_string(module.config().channels));
  }
}

Tensor scaled(const Tensor& logits, double factor) {
  return factor == 1.0 ? logits : scale(logits, factor);
}

}  // namespace

AttentionWeights compute_weights(const ILAModule& module, const Tensor& f_k, const Tensor& f_t) {
  check_inputs(module, f_k, f_t);
  const auto d = f_k.dims4();
  const std::size_t window = module.config().window;
  if (window > 2 * std::min(d.h, d.w) - 1) {
    throw std::invalid_argument("ILA window " + std::to_string(window) +
                                " exceeds 2*min(H,W)-1 for a " + std::to_string(d.h) + "x" +
                                std::to_string(d.w) + " map");
  }
  // h is one object applied to both maps.
  const Tensor e_k = conv2d(f_k, module.h());
  const Tensor e_t = conv2d(f_t, module.h());
  AttentionWeights w;
  w.window = window;
  const Tensor logits = local_correlation(e_k, e_t, window, w.valid_mask);
  w.values = softmax(scaled(logits, module.config().logit_scale), 1, &w.valid_mask);
  return w;
}

Tensor propagate(const Tensor& f_t, const AttentionWeights& weights) {
  if (!weights.values.defined()) throw std::invalid_argument("propagate: empty attention weights");
  if (weights.dense) return dense_aggregate(weights.values, f_t);
  return local_aggregate(weights.values, f_t, weights.window);
}

Tensor ila_forward(const ILAModule& module, const Tensor& f_t, const Tensor& f_k) {
  return propagate(f_t, compute_weights(module, f_k, f_t));
}

AttentionWeights compute_global_weights(const ILAModule& module, const Tensor& f_k,
                                        const Tensor& f_t) {
  check_inputs(module, f_k, f_t);
  const auto d = f_k.dims4();
  if (d.plane() > module.config().global_pixel_cap) {
    throw std::invalid_argument("global attention on " + std::to_string(d.plane()) +
                                " pixels exceeds the cap of " +
                                std::to_string(module.config().global_pixel_cap));
  }
  const Tensor e_k = conv2d(f_k, module.h());
  const Tensor e_t = conv2d(f_t, module.h());
  AttentionWeights w;
  w.dense = true;
  const Tensor logits = dense_correlation(e_k, e_t);
  w.valid_mask = Mask::all(logits.shape(), true);
  w.values = softmax(scaled(logits, module.config().logit_scale), 1, &w.valid_mask);
  return w;
}

Tensor global_attention(const ILAModule& module, const Tensor& f_t, const Tensor& f_k) {
  auto w = compute_global_weights(module, f_k, f_t);
  return dense_aggregate(w.values, f_t);
}

}  // namespace ilaprop
