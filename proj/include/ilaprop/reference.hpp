#pragma once

#include <cstdint>

#include "ilaprop/ila.hpp"
#include "ilaprop/ops.hpp"
#include "ilaprop/tensor.hpp"

// Direct nested-loop implementations used as oracles. They share no code
// with the graph operations and record no gradients. Every multiply-add they
// execute is tallied in an optional counter, so the analytic cost formulas can
// be checked against work actually performed.
namespace ilaprop::reference {

struct MacCounter {
  std::uint64_t macs = 0;
};

/// Loops over every kernel tap of a zero-padded input, padding included.
Tensor conv2d_naive(const Tensor& input, const ConvParams& params, MacCounter* counter = nullptr);

/// Local attention with the logits and the weighted sum evaluated over all
/// L*L offsets of a zero-padded window; out-of-bounds offsets are then
/// excluded from the softmax and contribute zero weight.
Tensor ila_reference(const ILAModule& module, const Tensor& f_t, const Tensor& f_k,
                     MacCounter* counter = nullptr);

/// The per-pixel attention weights of ila_reference, [B, L*L, H, W].
Tensor ila_reference_weights(const ILAModule& module, const Tensor& f_k, const Tensor& f_t);

Tensor global_attention_reference(const ILAModule& module, const Tensor& f_t, const Tensor& f_k,
                                  MacCounter* counter = nullptr);

}  // namespace ilaprop::reference
