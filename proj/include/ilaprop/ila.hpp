#pragma once

#include <cstddef>
#include <random>
#include <string>

#include "ilaprop/layers.hpp"
#include "ilaprop/ops.hpp"
#include "ilaprop/tensor.hpp"

namespace ilaprop {

enum class Boundary { mask_out_of_bounds };

struct ILAConfig {
  /// Odd window side L; the window holds L*L offsets.
  std::size_t window = 5;
  Boundary boundary = Boundary::mask_out_of_bounds;
  std::size_t channels = 16;
  /// Multiplies the inner-product logits. 1 means unscaled.
  double logit_scale = 1.0;
  /// global_attention refuses maps with more pixels than this.
  std::size_t global_pixel_cap = 64 * 64;
};

void validate(const ILAConfig& config);

/// Softmax weights over window offsets, laid out [B, L*L, H, W]. Offset index
/// (dy + r) * L + (dx + r) addresses source pixel (i + dy, j + dx).
struct AttentionWeights {
  Tensor values;
  Mask valid_mask;
  std::size_t window = 0;
  /// Dense layout [B, H*W, H, W]: position p is source pixel p.
  bool dense = false;
};

/// Inter-frame local attention: a single 3x3 C->C convolution h applied to
/// both feature maps, a local softmax over inner products, and the weighted
/// combination of source features.
class ILAModule {
 public:
  ILAModule(ILAConfig config, std::mt19937_64& rng);
  ILAModule(ILAConfig config, ConvParams h);

  const ILAConfig& config() const { return config_; }
  const ConvParams& h() const { return h_; }
  ParameterList parameters(const std::string& prefix) const;

 private:
  ILAConfig config_;
  ConvParams h_;
};

/// Weights for propagating from f_t onto the pixels of f_k.
AttentionWeights compute_weights(const ILAModule& module, const Tensor& f_k, const Tensor& f_t);

/// f_{t->k}(i,j) = sum over valid offsets of W(i,j,offset) * f_t(i+dy, j+dx).
Tensor propagate(const Tensor& f_t, const AttentionWeights& weights);

/// Propagates f_t onto f_k's grid.
Tensor ila_forward(const ILAModule& module, const Tensor& f_t, const Tensor& f_k);

/// Dense variant: every pixel of f_k attends to every pixel of f_t.
AttentionWeights compute_global_weights(const ILAModule& module, const Tensor& f_k,
                                        const Tensor& f_t);
Tensor global_attention(const ILAModule& module, const Tensor& f_t, const Tensor& f_k);

}  // namespace ilaprop
