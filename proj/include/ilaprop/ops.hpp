#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ilaprop/tensor.hpp"

namespace ilaprop {

/// Boolean tensor used to exclude entries from reductions.
struct Mask {
  Shape shape;
  std::vector<std::uint8_t> values;

  static Mask all(Shape shape, bool value);
  bool operator[](std::size_t i) const { return values[i] != 0; }
  std::size_t count() const;
};

/// Weights [Cout,Cin,kh,kw], optional bias [Cout].
struct ConvParams {
  Tensor weights;
  Tensor bias;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_channels() const { return weights.dim(0); }
  std::size_t in_channels() const { return weights.dim(1); }
  std::size_t kernel_h() const { return weights.dim(2); }
  std::size_t kernel_w() const { return weights.dim(3); }
};

/// Output extent of a strided window; throws if the geometry does not tile.
std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                            std::size_t padding, const char* axis_name);

// Cross-correlation (no kernel flip), layout [B,C,H,W].
Tensor conv2d(const Tensor& input, const ConvParams& params);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// Elementwise ops require identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor abs(const Tensor& x);
/// log(clamp(x, lo, hi)); gradient is zero where the clamp is active.
Tensor log_clamped(const Tensor& x, double lo, double hi);
/// 1 - x
Tensor one_minus(const Tensor& x);

/// x[b,c,h,w] * gate[b,c,0,0]
Tensor channel_scale(const Tensor& x, const Tensor& gate);
Tensor concat_channels(std::span<const Tensor> parts);
Tensor global_avg_pool(const Tensor& x);
Tensor upsample_nearest(const Tensor& x, std::size_t factor);

/// Softmax along `axis`, max-subtracted. Masked entries are exactly zero and
/// are never read; a slice without any unmasked entry is an error.
Tensor softmax(const Tensor& x, std::size_t axis, const Mask* mask = nullptr);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// sum_i x_i * coeffs_i, coeffs treated as constants.
Tensor dot(const Tensor& x, std::span<const double> coeffs);
/// sum_i coeffs_i * terms_i over scalar tensors.
Tensor weighted_total(std::span<const Tensor> terms, std::span<const double> coeffs);

/// Mean pixel-wise cross-entropy of logits [B,K,H,W] against class indices
/// laid out as [B,H,W].
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);
/// Mean |pred - target| over entries where mask is set. pred is [B,1,H,W].
Tensor masked_l1(const Tensor& pred, std::span<const double> target,
                 std::span<const std::uint8_t> mask);

/// Identity forward, gradient multiplied by -lambda backward.
Tensor gradient_reversal(const Tensor& x, double lambda);

// Attention kernels. Weights and logits are laid out [B, P, H, W] where P
// indexes source positions for the query pixel (h, w).

/// Inner products between query[b,:,i,j] and source[b,:,i+dy,j+dx] for the
/// window offsets dy,dx in [-r, r], r = window/2, offset index
/// (dy + r) * window + (dx + r). Out-of-bounds offsets are zero and flagged
/// invalid in `valid`.
Tensor local_correlation(const Tensor& query, const Tensor& source, std::size_t window,
                         Mask& valid);
/// out[b,c,i,j] = sum over valid offsets of weights[b,o,i,j] * source[b,c,i+dy,j+dx]
Tensor local_aggregate(const Tensor& weights, const Tensor& source, std::size_t window);

/// Inner products between every query pixel and every source pixel:
/// out[b, p, i, j] with p = source pixel index (y * W + x).
Tensor dense_correlation(const Tensor& query, const Tensor& source);
Tensor dense_aggregate(const Tensor& weights, const Tensor& source);

}  // namespace ilaprop
