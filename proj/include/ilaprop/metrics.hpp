#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ilaprop/tensor.hpp"

namespace ilaprop {

/// Mean IoU over the classes present in gt or pred.
double miou(std::span<const int> pred, std::span<const int> gt, std::size_t num_classes);

double pixel_accuracy(std::span<const int> pred, std::span<const int> gt);

struct DepthErrors {
  double abs_err = 0.0;
  /// Mean of |pred - gt| / gt, as a fraction.
  double rel_err = 0.0;
};

DepthErrors depth_errors(std::span<const double> pred, std::span<const double> gt,
                         std::span<const std::uint8_t> mask);

/// Per-pixel argmax over the class axis of logits [B,K,H,W], laid out [B,H,W].
std::vector<int> argmax_labels(const Tensor& logits);

}  // namespace ilaprop
