#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "ilaprop/ops.hpp"
#include "ilaprop/tensor.hpp"

namespace ilaprop {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

using ParameterList = std::vector<NamedTensor>;

/// Square-kernel convolution with He-normal weights and zero bias. The
/// parameters are leaves with requires_grad set.
ConvParams make_conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                     std::size_t stride, std::size_t padding, std::mt19937_64& rng,
                     bool with_bias = true);

void append_conv(ParameterList& out, const std::string& prefix, const ConvParams& conv);

/// Tensor of i.i.d. uniform values in [lo, hi).
Tensor uniform_tensor(Shape shape, double lo, double hi, std::mt19937_64& rng,
                      bool requires_grad = false);

/// Deep copy of every parameter value into `dst` (names and shapes must match).
void copy_parameters(const ParameterList& src, ParameterList& dst);

}  // namespace ilaprop
