#include "ilaprop/layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ilaprop {

ConvParams make_conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                     std::size_t stride, std::size_t padding, std::mt19937_64& rng,
                     bool with_bias) {
  if (in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0) {
    throw std::invalid_argument("make_conv: channel counts, kernel and stride must be positive");
  }
  const std::size_t fan_in = in_channels * kernel * kernel;
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  std::vector<double> w(out_channels * fan_in);
  for (auto& v : w) v = dist(rng);
  ConvParams p;
  p.weights = Tensor::from_data({out_channels, in_channels, kernel, kernel}, std::move(w), true);
  if (with_bias) p.bias = Tensor::zeros({out_channels}, true);
  p.stride = stride;
  p.padding = padding;
  return p;
}

void append_conv(ParameterList& out, const std::string& prefix, const ConvParams& conv) {
  out.push_back({prefix + ".weight", conv.weights});
  if (conv.bias.defined()) out.push_back({prefix + ".bias", conv.bias});
}

Tensor uniform_tensor(Shape shape, double lo, double hi, std::mt19937_64& rng,
                      bool requires_grad) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

void copy_parameters(const ParameterList& src, ParameterList& dst) {
  if (src.size() != dst.size()) throw std::invalid_argument("copy_parameters: count mismatch");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].name != dst[i].name || src[i].tensor.shape() != dst[i].tensor.shape()) {
      throw std::invalid_argument("copy_parameters: mismatch at " + src[i].name);
    }
    auto s = src[i].tensor.data();
    auto d = dst[i].tensor.mutable_data();
    std::copy(s.begin(), s.end(), d.begin());
  }
}

}  // namespace ilaprop
