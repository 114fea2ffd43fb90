#include "ilaprop/metrics.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ilaprop {

namespace {

void check_pair(std::size_t a, std::size_t b, const char* what) {
  if (a == 0 || b == 0) throw std::invalid_argument(std::string(what) + ": empty maps");
  if (a != b) {
    throw std::invalid_argument(std::string(what) + ": size mismatch " + std::to_string(a) +
                                " vs " + std::to_string(b));
  }
}

}  // namespace

double miou(std::span<const int> pred, std::span<const int> gt, std::size_t num_classes) {
  check_pair(pred.size(), gt.size(), "miou");
  std::vector<std::size_t> inter(num_classes, 0);
  std::vector<std::size_t> uni(num_classes, 0);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const int p = pred[i];
    const int g = gt[i];
    if (p < 0 || g < 0 || static_cast<std::size_t>(p) >= num_classes ||
        static_cast<std::size_t>(g) >= num_classes) {
      throw std::invalid_argument("miou: label outside [0, " + std::to_string(num_classes) + ")");
    }
    if (p == g) {
      ++inter[g];
      ++uni[g];
    } else {
      ++uni[g];
      ++uni[p];
    }
  }
  double total = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (uni[c] == 0) continue;
    total += static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
    ++present;
  }
  return total / static_cast<double>(present);
}

double pixel_accuracy(std::span<const int> pred, std::span<const int> gt) {
  check_pair(pred.size(), gt.size(), "pixel_accuracy");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) hits += pred[i] == gt[i];
  return static_cast<double>(hits) / static_cast<double>(gt.size());
}

DepthErrors depth_errors(std::span<const double> pred, std::span<const double> gt,
                         std::span<const std::uint8_t> mask) {
  check_pair(pred.size(), gt.size(), "depth_errors");
  if (mask.size() != gt.size()) throw std::invalid_argument("depth_errors: mask size mismatch");
  DepthErrors e;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!mask[i]) continue;
    if (!(gt[i] > 0.0)) throw std::invalid_argument("depth_errors: ground truth must be > 0");
    const double diff = std::abs(pred[i] - gt[i]);
    e.abs_err += diff;
    e.rel_err += diff / gt[i];
    ++n;
  }
  if (n == 0) throw std::invalid_argument("depth_errors: empty mask");
  e.abs_err /= static_cast<double>(n);
  e.rel_err /= static_cast<double>(n);
  return e;
}

std::vector<int> argmax_labels(const Tensor& logits) {
  const auto d = logits.dims4();
  const auto x = logits.data();
  std::vector<int> out(d.b * d.plane());
  for (std::size_t b = 0; b < d.b; ++b) {
    for (std::size_t p = 0; p < d.plane(); ++p) {
      std::size_t best = 0;
      double best_v = x[b * d.c * d.plane() + p];
      for (std::size_t k = 1; k < d.c; ++k) {
        const double v = x[(b * d.c + k) * d.plane() + p];
        if (v > best_v) {
          best_v = v;
          best = k;
        }
      }
      out[b * d.plane() + p] = static_cast<int>(best);
    }
  }
  return out;
}

}  // namespace ilaprop
