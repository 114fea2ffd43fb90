#include "ilaprop/reference.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace ilaprop::reference {

namespace {

void tally(MacCounter* counter, std::uint64_t n) {
  if (counter) counter->macs += n;
}

struct Embedded {
  Dims4 d;
  std::vector<double> query;   // h(f_k)
  std::vector<double> source;  // h(f_t)
};

Embedded embed(const ILAModule& module, const Tensor& f_k, const Tensor& f_t,
               MacCounter* counter) {
  if (f_k.shape() != f_t.shape()) {
    throw std::invalid_argument("ila_reference: shape mismatch " + to_string(f_k.shape()) +
                                " vs " + to_string(f_t.shape()));
  }
  Embedded e;
  e.d = f_k.dims4();
  if (e.d.c != module.config().channels) {
    throw std::invalid_argument("ila_reference: channel mismatch");
  }
  const auto q = conv2d_naive(f_k, module.h(), counter);
  const auto s = conv2d_naive(f_t, module.h(), counter);
  e.query.assign(q.data().begin(), q.data().end());
  e.source.assign(s.data().begin(), s.data().end());
  return e;
}

std::size_t idx(const Dims4& d, std::size_t b, std::size_t c, std::size_t i, std::size_t j) {
  return ((b * d.c + c) * d.h + i) * d.w + j;
}

// Logits and softmax weights for one query pixel over the L*L window.
void window_weights(const Embedded& e, std::size_t b, std::size_t i, std::size_t j, long r,
                    double scale, MacCounter* counter, std::vector<double>& weights,
                    std::vector<bool>& valid) {
  const auto& d = e.d;
  const std::size_t side = static_cast<std::size_t>(2 * r + 1);
  weights.assign(side * side, 0.0);
  valid.assign(side * side, false);
  double mx = -INFINITY;
  for (long dy = -r; dy <= r; ++dy) {
    for (long dx = -r; dx <= r; ++dx) {
      const std::size_t o = static_cast<std::size_t>((dy + r) * (2 * r + 1) + (dx + r));
      const long si = static_cast<long>(i) + dy;
      const long sj = static_cast<long>(j) + dx;
      const bool inside = si >= 0 && sj >= 0 && si < static_cast<long>(d.h) &&
                          sj < static_cast<long>(d.w);
      double logit = 0.0;
      for (std::size_t c = 0; c < d.c; ++c) {
        const double sv = inside ? e.source[idx(d, b, c, static_cast<std::size_t>(si),
                                                static_cast<std::size_t>(sj))]
                                 : 0.0;
        logit += e.query[idx(d, b, c, i, j)] * sv;
      }
      tally(counter, d.c);
      valid[o] = inside;
      weights[o] = logit * scale;
      if (inside && weights[o] > mx) mx = weights[o];
    }
  }
  double total = 0.0;
  for (std::size_t o = 0; o < weights.size(); ++o) {
    weights[o] = valid[o] ? std::exp(weights[o] - mx) : 0.0;
    total += weights[o];
  }
  for (auto& w : weights) w /= total;
}

}  // namespace

Tensor conv2d_naive(const Tensor& input, const ConvParams& params, MacCounter* counter) {
  const auto d = input.dims4();
  const std::size_t cout = params.weights.dim(0), cin = params.weights.dim(1);
  const std::size_t kh = params.weights.dim(2), kw = params.weights.dim(3);
  if (cin != d.c) throw std::invalid_argument("conv2d_naive: channel mismatch");
  const std::size_t s = params.stride, pad = params.padding;
  const std::size_t oh = conv_out_extent(d.h, kh, s, pad, "height");
  const std::size_t ow = conv_out_extent(d.w, kw, s, pad, "width");
  const std::size_t ph = d.h + 2 * pad, pw = d.w + 2 * pad;

  std::vector<double> padded(d.b * d.c * ph * pw, 0.0);
  for (std::size_t b = 0; b < d.b; ++b)
    for (std::size_t c = 0; c < d.c; ++c)
      for (std::size_t i = 0; i < d.h; ++i)
        for (std::size_t j = 0; j < d.w; ++j)
          padded[((b * d.c + c) * ph + i + pad) * pw + j + pad] = input.at(b, c, i, j);

  const auto w = params.weights.data();
  std::vector<double> out(d.b * cout * oh * ow, 0.0);
  for (std::size_t b = 0; b < d.b; ++b) {
    for (std::size_t o = 0; o < cout; ++o) {
      const double bias = params.bias.defined() ? params.bias.data()[o] : 0.0;
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x) {
          double acc = bias;
          for (std::size_t c = 0; c < cin; ++c) {
            for (std::size_t ky = 0; ky < kh; ++ky) {
              for (std::size_t kx = 0; kx < kw; ++kx) {
                acc += w[((o * cin + c) * kh + ky) * kw + kx] *
                       padded[((b * d.c + c) * ph + y * s + ky) * pw + x * s + kx];
                tally(counter, 1);
              }
            }
          }
          out[((b * cout + o) * oh + y) * ow + x] = acc;
        }
      }
    }
  }
  return Tensor::from_data({d.b, cout, oh, ow}, std::move(out));
}

Tensor ila_reference(const ILAModule& module, const Tensor& f_t, const Tensor& f_k,
                     MacCounter* counter) {
  const auto e = embed(module, f_k, f_t, counter);
  const auto& d = e.d;
  const long r = static_cast<long>(module.config().window / 2);
  std::vector<double> out(d.size(), 0.0);
  std::vector<double> weights;
  std::vector<bool> valid;
  for (std::size_t b = 0; b < d.b; ++b) {
    for (std::size_t i = 0; i < d.h; ++i) {
      for (std::size_t j = 0; j < d.w; ++j) {
        window_weights(e, b, i, j, r, module.config().logit_scale, counter, weights, valid);
        for (long dy = -r; dy <= r; ++dy) {
          for (long dx = -r; dx <= r; ++dx) {
            const std::size_t o = static_cast<std::size_t>((dy + r) * (2 * r + 1) + (dx + r));
            const long si = static_cast<long>(i) + dy;
            const long sj = static_cast<long>(j) + dx;
            for (std::size_t c = 0; c < d.c; ++c) {
              const double sv = valid[o] ? f_t.at(b, c, static_cast<std::size_t>(si),
                                                  static_cast<std::size_t>(sj))
                                         : 0.0;
              out[idx(d, b, c, i, j)] += weights[o] * sv;
            }
            tally(counter, d.c);
          }
        }
      }
    }
  }
  return Tensor::from_data(f_t.shape(), std::move(out));
}

Tensor ila_reference_weights(const ILAModule& module, const Tensor& f_k, const Tensor& f_t) {
  const auto e = embed(module, f_k, f_t, nullptr);
  const auto& d = e.d;
  const std::size_t side = module.config().window;
  const std::size_t positions = side * side;
  const long r = static_cast<long>(side / 2);
  std::vector<double> out(d.b * positions * d.plane(), 0.0);
  std::vector<double> weights;
  std::vector<bool> valid;
  for (std::size_t b = 0; b < d.b; ++b)
    for (std::size_t i = 0; i < d.h; ++i)
      for (std::size_t j = 0; j < d.w; ++j) {
        window_weights(e, b, i, j, r, module.config().logit_scale, nullptr, weights, valid);
        for (std::size_t o = 0; o < positions; ++o)
          out[((b * positions + o) * d.h + i) * d.w + j] = weights[o];
      }
  return Tensor::from_data({d.b, positions, d.h, d.w}, std::move(out));
}

Tensor global_attention_reference(const ILAModule& module, const Tensor& f_t, const Tensor& f_k,
                                  MacCounter* counter) {
  const auto e = embed(module, f_k, f_t, counter);
  const auto& d = e.d;
  const std::size_t n = d.plane();
  std::vector<double> out(d.size(), 0.0);
  std::vector<double> weights(n);
  for (std::size_t b = 0; b < d.b; ++b) {
    for (std::size_t i = 0; i < d.h; ++i) {
      for (std::size_t j = 0; j < d.w; ++j) {
        double mx = -INFINITY;
        for (std::size_t p = 0; p < n; ++p) {
          double logit = 0.0;
          for (std::size_t c = 0; c < d.c; ++c) {
            logit += e.query[idx(d, b, c, i, j)] * e.source[idx(d, b, c, p / d.w, p % d.w)];
          }
          tally(counter, d.c);
          weights[p] = logit * module.config().logit_scale;
          mx = std::max(mx, weights[p]);
        }
        double total = 0.0;
        for (auto& w : weights) {
          w = std::exp(w - mx);
          total += w;
        }
        for (std::size_t p = 0; p < n; ++p) {
          for (std::size_t c = 0; c < d.c; ++c) {
            out[idx(d, b, c, i, j)] += weights[p] / total * f_t.at(b, c, p / d.w, p % d.w);
          }
          tally(counter, d.c);
        }
      }
    }
  }
  return Tensor::from_data(f_t.shape(), std::move(out));
}

}  // namespace ilaprop::reference
