#include "ilaprop/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace ilaprop {

namespace {

using detail::Node;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + to_string(a.shape()) +
                                " vs " + to_string(b.shape()));
  }
}

// Gradient buffer of input `i`, or nullptr when that input is constant.
double* grad_of(Node& self, std::size_t i) {
  auto& in = *self.inputs[i];
  return in.requires_grad ? in.grad.data() : nullptr;
}

const double* value_of(Node& self, std::size_t i) { return self.inputs[i]->value.data(); }

void im2col(const double* img, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad,
            std::size_t out_h, std::size_t out_w, double* col) {
  const std::size_t plane = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        double* row = col + ((c * kh + ky) * kw + kx) * plane;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          double* dst = row + oy * out_w;
          if (iy < 0 || iy >= static_cast<long>(height)) {
            std::fill(dst, dst + out_w, 0.0);
            continue;
          }
          const double* src = img + (c * height + static_cast<std::size_t>(iy)) * width;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(width)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im(const double* col, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t kh, std::size_t kw, std::size_t stride, std::size_t pad,
            std::size_t out_h, std::size_t out_w, double* img) {
  const std::size_t plane = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const double* row = col + ((c * kh + ky) * kw + kx) * plane;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(height)) continue;
          double* dst = img + (c * height + static_cast<std::size_t>(iy)) * width;
          const double* src = row + oy * out_w;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
            if (ix >= 0 && ix < static_cast<long>(width)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

using v4d = double __attribute__((vector_size(32)));

v4d load4(const double* p) {
  v4d v;
  __builtin_memcpy(&v, p, sizeof v);
  return v;
}

// c[m][n] += sum_k A(i,p) * b[p][n] with A(i,p) = a[i * a_rs + p * a_cs].
// 4x8 register tiles; edges fall back to scalar loops.
void gemm_core(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t a_rs,
               std::size_t a_cs, const double* __restrict b, double* __restrict c) {
  std::size_t i0 = 0;
  for (; i0 + 4 <= m; i0 += 4) {
    std::size_t j0 = 0;
    for (; j0 + 8 <= n; j0 += 8) {
      v4d c00{}, c01{}, c10{}, c11{}, c20{}, c21{}, c30{}, c31{};
      for (std::size_t p = 0; p < k; ++p) {
        const v4d b0 = load4(b + p * n + j0);
        const v4d b1 = load4(b + p * n + j0 + 4);
        const double* ap = a + i0 * a_rs + p * a_cs;
        const double x0 = ap[0], x1 = ap[a_rs], x2 = ap[2 * a_rs], x3 = ap[3 * a_rs];
        c00 += x0 * b0;
        c01 += x0 * b1;
        c10 += x1 * b0;
        c11 += x1 * b1;
        c20 += x2 * b0;
        c21 += x2 * b1;
        c30 += x3 * b0;
        c31 += x3 * b1;
      }
      const v4d tile[4][2] = {{c00, c01}, {c10, c11}, {c20, c21}, {c30, c31}};
      for (std::size_t r = 0; r < 4; ++r) {
        double* cr = c + (i0 + r) * n + j0;
        for (std::size_t q = 0; q < 4; ++q) {
          cr[q] += tile[r][0][q];
          cr[q + 4] += tile[r][1][q];
        }
      }
    }
    for (std::size_t r = 0; r < 4 && j0 < n; ++r) {
      double* cr = c + (i0 + r) * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = a[(i0 + r) * a_rs + p * a_cs];
        for (std::size_t j = j0; j < n; ++j) cr[j] += av * b[p * n + j];
      }
    }
  }
  for (; i0 < m; ++i0) {
    double* cr = c + i0 * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i0 * a_rs + p * a_cs];
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * b[p * n + j];
    }
  }
}

// c[m][n] += sum_k a[m][k] * b[k][n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  gemm_core(m, n, k, a, k, 1, b, c);
}

// c[m][n] += sum_k a[k][m] * b[k][n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  gemm_core(m, n, k, a, 1, m, b, c);
}

// c[m][n] += sum_k a[m][k] * b[n][k], computed as c^T = b a^T.
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c) {
  thread_local std::vector<double> at, ct;
  at.resize(k * m);
  ct.assign(n * m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) at[p * m + i] = a[i * k + p];
  }
  gemm_core(n, m, k, b, k, 1, at.data(), ct.data());
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < m; ++i) c[i * n + j] += ct[j * m + i];
  }
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return Tensor::make_result(x.shape(), std::move(out), name, {x}, [deriv](Node& self) {
    const double* xv = value_of(self, 0);
    double* gx = grad_of(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      gx[i] += self.grad[i] * deriv(xv[i], self.value[i]);
    }
  });
}

}  // namespace

Mask Mask::all(Shape shape, bool value) {
  Mask m;
  m.values.assign(numel(shape), value ? 1 : 0);
  m.shape = std::move(shape);
  return m;
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(values.begin(), values.end(), std::uint8_t{1}));
}

std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                            std::size_t padding, const char* axis_name) {
  if (stride == 0) throw std::invalid_argument("convolution stride must be positive");
  const std::size_t padded = in + 2 * padding;
  if (kernel == 0 || padded < kernel) {
    throw std::invalid_argument(std::string("convolution ") + axis_name + ": kernel " +
                                std::to_string(kernel) + " does not fit padded extent " +
                                std::to_string(padded));
  }
  if ((padded - kernel) % stride != 0) {
    throw std::invalid_argument(std::string("convolution ") + axis_name +
                                ": output extent (" + std::to_string(in) + " + 2*" +
                                std::to_string(padding) + " - " + std::to_string(kernel) +
                                ")/" + std::to_string(stride) + " + 1 is not an integer");
  }
  return (padded - kernel) / stride + 1;
}

Tensor conv2d(const Tensor& input, const ConvParams& params) {
  const auto d = input.dims4();
  const auto& w = params.weights;
  if (!w.defined() || w.rank() != 4) {
    throw std::invalid_argument("conv2d: weights must be [Cout,Cin,kh,kw]");
  }
  const std::size_t cout = w.dim(0), cin = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (cout == 0 || cin == 0) throw std::invalid_argument("conv2d: empty channel count");
  if (cin != d.c) {
    throw std::invalid_argument("conv2d: input channel dimension " + std::to_string(d.c) +
                                " does not match weight in_channels " + std::to_string(cin));
  }
  const bool has_bias = params.bias.defined();
  if (has_bias && params.bias.shape() != Shape{cout}) {
    throw std::invalid_argument("conv2d: bias shape " + to_string(params.bias.shape()) +
                                " does not match out_channels " + std::to_string(cout));
  }
  const std::size_t stride = params.stride, pad = params.padding;
  const std::size_t oh = conv_out_extent(d.h, kh, stride, pad, "height");
  const std::size_t ow = conv_out_extent(d.w, kw, stride, pad, "width");
  const std::size_t kdim = cin * kh * kw, plane = oh * ow;
  const bool direct = kh == 1 && kw == 1 && stride == 1 && pad == 0;

  std::vector<double> cols;
  if (!direct) {
    cols.resize(d.b * kdim * plane);
    for (std::size_t b = 0; b < d.b; ++b) {
      im2col(input.data().data() + b * d.c * d.plane(), d.c, d.h, d.w, kh, kw, stride, pad,
             oh, ow, cols.data() + b * kdim * plane);
    }
  }

  std::vector<double> out(d.b * cout * plane, 0.0);
  const double* wv = w.data().data();
  for (std::size_t b = 0; b < d.b; ++b) {
    double* ob = out.data() + b * cout * plane;
    if (has_bias) {
      for (std::size_t o = 0; o < cout; ++o) {
        std::fill(ob + o * plane, ob + (o + 1) * plane, params.bias.data()[o]);
      }
    }
    const double* col = direct ? input.data().data() + b * d.c * d.plane()
                               : cols.data() + b * kdim * plane;
    gemm_nn(cout, plane, kdim, wv, col, ob);
  }

  std::vector<Tensor> inputs{input, w};
  if (has_bias) inputs.push_back(params.bias);
  return Tensor::make_result(
      {d.b, cout, oh, ow}, std::move(out), "conv2d", std::move(inputs),
      [d, cout, kh, kw, stride, pad, oh, ow, kdim, plane, direct, has_bias,
       cols = std::move(cols)](Node& self) {
        const double* x = value_of(self, 0);
        const double* wv = value_of(self, 1);
        double* gx = grad_of(self, 0);
        double* gw = grad_of(self, 1);
        double* gb = has_bias ? grad_of(self, 2) : nullptr;
        std::vector<double> dcol(direct ? 0 : kdim * plane);
        for (std::size_t b = 0; b < d.b; ++b) {
          const double* g = self.grad.data() + b * cout * plane;
          if (gb) {
            for (std::size_t o = 0; o < cout; ++o) {
              double acc = 0.0;
              for (std::size_t p = 0; p < plane; ++p) acc += g[o * plane + p];
              gb[o] += acc;
            }
          }
          const double* col = direct ? x + b * d.c * d.plane() : cols.data() + b * kdim * plane;
          if (gw) gemm_nt(cout, kdim, plane, g, col, gw);
          if (gx) {
            if (direct) {
              gemm_tn(kdim, plane, cout, wv, g, gx + b * d.c * d.plane());
            } else {
              std::fill(dcol.begin(), dcol.end(), 0.0);
              gemm_tn(kdim, plane, cout, wv, g, dcol.data());
              col2im(dcol.data(), d.c, d.h, d.w, kh, kw, stride, pad, oh, ow,
                     gx + b * d.c * d.plane());
            }
          }
        }
      });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x, "sigmoid",
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor abs(const Tensor& x) {
  return unary(
      x, "abs", [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor log_clamped(const Tensor& x, double lo, double hi) {
  if (!(lo > 0.0) || !(hi >= lo)) throw std::invalid_argument("log_clamped: bad clamp range");
  return unary(
      x, "log", [lo, hi](double v) { return std::log(std::clamp(v, lo, hi)); },
      [lo, hi](double v, double) { return (v < lo || v > hi) ? 0.0 : 1.0 / v; });
}

Tensor one_minus(const Tensor& x) {
  return unary(
      x, "one_minus", [](double v) { return 1.0 - v; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, "scale", [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return Tensor::make_result(a.shape(), std::move(out), "add", {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (double* g = grad_of(self, k)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return Tensor::make_result(a.shape(), std::move(out), "sub", {a, b}, [](Node& self) {
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (double* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return Tensor::make_result(a.shape(), std::move(out), "mul", {a, b}, [](Node& self) {
    const double* av = value_of(self, 0);
    const double* bv = value_of(self, 1);
    if (double* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (double* g = grad_of(self, 1)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Tensor channel_scale(const Tensor& x, const Tensor& gate) {
  const auto d = x.dims4();
  if (gate.shape() != Shape{d.b, d.c, 1, 1}) {
    throw std::invalid_argument("channel_scale: gate shape " + to_string(gate.shape()) +
                                " does not match [B,C,1,1] for input " + to_string(x.shape()));
  }
  std::vector<double> out(x.numel());
  const std::size_t plane = d.plane();
  for (std::size_t bc = 0; bc < d.b * d.c; ++bc) {
    const double s = gate.data()[bc];
    for (std::size_t p = 0; p < plane; ++p) out[bc * plane + p] = x.data()[bc * plane + p] * s;
  }
  return Tensor::make_result(x.shape(), std::move(out), "channel_scale", {x, gate},
                             [plane](Node& self) {
                               const double* xv = value_of(self, 0);
                               const double* sv = value_of(self, 1);
                               double* gx = grad_of(self, 0);
                               double* gs = grad_of(self, 1);
                               const std::size_t n = self.grad.size() / plane;
                               for (std::size_t bc = 0; bc < n; ++bc) {
                                 const double* g = self.grad.data() + bc * plane;
                                 if (gx) {
                                   for (std::size_t p = 0; p < plane; ++p)
                                     gx[bc * plane + p] += g[p] * sv[bc];
                                 }
                                 if (gs) {
                                   double acc = 0.0;
                                   for (std::size_t p = 0; p < plane; ++p)
                                     acc += g[p] * xv[bc * plane + p];
                                   gs[bc] += acc;
                                 }
                               }
                             });
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const auto first = parts[0].dims4();
  std::size_t total_c = 0;
  std::vector<std::size_t> offsets;
  for (const auto& t : parts) {
    const auto d = t.dims4();
    if (d.b != first.b || d.h != first.h || d.w != first.w) {
      throw std::invalid_argument("concat_channels: shape mismatch " + to_string(t.shape()) +
                                  " vs " + to_string(parts[0].shape()));
    }
    offsets.push_back(total_c);
    total_c += d.c;
  }
  const std::size_t plane = first.plane();
  std::vector<double> out(first.b * total_c * plane);
  std::vector<std::size_t> widths;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t c = parts[k].dim(1);
    widths.push_back(c);
    for (std::size_t b = 0; b < first.b; ++b) {
      const double* src = parts[k].data().data() + b * c * plane;
      std::copy(src, src + c * plane, out.data() + (b * total_c + offsets[k]) * plane);
    }
  }
  return Tensor::make_result(
      {first.b, total_c, first.h, first.w}, std::move(out), "concat_channels",
      std::vector<Tensor>(parts.begin(), parts.end()),
      [batch = first.b, total_c, plane, offsets, widths](Node& self) {
        for (std::size_t k = 0; k < widths.size(); ++k) {
          double* g = grad_of(self, k);
          if (!g) continue;
          for (std::size_t b = 0; b < batch; ++b) {
            const double* src = self.grad.data() + (b * total_c + offsets[k]) * plane;
            double* dst = g + b * widths[k] * plane;
            for (std::size_t i = 0; i < widths[k] * plane; ++i) dst[i] += src[i];
          }
        }
      });
}

Tensor global_avg_pool(const Tensor& x) {
  const auto d = x.dims4();
  if (d.plane() == 0) throw std::invalid_argument("global_avg_pool: empty spatial extent");
  const std::size_t plane = d.plane();
  std::vector<double> out(d.b * d.c);
  for (std::size_t bc = 0; bc < out.size(); ++bc) {
    double acc = 0.0;
    for (std::size_t p = 0; p < plane; ++p) acc += x.data()[bc * plane + p];
    out[bc] = acc / static_cast<double>(plane);
  }
  return Tensor::make_result({d.b, d.c, 1, 1}, std::move(out), "global_avg_pool", {x},
                             [plane](Node& self) {
                               double* g = grad_of(self, 0);
                               const double inv = 1.0 / static_cast<double>(plane);
                               for (std::size_t bc = 0; bc < self.grad.size(); ++bc) {
                                 const double v = self.grad[bc] * inv;
                                 for (std::size_t p = 0; p < plane; ++p) g[bc * plane + p] += v;
                               }
                             });
}

Tensor upsample_nearest(const Tensor& x, std::size_t factor) {
  const auto d = x.dims4();
  if (factor == 0) throw std::invalid_argument("upsample_nearest: factor must be positive");
  const std::size_t oh = d.h * factor, ow = d.w * factor;
  std::vector<double> out(d.b * d.c * oh * ow);
  for (std::size_t bc = 0; bc < d.b * d.c; ++bc) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        out[(bc * oh + i) * ow + j] = x.data()[(bc * d.h + i / factor) * d.w + j / factor];
      }
    }
  }
  return Tensor::make_result({d.b, d.c, oh, ow}, std::move(out), "upsample_nearest", {x},
                             [d, factor, oh, ow](Node& self) {
                               double* g = grad_of(self, 0);
                               for (std::size_t bc = 0; bc < d.b * d.c; ++bc) {
                                 for (std::size_t i = 0; i < oh; ++i) {
                                   for (std::size_t j = 0; j < ow; ++j) {
                                     g[(bc * d.h + i / factor) * d.w + j / factor] +=
                                         self.grad[(bc * oh + i) * ow + j];
                                   }
                                 }
                               }
                             });
}

Tensor softmax(const Tensor& x, std::size_t axis, const Mask* mask) {
  const auto& shape = x.shape();
  if (axis >= shape.size()) {
    throw std::invalid_argument("softmax: axis " + std::to_string(axis) +
                                " invalid for shape " + to_string(shape));
  }
  if (mask && mask->shape != shape) {
    throw std::invalid_argument("softmax: mask shape " + to_string(mask->shape) +
                                " does not match " + to_string(shape));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t n = shape[axis];
  auto in = x.data();
  std::vector<double> out(in.size(), 0.0);
  std::vector<std::uint8_t> keep = mask ? mask->values : std::vector<std::uint8_t>(in.size(), 1);

  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t r = 0; r < inner; ++r) {
      const std::size_t base = o * n * inner + r;
      double mx = -std::numeric_limits<double>::infinity();
      bool any = false;
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t idx = base + k * inner;
        if (!keep[idx]) continue;
        any = true;
        mx = std::max(mx, in[idx]);
      }
      if (!any) throw std::invalid_argument("softmax: slice has no unmasked entry");
      double total = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t idx = base + k * inner;
        if (!keep[idx]) continue;
        out[idx] = std::exp(in[idx] - mx);
        total += out[idx];
      }
      const double inv = 1.0 / total;
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t idx = base + k * inner;
        if (keep[idx]) out[idx] *= inv;
      }
    }
  }
  return Tensor::make_result(
      shape, std::move(out), "softmax", {x},
      [outer, inner, n, keep = std::move(keep)](Node& self) {
        double* g = grad_of(self, 0);
        const auto& y = self.value;
        const auto& gy = self.grad;
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t r = 0; r < inner; ++r) {
            const std::size_t base = o * n * inner + r;
            double dotp = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
              const std::size_t idx = base + k * inner;
              if (keep[idx]) dotp += y[idx] * gy[idx];
            }
            for (std::size_t k = 0; k < n; ++k) {
              const std::size_t idx = base + k * inner;
              if (keep[idx]) g[idx] += y[idx] * (gy[idx] - dotp);
            }
          }
        }
      });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return Tensor::make_result({1}, {acc}, "sum", {x}, [](Node& self) {
    double* g = grad_of(self, 0);
    const std::size_t n = self.inputs[0]->value.size();
    for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw std::invalid_argument("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor dot(const Tensor& x, std::span<const double> coeffs) {
  if (coeffs.size() != x.numel()) {
    throw std::invalid_argument("dot: coefficient count " + std::to_string(coeffs.size()) +
                                " does not match tensor size " + std::to_string(x.numel()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < coeffs.size(); ++i) acc += x.data()[i] * coeffs[i];
  return Tensor::make_result(
      {1}, {acc}, "dot", {x},
      [c = std::vector<double>(coeffs.begin(), coeffs.end())](Node& self) {
        double* g = grad_of(self, 0);
        for (std::size_t i = 0; i < c.size(); ++i) g[i] += self.grad[0] * c[i];
      });
}

Tensor weighted_total(std::span<const Tensor> terms, std::span<const double> coeffs) {
  if (terms.size() != coeffs.size() || terms.empty()) {
    throw std::invalid_argument("weighted_total: need one coefficient per term");
  }
  double acc = 0.0;
  for (std::size_t k = 0; k < terms.size(); ++k) acc += coeffs[k] * terms[k].item();
  return Tensor::make_result(
      {1}, {acc}, "weighted_total", std::vector<Tensor>(terms.begin(), terms.end()),
      [c = std::vector<double>(coeffs.begin(), coeffs.end())](Node& self) {
        for (std::size_t k = 0; k < c.size(); ++k) {
          if (double* g = grad_of(self, k)) g[0] += self.grad[0] * c[k];
        }
      });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  const auto d = logits.dims4();
  const std::size_t plane = d.plane(), pixels = d.b * plane;
  if (labels.size() != pixels) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) +
                                " labels for " + std::to_string(pixels) + " pixels");
  }
  if (pixels == 0) throw std::invalid_argument("cross_entropy: empty input");
  auto z = logits.data();
  std::vector<double> prob(z.size());
  double loss = 0.0;
  for (std::size_t b = 0; b < d.b; ++b) {
    for (std::size_t p = 0; p < plane; ++p) {
      const int label = labels[b * plane + p];
      if (label < 0 || static_cast<std::size_t>(label) >= d.c) {
        throw std::invalid_argument("cross_entropy: label " + std::to_string(label) +
                                    " outside [0," + std::to_string(d.c) + ")");
      }
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < d.c; ++k) mx = std::max(mx, z[(b * d.c + k) * plane + p]);
      double total = 0.0;
      for (std::size_t k = 0; k < d.c; ++k) {
        const std::size_t idx = (b * d.c + k) * plane + p;
        prob[idx] = std::exp(z[idx] - mx);
        total += prob[idx];
      }
      for (std::size_t k = 0; k < d.c; ++k) prob[(b * d.c + k) * plane + p] /= total;
      const std::size_t lidx = (b * d.c + static_cast<std::size_t>(label)) * plane + p;
      loss += std::log(total) - (z[lidx] - mx);
    }
  }
  loss /= static_cast<double>(pixels);
  return Tensor::make_result(
      {1}, {loss}, "cross_entropy", {logits},
      [d, plane, pixels, prob = std::move(prob),
       labels = std::vector<int>(labels.begin(), labels.end())](Node& self) {
        double* g = grad_of(self, 0);
        const double s = self.grad[0] / static_cast<double>(pixels);
        for (std::size_t b = 0; b < d.b; ++b) {
          for (std::size_t p = 0; p < plane; ++p) {
            const auto label = static_cast<std::size_t>(labels[b * plane + p]);
            for (std::size_t k = 0; k < d.c; ++k) {
              const std::size_t idx = (b * d.c + k) * plane + p;
              g[idx] += s * (prob[idx] - (k == label ? 1.0 : 0.0));
            }
          }
        }
      });
}

Tensor masked_l1(const Tensor& pred, std::span<const double> target,
                 std::span<const std::uint8_t> mask) {
  const std::size_t n = pred.numel();
  if (target.size() != n || mask.size() != n) {
    throw std::invalid_argument("masked_l1: target/mask size does not match prediction " +
                                to_string(pred.shape()));
  }
  std::size_t count = 0;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    ++count;
    acc += std::fabs(pred.data()[i] - target[i]);
  }
  if (count == 0) throw std::invalid_argument("masked_l1: mask selects no pixel");
  std::vector<double> sign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const double diff = pred.data()[i] - target[i];
    sign[i] = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
  }
  const double inv = 1.0 / static_cast<double>(count);
  return Tensor::make_result({1}, {acc * inv}, "masked_l1", {pred},
                             [sign = std::move(sign), inv](Node& self) {
                               double* g = grad_of(self, 0);
                               const double s = self.grad[0] * inv;
                               for (std::size_t i = 0; i < sign.size(); ++i) g[i] += s * sign[i];
                             });
}

Tensor gradient_reversal(const Tensor& x, double lambda) {
  std::vector<double> out(x.data().begin(), x.data().end());
  return Tensor::make_result(x.shape(), std::move(out), "gradient_reversal", {x},
                             [lambda](Node& self) {
                               double* g = grad_of(self, 0);
                               for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                 g[i] += -lambda * self.grad[i];
                               }
                             });
}

namespace {

struct WindowSpan {
  std::size_t lo = 0;
  std::size_t hi = 0;  // exclusive
};

// Query coordinates q in [0, n) whose source q + off lies inside [0, n).
WindowSpan valid_span(long off, std::size_t n) {
  const long lo = std::max(0L, -off);
  const long hi = std::min(static_cast<long>(n), static_cast<long>(n) - off);
  if (hi <= lo) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

void require_window(std::size_t window) {
  if (window == 0 || window % 2 == 0) {
    throw std::invalid_argument("attention window must be odd and positive, got " +
                                std::to_string(window));
  }
}

}  // namespace

Tensor local_correlation(const Tensor& query, const Tensor& source, std::size_t window,
                         Mask& valid) {
  require_window(window);
  require_same_shape(query, source, "local_correlation");
  const auto d = query.dims4();
  const std::size_t positions = window * window, plane = d.plane();
  const long r = static_cast<long>(window / 2);
  Shape out_shape{d.b, positions, d.h, d.w};
  std::vector<double> out(numel(out_shape), 0.0);
  valid = Mask::all(out_shape, false);
  const double* q = query.data().data();
  const double* s = source.data().data();
  for (std::size_t b = 0; b < d.b; ++b) {
    for (std::size_t o = 0; o < positions; ++o) {
      const long dy = static_cast<long>(o / window) - r;
      const long dx = static_cast<long>(o % window) - r;
      const auto rows = valid_span(dy, d.h);
      const auto cols = valid_span(dx, d.w);
      double* dst = out.data() + (b * positions + o) * plane;
      std::uint8_t* vm = valid.values.data() + (b * positions + o) * plane;
      for (std::size_t i = rows.lo; i < rows.hi; ++i) {
        for (std::size_t j = cols.lo; j < cols.hi; ++j) vm[i * d.w + j] = 1;
      }
      for (std::size_t c = 0; c < d.c; ++c) {
        const double* qc = q + (b * d.c + c) * plane;
        const double* sc = s + (b * d.c + c) * plane;
        for (std::size_t i = rows.lo; i < rows.hi; ++i) {
          const std::size_t si = static_cast<std::size_t>(static_cast<long>(i) + dy);
          const double* qrow = qc + i * d.w;
          const double* srow = sc + si * d.w + dx;
          double* orow = dst + i * d.w;
          for (std::size_t j = cols.lo; j < cols.hi; ++j) orow[j] += qrow[j] * srow[j];
        }
      }
    }
  }
  return Tensor::make_result(
      std::move(out_shape), std::move(out), "local_correlation", {query, source},
      [d, window, positions, plane, r](Node& self) {
        const double* q = value_of(self, 0);
        const double* s = value_of(self, 1);
        double* gq = grad_of(self, 0);
        double* gs = grad_of(self, 1);
        for (std::size_t b = 0; b < d.b; ++b) {
          for (std::size_t o = 0; o < positions; ++o) {
            const long dy = static_cast<long>(o / window) - r;
            const long dx = static_cast<long>(o % window) - r;
            const auto rows = valid_span(dy, d.h);
            const auto cols = valid_span(dx, d.w);
            const double* g = self.grad.data() + (b * positions + o) * plane;
            for (std::size_t c = 0; c < d.c; ++c) {
              const std::size_t base = (b * d.c + c) * plane;
              for (std::size_t i = rows.lo; i < rows.hi; ++i) {
                const std::size_t si = static_cast<std::size_t>(static_cast<long>(i) + dy);
                const double* grow = g + i * d.w;
                const std::size_t qoff = base + i * d.w;
                const std::size_t soff = base + si * d.w;
                for (std::size_t j = cols.lo; j < cols.hi; ++j) {
                  const std::size_t sj = static_cast<std::size_t>(static_cast<long>(j) + dx);
                  if (gq) gq[qoff + j] += grow[j] * s[soff + sj];
                  if (gs) gs[soff + sj] += grow[j] * q[qoff + j];
                }
              }
            }
          }
        }
      });
}

Tensor local_aggregate(const Tensor& weights, const Tensor& source, std::size_t window) {
  require_window(window);
  const auto d = source.dims4();
  const std::size_t positions = window * window, plane = d.plane();
  if (weights.shape() != Shape{d.b, positions, d.h, d.w}) {
    throw std::invalid_argument("local_aggregate: weights shape " + to_string(weights.shape()) +
                                " does not match source " + to_string(source.shape()) +
                                " with window " + std::to_string(window));
  }
  const long r = static_cast<long>(window / 2);
  std::vector<double> out(d.size(), 0.0);
  const double* wv = weights.data().data();
  const double* s = source.data().data();
  for (std::size_t b = 0; b < d.b; ++b) {
    for (std::size_t o = 0; o < positions; ++o) {
      const long dy = static_cast<long>(o / window) - r;
      const long dx = static_cast<long>(o % window) - r;
      const auto rows = valid_span(dy, d.h);
      const auto cols = valid_span(dx, d.w);
      const double* wo = wv + (b * positions + o) * plane;
      for (std::size_t c = 0; c < d.c; ++c) {
        const double* sc = s + (b * d.c + c) * plane;
        double* oc = out.data() + (b * d.c + c) * plane;
        for (std::size_t i = rows.lo; i < rows.hi; ++i) {
          const std::size_t si = static_cast<std::size_t>(static_cast<long>(i) + dy);
          const double* srow = sc + si * d.w + dx;
          const double* wrow = wo + i * d.w;
          double* orow = oc + i * d.w;
          for (std::size_t j = cols.lo; j < cols.hi; ++j) orow[j] += wrow[j] * srow[j];
        }
      }
    }
  }
  return Tensor::make_result(
      source.shape(), std::move(out), "local_aggregate", {weights, source},
      [d, window, positions, plane, r](Node& self) {
        const double* wv = value_of(self, 0);
        const double* s = value_of(self, 1);
        double* gw = grad_of(self, 0);
        double* gs = grad_of(self, 1);
        for (std::size_t b = 0; b < d.b; ++b) {
          for (std::size_t o = 0; o < positions; ++o) {
            const long dy = static_cast<long>(o / window) - r;
            const long dx = static_cast<long>(o % window) - r;
            const auto rows = valid_span(dy, d.h);
            const auto cols = valid_span(dx, d.w);
            const std::size_t woff = (b * positions + o) * plane;
            for (std::size_t c = 0; c < d.c; ++c) {
              const std::size_t base = (b * d.c + c) * plane;
              for (std::size_t i = rows.lo; i < rows.hi; ++i) {
                const std::size_t si = static_cast<std::size_t>(static_cast<long>(i) + dy);
                for (std::size_t j = cols.lo; j < cols.hi; ++j) {
                  const std::size_t sj = static_cast<std::size_t>(static_cast<long>(j) + dx);
                  const double g = self.grad[base + i * d.w + j];
                  if (gw) gw[woff + i * d.w + j] += g * s[base + si * d.w + sj];
                  if (gs) gs[base + si * d.w + sj] += g * wv[woff + i * d.w + j];
                }
              }
            }
          }
        }
      });
}

Tensor dense_correlation(const Tensor& query, const Tensor& source) {
  require_same_shape(query, source, "dense_correlation");
  const auto d = query.dims4();
  const std::size_t n = d.plane();
  std::vector<double> out(d.b * n * n, 0.0);
  for (std::size_t b = 0; b < d.b; ++b) {
    // out[p][q] = sum_c source[c][p] * query[c][q]
    gemm_tn(n, n, d.c, source.data().data() + b * d.c * n, query.data().data() + b * d.c * n,
            out.data() + b * n * n);
  }
  return Tensor::make_result({d.b, n, d.h, d.w}, std::move(out), "dense_correlation",
                             {query, source}, [d, n](Node& self) {
                               const double* q = value_of(self, 0);
                               const double* s = value_of(self, 1);
                               double* gq = grad_of(self, 0);
                               double* gs = grad_of(self, 1);
                               for (std::size_t b = 0; b < d.b; ++b) {
                                 const double* g = self.grad.data() + b * n * n;
                                 const std::size_t off = b * d.c * n;
                                 // gq[c][q] += sum_p s[c][p] g[p][q]
                                 if (gq) gemm_nn(d.c, n, n, s + off, g, gq + off);
                                 // gs[c][p] += sum_q q[c][q] g[p][q]
                                 if (gs) gemm_nt(d.c, n, n, q + off, g, gs + off);
                               }
                             });
}

Tensor dense_aggregate(const Tensor& weights, const Tensor& source) {
  const auto d = source.dims4();
  const std::size_t n = d.plane();
  if (weights.shape() != Shape{d.b, n, d.h, d.w}) {
    throw std::invalid_argument("dense_aggregate: weights shape " + to_string(weights.shape()) +
                                " does not match source " + to_string(source.shape()));
  }
  std::vector<double> out(d.size(), 0.0);
  for (std::size_t b = 0; b < d.b; ++b) {
    // out[c][q] = sum_p source[c][p] * w[p][q]
    gemm_nn(d.c, n, n, source.data().data() + b * d.c * n, weights.data().data() + b * n * n,
            out.data() + b * d.c * n);
  }
  return Tensor::make_result(source.shape(), std::move(out), "dense_aggregate",
                             {weights, source}, [d, n](Node& self) {
                               const double* w = value_of(self, 0);
                               const double* s = value_of(self, 1);
                               double* gw = grad_of(self, 0);
                               double* gs = grad_of(self, 1);
                               for (std::size_t b = 0; b < d.b; ++b) {
                                 const double* g = self.grad.data() + b * d.c * n;
                                 const std::size_t off = b * d.c * n;
                                 // gw[p][q] += sum_c s[c][p] g[c][q]
                                 if (gw) gemm_tn(n, n, d.c, s + off, g, gw + b * n * n);
                                 // gs[c][p] += sum_q g[c][q] w[p][q]
                                 if (gs) gemm_nt(d.c, n, n, g, w + b * n * n, gs + off);
                               }
                             });
}

}  // namespace ilaprop
