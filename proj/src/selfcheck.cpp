#include "ilaprop/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "ilaprop/flops.hpp"
#include "ilaprop/gradcheck.hpp"
#include "ilaprop/ila.hpp"
#include "ilaprop/layers.hpp"
#include "ilaprop/network.hpp"
#include "ilaprop/ops.hpp"
#include "ilaprop/reference.hpp"
#include "ilaprop/training.hpp"

namespace ilaprop {

namespace {

constexpr double kEps = 1e-5;
constexpr double kGradTol = 1e-4;

std::vector<double> coeffs(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

Tensor rand(Shape shape, std::mt19937_64& rng, bool grad = true, double lo = -1.0,
            double hi = 1.0) {
  return uniform_tensor(std::move(shape), lo, hi, rng, grad);
}

CheckResult grad_case(const std::string& name, const std::function<Tensor()>& f,
                      std::vector<Tensor> leaves) {
  const double e = finite_diff_check(f, leaves, kEps);
  return {name, e < kGradTol, e, kGradTol};
}

ILAModule module_with_bias(std::size_t channels, std::size_t window, std::mt19937_64& rng) {
  ILAConfig cfg;
  cfg.channels = channels;
  cfg.window = window;
  ConvParams h = make_conv(channels, channels, 3, 1, 1, rng);
  h.bias = rand({channels}, rng);
  return ILAModule(cfg, h);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  }
  return m;
}

}  // namespace

bool all_passed(const std::vector<CheckResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const auto& r) { return r.pass; });
}

std::vector<CheckResult> run_gradcheck_suite() {
  std::mt19937_64 rng(2718);
  std::vector<CheckResult> out;

  {
    ConvParams conv = make_conv(3, 4, 3, 1, 1, rng);
    conv.bias = rand({4}, rng);
    Tensor x = rand({2, 3, 5, 4}, rng);
    const auto c = coeffs(2 * 4 * 5 * 4, rng);
    out.push_back(grad_case("conv2d 3x3", [&] { return dot(conv2d(x, conv), c); },
                            {x, conv.weights, conv.bias}));
  }
  {
    ConvParams conv = make_conv(2, 3, 4, 2, 1, rng);
    Tensor x = rand({1, 2, 6, 8}, rng);
    const auto c = coeffs(3 * 3 * 4, rng);
    out.push_back(grad_case("conv2d 4x4 stride 2", [&] { return dot(conv2d(x, conv), c); },
                            {x, conv.weights, conv.bias}));
  }
  {
    Tensor a = rand({2, 3, 2, 2}, rng);
    Tensor b = rand({2, 3, 2, 2}, rng, true, 0.2, 0.8);
    const auto c = coeffs(24, rng);
    out.push_back(grad_case(
        "elementwise",
        [&] {
          Tensor y = add(mul(sigmoid(a), b), sub(scale(relu(a), 0.7), one_minus(b)));
          return dot(add(y, log_clamped(b, 1e-3, 10.0)), c);
        },
        {a, b}));
  }
  {
    Tensor x = rand({2, 3, 3, 2}, rng);
    Tensor y = rand({2, 2, 3, 2}, rng);
    Tensor g = rand({2, 3, 1, 1}, rng);
    const auto c1 = coeffs(2 * 5 * 6 * 4, rng);
    const auto c2 = coeffs(6, rng);
    out.push_back(grad_case(
        "channel ops, pooling, upsampling",
        [&] {
          Tensor parts[] = {channel_scale(x, g), y};
          return add(dot(upsample_nearest(concat_channels(parts), 2), c1),
                     dot(global_avg_pool(x), c2));
        },
        {x, y, g}));
  }
  {
    Tensor x = rand({2, 5, 2, 3}, rng, true, -2.0, 2.0);
    Mask mask = Mask::all(x.shape(), true);
    for (std::size_t i = 0; i < mask.values.size(); i += 4) mask.values[i] = 0;
    const auto c = coeffs(x.numel(), rng);
    out.push_back(
        grad_case("masked softmax", [&] { return dot(softmax(x, 1, &mask), c); }, {x}));
  }
  {
    Tensor logits = rand({2, 4, 2, 3}, rng);
    Tensor pred = rand({2, 1, 2, 3}, rng);
    const std::vector<int> labels{0, 1, 2, 3, 0, 1, 3, 3, 2, 1, 0, 2};
    const auto target = coeffs(12, rng);
    std::vector<std::uint8_t> mask(12, 1);
    mask[5] = 0;
    out.push_back(grad_case(
        "task losses",
        [&] {
          Tensor terms[] = {cross_entropy(logits, labels), masked_l1(pred, target, mask)};
          const double w[] = {1.0, 0.5};
          return weighted_total(terms, w);
        },
        {logits, pred}));
  }
  {
    Tensor q = rand({1, 3, 4, 5}, rng);
    Tensor s = rand({1, 3, 4, 5}, rng);
    Tensor w = rand({1, 9, 4, 5}, rng);
    const auto c1 = coeffs(9 * 20, rng);
    const auto c2 = coeffs(3 * 20, rng);
    out.push_back(grad_case(
        "attention kernels",
        [&] {
          Mask valid;
          Tensor terms[] = {dot(local_correlation(q, s, 3, valid), c1),
                            dot(local_aggregate(w, s, 3), c2)};
          const double k[] = {1.0, 1.0};
          return weighted_total(terms, k);
        },
        {q, s, w}));
  }
  {
    SEBlock se(4, 2, rng);
    se.reduce().bias = rand({2}, rng);
    se.expand().bias = rand({4}, rng);
    Tensor x = rand({2, 4, 3, 2}, rng);
    const auto c = coeffs(x.numel(), rng);
    std::vector<Tensor> leaves{x};
    for (auto& p : se.parameters("se")) leaves.push_back(p.tensor);
    out.push_back(grad_case("SE block", [&] { return dot(se.forward(x), c); }, leaves));
  }
  {
    ILAModule m = module_with_bias(3, 3, rng);
    Tensor f_t = rand({1, 3, 4, 5}, rng);
    Tensor f_k = rand({1, 3, 4, 5}, rng);
    const auto c = coeffs(60, rng);
    out.push_back(grad_case("ILA", [&] { return dot(ila_forward(m, f_t, f_k), c); },
                            {f_t, f_k, m.h().weights, m.h().bias}));
    out.push_back(grad_case(
        "global attention", [&] { return dot(global_attention(m, f_t, f_k), c); },
        {f_t, f_k, m.h().weights}));
  }
  {
    Discriminator d(3, 4, rng);
    Tensor slow = rand({2, 3, 3, 3}, rng, false);
    Tensor fast = rand({2, 3, 3, 3}, rng);
    LossConfig cfg;
    auto loss = [&] { return mimic_loss(slow, fast, d, cfg).total; };
    std::vector<Tensor> leaves;
    for (auto& p : d.parameters()) leaves.push_back(p.tensor);
    out.push_back(grad_case("discriminator", loss, leaves));

    // Through the reversal the fast gradient is the negated derivative of L_D.
    cfg.alpha = 0.0;
    fast.zero_grad();
    backward(loss());
    const std::vector<double> analytic(fast.grad().begin(), fast.grad().end());
    double worst = 0.0;
    auto x = fast.mutable_data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double keep = x[i];
      x[i] = keep + kEps;
      const double up = loss().item();
      x[i] = keep - kEps;
      const double down = loss().item();
      x[i] = keep;
      const double numeric = (up - down) / (2.0 * kEps);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(analytic[i] + numeric) / denom);
    }
    out.push_back({"gradient reversal sign", worst < kGradTol, worst, kGradTol});
  }
  {
    ModelConfig cfg = desk_model_config(3, 4);
    cfg.slow.stages = {{4, 2}, {4, 1}};
    cfg.fast.stages = {{4, 2}};
    cfg.decoder_width1 = 4;
    cfg.decoder_width2 = 3;
    cfg.window = 3;
    SlowFastModel model(cfg, 7);
    // Positive biases keep the ReLUs active and away from their kinks.
    std::uniform_real_distribution<double> u(0.05, 0.3);
    std::vector<Tensor> leaves;
    for (auto& p : model.parameters()) {
      if (p.name.ends_with(".bias")) {
        for (double& v : p.tensor.mutable_data()) v = u(rng);
      }
      leaves.push_back(p.tensor);
    }
    std::vector<Tensor> frames;
    for (int i = 0; i < 3; ++i) frames.push_back(rand({1, 3, 4, 4}, rng, false, -3.0, 3.0));
    const std::vector<int> labels{0, 1, 2, 1, 0, 2, 2, 1, 0, 0, 1, 2, 2, 2, 1, 0};
    const auto depth = coeffs(16, rng);
    const std::vector<std::uint8_t> mask(16, 1);
    out.push_back(grad_case(
        "3-frame sequence",
        [&] {
          std::vector<Tensor> terms;
          for (const auto& f : model.forward_sequence(frames, 2)) {
            terms.push_back(cross_entropy(f.predictions[0], labels));
            terms.push_back(masked_l1(f.predictions[1], depth, mask));
          }
          const std::vector<double> w(terms.size(), 1.0);
          return weighted_total(terms, w);
        },
        leaves));
  }
  return out;
}

std::vector<CheckResult> run_oracle_suite() {
  std::mt19937_64 rng(3141);
  std::vector<CheckResult> out;
  constexpr double tol = 1e-6;

  double worst = 0.0;
  double worst_weights = 0.0;
  const std::size_t windows[] = {1, 3, 5, 7};
  for (int k = 0; k < 20; ++k) {
    const std::size_t window = windows[k % 4];
    std::uniform_int_distribution<std::size_t> extent(window / 2 + 1, 10), ch(1, 8), batch(1, 2);
    const std::size_t b = batch(rng), c = ch(rng), h = extent(rng), w = extent(rng);
    ILAModule m = module_with_bias(c, window, rng);
    Tensor f_t = rand({b, c, h, w}, rng, false);
    Tensor f_k = rand({b, c, h, w}, rng, false);
    worst = std::max(worst, max_abs_diff(ila_forward(m, f_t, f_k),
                                         reference::ila_reference(m, f_t, f_k)));
    worst_weights =
        std::max(worst_weights, max_abs_diff(compute_weights(m, f_k, f_t).values,
                                             reference::ila_reference_weights(m, f_k, f_t)));
  }
  out.push_back({"ILA vs reference", worst <= tol, worst, tol});
  out.push_back({"ILA weights vs reference", worst_weights <= tol, worst_weights, tol});

  worst = 0.0;
  for (std::size_t n = 1; n <= 5; ++n) {
    ILAModule m = module_with_bias(3, 2 * n - 1, rng);
    Tensor f_t = rand({2, 3, n, n}, rng, false);
    Tensor f_k = rand({2, 3, n, n}, rng, false);
    worst = std::max(worst, max_abs_diff(ila_forward(m, f_t, f_k), global_attention(m, f_t, f_k)));
    worst = std::max(worst, max_abs_diff(global_attention(m, f_t, f_k),
                                         reference::global_attention_reference(m, f_t, f_k)));
  }
  out.push_back({"full window vs global attention", worst <= tol, worst, tol});

  worst = 0.0;
  double count_gap = 0.0;
  for (int k = 0; k < 10; ++k) {
    std::uniform_int_distribution<std::size_t> ext(3, 9), ch(1, 6);
    const std::size_t cin = ch(rng), cout = ch(rng);
    const bool strided = k % 3 == 0;
    const std::size_t h = strided ? 2 * (ext(rng) / 2) : ext(rng);
    const std::size_t w = strided ? 2 * (ext(rng) / 2) : ext(rng);
    ConvParams conv = strided ? make_conv(cin, cout, 4, 2, 1, rng) : make_conv(cin, cout, 3, 1, 1, rng);
    conv.bias = rand({cout}, rng, false);
    Tensor x = rand({1, cin, h, w}, rng, false);
    reference::MacCounter counter;
    worst = std::max(worst, max_abs_diff(conv2d(x, conv), reference::conv2d_naive(x, conv, &counter)));
    const auto cost = flops::count_conv(h, w, cin, cout, conv.kernel_h(), conv.kernel_w(),
                                        conv.stride, conv.padding);
    count_gap = std::max(count_gap, std::abs(static_cast<double>(counter.macs) -
                                             static_cast<double>(cost.macs)));
  }
  out.push_back({"conv2d vs reference", worst <= 1e-10, worst, 1e-10});
  out.push_back({"conv MAC count vs instrumented", count_gap == 0.0, count_gap, 0.0});

  count_gap = 0.0;
  for (int k = 0; k < 10; ++k) {
    const std::size_t window = windows[k % 4];
    std::uniform_int_distribution<std::size_t> extent(window / 2 + 1, 8), ch(1, 5);
    const std::size_t c = ch(rng), h = extent(rng), w = extent(rng);
    ILAModule m = module_with_bias(c, window, rng);
    reference::MacCounter counter;
    reference::ila_reference(m, rand({1, c, h, w}, rng, false), rand({1, c, h, w}, rng, false),
                             &counter);
    count_gap = std::max(count_gap, std::abs(static_cast<double>(counter.macs) -
                                             static_cast<double>(flops::count_ila(h, w, c, window).macs)));
  }
  out.push_back({"ILA MAC count vs instrumented", count_gap == 0.0, count_gap, 0.0});
  return out;
}

}  // namespace ilaprop
