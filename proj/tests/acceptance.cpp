// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ilaprop/experiment.hpp"
#include "ilaprop/flops.hpp"
#include "ilaprop/gradcheck.hpp"
#include "ilaprop/ila.hpp"
#include "ilaprop/io.hpp"
#include "ilaprop/layers.hpp"
#include "ilaprop/network.hpp"
#include "ilaprop/ops.hpp"
#include "ilaprop/reference.hpp"
#include "ilaprop/schedule.hpp"
#include "ilaprop/training.hpp"

using namespace ilaprop;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Records the first few failures; later ones only flip the flag.
struct Checker {
  Outcome out;
  int failures = 0;

  void expect(bool ok, const std::string& what) {
    if (ok) return;
    out.pass = false;
    if (failures++ < 3) out.detail += (out.detail.empty() ? "" : "; ") + what;
  }
};

Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = false,
                     double lo = -1.0, double hi = 1.0) {
  return uniform_tensor(std::move(shape), lo, hi, rng, requires_grad);
}

std::vector<double> random_coeffs(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  }
  return m;
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

ILAModule random_module(std::size_t channels, std::size_t window, std::mt19937_64& rng) {
  ILAConfig cfg;
  cfg.channels = channels;
  cfg.window = window;
  ConvParams h = make_conv(channels, channels, 3, 1, 1, rng);
  h.bias = random_tensor({channels}, rng, true);
  return ILAModule(cfg, h);
}

// Count of in-bounds offsets for pixel (i, j), from the geometry alone.
std::size_t valid_offsets(std::size_t i, std::size_t j, std::size_t h, std::size_t w,
                          std::size_t window) {
  const long r = static_cast<long>(window / 2);
  auto span = [r](long p, long n) { return std::min(p + r, n - 1) - std::max(p - r, 0L) + 1; };
  return static_cast<std::size_t>(span(static_cast<long>(i), static_cast<long>(h)) *
                                  span(static_cast<long>(j), static_cast<long>(w)));
}

Outcome attention_normalisation() {
  Checker c;
  std::mt19937_64 rng(101);
  const std::size_t windows[] = {1, 3, 5, 7};
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const std::size_t window = windows[k % 4];
    const std::size_t lo = window / 2 + 1;
    std::uniform_int_distribution<std::size_t> extent(lo, 12), ch(1, 8), batch(1, 2);
    const std::size_t b = batch(rng), cc = ch(rng), h = extent(rng), w = extent(rng);
    ILAModule m = random_module(cc, window, rng);
    const auto weights =
        compute_weights(m, random_tensor({b, cc, h, w}, rng), random_tensor({b, cc, h, w}, rng));
    const auto v = weights.values.data();
    const std::size_t plane = h * w, l2 = window * window;
    for (std::size_t bi = 0; bi < b; ++bi) {
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          double total = 0.0;
          std::size_t zeros = 0;
          for (std::size_t o = 0; o < l2; ++o) {
            const double x = v[(bi * l2 + o) * plane + i * w + j];
            total += x;
            zeros += x == 0.0;
          }
          worst = std::max(worst, std::abs(total - 1.0));
          c.expect(zeros == l2 - valid_offsets(i, j, h, w, window),
                   "zero count at case " + std::to_string(k));
        }
      }
    }
  }
  c.expect(worst <= 1e-6, "weight sum off by " + fmt(worst));
  if (c.out.pass) c.out.detail = "100 cases, max |sum - 1| = " + fmt(worst);
  return c.out;
}

Outcome oracle_equivalence() {
  Checker c;
  std::mt19937_64 rng(202);
  const std::size_t windows[] = {1, 3, 5, 7};
  double worst_local = 0.0, worst_global = 0.0;
  for (int k = 0; k < 20; ++k) {
    const std::size_t window = windows[k % 4];
    std::uniform_int_distribution<std::size_t> extent(window / 2 + 1, 10), ch(1, 8), batch(1, 2);
    const std::size_t b = batch(rng), cc = ch(rng), h = extent(rng), w = extent(rng);
    ILAModule m = random_module(cc, window, rng);
    Tensor f_t = random_tensor({b, cc, h, w}, rng), f_k = random_tensor({b, cc, h, w}, rng);
    worst_local =
        std::max(worst_local, max_abs_diff(ila_forward(m, f_t, f_k),
                                           reference::ila_reference(m, f_t, f_k)));
  }
  // A window of 2n - 1 on an n x n map reaches every pixel from every pixel.
  for (std::size_t n = 1; n <= 5; ++n) {
    std::uniform_int_distribution<std::size_t> ch(1, 8);
    const std::size_t cc = ch(rng);
    ILAModule m = random_module(cc, 2 * n - 1, rng);
    Tensor f_t = random_tensor({2, cc, n, n}, rng), f_k = random_tensor({2, cc, n, n}, rng);
    worst_global = std::max(worst_global,
                            max_abs_diff(ila_forward(m, f_t, f_k), global_attention(m, f_t, f_k)));
  }
  c.expect(worst_local <= 1e-6, "local vs reference " + fmt(worst_local));
  c.expect(worst_global <= 1e-6, "full window vs global " + fmt(worst_global));
  if (c.out.pass) {
    c.out.detail = "max diff vs reference " + fmt(worst_local) + ", vs global " + fmt(worst_global);
  }
  return c.out;
}

Outcome gradient_correctness() {
  Checker c;
  constexpr double eps = 1e-5, tol = 1e-4;
  std::mt19937_64 rng(303);
  std::vector<std::pair<std::string, double>> errors;
  auto run = [&](const std::string& name, const std::function<Tensor()>& f,
                 std::vector<Tensor> leaves) {
    const auto r = finite_diff_report(f, leaves, eps);
    const double e = r.max_relative_error;
    errors.emplace_back(name, e);
    c.expect(e < tol, name + " error " + fmt(e) + " at leaf " + std::to_string(r.worst_leaf) +
                          " index " + std::to_string(r.worst_index) + " (" + fmt(r.analytic, 8) +
                          " vs " + fmt(r.numeric, 8) + ")");
  };

  {
    ConvParams conv = make_conv(3, 4, 3, 1, 1, rng);
    conv.bias = random_tensor({4}, rng, true);
    ConvParams down = make_conv(4, 2, 4, 2, 1, rng);
    Tensor x = random_tensor({2, 3, 6, 4}, rng, true);
    const auto co = random_coeffs(2 * 2 * 3 * 2, rng);
    run("conv2d", [&] { return dot(conv2d(conv2d(x, conv), down), co); },
        {x, conv.weights, conv.bias, down.weights});
  }
  {
    Tensor x = random_tensor({2, 6, 2, 3}, rng, true, -2.0, 2.0);
    Mask mask = Mask::all(x.shape(), true);
    for (std::size_t i = 0; i < mask.values.size(); i += 5) mask.values[i] = 0;
    const auto co = random_coeffs(x.numel(), rng);
    run("masked softmax", [&] { return dot(softmax(x, 1, &mask), co); }, {x});
  }
  {
    SEBlock se(4, 2, rng);
    se.reduce().bias = random_tensor({2}, rng, true);
    se.expand().bias = random_tensor({4}, rng, true);
    Tensor x = random_tensor({2, 4, 3, 3}, rng, true);
    const auto co = random_coeffs(x.numel(), rng);
    std::vector<Tensor> leaves{x};
    for (auto& p : se.parameters("se")) leaves.push_back(p.tensor);
    run("SE block", [&] { return dot(se.forward(x), co); }, leaves);
  }
  {
    ILAModule m = random_module(3, 3, rng);
    Tensor f_t = random_tensor({1, 3, 4, 5}, rng, true);
    Tensor f_k = random_tensor({1, 3, 4, 5}, rng, true);
    const auto co = random_coeffs(60, rng);
    run("ILA", [&] { return dot(ila_forward(m, f_t, f_k), co); },
        {f_t, f_k, m.h().weights, m.h().bias});
  }
  {
    // D parameters see the plain derivative of L_D, the fast features its
    // negation through the reversal layer.
    Discriminator d(3, 4, rng);
    for (std::size_t i = 0; i < 3; ++i) {
      d.conv(i).bias = random_tensor({i == 2 ? 1u : 4u}, rng, true);
    }
    Tensor slow = random_tensor({2, 3, 3, 3}, rng);
    Tensor fast = random_tensor({2, 3, 3, 3}, rng, true);
    LossConfig cfg;
    auto loss = [&] { return mimic_loss(slow, fast, d, cfg).total; };
    std::vector<Tensor> leaves;
    for (auto& p : d.parameters()) leaves.push_back(p.tensor);
    run("discriminator", loss, leaves);

    cfg.alpha = 0.0;
    fast.zero_grad();
    backward(loss());
    const std::vector<double> analytic(fast.grad().begin(), fast.grad().end());
    double worst = 0.0;
    auto x = fast.mutable_data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double keep = x[i];
      x[i] = keep + eps;
      const double up = loss().item();
      x[i] = keep - eps;
      const double down = loss().item();
      x[i] = keep;
      const double numeric = (up - down) / (2.0 * eps);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(analytic[i] + numeric) / denom);
    }
    errors.emplace_back("GRL sign", worst);
    c.expect(worst < tol, "reversed fast gradient error " + fmt(worst));
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
    // A wide input range keeps every gradient well above the rounding floor of
    // the central difference.
    for (int i = 0; i < 3; ++i) frames.push_back(random_tensor({1, 3, 4, 4}, rng, false, -3, 3));
    const std::vector<int> labels{0, 1, 2, 1, 0, 2, 2, 1, 0, 0, 1, 2, 2, 2, 1, 0};
    const auto depth = random_coeffs(16, rng);
    const std::vector<std::uint8_t> mask(16, 1);
    run("3-frame sequence",
        [&] {
          const auto out = model.forward_sequence(frames, 2);
          std::vector<Tensor> terms;
          for (const auto& f : out) {
            terms.push_back(cross_entropy(f.predictions[0], labels));
            terms.push_back(masked_l1(f.predictions[1], depth, mask));
          }
          const std::vector<double> w(terms.size(), 1.0);
          return weighted_total(terms, w);
        },
        leaves);
  }
  if (c.out.pass) {
    double worst = 0.0;
    for (const auto& [name, e] : errors) worst = std::max(worst, e);
    c.out.detail = std::to_string(errors.size()) + " checks, max relative error " + fmt(worst);
  }
  return c.out;
}

Outcome grl_contract() {
  Checker c;
  std::mt19937_64 rng(404);
  Discriminator d(3, 4, rng);
  Tensor x = random_tensor({2, 3, 4, 4}, rng, true);
  const auto co = random_coeffs(2, rng);
  backward(dot(discriminator_forward(d, x), co));
  const std::vector<double> plain(x.grad().begin(), x.grad().end());
  for (double lambda : {0.0, 0.5, 1.0}) {
    x.zero_grad();
    backward(dot(discriminator_forward(d, gradient_reversal(x, lambda)), co));
    bool exact = true;
    for (std::size_t i = 0; i < plain.size(); ++i) exact = exact && x.grad()[i] == -lambda * plain[i];
    c.expect(exact, "lambda " + fmt(lambda) + " not bitwise -lambda * plain");
  }
  if (c.out.pass) c.out.detail = "bitwise for lambda in {0, 0.5, 1}";
  return c.out;
}

Outcome scheduling() {
  Checker c;
  std::size_t checked = 0;
  for (std::size_t k = 1; k <= 10; ++k) {
    for (std::size_t n = 1; n <= 50; ++n) {
      const auto s = periodic_schedule(n, k);
      c.expect(s.size() == n, "length");
      std::size_t slow = 0;
      for (std::size_t i = 0; i < s.size(); ++i) {
        const bool key = i % k == 0;
        slow += key;
        const auto& e = s[i];
        c.expect(e.frame_index == i, "index");
        c.expect((e.branch == Branch::Slow) == key, "branch at " + std::to_string(i));
        const std::optional<std::size_t> prev =
            i == 0 ? std::nullopt : std::optional<std::size_t>(i - 1);
        const std::optional<std::size_t> keysrc =
            key ? std::nullopt : std::optional<std::size_t>(i / k * k);
        c.expect(e.previous_source == prev, "previous source");
        c.expect(e.keyframe_source == keysrc, "keyframe source");
        ++checked;
      }
      c.expect(count_branch(s, Branch::Slow) == slow && slow == (n + k - 1) / k, "slow count");
    }
    for (std::size_t d = 0; d < k; ++d) {
      const auto s = eval_clip_schedule(d, k);
      c.expect(s.size() == d + 1, "eval clip length");
      c.expect(s[0].branch == Branch::Slow && !s[0].keyframe_source && !s[0].previous_source,
               "eval clip keyframe");
      for (std::size_t i = 1; i <= d; ++i) {
        c.expect(s[i].branch == Branch::Fast && s[i].keyframe_source == 0u &&
                     s[i].previous_source == i - 1,
                 "eval clip frame " + std::to_string(i));
      }
    }
  }

  // Causality: outputs on a prefix equal outputs on the full sequence.
  ModelConfig cfg = desk_model_config(3, 4);
  cfg.decoder_width1 = 6;
  cfg.decoder_width2 = 4;
  cfg.window = 3;
  SlowFastModel model(cfg, 5);
  std::mt19937_64 rng(505);
  std::vector<Tensor> frames;
  for (int i = 0; i < 12; ++i) frames.push_back(random_tensor({1, 3, 8, 12}, rng, false, 0, 1));
  for (std::size_t k : {1u, 3u, 5u}) {
    const auto full = model.forward_sequence(frames, k);
    for (std::size_t n = 1; n <= frames.size(); ++n) {
      const auto part = model.forward_sequence(std::span(frames).first(n), k);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t t = 0; t < 2; ++t) {
          c.expect(max_abs_diff(part[i].predictions[t], full[i].predictions[t]) == 0.0,
                   "prefix of " + std::to_string(n) + " differs at frame " + std::to_string(i));
        }
      }
    }
  }
  if (c.out.pass) {
    c.out.detail = std::to_string(checked) + " schedule entries, causality on 36 prefixes";
  }
  return c.out;
}

Outcome flop_accounting() {
  Checker c;
  std::mt19937_64 rng(606);
  struct Geom {
    std::size_t h, w, cin, cout, k, s, p;
  };
  const Geom convs[] = {{1, 1, 1, 1, 1, 1, 0}, {3, 3, 1, 1, 3, 1, 1}, {4, 5, 2, 3, 3, 1, 1},
                        {6, 6, 3, 2, 4, 2, 1}, {8, 4, 2, 2, 4, 2, 1}, {5, 7, 4, 1, 1, 1, 0},
                        {7, 7, 1, 4, 3, 1, 0}, {4, 4, 2, 2, 3, 1, 1}, {6, 8, 3, 5, 3, 1, 1},
                        {9, 3, 2, 3, 3, 1, 1}};
  for (const auto& g : convs) {
    ConvParams conv = make_conv(g.cin, g.cout, g.k, g.s, g.p, rng);
    reference::MacCounter counter;
    reference::conv2d_naive(random_tensor({1, g.cin, g.h, g.w}, rng), conv, &counter);
    c.expect(counter.macs == flops::count_conv(g.h, g.w, g.cin, g.cout, g.k, g.k, g.s, g.p).macs,
             "conv count mismatch");
  }
  const std::size_t ila_cases[][4] = {{1, 1, 1, 1}, {2, 2, 1, 1}, {3, 3, 2, 3}, {4, 5, 1, 3},
                                      {5, 4, 3, 5}, {6, 6, 2, 5}, {4, 7, 2, 7}, {8, 8, 1, 7},
                                      {3, 6, 4, 3}, {7, 5, 3, 1}};
  for (const auto& q : ila_cases) {
    ILAModule m = random_module(q[2], q[3], rng);
    Tensor f = random_tensor({1, q[2], q[0], q[1]}, rng);
    reference::MacCounter counter;
    reference::ila_reference(m, f, random_tensor({1, q[2], q[0], q[1]}, rng), &counter);
    c.expect(counter.macs == flops::count_ila(q[0], q[1], q[2], q[3]).macs, "ILA count mismatch");
  }

  const ModelConfig model = desk_model_config();
  for (std::size_t n : {20u, 60u}) {
    double prev = 1e300;
    for (std::size_t k = 1; k <= 10; ++k) {
      const double v = flops::model_report(model, 64, 96, periodic_schedule(n, k)).per_frame_flops();
      c.expect(v <= prev, "per-frame cost rises at K=" + std::to_string(k));
      prev = v;
    }
  }

  for (const auto& [h, w, ch, l] : {std::tuple{8u, 12u, 16u, 5u}, std::tuple{16u, 24u, 32u, 3u},
                                     std::tuple{64u, 128u, 256u, 7u}}) {
    const std::uint64_t local = flops::count_ila(h, w, ch, l).attention_macs;
    const std::uint64_t global = flops::global_attention_terms(h, w, ch);
    // local / global == L^2 / (H W), checked in integers.
    c.expect(local * h * w == global * l * l, "attention ratio");
  }

  std::ostringstream report;
  flops::write_report_text(report, flops::model_report(model, 64, 96, periodic_schedule(10, 5)));
  const std::string text = report.str();
  bool verbatim = false;
  std::istringstream lines(text);
  for (std::string line; std::getline(lines, line);) {
    if (line.find("ILA") == 0 && line.find("258x512") != std::string::npos &&
        line.find(" 0.2 ") != std::string::npos && line.find(" 1 ") != std::string::npos &&
        line.find("0.2M") != std::string::npos && line.find("[published") != std::string::npos) {
      verbatim = true;
    }
  }
  c.expect(verbatim, "published ILA row missing from the report");
  c.expect(text.find("Published values (not computed)") != std::string::npos, "label");
  if (c.out.pass) {
    c.out.detail = "10 conv + 10 ILA instrumented counts exact, K-monotone, ratio exact, "
                   "published row present";
  }
  return c.out;
}

Outcome loss_arithmetic() {
  Checker c;
  std::mt19937_64 rng(707);
  ConvParams c1 = make_conv(4, 4, 3, 1, 1, rng), c2 = make_conv(4, 4, 3, 1, 1, rng),
             c3 = make_conv(4, 1, 3, 1, 1, rng);
  for (double& w : c3.weights.mutable_data()) w = 0.0;
  Discriminator half(c1, c2, c3);
  Tensor f = random_tensor({2, 4, 5, 5}, rng);
  double worst = 0.0;
  for (const auto& [a, b] : {std::pair{1.0, 1.0}, std::pair{0.5, 2.0}, std::pair{3.0, 0.25}}) {
    LossConfig cfg;
    cfg.alpha = a;
    cfg.beta = b;
    const auto m = mimic_loss(f, f.clone(), half, cfg);
    worst = std::max(worst, std::abs(m.total.item() - (a * 0.0 + b * 2.0 * std::numbers::ln2)));
  }
  c.expect(worst <= 1e-9, "matched case off by " + fmt(worst));

  // Breakdown of a real training step.
  ModelConfig mc = desk_model_config(3, 4);
  mc.decoder_width1 = 6;
  mc.decoder_width2 = 4;
  mc.window = 3;
  SlowFastModel model(mc, 3);
  Discriminator d(4, 4, rng);
  AdamState mo(model.parameters(), {}), dopt(d.parameters(), {});
  LossConfig loss;
  loss.alpha = 0.7;
  loss.beta = 1.3;
  Trainer trainer{model, d, mo, dopt, loss, 3};
  TrainBatch batch;
  std::uniform_int_distribution<int> label(0, 2);
  for (int t = 0; t < 4; ++t) {
    batch.frames.push_back(random_tensor({2, 3, 8, 8}, rng, false, 0, 1));
    std::vector<TaskTarget> tg(2);
    for (int i = 0; i < 128; ++i) tg[0].classes.push_back(label(rng));
    tg[1].depth = random_coeffs(128, rng);
    tg[1].depth_mask.assign(128, 1);
    batch.targets.push_back(tg);
  }
  const auto rec = train_step(batch, trainer);
  const double rebuilt = rec.task[0] + rec.task[1] + 0.7 * rec.l1 + 1.3 * rec.adversarial;
  c.expect(std::abs(rebuilt - rec.total) <= 1e-9, "breakdown off by " + fmt(rebuilt - rec.total));

  // Slow encoder gradient from the discriminator term alone.
  LossConfig adv_only;
  adv_only.alpha = 0.0;
  Tensor frame = random_tensor({2, 3, 8, 8}, rng, false, 0, 1);
  auto slow_params = model.encoder_parameters(Branch::Slow);
  for (auto& p : model.parameters()) p.tensor.zero_grad();
  const auto m = mimic_loss(model.encode(frame, Branch::Slow), model.encode(frame, Branch::Fast),
                            d, adv_only);
  backward(m.total);
  bool zero = true;
  for (const auto& p : slow_params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) zero = zero && g == 0.0;
  }
  c.expect(zero, "slow encoder received discriminator gradient");
  if (c.out.pass) {
    c.out.detail = "2ln2 case within " + fmt(worst) + ", breakdown within " +
                   fmt(std::abs(rebuilt - rec.total)) + ", slow grads zero";
  }
  return c.out;
}

struct Benchmark {
  ExperimentConfig base;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string out_dir;
  std::vector<AblationRow> loss_rows;
  std::vector<AblationRow> window_rows;
};

double mean_of(const std::vector<AblationRow>& rows, const std::string& variant,
               const std::function<double(const AblationRow&)>& metric) {
  double total = 0.0;
  int n = 0;
  for (const auto& r : rows) {
    if (r.variant == variant) {
      total += metric(r);
      ++n;
    }
  }
  return n ? total / n : std::nan("");
}

const AblationRow* find_row(const std::vector<AblationRow>& rows, const std::string& variant,
                            std::uint64_t seed) {
  for (const auto& r : rows) {
    if (r.variant == variant && r.seed == seed) return &r;
  }
  return nullptr;
}

void run_loss_ablation(Benchmark& b) {
  if (!b.loss_rows.empty()) return;
  RunOptions opt;
  opt.write_outputs = false;
  const auto variants = loss_ablation_variants();
  b.loss_rows = run_ablation(b.base, variants, b.seeds, opt);
  write_ablation_csv((std::filesystem::path(b.out_dir) / "loss_ablation.csv").string(),
                     b.loss_rows);
}

Outcome loss_trend(Benchmark& b) {
  run_loss_ablation(b);
  Checker c;
  const auto nonkey = [](const AblationRow& r) { return r.eval.non_keyframe_miou; };
  const double full = mean_of(b.loss_rows, "ila+l1+adv", nonkey);
  const double l1 = mean_of(b.loss_rows, "ila+l1", nonkey);
  const double ila = mean_of(b.loss_rows, "ila", nonkey);
  const double none = mean_of(b.loss_rows, "no_propagation", nonkey);
  c.expect(full >= l1, "full < ila+l1");
  c.expect(l1 >= ila, "ila+l1 < ila");
  c.expect(ila >= none, "ila < no_propagation");
  int positive = 0;
  for (auto s : b.seeds) {
    positive += find_row(b.loss_rows, "ila+l1+adv", s)->eval.non_keyframe_miou >
                find_row(b.loss_rows, "no_propagation", s)->eval.non_keyframe_miou;
  }
  c.expect(positive == static_cast<int>(b.seeds.size()),
           "outer gap positive on " + std::to_string(positive) + "/" +
               std::to_string(b.seeds.size()) + " seeds");
  c.out.detail = "non-keyframe mIoU means: ila+l1+adv " + fmt(full) + ", ila+l1 " + fmt(l1) +
                 ", ila " + fmt(ila) + ", no_propagation " + fmt(none) +
                 (c.out.pass ? "" : " (" + c.out.detail + ")");
  return c.out;
}

Outcome window_trend(Benchmark& b) {
  Checker c;
  RunOptions opt;
  opt.write_outputs = false;
  const auto variants = window_ablation_variants();
  b.window_rows = run_ablation(b.base, variants, b.seeds, opt);
  write_ablation_csv((std::filesystem::path(b.out_dir) / "window_ablation.csv").string(),
                     b.window_rows);

  const auto miou = [](const AblationRow& r) { return r.eval.mean.miou; };
  const double w3 = mean_of(b.window_rows, "window3", miou);
  const double w5 = mean_of(b.window_rows, "window5", miou);
  const double w7 = mean_of(b.window_rows, "window7", miou);
  const double global = mean_of(b.window_rows, "global", miou);
  const double band = std::max({w3, w5, w7}) - std::min({w3, w5, w7});
  c.expect(band <= 0.05, "local band " + fmt(band) + " > 0.05");
  c.expect(global <= std::max({w3, w5, w7}) + 0.01, "global better than best local window");

  // Cost: the attention terms of every propagation edge differ exactly by
  // the analytic ratio, and the global frame is strictly dearer.
  const ModelConfig mc = to_model_config(b.base);
  const std::size_t fh = b.base.height / mc.feature_stride(), fw = b.base.width / mc.feature_stride();
  const auto entry = eval_clip_schedule(1, b.base.keyframe_interval)[1];
  auto cost = [&](Propagation p, std::size_t window) {
    ModelConfig m = mc;
    m.propagation = p;
    m.window = window;
    return flops::frame_flops(m, b.base.height, b.base.width, entry);
  };
  const std::uint64_t g = cost(Propagation::global, 5);
  std::uint64_t prev = 0;
  for (std::size_t l : {3u, 5u, 7u}) {
    const std::uint64_t local = cost(Propagation::ila, l);
    c.expect(local > prev, "local cost not increasing in L");
    c.expect(g > local, "global not dearer than L=" + std::to_string(l));
    // Per edge: logits + aggregate + softmax, two edges per task.
    const std::uint64_t hw = fh * fw, c_ = mc.channels, edges = 2 * mc.tasks.size();
    const std::uint64_t expected_gap =
        edges * (2 * hw * hw * c_ + 2 * hw * hw - 2 * hw * l * l * c_ - 2 * hw * l * l);
    c.expect(g - local == expected_gap, "cost gap vs analytic for L=" + std::to_string(l));
    prev = local;
  }
  c.out.detail = "mIoU means: L3 " + fmt(w3) + ", L5 " + fmt(w5) + ", L7 " + fmt(w7) +
                 ", global " + fmt(global) + "; global/L5 frame cost " +
                 fmt(static_cast<double>(g) / static_cast<double>(cost(Propagation::ila, 5))) +
                 (c.out.pass ? "" : " (" + c.out.detail + ")");
  return c.out;
}

Outcome mimic_effect(Benchmark& b) {
  run_loss_ablation(b);
  Checker c;
  std::string per_seed;
  for (auto s : b.seeds) {
    const auto* full = find_row(b.loss_rows, "ila+l1+adv", s);
    const auto* control = find_row(b.loss_rows, "ila", s);
    c.expect(full->feature_gap_final < full->feature_gap_init,
             "seed " + std::to_string(s) + " gap did not shrink");
    c.expect(full->feature_gap_final < control->feature_gap_final,
             "seed " + std::to_string(s) + " gap not below control");
    per_seed += (per_seed.empty() ? "" : ", ") + std::string("s") + std::to_string(s) + " " +
                fmt(full->feature_gap_init, 3) + "->" + fmt(full->feature_gap_final, 3) +
                " (control " + fmt(control->feature_gap_final, 3) + ")";
  }
  c.out.detail = "gap " + per_seed + (c.out.pass ? "" : " (" + c.out.detail + ")");
  return c.out;
}

Outcome reproducibility(const Benchmark& b) {
  Checker c;
  ExperimentConfig cfg = b.base;
  cfg.steps = std::min<std::size_t>(cfg.steps, 40);
  cfg.eval_sequences = std::min<std::size_t>(cfg.eval_sequences, 8);
  cfg.name = "repro";
  std::string first;
  for (int run = 0; run < 2; ++run) {
    cfg.output_dir = (std::filesystem::path(b.out_dir) / ("repro" + std::to_string(run))).string();
    const auto r = run_experiment(cfg);
    std::ifstream in(std::filesystem::path(r.output_dir) / "metrics.csv", std::ios::binary);
    const std::string bytes{std::istreambuf_iterator<char>(in), {}};
    c.expect(!bytes.empty(), "metrics.csv empty");
    if (run == 0) {
      first = bytes;
    } else {
      c.expect(bytes == first, "metrics.csv differs between runs");
    }
  }
  if (c.out.pass) c.out.detail = std::to_string(first.size()) + " bytes identical across 2 runs";
  return c.out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks for the ilaprop library"};
  std::vector<int> only;
  std::vector<std::string> overrides;
  std::size_t num_seeds = 3;
  std::string config_path;
  app.add_option("--only", only, "Run only these criteria (1-11)")->delimiter(',');
  app.add_option("--config", config_path, "Benchmark config file (default: built-in)");
  app.add_option("--set", overrides, "Benchmark override key=value (repeatable)");
  app.add_option("--seeds", num_seeds, "Training seeds for the trend criteria")
      ->check(CLI::Range(1, 100));
  CLI11_PARSE(app, argc, argv);

  Benchmark bench;
  if (!config_path.empty()) bench.base = load_config(config_path);
  apply_overrides(bench.base, overrides);
  bench.seeds.clear();
  for (std::size_t s = 1; s <= num_seeds; ++s) bench.seeds.push_back(s);
  bench.out_dir = resolve_output_dir("acceptance_out");
  ensure_directory(bench.out_dir);
  bench.base.output_dir = bench.out_dir;

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"attention normalisation", attention_normalisation},
      {"oracle equivalence", oracle_equivalence},
      {"gradient correctness", gradient_correctness},
      {"gradient reversal contract", grl_contract},
      {"scheduling", scheduling},
      {"FLOP accounting", flop_accounting},
      {"loss arithmetic", loss_arithmetic},
      {"loss ablation trend", [&] { return loss_trend(bench); }},
      {"window ablation trend", [&] { return window_trend(bench); }},
      {"mimicking effect", [&] { return mimic_effect(bench); }},
      {"reproducibility", [&] { return reproducibility(bench); }},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!selected.empty() && !selected.contains(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::printf("criterion %2d %-28s %s  [%.1fs] %s\n", id, criteria[i].first.c_str(),
                o.pass ? "PASS" : "FAIL", secs, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
