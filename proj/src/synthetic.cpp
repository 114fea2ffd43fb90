#include "ilaprop/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

namespace ilaprop {

namespace {

enum class Kind { rect, circle };

struct Archetype {
  Kind kind;
  int half_h;  // rows from centre to edge (radius for circles)
  int half_w;
  double base_depth;
};

// Class c in [1, 8] uses kArchetypes[c - 1]. Larger shapes sit nearer.
constexpr std::array<Archetype, 8> kArchetypes{{
    {Kind::circle, 7, 7, 1.4},
    {Kind::rect, 6, 6, 1.8},
    {Kind::rect, 4, 10, 1.6},
    {Kind::rect, 10, 4, 1.6},
    {Kind::circle, 4, 4, 2.4},
    {Kind::rect, 3, 3, 2.6},
    {Kind::circle, 10, 10, 1.0},
    {Kind::rect, 2, 12, 2.2},
}};

constexpr double kDepthJitter = 0.3;

bool covers(const Archetype& a, int cy, int cx, int y, int x) {
  const int ry = y - cy;
  const int rx = x - cx;
  if (a.kind == Kind::rect) return std::abs(ry) <= a.half_h && std::abs(rx) <= a.half_w;
  return ry * ry + rx * rx <= a.half_h * a.half_h;
}

struct Placed {
  ObjectMotion motion;
  int cy0 = 0;
  int cx0 = 0;
  std::array<double, 3> colour{};
};

double colour_distance(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  return std::abs(a[0] - b[0]) + std::abs(a[1] - b[1]) + std::abs(a[2] - b[2]);
}

// Centre range so that the centre stays inside [0, extent) for all frames.
std::pair<int, int> start_range(int extent, int v, int frames) {
  const int travel = v * (frames - 1);
  int lo = std::max(0, -travel);
  int hi = std::min(extent - 1, extent - 1 - travel);
  if (lo > hi) lo = hi = std::clamp(extent / 2 - travel / 2, 0, extent - 1);
  return {lo, hi};
}

}  // namespace

void validate(const SyntheticParams& p) {
  if (p.num_shape_classes < 1 || p.num_shape_classes > kArchetypes.size()) {
    throw std::invalid_argument("number of shape classes must be in [1, 8], got " +
                                std::to_string(p.num_shape_classes));
  }
  if (p.height < 32 || p.width < 32) {
    throw std::invalid_argument("synthetic frames must be at least 32x32, got " +
                                std::to_string(p.height) + "x" + std::to_string(p.width));
  }
  if (p.num_frames == 0) throw std::invalid_argument("a sequence needs at least one frame");
  if (p.max_speed < 0) throw std::invalid_argument("max_speed must be >= 0");
  const auto bound = static_cast<int>((p.window / 2) * p.feature_stride);
  if (p.max_speed > bound) {
    throw std::invalid_argument("max_speed " + std::to_string(p.max_speed) +
                                " exceeds the window reach of " + std::to_string(bound) +
                                " pixels per frame");
  }
  if (p.noise < 0.0 || p.noise > 0.25) throw std::invalid_argument("noise must be in [0, 0.25]");
}

std::uint64_t sequence_seed(std::uint64_t base, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(base), static_cast<std::uint32_t>(base >> 32),
                    static_cast<std::uint32_t>(index), 0x5eedu};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

SyntheticSequence generate_sequence(const SyntheticParams& params, std::uint64_t seed) {
  validate(params);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int H = static_cast<int>(params.height);
  const int W = static_cast<int>(params.width);
  const int n = static_cast<int>(params.num_frames);
  const auto plane = params.height * params.width;

  // Static background texture and depth ramp (lower rows are nearer).
  std::vector<double> background(3 * plane);
  for (auto& v : background) v = 0.5 + params.noise * (2.0 * unit(rng) - 1.0);
  std::vector<double> background_depth(plane);
  for (int y = 0; y < H; ++y) {
    const double d = 6.0 - 2.0 * y / static_cast<double>(H - 1);
    std::fill_n(background_depth.begin() + y * W, W, d);
  }

  std::uniform_int_distribution<int> cls(1, static_cast<int>(params.num_shape_classes));
  std::uniform_int_distribution<int> speed(-params.max_speed, params.max_speed);
  std::vector<Placed> objects;
  for (std::size_t k = 0; k < params.objects_per_sequence; ++k) {
    Placed o;
    o.motion.shape_class = cls(rng);
    o.motion.dx = speed(rng);
    o.motion.dy = speed(rng);
    o.motion.depth = kArchetypes[o.motion.shape_class - 1].base_depth + kDepthJitter * unit(rng);
    const auto [ylo, yhi] = start_range(H, o.motion.dy, n);
    const auto [xlo, xhi] = start_range(W, o.motion.dx, n);
    o.cy0 = std::uniform_int_distribution<int>(ylo, yhi)(rng);
    o.cx0 = std::uniform_int_distribution<int>(xlo, xhi)(rng);
    const std::array<double, 3> grey{0.5, 0.5, 0.5};
    for (int attempt = 0;; ++attempt) {
      for (auto& c : o.colour) c = 0.05 + 0.9 * unit(rng);
      bool ok = colour_distance(o.colour, grey) >= 0.45;
      for (const auto& other : objects) ok = ok && colour_distance(o.colour, other.colour) >= 0.3;
      if (ok || attempt > 200) break;
    }
    objects.push_back(o);
  }
  // Paint far to near so the nearest object wins every pixel.
  std::vector<std::size_t> order(objects.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return objects[a].motion.depth > objects[b].motion.depth;
  });

  SyntheticSequence seq;
  seq.height = params.height;
  seq.width = params.width;
  seq.seed = seed;
  for (const auto& o : objects) seq.motions.push_back(o.motion);

  for (int t = 0; t < n; ++t) {
    std::vector<double> rgb = background;
    std::vector<int> labels(plane, 0);
    std::vector<double> depth = background_depth;
    for (std::size_t idx : order) {
      const auto& o = objects[idx];
      const auto& a = kArchetypes[o.motion.shape_class - 1];
      const int cy = o.cy0 + t * o.motion.dy;
      const int cx = o.cx0 + t * o.motion.dx;
      const int y0 = std::max(0, cy - a.half_h);
      const int y1 = std::min(H - 1, cy + a.half_h);
      const int x0 = std::max(0, cx - a.half_w);
      const int x1 = std::min(W - 1, cx + a.half_w);
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          if (!covers(a, cy, cx, y, x)) continue;
          const auto p = static_cast<std::size_t>(y * W + x);
          for (std::size_t c = 0; c < 3; ++c) rgb[c * plane + p] = o.colour[c];
          labels[p] = o.motion.shape_class;
          depth[p] = o.motion.depth;
        }
      }
    }
    seq.frames.push_back(Tensor::from_data({1, 3, params.height, params.width}, std::move(rgb)));
    seq.seg_labels.push_back(std::move(labels));
    seq.depth_maps.push_back(std::move(depth));
  }
  return seq;
}

std::vector<SyntheticSequence> generate_dataset(const SyntheticParams& params, std::size_t count,
                                                std::uint64_t seed) {
  std::vector<SyntheticSequence> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(generate_sequence(params, sequence_seed(seed, i)));
  }
  return out;
}

}  // namespace ilaprop
