#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "ilaprop/tensor.hpp"

namespace ilaprop {

struct SyntheticParams {
  std::size_t height = 32;
  std::size_t width = 48;
  /// Number of shape classes S; labels run over [0, S] with 0 = background.
  std::size_t num_shape_classes = 3;
  std::size_t objects_per_sequence = 3;
  std::size_t num_frames = 6;
  /// Per-axis bound on integer object velocity, pixels per frame.
  int max_speed = 2;
  /// Amplitude of the static background texture.
  double noise = 0.06;
  /// Used only for the speed bound: max_speed <= (window / 2) * feature_stride.
  std::size_t window = 5;
  std::size_t feature_stride = 4;
};

void validate(const SyntheticParams& params);

struct ObjectMotion {
  int shape_class = 0;  // in [1, S]
  int dx = 0;           // columns per frame
  int dy = 0;           // rows per frame
  double depth = 0.0;
};

struct SyntheticSequence {
  std::size_t height = 0;
  std::size_t width = 0;
  /// Each frame is [1,3,H,W] with values in [0,1].
  std::vector<Tensor> frames;
  /// Row-major [H,W] class maps.
  std::vector<std::vector<int>> seg_labels;
  /// Row-major [H,W] depth, nearer is smaller, every pixel valid.
  std::vector<std::vector<double>> depth_maps;
  std::vector<ObjectMotion> motions;
  std::uint64_t seed = 0;
};

/// Moving rectangles and circles over a textured background. The class of an
/// object is its geometry (kind and size); colours are drawn independently,
/// so a pixel's class cannot be read off its colour.
SyntheticSequence generate_sequence(const SyntheticParams& params, std::uint64_t seed);

/// Seed of the i-th sequence of a dataset derived from one base seed.
std::uint64_t sequence_seed(std::uint64_t base, std::size_t index);

std::vector<SyntheticSequence> generate_dataset(const SyntheticParams& params, std::size_t count,
                                                std::uint64_t seed);

}  // namespace ilaprop
