#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ilaprop/layers.hpp"

namespace ilaprop {

/// Binary checkpoint of named double arrays, little-endian:
///   "ILACKPT\0", u32 version (1), u32 entry count, then per entry
///   u32 name length, name bytes, u32 rank, u64 dims[rank], f64 values.
void save_checkpoint(const std::string& path, const ParameterList& params);

/// Restores values into `params` by name. Every parameter must be present
/// with the same shape; extra entries in the file are an error.
void load_checkpoint(const std::string& path, ParameterList& params);

/// Maps values to 0..255 by min-max scaling. A constant input maps to 128.
std::vector<std::uint8_t> to_grayscale(std::span<const double> values);

/// Binary PGM (P5) of an 8-bit row-major image.
void write_pgm(const std::string& path, std::size_t width, std::size_t height,
               std::span<const std::uint8_t> pixels);

/// Binary PPM (P6) from planar RGB values in [0,1].
void write_ppm(const std::string& path, std::size_t width, std::size_t height,
               std::span<const double> planar_rgb);

/// Creates `path` and its parents if needed.
void ensure_directory(const std::string& path);

/// Root for relative output directories: $ILA_OUTPUT_ROOT if set, else ".".
std::string output_root();
std::string resolve_output_dir(const std::string& dir);

}  // namespace ilaprop
