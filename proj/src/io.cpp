#include "ilaprop/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

namespace ilaprop {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::array<char, 8> kMagic{'I', 'L', 'A', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::ifstream& in, const std::string& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw std::runtime_error("checkpoint " + path + " is truncated");
  }
  return v;
}

struct Entry {
  Shape shape;
  std::vector<double> values;
};

}  // namespace

void save_checkpoint(const std::string& path, const ParameterList& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const auto& shape = p.tensor.shape();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) put<std::uint64_t>(out, d);
    const auto data = p.tensor.data();
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("failed while writing checkpoint " + path);
}

void load_checkpoint(const std::string& path, ParameterList& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw std::runtime_error(path + " is not a checkpoint file");
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kVersion) {
    throw std::runtime_error("checkpoint " + path + " has unsupported version " +
                             std::to_string(version));
  }
  const auto count = get<std::uint32_t>(in, path);
  std::map<std::string, Entry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(in, path);
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw std::runtime_error("checkpoint " + path + " is truncated");
    Entry e;
    const auto rank = get<std::uint32_t>(in, path);
    for (std::uint32_t r = 0; r < rank; ++r) e.shape.push_back(get<std::uint64_t>(in, path));
    e.values.resize(numel(e.shape));
    if (!in.read(reinterpret_cast<char*>(e.values.data()),
                 static_cast<std::streamsize>(e.values.size() * sizeof(double)))) {
      throw std::runtime_error("checkpoint " + path + " is truncated");
    }
    entries.emplace(std::move(name), std::move(e));
  }
  if (entries.size() != params.size()) {
    throw std::runtime_error("checkpoint " + path + " holds " + std::to_string(entries.size()) +
                             " arrays, model expects " + std::to_string(params.size()));
  }
  for (auto& p : params) {
    const auto it = entries.find(p.name);
    if (it == entries.end()) throw std::runtime_error("checkpoint " + path + " lacks " + p.name);
    if (it->second.shape != p.tensor.shape()) {
      throw std::runtime_error("checkpoint entry " + p.name + " has shape " +
                               to_string(it->second.shape) + ", model expects " +
                               to_string(p.tensor.shape()));
    }
    std::copy(it->second.values.begin(), it->second.values.end(),
              p.tensor.mutable_data().begin());
  }
}

std::vector<std::uint8_t> to_grayscale(std::span<const double> values) {
  if (values.empty()) return {};
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  std::vector<std::uint8_t> out(values.size(), 128);
  if (!(*hi > *lo)) return out;
  const double range = *hi - *lo;
  for (std::size_t i = 0; i < values.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(std::lround(255.0 * (values[i] - *lo) / range));
  }
  return out;
}

void write_pgm(const std::string& path, std::size_t width, std::size_t height,
               std::span<const std::uint8_t> pixels) {
  if (pixels.size() != width * height) throw std::invalid_argument("write_pgm: size mismatch");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
}

void write_ppm(const std::string& path, std::size_t width, std::size_t height,
               std::span<const double> planar_rgb) {
  const std::size_t plane = width * height;
  if (planar_rgb.size() != 3 * plane) throw std::invalid_argument("write_ppm: size mismatch");
  std::vector<std::uint8_t> bytes(3 * plane);
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double v = std::clamp(planar_rgb[c * plane + p], 0.0, 1.0);
      bytes[3 * p + c] = static_cast<std::uint8_t>(std::lround(255.0 * v));
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "P6\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void ensure_directory(const std::string& path) {
  std::error_code ec;
  std::filesystem::create_directories(path, ec);
  if (ec) throw std::runtime_error("cannot create directory " + path + ": " + ec.message());
}

std::string output_root() {
  const char* root = std::getenv("ILA_OUTPUT_ROOT");
  return root && *root ? root : ".";
}

std::string resolve_output_dir(const std::string& dir) {
  const std::filesystem::path p(dir);
  if (p.is_absolute()) return p.string();
  return (std::filesystem::path(output_root()) / p).string();
}

}  // namespace ilaprop
