#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "srscn/errors.hpp"

namespace srscn::phantom {

inline constexpr uint8_t kBackground = 0;
inline constexpr uint8_t kLV = 1;   // left-ventricle blood pool
inline constexpr uint8_t kRV = 2;   // right-ventricle blood pool
inline constexpr uint8_t kMyo = 3;  // myocardium ring
inline constexpr int kNumClasses = 4;

struct PhantomConfig {
  uint64_t seed = 0;
  int n_slices = 10;
  int height = 64;
  int width = 64;
  double noise_sigma = 0.3;
  double intensity_heterogeneity = 0.6;  // in [0,1]; patchy myocardium mimicking enhancement
  std::array<double, 3> spacing = {10.0, 1.5, 1.5};  // (dz, dy, dx) mm

  void validate() const;
};

/// Image + gold-standard labels + normalized apex-to-base slice positions.
struct LabeledVolume {
  std::array<int, 3> dims = {0, 0, 0};  // slices, height, width
  std::vector<float> intensities;       // row-major (z, y, x)
  std::vector<uint8_t> labels;
  std::array<double, 3> spacing = {1.0, 1.0, 1.0};
  std::vector<double> slice_positions;  // strictly increasing, in [0,1]

  int64_t voxels() const { return static_cast<int64_t>(dims[0]) * dims[1] * dims[2]; }
  int64_t index(int z, int y, int x) const {
    return (static_cast<int64_t>(z) * dims[1] + y) * dims[2] + x;
  }
  uint8_t label_at(int z, int y, int x) const { return labels[static_cast<size_t>(index(z, y, x))]; }

  void validate() const;
};

/// Deterministic synthetic short-axis cardiac volume: concentric LV/myo
/// ellipses with an RV crescent, all shrinking toward the apex.
LabeledVolume generate_phantom(const PhantomConfig& cfg);

/// Portable container: key=value text header, blank line, then a raw
/// little-endian float32 intensity block followed by a uint8 label block.
void write_volume(const LabeledVolume& v, const std::filesystem::path& path);
LabeledVolume read_volume(const std::filesystem::path& path);

}  // namespace srscn::phantom
