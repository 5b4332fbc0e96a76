#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "srscn/errors.hpp"
#include "srscn/phantom.hpp"

namespace srscn::augment {

enum class Kind { Rigid, Affine, Deformable };

struct Limits {
  double max_rotation_deg = 15.0;
  double max_translation_px = 10.0;
  double max_scale_dev = 0.1;     // scale drawn in [1-dev, 1+dev]
  double max_shear = 0.1;
  double max_displacement_px = 8.0;
  double smoothing_sigma_px = 12.0;
};

/// 2D transform applied by inverse mapping: for each output pixel the matrix
/// (or matrix + smoothed displacement) gives the input sample location.
struct Transform2D {
  Kind kind = Kind::Rigid;
  // row-major 2x3: (y_in, x_in) = M * (y_out, x_out, 1)
  std::array<double, 6> matrix = {1, 0, 0, 0, 1, 0};
  int height = 0, width = 0;             // deformable only
  std::vector<double> displacement;      // 2 planes (dy, dx), h*w each
  double smoothing_sigma = 0.0;

  bool is_identity_matrix() const;
};

Transform2D identity_transform();

/// Draws transform parameters uniformly within the limits. Rotation,
/// scaling, and shear act about the image center. Deterministic in seed.
Transform2D sample_transform(Kind kind, uint64_t seed, const Limits& limits, int height, int width);

/// Bilinear interpolation; samples outside the grid read as 0.
std::vector<float> warp_image(const std::vector<float>& img, int height, int width, const Transform2D& t);

/// Nearest-neighbor; never invents a class that was not present.
std::vector<uint8_t> warp_labels(const std::vector<uint8_t>& labels, int height, int width,
                                 const Transform2D& t);

/// Applies an independently sampled transform (kind rotates through rigid,
/// affine, deformable) to every slice of a volume, image and labels jointly.
phantom::LabeledVolume augment_volume(const phantom::LabeledVolume& v, uint64_t seed, const Limits& limits);

}  // namespace srscn::augment
