#include "srscn/augment.hpp"

#include <algorithm>
#include <cmath>

#include "srscn/rng.hpp"

namespace srscn::augment {

namespace {

constexpr double kPi = 3.14159265358979323846;

// 2x3 matrices composing as affine maps on (y, x).
std::array<double, 6> compose(const std::array<double, 6>& a, const std::array<double, 6>& b) {
  // result = a . b (apply b first)
  return {a[0] * b[0] + a[1] * b[3], a[0] * b[1] + a[1] * b[4], a[0] * b[2] + a[1] * b[5] + a[2],
          a[3] * b[0] + a[4] * b[3], a[3] * b[1] + a[4] * b[4], a[3] * b[2] + a[4] * b[5] + a[5]};
}

std::array<double, 6> translation(double ty, double tx) { return {1, 0, ty, 0, 1, tx}; }

// Gaussian blur of one plane, separable, zero padded.
void gaussian_blur(std::vector<double>& plane, int h, int w, double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<size_t>(i + radius)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += kernel[static_cast<size_t>(i + radius)];
  }
  for (double& k : kernel) k /= sum;

  std::vector<double> tmp(plane.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int xx = x + i;
        if (xx >= 0 && xx < w) acc += kernel[static_cast<size_t>(i + radius)] * plane[static_cast<size_t>(y) * w + xx];
      }
      tmp[static_cast<size_t>(y) * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int yy = y + i;
        if (yy >= 0 && yy < h) acc += kernel[static_cast<size_t>(i + radius)] * tmp[static_cast<size_t>(yy) * w + x];
      }
      plane[static_cast<size_t>(y) * w + x] = acc;
    }
}

inline void sample_position(const Transform2D& t, int y, int x, double& yi, double& xi) {
  yi = t.matrix[0] * y + t.matrix[1] * x + t.matrix[2];
  xi = t.matrix[3] * y + t.matrix[4] * x + t.matrix[5];
  if (t.kind == Kind::Deformable && !t.displacement.empty()) {
    const size_t i = static_cast<size_t>(y) * t.width + x;
    yi += t.displacement[i];
    xi += t.displacement[static_cast<size_t>(t.height) * t.width + i];
  }
}

}  // namespace

bool Transform2D::is_identity_matrix() const {
  const std::array<double, 6> id = {1, 0, 0, 0, 1, 0};
  for (int i = 0; i < 6; ++i)
    if (std::abs(matrix[static_cast<size_t>(i)] - id[static_cast<size_t>(i)]) > 1e-12) return false;
  return true;
}

Transform2D identity_transform() { return Transform2D{}; }

Transform2D sample_transform(Kind kind, uint64_t seed, const Limits& limits, int height, int width) {
  if (height <= 0 || width <= 0) throw ConfigError("sample_transform: image dims must be positive");
  if (limits.max_rotation_deg < 0 || limits.max_translation_px < 0 || limits.max_scale_dev < 0 ||
      limits.max_shear < 0 || limits.max_displacement_px < 0 || !(limits.smoothing_sigma_px > 0))
    throw ConfigError("sample_transform: limits out of range");

  Rng rng(seed);
  Transform2D t;
  t.kind = kind;
  const double cy = (height - 1) / 2.0, cx = (width - 1) / 2.0;

  switch (kind) {
    case Kind::Rigid: {
      const double theta = rng.uniform(-limits.max_rotation_deg, limits.max_rotation_deg) * kPi / 180.0;
      const double ty = rng.uniform(-limits.max_translation_px, limits.max_translation_px);
      const double tx = rng.uniform(-limits.max_translation_px, limits.max_translation_px);
      const std::array<double, 6> rot = {std::cos(theta), -std::sin(theta), 0,
                                         std::sin(theta), std::cos(theta), 0};
      t.matrix = compose(translation(cy + ty, cx + tx), compose(rot, translation(-cy, -cx)));
      break;
    }
    case Kind::Affine: {
      const double theta = rng.uniform(-limits.max_rotation_deg, limits.max_rotation_deg) * kPi / 180.0;
      const double sy = 1.0 + rng.uniform(-limits.max_scale_dev, limits.max_scale_dev);
      const double sx = 1.0 + rng.uniform(-limits.max_scale_dev, limits.max_scale_dev);
      const double shear = rng.uniform(-limits.max_shear, limits.max_shear);
      const double ty = rng.uniform(-limits.max_translation_px, limits.max_translation_px);
      const double tx = rng.uniform(-limits.max_translation_px, limits.max_translation_px);
      const std::array<double, 6> rot = {std::cos(theta), -std::sin(theta), 0,
                                         std::sin(theta), std::cos(theta), 0};
      const std::array<double, 6> scale_shear = {sy, shear, 0, 0, sx, 0};
      t.matrix = compose(translation(cy + ty, cx + tx),
                         compose(rot, compose(scale_shear, translation(-cy, -cx))));
      break;
    }
    case Kind::Deformable: {
      t.height = height;
      t.width = width;
      t.smoothing_sigma = limits.smoothing_sigma_px;
      const size_t plane = static_cast<size_t>(height) * width;
      t.displacement.resize(2 * plane);
      for (double& d : t.displacement) d = rng.normal();
      if (limits.max_displacement_px == 0.0) {
        std::fill(t.displacement.begin(), t.displacement.end(), 0.0);
        break;
      }
      std::vector<double> dy(t.displacement.begin(), t.displacement.begin() + static_cast<long>(plane));
      std::vector<double> dx(t.displacement.begin() + static_cast<long>(plane), t.displacement.end());
      gaussian_blur(dy, height, width, limits.smoothing_sigma_px);
      gaussian_blur(dx, height, width, limits.smoothing_sigma_px);
      double maxnorm = 0.0;
      for (size_t i = 0; i < plane; ++i)
        maxnorm = std::max(maxnorm, std::hypot(dy[i], dx[i]));
      const double s = maxnorm > 0.0 ? limits.max_displacement_px / maxnorm : 0.0;
      for (size_t i = 0; i < plane; ++i) {
        t.displacement[i] = dy[i] * s;
        t.displacement[plane + i] = dx[i] * s;
      }
      break;
    }
    default:
      throw ConfigError("sample_transform: unknown transform kind");
  }
  return t;
}

std::vector<float> warp_image(const std::vector<float>& img, int height, int width, const Transform2D& t) {
  if (static_cast<size_t>(height) * width != img.size())
    throw ShapeError("warp_image: image size does not match dims");
  if (t.kind == Kind::Deformable && !t.displacement.empty() && (t.height != height || t.width != width))
    throw ShapeError("warp_image: displacement field dims do not match image");

  std::vector<float> out(img.size(), 0.0f);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double yi, xi;
      sample_position(t, y, x, yi, xi);
      const int y0 = static_cast<int>(std::floor(yi));
      const int x0 = static_cast<int>(std::floor(xi));
      const double fy = yi - y0, fx = xi - x0;
      double acc = 0.0;
      for (int dy = 0; dy <= 1; ++dy)
        for (int dx = 0; dx <= 1; ++dx) {
          const int yy = y0 + dy, xx = x0 + dx;
          if (yy < 0 || yy >= height || xx < 0 || xx >= width) continue;  // background 0
          const double wgt = (dy ? fy : 1.0 - fy) * (dx ? fx : 1.0 - fx);
          acc += wgt * img[static_cast<size_t>(yy) * width + xx];
        }
      out[static_cast<size_t>(y) * width + x] = static_cast<float>(acc);
    }
  }
  return out;
}

std::vector<uint8_t> warp_labels(const std::vector<uint8_t>& labels, int height, int width,
                                 const Transform2D& t) {
  if (static_cast<size_t>(height) * width != labels.size())
    throw ShapeError("warp_labels: label grid size does not match dims");
  if (t.kind == Kind::Deformable && !t.displacement.empty() && (t.height != height || t.width != width))
    throw ShapeError("warp_labels: displacement field dims do not match image");

  std::vector<uint8_t> out(labels.size(), 0);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double yi, xi;
      sample_position(t, y, x, yi, xi);
      const int yy = static_cast<int>(std::floor(yi + 0.5));
      const int xx = static_cast<int>(std::floor(xi + 0.5));
      if (yy < 0 || yy >= height || xx < 0 || xx >= width) continue;
      out[static_cast<size_t>(y) * width + x] = labels[static_cast<size_t>(yy) * width + xx];
    }
  }
  return out;
}

phantom::LabeledVolume augment_volume(const phantom::LabeledVolume& v, uint64_t seed, const Limits& limits) {
  v.validate();
  phantom::LabeledVolume out = v;
  const int h = v.dims[1], w = v.dims[2];
  const size_t plane = static_cast<size_t>(h) * w;
  constexpr Kind kinds[3] = {Kind::Rigid, Kind::Affine, Kind::Deformable};
  for (int z = 0; z < v.dims[0]; ++z) {
    Rng pick(mix_seed(seed, static_cast<uint64_t>(z)));
    const Kind kind = kinds[pick.uniform_int(0, 2)];
    const Transform2D t = sample_transform(kind, mix_seed(seed, 1000 + static_cast<uint64_t>(z)), limits, h, w);

    std::vector<float> img(v.intensities.begin() + static_cast<long>(z * plane),
                           v.intensities.begin() + static_cast<long>((z + 1) * plane));
    std::vector<uint8_t> lab(v.labels.begin() + static_cast<long>(z * plane),
                             v.labels.begin() + static_cast<long>((z + 1) * plane));
    const auto wimg = warp_image(img, h, w, t);
    const auto wlab = warp_labels(lab, h, w, t);
    std::copy(wimg.begin(), wimg.end(), out.intensities.begin() + static_cast<long>(z * plane));
    std::copy(wlab.begin(), wlab.end(), out.labels.begin() + static_cast<long>(z * plane));
  }
  return out;
}

}  // namespace srscn::augment
