#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "srscn/errors.hpp"

namespace srscn::diff {

using Shape = std::vector<int>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major tensor of doubles.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(static_cast<size_t>(numel(shape)), 0.0) {}
  Tensor(Shape s, std::vector<double> values);

  static Tensor full(Shape s, double v);
  static Tensor scalar(double v) { return Tensor{{1}, {v}}; }

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  /// Index into an (n, c, h, w) tensor.
  double& at4(int n, int c, int h, int w) {
    return data[static_cast<size_t>(((static_cast<int64_t>(n) * dim(1) + c) * dim(2) + h) * dim(3) + w)];
  }
  double at4(int n, int c, int h, int w) const {
    return data[static_cast<size_t>(((static_cast<int64_t>(n) * dim(1) + c) * dim(2) + h) * dim(3) + w)];
  }
};

bool same_shape(const Tensor& a, const Tensor& b);

}  // namespace srscn::diff
