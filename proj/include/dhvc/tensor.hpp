// dhvc/tensor.hpp -- dense row-major tensor value type.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dhvc {

struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> s, double fill = 0.0);

  static Tensor scalar(double v);
  static Tensor from(std::vector<double> v);  // rank-1
  static Tensor from(std::vector<std::int64_t> s, std::vector<double> v);

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  std::int64_t dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  double& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

  double& at2(std::int64_t r, std::int64_t c) { return data[static_cast<std::size_t>(r * shape[1] + c)]; }
  double at2(std::int64_t r, std::int64_t c) const { return data[static_cast<std::size_t>(r * shape[1] + c)]; }
  double& at3(std::int64_t a, std::int64_t b, std::int64_t c) {
    return data[static_cast<std::size_t>((a * shape[1] + b) * shape[2] + c)];
  }
  double at3(std::int64_t a, std::int64_t b, std::int64_t c) const {
    return data[static_cast<std::size_t>((a * shape[1] + b) * shape[2] + c)];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;
};

std::int64_t numel_of(const std::vector<std::int64_t>& shape);
std::string shape_str(const std::vector<std::int64_t>& shape);

// Throws NumericalError naming `what` if any entry is non-finite.
void require_finite(const Tensor& t, const char* what);
// Throws ShapeError if shapes differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace dhvc
