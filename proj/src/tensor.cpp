#include "dhvc/tensor.hpp"

#include <cmath>
#include <sstream>
#include <string>

#include "dhvc/errors.hpp"

namespace dhvc {

std::int64_t numel_of(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const std::vector<std::int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(std::vector<std::int64_t> s, double fill)
    : shape(std::move(s)), data(static_cast<std::size_t>(numel_of(shape)), fill) {}

Tensor Tensor::scalar(double v) {
  Tensor t;
  t.shape = {1};
  t.data = {v};
  return t;
}

Tensor Tensor::from(std::vector<double> v) {
  Tensor t;
  t.shape = {static_cast<std::int64_t>(v.size())};
  t.data = std::move(v);
  return t;
}

Tensor Tensor::from(std::vector<std::int64_t> s, std::vector<double> v) {
  if (numel_of(s) != static_cast<std::int64_t>(v.size()))
    throw ShapeError("tensor data length " + std::to_string(v.size()) +
                     " does not match shape " + shape_str(s));
  Tensor t;
  t.shape = std::move(s);
  t.data = std::move(v);
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw NumericalError(std::string("non-finite value in ") + what);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape) +
                     " vs " + shape_str(b.shape));
}

}  // namespace dhvc
