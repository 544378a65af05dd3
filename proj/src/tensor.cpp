#include "kano/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace kano {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(shape_size(shape), fill) {
  if (shape.size() > 4) throw ShapeError("tensor rank above 4");
}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  if (shape.size() > 4) throw ShapeError("tensor rank above 4");
  if (data.size() != shape_size(shape)) {
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_string(shape));
  }
}

double Tensor::item() const {
  if (data.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape));
  return data[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

Cube::Cube(std::size_t channels, std::size_t height, std::size_t width, double fill)
    : channels_(channels), height_(height), width_(width), values_(channels * height * width, fill) {
  if (channels == 0 || height == 0 || width == 0) throw ShapeError("cube dims must be >= 1");
}

Cube::Cube(std::size_t channels, std::size_t height, std::size_t width, std::vector<double> values)
    : channels_(channels), height_(height), width_(width), values_(std::move(values)) {
  if (channels == 0 || height == 0 || width == 0) throw ShapeError("cube dims must be >= 1");
  if (values_.size() != channels * height * width) throw ShapeError("cube payload length mismatch");
}

Cube Cube::from_tensor(const Tensor& t) {
  if (t.rank() != 3) throw ShapeError("cube needs a rank-3 tensor, got " + shape_string(t.shape));
  return Cube(t.shape[0], t.shape[1], t.shape[2], t.data);
}

Tensor Cube::to_tensor() const { return Tensor({channels_, height_, width_}, values_); }

bool Cube::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

Cube operator+(const Cube& a, const Cube& b) {
  if (!a.same_shape(b)) throw ShapeError("cube shape mismatch in +");
  Cube out = a;
  auto ov = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] += bv[i];
  return out;
}

Cube operator-(const Cube& a, const Cube& b) {
  if (!a.same_shape(b)) throw ShapeError("cube shape mismatch in -");
  Cube out = a;
  auto ov = out.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] -= bv[i];
  return out;
}

}  // namespace kano
