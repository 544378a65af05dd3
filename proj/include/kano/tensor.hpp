#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace kano {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major real array of rank 0-4. Rank 0 holds one element.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() : data(1, 0.0) {}
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t axis) const { return shape.at(axis); }
  double item() const;

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  std::span<double> span() { return data; }
  std::span<const double> span() const { return data; }

  bool all_finite() const;
  bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

// Image or latent cube laid out (C, H, W), index (c*H + h)*W + w.
class Cube {
 public:
  Cube() = default;
  Cube(std::size_t channels, std::size_t height, std::size_t width, double fill = 0.0);
  Cube(std::size_t channels, std::size_t height, std::size_t width, std::vector<double> values);

  static Cube from_tensor(const Tensor& t);
  Tensor to_tensor() const;

  std::size_t channels() const { return channels_; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return values_.size(); }

  double& at(std::size_t c, std::size_t h, std::size_t w) {
    return values_[(c * height_ + h) * width_ + w];
  }
  double at(std::size_t c, std::size_t h, std::size_t w) const {
    return values_[(c * height_ + h) * width_ + w];
  }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double>& storage() { return values_; }

  bool same_shape(const Cube& other) const {
    return channels_ == other.channels_ && height_ == other.height_ && width_ == other.width_;
  }
  bool all_finite() const;

  friend bool operator==(const Cube&, const Cube&) = default;

 private:
  std::size_t channels_ = 0;
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> values_;
};

Cube operator+(const Cube& a, const Cube& b);
Cube operator-(const Cube& a, const Cube& b);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace kano
