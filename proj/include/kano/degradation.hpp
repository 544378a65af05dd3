#pragma once

// Physical forward model: anisotropic Gaussian blur, blur + stride-s
// subsampling, its exact adjoint, additive white Gaussian noise and bicubic
// upsampling.
//
// Conventions: correlation (the kernel is not flipped), replicate padding,
// subsampling phase 0 (top-left sample of each s x s block), noise added on
// the low-resolution observation.

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "kano/tensor.hpp"

namespace kano {

inline constexpr double kSimplexTolerance = 1e-9;

// Blur kernel on the probability simplex: all entries >= 0, sum 1.
class Kernel {
 public:
  Kernel() : size_(1), values_{1.0} {}
  // Throws std::invalid_argument unless values form a k x k simplex kernel.
  Kernel(std::size_t size, std::vector<double> values);

  static Kernel delta(std::size_t size);
  static Kernel uniform(std::size_t size);

  std::size_t size() const { return size_; }
  double at(std::size_t row, std::size_t col) const { return values_[row * size_ + col]; }
  std::span<const double> values() const { return values_; }
  Tensor to_tensor() const { return Tensor({size_, size_}, values_); }

  friend bool operator==(const Kernel&, const Kernel&) = default;

 private:
  std::size_t size_;
  std::vector<double> values_;
};

bool on_simplex(std::span<const double> values, double tol = kSimplexTolerance);

// Kernel size used for each scale: 2 -> 11, 3 -> 15, 4 and 8 -> 21.
std::size_t default_kernel_size(std::size_t scale);

struct DegradationSpec {
  std::size_t scale = 2;
  std::size_t kernel_size = 11;
  double sigma_x = 1.5;  // std-dev in high-resolution pixels
  double sigma_y = 1.5;
  double theta = 0.0;    // radians
  double noise = 0.0;    // AWGN std-dev on the [0,1] intensity scale
  std::uint64_t seed = 0;

  void validate() const;
};

Kernel gaussian_kernel(std::size_t k, double sigma_x, double sigma_y, double theta);
// Outer product of two length-k std-1 Gaussians, normalized.
Kernel gaussian_sep_init(std::size_t k);

Cube conv_down(const Cube& x, const Kernel& kernel, std::size_t scale);
// Adjoint of conv_down: <conv_down(X,K,s), R> = <X, conv_up_transpose(R,K,s)>.
Cube conv_up_transpose(const Cube& r, const Kernel& kernel, std::size_t scale);
// Gradient of <conv_down(X,K,s), R> with respect to the kernel entries.
Tensor kernel_correlation(const Cube& x, const Cube& r, std::size_t ksize, std::size_t scale);

Cube awgn(const Cube& x, double level, std::uint64_t seed);

struct Degraded {
  Cube observation;
  Kernel kernel;
};

Degraded degrade(const Cube& x, const DegradationSpec& spec);

// Separable Keys cubic convolution (a = -0.5), pixel-center aligned, replicate
// boundary.
Cube bicubic_upsample(const Cube& y, std::size_t scale);
double cubic_weight(double t);

}  // namespace kano
