#pragma once

#include <cstddef>
#include <span>
#include <vector>

// Raw strided-correlation kernels shared by the degradation operators and the
// autodiff engine. All routines use replicate (edge-extend) padding.
//
// For X (C,H,W), kernel k x k (odd) and stride s, with p = k/2 and
// cl(i) = clamp(i, 0, H-1):
//   down:         Y[c,i,j]  = sum_ab K[a,b] X[c, cl(s i + a - p), cl(s j + b - p)]
//   up_transpose: the exact adjoint of down in X
//   kernel_corr:  G[a,b]    = sum_cij R[c,i,j] X[c, cl(s i + a - p), cl(s j + b - p)]
// so that <down(X,K), R> = <X, up_transpose(R,K)> = <K, kernel_corr(X,R)>.
namespace kano::conv {

struct Geometry {
  std::size_t channels = 1;
  std::size_t height = 1;  // high-resolution rows
  std::size_t width = 1;
  std::size_t ksize = 1;
  std::size_t stride = 1;

  std::size_t low_height() const { return height / stride; }
  std::size_t low_width() const { return width / stride; }
  void validate() const;
};

void down(std::span<const double> x, std::span<const double> kernel, const Geometry& g,
          std::span<double> out);
void up_transpose(std::span<const double> r, std::span<const double> kernel, const Geometry& g,
                  std::span<double> out);
void kernel_corr(std::span<const double> x, std::span<const double> r, const Geometry& g,
                 std::span<double> out);

// Multi-channel stride-1 convolution (correlation) with replicate padding:
//   y[o,h,w] = bias[o] + sum_{i,a,b} w[o,i,a,b] x[i, cl(h+a-p), cl(w+b-p)]
struct Conv2dGeometry {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t ksize = 3;
};

void conv2d(std::span<const double> x, std::span<const double> weight, std::span<const double> bias,
            const Conv2dGeometry& g, std::span<double> out);
// Accumulates into whichever gradient spans are non-empty.
void conv2d_backward(std::span<const double> x, std::span<const double> weight,
                     std::span<const double> grad_out, const Conv2dGeometry& g,
                     std::span<double> grad_x, std::span<double> grad_weight,
                     std::span<double> grad_bias);

}  // namespace kano::conv
