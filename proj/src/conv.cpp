#include "kano/conv.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "kano/tensor.hpp"

namespace kano::conv {

namespace {

// Four partial sums so the loop vectorizes; the order is fixed.
inline double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}


// table[i * k + a] = clamp(stride * i + a - k/2, 0, extent - 1)
std::vector<std::size_t> index_table(std::size_t count, std::size_t k, std::size_t stride,
                                     std::size_t extent) {
  std::vector<std::size_t> table(count * k);
  const auto half = static_cast<std::ptrdiff_t>(k / 2);
  const auto last = static_cast<std::ptrdiff_t>(extent) - 1;
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t a = 0; a < k; ++a) {
      auto pos = static_cast<std::ptrdiff_t>(stride * i + a) - half;
      table[i * k + a] = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(pos, 0, last));
    }
  }
  return table;
}

}  // namespace

void Geometry::validate() const {
  if (channels == 0 || height == 0 || width == 0) throw ShapeError("conv: empty cube");
  if (ksize % 2 == 0) throw ShapeError("conv: kernel size must be odd");
  if (stride == 0) throw ShapeError("conv: stride must be >= 1");
  if (height % stride != 0 || width % stride != 0) {
    throw ShapeError("conv: dims " + std::to_string(height) + "x" + std::to_string(width) +
                     " not divisible by scale " + std::to_string(stride));
  }
}

void down(std::span<const double> x, std::span<const double> kernel, const Geometry& g,
          std::span<double> out) {
  const std::size_t k = g.ksize, h = g.low_height(), w = g.low_width();
  const auto rows = index_table(h, k, g.stride, g.height);
  const auto cols = index_table(w, k, g.stride, g.width);
  for (std::size_t c = 0; c < g.channels; ++c) {
    const double* xc = x.data() + c * g.height * g.width;
    double* yc = out.data() + c * h * w;
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        double acc = 0.0;
        for (std::size_t a = 0; a < k; ++a) {
          const double* xr = xc + rows[i * k + a] * g.width;
          const double* kr = kernel.data() + a * k;
          const std::size_t* cj = cols.data() + j * k;
          for (std::size_t b = 0; b < k; ++b) acc += kr[b] * xr[cj[b]];
        }
        yc[i * w + j] = acc;
      }
    }
  }
}

void up_transpose(std::span<const double> r, std::span<const double> kernel, const Geometry& g,
                  std::span<double> out) {
  const std::size_t k = g.ksize, h = g.low_height(), w = g.low_width();
  const auto rows = index_table(h, k, g.stride, g.height);
  const auto cols = index_table(w, k, g.stride, g.width);
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t c = 0; c < g.channels; ++c) {
    double* xc = out.data() + c * g.height * g.width;
    const double* rc = r.data() + c * h * w;
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const double v = rc[i * w + j];
        for (std::size_t a = 0; a < k; ++a) {
          double* xr = xc + rows[i * k + a] * g.width;
          const double* kr = kernel.data() + a * k;
          const std::size_t* cj = cols.data() + j * k;
          for (std::size_t b = 0; b < k; ++b) xr[cj[b]] += kr[b] * v;
        }
      }
    }
  }
}

void kernel_corr(std::span<const double> x, std::span<const double> r, const Geometry& g,
                 std::span<double> out) {
  const std::size_t k = g.ksize, h = g.low_height(), w = g.low_width();
  const auto rows = index_table(h, k, g.stride, g.height);
  const auto cols = index_table(w, k, g.stride, g.width);
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t c = 0; c < g.channels; ++c) {
    const double* xc = x.data() + c * g.height * g.width;
    const double* rc = r.data() + c * h * w;
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const double v = rc[i * w + j];
        for (std::size_t a = 0; a < k; ++a) {
          const double* xr = xc + rows[i * k + a] * g.width;
          double* gr = out.data() + a * k;
          const std::size_t* cj = cols.data() + j * k;
          for (std::size_t b = 0; b < k; ++b) gr[b] += v * xr[cj[b]];
        }
      }
    }
  }
}

void conv2d(std::span<const double> x, std::span<const double> weight, std::span<const double> bias,
            const Conv2dGeometry& g, std::span<double> out) {
  const std::size_t k = g.ksize, H = g.height, W = g.width, plane = H * W;
  const auto rows = index_table(H, k, 1, H);
  const auto cols = index_table(W, k, 1, W);
  // Gather replicate-padded shifted planes once per input channel and tap.
  std::vector<double> shifted(plane);
  for (std::size_t o = 0; o < g.out_channels; ++o) {
    std::fill(out.begin() + static_cast<std::ptrdiff_t>(o * plane),
              out.begin() + static_cast<std::ptrdiff_t>((o + 1) * plane),
              bias.empty() ? 0.0 : bias[o]);
  }
  for (std::size_t i = 0; i < g.in_channels; ++i) {
    const double* xi = x.data() + i * plane;
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = 0; b < k; ++b) {
        for (std::size_t h = 0; h < H; ++h) {
          const double* xr = xi + rows[h * k + a] * W;
          double* sr = shifted.data() + h * W;
          for (std::size_t w = 0; w < W; ++w) sr[w] = xr[cols[w * k + b]];
        }
        for (std::size_t o = 0; o < g.out_channels; ++o) {
          const double wt = weight[((o * g.in_channels + i) * k + a) * k + b];
          double* yo = out.data() + o * plane;
          for (std::size_t p = 0; p < plane; ++p) yo[p] += wt * shifted[p];
        }
      }
    }
  }
}

void conv2d_backward(std::span<const double> x, std::span<const double> weight,
                     std::span<const double> grad_out, const Conv2dGeometry& g,
                     std::span<double> grad_x, std::span<double> grad_weight,
                     std::span<double> grad_bias) {
  const std::size_t k = g.ksize, H = g.height, W = g.width, plane = H * W;
  const auto rows = index_table(H, k, 1, H);
  const auto cols = index_table(W, k, 1, W);
  if (!grad_bias.empty()) {
    for (std::size_t o = 0; o < g.out_channels; ++o) {
      double acc = 0.0;
      const double* go = grad_out.data() + o * plane;
      for (std::size_t p = 0; p < plane; ++p) acc += go[p];
      grad_bias[o] += acc;
    }
  }
  std::vector<double> shifted(plane);
  std::vector<double> gshift(plane);
  for (std::size_t i = 0; i < g.in_channels; ++i) {
    const double* xi = x.data() + i * plane;
    for (std::size_t a = 0; a < k; ++a) {
      for (std::size_t b = 0; b < k; ++b) {
        if (!grad_weight.empty()) {
          for (std::size_t h = 0; h < H; ++h) {
            const double* xr = xi + rows[h * k + a] * W;
            double* sr = shifted.data() + h * W;
            for (std::size_t w = 0; w < W; ++w) sr[w] = xr[cols[w * k + b]];
          }
        }
        std::fill(gshift.begin(), gshift.end(), 0.0);
        for (std::size_t o = 0; o < g.out_channels; ++o) {
          const std::size_t widx = ((o * g.in_channels + i) * k + a) * k + b;
          const double* go = grad_out.data() + o * plane;
          if (!grad_weight.empty()) {
            grad_weight[widx] += dot(go, shifted.data(), plane);
          }
          if (!grad_x.empty()) {
            const double wt = weight[widx];
            for (std::size_t p = 0; p < plane; ++p) gshift[p] += wt * go[p];
          }
        }
        if (!grad_x.empty()) {
          double* gxi = grad_x.data() + i * plane;
          for (std::size_t h = 0; h < H; ++h) {
            double* gr = gxi + rows[h * k + a] * W;
            const double* sr = gshift.data() + h * W;
            for (std::size_t w = 0; w < W; ++w) gr[cols[w * k + b]] += sr[w];
          }
        }
      }
    }
  }
}

}  // namespace kano::conv
