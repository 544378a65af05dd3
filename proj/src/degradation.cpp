#include "kano/degradation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "kano/conv.hpp"

namespace kano {

bool on_simplex(std::span<const double> values, double tol) {
  double s = 0.0;
  for (double v : values) {
    if (!(v >= 0.0) || !std::isfinite(v)) return false;
    s += v;
  }
  return std::abs(s - 1.0) <= tol;
}

Kernel::Kernel(std::size_t size, std::vector<double> values) : size_(size), values_(std::move(values)) {
  if (size == 0 || size % 2 == 0) throw std::invalid_argument("kernel size must be odd");
  if (values_.size() != size * size) throw std::invalid_argument("kernel needs k*k values");
  if (!on_simplex(values_)) throw std::invalid_argument("kernel is not on the probability simplex");
}

Kernel Kernel::delta(std::size_t size) {
  std::vector<double> v(size * size, 0.0);
  v[(size / 2) * size + size / 2] = 1.0;
  return Kernel(size, std::move(v));
}

Kernel Kernel::uniform(std::size_t size) {
  return Kernel(size, std::vector<double>(size * size, 1.0 / static_cast<double>(size * size)));
}

std::size_t default_kernel_size(std::size_t scale) {
  switch (scale) {
    case 1:
    case 2:
      return 11;
    case 3:
      return 15;
    default:
      return 21;
  }
}

void DegradationSpec::validate() const {
  if (scale == 0) throw std::invalid_argument("scale must be >= 1");
  if (kernel_size == 0 || kernel_size % 2 == 0) throw std::invalid_argument("kernel size must be odd");
  if (!(sigma_x > 0.0) || !(sigma_y > 0.0)) throw std::invalid_argument("sigma must be positive");
  if (!std::isfinite(theta)) throw std::invalid_argument("theta must be finite");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw std::invalid_argument("noise level must be >= 0");
}

Kernel gaussian_kernel(std::size_t k, double sigma_x, double sigma_y, double theta) {
  if (k == 0 || k % 2 == 0) throw std::invalid_argument("gaussian_kernel: size must be odd");
  if (!(sigma_x > 0.0) || !(sigma_y > 0.0)) throw std::invalid_argument("gaussian_kernel: sigma must be positive");
  // Inverse covariance R diag(1/sx^2, 1/sy^2) R^T.
  const double c = std::cos(theta), s = std::sin(theta);
  const double ix = 1.0 / (sigma_x * sigma_x), iy = 1.0 / (sigma_y * sigma_y);
  const double a = c * c * ix + s * s * iy;
  const double b = c * s * (ix - iy);
  const double d = s * s * ix + c * c * iy;
  const auto half = static_cast<double>(k / 2);
  std::vector<double> v(k * k);
  for (std::size_t row = 0; row < k; ++row) {
    const double dy = static_cast<double>(row) - half;
    for (std::size_t col = 0; col < k; ++col) {
      const double dx = static_cast<double>(col) - half;
      v[row * k + col] = std::exp(-0.5 * (a * dx * dx + 2.0 * b * dx * dy + d * dy * dy));
    }
  }
  const double total = std::accumulate(v.begin(), v.end(), 0.0);
  for (auto& x : v) x /= total;
  return Kernel(k, std::move(v));
}

Kernel gaussian_sep_init(std::size_t k) {
  if (k == 0 || k % 2 == 0) throw std::invalid_argument("gaussian_sep_init: size must be odd");
  const auto half = static_cast<double>(k / 2);
  std::vector<double> g(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double t = static_cast<double>(i) - half;
    g[i] = std::exp(-0.5 * t * t);
  }
  const double gs = std::accumulate(g.begin(), g.end(), 0.0);
  for (auto& x : g) x /= gs;
  std::vector<double> v(k * k);
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t c = 0; c < k; ++c) v[r * k + c] = g[r] * g[c];
  const double total = std::accumulate(v.begin(), v.end(), 0.0);
  for (auto& x : v) x /= total;
  return Kernel(k, std::move(v));
}

Cube conv_down(const Cube& x, const Kernel& kernel, std::size_t scale) {
  conv::Geometry g{x.channels(), x.height(), x.width(), kernel.size(), scale};
  g.validate();
  Cube out(g.channels, g.low_height(), g.low_width());
  conv::down(x.values(), kernel.values(), g, out.values());
  return out;
}

Cube conv_up_transpose(const Cube& r, const Kernel& kernel, std::size_t scale) {
  conv::Geometry g{r.channels(), r.height() * scale, r.width() * scale, kernel.size(), scale};
  g.validate();
  Cube out(g.channels, g.height, g.width);
  conv::up_transpose(r.values(), kernel.values(), g, out.values());
  return out;
}

Tensor kernel_correlation(const Cube& x, const Cube& r, std::size_t ksize, std::size_t scale) {
  conv::Geometry g{x.channels(), x.height(), x.width(), ksize, scale};
  g.validate();
  if (r.channels() != g.channels || r.height() != g.low_height() || r.width() != g.low_width()) {
    throw ShapeError("kernel_correlation: residual shape does not match image / scale");
  }
  Tensor out({ksize, ksize});
  conv::kernel_corr(x.values(), r.values(), g, out.data);
  return out;
}

Cube awgn(const Cube& x, double level, std::uint64_t seed) {
  if (!(level >= 0.0) || !std::isfinite(level)) throw std::invalid_argument("awgn: level must be >= 0");
  if (level == 0.0) return x;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, level);
  Cube out = x;
  for (auto& v : out.values()) v += normal(rng);
  return out;
}

Degraded degrade(const Cube& x, const DegradationSpec& spec) {
  spec.validate();
  Kernel k = gaussian_kernel(spec.kernel_size, spec.sigma_x, spec.sigma_y, spec.theta);
  Cube y = awgn(conv_down(x, k, spec.scale), spec.noise, spec.seed);
  return {std::move(y), std::move(k)};
}

double cubic_weight(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

namespace {

struct Taps {
  std::array<std::size_t, 4> index;
  std::array<double, 4> weight;
};

std::vector<Taps> resample_taps(std::size_t in_len, std::size_t scale) {
  const std::size_t out_len = in_len * scale;
  std::vector<Taps> taps(out_len);
  const auto last = static_cast<std::ptrdiff_t>(in_len) - 1;
  for (std::size_t o = 0; o < out_len; ++o) {
    const double u = (static_cast<double>(o) + 0.5) / static_cast<double>(scale) - 0.5;
    const double base = std::floor(u);
    const double frac = u - base;
    for (int m = 0; m < 4; ++m) {
      const auto idx = static_cast<std::ptrdiff_t>(base) - 1 + m;
      taps[o].index[m] = static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(idx, 0, last));
      taps[o].weight[m] = cubic_weight(frac - static_cast<double>(m - 1));
    }
  }
  return taps;
}

}  // namespace

Cube bicubic_upsample(const Cube& y, std::size_t scale) {
  if (scale == 0) throw std::invalid_argument("bicubic_upsample: scale must be >= 1");
  if (scale == 1) return y;
  const std::size_t C = y.channels(), h = y.height(), w = y.width();
  const std::size_t H = h * scale, W = w * scale;
  const auto row_taps = resample_taps(h, scale);
  const auto col_taps = resample_taps(w, scale);
  // Horizontal pass then vertical pass.
  std::vector<double> tmp(C * h * W);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        double acc = 0.0;
        for (int m = 0; m < 4; ++m) acc += col_taps[j].weight[m] * y.at(c, i, col_taps[j].index[m]);
        tmp[(c * h + i) * W + j] = acc;
      }
  Cube out(C, H, W);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        double acc = 0.0;
        for (int m = 0; m < 4; ++m) acc += row_taps[i].weight[m] * tmp[(c * h + row_taps[i].index[m]) * W + j];
        out.at(c, i, j) = acc;
      }
  return out;
}

}  // namespace kano
