#pragma once

// Full-reference image quality metrics. The first argument is always the
// reference.

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "kano/tensor.hpp"

namespace kano {

inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

// 10 log10(peak^2 / MSE); +inf when the cubes are identical.
double psnr(const Cube& ref, const Cube& test, double peak = 1.0);

// Per-channel SSIM over every fully contained 11x11 Gaussian window
// (sigma 1.5), averaged over windows and channels.
double ssim(const Cube& ref, const Cube& test, double peak = 1.0);

struct SpectralMetrics {
  double sam = 0.0;    // radians, mean over pixels with non-zero spectra
  double rmse = 0.0;
  double ergas = 0.0;
  double cc = 0.0;     // mean per-band Pearson correlation
  std::size_t sam_skipped = 0;
  std::size_t ergas_skipped = 0;  // bands with zero reference mean
  std::size_t cc_skipped = 0;     // bands with zero variance
};

SpectralMetrics spectral_metrics(const Cube& ref, const Cube& test, std::size_t scale);

enum class MseAxis { Band, Pixel };

// Band: one value per channel. Pixel: H*W values, row-major.
std::vector<double> mse_map(const Cube& ref, const Cube& test, MseAxis axis);

struct MetricReport {
  double psnr = 0.0;
  double ssim = 0.0;
  double sam = 0.0;
  double rmse = 0.0;
  double ergas = 0.0;
  double cc = 0.0;
  std::size_t sam_skipped = 0;
  std::size_t ergas_skipped = 0;
  std::size_t cc_skipped = 0;
};

MetricReport evaluate(const Cube& ref, const Cube& test, std::size_t scale, double peak = 1.0);

// Shortest round-trip decimal; +inf as "inf", NaN as "nan".
std::string format_number(double v);

std::string metric_csv_header();
std::string metric_csv_row(const MetricReport& r);

}  // namespace kano
