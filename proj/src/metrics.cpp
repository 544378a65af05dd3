#include "kano/metrics.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <stdexcept>

namespace kano {

namespace {

void require_same(const Cube& a, const Cube& b, const char* who) {
  if (!a.same_shape(b)) throw ShapeError(std::string(who) + ": cube shapes differ");
  if (a.size() == 0) throw ShapeError(std::string(who) + ": empty cube");
}

constexpr std::size_t kWindow = 11;

std::array<double, kWindow * kWindow> gaussian_window() {
  std::array<double, kWindow> g{};
  double s = 0.0;
  for (std::size_t i = 0; i < kWindow; ++i) {
    const double t = static_cast<double>(i) - 5.0;
    g[i] = std::exp(-t * t / (2.0 * 1.5 * 1.5));
    s += g[i];
  }
  std::array<double, kWindow * kWindow> w{};
  for (std::size_t i = 0; i < kWindow; ++i)
    for (std::size_t j = 0; j < kWindow; ++j) w[i * kWindow + j] = g[i] * g[j] / (s * s);
  return w;
}

}  // namespace

double psnr(const Cube& ref, const Cube& test, double peak) {
  require_same(ref, test, "psnr");
  if (!(peak > 0.0)) throw std::invalid_argument("psnr: peak must be positive");
  double acc = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double d = ref.values()[i] - test.values()[i];
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(ref.size());
  if (mse == 0.0) return kInfinitePsnr;
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const Cube& ref, const Cube& test, double peak) {
  require_same(ref, test, "ssim");
  if (ref.height() < kWindow || ref.width() < kWindow) {
    throw std::invalid_argument("ssim: images must be at least 11x11");
  }
  if (!(peak > 0.0)) throw std::invalid_argument("ssim: peak must be positive");
  static const auto w = gaussian_window();
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  const std::size_t rows = ref.height() - kWindow + 1, cols = ref.width() - kWindow + 1;
  double total = 0.0;
  for (std::size_t c = 0; c < ref.channels(); ++c) {
    double sum = 0.0;
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) {
        double ma = 0.0, mb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
        for (std::size_t u = 0; u < kWindow; ++u)
          for (std::size_t v = 0; v < kWindow; ++v) {
            const double wt = w[u * kWindow + v];
            const double a = ref.at(c, i + u, j + v), b = test.at(c, i + u, j + v);
            ma += wt * a;
            mb += wt * b;
            saa += wt * a * a;
            sbb += wt * b * b;
            sab += wt * a * b;
          }
        const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
        sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      }
    total += sum / static_cast<double>(rows * cols);
  }
  return total / static_cast<double>(ref.channels());
}

SpectralMetrics spectral_metrics(const Cube& ref, const Cube& test, std::size_t scale) {
  require_same(ref, test, "spectral_metrics");
  if (scale == 0) throw std::invalid_argument("spectral_metrics: scale must be >= 1");
  const std::size_t C = ref.channels(), P = ref.height() * ref.width();
  SpectralMetrics m;

  // SAM via 2 atan2(|a^ - b^|, |a^ + b^|), stable near 0 and pi.
  double angle_sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t p = 0; p < P; ++p) {
    double na = 0.0, nb = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const double a = ref.values()[c * P + p], b = test.values()[c * P + p];
      na += a * a;
      nb += b * b;
    }
    if (na == 0.0 || nb == 0.0) {
      ++m.sam_skipped;
      continue;
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    double dm = 0.0, dp = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const double a = ref.values()[c * P + p] / na, b = test.values()[c * P + p] / nb;
      dm += (a - b) * (a - b);
      dp += (a + b) * (a + b);
    }
    angle_sum += 2.0 * std::atan2(std::sqrt(dm), std::sqrt(dp));
    ++counted;
  }
  m.sam = counted ? angle_sum / static_cast<double>(counted) : std::nan("");

  double sq_total = 0.0, ergas_acc = 0.0, cc_acc = 0.0;
  std::size_t ergas_bands = 0, cc_bands = 0;
  for (std::size_t c = 0; c < C; ++c) {
    const double* a = ref.values().data() + c * P;
    const double* b = test.values().data() + c * P;
    double sq = 0.0, ma = 0.0, mb = 0.0;
    bool identical = true;
    for (std::size_t p = 0; p < P; ++p) {
      const double d = a[p] - b[p];
      sq += d * d;
      ma += a[p];
      mb += b[p];
      identical = identical && a[p] == b[p];
    }
    sq_total += sq;
    ma /= static_cast<double>(P);
    mb /= static_cast<double>(P);
    const double rmse_b = std::sqrt(sq / static_cast<double>(P));
    if (ma == 0.0) {
      ++m.ergas_skipped;
    } else {
      ergas_acc += (rmse_b / ma) * (rmse_b / ma);
      ++ergas_bands;
    }
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t p = 0; p < P; ++p) {
      const double da = a[p] - ma, db = b[p] - mb;
      sab += da * db;
      saa += da * da;
      sbb += db * db;
    }
    if (saa > 0.0 && sbb > 0.0) {
      cc_acc += sab / std::sqrt(saa * sbb);
      ++cc_bands;
    } else if (identical) {
      cc_acc += 1.0;
      ++cc_bands;
    } else {
      ++m.cc_skipped;
    }
  }
  m.rmse = std::sqrt(sq_total / static_cast<double>(ref.size()));
  m.ergas = ergas_bands ? 100.0 / static_cast<double>(scale) * std::sqrt(ergas_acc / static_cast<double>(ergas_bands))
                        : std::nan("");
  m.cc = cc_bands ? cc_acc / static_cast<double>(cc_bands) : std::nan("");
  return m;
}

std::vector<double> mse_map(const Cube& ref, const Cube& test, MseAxis axis) {
  require_same(ref, test, "mse_map");
  const std::size_t C = ref.channels(), P = ref.height() * ref.width();
  if (axis == MseAxis::Band) {
    std::vector<double> out(C, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t p = 0; p < P; ++p) {
        const double d = ref.values()[c * P + p] - test.values()[c * P + p];
        out[c] += d * d;
      }
      out[c] /= static_cast<double>(P);
    }
    return out;
  }
  std::vector<double> out(P, 0.0);
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t c = 0; c < C; ++c) {
      const double d = ref.values()[c * P + p] - test.values()[c * P + p];
      out[p] += d * d;
    }
    out[p] /= static_cast<double>(C);
  }
  return out;
}

MetricReport evaluate(const Cube& ref, const Cube& test, std::size_t scale, double peak) {
  MetricReport r;
  r.psnr = psnr(ref, test, peak);
  r.ssim = ssim(ref, test, peak);
  const SpectralMetrics s = spectral_metrics(ref, test, scale);
  r.sam = s.sam;
  r.rmse = s.rmse;
  r.ergas = s.ergas;
  r.cc = s.cc;
  r.sam_skipped = s.sam_skipped;
  r.ergas_skipped = s.ergas_skipped;
  r.cc_skipped = s.cc_skipped;
  return r;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string metric_csv_header() {
  return "psnr,ssim,sam,rmse,ergas,cc,sam_skipped,ergas_skipped,cc_skipped";
}

std::string metric_csv_row(const MetricReport& r) {
  return format_number(r.psnr) + "," + format_number(r.ssim) + "," + format_number(r.sam) + "," +
         format_number(r.rmse) + "," + format_number(r.ergas) + "," + format_number(r.cc) + "," +
         std::to_string(r.sam_skipped) + "," + std::to_string(r.ergas_skipped) + "," +
         std::to_string(r.cc_skipped);
}

}  // namespace kano
