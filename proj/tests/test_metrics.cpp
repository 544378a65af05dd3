#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "kano/metrics.hpp"
#include "test_support.hpp"

using namespace kano;
using namespace kano::testing;

TEST_CASE("psnr closed forms, sentinel and symmetry") {
  const Cube a(3, 4, 4, 0.0), b(3, 4, 4, 0.5);
  CHECK(psnr(a, b) == doctest::Approx(20.0 * std::log10(2.0)).epsilon(1e-12));
  CHECK(psnr(a, a) == kInfinitePsnr);
  CHECK(std::isinf(psnr(b, b)));
  CHECK(psnr(Cube(1, 2, 2, 0.0), Cube(1, 2, 2, 127.5), 255.0) == doctest::Approx(20.0 * std::log10(2.0)));
  std::mt19937_64 rng(1);
  const auto x = random_cube(3, 8, 8, rng), y = random_cube(3, 8, 8, rng);
  CHECK(psnr(x, y) == psnr(y, x));
  CHECK_THROWS(psnr(x, Cube(3, 8, 7)));
  CHECK_THROWS(psnr(x, y, 0.0));
}

TEST_CASE("ssim identities") {
  std::mt19937_64 rng(2);
  const auto a = random_cube(3, 16, 16, rng);
  CHECK(ssim(a, a) == 1.0);
  Cube inv(3, 16, 16);
  for (std::size_t i = 0; i < a.size(); ++i) inv.values()[i] = 1.0 - a.values()[i];
  CHECK(ssim(a, inv) < 1.0);
  const auto b = random_cube(3, 16, 16, rng);
  CHECK(std::abs(ssim(a, b) - ssim(b, a)) <= 1e-12);
  CHECK(ssim(a, b) <= 1.0);
  CHECK_THROWS(ssim(Cube(1, 10, 16), Cube(1, 10, 16)));
}

TEST_CASE("spectral metric closed forms") {
  std::mt19937_64 rng(3);
  const auto a = random_cube(4, 6, 6, rng, 0.1, 1.0);
  const auto same = spectral_metrics(a, a, 2);
  CHECK(same.sam == 0.0);
  CHECK(same.rmse == 0.0);
  CHECK(same.ergas == 0.0);
  CHECK(same.cc == 1.0);

  Cube e1(2, 3, 3), e2(2, 3, 3);
  for (std::size_t p = 0; p < 9; ++p) {
    e1.values()[p] = 1.0;
    e2.values()[9 + p] = 1.0;
  }
  CHECK(spectral_metrics(e1, e2, 1).sam == doctest::Approx(std::numbers::pi / 2).epsilon(1e-14));

  Cube scaled = a;
  for (auto& v : scaled.values()) v *= 3.7;
  CHECK(spectral_metrics(a, scaled, 2).sam <= 1e-12);

  Cube affine = a;
  const std::size_t plane = 36;
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t p = 0; p < plane; ++p) affine.values()[c * plane + p] = (0.5 + c) * a.values()[c * plane + p] + 0.3 * c - 0.1;
  CHECK(std::abs(spectral_metrics(a, affine, 2).cc - 1.0) <= 1e-9);

  Cube with_zero = a;
  for (std::size_t c = 0; c < 4; ++c) with_zero.values()[c * plane] = 0.0;
  const auto z = spectral_metrics(with_zero, a, 2);
  CHECK(z.sam_skipped == 1);
  CHECK(std::isfinite(z.sam));

  Cube zero_band = a;
  for (std::size_t p = 0; p < plane; ++p) zero_band.values()[p] = 0.0;
  const auto zb = spectral_metrics(zero_band, a, 2);
  CHECK(zb.ergas_skipped == 1);
  CHECK(zb.cc_skipped == 1);
}

TEST_CASE("all metrics match naive oracles on random pairs") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = random_cube(3, 16, 16, rng, 0.05, 1.0);
    const auto b = random_cube(3, 16, 16, rng, 0.05, 1.0);
    const auto r = evaluate(a, b, 2);
    CHECK(std::abs(r.psnr - naive_psnr(a, b)) <= 1e-9);
    CHECK(std::abs(r.ssim - naive_ssim(a, b)) <= 1e-6);
    CHECK(std::abs(r.sam - naive_sam(a, b)) <= 1e-9);
    CHECK(std::abs(r.rmse - naive_rmse(a, b)) <= 1e-9);
    CHECK(std::abs(r.ergas - naive_ergas(a, b, 2)) <= 1e-9);
    CHECK(std::abs(r.cc - naive_cc(a, b)) <= 1e-9);
  }
}

TEST_CASE("mse maps") {
  std::mt19937_64 rng(5);
  const auto a = random_cube(3, 4, 5, rng);
  for (double v : mse_map(a, a, MseAxis::Band)) CHECK(v == 0.0);
  Cube b = a;
  b.at(1, 2, 3) += 0.5;
  const auto band = mse_map(a, b, MseAxis::Band);
  const auto pix = mse_map(a, b, MseAxis::Pixel);
  REQUIRE(band.size() == 3);
  REQUIRE(pix.size() == 20);
  CHECK(band[0] == 0.0);
  CHECK(band[1] == doctest::Approx(0.25 / 20.0));
  CHECK(band[2] == 0.0);
  for (std::size_t p = 0; p < 20; ++p) CHECK(pix[p] == (p == 2 * 5 + 3 ? doctest::Approx(0.25 / 3.0) : doctest::Approx(0.0)));

  const auto c = random_cube(3, 4, 5, rng);
  const auto pm = mse_map(a, c, MseAxis::Pixel);
  for (std::size_t p = 0; p < 20; ++p) {
    double s = 0.0;
    for (std::size_t ch = 0; ch < 3; ++ch) s += std::pow(a.values()[ch * 20 + p] - c.values()[ch * 20 + p], 2);
    CHECK(pm[p] == doctest::Approx(s / 3.0).epsilon(1e-14));
  }
  CHECK_THROWS(mse_map(a, Cube(2, 4, 5), MseAxis::Band));
}

TEST_CASE("CSV formatting") {
  CHECK(format_number(kInfinitePsnr) == "inf");
  CHECK(format_number(std::nan("")) == "nan");
  CHECK(format_number(0.25) == "0.25");
  CHECK(std::stod(format_number(0.1 + 0.2)) == 0.1 + 0.2);
  std::mt19937_64 rng(6);
  const auto a = random_cube(3, 12, 12, rng);
  const auto row = metric_csv_row(evaluate(a, a, 2));
  CHECK(row.rfind("inf,1,0,0,0,1", 0) == 0);
  CHECK(metric_csv_header().rfind("psnr,ssim,sam,rmse,ergas,cc", 0) == 0);
}
