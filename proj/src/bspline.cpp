#include "kano/bspline.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

namespace kano {

namespace {

constexpr std::size_t kMaxDegree = 7;

// Index j of the base span containing x, knots[j] <= x < knots[j+1].
std::size_t find_span(double x, std::span<const double> knots, std::size_t degree) {
  const std::size_t n = knots.size() - degree - 1;
  if (x >= knots[n]) return n - 1;
  auto it = std::upper_bound(knots.begin() + static_cast<std::ptrdiff_t>(degree),
                             knots.begin() + static_cast<std::ptrdiff_t>(n), x);
  return static_cast<std::size_t>(it - knots.begin()) - 1;
}

// Nonzero basis values of the given degree on span j; out[r] is B_{j-degree+r}.
void local_basis(double x, std::size_t j, std::size_t degree, std::span<const double> t,
                 std::span<double> out) {
  std::array<double, kMaxDegree + 1> left{};
  std::array<double, kMaxDegree + 1> right{};
  out[0] = 1.0;
  for (std::size_t r = 1; r <= degree; ++r) {
    left[r] = x - t[j + 1 - r];
    right[r] = t[j + r] - x;
    double saved = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
      const double temp = out[i] / (right[i + 1] + left[r - i]);
      out[i] = saved + right[i + 1] * temp;
      saved = left[r - i] * temp;
    }
    out[r] = saved;
  }
}

}  // namespace

std::vector<double> SplineGrid::knots() const {
  validate();
  const double h = spacing();
  const std::size_t count = intervals + 2 * degree + 1;
  std::vector<double> t(count);
  for (std::size_t i = 0; i < count; ++i) {
    t[i] = lo + (static_cast<double>(i) - static_cast<double>(degree)) * h;
  }
  // Pin the base interval end points exactly.
  t[degree] = lo;
  t[degree + intervals] = hi;
  return t;
}

void SplineGrid::validate() const {
  if (!(hi > lo) || !std::isfinite(lo) || !std::isfinite(hi)) {
    throw KnotError("spline grid needs finite lo < hi");
  }
  if (intervals == 0) throw KnotError("spline grid needs at least one interval");
  if (degree > kMaxDegree) throw KnotError("spline degree above " + std::to_string(kMaxDegree));
}

void check_knots(std::span<const double> knots, std::size_t degree) {
  if (degree > kMaxDegree) throw KnotError("spline degree above " + std::to_string(kMaxDegree));
  if (knots.size() < 2 * degree + 2) throw KnotError("too few knots for degree");
  for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
    if (!(knots[i] < knots[i + 1])) throw KnotError("knots must be strictly increasing");
  }
}

std::vector<double> bspline_basis(double x, std::span<const double> knots, std::size_t degree) {
  check_knots(knots, degree);
  if (std::isnan(x)) throw std::invalid_argument("bspline_basis: x is NaN");
  std::vector<double> values(knots.size() - degree - 1, 0.0);
  bspline_basis_into(x, knots, degree, values, {});
  return values;
}

void bspline_basis_into(double x, std::span<const double> knots, std::size_t degree,
                        std::span<double> values, std::span<double> derivs) {
  const std::size_t n = knots.size() - degree - 1;
  const double lo = knots[degree];
  const double hi = knots[n];
  x = std::clamp(x, lo, hi);
  const std::size_t j = find_span(x, knots, degree);

  std::fill(values.begin(), values.end(), 0.0);
  std::array<double, kMaxDegree + 1> local{};
  local_basis(x, j, degree, knots, local);
  for (std::size_t r = 0; r <= degree; ++r) values[j - degree + r] = local[r];

  if (derivs.empty()) return;
  std::fill(derivs.begin(), derivs.end(), 0.0);
  if (degree == 0) return;
  // d/dx B_{i,p} = p (B_{i,p-1} / (t_{i+p} - t_i) - B_{i+1,p-1} / (t_{i+p+1} - t_{i+1}))
  std::array<double, kMaxDegree + 1> lower{};
  local_basis(x, j, degree - 1, knots, lower);
  const double p = static_cast<double>(degree);
  // lower[r] is B_{j-p+1+r, p-1}, r = 0..p-1.
  for (std::size_t r = 0; r <= degree; ++r) {
    const std::size_t i = j - degree + r;
    double d = 0.0;
    if (r >= 1) d += lower[r - 1] / (knots[i + degree] - knots[i]);
    if (r < degree) d -= lower[r] / (knots[i + degree + 1] - knots[i + 1]);
    derivs[i] = p * d;
  }
}

}  // namespace kano
