#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace kano {

// Uniform knot grid over [lo, hi] with `intervals` base intervals, extended
// by `degree` knots on each side.
struct SplineGrid {
  double lo = -1.0;
  double hi = 1.0;
  std::size_t intervals = 5;
  std::size_t degree = 3;

  std::vector<double> knots() const;
  std::size_t basis_count() const { return intervals + degree; }
  double spacing() const { return (hi - lo) / static_cast<double>(intervals); }
  void validate() const;

  friend bool operator==(const SplineGrid&, const SplineGrid&) = default;
};

class KnotError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Throws KnotError unless knots are strictly increasing and there are enough
// of them for `degree`.
void check_knots(std::span<const double> knots, std::size_t degree);

// Dense basis values B_0..B_{n-1}(x), n = knots.size() - degree - 1. x is
// clamped into the base interval [knots[degree], knots[n]] first; the right
// end point belongs to the last base interval.
std::vector<double> bspline_basis(double x, std::span<const double> knots, std::size_t degree);

// Unchecked fast path for hot loops: writes n values and their x-derivatives
// (derivatives taken at the clamped point). `derivs` may be empty.
void bspline_basis_into(double x, std::span<const double> knots, std::size_t degree,
                        std::span<double> values, std::span<double> derivs);

}  // namespace kano
