#pragma once

// Kolmogorov-Arnold layers: every edge carries a learnable univariate
//   phi(x) = w_b * silu(x) + w_s * sum_i c_i B_i(clamp(x))
// and a layer sums its edge functions per output.
//
// A layer shares one knot grid across its edges, so the parameters live in
// three dense tensors:
//   coefficients (d_in, n_basis, d_out), base_weights (d_in, d_out),
//   spline_weights (d_in, d_out).

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "kano/autodiff.hpp"
#include "kano/bspline.hpp"
#include "kano/tensor.hpp"

namespace kano {

double silu(double x);

struct SplineFunction {
  SplineGrid grid;
  std::vector<double> coefficients;  // grid.basis_count() entries
  double w_base = 1.0;
  double w_spline = 1.0;

  void validate() const;
};

double phi_eval(double x, const SplineFunction& f);
std::vector<double> phi_eval(std::span<const double> x, const SplineFunction& f);

// Differentiable phi over a 1D tensor of inputs. coefficients has shape
// (n_basis), w_base and w_spline are single-element nodes.
ad::Var phi_eval(ad::Var x, ad::Var coefficients, ad::Var w_base, ad::Var w_spline,
                 const SplineGrid& grid);

struct KanInit {
  double coef_std = 0.1;
  double base_weight = 1.0;
  double spline_weight = 1.0;
};

class KanLayer {
 public:
  KanLayer() = default;
  // All-zero parameters: every edge is the zero function.
  KanLayer(std::size_t d_in, std::size_t d_out, SplineGrid grid = {});

  static KanLayer random(std::size_t d_in, std::size_t d_out, const SplineGrid& grid,
                         std::mt19937_64& rng, const KanInit& init = {});

  std::size_t in_dim() const { return d_in_; }
  std::size_t out_dim() const { return d_out_; }
  const SplineGrid& grid() const { return grid_; }
  std::size_t parameter_count() const;

  SplineFunction edge(std::size_t i, std::size_t j) const;
  void set_edge(std::size_t i, std::size_t j, const SplineFunction& f);

  Tensor& coefficients() { return coefficients_; }
  const Tensor& coefficients() const { return coefficients_; }
  Tensor& base_weights() { return base_weights_; }
  const Tensor& base_weights() const { return base_weights_; }
  Tensor& spline_weights() { return spline_weights_; }
  const Tensor& spline_weights() const { return spline_weights_; }

  void append_parameters(std::vector<Tensor*>& out);
  void append_parameters(std::vector<const Tensor*>& out) const;
  void validate() const;

 private:
  std::size_t d_in_ = 0;
  std::size_t d_out_ = 0;
  SplineGrid grid_;
  Tensor coefficients_;
  Tensor base_weights_;
  Tensor spline_weights_;
};

struct KanLayerVars {
  ad::Var coefficients;
  ad::Var base_weights;
  ad::Var spline_weights;
};

// Consumes three leaves from `cursor` in append_parameters order.
KanLayerVars view_layer(const std::vector<ad::Var>& leaves, std::size_t& cursor);

using KanStack = std::vector<KanLayer>;
using KanStackVars = std::vector<KanLayerVars>;

void validate_stack(const KanStack& stack);
KanStack random_stack(std::span<const std::size_t> widths, const SplineGrid& grid,
                      std::mt19937_64& rng, const KanInit& init = {});
std::size_t parameter_count(const KanStack& stack);
void append_parameters(KanStack& stack, std::vector<Tensor*>& out);
KanStackVars view_stack(const KanStack& stack, const std::vector<ad::Var>& leaves,
                        std::size_t& cursor);

// Leaves on `tape` holding a copy of the parameters.
KanLayerVars bind(const KanLayer& layer, ad::Tape& tape);
KanStackVars bind(const KanStack& stack, ad::Tape& tape);

// ---- differentiable forms: x is (N, d_in), one row per sample ---------------
ad::Var kan_layer_forward(ad::Var x, const KanLayer& layer, const KanLayerVars& vars);
ad::Var kan_forward(ad::Var x, const KanStack& stack, const KanStackVars& vars);
// (C,H,W) <-> (H*W, C) row form.
ad::Var cube_to_rows(ad::Var cube);
ad::Var rows_to_cube(ad::Var rows, std::size_t height, std::size_t width);
// Cube (C,H,W) -> (C',H,W): every pixel's channel vector through the stack.
ad::Var kan1d_apply(ad::Var cube, const KanStack& stack, const KanStackVars& vars);
// Cube (C,H,W) -> (C',H,W): one channel-mixing layer with splines shared over
// all spatial sites.
ad::Var kan2d_apply(ad::Var cube, const KanLayer& layer, const KanLayerVars& vars);

// ---- value forms -----------------------------------------------------------
std::vector<double> kan_layer_forward(std::span<const double> x, const KanLayer& layer);
std::vector<double> kan_forward(std::span<const double> x, const KanStack& stack);
Cube kan1d_apply(const Cube& cube, const KanStack& stack);
Cube kan2d_apply(const Cube& cube, const KanLayer& layer);

}  // namespace kano
