#include "kano/spline_kan.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace kano {

double silu(double x) {
  if (x >= 0) return x / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return x * e / (1.0 + e);
}

void SplineFunction::validate() const {
  grid.validate();
  if (coefficients.size() != grid.basis_count()) {
    throw std::invalid_argument("spline function needs " + std::to_string(grid.basis_count()) +
                                " coefficients, got " + std::to_string(coefficients.size()));
  }
  for (double c : coefficients) {
    if (!std::isfinite(c)) throw std::invalid_argument("spline coefficient is not finite");
  }
  if (!std::isfinite(w_base) || !std::isfinite(w_spline)) {
    throw std::invalid_argument("spline weights must be finite");
  }
}

double phi_eval(double x, const SplineFunction& f) {
  f.validate();
  if (!std::isfinite(x)) throw std::invalid_argument("phi_eval: input is not finite");
  const auto basis = bspline_basis(x, f.grid.knots(), f.grid.degree);
  double s = 0.0;
  for (std::size_t i = 0; i < basis.size(); ++i) s += f.coefficients[i] * basis[i];
  return f.w_base * silu(x) + f.w_spline * s;
}

std::vector<double> phi_eval(std::span<const double> x, const SplineFunction& f) {
  std::vector<double> out;
  out.reserve(x.size());
  for (double v : x) out.push_back(phi_eval(v, f));
  return out;
}

ad::Var phi_eval(ad::Var x, ad::Var coefficients, ad::Var w_base, ad::Var w_spline,
                 const SplineGrid& grid) {
  if (x.value().rank() != 1) throw ShapeError("phi_eval: x must be rank 1");
  const std::size_t n = x.shape()[0], nb = grid.basis_count();
  if (coefficients.size() != nb) throw ShapeError("phi_eval: coefficient count mismatch");
  ad::Var basis = ad::bspline_basis(ad::clamp(x, grid.lo, grid.hi), grid.knots(), grid.degree);
  ad::Var spline = ad::matmul(basis, ad::reshape(coefficients, {nb, 1}));
  ad::Var base = ad::scale_by(ad::silu(x), w_base);
  return ad::add(base, ad::scale_by(ad::reshape(spline, {n}), w_spline));
}

// ---- KanLayer ----------------------------------------------------------------

KanLayer::KanLayer(std::size_t d_in, std::size_t d_out, SplineGrid grid)
    : d_in_(d_in),
      d_out_(d_out),
      grid_(grid),
      coefficients_({d_in, grid.basis_count(), d_out}, 0.0),
      base_weights_({d_in, d_out}, 0.0),
      spline_weights_({d_in, d_out}, 0.0) {
  if (d_in == 0 || d_out == 0) throw ShapeError("KAN layer dims must be positive");
  grid_.validate();
}

KanLayer KanLayer::random(std::size_t d_in, std::size_t d_out, const SplineGrid& grid,
                          std::mt19937_64& rng, const KanInit& init) {
  KanLayer layer(d_in, d_out, grid);
  std::normal_distribution<double> normal(0.0, init.coef_std);
  for (auto& c : layer.coefficients_.data) c = normal(rng);
  for (auto& w : layer.base_weights_.data) w = init.base_weight;
  for (auto& w : layer.spline_weights_.data) w = init.spline_weight;
  return layer;
}

std::size_t KanLayer::parameter_count() const {
  return coefficients_.size() + base_weights_.size() + spline_weights_.size();
}

SplineFunction KanLayer::edge(std::size_t i, std::size_t j) const {
  if (i >= d_in_ || j >= d_out_) throw std::out_of_range("KAN edge index");
  SplineFunction f;
  f.grid = grid_;
  const std::size_t nb = grid_.basis_count();
  f.coefficients.resize(nb);
  for (std::size_t k = 0; k < nb; ++k) f.coefficients[k] = coefficients_.data[(i * nb + k) * d_out_ + j];
  f.w_base = base_weights_.data[i * d_out_ + j];
  f.w_spline = spline_weights_.data[i * d_out_ + j];
  return f;
}

void KanLayer::set_edge(std::size_t i, std::size_t j, const SplineFunction& f) {
  if (i >= d_in_ || j >= d_out_) throw std::out_of_range("KAN edge index");
  f.validate();
  if (!(f.grid == grid_)) throw std::invalid_argument("edge grid differs from layer grid");
  const std::size_t nb = grid_.basis_count();
  for (std::size_t k = 0; k < nb; ++k) coefficients_.data[(i * nb + k) * d_out_ + j] = f.coefficients[k];
  base_weights_.data[i * d_out_ + j] = f.w_base;
  spline_weights_.data[i * d_out_ + j] = f.w_spline;
}

void KanLayer::append_parameters(std::vector<Tensor*>& out) {
  out.push_back(&coefficients_);
  out.push_back(&base_weights_);
  out.push_back(&spline_weights_);
}

void KanLayer::append_parameters(std::vector<const Tensor*>& out) const {
  out.push_back(&coefficients_);
  out.push_back(&base_weights_);
  out.push_back(&spline_weights_);
}

void KanLayer::validate() const {
  grid_.validate();
  if (coefficients_.shape != Shape{d_in_, grid_.basis_count(), d_out_} ||
      base_weights_.shape != Shape{d_in_, d_out_} || spline_weights_.shape != Shape{d_in_, d_out_}) {
    throw ShapeError("KAN layer parameter shapes do not match d_in x d_out");
  }
  if (!coefficients_.all_finite() || !base_weights_.all_finite() || !spline_weights_.all_finite()) {
    throw std::invalid_argument("KAN layer parameters must be finite");
  }
}

KanLayerVars view_layer(const std::vector<ad::Var>& leaves, std::size_t& cursor) {
  if (cursor + 3 > leaves.size()) throw std::out_of_range("view_layer: not enough leaves");
  KanLayerVars v{leaves[cursor], leaves[cursor + 1], leaves[cursor + 2]};
  cursor += 3;
  return v;
}

void validate_stack(const KanStack& stack) {
  if (stack.empty()) throw ShapeError("KAN stack is empty");
  for (std::size_t l = 0; l < stack.size(); ++l) {
    stack[l].validate();
    if (l + 1 < stack.size() && stack[l].out_dim() != stack[l + 1].in_dim()) {
      throw ShapeError("KAN stack: layer " + std::to_string(l) + " d_out " +
                       std::to_string(stack[l].out_dim()) + " != next d_in " +
                       std::to_string(stack[l + 1].in_dim()));
    }
  }
}

KanStack random_stack(std::span<const std::size_t> widths, const SplineGrid& grid,
                      std::mt19937_64& rng, const KanInit& init) {
  if (widths.size() < 2) throw ShapeError("KAN stack needs at least two widths");
  KanStack stack;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    stack.push_back(KanLayer::random(widths[l], widths[l + 1], grid, rng, init));
  }
  return stack;
}

std::size_t parameter_count(const KanStack& stack) {
  std::size_t n = 0;
  for (const auto& l : stack) n += l.parameter_count();
  return n;
}

void append_parameters(KanStack& stack, std::vector<Tensor*>& out) {
  for (auto& l : stack) l.append_parameters(out);
}

KanStackVars view_stack(const KanStack& stack, const std::vector<ad::Var>& leaves,
                        std::size_t& cursor) {
  KanStackVars vars;
  for (std::size_t l = 0; l < stack.size(); ++l) vars.push_back(view_layer(leaves, cursor));
  return vars;
}

KanLayerVars bind(const KanLayer& layer, ad::Tape& tape) {
  return {tape.leaf(layer.coefficients()), tape.leaf(layer.base_weights()),
          tape.leaf(layer.spline_weights())};
}

KanStackVars bind(const KanStack& stack, ad::Tape& tape) {
  KanStackVars vars;
  for (const auto& l : stack) vars.push_back(bind(l, tape));
  return vars;
}

// ---- differentiable forward --------------------------------------------------

ad::Var kan_layer_forward(ad::Var x, const KanLayer& layer, const KanLayerVars& vars) {
  if (x.value().rank() != 2 || x.shape()[1] != layer.in_dim()) {
    throw ShapeError("kan_layer_forward: input " + shape_string(x.shape()) + " but layer d_in " +
                     std::to_string(layer.in_dim()));
  }
  const std::size_t n = x.shape()[0], d_in = layer.in_dim(), d_out = layer.out_dim();
  const SplineGrid& grid = layer.grid();
  const std::size_t nb = grid.basis_count();

  ad::Var base = ad::matmul(ad::silu(x), vars.base_weights);
  ad::Var basis = ad::bspline_basis(ad::clamp(x, grid.lo, grid.hi), grid.knots(), grid.degree);
  ad::Var effective = ad::mul_bcast_mid(vars.coefficients, vars.spline_weights);
  ad::Var spline = ad::matmul(ad::reshape(basis, {n, d_in * nb}),
                              ad::reshape(effective, {d_in * nb, d_out}));
  return ad::add(base, spline);
}

ad::Var kan_forward(ad::Var x, const KanStack& stack, const KanStackVars& vars) {
  if (stack.empty() || vars.size() != stack.size()) throw ShapeError("kan_forward: bad stack");
  for (std::size_t l = 0; l < stack.size(); ++l) x = kan_layer_forward(x, stack[l], vars[l]);
  return x;
}

ad::Var cube_to_rows(ad::Var cube) {
  if (cube.value().rank() != 3) throw ShapeError("expected a (C,H,W) cube");
  const Shape& s = cube.shape();
  return ad::transpose(ad::reshape(cube, {s[0], s[1] * s[2]}));
}

ad::Var rows_to_cube(ad::Var rows, std::size_t height, std::size_t width) {
  const std::size_t c = rows.shape()[1];
  return ad::reshape(ad::transpose(rows), {c, height, width});
}

ad::Var kan1d_apply(ad::Var cube, const KanStack& stack, const KanStackVars& vars) {
  const Shape s = cube.shape();
  if (s.size() != 3 || stack.empty() || stack.front().in_dim() != s[0]) {
    throw ShapeError("kan1d_apply: channel count does not match stack d_in");
  }
  return rows_to_cube(kan_forward(cube_to_rows(cube), stack, vars), s[1], s[2]);
}

ad::Var kan2d_apply(ad::Var cube, const KanLayer& layer, const KanLayerVars& vars) {
  const Shape s = cube.shape();
  if (s.size() != 3 || layer.in_dim() != s[0]) {
    throw ShapeError("kan2d_apply: channel count does not match layer d_in");
  }
  return rows_to_cube(kan_layer_forward(cube_to_rows(cube), layer, vars), s[1], s[2]);
}

// ---- value forms -------------------------------------------------------------

namespace {

KanLayerVars constants(const KanLayer& layer, ad::Tape& tape) {
  return {tape.constant(layer.coefficients()), tape.constant(layer.base_weights()),
          tape.constant(layer.spline_weights())};
}

KanStackVars constants(const KanStack& stack, ad::Tape& tape) {
  KanStackVars vars;
  for (const auto& l : stack) vars.push_back(constants(l, tape));
  return vars;
}

}  // namespace

std::vector<double> kan_layer_forward(std::span<const double> x, const KanLayer& layer) {
  if (x.size() != layer.in_dim()) {
    throw ShapeError("kan_layer_forward: got " + std::to_string(x.size()) + " inputs, layer d_in " +
                     std::to_string(layer.in_dim()));
  }
  ad::Tape tape;
  ad::Var in = tape.constant(Tensor({1, x.size()}, std::vector<double>(x.begin(), x.end())));
  return kan_layer_forward(in, layer, constants(layer, tape)).value().data;
}

std::vector<double> kan_forward(std::span<const double> x, const KanStack& stack) {
  validate_stack(stack);
  if (x.size() != stack.front().in_dim()) throw ShapeError("kan_forward: input dimension mismatch");
  ad::Tape tape;
  ad::Var in = tape.constant(Tensor({1, x.size()}, std::vector<double>(x.begin(), x.end())));
  return kan_forward(in, stack, constants(stack, tape)).value().data;
}

Cube kan1d_apply(const Cube& cube, const KanStack& stack) {
  validate_stack(stack);
  ad::Tape tape;
  ad::Var in = tape.constant(cube.to_tensor());
  return Cube::from_tensor(kan1d_apply(in, stack, constants(stack, tape)).value());
}

Cube kan2d_apply(const Cube& cube, const KanLayer& layer) {
  layer.validate();
  ad::Tape tape;
  ad::Var in = tape.constant(cube.to_tensor());
  return Cube::from_tensor(kan2d_apply(in, layer, constants(layer, tape)).value());
}

}  // namespace kano
