#include "kano/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kano/bspline.hpp"
#include "kano/conv.hpp"

namespace kano::ad {

// ---- Var / Tape ------------------------------------------------------------

const Tensor& Var::value() const { return tape_->nodes_[id_].value; }
const Shape& Var::shape() const { return tape_->nodes_[id_].value.shape; }
std::size_t Var::size() const { return tape_->nodes_[id_].value.size(); }

Tensor Var::grad() const {
  const auto& node = tape_->nodes_[id_];
  if (node.grad.empty()) return Tensor(node.value.shape, 0.0);
  return Tensor(node.value.shape, node.grad);
}

Var Tape::leaf(Tensor value) {
  if (!value.all_finite()) throw NonFiniteError("leaf value is not finite");
  Node node;
  node.op = "leaf";
  node.value = std::move(value);
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NonFiniteError("constant value is not finite");
  Node node;
  node.op = "constant";
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(const char* op, Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
  if (!value.all_finite()) {
    throw NonFiniteError(std::string("non-finite value produced by op '") + op + "'");
  }
  Node node;
  node.op = op;
  node.value = std::move(value);
  for (const Var& p : parents) {
    if (p.tape() != this) throw GraphError(std::string("op '") + op + "' mixes tapes");
    node.parents.push_back(p.id());
    node.requires_grad = node.requires_grad || nodes_[p.id()].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

std::span<double> Tape::grad_mut(std::size_t id) {
  auto& node = nodes_[id];
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

double Tape::forward(Var root) {
  if (root.tape() != this) throw GraphError("forward: root belongs to another tape");
  const Tensor& v = nodes_[root.id()].value;
  if (v.size() != 1) throw GraphError("forward: root must be a scalar, got " + shape_string(v.shape));
  forwarded_ = true;
  forward_root_ = root.id();
  return v.data[0];
}

void Tape::backward(Var root) {
  if (root.tape() != this) throw GraphError("backward: root belongs to another tape");
  if (!forwarded_ || forward_root_ != root.id()) {
    throw GraphError("backward called before forward on this root");
  }
  for (auto& node : nodes_) node.grad.clear();
  grad_mut(root.id())[0] = 1.0;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || node.grad.empty() || !node.backward) continue;
    node.backward(*this, i);
  }
}

// ---- helpers -----------------------------------------------------------------

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


Tape& tape_of(Var a) {
  if (!a.valid()) throw GraphError("op on an empty Var");
  return *a.tape();
}

Tape& tape_of(Var a, Var b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw GraphError("op mixes tapes");
  return t;
}

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

void require_scalar(const char* op, Var s) {
  if (s.size() != 1) throw ShapeError(std::string(op) + ": expected a single-element node");
}

void require_rank(const char* op, Var a, std::size_t rank) {
  if (a.value().rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(a.shape()));
  }
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Elementwise unary op with derivative d(x) evaluated from the input value.
template <class F, class D>
Var unary(const char* op, Var a, F f, D d) {
  Tape& t = tape_of(a);
  const Tensor& x = a.value();
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = f(x.data[i]);
  const std::size_t ia = a.id();
  return t.record(op, std::move(out), {a}, [ia, d](Tape& tp, std::size_t self) {
    if (!tp.needs_grad(ia)) return;
    auto g = tp.grad_at(self);
    const auto& xv = tp.value_at(ia).data;
    auto ga = tp.grad_mut(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * d(xv[i]);
  });
}

void accumulate(Tape& t, std::size_t id, std::span<const double> g, double factor = 1.0) {
  if (!t.needs_grad(id)) return;
  auto dst = t.grad_mut(id);
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += factor * g[i];
}

conv::Geometry geometry_for(const Shape& hr, std::size_t ksize, std::size_t stride) {
  conv::Geometry g{hr[0], hr[1], hr[2], ksize, stride};
  g.validate();
  return g;
}

}  // namespace

// ---- elementwise -----------------------------------------------------------

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("add", a, b);
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record("add", std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    auto g = tp.grad_at(self);
    accumulate(tp, ia, g);
    accumulate(tp, ib, g);
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("sub", a, b);
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record("sub", std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    auto g = tp.grad_at(self);
    accumulate(tp, ia, g);
    accumulate(tp, ib, g, -1.0);
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape("mul", a, b);
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record("mul", std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    auto g = tp.grad_at(self);
    const auto& av = tp.value_at(ia).data;
    const auto& bv2 = tp.value_at(ib).data;
    if (tp.needs_grad(ia)) {
      auto ga = tp.grad_mut(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
    }
    if (tp.needs_grad(ib)) {
      auto gb = tp.grad_mut(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var neg(Var a) { return scale(a, -1.0); }

Var square(Var a) {
  return unary("square", a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var scale(Var a, double c) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (auto& v : out.data) v *= c;
  const std::size_t ia = a.id();
  return t.record("scale", std::move(out), {a}, [ia, c](Tape& tp, std::size_t self) {
    accumulate(tp, ia, tp.grad_at(self), c);
  });
}

Var scale_by(Var a, Var s) {
  Tape& t = tape_of(a, s);
  require_scalar("scale_by", s);
  const double sv = s.value().data[0];
  Tensor out = a.value();
  for (auto& v : out.data) v *= sv;
  const std::size_t ia = a.id(), is = s.id();
  return t.record("scale_by", std::move(out), {a, s}, [ia, is](Tape& tp, std::size_t self) {
    auto g = tp.grad_at(self);
    const double sv2 = tp.value_at(is).data[0];
    accumulate(tp, ia, g, sv2);
    if (tp.needs_grad(is)) {
      const auto& av = tp.value_at(ia).data;
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
      tp.grad_mut(is)[0] += acc;
    }
  });
}

Var div_by(Var a, Var s) {
  Tape& t = tape_of(a, s);
  require_scalar("div_by", s);
  const double sv = s.value().data[0];
  if (sv == 0.0) throw NonFiniteError("non-finite value produced by op 'div_by' (division by zero)");
  Tensor out = a.value();
  for (auto& v : out.data) v /= sv;
  const std::size_t ia = a.id(), is = s.id();
  return t.record("div_by", std::move(out), {a, s}, [ia, is](Tape& tp, std::size_t self) {
    auto g = tp.grad_at(self);
    const double sv2 = tp.value_at(is).data[0];
    accumulate(tp, ia, g, 1.0 / sv2);
    if (tp.needs_grad(is)) {
      const auto& av = tp.value_at(ia).data;
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
      tp.grad_mut(is)[0] -= acc / (sv2 * sv2);
    }
  });
}

Var silu(Var a) {
  return unary(
      "silu", a, [](double x) { return x * sigmoid(x); },
      [](double x) {
        const double sg = sigmoid(x);
        return sg * (1.0 + x * (1.0 - sg));
      });
}

Var softplus(Var a) {
  return unary(
      "softplus", a,
      [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
      [](double x) { return sigmoid(x); });
}

Var abs(Var a) {
  // Subgradient at 0 is 0.
  return unary(
      "abs", a, [](double x) { return std::abs(x); },
      [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Var relu(Var a) {
  return unary(
      "relu", a, [](double x) { return x > 0 ? x : 0.0; },
      [](double x) { return x > 0 ? 1.0 : 0.0; });
}

Var clamp(Var a, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lo > hi");
  return unary(
      "clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// ---- reductions and shape --------------------------------------------------

Var sum(Var a) {
  Tape& t = tape_of(a);
  const auto& v = a.value().data;
  const double s = std::accumulate(v.begin(), v.end(), 0.0);
  const std::size_t ia = a.id();
  return t.record("sum", Tensor::scalar(s), {a}, [ia](Tape& tp, std::size_t self) {
    if (!tp.needs_grad(ia)) return;
    const double g = tp.grad_at(self)[0];
    for (auto& x : tp.grad_mut(ia)) x += g;
  });
}

Var mean(Var a) {
  Tape& t = tape_of(a);
  const auto& v = a.value().data;
  const double n = static_cast<double>(v.size());
  const double s = std::accumulate(v.begin(), v.end(), 0.0) / n;
  const std::size_t ia = a.id();
  return t.record("mean", Tensor::scalar(s), {a}, [ia, n](Tape& tp, std::size_t self) {
    if (!tp.needs_grad(ia)) return;
    const double g = tp.grad_at(self)[0] / n;
    for (auto& x : tp.grad_mut(ia)) x += g;
  });
}

Var reshape(Var a, Shape shape) {
  Tape& t = tape_of(a);
  if (shape_size(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_string(a.shape()) + " as " +
                     shape_string(shape));
  }
  Tensor out(std::move(shape), a.value().data);
  const std::size_t ia = a.id();
  return t.record("reshape", std::move(out), {a}, [ia](Tape& tp, std::size_t self) {
    accumulate(tp, ia, tp.grad_at(self));
  });
}

Var transpose(Var a) {
  require_rank("transpose", a, 2);
  return permute(a, {1, 0});
}

Var permute(Var a, std::vector<std::size_t> axes) {
  Tape& t = tape_of(a);
  const Shape& in = a.shape();
  const std::size_t r = in.size();
  if (axes.size() != r) throw ShapeError("permute: axes length does not match rank");
  {
    std::vector<std::size_t> sorted = axes;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < r; ++i) {
      if (sorted[i] != i) throw ShapeError("permute: axes are not a permutation");
    }
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = in[axes[i]];
  // Input strides, then mapping from each output flat index to its input index.
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  const std::size_t n = a.size();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t o = 0; o < n; ++o) {
    std::size_t s = 0;
    for (std::size_t i = 0; i < r; ++i) s += idx[i] * in_stride[axes[i]];
    src[o] = s;
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  Tensor out(out_shape);
  const auto& v = a.value().data;
  for (std::size_t o = 0; o < n; ++o) out.data[o] = v[src[o]];
  const std::size_t ia = a.id();
  return t.record("permute", std::move(out), {a},
                  [ia, src = std::move(src)](Tape& tp, std::size_t self) {
                    if (!tp.needs_grad(ia)) return;
                    auto g = tp.grad_at(self);
                    auto ga = tp.grad_mut(ia);
                    for (std::size_t o = 0; o < g.size(); ++o) ga[src[o]] += g[o];
                  });
}

Var concat(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.empty() || sa.size() != sb.size() || !std::equal(sa.begin() + 1, sa.end(), sb.begin() + 1)) {
    throw ShapeError("concat: incompatible shapes " + shape_string(sa) + " and " + shape_string(sb));
  }
  Shape out_shape = sa;
  out_shape[0] += sb[0];
  std::vector<double> data = a.value().data;
  const auto& bv = b.value().data;
  data.insert(data.end(), bv.begin(), bv.end());
  const std::size_t ia = a.id(), ib = b.id(), na = a.size();
  return t.record("concat", Tensor(out_shape, std::move(data)), {a, b},
                  [ia, ib, na](Tape& tp, std::size_t self) {
                    auto g = tp.grad_at(self);
                    accumulate(tp, ia, g.subspan(0, na));
                    accumulate(tp, ib, g.subspan(na));
                  });
}

// ---- linear algebra --------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.shape()[0], n = a.shape()[1], p = b.shape()[1];
  if (b.shape()[0] != n) {
    throw ShapeError("matmul: inner dims differ " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  Tensor out({m, p});
  const auto& av = a.value().data;
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data.data() + i * p;
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = av[i * n + k];
      if (aik == 0.0) continue;
      const double* brow = bv.data() + k * p;
      for (std::size_t j = 0; j < p; ++j) orow[j] += aik * brow[j];
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return t.record("matmul", std::move(out), {a, b}, [ia, ib, m, n, p](Tape& tp, std::size_t self) {
    auto g = tp.grad_at(self);
    const auto& av2 = tp.value_at(ia).data;
    const auto& bv2 = tp.value_at(ib).data;
    if (tp.needs_grad(ia)) {
      auto ga = tp.grad_mut(ia);  // g (m,p) * b^T (p,n)
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t k = 0; k < n; ++k) {
          const double* brow = bv2.data() + k * p;
          const double* grow = g.data() + i * p;
          ga[i * n + k] += dot(grow, brow, p);
        }
      }
    }
    if (tp.needs_grad(ib)) {
      auto gb = tp.grad_mut(ib);  // a^T (n,m) * g (m,p)
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g.data() + i * p;
        for (std::size_t k = 0; k < n; ++k) {
          const double aik = av2[i * n + k];
          if (aik == 0.0) continue;
          double* gbrow = gb.data() + k * p;
          for (std::size_t j = 0; j < p; ++j) gbrow[j] += aik * grow[j];
        }
      }
    }
  });
}

Var mul_bcast_mid(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_rank("mul_bcast_mid", a, 3);
  require_rank("mul_bcast_mid", b, 2);
  const std::size_t P = a.shape()[0], Q = a.shape()[1], R = a.shape()[2];
  if (b.shape()[0] != P || b.shape()[1] != R) {
    throw ShapeError("mul_bcast_mid: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t q = 0; q < Q; ++q)
      for (std::size_t r = 0; r < R; ++r) out.data[(p * Q + q) * R + r] *= bv[p * R + r];
  const std::size_t ia = a.id(), ib = b.id();
  return t.record("mul_bcast_mid", std::move(out), {a, b},
                  [ia, ib, P, Q, R](Tape& tp, std::size_t self) {
                    auto g = tp.grad_at(self);
                    const auto& av2 = tp.value_at(ia).data;
                    const auto& bv2 = tp.value_at(ib).data;
                    const bool need_a = tp.needs_grad(ia), need_b = tp.needs_grad(ib);
                    std::span<double> ga, gb;
                    if (need_a) ga = tp.grad_mut(ia);
                    if (need_b) gb = tp.grad_mut(ib);
                    for (std::size_t p = 0; p < P; ++p)
                      for (std::size_t q = 0; q < Q; ++q)
                        for (std::size_t r = 0; r < R; ++r) {
                          const std::size_t i = (p * Q + q) * R + r;
                          if (need_a) ga[i] += g[i] * bv2[p * R + r];
                          if (need_b) gb[p * R + r] += g[i] * av2[i];
                        }
                  });
}

// ---- splines ---------------------------------------------------------------

Var bspline_basis(Var x, std::vector<double> knots, std::size_t degree) {
  Tape& t = tape_of(x);
  check_knots(knots, degree);
  const std::size_t nb = knots.size() - degree - 1;
  const double lo = knots[degree], hi = knots[nb];
  const auto& xv = x.value().data;
  Shape out_shape = x.shape();
  out_shape.push_back(nb);
  if (out_shape.size() > 4) throw ShapeError("bspline_basis: input rank too high");
  Tensor out(out_shape);
  std::vector<double> derivs(xv.size() * nb);
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (xv[i] < lo || xv[i] > hi) {
      throw std::domain_error("bspline_basis: input outside the base interval; clamp first");
    }
    bspline_basis_into(xv[i], knots, degree, std::span<double>(out.data).subspan(i * nb, nb),
                       std::span<double>(derivs).subspan(i * nb, nb));
  }
  const std::size_t ix = x.id();
  return t.record("bspline_basis", std::move(out), {x},
                  [ix, nb, derivs = std::move(derivs)](Tape& tp, std::size_t self) {
                    if (!tp.needs_grad(ix)) return;
                    auto g = tp.grad_at(self);
                    auto gx = tp.grad_mut(ix);
                    for (std::size_t i = 0; i < gx.size(); ++i) {
                      double acc = 0.0;
                      for (std::size_t j = 0; j < nb; ++j) acc += g[i * nb + j] * derivs[i * nb + j];
                      gx[i] += acc;
                    }
                  });
}

// ---- convolutions ----------------------------------------------------------

Var conv_down(Var x, Var kernel, std::size_t stride) {
  Tape& t = tape_of(x, kernel);
  require_rank("conv_down", x, 3);
  require_rank("conv_down", kernel, 2);
  const std::size_t k = kernel.shape()[0];
  if (kernel.shape()[1] != k) throw ShapeError("conv_down: kernel must be square");
  const auto g = geometry_for(x.shape(), k, stride);
  Tensor out({g.channels, g.low_height(), g.low_width()});
  conv::down(x.value().data, kernel.value().data, g, out.data);
  const std::size_t ix = x.id(), ik = kernel.id();
  return t.record("conv_down", std::move(out), {x, kernel}, [ix, ik, g](Tape& tp, std::size_t self) {
    auto go = tp.grad_at(self);
    if (tp.needs_grad(ix)) {
      std::vector<double> tmp(g.channels * g.height * g.width);
      conv::up_transpose(go, tp.value_at(ik).data, g, tmp);
      accumulate(tp, ix, tmp);
    }
    if (tp.needs_grad(ik)) {
      std::vector<double> tmp(g.ksize * g.ksize);
      conv::kernel_corr(tp.value_at(ix).data, go, g, tmp);
      accumulate(tp, ik, tmp);
    }
  });
}

Var conv_up_transpose(Var r, Var kernel, std::size_t stride) {
  Tape& t = tape_of(r, kernel);
  require_rank("conv_up_transpose", r, 3);
  require_rank("conv_up_transpose", kernel, 2);
  const std::size_t k = kernel.shape()[0];
  if (kernel.shape()[1] != k) throw ShapeError("conv_up_transpose: kernel must be square");
  const Shape& rs = r.shape();
  const auto g = geometry_for({rs[0], rs[1] * stride, rs[2] * stride}, k, stride);
  Tensor out({g.channels, g.height, g.width});
  conv::up_transpose(r.value().data, kernel.value().data, g, out.data);
  const std::size_t ir = r.id(), ik = kernel.id();
  return t.record("conv_up_transpose", std::move(out), {r, kernel},
                  [ir, ik, g](Tape& tp, std::size_t self) {
                    auto go = tp.grad_at(self);
                    if (tp.needs_grad(ir)) {
                      std::vector<double> tmp(g.channels * g.low_height() * g.low_width());
                      conv::down(go, tp.value_at(ik).data, g, tmp);
                      accumulate(tp, ir, tmp);
                    }
                    if (tp.needs_grad(ik)) {
                      std::vector<double> tmp(g.ksize * g.ksize);
                      conv::kernel_corr(go, tp.value_at(ir).data, g, tmp);
                      accumulate(tp, ik, tmp);
                    }
                  });
}

Var kernel_corr(Var x, Var r, std::size_t ksize, std::size_t stride) {
  Tape& t = tape_of(x, r);
  require_rank("kernel_corr", x, 3);
  require_rank("kernel_corr", r, 3);
  const auto g = geometry_for(x.shape(), ksize, stride);
  if (r.shape() != Shape{g.channels, g.low_height(), g.low_width()}) {
    throw ShapeError("kernel_corr: residual shape " + shape_string(r.shape()) +
                     " does not match image " + shape_string(x.shape()));
  }
  Tensor out({ksize, ksize});
  conv::kernel_corr(x.value().data, r.value().data, g, out.data);
  const std::size_t ix = x.id(), ir = r.id();
  return t.record("kernel_corr", std::move(out), {x, r}, [ix, ir, g](Tape& tp, std::size_t self) {
    auto go = tp.grad_at(self);
    if (tp.needs_grad(ix)) {
      std::vector<double> tmp(g.channels * g.height * g.width);
      conv::up_transpose(tp.value_at(ir).data, go, g, tmp);
      accumulate(tp, ix, tmp);
    }
    if (tp.needs_grad(ir)) {
      std::vector<double> tmp(g.channels * g.low_height() * g.low_width());
      conv::down(tp.value_at(ix).data, go, g, tmp);
      accumulate(tp, ir, tmp);
    }
  });
}

Var conv2d(Var x, Var weight, Var bias) {
  Tape& t = tape_of(x, weight);
  if (bias.tape() != &t) throw GraphError("conv2d mixes tapes");
  require_rank("conv2d", x, 3);
  require_rank("conv2d", weight, 4);
  const Shape& ws = weight.shape();
  conv::Conv2dGeometry g{x.shape()[0], ws[0], x.shape()[1], x.shape()[2], ws[2]};
  if (ws[1] != g.in_channels || ws[3] != g.ksize || g.ksize % 2 == 0) {
    throw ShapeError("conv2d: weight " + shape_string(ws) + " incompatible with input " +
                     shape_string(x.shape()));
  }
  if (bias.shape() != Shape{g.out_channels}) throw ShapeError("conv2d: bias shape");
  Tensor out({g.out_channels, g.height, g.width});
  conv::conv2d(x.value().data, weight.value().data, bias.value().data, g, out.data);
  const std::size_t ix = x.id(), iw = weight.id(), ib = bias.id();
  return t.record("conv2d", std::move(out), {x, weight, bias},
                  [ix, iw, ib, g](Tape& tp, std::size_t self) {
                    std::span<double> gx, gw, gb;
                    if (tp.needs_grad(ix)) gx = tp.grad_mut(ix);
                    if (tp.needs_grad(iw)) gw = tp.grad_mut(iw);
                    if (tp.needs_grad(ib)) gb = tp.grad_mut(ib);
                    conv::conv2d_backward(tp.value_at(ix).data, tp.value_at(iw).data,
                                          tp.grad_at(self), g, gx, gw, gb);
                  });
}

Var avg_pool2(Var x) {
  Tape& t = tape_of(x);
  require_rank("avg_pool2", x, 3);
  const std::size_t C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  if (H % 2 || W % 2) throw ShapeError("avg_pool2: dims must be even, got " + shape_string(x.shape()));
  const std::size_t h = H / 2, w = W / 2;
  Tensor out({C, h, w});
  const auto& v = x.value().data;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const double* p = v.data() + (c * H + 2 * i) * W + 2 * j;
        out.data[(c * h + i) * w + j] = 0.25 * (p[0] + p[1] + p[W] + p[W + 1]);
      }
  const std::size_t ix = x.id();
  return t.record("avg_pool2", std::move(out), {x}, [ix, C, H, W](Tape& tp, std::size_t self) {
    if (!tp.needs_grad(ix)) return;
    auto g = tp.grad_at(self);
    auto gx = tp.grad_mut(ix);
    const std::size_t h2 = H / 2, w2 = W / 2;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < h2; ++i)
        for (std::size_t j = 0; j < w2; ++j) {
          const double q = 0.25 * g[(c * h2 + i) * w2 + j];
          double* p = gx.data() + (c * H + 2 * i) * W + 2 * j;
          p[0] += q;
          p[1] += q;
          p[W] += q;
          p[W + 1] += q;
        }
  });
}

Var upsample_nearest2(Var x) {
  Tape& t = tape_of(x);
  require_rank("upsample_nearest2", x, 3);
  const std::size_t C = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const std::size_t H = 2 * h, W = 2 * w;
  Tensor out({C, H, W});
  const auto& v = x.value().data;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) out.data[(c * H + i) * W + j] = v[(c * h + i / 2) * w + j / 2];
  const std::size_t ix = x.id();
  return t.record("upsample_nearest2", std::move(out), {x}, [ix, C, h, w](Tape& tp, std::size_t self) {
    if (!tp.needs_grad(ix)) return;
    auto g = tp.grad_at(self);
    auto gx = tp.grad_mut(ix);
    const std::size_t H2 = 2 * h, W2 = 2 * w;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < H2; ++i)
        for (std::size_t j = 0; j < W2; ++j) gx[(c * h + i / 2) * w + j / 2] += g[(c * H2 + i) * W2 + j];
  });
}

// ---- gradient checking -----------------------------------------------------

FiniteDiffReport finite_diff_check(const LossBuilder& loss, const std::vector<Tensor>& leaves,
                                   double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_check: step must be positive");

  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& l : leaves) vars.push_back(tape.leaf(l));
    Var root = loss(tape, vars);
    tape.forward(root);
    tape.backward(root);
    for (const auto& v : vars) analytic.push_back(v.grad());
  }

  auto evaluate = [&](const std::vector<Tensor>& point) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& l : point) vars.push_back(tape.leaf(l));
    try {
      Var root = loss(tape, vars);
      const double v = tape.forward(root);
      if (!std::isfinite(v)) throw NonFiniteError("loss is not finite");
      return v;
    } catch (const NonFiniteError& e) {
      throw NonFiniteError(std::string("finite_diff_check: non-finite loss at perturbed point: ") +
                           e.what());
    }
  };

  FiniteDiffReport report;
  std::vector<Tensor> point = leaves;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    for (std::size_t i = 0; i < leaves[l].size(); ++i) {
      const double x0 = leaves[l].data[i];
      point[l].data[i] = x0 + h;
      const double fp = evaluate(point);
      point[l].data[i] = x0 - h;
      const double fm = evaluate(point);
      point[l].data[i] = x0;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[l].data[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++report.coordinates;
      if (report.coordinates == 1 || rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.leaf = l;
        report.index = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace kano::ad
