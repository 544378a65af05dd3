#pragma once

// Minimal reverse-mode differentiation over a closed set of tensor ops.
//
// A Tape records nodes in creation order, which is already a topological
// order, so backward is a single reverse sweep. Every op validates shapes and
// refuses to record a non-finite value.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "kano/tensor.hpp"

namespace kano::ad {

class Tape;

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Lightweight handle to a node on a tape.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

  const Tensor& value() const;
  const Shape& shape() const;
  std::size_t size() const;
  Tensor grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(std::uint64_t seed = 0) : seed_(seed), rng_(seed) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value);
  Var constant(Tensor value);

  // Returns the scalar value of root and marks it ready for backward.
  double forward(Var root);
  // Fills the gradient of every node reachable from root. Unused leaves keep
  // a zero gradient.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }
  std::uint64_t seed() const { return seed_; }
  std::mt19937_64& rng() { return rng_; }

  // Op-author interface.
  Var record(const char* op, Tensor value, std::initializer_list<Var> parents, BackwardFn fn);
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const Tensor& value_at(std::size_t id) const { return nodes_[id].value; }
  std::span<const double> grad_at(std::size_t id) const { return nodes_[id].grad; }
  std::span<double> grad_mut(std::size_t id);
  const char* op_at(std::size_t id) const { return nodes_[id].op; }

 private:
  struct Node {
    const char* op = "leaf";
    Tensor value;
    std::vector<double> grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
  };

  friend class Var;
  std::vector<Node> nodes_;
  std::uint64_t seed_;
  std::mt19937_64 rng_;
  bool forwarded_ = false;
  std::size_t forward_root_ = 0;
};

// ---- elementwise -----------------------------------------------------------
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var neg(Var a);
Var square(Var a);
Var scale(Var a, double c);
// s must be a single-element node.
Var scale_by(Var a, Var s);
Var div_by(Var a, Var s);
Var silu(Var a);
Var softplus(Var a);
Var abs(Var a);
Var relu(Var a);
// Gradient 1 on [lo, hi] (boundaries included), 0 outside.
Var clamp(Var a, double lo, double hi);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator-(Var a) { return neg(a); }

// ---- reductions and shape --------------------------------------------------
Var sum(Var a);
Var mean(Var a);
Var reshape(Var a, Shape shape);
Var transpose(Var a);  // rank-2 only
// out = a with axes permuted; a.rank() == axes.size().
Var permute(Var a, std::vector<std::size_t> axes);
Var concat(Var a, Var b);  // along axis 0

// ---- linear algebra --------------------------------------------------------
Var matmul(Var a, Var b);  // (m,n) x (n,p)
// a (P,Q,R) times b (P,R) broadcast along the middle axis.
Var mul_bcast_mid(Var a, Var b);

// ---- splines ---------------------------------------------------------------
// Dense B-spline basis of every element of x; output shape x.shape + [n].
// Inputs must already lie in the base interval (compose with clamp).
Var bspline_basis(Var x, std::vector<double> knots, std::size_t degree);

// ---- convolutions ----------------------------------------------------------
// x (C,H,W), kernel (k,k) -> (C, H/s, W/s)
Var conv_down(Var x, Var kernel, std::size_t stride);
// r (C,h,w), kernel (k,k) -> (C, h*s, w*s); the adjoint of conv_down.
Var conv_up_transpose(Var r, Var kernel, std::size_t stride);
// x (C,H,W), r (C,H/s,W/s) -> (k,k) with <K, kernel_corr(x,r)> = <conv_down(x,K), r>.
Var kernel_corr(Var x, Var r, std::size_t ksize, std::size_t stride);
// x (Cin,H,W), weight (Cout,Cin,k,k), bias (Cout) -> (Cout,H,W); replicate padding.
Var conv2d(Var x, Var weight, Var bias);
Var avg_pool2(Var x);          // (C,H,W) -> (C,H/2,W/2)
Var upsample_nearest2(Var x);  // (C,h,w) -> (C,2h,2w)

// ---- gradient checking -----------------------------------------------------
struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::size_t leaf = 0;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

using LossBuilder = std::function<Var(Tape&, const std::vector<Var>& leaves)>;

// Central differences on every coordinate of every leaf. Relative error per
// coordinate is |a - n| / max(|a|, |n|, 1e-8).
FiniteDiffReport finite_diff_check(const LossBuilder& loss, const std::vector<Tensor>& leaves,
                                   double h);

}  // namespace kano::ad
