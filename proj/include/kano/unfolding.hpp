#pragma once

// Unrolled proximal-gradient iteration over (kernel, spectral part,
// perturbation part). Each stage takes an explicit gradient step on
//   f = 1/2 || Y - K (x)_s (O + S) ||_F^2
// for K, then O, then S (Gauss-Seidel order), and replaces every proximal
// operator with a learned residual network:
//   K <- project_simplex(v + KNet(v)),   v = K - g1 * dK
//   O <- u + ONet(u),                    u = O - g2 * dO
//   S <- w + SNet(w),                    w = S - g3 * dS
// Step sizes are per stage and kept positive through softplus.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "kano/autodiff.hpp"
#include "kano/degradation.hpp"
#include "kano/spline_kan.hpp"
#include "kano/tensor.hpp"

namespace kano {

enum class Backbone { Kan, Mlp };

std::string to_string(Backbone b);
Backbone backbone_from_string(std::string_view s);

struct ModelConfig {
  std::size_t channels = 3;
  std::size_t kernel_size = 11;
  std::size_t stages = 4;
  Backbone backbone = Backbone::Kan;
  SplineGrid grid{};
  double gamma_init = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

// Residual MLP used in place of the K-Net KAN for backbone comparisons:
// one SiLU hidden layer, width chosen to match the KAN parameter count.
struct Mlp {
  Tensor w1, b1, w2, b2;  // (d,H) (1,H) (H,d) (1,d)
  std::size_t parameter_count() const { return w1.size() + b1.size() + w2.size() + b2.size(); }
};

// Two-level U-shape: enc (C->2C) -> pool -> mid (2C->2C) -> up -> concat with
// enc -> dec (4C->2C) -> out (2C->C), 3x3 convs, SiLU between.
struct SNet {
  Tensor enc_w, enc_b, mid_w, mid_b, dec_w, dec_b, out_w, out_b;
  std::size_t parameter_count() const;
};

class KanoModel {
 public:
  KanoModel() = default;
  explicit KanoModel(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }

  // Stable parameter order: step sizes, K-Net, O-Net spatial sets, O-Net
  // spectral stack, S-Net.
  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::vector<std::string> parameter_names() const;
  std::size_t parameter_count() const;
  std::size_t knet_parameter_count() const;

  // which: 0 kernel step, 1 spectral step, 2 perturbation step.
  double gamma(std::size_t stage, std::size_t which) const;
  // 0 is represented exactly (softplus underflows to 0).
  void set_gamma(std::size_t stage, std::size_t which, double value);
  // Zeroes the last layer of every learned correction so each proximal
  // network is the identity.
  void make_pass_through();

  static std::size_t mlp_hidden_width(std::size_t dim, std::size_t kan_params);

  // Components, exposed for checkpointing and tests.
  std::vector<Tensor> gamma_raw;  // stages * 3 single-element tensors
  KanStack knet_kan;              // empty when backbone == Mlp
  Mlp knet_mlp;                   // empty when backbone == Kan
  std::array<KanLayer, 4> onet_spatial;
  KanStack onet_spectral;
  SNet snet;

 private:
  ModelConfig config_;
};

struct MlpVars {
  ad::Var w1, b1, w2, b2;
};

struct SNetVars {
  ad::Var enc_w, enc_b, mid_w, mid_b, dec_w, dec_b, out_w, out_b;
};

struct ModelVars {
  std::vector<ad::Var> gamma_raw;
  KanStackVars knet_kan;
  MlpVars knet_mlp;
  std::vector<KanLayerVars> onet_spatial;
  KanStackVars onet_spectral;
  SNetVars snet;
};

// Views leaves (in parameters() order) as model parameters.
ModelVars view_model(const KanoModel& model, const std::vector<ad::Var>& leaves);
ModelVars bind_model(const KanoModel& model, ad::Tape& tape);
ModelVars constant_model(const KanoModel& model, ad::Tape& tape);

// ---- state ---------------------------------------------------------------

struct UnfoldState {
  Kernel kernel;
  Cube spectral;      // O
  Cube perturbation;  // S
  std::size_t stage = 0;

  Cube image() const { return spectral + perturbation; }
};

UnfoldState init_state(const Cube& y, std::size_t scale, std::size_t kernel_size);

// r = Y - K (x)_s (O + S)
Cube residual(const UnfoldState& state, const Cube& y, std::size_t scale);
// True gradients of the data term (descent direction is the negative).
Tensor grad_kernel(const UnfoldState& state, const Cube& y, std::size_t scale);
Cube grad_spectral(const UnfoldState& state, const Cube& y, std::size_t scale);
// Same operator as grad_spectral; the caller passes the state after the
// spectral update.
Cube grad_perturbation(const UnfoldState& state, const Cube& y, std::size_t scale);

// Clamp negatives to 0 and renormalize; an all-nonpositive input becomes the
// uniform kernel.
Kernel project_simplex(std::span<const double> raw, std::size_t k);
ad::Var project_simplex(ad::Var raw);

// ---- differentiable stages -------------------------------------------------

struct StateVars {
  ad::Var kernel;
  ad::Var spectral;
  ad::Var perturbation;
};

enum class StepKind { Kernel, Spectral, Perturbation };

// Values an explicit gradient step actually consumed.
struct StepTrace {
  std::size_t stage;
  StepKind kind;
  const Tensor& kernel;
  const Tensor& spectral;
  const Tensor& perturbation;
};
using StepObserver = std::function<void(const StepTrace&)>;

struct StageVars {
  ad::Var kernel;
  ad::Var spectral;
  ad::Var perturbation;
  ad::Var image;
};

ad::Var knet_step(const StateVars& s, ad::Var y, std::size_t scale, const KanoModel& model,
                  const ModelVars& vars, std::size_t stage, const StepObserver& observer = {});
ad::Var onet_step(const StateVars& s, ad::Var y, std::size_t scale, const KanoModel& model,
                  const ModelVars& vars, std::size_t stage, const StepObserver& observer = {});
ad::Var snet_step(const StateVars& s, ad::Var y, std::size_t scale, const KanoModel& model,
                  const ModelVars& vars, std::size_t stage, const StepObserver& observer = {});

// The networks alone (no gradient step, no residual connection).
ad::Var knet_backbone(ad::Var flat, const KanoModel& model, const ModelVars& vars);
ad::Var onet_correction(ad::Var cube, const KanoModel& model, const ModelVars& vars);
ad::Var snet_correction(ad::Var cube, const ModelVars& vars);

std::vector<StageVars> unfold(ad::Tape& tape, ad::Var y, std::size_t scale, const KanoModel& model,
                              const ModelVars& vars, const StateVars& init,
                              const StepObserver& observer = {});

StateVars constant_state(ad::Tape& tape, const UnfoldState& state);

// ---- value-level API ---------------------------------------------------------

struct StageResult {
  Kernel kernel;
  Cube spectral;
  Cube perturbation;
  Cube image;
};

// Each step reads K, O, S from `state` as the step's inputs.
Kernel knet_step(const UnfoldState& state, const Cube& y, std::size_t scale, const KanoModel& model,
                 std::size_t stage);
Cube onet_step(const UnfoldState& state, const Cube& y, std::size_t scale, const KanoModel& model,
               std::size_t stage);
Cube snet_step(const UnfoldState& state, const Cube& y, std::size_t scale, const KanoModel& model,
               std::size_t stage);

std::vector<StageResult> run_unfolding(const Cube& y, const KanoModel& model, std::size_t scale,
                                       std::size_t kernel_size);
std::vector<StageResult> run_unfolding(const Cube& y, const KanoModel& model, std::size_t scale,
                                       const UnfoldState& init, const StepObserver& observer = {});

}  // namespace kano
