#pragma once

// Multi-stage L1 supervision, Adam, the procedural training corpus and the
// training loop.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "kano/autodiff.hpp"
#include "kano/degradation.hpp"
#include "kano/tensor.hpp"
#include "kano/unfolding.hpp"

namespace kano {

// Per-sample degradation distribution. Kernel std-devs and the rotation are
// uniform; the noise level is uniform on [0, noise_max].
struct SpecDistribution {
  std::size_t scale = 2;
  std::size_t kernel_size = 11;
  double sigma_min = 0.6;
  double sigma_max = 5.0;
  double theta_min = -std::numbers::pi;
  double theta_max = std::numbers::pi;
  double noise_max = 25.0 / 255.0;

  void validate() const;
  DegradationSpec sample(std::mt19937_64& rng) const;
};

struct SamplePair {
  Cube x_gt;
  Cube y;
  Kernel k_gt;
  DegradationSpec spec;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

struct TrainConfig {
  ModelConfig model;
  SpecDistribution data;
  AdamConfig adam;
  std::size_t corpus_size = 64;
  std::size_t image_size = 64;
  std::size_t patch = 32;
  std::size_t batch = 4;
  std::size_t steps = 2000;
  std::vector<double> alpha;  // empty: 0.5 for early stages, 1.0 for the last
  std::vector<double> beta;
  std::uint64_t seed = 0;
  std::size_t threads = 0;    // 0: KANO_THREADS, then hardware concurrency

  void validate() const;
  std::vector<double> kernel_weights() const;
  std::vector<double> image_weights() const;
};

std::vector<double> default_stage_weights(std::size_t stages);

// Step-decayed rate: x0.5 from 60% of the run, x0.25 from 80%.
double learning_rate(double base, std::size_t step, std::size_t total_steps);

struct LossParts {
  ad::Var total;
  ad::Var kernel;  // weighted kernel L1
  ad::Var image;   // weighted image L1
};

LossParts total_loss(const std::vector<StageVars>& stages, ad::Var k_gt, ad::Var x_gt,
                     const std::vector<double>& alpha, const std::vector<double>& beta);
double total_loss(const std::vector<StageResult>& stages, const Kernel& k_gt, const Cube& x_gt,
                  const std::vector<double>& alpha, const std::vector<double>& beta);

// One bias-corrected Adam update; `step` counts from 1.
void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
               AdamState& state, std::size_t step, const AdamConfig& config, double lr);

Cube procedural_image(std::size_t channels, std::size_t height, std::size_t width,
                      std::mt19937_64& rng);
std::vector<SamplePair> synth_dataset(std::size_t n, const SpecDistribution& dist,
                                      std::size_t image_size, std::size_t channels,
                                      std::uint64_t seed);

struct PatchPair {
  Cube x;
  Cube y;
};

// Aligned crops: the X offset is scale times the Y offset. Y rows and columns
// whose blur footprint reaches past the image border are kept out of the crop
// range when the image is large enough.
PatchPair sample_patches(const SamplePair& pair, std::size_t patch, std::uint64_t seed);
PatchPair sample_patches(const SamplePair& pair, std::size_t patch, std::mt19937_64& rng);

struct LogRow {
  std::size_t step = 0;
  double loss = 0.0;
  double loss_k = 0.0;
  double loss_x = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(const std::string& what, std::size_t step, std::size_t stage)
      : std::runtime_error(what), step_(step), stage_(stage) {}
  std::size_t step() const { return step_; }
  std::size_t stage() const { return stage_; }

 private:
  std::size_t step_;
  std::size_t stage_;
};

struct TrainResult {
  KanoModel model;
  std::vector<LogRow> log;
};

using StepCallback = std::function<void(const LogRow&, const KanoModel&)>;

TrainResult train(const TrainConfig& config, const StepCallback& on_step = {});
TrainResult train(const TrainConfig& config, const std::vector<SamplePair>& corpus,
                  const StepCallback& on_step = {});

// Bias-corrected exponential moving average of the logged loss.
std::vector<double> loss_ema(const std::vector<LogRow>& log, double smoothing = 0.05);

std::size_t resolve_threads(std::size_t requested);

struct StageDiagnostics {
  std::size_t stage = 0;
  double mse_o = 0.0;  // O against X_gt
  double mse_s = 0.0;  // S against X_gt - O
  double mse_x = 0.0;
  double kernel_mse = 0.0;
};

std::vector<StageDiagnostics> stage_diagnostics(const std::vector<StageResult>& stages,
                                                const Cube& x_gt, const Kernel* k_gt);

double kernel_mse(const Kernel& a, const Kernel& b);

// Mean scores of the final stage and of the bicubic / initial-kernel
// baselines over held-out pairs.
struct HoldoutScores {
  double psnr = 0.0;
  double psnr_bicubic = 0.0;
  double kernel_mse = 0.0;
  double kernel_mse_init = 0.0;
  std::size_t count = 0;
};

HoldoutScores evaluate_holdout(const KanoModel& model, const std::vector<SamplePair>& pairs);

struct BackboneCurvePoint {
  std::size_t step = 0;
  double kan_kernel_mse = 0.0;
  double mlp_kernel_mse = 0.0;
  double kan_loss = 0.0;  // EMA of the training loss, 0 before the first step
  double mlp_loss = 0.0;
};

struct BackboneComparison {
  std::size_t kan_knet_parameters = 0;
  std::size_t mlp_knet_parameters = 0;
  std::size_t kan_total_parameters = 0;
  std::size_t mlp_total_parameters = 0;
  std::vector<BackboneCurvePoint> curve;
  HoldoutScores kan_final;
  HoldoutScores mlp_final;
};

// Trains a KAN and an MLP K-Net from the same seed and data, scoring the
// held-out kernel MSE at step 0 and every `eval_every` steps.
BackboneComparison compare_backbones(const TrainConfig& config, const std::vector<SamplePair>& corpus,
                                     const std::vector<SamplePair>& holdout, std::size_t eval_every);

}  // namespace kano
