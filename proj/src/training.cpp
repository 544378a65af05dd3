#include "kano/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <string>
#include <thread>

#include "kano/metrics.hpp"

namespace kano {

void SpecDistribution::validate() const {
  if (scale == 0) throw std::invalid_argument("scale must be >= 1");
  if (kernel_size == 0 || kernel_size % 2 == 0) throw std::invalid_argument("kernel size must be odd");
  if (!(sigma_min > 0.0) || !(sigma_max >= sigma_min) || !std::isfinite(sigma_max)) {
    throw std::invalid_argument("sigma range must satisfy 0 < min <= max");
  }
  if (!std::isfinite(theta_min) || !std::isfinite(theta_max) || theta_max < theta_min) {
    throw std::invalid_argument("theta range must satisfy min <= max");
  }
  if (!(noise_max >= 0.0) || !std::isfinite(noise_max)) throw std::invalid_argument("noise_max must be >= 0");
}

DegradationSpec SpecDistribution::sample(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> sig(sigma_min, sigma_max);
  std::uniform_real_distribution<double> ang(theta_min, theta_max);
  std::uniform_real_distribution<double> noi(0.0, noise_max);
  DegradationSpec spec;
  spec.scale = scale;
  spec.kernel_size = kernel_size;
  spec.sigma_x = sig(rng);
  spec.sigma_y = sig(rng);
  spec.theta = ang(rng);
  spec.noise = noi(rng);
  spec.seed = rng();
  return spec;
}

std::vector<double> default_stage_weights(std::size_t stages) {
  std::vector<double> w(stages, 0.5);
  if (!w.empty()) w.back() = 1.0;
  return w;
}

void TrainConfig::validate() const {
  model.validate();
  data.validate();
  if (data.kernel_size != model.kernel_size) {
    throw std::invalid_argument("data kernel size must equal model kernel size");
  }
  if (corpus_size == 0 || image_size == 0 || patch == 0 || batch == 0) {
    throw std::invalid_argument("corpus_size, image_size, patch and batch must be positive");
  }
  if (image_size % data.scale != 0 || patch % data.scale != 0) {
    throw std::invalid_argument("image size and patch must be divisible by the scale");
  }
  if (patch % 2 != 0) throw std::invalid_argument("patch must be even");
  if (patch > image_size) throw std::invalid_argument("patch larger than the images");
  if (!(adam.lr > 0.0) || !(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) ||
      !(adam.eps > 0.0)) {
    throw std::invalid_argument("invalid Adam hyperparameters");
  }
  for (const auto* w : {&alpha, &beta}) {
    if (!w->empty() && w->size() != model.stages) {
      throw std::invalid_argument("loss weight vectors must have one entry per stage");
    }
    for (double v : *w) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("loss weights must be >= 0");
    }
  }
}

std::vector<double> TrainConfig::kernel_weights() const {
  return alpha.empty() ? default_stage_weights(model.stages) : alpha;
}

std::vector<double> TrainConfig::image_weights() const {
  return beta.empty() ? default_stage_weights(model.stages) : beta;
}

double learning_rate(double base, std::size_t step, std::size_t total_steps) {
  if (step * 10 >= total_steps * 8) return base * 0.25;
  if (step * 10 >= total_steps * 6) return base * 0.5;
  return base;
}

// ---- loss --------------------------------------------------------------------

LossParts total_loss(const std::vector<StageVars>& stages, ad::Var k_gt, ad::Var x_gt,
                     const std::vector<double>& alpha, const std::vector<double>& beta) {
  if (stages.empty()) throw std::invalid_argument("total_loss: no stages");
  if (alpha.size() != stages.size() || beta.size() != stages.size()) {
    throw std::invalid_argument("total_loss: weight vectors must have one entry per stage");
  }
  ad::Var lk, lx;
  for (std::size_t t = 0; t < stages.size(); ++t) {
    ad::Var kt = ad::scale(ad::sum(ad::abs(ad::sub(k_gt, stages[t].kernel))), alpha[t]);
    ad::Var xt = ad::scale(ad::sum(ad::abs(ad::sub(x_gt, stages[t].image))), beta[t]);
    lk = t == 0 ? kt : ad::add(lk, kt);
    lx = t == 0 ? xt : ad::add(lx, xt);
  }
  return {ad::add(lk, lx), lk, lx};
}

double total_loss(const std::vector<StageResult>& stages, const Kernel& k_gt, const Cube& x_gt,
                  const std::vector<double>& alpha, const std::vector<double>& beta) {
  if (stages.empty()) throw std::invalid_argument("total_loss: no stages");
  if (alpha.size() != stages.size() || beta.size() != stages.size()) {
    throw std::invalid_argument("total_loss: weight vectors must have one entry per stage");
  }
  double total = 0.0;
  for (std::size_t t = 0; t < stages.size(); ++t) {
    const auto& s = stages[t];
    if (s.kernel.size() != k_gt.size() || !s.image.same_shape(x_gt)) {
      throw ShapeError("total_loss: stage output does not match the targets");
    }
    double lk = 0.0, lx = 0.0;
    for (std::size_t i = 0; i < k_gt.values().size(); ++i) lk += std::abs(k_gt.values()[i] - s.kernel.values()[i]);
    for (std::size_t i = 0; i < x_gt.size(); ++i) lx += std::abs(x_gt.values()[i] - s.image.values()[i]);
    total += alpha[t] * lk + beta[t] * lx;
  }
  return total;
}

// ---- Adam --------------------------------------------------------------------

void adam_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads,
               AdamState& state, std::size_t step, const AdamConfig& config, double lr) {
  if (step == 0) throw std::invalid_argument("adam_step: step counts from 1");
  if (grads.size() != params.size()) throw ShapeError("adam_step: one gradient per parameter expected");
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->shape);
      state.v.emplace_back(p->shape);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: moment count does not match parameters");
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    if (!p.same_shape(g) || !p.same_shape(state.m[i])) throw ShapeError("adam_step: shape mismatch");
    auto& m = state.m[i].data;
    auto& v = state.v[i].data;
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + config.eps);
    }
  }
}

// ---- data --------------------------------------------------------------------

Cube procedural_image(std::size_t channels, std::size_t height, std::size_t width, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  const double H = static_cast<double>(height), W = static_cast<double>(width);
  Cube img(channels, height, width);

  // Smooth gradient background.
  for (std::size_t c = 0; c < channels; ++c) {
    const double a0 = uni(0.2, 0.8), gx = uni(-0.4, 0.4), gy = uni(-0.4, 0.4);
    for (std::size_t i = 0; i < height; ++i)
      for (std::size_t j = 0; j < width; ++j) {
        img.at(c, i, j) = a0 + gx * ((static_cast<double>(j) + 0.5) / W - 0.5) +
                          gy * ((static_cast<double>(i) + 0.5) / H - 0.5);
      }
  }

  // Oriented sinusoids.
  const int waves = 1 + static_cast<int>(rng() % 3);
  for (int n = 0; n < waves; ++n) {
    const double period = uni(6.0, 32.0), angle = uni(0.0, std::numbers::pi), phase = uni(0.0, 2.0 * std::numbers::pi);
    const double fx = std::cos(angle) * 2.0 * std::numbers::pi / period;
    const double fy = std::sin(angle) * 2.0 * std::numbers::pi / period;
    std::vector<double> amp(channels);
    for (auto& a : amp) a = uni(0.0, 0.15);
    for (std::size_t i = 0; i < height; ++i)
      for (std::size_t j = 0; j < width; ++j) {
        const double w = std::sin(fx * static_cast<double>(j) + fy * static_cast<double>(i) + phase);
        for (std::size_t c = 0; c < channels; ++c) img.at(c, i, j) += amp[c] * w;
      }
  }

  // Random star-shaped polygons, alpha-blended.
  const int polys = 1 + static_cast<int>(rng() % 3);
  for (int n = 0; n < polys; ++n) {
    const double cx = uni(0.0, W), cy = uni(0.0, H);
    const double radius = uni(0.1, 0.35) * std::min(H, W);
    const int nv = 3 + static_cast<int>(rng() % 4);
    std::vector<double> ang(static_cast<std::size_t>(nv));
    for (auto& a : ang) a = uni(0.0, 2.0 * std::numbers::pi);
    std::sort(ang.begin(), ang.end());
    std::vector<double> vx, vy;
    for (double a : ang) {
      const double r = radius * uni(0.5, 1.0);
      vx.push_back(cx + r * std::cos(a));
      vy.push_back(cy + r * std::sin(a));
    }
    std::vector<double> color(channels);
    for (auto& v : color) v = u01(rng);
    const double alpha = uni(0.5, 1.0);
    for (std::size_t i = 0; i < height; ++i)
      for (std::size_t j = 0; j < width; ++j) {
        const double px = static_cast<double>(j) + 0.5, py = static_cast<double>(i) + 0.5;
        bool inside = false;
        for (std::size_t a = 0, b = vx.size() - 1; a < vx.size(); b = a++) {
          if ((vy[a] > py) != (vy[b] > py) &&
              px < (vx[b] - vx[a]) * (py - vy[a]) / (vy[b] - vy[a]) + vx[a]) {
            inside = !inside;
          }
        }
        if (!inside) continue;
        for (std::size_t c = 0; c < channels; ++c) {
          img.at(c, i, j) = (1.0 - alpha) * img.at(c, i, j) + alpha * color[c];
        }
      }
  }

  for (auto& v : img.values()) v = std::clamp(v, 0.0, 1.0);
  return img;
}

std::vector<SamplePair> synth_dataset(std::size_t n, const SpecDistribution& dist, std::size_t image_size,
                                      std::size_t channels, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("synth_dataset: n must be >= 1");
  if (channels == 0) throw std::invalid_argument("synth_dataset: channels must be >= 1");
  dist.validate();
  if (image_size == 0 || image_size % dist.scale != 0) {
    throw std::invalid_argument("synth_dataset: image size must be a positive multiple of the scale");
  }
  std::mt19937_64 rng(seed);
  std::vector<SamplePair> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Cube x = procedural_image(channels, image_size, image_size, rng);
    DegradationSpec spec = dist.sample(rng);
    Degraded d = degrade(x, spec);
    out.push_back({std::move(x), std::move(d.observation), std::move(d.kernel), spec});
  }
  return out;
}

namespace {

Cube crop(const Cube& src, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
  Cube out(src.channels(), h, w);
  for (std::size_t c = 0; c < src.channels(); ++c)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) out.at(c, i, j) = src.at(c, top + i, left + j);
  return out;
}

std::size_t pick_offset(std::size_t low_len, std::size_t low_patch, std::size_t margin, std::mt19937_64& rng) {
  if (low_len - low_patch < 2 * margin) margin = 0;
  std::uniform_int_distribution<std::size_t> d(margin, low_len - low_patch - margin);
  return d(rng);
}

}  // namespace

PatchPair sample_patches(const SamplePair& pair, std::size_t patch, std::mt19937_64& rng) {
  const std::size_t s = pair.spec.scale;
  const Cube& x = pair.x_gt;
  if (s == 0 || patch == 0 || patch % s != 0) throw std::invalid_argument("sample_patches: patch must be divisible by the scale");
  if (patch > x.height() || patch > x.width()) throw std::invalid_argument("sample_patches: patch too large for the image");
  if (pair.y.height() * s != x.height() || pair.y.width() * s != x.width()) {
    throw ShapeError("sample_patches: observation does not match image / scale");
  }
  const std::size_t lp = patch / s;
  const std::size_t margin = (pair.k_gt.size() / 2 + s - 1) / s;
  const std::size_t oy = pick_offset(pair.y.height(), lp, margin, rng);
  const std::size_t ox = pick_offset(pair.y.width(), lp, margin, rng);
  return {crop(x, oy * s, ox * s, patch, patch), crop(pair.y, oy, ox, lp, lp)};
}

PatchPair sample_patches(const SamplePair& pair, std::size_t patch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_patches(pair, patch, rng);
}

// ---- training loop -------------------------------------------------------------

std::size_t resolve_threads(std::size_t requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("KANO_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

namespace {

struct ElementResult {
  double loss = 0.0;
  double loss_k = 0.0;
  double loss_x = 0.0;
  std::vector<Tensor> grads;
  std::string error;
  std::size_t stage = 0;
};

ElementResult run_element(const KanoModel& model, const PatchPair& p, const Kernel& k_gt, std::size_t scale,
                          const std::vector<double>& alpha, const std::vector<double>& beta) {
  ElementResult r;
  try {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (const Tensor* t : model.parameters()) leaves.push_back(tape.leaf(*t));
    const ModelVars vars = view_model(model, leaves);
    const UnfoldState init = init_state(p.y, scale, model.config().kernel_size);
    const StepObserver observer = [&r](const StepTrace& t) { r.stage = t.stage; };
    auto stages = unfold(tape, tape.constant(p.y.to_tensor()), scale, model, vars, constant_state(tape, init), observer);
    r.stage = model.config().stages;  // past the last stage: the loss itself
    LossParts lp = total_loss(stages, tape.constant(k_gt.to_tensor()), tape.constant(p.x.to_tensor()), alpha, beta);
    r.loss = tape.forward(lp.total);
    r.loss_k = lp.kernel.value().item();
    r.loss_x = lp.image.value().item();
    tape.backward(lp.total);
    r.grads.reserve(leaves.size());
    for (const auto& l : leaves) r.grads.push_back(l.grad());
  } catch (const ad::NonFiniteError& e) {
    r.error = e.what();
  }
  return r;
}

}  // namespace

TrainResult train(const TrainConfig& config, const StepCallback& on_step) {
  config.validate();
  const auto corpus = synth_dataset(config.corpus_size, config.data, config.image_size, config.model.channels,
                                    config.seed);
  return train(config, corpus, on_step);
}

TrainResult train(const TrainConfig& config, const std::vector<SamplePair>& corpus, const StepCallback& on_step) {
  config.validate();
  if (corpus.empty()) throw std::invalid_argument("train: empty corpus");
  ModelConfig mc = config.model;
  mc.seed = config.seed;
  TrainResult result{KanoModel(mc), {}};
  KanoModel& model = result.model;
  const auto params = model.parameters();
  const auto alpha = config.kernel_weights();
  const auto beta = config.image_weights();
  const std::size_t workers = std::min(resolve_threads(config.threads), config.batch);
  AdamState adam;
  // Separate stream from the corpus and model streams.
  std::mt19937_64 rng(config.seed ^ 0x5851f42d4c957f2dULL);
  const auto start = std::chrono::steady_clock::now();

  for (std::size_t step = 0; step < config.steps; ++step) {
    std::vector<PatchPair> patches;
    std::vector<const SamplePair*> sources;
    std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
    for (std::size_t b = 0; b < config.batch; ++b) {
      const SamplePair& src = corpus[pick(rng)];
      if (src.spec.scale != config.data.scale) throw std::invalid_argument("train: corpus scale differs from config");
      patches.push_back(sample_patches(src, config.patch, rng));
      sources.push_back(&src);
    }

    std::vector<ElementResult> results(config.batch);
    auto work = [&](std::size_t w) {
      for (std::size_t b = w; b < config.batch; b += workers) {
        results[b] = run_element(model, patches[b], sources[b]->k_gt, config.data.scale, alpha, beta);
      }
    };
    if (workers <= 1) {
      work(0);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
      for (auto& t : pool) t.join();
    }

    LogRow row;
    row.step = step + 1;
    row.lr = learning_rate(config.adam.lr, step, config.steps);
    std::vector<Tensor> grads;
    const double inv = 1.0 / static_cast<double>(config.batch);
    for (std::size_t b = 0; b < config.batch; ++b) {
      const auto& r = results[b];
      if (!r.error.empty()) {
        throw TrainingAborted("non-finite value at step " + std::to_string(step + 1) + ", batch element " +
                                  std::to_string(b) + ", stage " + std::to_string(r.stage + 1) + ": " + r.error,
                              step + 1, r.stage + 1);
      }
      row.loss += r.loss * inv;
      row.loss_k += r.loss_k * inv;
      row.loss_x += r.loss_x * inv;
      if (b == 0) {
        grads = r.grads;
        for (auto& g : grads)
          for (auto& v : g.data) v *= inv;
      } else {
        for (std::size_t i = 0; i < grads.size(); ++i)
          for (std::size_t j = 0; j < grads[i].size(); ++j) grads[i][j] += r.grads[i][j] * inv;
      }
    }
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (!grads[i].all_finite()) {
        throw TrainingAborted("non-finite gradient at step " + std::to_string(step + 1) + " for parameter " +
                                  model.parameter_names()[i],
                              step + 1, 0);
      }
    }
    adam_step(params, grads, adam, step + 1, config.adam, row.lr);
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(row);
    if (on_step) on_step(row, model);
  }
  return result;
}

std::vector<double> loss_ema(const std::vector<LogRow>& log, double smoothing) {
  if (!(smoothing > 0.0 && smoothing <= 1.0)) throw std::invalid_argument("loss_ema: smoothing must be in (0, 1]");
  std::vector<double> out;
  double e = 0.0, decay = 1.0;
  for (const auto& r : log) {
    e = (1.0 - smoothing) * e + smoothing * r.loss;
    decay *= 1.0 - smoothing;
    out.push_back(e / (1.0 - decay));
  }
  return out;
}

double kernel_mse(const Kernel& a, const Kernel& b) {
  if (a.size() != b.size()) throw ShapeError("kernel_mse: kernel sizes differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) {
    const double d = a.values()[i] - b.values()[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.values().size());
}

namespace {

double cube_mse(const Cube& a, const Cube& b) {
  if (!a.same_shape(b)) throw ShapeError("mse: shapes differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.values()[i] - b.values()[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

}  // namespace

std::vector<StageDiagnostics> stage_diagnostics(const std::vector<StageResult>& stages, const Cube& x_gt,
                                                const Kernel* k_gt) {
  std::vector<StageDiagnostics> out;
  for (std::size_t t = 0; t < stages.size(); ++t) {
    const auto& s = stages[t];
    StageDiagnostics d;
    d.stage = t + 1;
    d.mse_o = cube_mse(s.spectral, x_gt);
    d.mse_s = cube_mse(s.perturbation, x_gt - s.spectral);
    d.mse_x = cube_mse(s.image, x_gt);
    d.kernel_mse = k_gt ? kernel_mse(s.kernel, *k_gt) : std::nan("");
    out.push_back(d);
  }
  return out;
}

HoldoutScores evaluate_holdout(const KanoModel& model, const std::vector<SamplePair>& pairs) {
  HoldoutScores h;
  const Kernel init = gaussian_sep_init(model.config().kernel_size);
  for (const auto& p : pairs) {
    const std::size_t s = p.spec.scale;
    const auto stages = run_unfolding(p.y, model, s, model.config().kernel_size);
    h.psnr += psnr(p.x_gt, stages.back().image);
    h.psnr_bicubic += psnr(p.x_gt, bicubic_upsample(p.y, s));
    h.kernel_mse += kernel_mse(stages.back().kernel, p.k_gt);
    h.kernel_mse_init += kernel_mse(init, p.k_gt);
    ++h.count;
  }
  if (h.count) {
    const double n = static_cast<double>(h.count);
    h.psnr /= n;
    h.psnr_bicubic /= n;
    h.kernel_mse /= n;
    h.kernel_mse_init /= n;
  }
  return h;
}

BackboneComparison compare_backbones(const TrainConfig& config, const std::vector<SamplePair>& corpus,
                                     const std::vector<SamplePair>& holdout, std::size_t eval_every) {
  if (eval_every == 0) throw std::invalid_argument("compare_backbones: eval_every must be >= 1");
  if (holdout.empty()) throw std::invalid_argument("compare_backbones: empty held-out set");
  BackboneComparison out;
  std::vector<std::size_t> steps{0};
  for (std::size_t s = eval_every; s <= config.steps; s += eval_every) steps.push_back(s);
  if (steps.back() != config.steps) steps.push_back(config.steps);
  out.curve.resize(steps.size());
  for (std::size_t i = 0; i < steps.size(); ++i) out.curve[i].step = steps[i];

  for (Backbone b : {Backbone::Kan, Backbone::Mlp}) {
    TrainConfig c = config;
    c.model.backbone = b;
    const bool kan = b == Backbone::Kan;
    ModelConfig mc = c.model;
    mc.seed = c.seed;
    const KanoModel initial(mc);
    (kan ? out.kan_knet_parameters : out.mlp_knet_parameters) = initial.knet_parameter_count();
    (kan ? out.kan_total_parameters : out.mlp_total_parameters) = initial.parameter_count();
    (kan ? out.curve[0].kan_kernel_mse : out.curve[0].mlp_kernel_mse) = evaluate_holdout(initial, holdout).kernel_mse;
    std::size_t next = 1;
    double ema = 0.0, decay = 1.0;
    TrainResult r = train(c, corpus, [&](const LogRow& row, const KanoModel& m) {
      ema = 0.95 * ema + 0.05 * row.loss;
      decay *= 0.95;
      if (next < steps.size() && row.step == steps[next]) {
        auto& pt = out.curve[next];
        (kan ? pt.kan_kernel_mse : pt.mlp_kernel_mse) = evaluate_holdout(m, holdout).kernel_mse;
        (kan ? pt.kan_loss : pt.mlp_loss) = ema / (1.0 - decay);
        ++next;
      }
    });
    (kan ? out.kan_final : out.mlp_final) = evaluate_holdout(r.model, holdout);
  }
  return out;
}

}  // namespace kano
