#include "kano/unfolding.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "kano/conv.hpp"

namespace kano {

namespace {

constexpr double kZeroGammaRaw = -800.0;  // softplus underflows to exactly 0

double softplus_inverse(double y) {
  if (y == 0.0) return kZeroGammaRaw;
  if (y > 30.0) return y;
  return std::log(std::expm1(y));
}

double softplus_value(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> normal(0.0, stddev);
  for (auto& v : t.data) v = normal(rng);
  return t;
}

Tensor conv_weight(std::size_t cout, std::size_t cin, std::mt19937_64& rng) {
  return normal_tensor({cout, cin, 3, 3}, 1.0 / std::sqrt(static_cast<double>(cin * 9)), rng);
}

void zero_output(KanLayer& layer) {
  std::fill(layer.base_weights().data.begin(), layer.base_weights().data.end(), 0.0);
  std::fill(layer.spline_weights().data.begin(), layer.spline_weights().data.end(), 0.0);
}

void zero(Tensor& t) { std::fill(t.data.begin(), t.data.end(), 0.0); }

std::size_t kan_stack_params(std::size_t d, const SplineGrid& grid) {
  return 2 * d * d * (grid.basis_count() + 2);
}

// Edge weights scaled by fan-in so stacked layers keep activations O(1).
KanInit layer_init(std::size_t d_in) {
  KanInit init;
  init.base_weight = 1.0 / static_cast<double>(d_in);
  init.spline_weight = 1.0 / static_cast<double>(d_in);
  return init;
}

KanStack scaled_stack(std::span<const std::size_t> widths, const SplineGrid& grid, std::mt19937_64& rng) {
  KanStack stack;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    stack.push_back(KanLayer::random(widths[l], widths[l + 1], grid, rng, layer_init(widths[l])));
  }
  return stack;
}

// The K-Net sees the kernel scaled by k so typical entries land inside the
// spline grid instead of collapsing onto 0.
double knet_gain(std::size_t k) { return static_cast<double>(k); }

}  // namespace

std::string to_string(Backbone b) { return b == Backbone::Kan ? "kan" : "mlp"; }

Backbone backbone_from_string(std::string_view s) {
  if (s == "kan" || s == "KAN") return Backbone::Kan;
  if (s == "mlp" || s == "MLP") return Backbone::Mlp;
  throw std::invalid_argument("unknown backbone '" + std::string(s) + "' (expected kan or mlp)");
}

void ModelConfig::validate() const {
  if (channels == 0) throw std::invalid_argument("channels must be >= 1");
  if (kernel_size == 0 || kernel_size % 2 == 0) throw std::invalid_argument("kernel size must be odd");
  if (stages < 1 || stages > 8) throw std::invalid_argument("stage count must be in [1, 8]");
  if (!(gamma_init >= 0.0) || !std::isfinite(gamma_init)) throw std::invalid_argument("gamma_init must be >= 0");
  grid.validate();
}

std::size_t SNet::parameter_count() const {
  return enc_w.size() + enc_b.size() + mid_w.size() + mid_b.size() + dec_w.size() + dec_b.size() +
         out_w.size() + out_b.size();
}

std::size_t KanoModel::mlp_hidden_width(std::size_t dim, std::size_t kan_params) {
  // 2*d*H + H + d parameters.
  const double h = (static_cast<double>(kan_params) - static_cast<double>(dim)) /
                   static_cast<double>(2 * dim + 1);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(h)));
}

KanoModel::KanoModel(const ModelConfig& config) : config_(config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  const std::size_t C = config.channels;
  const std::size_t d = config.kernel_size * config.kernel_size;

  for (std::size_t i = 0; i < config.stages * 3; ++i) {
    gamma_raw.push_back(Tensor::scalar(softplus_inverse(config.gamma_init)));
  }

  if (config.backbone == Backbone::Kan) {
    const std::size_t widths[] = {d, d, d};
    knet_kan = scaled_stack(widths, config.grid, rng);
    zero_output(knet_kan.back());
  } else {
    const std::size_t hidden = mlp_hidden_width(d, kan_stack_params(d, config.grid));
    knet_mlp.w1 = normal_tensor({d, hidden}, 1.0 / std::sqrt(static_cast<double>(d)), rng);
    knet_mlp.b1 = Tensor({1, hidden});
    knet_mlp.w2 = Tensor({hidden, d});
    knet_mlp.b2 = Tensor({1, d});
  }

  const std::size_t plan[5] = {C, 2 * C, 2 * C, 2 * C, C};
  for (std::size_t i = 0; i < 4; ++i) {
    onet_spatial[i] = KanLayer::random(plan[i], plan[i + 1], config.grid, rng, layer_init(plan[i]));
  }
  const std::size_t spectral[] = {C, 2 * C, C};
  onet_spectral = scaled_stack(spectral, config.grid, rng);
  zero_output(onet_spectral.back());

  snet.enc_w = conv_weight(2 * C, C, rng);
  snet.enc_b = Tensor({2 * C});
  snet.mid_w = conv_weight(2 * C, 2 * C, rng);
  snet.mid_b = Tensor({2 * C});
  snet.dec_w = conv_weight(2 * C, 4 * C, rng);
  snet.dec_b = Tensor({2 * C});
  snet.out_w = Tensor({C, 2 * C, 3, 3});
  snet.out_b = Tensor({C});
}

std::vector<Tensor*> KanoModel::parameters() {
  std::vector<Tensor*> out;
  for (auto& g : gamma_raw) out.push_back(&g);
  if (config_.backbone == Backbone::Kan) {
    append_parameters(knet_kan, out);
  } else {
    for (Tensor* t : {&knet_mlp.w1, &knet_mlp.b1, &knet_mlp.w2, &knet_mlp.b2}) out.push_back(t);
  }
  for (auto& l : onet_spatial) l.append_parameters(out);
  append_parameters(onet_spectral, out);
  for (Tensor* t : {&snet.enc_w, &snet.enc_b, &snet.mid_w, &snet.mid_b, &snet.dec_w, &snet.dec_b,
                    &snet.out_w, &snet.out_b}) {
    out.push_back(t);
  }
  return out;
}

std::vector<const Tensor*> KanoModel::parameters() const {
  auto mut = const_cast<KanoModel*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::vector<std::string> KanoModel::parameter_names() const {
  std::vector<std::string> names;
  for (std::size_t t = 0; t < config_.stages; ++t) {
    for (const char* g : {"gamma_k", "gamma_o", "gamma_s"}) {
      names.push_back("stage" + std::to_string(t) + "." + g);
    }
  }
  auto kan_names = [&names](const std::string& prefix) {
    names.push_back(prefix + ".coefficients");
    names.push_back(prefix + ".base_weights");
    names.push_back(prefix + ".spline_weights");
  };
  if (config_.backbone == Backbone::Kan) {
    for (std::size_t l = 0; l < knet_kan.size(); ++l) kan_names("knet.layer" + std::to_string(l));
  } else {
    for (const char* n : {"knet.w1", "knet.b1", "knet.w2", "knet.b2"}) names.push_back(n);
  }
  for (std::size_t l = 0; l < onet_spatial.size(); ++l) kan_names("onet.spatial" + std::to_string(l));
  for (std::size_t l = 0; l < onet_spectral.size(); ++l) kan_names("onet.spectral" + std::to_string(l));
  for (const char* n : {"snet.enc_w", "snet.enc_b", "snet.mid_w", "snet.mid_b", "snet.dec_w",
                        "snet.dec_b", "snet.out_w", "snet.out_b"}) {
    names.push_back(n);
  }
  return names;
}

std::size_t KanoModel::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* t : parameters()) n += t->size();
  return n;
}

std::size_t KanoModel::knet_parameter_count() const {
  return config_.backbone == Backbone::Kan ? kano::parameter_count(knet_kan) : knet_mlp.parameter_count();
}

double KanoModel::gamma(std::size_t stage, std::size_t which) const {
  if (stage >= config_.stages || which > 2) throw std::out_of_range("gamma index");
  return softplus_value(gamma_raw[stage * 3 + which].item());
}

void KanoModel::set_gamma(std::size_t stage, std::size_t which, double value) {
  if (stage >= config_.stages || which > 2) throw std::out_of_range("gamma index");
  if (!(value >= 0.0) || !std::isfinite(value)) throw std::invalid_argument("step size must be >= 0");
  gamma_raw[stage * 3 + which] = Tensor::scalar(softplus_inverse(value));
}

void KanoModel::make_pass_through() {
  if (config_.backbone == Backbone::Kan) {
    zero_output(knet_kan.back());
  } else {
    zero(knet_mlp.w2);
    zero(knet_mlp.b2);
  }
  zero_output(onet_spectral.back());
  zero(snet.out_w);
  zero(snet.out_b);
}

// ---- parameter views ---------------------------------------------------------

ModelVars view_model(const KanoModel& model, const std::vector<ad::Var>& leaves) {
  const auto& cfg = model.config();
  ModelVars v;
  std::size_t cursor = 0;
  auto next = [&]() {
    if (cursor >= leaves.size()) throw ShapeError("view_model: too few leaves");
    return leaves[cursor++];
  };
  for (std::size_t i = 0; i < cfg.stages * 3; ++i) v.gamma_raw.push_back(next());
  if (cfg.backbone == Backbone::Kan) {
    v.knet_kan = view_stack(model.knet_kan, leaves, cursor);
  } else {
    v.knet_mlp = {next(), next(), next(), next()};
  }
  for (std::size_t l = 0; l < model.onet_spatial.size(); ++l) {
    v.onet_spatial.push_back(view_layer(leaves, cursor));
  }
  v.onet_spectral = view_stack(model.onet_spectral, leaves, cursor);
  v.snet.enc_w = next();
  v.snet.enc_b = next();
  v.snet.mid_w = next();
  v.snet.mid_b = next();
  v.snet.dec_w = next();
  v.snet.dec_b = next();
  v.snet.out_w = next();
  v.snet.out_b = next();
  if (cursor != leaves.size()) throw ShapeError("view_model: too many leaves");
  return v;
}

ModelVars bind_model(const KanoModel& model, ad::Tape& tape) {
  std::vector<ad::Var> leaves;
  for (const Tensor* t : model.parameters()) leaves.push_back(tape.leaf(*t));
  return view_model(model, leaves);
}

ModelVars constant_model(const KanoModel& model, ad::Tape& tape) {
  std::vector<ad::Var> leaves;
  for (const Tensor* t : model.parameters()) leaves.push_back(tape.constant(*t));
  return view_model(model, leaves);
}

// ---- state -----------------------------------------------------------------

UnfoldState init_state(const Cube& y, std::size_t scale, std::size_t kernel_size) {
  if (!y.all_finite()) throw std::invalid_argument("init_state: observation is not finite");
  UnfoldState s;
  s.spectral = bicubic_upsample(y, scale);
  s.perturbation = Cube(s.spectral.channels(), s.spectral.height(), s.spectral.width());
  s.kernel = gaussian_sep_init(kernel_size);
  return s;
}

Cube residual(const UnfoldState& state, const Cube& y, std::size_t scale) {
  if (!state.spectral.same_shape(state.perturbation)) throw ShapeError("residual: O and S differ in shape");
  Cube blurred = conv_down(state.image(), state.kernel, scale);
  if (!blurred.same_shape(y)) throw ShapeError("residual: observation shape does not match state / scale");
  return y - blurred;
}

Tensor grad_kernel(const UnfoldState& state, const Cube& y, std::size_t scale) {
  const Cube r = residual(state, y, scale);
  Tensor g = kernel_correlation(state.image(), r, state.kernel.size(), scale);
  for (auto& v : g.data) v = -v;
  return g;
}

Cube grad_spectral(const UnfoldState& state, const Cube& y, std::size_t scale) {
  const Cube r = residual(state, y, scale);
  Cube g = conv_up_transpose(r, state.kernel, scale);
  for (auto& v : g.values()) v = -v;
  return g;
}

Cube grad_perturbation(const UnfoldState& state, const Cube& y, std::size_t scale) {
  return grad_spectral(state, y, scale);
}

Kernel project_simplex(std::span<const double> raw, std::size_t k) {
  if (raw.size() != k * k) throw ShapeError("project_simplex: expected k*k values");
  std::vector<double> v(raw.begin(), raw.end());
  double total = 0.0;
  for (auto& x : v) {
    if (!std::isfinite(x)) throw std::invalid_argument("project_simplex: non-finite input");
    x = std::max(x, 0.0);
    total += x;
  }
  if (!(total > 0.0)) return Kernel::uniform(k);
  for (auto& x : v) x /= total;
  return Kernel(k, std::move(v));
}

ad::Var project_simplex(ad::Var raw) {
  const Shape s = raw.shape();  // copy: recording relu may reallocate the tape
  if (s.size() != 2 || s[0] != s[1]) throw ShapeError("project_simplex: expected a k x k tensor");
  ad::Var pos = ad::relu(raw);
  double total = 0.0;
  for (double x : pos.value().data) total += x;
  if (!(total > 0.0)) {
    const auto k = s[0];
    return raw.tape()->constant(Tensor(s, 1.0 / static_cast<double>(k * k)));
  }
  return ad::div_by(pos, ad::sum(pos));
}

// ---- differentiable steps ----------------------------------------------------

namespace {

ad::Var step_size(const ModelVars& vars, std::size_t stage, std::size_t which) {
  if (stage * 3 + which >= vars.gamma_raw.size()) throw std::out_of_range("stage index out of range");
  return ad::softplus(vars.gamma_raw[stage * 3 + which]);
}

ad::Var data_residual(ad::Var y, ad::Var image, ad::Var kernel, std::size_t scale) {
  ad::Var blurred = ad::conv_down(image, kernel, scale);
  if (blurred.shape() != y.shape()) throw ShapeError("observation shape does not match state / scale");
  return ad::sub(y, blurred);
}

void notify(const StepObserver& observer, std::size_t stage, StepKind kind, const StateVars& s) {
  if (!observer) return;
  observer(StepTrace{stage, kind, s.kernel.value(), s.spectral.value(), s.perturbation.value()});
}

}  // namespace

ad::Var knet_backbone(ad::Var flat, const KanoModel& model, const ModelVars& vars) {
  const std::size_t k = model.config().kernel_size;
  const double gain = knet_gain(k);
  ad::Var in = ad::scale(flat, gain);
  ad::Var out;
  if (model.config().backbone == Backbone::Kan) {
    out = kan_forward(in, model.knet_kan, vars.knet_kan);
  } else {
    const auto& m = vars.knet_mlp;
    const std::size_t n = flat.shape()[0];
    ad::Var ones = flat.tape()->constant(Tensor({n, 1}, 1.0));
    ad::Var h = ad::silu(ad::add(ad::matmul(in, m.w1), ad::matmul(ones, m.b1)));
    out = ad::add(ad::matmul(h, m.w2), ad::matmul(ones, m.b2));
  }
  return ad::scale(out, 1.0 / gain);
}

ad::Var onet_correction(ad::Var cube, const KanoModel& model, const ModelVars& vars) {
  const Shape s = cube.shape();
  if (s.size() != 3 || s[0] != model.config().channels) {
    throw ShapeError("onet: expected " + std::to_string(model.config().channels) + " channels, got " +
                     shape_string(s));
  }
  ad::Var rows = cube_to_rows(cube);
  for (std::size_t l = 0; l < model.onet_spatial.size(); ++l) {
    rows = kan_layer_forward(rows, model.onet_spatial[l], vars.onet_spatial[l]);
  }
  rows = kan_forward(rows, model.onet_spectral, vars.onet_spectral);
  return rows_to_cube(rows, s[1], s[2]);
}

ad::Var snet_correction(ad::Var cube, const ModelVars& vars) {
  const Shape s = cube.shape();
  if (s.size() != 3 || s[1] % 2 != 0 || s[2] % 2 != 0) {
    throw ShapeError("snet: height and width must be even, got " + shape_string(s));
  }
  const auto& n = vars.snet;
  ad::Var e1 = ad::silu(ad::conv2d(cube, n.enc_w, n.enc_b));
  ad::Var b = ad::silu(ad::conv2d(ad::avg_pool2(e1), n.mid_w, n.mid_b));
  ad::Var u = ad::upsample_nearest2(b);
  ad::Var d = ad::silu(ad::conv2d(ad::concat(u, e1), n.dec_w, n.dec_b));
  return ad::conv2d(d, n.out_w, n.out_b);
}

ad::Var knet_step(const StateVars& s, ad::Var y, std::size_t scale, const KanoModel& model,
                  const ModelVars& vars, std::size_t stage, const StepObserver& observer) {
  notify(observer, stage, StepKind::Kernel, s);
  const std::size_t k = s.kernel.shape()[0];
  if (k != model.config().kernel_size) throw ShapeError("knet_step: kernel size does not match model");
  ad::Var image = ad::add(s.spectral, s.perturbation);
  ad::Var r = data_residual(y, image, s.kernel, scale);
  // K - g1 * dK with dK = -corr(X, r).
  ad::Var v = ad::add(s.kernel, ad::scale_by(ad::kernel_corr(image, r, k, scale), step_size(vars, stage, 0)));
  ad::Var flat = ad::reshape(v, {1, k * k});
  ad::Var out = ad::add(flat, knet_backbone(flat, model, vars));
  return project_simplex(ad::reshape(out, {k, k}));
}

ad::Var onet_step(const StateVars& s, ad::Var y, std::size_t scale, const KanoModel& model,
                  const ModelVars& vars, std::size_t stage, const StepObserver& observer) {
  notify(observer, stage, StepKind::Spectral, s);
  ad::Var r = data_residual(y, ad::add(s.spectral, s.perturbation), s.kernel, scale);
  ad::Var u = ad::add(s.spectral, ad::scale_by(ad::conv_up_transpose(r, s.kernel, scale), step_size(vars, stage, 1)));
  return ad::add(u, onet_correction(u, model, vars));
}

ad::Var snet_step(const StateVars& s, ad::Var y, std::size_t scale, const KanoModel& /*model*/,
                  const ModelVars& vars, std::size_t stage, const StepObserver& observer) {
  notify(observer, stage, StepKind::Perturbation, s);
  ad::Var r = data_residual(y, ad::add(s.spectral, s.perturbation), s.kernel, scale);
  ad::Var w = ad::add(s.perturbation,
                      ad::scale_by(ad::conv_up_transpose(r, s.kernel, scale), step_size(vars, stage, 2)));
  return ad::add(w, snet_correction(w, vars));
}

std::vector<StageVars> unfold(ad::Tape& /*tape*/, ad::Var y, std::size_t scale, const KanoModel& model,
                              const ModelVars& vars, const StateVars& init, const StepObserver& observer) {
  StateVars s = init;
  std::vector<StageVars> stages;
  for (std::size_t t = 0; t < model.config().stages; ++t) {
    s.kernel = knet_step(s, y, scale, model, vars, t, observer);
    s.spectral = onet_step(s, y, scale, model, vars, t, observer);
    s.perturbation = snet_step(s, y, scale, model, vars, t, observer);
    stages.push_back({s.kernel, s.spectral, s.perturbation, ad::add(s.spectral, s.perturbation)});
  }
  return stages;
}

StateVars constant_state(ad::Tape& tape, const UnfoldState& state) {
  if (!state.spectral.same_shape(state.perturbation)) throw ShapeError("state: O and S differ in shape");
  return {tape.constant(state.kernel.to_tensor()), tape.constant(state.spectral.to_tensor()),
          tape.constant(state.perturbation.to_tensor())};
}

// ---- value-level API ---------------------------------------------------------

namespace {

Kernel to_kernel(const Tensor& t) { return Kernel(t.dim(0), t.data); }

}  // namespace

Kernel knet_step(const UnfoldState& state, const Cube& y, std::size_t scale, const KanoModel& model,
                 std::size_t stage) {
  ad::Tape tape;
  ModelVars vars = constant_model(model, tape);
  ad::Var out = knet_step(constant_state(tape, state), tape.constant(y.to_tensor()), scale, model, vars, stage);
  return to_kernel(out.value());
}

Cube onet_step(const UnfoldState& state, const Cube& y, std::size_t scale, const KanoModel& model,
               std::size_t stage) {
  ad::Tape tape;
  ModelVars vars = constant_model(model, tape);
  ad::Var out = onet_step(constant_state(tape, state), tape.constant(y.to_tensor()), scale, model, vars, stage);
  return Cube::from_tensor(out.value());
}

Cube snet_step(const UnfoldState& state, const Cube& y, std::size_t scale, const KanoModel& model,
               std::size_t stage) {
  ad::Tape tape;
  ModelVars vars = constant_model(model, tape);
  ad::Var out = snet_step(constant_state(tape, state), tape.constant(y.to_tensor()), scale, model, vars, stage);
  return Cube::from_tensor(out.value());
}

std::vector<StageResult> run_unfolding(const Cube& y, const KanoModel& model, std::size_t scale,
                                       std::size_t kernel_size) {
  return run_unfolding(y, model, scale, init_state(y, scale, kernel_size));
}

std::vector<StageResult> run_unfolding(const Cube& y, const KanoModel& model, std::size_t scale,
                                       const UnfoldState& init, const StepObserver& observer) {
  if (init.spectral.channels() != model.config().channels) {
    throw ShapeError("run_unfolding: channel count does not match model");
  }
  ad::Tape tape;
  ModelVars vars = constant_model(model, tape);
  auto stages = unfold(tape, tape.constant(y.to_tensor()), scale, model, vars, constant_state(tape, init), observer);
  std::vector<StageResult> out;
  for (const auto& s : stages) {
    out.push_back({to_kernel(s.kernel.value()), Cube::from_tensor(s.spectral.value()),
                   Cube::from_tensor(s.perturbation.value()), Cube::from_tensor(s.image.value())});
  }
  return out;
}

}  // namespace kano
