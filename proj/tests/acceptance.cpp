// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "kano/autodiff.hpp"
#include "kano/bspline.hpp"
#include "kano/conv.hpp"
#include "kano/degradation.hpp"
#include "kano/io.hpp"
#include "kano/metrics.hpp"
#include "kano/spline_kan.hpp"
#include "kano/training.hpp"
#include "kano/unfolding.hpp"
#include "test_support.hpp"

using namespace kano;
using namespace kano::testing;
using nlohmann::json;

namespace {

// FNV-1a over the bit patterns of every recorded value.
class Digest {
 public:
  void add(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int i = 0; i < 8; ++i) {
      h_ ^= (bits >> (8 * i)) & 0xff;
      h_ *= 0x100000001b3ULL;
    }
  }
  void add(std::span<const double> v) {
    for (double x : v) add(x);
  }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

// ---------------------------------------------------------------- 1
Verdict partition_of_unity(Digest& d) {
  std::mt19937_64 rng(101);
  double worst = 0.0;
  for (std::size_t degree = 1; degree <= 3; ++degree) {
    for (std::size_t intervals : {1u, 4u, 8u, 13u}) {
      SplineGrid g{-1.5, 2.0, intervals, degree};
      const auto knots = g.knots();
      std::uniform_real_distribution<double> u(g.lo, g.hi);
      for (int i = 0; i < 1000; ++i) {
        const auto b = bspline_basis(u(rng), knots, degree);
        double s = 0.0;
        for (double v : b) s += v;
        worst = std::max(worst, std::abs(s - 1.0));
        d.add(s);
      }
    }
  }
  return {worst <= 1e-9, "max |sum - 1| = " + fmt(worst)};
}

// ---------------------------------------------------------------- 2
// 0.05 grid widths keeps every active cubic basis value above ~2e-5, so
// coefficient gradients stay above the central-difference round-off.
double away_from_knots(std::mt19937_64& rng, const SplineGrid& g) {
  std::uniform_real_distribution<double> u(g.lo, g.hi);
  for (;;) {
    const double x = u(rng);
    const double r = std::remainder(x - g.lo, g.spacing());
    if (std::abs(r) > 0.05 * g.spacing()) return x;
  }
}

// Central difference on a single coordinate.
double central_diff(const ad::LossBuilder& loss, std::vector<Tensor> leaves, std::size_t leaf, std::size_t index,
                    double h, double* base = nullptr) {
  auto eval = [&](const std::vector<Tensor>& at) {
    ad::Tape t;
    std::vector<ad::Var> vars;
    for (const auto& x : at) vars.push_back(t.leaf(x));
    return t.forward(loss(t, vars));
  };
  if (base) *base = eval(leaves);
  const double x0 = leaves[leaf][index];
  leaves[leaf][index] = x0 + h;
  const double up = eval(leaves);
  leaves[leaf][index] = x0 - h;
  return (up - eval(leaves)) / (2.0 * h);
}

Verdict gradient_suite(Digest& d, std::vector<std::string>& notes) {
  std::mt19937_64 rng(202);
  const SplineGrid grid;
  std::vector<std::pair<std::string, double>> worst;
  auto check = [&](const std::string& name, const ad::LossBuilder& loss, const std::vector<Tensor>& leaves) {
    const auto r = ad::finite_diff_check(loss, leaves, 1e-6);
    if (r.max_rel_error > 1e-4) {
      // Re-measure the worst coordinate with larger steps and estimate the
      // round-off floor of the h = 1e-6 difference.
      double base = 0.0;
      const double n3 = central_diff(loss, leaves, r.leaf, r.index, 1e-3, &base);
      const double n2 = central_diff(loss, leaves, r.leaf, r.index, 1e-2);
      notes.push_back(name + ": worst coordinate (leaf " + std::to_string(r.leaf) + ", index " +
                      std::to_string(r.index) + ") analytic " + fmt(r.analytic) + ", h=1e-6 " + fmt(r.numeric) +
                      ", h=1e-3 " + fmt(n3) + ", h=1e-2 " + fmt(n2) + "; loss " + fmt(base) +
                      ", round-off floor of the h=1e-6 difference ~" + fmt(4.0 * 2.2e-16 * std::abs(base) / 2e-6));
    }
    return r;
  };
  auto record = [&](const std::string& name, const ad::FiniteDiffReport& r) {
    d.add(r.max_rel_error);
    for (auto& w : worst)
      if (w.first == name) {
        w.second = std::max(w.second, r.max_rel_error);
        return;
      }
    worst.emplace_back(name, r.max_rel_error);
  };

  for (int trial = 0; trial < 10; ++trial) {
    auto layer = KanLayer::random(1, 1, grid, rng);
    Tensor x({6});
    for (auto& v : x.data) v = away_from_knots(rng, grid);
    record("phi_eval", check("phi_eval", 
                           [&](ad::Tape&, const std::vector<ad::Var>& l) {
                             return ad::sum(ad::square(phi_eval(l[0], l[1], l[2], l[3], grid)));
                           },
                           {x, Tensor({grid.basis_count()}, layer.coefficients().data), Tensor::scalar(layer.base_weights()[0]),
                            Tensor::scalar(layer.spline_weights()[0])}));

    auto l3 = KanLayer::random(3, 2, grid, rng);
    Tensor xs({4, 3});
    for (auto& v : xs.data) v = away_from_knots(rng, grid);
    record("kan_layer_forward", check("kan_layer_forward", 
                                    [&](ad::Tape&, const std::vector<ad::Var>& l) {
                                      KanLayerVars v{l[1], l[2], l[3]};
                                      return ad::sum(ad::square(kan_layer_forward(l[0], l3, v)));
                                    },
                                    {xs, l3.coefficients(), l3.base_weights(), l3.spline_weights()}));
  }

  for (std::size_t s : {1u, 2u, 3u}) {
    for (int trial = 0; trial < 5; ++trial) {
      const auto w = random_tensor({2, 3, 3}, rng);
      record("conv_down", check("conv_down", 
                              [&](ad::Tape& t, const std::vector<ad::Var>& l) {
                                return ad::sum(ad::mul(ad::conv_down(l[0], l[1], s), t.constant(w)));
                              },
                              {random_tensor({2, 3 * s, 3 * s}, rng), random_tensor({3, 3}, rng)}));
      const auto wu = random_tensor({2, 3 * s, 3 * s}, rng);
      record("conv_up_transpose", check("conv_up_transpose", 
                                      [&](ad::Tape& t, const std::vector<ad::Var>& l) {
                                        return ad::sum(ad::mul(ad::conv_up_transpose(l[0], l[1], s), t.constant(wu)));
                                      },
                                      {random_tensor({2, 3, 3}, rng), random_tensor({3, 3}, rng)}));
    }
  }

  ModelConfig mc;
  mc.kernel_size = 3;
  mc.stages = 2;
  mc.seed = 17;
  KanoModel m(mc);
  {
    std::normal_distribution<double> n(0.0, 0.1);
    const auto params = m.parameters();
    for (std::size_t i = mc.stages * 3; i < params.size(); ++i)
      for (auto& v : params[i]->data) v += n(rng);
  }
  const auto y = random_cube(3, 8, 8, rng);
  const auto init = init_state(y, 2, 3);
  std::vector<Tensor> leaves;
  for (auto* p : std::as_const(m).parameters()) leaves.push_back(*p);
  const std::size_t nparams = leaves.size();
  leaves.push_back(random_tensor({3, 16, 16}, rng, -0.1, 0.1));
  record("snet_step", check("snet_step", 
                          [&](ad::Tape& t, const std::vector<ad::Var>& l) {
                            std::vector<ad::Var> p(l.begin(), l.begin() + static_cast<long>(nparams));
                            auto vars = view_model(m, p);
                            StateVars st{t.constant(init.kernel.to_tensor()), t.constant(init.spectral.to_tensor()), l.back()};
                            return ad::sum(ad::square(snet_step(st, t.constant(y.to_tensor()), 2, m, vars, 1)));
                          },
                          leaves));
  leaves.pop_back();
  const auto x_gt = random_cube(3, 16, 16, rng);
  record("pipeline T=2, 3x8x8", check("pipeline T=2", 
                                    [&](ad::Tape& t, const std::vector<ad::Var>& l) {
                                      auto vars = view_model(m, l);
                                      auto stages = unfold(t, t.constant(y.to_tensor()), 2, m, vars, constant_state(t, init));
                                      auto diff = ad::sub(stages.back().image, t.constant(x_gt.to_tensor()));
                                      return ad::add(ad::sum(ad::square(diff)), ad::sum(ad::square(stages.back().kernel)));
                                    },
                                    leaves));

  bool ok = true;
  std::string detail;
  for (const auto& [name, err] : worst) {
    ok = ok && err <= 1e-4;
    detail += (detail.empty() ? "" : ", ") + name + " " + fmt(err);
  }
  return {ok, "max rel error: " + detail};
}

// ---------------------------------------------------------------- 3
Verdict adjoint_identity(Digest& d) {
  std::mt19937_64 rng(303);
  double worst = 0.0;
  for (std::size_t k : {1u, 3u, 11u}) {
    for (std::size_t s : {1u, 2u, 3u, 4u}) {
      for (int t = 0; t < 10; ++t) {
        const auto x = random_cube(3, 24, 24, rng, -1.0, 1.0);
        const auto r = random_cube(3, 24 / s, 24 / s, rng, -1.0, 1.0);
        const auto kern = random_kernel(k, rng);
        const double lhs = dot(conv_down(x, kern, s).values(), r.values());
        const double rhs = dot(x.values(), conv_up_transpose(r, kern, s).values());
        const double scaled = std::abs(lhs - rhs) / (norm(x.values()) * norm(r.values()));
        worst = std::max(worst, scaled);
        d.add(lhs);
        d.add(rhs);
      }
    }
  }
  return {worst <= 1e-10, "max |<KX,R> - <X,K^T R>| / (|X||R|) = " + fmt(worst)};
}

// ---------------------------------------------------------------- 4
Verdict simplex_preservation(Digest& d) {
  std::mt19937_64 rng(404);
  double worst_sum = 0.0, worst_min = 0.0;
  for (auto b : {Backbone::Kan, Backbone::Mlp}) {
    ModelConfig mc;
    mc.backbone = b;
    mc.seed = 5;
    KanoModel m(mc);
    std::normal_distribution<double> n(0.0, 0.5);
    for (auto* p : m.parameters())
      for (auto& v : p->data) v += n(rng);
    for (int trial = 0; trial < 500; ++trial) {
      UnfoldState st{random_kernel(11, rng), random_cube(3, 16, 16, rng, -1.0, 2.0), random_cube(3, 16, 16, rng, -0.5, 0.5)};
      const auto y = random_cube(3, 8, 8, rng, -1.0, 2.0);
      const auto k = knet_step(st, y, 2, m, static_cast<std::size_t>(trial) % mc.stages);
      double s = 0.0, mn = k.values()[0];
      for (double v : k.values()) {
        s += v;
        mn = std::min(mn, v);
      }
      worst_sum = std::max(worst_sum, std::abs(s - 1.0));
      worst_min = std::min(worst_min, mn);
      d.add(k.values());
    }
  }
  return {worst_min >= 0.0 && worst_sum <= 1e-9,
          "1000 trials, min entry " + fmt(worst_min) + ", max |sum - 1| = " + fmt(worst_sum)};
}

// ---------------------------------------------------------------- 5
Verdict kan_expressivity(Digest& d) {
  std::mt19937_64 rng(505);
  const SplineGrid grid{-1.0, 1.0, 8, 3};
  auto layer = KanLayer::random(1, 1, grid, rng);
  Tensor x({256, 1}), target({256, 1});
  for (std::size_t i = 0; i < 256; ++i) {
    x[i] = -1.0 + 2.0 * static_cast<double>(i) / 255.0;
    target[i] = std::sin(std::numbers::pi * x[i]);
  }
  std::vector<Tensor*> params;
  layer.append_parameters(params);
  AdamState state;
  AdamConfig cfg;
  const double lr = 0.02;
  double mse = 0.0;
  for (std::size_t step = 1; step <= 500; ++step) {
    ad::Tape tape;
    auto vars = bind(layer, tape);
    auto out = kan_layer_forward(tape.constant(x), layer, vars);
    auto loss = ad::mean(ad::square(ad::sub(out, tape.constant(target))));
    mse = tape.forward(loss);
    tape.backward(loss);
    adam_step(params, {vars.coefficients.grad(), vars.base_weights.grad(), vars.spline_weights.grad()}, state, step, cfg, lr);
  }
  double se = 0.0;
  for (std::size_t i = 0; i < 256; ++i) {
    const double fit = kan_layer_forward(std::vector<double>{x[i]}, layer)[0];
    se += (fit - target[i]) * (fit - target[i]);
  }
  const double rmse = std::sqrt(se / 256.0);
  d.add(rmse);
  d.add(mse);
  return {rmse < 0.05, "RMSE after 500 Adam steps (lr 0.02) = " + fmt(rmse)};
}

// ---------------------------------------------------------------- 6
Verdict degradation_identity(Digest& d) {
  std::mt19937_64 rng(606);
  const auto x = random_cube(3, 20, 20, rng);
  const auto y = degrade(x, DegradationSpec{1, 1, 1.0, 1.0, 0.0, 0.0, 0}).observation;
  const double id_err = max_abs_diff(y.values(), x.values());
  double worst = 0.0;
  const std::size_t scales[] = {1, 2, 3, 4};
  const std::size_t sizes[] = {1, 3, 5, 7, 11};
  for (int i = 0; i < 20; ++i) {
    const std::size_t s = scales[i % 4], k = sizes[i % 5];
    const auto xi = random_cube(1 + i % 3, 12, 12, rng);
    const auto kern = random_kernel(k, rng);
    const auto fast = conv_down(xi, kern, s);
    worst = std::max(worst, max_abs_diff(fast.values(), naive_conv_down(xi, kern, s).values()));
    d.add(fast.values());
  }
  d.add(id_err);
  return {id_err <= 1e-12 && worst <= 1e-12,
          "identity |Y - X|inf = " + fmt(id_err) + ", oracle max diff = " + fmt(worst)};
}

// ---------------------------------------------------------------- 7
Verdict metric_oracles(Digest& d) {
  std::mt19937_64 rng(707);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const auto a = random_cube(3, 16, 16, rng, 0.05, 1.0), b = random_cube(3, 16, 16, rng, 0.05, 1.0);
    const auto r = evaluate(a, b, 2);
    const double diffs[] = {r.psnr - naive_psnr(a, b), r.ssim - naive_ssim(a, b), r.sam - naive_sam(a, b),
                            r.rmse - naive_rmse(a, b), r.ergas - naive_ergas(a, b, 2), r.cc - naive_cc(a, b)};
    for (double v : diffs) worst = std::max(worst, std::abs(v));
    d.add(r.psnr);
    d.add(r.ssim);
    d.add(r.sam);
    d.add(r.rmse);
    d.add(r.ergas);
    d.add(r.cc);
  }
  const auto a = random_cube(3, 16, 16, rng);
  const bool inf_ok = psnr(a, a) == kInfinitePsnr && std::isinf(kInfinitePsnr) && kInfinitePsnr > 0;
  const bool ssim_ok = ssim(a, a) == 1.0;
  return {worst <= 1e-6 && inf_ok && ssim_ok, "max oracle diff " + fmt(worst) + ", psnr(A,A) " +
                                                  format_number(psnr(a, a)) + ", ssim(A,A) " + fmt(ssim(a, a))};
}

// ---------------------------------------------------------------- 8
struct ToyRun {
  double ema50 = 0.0;
  double ema_end = 0.0;
  HoldoutScores scores;
  double seconds = 0.0;
};

ToyRun toy_run(std::uint64_t seed, Digest& d) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainConfig c;  // 64 images of 3x64x64, scale 2, T=4, 2000 steps, batch 4
  c.seed = seed;
  const auto r = train(c);
  const auto ema = loss_ema(r.log);
  const auto holdout = synth_dataset(8, c.data, c.image_size, c.model.channels, seed ^ 0x9e3779b97f4a7c15ULL);
  ToyRun out;
  out.ema50 = ema.at(49);
  out.ema_end = ema.back();
  out.scores = evaluate_holdout(r.model, holdout);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& row : r.log) d.add(row.loss);
  for (const auto* p : std::as_const(r.model).parameters()) d.add(p->data);
  d.add(out.scores.psnr);
  d.add(out.scores.kernel_mse);
  return out;
}

Verdict toy_training(Digest& d, std::uint64_t& seed0, std::vector<std::string>& notes) {
  std::vector<ToyRun> runs;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Digest own;
    runs.push_back(toy_run(seed, own));
    d.add(static_cast<double>(own.value()));
    if (seed == 0) seed0 = own.value();
    const auto& r = runs.back();
    notes.push_back("seed " + std::to_string(seed) + ": loss EMA " + fmt(r.ema50) + " -> " + fmt(r.ema_end) +
                    " (ratio " + fmt(r.ema_end / r.ema50) + "), PSNR " + fmt(r.scores.psnr) + " vs bicubic " +
                    fmt(r.scores.psnr_bicubic) + ", kernel MSE " + fmt(r.scores.kernel_mse) + " vs init " +
                    fmt(r.scores.kernel_mse_init) + ", " + fmt(r.seconds) + " s");
  }
  std::vector<double> gains;
  for (const auto& r : runs) gains.push_back(r.scores.psnr - r.scores.psnr_bicubic);
  std::sort(gains.begin(), gains.end());
  const double median_gain = gains[1];
  const auto& s0 = runs[0];
  const bool a = s0.ema_end < 0.5 * s0.ema50;
  const bool b = median_gain >= 0.5;
  const bool c = s0.scores.kernel_mse < 0.5 * s0.scores.kernel_mse_init;
  double total = 0.0;
  for (const auto& r : runs) total += r.seconds;
  std::string detail = std::string("(a) ") + (a ? "pass" : "FAIL") + " EMA ratio " + fmt(s0.ema_end / s0.ema50) +
                       " (need < 0.5); (b) " + (b ? "pass" : "FAIL") + " median PSNR gain " + fmt(median_gain) +
                       " dB (need >= 0.5); (c) " + (c ? "pass" : "FAIL") + " kernel MSE ratio " +
                       fmt(s0.scores.kernel_mse / s0.scores.kernel_mse_init) + " (need < 0.5); " + fmt(total) + " s" +
                       (total <= 1200.0 ? "" : " (over the 1200 s budget)");
  if (!a)
    notes.push_back(
        "(a): the stage networks start as near-identity residual corrections, so step 50 already scores close to the "
        "bicubic-like initial estimate; halving the L1 loss would need a gain of about 6 dB.");
  if (!c) {
    std::string ratios;
    for (const auto& r : runs) ratios += (ratios.empty() ? "" : ", ") + fmt(r.scores.kernel_mse / r.scores.kernel_mse_init);
    notes.push_back("(c): final/initial kernel MSE per seed " + ratios +
                    ". With the default stage weights the image term outweighs the kernel term by about two orders "
                    "of magnitude, so the kernel estimate wanders around the separable initial guess instead of "
                    "converging. See README for the weight experiment.");
  }
  return {a && b && c && total <= 1200.0, detail};
}

// ---------------------------------------------------------------- 9
Verdict fixed_point(Digest& d) {
  std::mt19937_64 rng(909);
  ModelConfig mc;
  mc.stages = 4;
  KanoModel m(mc);
  m.make_pass_through();
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t w = 0; w < 3; ++w) m.set_gamma(t, w, 0.0);
  const auto x_star = random_cube(3, 32, 32, rng);
  const auto k_star = gaussian_kernel(11, 2.1, 1.2, 0.6);
  const auto y = conv_down(x_star, k_star, 2);
  const auto stages = run_unfolding(y, m, 2, UnfoldState{k_star, x_star, Cube(3, 32, 32)});
  bool exact = stages.size() == 4;
  for (const auto& s : stages) {
    exact = exact && s.image == x_star;
    d.add(s.image.values());
  }
  return {exact, exact ? "X(t) == X* bit for bit, t = 1..4" : "iterate drifted from X*"};
}

// ---------------------------------------------------------------- 11
Verdict backbone_harness(std::vector<std::string>& notes) {
  const auto dir = std::filesystem::temp_directory_path() / "kano_acceptance";
  std::filesystem::create_directories(dir);
  const auto report = dir / "compare.json", curve = dir / "curve.csv";
  std::filesystem::remove(report);
  const std::string cmd = std::string(KANO_CLI_PATH) + " compare-backbones --steps 100 --eval-every 25 --holdout 4 --out " +
                          report.string() + " --curve-out " + curve.string() + " > /dev/null";
  const int status = std::system(cmd.c_str());
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) return {false, "compare-backbones exited abnormally"};

  std::vector<std::string> errors;
  json j;
  try {
    j = json::parse(read_file(report));
  } catch (const std::exception& e) {
    return {false, std::string("unreadable report: ") + e.what()};
  }
  auto need = [&](bool ok, const std::string& what) {
    if (!ok) errors.push_back(what);
  };
  need(j.value("schema", "") == "kano-compare-backbones/1", "schema tag");
  need(j.contains("config") && j["config"].is_object(), "config object");
  const auto& p = j["parameters"];
  for (const char* key : {"kan_knet", "mlp_knet", "kan_total", "mlp_total"})
    need(p.contains(key) && p[key].is_number_unsigned() && p[key].get<std::size_t>() > 0, std::string("parameters.") + key);
  double ratio = 0.0;
  if (p.contains("knet_ratio") && p["knet_ratio"].is_number()) ratio = p["knet_ratio"].get<double>();
  need(ratio >= 0.9 && ratio <= 1.1, "matched K-Net parameter counts");
  need(p.value("matched", false), "matched flag");
  const auto& c = j["curve"];
  need(c.is_array() && c.size() == 5, "curve has steps 0,25,...,100");
  std::size_t expected = 0;
  for (const auto& pt : c) {
    need(pt.value("step", std::size_t{999}) == expected, "curve step " + std::to_string(expected));
    for (const char* key : {"kan_kernel_mse", "mlp_kernel_mse", "kan_loss", "mlp_loss"})
      need(pt.contains(key) && pt[key].is_number() && std::isfinite(pt[key].get<double>()), std::string("curve.") + key);
    expected += 25;
  }
  for (const char* side : {"kan", "mlp"}) {
    need(j.contains("final") && j["final"].contains(side) && j["final"][side].is_object(), std::string("final.") + side);
  }
  const auto csv = read_file(curve);
  need(std::count(csv.begin(), csv.end(), '\n') == 6, "curve CSV rows");
  if (errors.empty() && c.is_array() && !c.empty()) {
    notes.push_back("compare-backbones (100 steps): final held-out kernel MSE KAN " +
                    fmt(c.back()["kan_kernel_mse"].get<double>()) + ", MLP " + fmt(c.back()["mlp_kernel_mse"].get<double>()) +
                    ", K-Net parameters " + std::to_string(p["kan_knet"].get<std::size_t>()) + " vs " +
                    std::to_string(p["mlp_knet"].get<std::size_t>()));
  }
  std::string detail = "schema valid, K-Net parameter ratio " + fmt(ratio);
  if (!errors.empty()) {
    detail = "schema errors:";
    for (const auto& e : errors) detail += " " + e + ";";
  }
  return {errors.empty(), detail};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;  // 0: no runtime bound
  std::function<Verdict(Digest&)> run;
};

}  // namespace

// Optional arguments restrict the run to the listed criterion numbers.
int main(int argc, char** argv) {
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
  auto wanted = [&only](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
  std::vector<std::string> notes;
  std::uint64_t seed0 = 0;
  const std::vector<Criterion> criteria{
      {1, "B-spline partition of unity", 1.0, partition_of_unity},
      {2, "gradient suite", 60.0, [&notes](Digest& d) { return gradient_suite(d, notes); }},
      {3, "adjoint identity", 5.0, adjoint_identity},
      {4, "simplex preservation", 10.0, simplex_preservation},
      {5, "KAN expressivity", 10.0, kan_expressivity},
      {6, "degradation identity", 5.0, degradation_identity},
      {7, "metric oracles", 10.0, metric_oracles},
      {8, "toy end-to-end training", 0.0, [&](Digest& d) { return toy_training(d, seed0, notes); }},
      {9, "fixed point", 2.0, fixed_point},
  };

  int failures = 0;
  auto report = [&failures](int id, const std::string& name, const Verdict& v) {
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << v.detail << std::endl;
    if (!v.pass) ++failures;
  };

  std::vector<std::uint64_t> digests(criteria.size());
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto& c = criteria[i];
    if (!wanted(c.id)) continue;
    Digest d;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v = c.run(d);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0.0) {
      v.detail += "; " + fmt(secs) + " s";
      if (secs >= c.budget_s) {
        v.pass = false;
        v.detail += " (over the " + fmt(c.budget_s) + " s budget)";
      }
    }
    digests[i] = d.value();
    report(c.id, c.name, v);
  }

  // Determinism: every criterion again with the same seeds. Criterion 8 is
  // repeated for seed 0 only.
  if (wanted(10)) {
    const std::size_t kept_notes = notes.size();
    std::vector<int> mismatched;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
      if (criteria[i].id == 8) continue;
      Digest first;
      if (!wanted(criteria[i].id)) {
        criteria[i].run(first);
        digests[i] = first.value();
      }
      Digest d;
      criteria[i].run(d);
      if (d.value() != digests[i]) mismatched.push_back(criteria[i].id);
    }
    if (!wanted(8)) {
      Digest first;
      toy_run(0, first);
      seed0 = first.value();
    }
    Digest again;
    toy_run(0, again);
    if (again.value() != seed0) mismatched.push_back(8);
    std::string detail = "digests of criteria 1-7 and 9 and of the seed-0 training run ";
    if (mismatched.empty()) {
      detail += "are bit-identical";
    } else {
      detail += "differ for criteria";
      for (int id : mismatched) detail += " " + std::to_string(id);
    }
    notes.resize(kept_notes);
    report(10, "determinism", {mismatched.empty(), detail});
  }

  if (wanted(11)) report(11, "backbone comparison harness", backbone_harness(notes));

  for (const auto& n : notes) std::cout << "  note: " << n << "\n";
  const std::string scope = only.empty() ? "" : " (subset)";
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << scope << std::endl;
  return failures == 0 ? 0 : 1;
}
