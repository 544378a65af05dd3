// kano command-line front end.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "kano/config.hpp"
#include "kano/degradation.hpp"
#include "kano/io.hpp"
#include "kano/metrics.hpp"
#include "kano/training.hpp"
#include "kano/unfolding.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace kano;

namespace {

constexpr int kOk = 0;
constexpr int kRuntimeError = 1;
constexpr int kUsageError = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flat configs: a JSON object whose keys are long option names. Values fill
// options that were not given on the command line.
std::vector<std::string> merge_flat_config(CLI::App* sub, const std::vector<std::string>& args,
                                           const std::string& config_path) {
  const json j = load_json_file(config_path);
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  std::vector<std::string> extra;
  for (const auto& [key, value] : j.items()) {
    if (key == "config" || key == "print-config") throw ConfigError("config: key '" + key + "' is not allowed");
    CLI::Option* opt = sub->get_option_no_throw("--" + key);
    if (!opt) throw ConfigError("config: unknown key '" + key + "'");
    const bool given = std::any_of(args.begin(), args.end(), [&](const std::string& a) {
      return a == "--" + key || a.rfind("--" + key + "=", 0) == 0;
    });
    if (given) continue;
    if (value.is_boolean()) {
      if (opt->get_expected_min() != 0) throw ConfigError("config: key '" + key + "' expects a value");
      if (value.get<bool>()) extra.push_back("--" + key);
    } else if (value.is_string()) {
      extra.push_back("--" + key);
      extra.push_back(value.get<std::string>());
    } else if (value.is_number()) {
      extra.push_back("--" + key);
      extra.push_back(value.dump());
    } else {
      throw ConfigError("config: key '" + key + "' must be a string, number or boolean");
    }
  }
  return extra;
}

json resolved_flat(CLI::App* sub) {
  json j = json::object();
  for (const CLI::Option* opt : sub->get_options()) {
    const std::string name = opt->get_single_name();
    if (name.empty() || name == "help" || name == "help-all" || name == "config" || name == "print-config") continue;
    std::string v;
    if (opt->count() > 0) {
      v = opt->get_expected_min() == 0 ? "true" : opt->results().back();
    } else {
      v = opt->get_expected_min() == 0 ? "false" : opt->get_default_str();
    }
    try {
      j[name] = json::parse(v);
    } catch (const json::exception&) {
      j[name] = v;
    }
    if (j[name].is_string() && j[name].get<std::string>().empty()) j[name] = nullptr;
  }
  return j;
}

std::string log_csv(const std::vector<LogRow>& log) {
  std::string s = "step,loss,loss_K,loss_X,lr,seconds\n";
  for (const auto& r : log) {
    s += std::to_string(r.step) + "," + format_number(r.loss) + "," + format_number(r.loss_k) + "," +
         format_number(r.loss_x) + "," + format_number(r.lr) + "," + format_number(r.seconds) + "\n";
  }
  return s;
}

std::string diagnostics_csv(const std::vector<StageDiagnostics>& d) {
  std::string s = "stage,mse_O,mse_S,mse_X,kernel_mse\n";
  for (const auto& r : d) {
    s += std::to_string(r.stage) + "," + format_number(r.mse_o) + "," + format_number(r.mse_s) + "," +
         format_number(r.mse_x) + "," + format_number(r.kernel_mse) + "\n";
  }
  return s;
}

json holdout_json(const HoldoutScores& h) {
  return {{"psnr", h.psnr},
          {"psnr_bicubic", h.psnr_bicubic},
          {"kernel_mse", h.kernel_mse},
          {"kernel_mse_init", h.kernel_mse_init},
          {"count", h.count}};
}

json comparison_json(const BackboneComparison& c, const TrainConfig& config) {
  json curve = json::array();
  for (const auto& p : c.curve) {
    curve.push_back({{"step", p.step},
                     {"kan_kernel_mse", p.kan_kernel_mse},
                     {"mlp_kernel_mse", p.mlp_kernel_mse},
                     {"kan_loss", p.kan_loss},
                     {"mlp_loss", p.mlp_loss}});
  }
  const double ratio = static_cast<double>(c.mlp_knet_parameters) / static_cast<double>(c.kan_knet_parameters);
  return {{"schema", "kano-compare-backbones/1"},
          {"config", to_json(config)},
          {"parameters",
           {{"kan_knet", c.kan_knet_parameters},
            {"mlp_knet", c.mlp_knet_parameters},
            {"kan_total", c.kan_total_parameters},
            {"mlp_total", c.mlp_total_parameters},
            {"knet_ratio", ratio},
            {"matched", ratio >= 0.9 && ratio <= 1.1}}},
          {"curve", curve},
          {"final", {{"kan", holdout_json(c.kan_final)}, {"mlp", holdout_json(c.mlp_final)}}}};
}

std::string curve_csv(const BackboneComparison& c) {
  std::string s = "step,kan_kernel_mse,mlp_kernel_mse,kan_loss,mlp_loss\n";
  for (const auto& p : c.curve) {
    s += std::to_string(p.step) + "," + format_number(p.kan_kernel_mse) + "," + format_number(p.mlp_kernel_mse) +
         "," + format_number(p.kan_loss) + "," + format_number(p.mlp_loss) + "\n";
  }
  return s;
}

// Second moments of a kernel: centroid, covariance and the implied Gaussian
// parameters.
json kernel_report(const Kernel& k) {
  const std::size_t n = k.size();
  const double half = static_cast<double>(n / 2);
  double sum = 0.0, mn = k.values()[0], mx = k.values()[0], cx = 0.0, cy = 0.0;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      const double v = k.at(r, c);
      sum += v;
      mn = std::min(mn, v);
      mx = std::max(mx, v);
      cx += v * (static_cast<double>(c) - half);
      cy += v * (static_cast<double>(r) - half);
    }
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      const double v = k.at(r, c);
      const double dx = static_cast<double>(c) - half - cx, dy = static_cast<double>(r) - half - cy;
      sxx += v * dx * dx;
      syy += v * dy * dy;
      sxy += v * dx * dy;
    }
  const double tr = sxx + syy, det = sxx * syy - sxy * sxy;
  const double disc = std::sqrt(std::max(0.0, tr * tr / 4.0 - det));
  const double l1 = tr / 2.0 + disc, l2 = std::max(0.0, tr / 2.0 - disc);
  return {{"size", n},
          {"sum", sum},
          {"min", mn},
          {"max", mx},
          {"centroid", {cx, cy}},
          {"covariance", {{sxx, sxy}, {sxy, syy}}},
          {"sigma_major", std::sqrt(l1)},
          {"sigma_minor", std::sqrt(l2)},
          {"theta", 0.5 * std::atan2(2.0 * sxy, sxx - syy)}};
}

void write_text(const std::string& path, const std::string& text) { atomic_write(path, text); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kano: blind super-resolution by unfolded proximal gradient with KAN priors"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  // degrade
  auto* degrade = app.add_subcommand("degrade", "Blur, subsample and add noise to a cube or PNG");
  std::string d_in, d_out, d_kernel_out;
  DegradationSpec d_spec;
  std::size_t d_ksize = 0;
  degrade->add_option("--in", d_in, "Input image (.kanc or .png)")->required()->check(CLI::ExistingFile);
  degrade->add_option("--out", d_out, "Output observation (.kanc or .png)")->required();
  degrade->add_option("--kernel-out", d_kernel_out, "Ground-truth kernel CSV");
  degrade->add_option("--scale", d_spec.scale, "Downsampling factor")->capture_default_str()->check(CLI::PositiveNumber);
  degrade->add_option("--kernel-size", d_ksize, "Odd kernel size (0: by scale)")->capture_default_str();
  degrade->add_option("--sigma-x", d_spec.sigma_x, "Kernel std-dev along x")->capture_default_str();
  degrade->add_option("--sigma-y", d_spec.sigma_y, "Kernel std-dev along y")->capture_default_str();
  degrade->add_option("--theta", d_spec.theta, "Kernel rotation (radians)")->capture_default_str();
  degrade->add_option("--noise", d_spec.noise, "AWGN std-dev on [0,1] scale")->capture_default_str();
  degrade->add_option("--seed", d_spec.seed, "Noise seed")->capture_default_str();

  // train
  auto* trainc = app.add_subcommand("train", "Train a model on the procedural corpus");
  std::string t_out, t_log, t_backbone;
  std::size_t t_steps = 0, t_batch = 0, t_patch = 0, t_stages = 0, t_threads = 0, t_corpus = 0;
  std::uint64_t t_seed = 0;
  trainc->add_option("--out", t_out, "Checkpoint path")->required();
  trainc->add_option("--log", t_log, "Training log CSV");
  trainc->add_option("--steps", t_steps, "Optimizer steps");
  trainc->add_option("--batch", t_batch, "Batch size");
  trainc->add_option("--patch", t_patch, "High-resolution patch size");
  trainc->add_option("--stages", t_stages, "Unfolding stages");
  trainc->add_option("--corpus-size", t_corpus, "Number of procedural images");
  trainc->add_option("--seed", t_seed, "Seed");
  trainc->add_option("--threads", t_threads, "Worker threads (0: KANO_THREADS or all cores)");
  trainc->add_option("--backbone", t_backbone, "K-Net backbone")->check(CLI::IsMember({"kan", "mlp"}));

  // compare-backbones
  auto* compare = app.add_subcommand("compare-backbones", "Train KAN and MLP K-Nets side by side");
  std::string c_out, c_curve;
  std::size_t c_steps = 0, c_eval = 50, c_holdout = 8, c_corpus = 0;
  std::uint64_t c_seed = 0;
  compare->add_option("--out", c_out, "JSON report")->required();
  compare->add_option("--curve-out", c_curve, "Paired kernel-MSE curve CSV");
  compare->add_option("--steps", c_steps, "Optimizer steps per backbone");
  compare->add_option("--corpus-size", c_corpus, "Number of procedural images");
  compare->add_option("--eval-every", c_eval, "Curve sampling interval (steps)")->capture_default_str();
  compare->add_option("--holdout", c_holdout, "Held-out images")->capture_default_str();
  compare->add_option("--seed", c_seed, "Seed");

  // infer
  auto* infer = app.add_subcommand("infer", "Super-resolve an observation with a trained model");
  std::string i_model, i_in, i_out, i_stages, i_gt, i_gt_kernel, i_kernel_out;
  std::size_t i_scale = 0;
  infer->add_option("--model", i_model, "Checkpoint")->required()->check(CLI::ExistingFile);
  infer->add_option("--in", i_in, "Observation (.kanc or .png)")->required()->check(CLI::ExistingFile);
  infer->add_option("--out", i_out, "Super-resolved output (.kanc or .png)")->required();
  infer->add_option("--scale", i_scale, "Scale (0: from the checkpoint)")->capture_default_str();
  infer->add_option("--stages-out", i_stages, "Per-stage diagnostics CSV");
  infer->add_option("--kernel-out", i_kernel_out, "Estimated kernel CSV");
  infer->add_option("--gt", i_gt, "Ground-truth image for diagnostics")->check(CLI::ExistingFile);
  infer->add_option("--gt-kernel", i_gt_kernel, "Ground-truth kernel CSV for diagnostics")->check(CLI::ExistingFile);

  // eval
  auto* evalc = app.add_subcommand("eval", "Score a test image against a reference");
  std::string e_ref, e_test, e_out, e_band_out;
  std::size_t e_scale = 2;
  double e_peak = 1.0;
  evalc->add_option("--ref", e_ref, "Reference image")->required()->check(CLI::ExistingFile);
  evalc->add_option("--test", e_test, "Test image")->required()->check(CLI::ExistingFile);
  evalc->add_option("--scale", e_scale, "Scale used by ERGAS")->capture_default_str()->check(CLI::PositiveNumber);
  evalc->add_option("--peak", e_peak, "PSNR / SSIM peak value")->capture_default_str();
  evalc->add_option("--out", e_out, "Metric CSV");
  evalc->add_option("--band-rmse-out", e_band_out, "Per-band RMSE CSV");

  // inspect-kernel
  auto* inspect = app.add_subcommand("inspect-kernel", "Report moments of a kernel CSV or a model estimate");
  std::string k_kernel, k_model, k_in, k_ref, k_out;
  std::size_t k_scale = 0;
  inspect->add_option("--kernel", k_kernel, "Kernel CSV")->check(CLI::ExistingFile);
  inspect->add_option("--model", k_model, "Checkpoint (with --in)")->check(CLI::ExistingFile);
  inspect->add_option("--in", k_in, "Observation (with --model)")->check(CLI::ExistingFile);
  inspect->add_option("--scale", k_scale, "Scale (0: from the checkpoint)")->capture_default_str();
  inspect->add_option("--reference", k_ref, "Reference kernel CSV")->check(CLI::ExistingFile);
  inspect->add_option("--out", k_out, "JSON report");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Write a procedural corpus of (X, Y, K) triples");
  std::string g_dir;
  std::size_t g_n = 8, g_size = 64, g_channels = 3, g_scale = 2;
  std::uint64_t g_seed = 0;
  gen->add_option("--out-dir", g_dir, "Output directory")->required();
  gen->add_option("--n", g_n, "Number of pairs")->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--size", g_size, "Image size")->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--channels", g_channels, "Channels")->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--scale", g_scale, "Scale")->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--seed", g_seed, "Seed")->capture_default_str();

  std::vector<CLI::App*> subs{degrade, trainc, compare, infer, evalc, inspect, gen};
  std::vector<std::string> configs(subs.size());
  std::vector<bool> print_config(subs.size(), false);
  for (std::size_t i = 0; i < subs.size(); ++i) {
    subs[i]->add_option("--config", configs[i], "JSON config")->check(CLI::ExistingFile);
    subs[i]->add_flag("--print-config", [&print_config, i](std::int64_t) { print_config[i] = true; },
                      "Print the resolved configuration and exit");
  }

  // First pass collects --config; flat configs are merged into the argument
  // list before the real parse.
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    std::string cfg_path;
    for (std::size_t i = 0; i + 1 < args.size(); ++i) {
      if (args[i] == "--config") cfg_path = args[i + 1];
    }
    for (const auto& a : args)
      if (a.rfind("--config=", 0) == 0) cfg_path = a.substr(9);
    if (!cfg_path.empty() && !args.empty()) {
      for (CLI::App* s : {degrade, infer, evalc, inspect, gen}) {
        if (args[0] == s->get_name()) {
          auto extra = merge_flat_config(s, args, cfg_path);
          args.insert(args.end(), extra.begin(), extra.end());
        }
      }
    }
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsageError;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  }

  try {
    if (*degrade) {
      d_spec.kernel_size = d_ksize ? d_ksize : default_kernel_size(d_spec.scale);
      if (print_config[0]) {
        json j = resolved_flat(degrade);
        j["kernel-size"] = d_spec.kernel_size;
        std::cout << j.dump(2) << "\n";
        return kOk;
      }
      try {
        d_spec.validate();
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      const Cube x = read_image(d_in);
      const Degraded d = kano::degrade(x, d_spec);
      write_image(d_out, d.observation);
      if (!d_kernel_out.empty()) write_kernel_csv(d_kernel_out, d.kernel);
      std::cout << json{{"out", d_out}, {"spec", to_json(d_spec)}, {"shape", {d.observation.channels(), d.observation.height(), d.observation.width()}}}.dump() << "\n";
      return kOk;
    }

    if (*trainc || *compare) {
      const std::size_t idx = *trainc ? 1 : 2;
      TrainConfig config;
      if (!configs[idx].empty()) config = train_config_from_json(load_json_file(configs[idx]));
      if (*trainc) {
        if (t_steps || trainc->get_option("--steps")->count()) config.steps = t_steps;
        if (t_batch) config.batch = t_batch;
        if (t_patch) config.patch = t_patch;
        if (t_stages) {
          config.model.stages = t_stages;
          if (!config.alpha.empty() || !config.beta.empty()) {
            config.alpha.clear();
            config.beta.clear();
          }
        }
        if (t_corpus) config.corpus_size = t_corpus;
        if (trainc->get_option("--seed")->count()) config.seed = t_seed;
        if (trainc->get_option("--threads")->count()) config.threads = t_threads;
        if (!t_backbone.empty()) config.model.backbone = backbone_from_string(t_backbone);
      } else {
        if (compare->get_option("--steps")->count()) config.steps = c_steps;
        if (c_corpus) config.corpus_size = c_corpus;
        if (compare->get_option("--seed")->count()) config.seed = c_seed;
      }
      try {
        config.validate();
      } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("config: ") + e.what());
      }
      if (print_config[idx]) {
        std::cout << to_json(config).dump(2) << "\n";
        return kOk;
      }
      if (*trainc) {
        TrainResult r = train(config);
        save_checkpoint(t_out, r.model, config);
        if (!t_log.empty()) write_text(t_log, log_csv(r.log));
        const auto ema = loss_ema(r.log);
        std::cout << json{{"checkpoint", t_out},
                          {"steps", r.log.size()},
                          {"final_loss_ema", ema.empty() ? 0.0 : ema.back()},
                          {"parameters", r.model.parameter_count()}}
                         .dump()
                  << "\n";
      } else {
        if (c_eval == 0 || c_holdout == 0) throw UsageError("--eval-every and --holdout must be positive");
        const auto corpus = synth_dataset(config.corpus_size, config.data, config.image_size, config.model.channels, config.seed);
        const auto holdout = synth_dataset(c_holdout, config.data, config.image_size, config.model.channels,
                                           config.seed ^ 0x9e3779b97f4a7c15ULL);
        const BackboneComparison c = compare_backbones(config, corpus, holdout, c_eval);
        write_text(c_out, comparison_json(c, config).dump(2) + "\n");
        if (!c_curve.empty()) write_text(c_curve, curve_csv(c));
        std::cout << curve_csv(c);
      }
      return kOk;
    }

    if (*infer) {
      if (print_config[3]) {
        std::cout << resolved_flat(infer).dump(2) << "\n";
        return kOk;
      }
      const Checkpoint ck = load_checkpoint(i_model);
      const std::size_t scale = i_scale ? i_scale : ck.train.data.scale;
      const Cube y = read_image(i_in);
      if (y.channels() != ck.model.config().channels) {
        throw UsageError("input has " + std::to_string(y.channels()) + " channels, model expects " +
                         std::to_string(ck.model.config().channels));
      }
      const auto stages = run_unfolding(y, ck.model, scale, ck.model.config().kernel_size);
      write_image(i_out, stages.back().image);
      if (!i_kernel_out.empty()) write_kernel_csv(i_kernel_out, stages.back().kernel);
      if (!i_stages.empty()) {
        std::vector<StageDiagnostics> diag;
        if (!i_gt.empty()) {
          const Cube gt = read_image(i_gt);
          if (!gt.same_shape(stages.back().image)) throw UsageError("--gt shape does not match the output");
          Kernel gk;
          const bool has_k = !i_gt_kernel.empty();
          if (has_k) gk = read_kernel_csv(i_gt_kernel);
          diag = stage_diagnostics(stages, gt, has_k ? &gk : nullptr);
        } else {
          for (std::size_t t = 0; t < stages.size(); ++t) {
            diag.push_back({t + 1, std::nan(""), std::nan(""), std::nan(""), std::nan("")});
          }
        }
        write_text(i_stages, diagnostics_csv(diag));
      }
      std::cout << json{{"out", i_out}, {"stages", stages.size()}, {"scale", scale}}.dump() << "\n";
      return kOk;
    }

    if (*evalc) {
      if (print_config[4]) {
        std::cout << resolved_flat(evalc).dump(2) << "\n";
        return kOk;
      }
      const Cube ref = read_image(e_ref), test = read_image(e_test);
      if (!ref.same_shape(test)) throw UsageError("reference and test shapes differ");
      const MetricReport r = evaluate(ref, test, e_scale, e_peak);
      const std::string csv = metric_csv_header() + "\n" + metric_csv_row(r) + "\n";
      if (!e_out.empty()) write_text(e_out, csv);
      if (!e_band_out.empty()) {
        std::string s = "band,rmse\n";
        const auto m = mse_map(ref, test, MseAxis::Band);
        for (std::size_t b = 0; b < m.size(); ++b) s += std::to_string(b) + "," + format_number(std::sqrt(m[b])) + "\n";
        write_text(e_band_out, s);
      }
      std::cout << csv;
      return kOk;
    }

    if (*inspect) {
      if (print_config[5]) {
        std::cout << resolved_flat(inspect).dump(2) << "\n";
        return kOk;
      }
      Kernel k;
      if (!k_kernel.empty()) {
        if (!k_model.empty() || !k_in.empty()) throw UsageError("use either --kernel or --model with --in");
        k = read_kernel_csv(k_kernel);
      } else {
        if (k_model.empty() || k_in.empty()) throw UsageError("need --kernel, or --model together with --in");
        const Checkpoint ck = load_checkpoint(k_model);
        const std::size_t scale = k_scale ? k_scale : ck.train.data.scale;
        k = run_unfolding(read_image(k_in), ck.model, scale, ck.model.config().kernel_size).back().kernel;
      }
      json report = kernel_report(k);
      if (!k_ref.empty()) {
        const Kernel ref = read_kernel_csv(k_ref);
        if (ref.size() != k.size()) throw UsageError("reference kernel size differs");
        report["mse_vs_reference"] = kernel_mse(k, ref);
        report["reference"] = kernel_report(ref);
      }
      if (!k_out.empty()) write_text(k_out, report.dump(2) + "\n");
      std::cout << report.dump(2) << "\n";
      return kOk;
    }

    if (*gen) {
      if (print_config[6]) {
        std::cout << resolved_flat(gen).dump(2) << "\n";
        return kOk;
      }
      SpecDistribution dist;
      dist.scale = g_scale;
      dist.kernel_size = default_kernel_size(g_scale);
      if (g_size % g_scale != 0) throw UsageError("--size must be divisible by --scale");
      const auto pairs = synth_dataset(g_n, dist, g_size, g_channels, g_seed);
      fs::create_directories(g_dir);
      json manifest = {{"seed", g_seed}, {"distribution", to_json(dist)}, {"pairs", json::array()}};
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        char stem[32];
        std::snprintf(stem, sizeof(stem), "%04zu", i);
        const std::string xs = std::string("x_") + stem + ".kanc", ys = std::string("y_") + stem + ".kanc",
                          ks = std::string("k_") + stem + ".csv";
        write_cube(fs::path(g_dir) / xs, pairs[i].x_gt);
        write_cube(fs::path(g_dir) / ys, pairs[i].y);
        write_kernel_csv(fs::path(g_dir) / ks, pairs[i].k_gt);
        manifest["pairs"].push_back({{"x", xs}, {"y", ys}, {"kernel", ks}, {"spec", to_json(pairs[i].spec)}});
      }
      write_text((fs::path(g_dir) / "manifest.json").string(), manifest.dump(2) + "\n");
      std::cout << json{{"out_dir", g_dir}, {"pairs", pairs.size()}}.dump() << "\n";
      return kOk;
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kUsageError;
}
