#include "kano/config.hpp"

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <string_view>

using nlohmann::json;

namespace kano {

namespace {

void require_object(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
}

void check_keys(const json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
  require_object(j, where);
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

std::string path(const std::string& where, const char* key) {
  return where.empty() ? std::string(key) : where + "." + key;
}

void read(const json& j, const char* key, std::size_t& out, const std::string& where) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_number_unsigned()) {
    throw ConfigError(path(where, key) + ": expected a non-negative integer");
  }
  out = v.get<std::size_t>();
}

void read(const json& j, const char* key, std::uint64_t& out, const std::string& where, int) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_number_unsigned()) throw ConfigError(path(where, key) + ": expected a non-negative integer");
  out = v.get<std::uint64_t>();
}

void read(const json& j, const char* key, double& out, const std::string& where) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_number()) throw ConfigError(path(where, key) + ": expected a number");
  out = v.get<double>();
  if (!std::isfinite(out)) throw ConfigError(path(where, key) + ": must be finite");
}

void read(const json& j, const char* key, std::vector<double>& out, const std::string& where) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_array()) throw ConfigError(path(where, key) + ": expected an array of numbers");
  out.clear();
  for (const auto& e : v) {
    if (!e.is_number()) throw ConfigError(path(where, key) + ": expected an array of numbers");
    out.push_back(e.get<double>());
  }
}

template <class T, class F>
T validated(T value, F&& check, const std::string& where) {
  try {
    check(value);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return value;
}

}  // namespace

json to_json(const SplineGrid& g) {
  return {{"lo", g.lo}, {"hi", g.hi}, {"intervals", g.intervals}, {"degree", g.degree}};
}

json to_json(const ModelConfig& c) {
  return {{"channels", c.channels}, {"kernel_size", c.kernel_size}, {"stages", c.stages},
          {"backbone", to_string(c.backbone)}, {"grid", to_json(c.grid)}, {"gamma_init", c.gamma_init},
          {"seed", c.seed}};
}

json to_json(const SpecDistribution& d) {
  return {{"scale", d.scale},         {"kernel_size", d.kernel_size}, {"sigma_min", d.sigma_min},
          {"sigma_max", d.sigma_max}, {"theta_min", d.theta_min},     {"theta_max", d.theta_max},
          {"noise_max", d.noise_max}};
}

json to_json(const AdamConfig& a) {
  return {{"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}};
}

json to_json(const TrainConfig& c) {
  return {{"model", to_json(c.model)},
          {"data", to_json(c.data)},
          {"adam", to_json(c.adam)},
          {"corpus_size", c.corpus_size},
          {"image_size", c.image_size},
          {"patch", c.patch},
          {"batch", c.batch},
          {"steps", c.steps},
          {"alpha", c.kernel_weights()},
          {"beta", c.image_weights()},
          {"seed", c.seed},
          {"threads", c.threads}};
}

json to_json(const DegradationSpec& s) {
  return {{"scale", s.scale},     {"kernel_size", s.kernel_size}, {"sigma_x", s.sigma_x}, {"sigma_y", s.sigma_y},
          {"theta", s.theta},     {"noise", s.noise},             {"seed", s.seed}};
}

SplineGrid grid_from_json(const json& j, SplineGrid g) {
  const std::string w = "grid";
  check_keys(j, {"lo", "hi", "intervals", "degree"}, w);
  read(j, "lo", g.lo, w);
  read(j, "hi", g.hi, w);
  read(j, "intervals", g.intervals, w);
  read(j, "degree", g.degree, w);
  return validated(g, [](const SplineGrid& v) { v.validate(); }, w);
}

ModelConfig model_config_from_json(const json& j, ModelConfig c) {
  const std::string w = "model";
  check_keys(j, {"channels", "kernel_size", "stages", "backbone", "grid", "gamma_init", "seed"}, w);
  read(j, "channels", c.channels, w);
  read(j, "kernel_size", c.kernel_size, w);
  read(j, "stages", c.stages, w);
  if (j.contains("backbone")) {
    if (!j.at("backbone").is_string()) throw ConfigError("model.backbone: expected \"kan\" or \"mlp\"");
    try {
      c.backbone = backbone_from_string(j.at("backbone").get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("model.backbone: ") + e.what());
    }
  }
  if (j.contains("grid")) c.grid = grid_from_json(j.at("grid"), c.grid);
  read(j, "gamma_init", c.gamma_init, w);
  read(j, "seed", c.seed, w, 0);
  return validated(c, [](const ModelConfig& v) { v.validate(); }, w);
}

SpecDistribution distribution_from_json(const json& j, SpecDistribution d) {
  const std::string w = "data";
  check_keys(j, {"scale", "kernel_size", "sigma_min", "sigma_max", "theta_min", "theta_max", "noise_max"}, w);
  read(j, "scale", d.scale, w);
  read(j, "kernel_size", d.kernel_size, w);
  read(j, "sigma_min", d.sigma_min, w);
  read(j, "sigma_max", d.sigma_max, w);
  read(j, "theta_min", d.theta_min, w);
  read(j, "theta_max", d.theta_max, w);
  read(j, "noise_max", d.noise_max, w);
  return validated(d, [](const SpecDistribution& v) { v.validate(); }, w);
}

AdamConfig adam_from_json(const json& j, AdamConfig a) {
  const std::string w = "adam";
  check_keys(j, {"lr", "beta1", "beta2", "eps"}, w);
  read(j, "lr", a.lr, w);
  read(j, "beta1", a.beta1, w);
  read(j, "beta2", a.beta2, w);
  read(j, "eps", a.eps, w);
  if (!(a.lr > 0.0) || !(a.beta1 >= 0.0 && a.beta1 < 1.0) || !(a.beta2 >= 0.0 && a.beta2 < 1.0) || !(a.eps > 0.0)) {
    throw ConfigError("adam: need lr > 0, 0 <= beta < 1, eps > 0");
  }
  return a;
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  const std::string w;
  check_keys(j, {"model", "data", "adam", "corpus_size", "image_size", "patch", "batch", "steps", "alpha", "beta",
                 "seed", "threads"},
             "config");
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"), c.model);
  if (j.contains("data")) c.data = distribution_from_json(j.at("data"), c.data);
  if (j.contains("adam")) c.adam = adam_from_json(j.at("adam"), c.adam);
  read(j, "corpus_size", c.corpus_size, w);
  read(j, "image_size", c.image_size, w);
  read(j, "patch", c.patch, w);
  read(j, "batch", c.batch, w);
  read(j, "steps", c.steps, w);
  read(j, "alpha", c.alpha, w);
  read(j, "beta", c.beta, w);
  read(j, "seed", c.seed, w, 0);
  read(j, "threads", c.threads, w);
  return validated(c, [](const TrainConfig& v) { v.validate(); }, "config");
}

DegradationSpec degradation_from_json(const json& j, DegradationSpec s) {
  const std::string w = "degradation";
  check_keys(j, {"scale", "kernel_size", "sigma_x", "sigma_y", "theta", "noise", "seed"}, w);
  read(j, "scale", s.scale, w);
  read(j, "kernel_size", s.kernel_size, w);
  read(j, "sigma_x", s.sigma_x, w);
  read(j, "sigma_y", s.sigma_y, w);
  read(j, "theta", s.theta, w);
  read(j, "noise", s.noise, w);
  read(j, "seed", s.seed, w, 0);
  return validated(s, [](const DegradationSpec& v) { v.validate(); }, w);
}

json load_json_file(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config file '" + file + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + file + "' is not valid JSON: " + e.what());
  }
}

}  // namespace kano
