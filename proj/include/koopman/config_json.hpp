#pragma once

// JSON experiment configuration (strict: unknown keys are errors) and report serialization.

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "json.hpp"
#include "koopman/assimilation.hpp"
#include "koopman/cressman.hpp"
#include "koopman/data_model.hpp"
#include "koopman/metrics.hpp"
#include "koopman/residual_cnn.hpp"
#include "koopman/trainer.hpp"

namespace koopman {

using json = nlohmann::json;

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kConfigVersion = 1;

struct ExperimentConfig {
  int version = kConfigVersion;
  SynthConfig synth;
  SplitSpec split;
  ModelConfig model;
  TrainConfig train;
  AssimOptions assim;
  ResidualTrainConfig cnn;
  CressmanConfig cressman;
  std::uint64_t model_seed = 1;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

namespace detail {

/// Reads known keys of one JSON object; anything left over is rejected by finish().
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <class V>
  void get(const char* key, V& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<V>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + where_ + "." + it.key() + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

inline std::string init_name(InitStrategy s) {
  switch (s) {
    case InitStrategy::zero: return "zero";
    case InitStrategy::encode_first: return "encode_first";
    default: return "auto";
  }
}

inline InitStrategy parse_init(const std::string& s) {
  if (s == "auto") return InitStrategy::automatic;
  if (s == "zero") return InitStrategy::zero;
  if (s == "encode_first") return InitStrategy::encode_first;
  throw ConfigError("assim.init: expected auto, zero or encode_first, got '" + s + "'");
}

}  // namespace detail

inline ExperimentConfig parse_config(const json& j) {
  ExperimentConfig c;
  detail::ObjectReader root(j, "config");
  root.get("version", c.version);
  if (c.version != kConfigVersion) {
    throw ConfigError("config version " + std::to_string(c.version) + " is not supported (expected " +
                      std::to_string(kConfigVersion) + ")");
  }
  root.get("model_seed", c.model_seed);
  if (const json* s = root.sub("synth")) {
    detail::ObjectReader r(*s, "synth");
    r.get("height", c.synth.height);
    r.get("width", c.synth.width);
    r.get("bands", c.synth.bands);
    r.get("frames", c.synth.frames);
    r.get("period", c.synth.period);
    r.get("noise_sd", c.synth.noise_sd);
    r.get("seed", c.synth.seed);
    r.get("library_seed", c.synth.library_seed);
    r.get("endmembers", c.synth.endmembers);
    r.get("amplitude_scale", c.synth.amplitude_scale);
    r.get("outlier_prob", c.synth.outlier_prob);
    r.finish();
  }
  if (const json* s = root.sub("split")) {
    detail::ObjectReader r(*s, "split");
    r.get("t_train", c.split.t_train);
    r.get("t_val", c.split.t_val);
    r.finish();
  }
  if (const json* s = root.sub("model")) {
    detail::ObjectReader r(*s, "model");
    r.get("bands", c.model.bands);
    r.get("latent", c.model.latent);
    r.get("hidden", c.model.hidden);
    r.finish();
  }
  if (const json* s = root.sub("train")) {
    detail::ObjectReader r(*s, "train");
    r.get("epochs_short", c.train.epochs_short);
    r.get("epochs_long", c.train.epochs_long);
    r.get("batch_pixels", c.train.batch_pixels);
    r.get("shard_pixels", c.train.shard_pixels);
    r.get("lr", c.train.lr);
    r.get("seed", c.train.seed);
    r.get("beta1", c.train.weights.beta1);
    r.get("beta2", c.train.weights.beta2);
    r.get("tau1", c.train.horizons.tau1);
    r.get("tau2", c.train.horizons.tau2);
    r.get("track_validation", c.train.track_validation);
    r.get("verbose", c.train.verbose);
    r.finish();
  }
  if (const json* s = root.sub("assim")) {
    detail::ObjectReader r(*s, "assim");
    std::string init = detail::init_name(c.assim.init);
    r.get("init", init);
    c.assim.init = detail::parse_init(init);
    r.get("steps", c.assim.steps);
    r.get("lr", c.assim.lr);
    r.get("max_halvings", c.assim.max_halvings);
    r.get("step_growth", c.assim.step_growth);
    r.finish();
  }
  if (const json* s = root.sub("cnn")) {
    detail::ObjectReader r(*s, "cnn");
    r.get("epochs", c.cnn.epochs);
    r.get("batch_frames", c.cnn.batch_frames);
    r.get("lr", c.cnn.lr);
    r.get("seed", c.cnn.seed);
    r.finish();
  }
  if (const json* s = root.sub("cressman")) {
    detail::ObjectReader r(*s, "cressman");
    r.get("radius", c.cressman.radius);
    r.finish();
  }
  root.finish();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

inline json to_json(const ExperimentConfig& c) {
  return {
      {"version", c.version},
      {"model_seed", c.model_seed},
      {"synth",
       {{"height", c.synth.height}, {"width", c.synth.width}, {"bands", c.synth.bands},
        {"frames", c.synth.frames}, {"period", c.synth.period}, {"noise_sd", c.synth.noise_sd},
        {"seed", c.synth.seed}, {"library_seed", c.synth.library_seed}, {"endmembers", c.synth.endmembers},
        {"amplitude_scale", c.synth.amplitude_scale}, {"outlier_prob", c.synth.outlier_prob}}},
      {"split", {{"t_train", c.split.t_train}, {"t_val", c.split.t_val}}},
      {"model", {{"bands", c.model.bands}, {"latent", c.model.latent}, {"hidden", c.model.hidden}}},
      {"train",
       {{"epochs_short", c.train.epochs_short}, {"epochs_long", c.train.epochs_long},
        {"batch_pixels", c.train.batch_pixels}, {"shard_pixels", c.train.shard_pixels}, {"lr", c.train.lr},
        {"seed", c.train.seed}, {"beta1", c.train.weights.beta1}, {"beta2", c.train.weights.beta2},
        {"tau1", c.train.horizons.tau1}, {"tau2", c.train.horizons.tau2},
        {"track_validation", c.train.track_validation}, {"verbose", c.train.verbose}}},
      {"assim",
       {{"init", detail::init_name(c.assim.init)}, {"steps", c.assim.steps}, {"lr", c.assim.lr},
        {"max_halvings", c.assim.max_halvings}, {"step_growth", c.assim.step_growth}}},
      {"cnn",
       {{"epochs", c.cnn.epochs}, {"batch_frames", c.cnn.batch_frames}, {"lr", c.cnn.lr}, {"seed", c.cnn.seed}}},
      {"cressman", {{"radius", c.cressman.radius}}},
  };
}

/// FNV-1a 64 of the canonical (sorted-key) dump, as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& c) {
  const std::string s = to_json(c).dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

inline json provenance(const ExperimentConfig& c) {
  return {{"tool_version", kToolVersion}, {"config_hash", config_hash(c)}};
}

inline json to_json(const MseReport& r) {
  return {{"overall", r.overall}, {"per_band", r.per_band}, {"per_frame", r.per_frame},
          {"frames", r.frames},   {"pixels", r.pixels},     {"bands", r.bands}};
}

inline json to_json(const TrainReport& r) {
  json curves = json::object();
  for (const auto& [k, v] : r.curves) curves[k] = v;
  json j{{"curves", curves}, {"wall_seconds", r.wall_seconds}};
  j["long_initial"] = std::isfinite(r.long_initial) ? json(r.long_initial) : json(nullptr);
  return j;
}

inline json to_json(const SweepResult& r) {
  json table = json::array();
  for (const auto& [radius, mse] : r.table) table.push_back({{"radius", radius}, {"mse", mse}});
  return {{"best_radius", r.best_radius}, {"best_mse", r.best_mse}, {"table", table}};
}

inline void write_json(const json& j, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << j.dump(2) << "\n";
  if (!out) throw Error("write to '" + path + "' failed");
}

}  // namespace koopman
