#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "koopman/config_json.hpp"
#include "koopman/experiments.hpp"

using namespace koopman;

TEST(Config, DefaultsMirrorLibraryDefaults) {
  auto c = parse_config(json{{"version", 1}});
  EXPECT_EQ(c.train.epochs_short, 200u);
  EXPECT_EQ(c.train.epochs_long, 300u);
  EXPECT_EQ(c.train.horizons.tau1, 5u);
  EXPECT_EQ(c.train.horizons.tau2, 100u);
  EXPECT_EQ(c.model.latent, 32u);
  EXPECT_EQ(c.split.t_train, 242u);
  EXPECT_EQ(c.split.t_val, 100u);
  EXPECT_EQ(c.assim.steps, 500u);
  EXPECT_EQ(c.cressman.radius, 3.0);
}

TEST(Config, UnknownKeyIsNamed) {
  try {
    parse_config(json{{"version", 1}, {"train", {{"epochs", 3}}}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train.epochs"), std::string::npos);
  }
  EXPECT_THROW(parse_config(json{{"version", 1}, {"trian", json::object()}}), ConfigError);
}

TEST(Config, VersionMismatch) {
  EXPECT_THROW(parse_config(json{{"version", 2}}), ConfigError);
}

TEST(Config, TypeErrorsAreConfigErrors) {
  EXPECT_THROW(parse_config(json{{"version", 1}, {"train", {{"lr", "fast"}}}}), ConfigError);
  EXPECT_THROW(parse_config(json{{"version", 1}, {"assim", {{"init", "random"}}}}), ConfigError);
  EXPECT_THROW(parse_config(json{{"version", 1}, {"synth", 3}}), ConfigError);
}

TEST(Config, RoundTripAndHash) {
  ExperimentConfig c;
  c.train.epochs_short = 7;
  c.train.weights.beta1 = 0.5;
  c.assim.init = InitStrategy::zero;
  c.model.hidden = {3, 4};
  c.cressman.radius = 2.5;
  c.synth.seed = 42;
  const auto back = parse_config(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(config_hash(back), config_hash(c));
  EXPECT_EQ(config_hash(c).size(), 16u);
  ExperimentConfig d = c;
  d.synth.seed = 43;
  EXPECT_NE(config_hash(d), config_hash(c));
}

TEST(Config, LoadFromFile) {
  const auto path = (std::filesystem::temp_directory_path() / "koopman_cfg_test.json").string();
  {
    std::ofstream out(path);
    out << R"({"version": 1, "split": {"t_train": 20, "t_val": 5}})";
  }
  auto c = load_config(path);
  EXPECT_EQ(c.split.t_train, 20u);
  {
    std::ofstream out(path);
    out << "{not json";
  }
  EXPECT_THROW(load_config(path), ConfigError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_config(path), ConfigError);
}

TEST(Reports, JsonShapes) {
  TrainReport r;
  r.curves["pred_0"] = {1.0, 0.5};
  auto j = to_json(r);
  EXPECT_TRUE(j["long_initial"].is_null());
  EXPECT_EQ(j["curves"]["pred_0"].size(), 2u);
  ForecastTable t;
  auto jt = to_json(t);
  ASSERT_EQ(jt["rows"].size(), 4u);
  EXPECT_EQ(jt["rows"][0]["method"], "prediction_from_t0");
  EXPECT_EQ(jt["rows"][3]["method"], "assimilation+cnn");
  SweepResult s{1.5, 0.1, {{1.0, 0.2}, {1.5, 0.1}}};
  EXPECT_EQ(to_json(s)["table"].size(), 2u);
  auto p = provenance(ExperimentConfig{});
  EXPECT_EQ(p["tool_version"], kToolVersion);
}
