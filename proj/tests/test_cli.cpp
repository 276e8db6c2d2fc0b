#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "koopman/koopman.hpp"

#ifndef KOOPMAN_CLI
#error "KOOPMAN_CLI must point to the CLI binary"
#endif

namespace fs = std::filesystem;
using namespace koopman;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("koopman_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    write_file("cfg.json", R"({
      "version": 1,
      "model_seed": 5,
      "synth": {"height": 4, "width": 4, "bands": 3, "frames": 40, "period": 12},
      "split": {"t_train": 30, "t_val": 9},
      "model": {"latent": 4, "hidden": [8]},
      "train": {"epochs_short": 1, "epochs_long": 1, "batch_pixels": 8, "tau1": 2, "tau2": 5},
      "assim": {"steps": 5},
      "cnn": {"epochs": 2, "batch_frames": 8}
    })");
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  void write_file(const std::string& name, const std::string& body) const {
    std::ofstream out(path(name), std::ios::binary);
    out << body;
  }

  std::string read_file(const std::string& name) const {
    std::ifstream in(path(name), std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  int run(const std::string& args) const {
    const std::string cmd = std::string(KOOPMAN_CLI) + " " + args + " >" + path("stdout.txt") + " 2>" +
                            path("stderr.txt");
    const int rc = std::system(cmd.c_str());
    return rc == 0 ? 0 : 1;
  }

  std::string cfg() const { return " --config " + path("cfg.json"); }

  void make_cube() const { ASSERT_EQ(run("synth" + cfg() + " --out " + path("cube.kts")), 0) << read_file("stderr.txt"); }

  void make_model() const {
    make_cube();
    ASSERT_EQ(run("train" + cfg() + " --cube " + path("cube.kts") + " --out " + path("model.kpm")), 0)
        << read_file("stderr.txt");
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, SynthIsDeterministic) {
  ASSERT_EQ(run("synth" + cfg() + " --seed 3 --out " + path("a.kts")), 0);
  ASSERT_EQ(run("synth" + cfg() + " --seed 3 --out " + path("b.kts")), 0);
  ASSERT_EQ(run("synth" + cfg() + " --seed 4 --out " + path("c.kts")), 0);
  EXPECT_EQ(read_file("a.kts"), read_file("b.kts"));
  EXPECT_NE(read_file("a.kts"), read_file("c.kts"));
  auto cube = load_cube(path("a.kts"));
  EXPECT_EQ(cube.frames(), 40u);
  EXPECT_EQ(cube.bands(), 3u);
}

TEST_F(Cli, SynthDrawMakesIrregularCube) {
  ASSERT_EQ(run("synth" + cfg() + " --draw 12 --draw-seed 1 --out " + path("d.kts")), 0);
  auto cube = load_cube(path("d.kts"));
  EXPECT_EQ(cube.frames(), 12u);
}

TEST_F(Cli, UnknownConfigKeyFails) {
  write_file("bad.json", R"({"version": 1, "train": {"epochz": 3}})");
  EXPECT_NE(run("synth --config " + path("bad.json") + " --out " + path("x.kts")), 0);
  EXPECT_NE(read_file("stderr.txt").find("train.epochz"), std::string::npos);
  EXPECT_FALSE(fs::exists(path("x.kts")));
}

TEST_F(Cli, CorruptCubeFails) {
  write_file("junk.kts", "KTS1 but not really");
  EXPECT_NE(run("predict --model nothing.kpm --cube " + path("junk.kts") + " --out " + path("p.kts")), 0);
  make_model();
  EXPECT_NE(run("predict --model " + path("model.kpm") + " --cube " + path("junk.kts") + " --out " + path("p.kts")), 0);
  EXPECT_NE(read_file("stderr.txt").find("error:"), std::string::npos);
}

TEST_F(Cli, MissingSubcommandFails) { EXPECT_NE(run(""), 0); }

TEST_F(Cli, ZeroEpochTrainWritesInitialModel) {
  make_cube();
  write_file("zero.json", R"({"version": 1, "model_seed": 5, "model": {"latent": 4, "hidden": [8]},
    "split": {"t_train": 30, "t_val": 9}, "train": {"epochs_short": 0, "epochs_long": 0}})");
  ASSERT_EQ(run("train --config " + path("zero.json") + " --cube " + path("cube.kts") + " --out " + path("m.kpm")), 0)
      << read_file("stderr.txt");
  ModelConfig mc{3, 4, {8}};
  auto init = KoopmanModel<float>::initialize(mc, 5);
  EXPECT_TRUE(ad::load_params(path("m.kpm")) == init.params());
  auto report = json::parse(read_file("m.kpm.report.json"));
  EXPECT_TRUE(report.contains("provenance"));
  EXPECT_TRUE(report["curves"].empty());
}

TEST_F(Cli, TrainPredictAssimilate) {
  make_model();
  auto report = json::parse(read_file("model.kpm.report.json"));
  EXPECT_EQ(report["curves"]["pred_0"].size(), 1u);
  EXPECT_EQ(report["provenance"]["tool_version"], kToolVersion);
  ASSERT_EQ(run("predict --model " + path("model.kpm") + " --cube " + path("cube.kts") + " --out " + path("p.kts")), 0);
  auto pred = load_cube(path("p.kts"));
  EXPECT_EQ(pred.frames(), 39u);
  EXPECT_EQ(pred.bands(), 6u);
  ASSERT_EQ(run("assimilate" + cfg() + " --model " + path("model.kpm") + " --cube " + path("cube.kts") + " --out " +
                path("a.kts")),
            0)
      << read_file("stderr.txt");
  auto j = json::parse(read_file("a.kts.json"));
  EXPECT_EQ(j["final_objective"].size(), 16u);
  EXPECT_EQ(load_cube(path("a.kts")).frames(), 39u);
}

TEST_F(Cli, EvaluateReportsFourRows) {
  make_model();
  ASSERT_EQ(run("evaluate" + cfg() + " --model " + path("model.kpm") + " --cube " + path("cube.kts") + " --out " +
                path("eval.json")),
            0)
      << read_file("stderr.txt");
  auto j = json::parse(read_file("eval.json"));
  ASSERT_EQ(j["rows"].size(), 4u);
  for (const auto& row : j["rows"]) EXPECT_TRUE(row["mse"].is_number());
  EXPECT_TRUE(j["baseline"].is_number());
  EXPECT_EQ(j["provenance"]["config_hash"].get<std::string>().size(), 16u);
}

TEST_F(Cli, InterpolateEmitsBothEngines) {
  make_model();
  ASSERT_EQ(run("interpolate" + cfg() + " --model " + path("model.kpm") + " --cube " + path("cube.kts") +
                " --keep-prob 0.5 --holdout-seed 2 --engine both --out " + path("i.json")),
            0)
      << read_file("stderr.txt");
  auto j = json::parse(read_file("i.json"));
  EXPECT_TRUE(j["assimilation"]["mse"].is_number());
  EXPECT_TRUE(j["cressman"]["best_mse"].is_number());
  EXPECT_EQ(j["cressman"]["table"].size(), 14u);
  EXPECT_EQ(j["kept"].get<int>() + j["removed"].get<int>(), 40);
  EXPECT_NE(run("interpolate" + cfg() + " --cube " + path("cube.kts") + " --engine assimilation --out " +
                path("i2.json")),
            0);
  EXPECT_NE(run("interpolate" + cfg() + " --cube " + path("cube.kts") + " --engine magic --out " + path("i3.json")), 0);
}

TEST_F(Cli, ReportWritesCompositesAndCurves) {
  make_model();
  ASSERT_EQ(run("report" + cfg() + " --cube " + path("cube.kts") + " --train-report " + path("model.kpm.report.json") +
                " --every 10 --out " + path("rep")),
            0)
      << read_file("stderr.txt");
  EXPECT_TRUE(fs::exists(dir_ / "rep" / "frame_1.ppm"));
  EXPECT_TRUE(fs::exists(dir_ / "rep" / "frame_31.ppm"));
  EXPECT_FALSE(fs::exists(dir_ / "rep" / "frame_2.ppm"));
  EXPECT_TRUE(fs::exists(dir_ / "rep" / "pca.json"));
  std::ifstream csv(dir_ / "rep" / "loss_curves.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "curve,epoch,value");
}
