// koopman: command-line driver for synthesis, training, forecasting, assimilation and evaluation.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "koopman/koopman.hpp"

namespace fs = std::filesystem;
using namespace koopman;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  int threads = 1;
  std::string out;
};

ExperimentConfig load_or_default(const Common& c) {
  return c.config.empty() ? ExperimentConfig{} : load_config(c.config);
}

void add_common(CLI::App* cmd, Common& c, bool out_required = true) {
  cmd->add_option("--config", c.config, "JSON experiment config");
  cmd->add_option("--seed", c.seed, "seed override");
  cmd->add_option("--threads", c.threads, "worker threads (1 = bit-reproducible)")->check(CLI::PositiveNumber);
  auto* o = cmd->add_option("--out", c.out, "output path");
  if (out_required) o->required();
}

void require_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw DivergenceError(what + " is not finite");
}

KoopmanModel<float> load_model(const std::string& path) {
  auto params = ad::load_params(path);
  const auto cfg = KoopmanModel<float>::infer_config(params);
  return KoopmanModel<float>::from_params(cfg, std::move(params));
}

int cmd_synth(const Common& c, std::size_t draw, std::uint64_t draw_seed) {
  auto cfg = load_or_default(c);
  if (c.seed) cfg.synth.seed = *c.seed;
  SeriesCube cube = synth_generate(cfg.synth);
  if (draw > 0) cube = draw_frames(cube, draw, draw_seed);
  save_cube(cube, c.out);
  std::cout << "wrote " << c.out << " (" << cube.frames() << " frames, " << cube.height() << "x" << cube.width()
            << "x" << cube.bands() << (cube.regular() ? ", regular" : ", irregular") << ")\n";
  return 0;
}

int cmd_train(const Common& c, const std::string& cube_path, const std::string& report_path) {
  auto cfg = load_or_default(c);
  if (c.seed) {
    cfg.train.seed = *c.seed;
    cfg.model_seed = *c.seed;
  }
  cfg.train.threads = c.threads;
  const SeriesCube cube = load_cube(cube_path);
  if (!cube.regular()) throw PreconditionError("train: cube must be regular");
  cfg.model.bands = cube.bands();
  auto [tr, va] = split(cube, cfg.split);
  auto model = KoopmanModel<float>::initialize(cfg.model, cfg.model_seed);
  const auto report = train(model, tr, va, cfg.train);
  ad::save_params(model.params(), c.out);
  json j = to_json(report);
  j["provenance"] = provenance(cfg);
  j["config"] = to_json(cfg);
  const std::string rp = report_path.empty() ? c.out + ".report.json" : report_path;
  write_json(j, rp);
  std::cout << "wrote " << c.out << "\nreport " << rp << "\n";
  return 0;
}

int cmd_predict(const Common& c, const std::string& model_path, const std::string& cube_path, std::size_t steps) {
  const auto model = load_model(model_path);
  const SeriesCube cube = load_cube(cube_path);
  if (steps == 0) steps = cube.frames() - 1;
  const SeriesCube pred = predict_from_first(model, cube, steps, c.threads);
  for (float v : pred.data()) require_finite(v, "prediction");
  save_cube(pred, c.out);
  std::cout << "wrote " << c.out << " (" << pred.frames() << " augmented frames)\n";
  return 0;
}

int cmd_assimilate(const Common& c, const std::string& model_path, const std::string& cube_path,
                   std::uint32_t until) {
  auto cfg = load_or_default(c);
  const auto model = load_model(model_path);
  const SeriesCube cube = load_cube(cube_path);
  if (cube.empty()) throw NoDataError("assimilate: cube has no frames");
  if (until == 0) until = cube.timestamps().back();
  std::vector<std::uint32_t> q;
  for (std::uint32_t t = cube.timestamps().front() + 1; t <= until; ++t) q.push_back(t);
  const auto res = interpolate_by_assimilation(model, cube, q, cfg.assim, c.threads);
  for (double v : res.final_objective) require_finite(v, "assimilation objective");
  save_cube(res.frames, c.out);
  json j{{"provenance", provenance(cfg)},
         {"origin", res.origin},
         {"forecast", c.out},
         {"final_objective", res.final_objective},
         {"latent", res.latent}};
  write_json(j, c.out + ".json");
  std::cout << "wrote " << c.out << " and " << c.out << ".json\n";
  return 0;
}

int cmd_interpolate(const Common& c, const std::string& model_path, const std::string& cube_path,
                    double keep_prob, std::uint64_t holdout_seed, const std::string& engine) {
  auto cfg = load_or_default(c);
  const SeriesCube cube = load_cube(cube_path);
  auto part = subsample_irregular(cube, keep_prob, c.seed.value_or(holdout_seed));
  if (part.removed.empty()) throw EmptyDrawError("interpolate: holdout draw removed no frame");
  json j{{"provenance", provenance(cfg)}, {"kept", part.kept.frames()}, {"removed", part.removed.frames()}};
  if (engine == "cressman" || engine == "both") {
    const auto sweep = radius_sweep(part.kept, part.removed);
    require_finite(sweep.best_mse, "cressman mse");
    j["cressman"] = to_json(sweep);
  }
  if (engine == "assimilation" || engine == "both") {
    if (model_path.empty()) throw PreconditionError("interpolate: --model is required for assimilation");
    const auto model = load_model(model_path);
    const auto est = interpolate_by_assimilation(model, part.kept, part.removed.timestamps(), cfg.assim, c.threads);
    const double m = mse_cubes(est.frames, part.removed).overall;
    require_finite(m, "assimilation mse");
    j["assimilation"] = {{"mse", m}, {"origin", est.origin}};
  }
  write_json(j, c.out);
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_evaluate(const Common& c, const std::string& model_path, const std::string& cube_path) {
  auto cfg = load_or_default(c);
  if (c.seed) cfg.cnn.seed = *c.seed;
  const auto model = load_model(model_path);
  const SeriesCube cube = load_cube(cube_path);
  const auto table = forecast_table(model, cube, cfg, c.threads);
  for (double v : {table.prediction, table.prediction_cnn, table.assimilation, table.assimilation_cnn}) {
    require_finite(v, "evaluation mse");
  }
  json j = to_json(table);
  j["provenance"] = provenance(cfg);
  write_json(j, c.out);
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_report(const Common& c, const std::string& cube_path, const std::string& report_path, std::size_t every,
               bool augmented) {
  auto cfg = load_or_default(c);
  fs::create_directories(c.out);
  std::size_t written = 0;
  if (!cube_path.empty()) {
    SeriesCube cube = load_cube(cube_path);
    if (augmented) cube = band_channels(cube);
    const auto pca = pca3_composite(cube);
    for (std::size_t t = 0; t < cube.frames(); t += std::max<std::size_t>(every, 1)) {
      const auto path = (fs::path(c.out) / ("frame_" + std::to_string(cube.timestamps()[t]) + ".ppm")).string();
      write_ppm(path, cube.height(), cube.width(), pca.images[t]);
      ++written;
    }
    json j{{"provenance", provenance(cfg)}, {"components", pca.components}, {"explained", pca.explained},
           {"mean", pca.mean}, {"lo", pca.lo}, {"hi", pca.hi}};
    write_json(j, (fs::path(c.out) / "pca.json").string());
  }
  if (!report_path.empty()) {
    std::ifstream in(report_path);
    if (!in) throw Error("cannot open report '" + report_path + "'");
    json rep = json::parse(in);
    const auto& curves = rep.at("curves");
    std::ofstream csv(fs::path(c.out) / "loss_curves.csv");
    csv << "curve,epoch,value\n";
    for (auto it = curves.begin(); it != curves.end(); ++it) {
      std::size_t e = 1;
      for (const auto& v : it.value()) csv << it.key() << "," << e++ << "," << (v.is_null() ? "" : v.dump()) << "\n";
    }
  }
  std::cout << "wrote " << written << " composites to " << c.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Koopman latent-linear surrogate of multiband pixel time series"};
  app.require_subcommand(1);

  Common c;
  std::string cube_path, model_path, report_path, engine = "both";
  std::size_t steps = 0, draw = 0, every = 10;
  std::uint64_t draw_seed = 0, holdout_seed = 0;
  std::uint32_t until = 0;
  double keep_prob = 0.5;
  bool augmented = false;

  auto* synth = app.add_subcommand("synth", "generate a synthetic cube (KTS1)");
  add_common(synth, c);
  synth->add_option("--draw", draw, "keep this many randomly drawn frames (irregular cube)");
  synth->add_option("--draw-seed", draw_seed, "seed of the frame draw");

  auto* trn = app.add_subcommand("train", "two-stage training; writes a KPM1 checkpoint and a JSON report");
  add_common(trn, c);
  trn->add_option("--cube", cube_path, "regular KTS1 cube")->required();
  trn->add_option("--report", report_path, "report path (default <out>.report.json)");

  auto* pred = app.add_subcommand("predict", "forecast every pixel from its first augmented state");
  add_common(pred, c);
  pred->add_option("--model", model_path)->required();
  pred->add_option("--cube", cube_path)->required();
  pred->add_option("--steps", steps, "forecast length (default T-1)");

  auto* asim = app.add_subcommand("assimilate", "fit z1 per pixel to all frames of a cube, then forecast");
  add_common(asim, c);
  asim->add_option("--model", model_path)->required();
  asim->add_option("--cube", cube_path)->required();
  asim->add_option("--until", until, "last forecast timestamp (default last frame)");

  auto* interp = app.add_subcommand("interpolate", "holdout interpolation: Cressman sweep and/or assimilation");
  add_common(interp, c);
  interp->add_option("--model", model_path);
  interp->add_option("--cube", cube_path)->required();
  interp->add_option("--keep-prob", keep_prob)->check(CLI::Range(0.0, 1.0));
  interp->add_option("--holdout-seed", holdout_seed);
  interp->add_option("--engine", engine)->check(CLI::IsMember({"cressman", "assimilation", "both"}));

  auto* eval = app.add_subcommand("evaluate", "four-row forecasting table (JSON)");
  add_common(eval, c);
  eval->add_option("--model", model_path)->required();
  eval->add_option("--cube", cube_path)->required();

  auto* rep = app.add_subcommand("report", "PCA composites (PPM) and loss-curve CSV");
  add_common(rep, c);
  rep->add_option("--cube", cube_path);
  rep->add_option("--train-report", report_path);
  rep->add_option("--every", every, "write every n-th frame");
  rep->add_flag("--augmented", augmented, "cube holds 2L-channel predictions; use the band half");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*synth) return cmd_synth(c, draw, draw_seed);
    if (*trn) return cmd_train(c, cube_path, report_path);
    if (*pred) return cmd_predict(c, model_path, cube_path, steps);
    if (*asim) return cmd_assimilate(c, model_path, cube_path, until);
    if (*interp) return cmd_interpolate(c, model_path, cube_path, keep_prob, holdout_seed, engine);
    if (*eval) return cmd_evaluate(c, model_path, cube_path);
    if (*rep) return cmd_report(c, cube_path, report_path, every, augmented);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
