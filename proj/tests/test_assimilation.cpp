#include <gtest/gtest.h>

#include <cmath>

#include "koopman/assimilation.hpp"

using namespace koopman;

namespace {

ModelConfig tiny() {
  ModelConfig c;
  c.bands = 2;
  c.latent = 4;
  c.hidden = {6, 5};
  return c;
}

// nonzero biases: with all-zero biases z = 0 is a stationary point of every decoder
KoopmanModel<double> tiny_model(std::uint64_t seed = 1) {
  auto m = KoopmanModel<double>::initialize(tiny(), seed, 0.05);
  Rng rng(seed);
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    if (m.params().name(i).back() == 'b') {
      for (auto& v : m.params().value(i).data) v = uniform(rng, 0.05, 0.2);
    }
  }
  return m;
}

std::vector<float> to_float(const std::vector<double>& v) { return {v.begin(), v.end()}; }

// observations generated by the model itself from a latent code
std::vector<Observation> model_observations(const KoopmanModel<double>& m, const std::vector<double>& z,
                                            const std::vector<std::size_t>& times, bool bands_only = false) {
  auto states = forecast_from_latent(m, z, times);
  std::vector<Observation> out;
  for (std::size_t i = 0; i < times.size(); ++i) {
    Observation o{times[i], states[i]};
    if (bands_only) o.values.resize(2);
    out.push_back(o);
  }
  return out;
}

// direct oracle of the objective from forecasts
double oracle_objective(const KoopmanModel<double>& m, const std::vector<double>& z,
                        const std::vector<Observation>& obs) {
  const auto rows = m.rollout_latent(z, obs.back().t);
  double s = 0;
  for (const auto& o : obs) {
    for (std::size_t c = 0; c < o.values.size(); ++c) {
      const double d = rows(static_cast<Eigen::Index>(o.t - 1), static_cast<Eigen::Index>(c)) - o.values[c];
      s += d * d;
    }
  }
  return s;
}

}  // namespace

TEST(Assimilation, SingleObservationZeroStepsIsEncoding) {
  auto m = tiny_model();
  std::vector<double> y{0.3, 0.6, 0.01, -0.02};
  AssimProblem p{{Observation{1, to_float(y)}}, AssimOptions{InitStrategy::encode_first, 0}};
  auto res = assimilate(m, p);
  std::vector<double> yf(p.observations[0].values.begin(), p.observations[0].values.end());
  EXPECT_EQ(res.z1_star, m.encode(yf));
  EXPECT_EQ(res.iterations, 0u);
  EXPECT_EQ(res.init_used, InitStrategy::encode_first);
  auto f = forecast_from_latent(m, res.z1_star, {1, 4});
  auto p4 = m.predict(yf, 3);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(f[1][c], p4[c], 1e-6);
}

TEST(Assimilation, AutomaticInitChoice) {
  auto m = tiny_model();
  AssimOptions o{InitStrategy::automatic, 0};
  AssimProblem full{{Observation{1, {0.1f, 0.2f, 0.f, 0.f}}}, o};
  EXPECT_EQ(assimilate(m, full).init_used, InitStrategy::encode_first);
  AssimProblem bands{{Observation{1, {0.1f, 0.2f}}}, o};
  auto r = assimilate(m, bands);
  EXPECT_EQ(r.init_used, InitStrategy::zero);
  EXPECT_EQ(r.z1_star, std::vector<double>(4, 0.0));
  AssimProblem late{{Observation{2, {0.1f, 0.2f, 0.f, 0.f}}}, o};
  EXPECT_EQ(assimilate(m, late).init_used, InitStrategy::zero);
  AssimProblem bad{{Observation{1, {0.1f, 0.2f}}}, AssimOptions{InitStrategy::encode_first, 0}};
  EXPECT_THROW(assimilate(m, bad), PreconditionError);
}

TEST(Assimilation, ObjectiveMatchesOracleAndTape) {
  auto m = tiny_model(2);
  std::vector<double> ztrue{0.2, -0.1, 0.4, 0.05};
  auto obs = model_observations(m, ztrue, {1, 3, 4, 9});
  for (auto& o : obs) {
    for (auto& v : o.values) v += 0.01f;
  }
  obs[1].values.resize(2);
  AssimProblem p{obs, {}};
  Assimilator<double> a(m, p);
  std::vector<double> z{0.1, 0.1, -0.2, 0.3};
  const double oracle = oracle_objective(m, z, obs);
  EXPECT_NEAR(a.objective(z), oracle, 1e-12 * oracle);
  EXPECT_NEAR(a.value_and_grad(z).first, oracle, 1e-12 * oracle);
}

TEST(Assimilation, GradientMatchesFiniteDifferences) {
  auto m = tiny_model(3);
  auto obs = model_observations(m, {0.2, -0.1, 0.4, 0.05}, {1, 2, 5, 7, 12});
  obs[2].values.resize(2);
  for (auto& o : obs) o.values[0] += 0.05f;
  AssimProblem p{obs, {}};
  Assimilator<double> a(m, p);
  std::vector<double> z{0.1, 0.1, -0.2, 0.3};
  auto [f, g] = a.value_and_grad(z);
  const double eps = 1e-6;
  for (std::size_t c = 0; c < z.size(); ++c) {
    auto up = z, dn = z;
    up[c] += eps;
    dn[c] -= eps;
    const double fd = (a.objective(up) - a.objective(dn)) / (2 * eps);
    EXPECT_LT(std::abs(fd - g[c]) / std::max(1e-12, std::abs(fd) + std::abs(g[c])), 1e-5) << c;
  }
}

TEST(Assimilation, ObjectiveNeverIncreases) {
  auto m = tiny_model(4);
  auto obs = model_observations(m, {0.5, -0.3, 0.1, 0.2}, {1, 2, 3, 6, 10});
  for (auto& o : obs) o.values[1] += 0.02f;
  AssimProblem p{obs, AssimOptions{InitStrategy::zero, 200}};
  auto res = assimilate(m, p);
  ASSERT_GE(res.objective.size(), 2u);
  for (std::size_t i = 1; i < res.objective.size(); ++i) EXPECT_LT(res.objective[i], res.objective[i - 1]);
  EXPECT_EQ(res.objective.back(), res.final_objective);
  EXPECT_EQ(res.objective.size(), res.iterations + 1);
}

TEST(Assimilation, ModelParametersStayFrozen) {
  auto m = tiny_model(5);
  const auto before = m.params();
  auto obs = model_observations(m, {0.5, -0.3, 0.1, 0.2}, {1, 4});
  assimilate(m, AssimProblem{obs, AssimOptions{InitStrategy::zero, 50}});
  EXPECT_TRUE(m.params() == before);
}

TEST(Assimilation, RecoversModelGeneratedTrajectory) {
  auto m = tiny_model(6);
  std::vector<double> ztrue{0.3, -0.2, 0.25, 0.1};
  auto obs = model_observations(m, ztrue, {1, 2, 3, 5, 8, 13});
  AssimProblem p{obs, AssimOptions{InitStrategy::zero, 5000}};
  auto res = assimilate(m, p);
  EXPECT_LT(res.final_objective, 1e-10);
  auto est = forecast_from_latent(m, res.z1_star, {20});
  auto truth = forecast_from_latent(m, ztrue, {20});
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(est[0][c], truth[0][c], 1e-4);
}

TEST(Assimilation, ObjectiveIsMonotoneInTheObservationSet) {
  auto m = tiny_model(7);
  auto all = model_observations(m, {0.1, 0.2, 0.3, 0.4}, {1, 2, 4, 7, 9});
  for (auto& o : all) o.values[0] += 0.1f;
  std::vector<Observation> sub{all[0], all[2], all[4]};
  AssimProblem ap{all, {}}, sp{sub, {}};
  Assimilator<double> a_all(m, ap);
  Assimilator<double> a_sub(m, sp);
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> z(4);
    for (auto& v : z) v = uniform(rng, -1.0, 1.0);
    EXPECT_LE(a_sub.objective(z), a_all.objective(z));
  }
}

TEST(Assimilation, BandOnlyObservationsIgnoreDerivativeChannels) {
  auto m = tiny_model(8);
  auto full = model_observations(m, {0.1, 0.2, 0.3, 0.4}, {1, 3});
  full[1].values[2] += 5.f;
  full[1].values[3] -= 5.f;
  auto bands = full;
  bands[1].values.resize(2);
  std::vector<double> z{0.0, 0.1, 0.0, 0.1};
  AssimProblem pf{full, {}}, pb{bands, {}};
  const auto rows = m.rollout_latent(z, 3);
  const double d2 = rows(2, 2) - full[1].values[2];
  const double d3 = rows(2, 3) - full[1].values[3];
  EXPECT_NEAR(Assimilator<double>(m, pf).objective(z) - Assimilator<double>(m, pb).objective(z), d2 * d2 + d3 * d3,
              1e-9);
}

TEST(Assimilation, ValidatesObservations) {
  auto m = tiny_model();
  EXPECT_THROW(assimilate(m, AssimProblem{}), PreconditionError);
  EXPECT_THROW(assimilate(m, AssimProblem{{Observation{0, {0.f, 0.f}}}, {}}), PreconditionError);
  EXPECT_THROW(assimilate(m, AssimProblem{{Observation{2, {0.f, 0.f}}, Observation{2, {0.f, 0.f}}}, {}}),
               PreconditionError);
  EXPECT_THROW(assimilate(m, AssimProblem{{Observation{1, {0.f, 0.f, 0.f}}}, {}}), ShapeError);
}

TEST(Forecast, FirstHorizonIsDecodedLatent) {
  auto m = tiny_model(9);
  std::vector<double> z{0.1, -0.4, 0.2, 0.3};
  auto f = forecast_from_latent(m, z, {1});
  auto d = m.decode(z);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(f[0][c], d[c], 1e-6);
  EXPECT_THROW(forecast_from_latent(m, z, {0}), PreconditionError);
  EXPECT_TRUE(forecast_from_latent(m, z, {}).empty());
}

TEST(Origin, Rule) {
  EXPECT_EQ(assimilation_origin({5, 6, 9}, {}), 5u);
  EXPECT_EQ(assimilation_origin({5, 7, 8}, {}), 4u);
  EXPECT_EQ(assimilation_origin({5}, {}), 4u);
  EXPECT_EQ(assimilation_origin({5, 6}, {3}), 2u);
  EXPECT_EQ(assimilation_origin({5, 6}, {7, 100}), 5u);
  EXPECT_THROW(assimilation_origin({}, {}), NoDataError);
  EXPECT_THROW(assimilation_origin({0, 2}, {}), PreconditionError);
  EXPECT_THROW(assimilation_origin({3, 4}, {0}), PreconditionError);
}

TEST(Origin, PixelObservations) {
  std::vector<float> data;
  for (float t : {5.f, 6.f, 9.f, 10.f}) {
    data.push_back(t);
    data.push_back(-t);
  }
  SeriesCube c(1, 1, 2, {5, 6, 9, 10}, data);
  auto obs = pixel_observations(c, 0, 5);
  ASSERT_EQ(obs.size(), 3u);
  EXPECT_EQ(obs[0].t, 1u);
  EXPECT_EQ(obs[0].values, (std::vector<float>{6.f, -6.f, 1.f, -1.f}));
  EXPECT_EQ(obs[1].t, 4u);
  EXPECT_EQ(obs[1].values, (std::vector<float>{9.f, -9.f}));
  EXPECT_EQ(obs[2].t, 5u);
  EXPECT_EQ(obs[2].values.size(), 4u);
  auto earlier = pixel_observations(c, 0, 4);
  EXPECT_EQ(earlier.front().t, 1u);
  EXPECT_EQ(earlier.front().values.size(), 2u);
}

TEST(Interpolation, RecoversModelGeneratedCube) {
  auto m = tiny_model(10);
  // two pixels, frames generated from known latents at timestamps 1..12
  // (bands-only fits have local minima; these latents sit in the basin of zero)
  std::vector<std::vector<double>> zs{{0.2, 0.1, -0.1, 0.3}, {-0.1, 0.2, 0.1, 0.05}};
  std::vector<std::uint32_t> ts;
  for (std::uint32_t t = 1; t <= 12; ++t) ts.push_back(t);
  std::vector<std::size_t> horizons;
  for (std::size_t t = 1; t <= 12; ++t) horizons.push_back(t);
  std::vector<float> data(12 * 2 * 2);
  for (std::size_t i = 0; i < 2; ++i) {
    auto st = forecast_from_latent(m, zs[i], horizons);
    for (std::size_t t = 0; t < 12; ++t) {
      data[(t * 2 + i) * 2] = st[t][0];
      data[(t * 2 + i) * 2 + 1] = st[t][1];
    }
  }
  // no two kept frames are consecutive: every observation is bands only, origin 0
  SeriesCube full(1, 2, 2, ts, data);
  auto kept = full.select(std::vector<std::size_t>{0, 2, 4, 6, 9, 11});
  auto removed = full.select(std::vector<std::size_t>{1, 5, 8});
  auto out = interpolate_by_assimilation(m, kept, removed.timestamps(), AssimOptions{InitStrategy::zero, 3000}, 2);
  EXPECT_EQ(out.origin, 0u);
  EXPECT_EQ(out.frames.bands(), 4u);
  EXPECT_EQ(out.frames.timestamps(), removed.timestamps());
  for (std::size_t f = 0; f < removed.frames(); ++f) {
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(out.frames.pixel(f, i)[c], removed.pixel(f, i)[c], 1e-3);
    }
  }
}

TEST(Interpolation, BandMismatchIsShapeError) {
  auto m = tiny_model();
  SeriesCube c(1, 1, 3, {1, 2}, std::vector<float>(6, 0.f));
  EXPECT_THROW(interpolate_by_assimilation(m, c, {3}, AssimOptions{}), ShapeError);
}
