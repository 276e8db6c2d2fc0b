#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "koopman/cressman.hpp"

using namespace koopman;

namespace {

double interp1(const std::vector<std::pair<double, double>>& s, double q, double r) {
  std::vector<TimedSample> ts;
  for (auto [t, v] : s) ts.push_back({t, {v}});
  return cressman_interpolate(ts, {q}, CressmanConfig{r})[0][0];
}

// direct, unshifted evaluation of the weighted mean
double direct(const std::vector<std::pair<double, double>>& s, double q, double r) {
  double num = 0, den = 0;
  for (auto [t, v] : s) {
    const double w = std::exp(-(q - t) * (q - t) / (2 * r * r));
    num += w * v;
    den += w;
  }
  return num / den;
}

SeriesCube smooth_cube(std::uint64_t seed, double noise) {
  SynthConfig s;
  s.height = 4;
  s.width = 4;
  s.bands = 3;
  s.frames = 120;
  s.noise_sd = noise;
  s.seed = seed;
  return synth_generate(s);
}

}  // namespace

TEST(Cressman, SingleSample) { EXPECT_DOUBLE_EQ(interp1({{10, 0.4}}, 10, 3.0), 0.4); }

TEST(Cressman, SymmetricPairGivesMean) {
  for (double r : {0.3, 1.0, 3.0, 50.0}) EXPECT_DOUBLE_EQ(interp1({{0, 0.0}, {4, 1.0}}, 2, r), 0.5);
}

TEST(Cressman, HandOracle) {
  EXPECT_NEAR(interp1({{0, 0.0}, {6, 1.0}}, 0, 3.0), std::exp(-2.0) / (1 + std::exp(-2.0)), 1e-15);
  EXPECT_NEAR(interp1({{0, 0.0}, {6, 1.0}}, 0, 3.0), 0.11920, 1e-5);
}

TEST(Cressman, MatchesDirectWeightedMean) {
  Rng rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::pair<double, double>> s(1 + trial % 9);
    for (auto& [t, v] : s) {
      t = uniform(rng, 0.0, 50.0);
      v = uniform(rng, -1.0, 1.0);
    }
    const double q = uniform(rng, -5.0, 55.0);
    const double r = uniform(rng, 2.0, 10.0);
    const double want = direct(s, q, r);
    EXPECT_NEAR(interp1(s, q, r), want, 1e-12 * std::max(1e-300, std::abs(want)) + 1e-15);
  }
}

TEST(Cressman, FarQueryDoesNotUnderflow) {
  const double v = interp1({{0, 0.2}, {1, 0.6}}, 1e4, 0.5);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(v, 0.6, 1e-12);
}

TEST(Cressman, ConvexCombination) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<TimedSample> s(5);
    for (auto& x : s) {
      x.t = uniform(rng, 0.0, 30.0);
      x.values = {uniform(rng, -2.0, 2.0), uniform(rng, 0.0, 1.0)};
    }
    const double q = uniform(rng, -10.0, 40.0);
    const auto out = cressman_interpolate(s, {q}, CressmanConfig{uniform(rng, 0.5, 7.0)})[0];
    for (std::size_t c = 0; c < 2; ++c) {
      double lo = 1e9, hi = -1e9;
      for (const auto& x : s) {
        lo = std::min(lo, x.values[c]);
        hi = std::max(hi, x.values[c]);
      }
      EXPECT_GE(out[c], lo - 1e-12);
      EXPECT_LE(out[c], hi + 1e-12);
    }
  }
}

TEST(Cressman, TranslationInvariance) {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::pair<double, double>> s(4), shifted;
    for (auto& [t, v] : s) {
      t = std::floor(uniform(rng, 0.0, 40.0));
      v = uniform(rng, 0.0, 1.0);
    }
    const double q = std::floor(uniform(rng, 0.0, 40.0));
    const double d = std::floor(uniform(rng, -100.0, 100.0));
    for (auto [t, v] : s) shifted.emplace_back(t + d, v);
    EXPECT_NEAR(interp1(s, q, 2.5), interp1(shifted, q + d, 2.5), 1e-13);
  }
}

TEST(Cressman, InfluenceDecaysWithDistance) {
  // moving the sample with value 1 away from the query lowers the output toward 0
  double prev = 2.0;
  for (double t = 0.5; t < 12; t += 0.5) {
    const double v = interp1({{0, 0.0}, {-3, 0.0}, {t, 1.0}}, 0.0, 3.0);
    EXPECT_LT(v, prev);
    prev = v;
  }
}

TEST(Cressman, Errors) {
  EXPECT_THROW(cressman_interpolate({}, {1.0}, CressmanConfig{}), NoDataError);
  EXPECT_THROW(cressman_interpolate({{0, {1.0}}}, {1.0}, CressmanConfig{0.0}), PreconditionError);
  EXPECT_THROW(cressman_interpolate({{0, {1.0}}, {1, {1.0, 2.0}}}, {1.0}, CressmanConfig{}), ShapeError);
  EXPECT_THROW(cressman_cube(SeriesCube(), {1}, CressmanConfig{}), NoDataError);
}

TEST(CressmanCube, MatchesPerPixelInterpolation) {
  auto cube = smooth_cube(2, 0.01);
  auto part = subsample_irregular(cube, 0.5, 4);
  const auto est = cressman_cube(part.kept, part.removed.timestamps(), CressmanConfig{2.0});
  for (std::size_t i : {0u, 7u, 15u}) {
    std::vector<TimedSample> s;
    for (std::size_t f = 0; f < part.kept.frames(); ++f) {
      auto p = part.kept.pixel(f, i);
      s.push_back({static_cast<double>(part.kept.timestamps()[f]), std::vector<double>(p.begin(), p.end())});
    }
    std::vector<double> q(part.removed.timestamps().begin(), part.removed.timestamps().end());
    auto ref = cressman_interpolate(s, q, CressmanConfig{2.0});
    for (std::size_t f = 0; f < q.size(); ++f) {
      for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(est.pixel(f, i)[c], ref[f][c], 1e-6);
    }
  }
}

TEST(CressmanCube, RegularizeFillsEveryStep) {
  SeriesCube c(1, 1, 1, {3, 5, 9}, {0.f, 1.f, 0.f});
  auto r = cressman_regularize(c, CressmanConfig{});
  EXPECT_EQ(r.frames(), 7u);
  EXPECT_TRUE(r.regular());
  EXPECT_EQ(r.timestamps().front(), 3u);
  EXPECT_EQ(r.timestamps().back(), 9u);
}

TEST(Sweep, DefaultRadii) {
  auto r = default_sweep_radii();
  ASSERT_EQ(r.size(), 14u);
  EXPECT_EQ(r.front(), 0.5);
  EXPECT_EQ(r.back(), 7.0);
  for (std::size_t i = 1; i < r.size(); ++i) EXPECT_DOUBLE_EQ(r[i] - r[i - 1], 0.5);
}

TEST(Sweep, IdenticalFramesGiveZero) {
  SeriesCube c(1, 2, 1, {1, 2}, {0.5f, 0.5f, 0.5f, 0.5f});
  auto res = radius_sweep(c, c, {1.0});
  EXPECT_EQ(res.best_mse, 0.0);
  EXPECT_EQ(res.best_radius, 1.0);
}

TEST(Sweep, DeterministicAndRecomputable) {
  auto cube = smooth_cube(3, 0.01);
  auto part = subsample_irregular(cube, 0.5, 9);
  auto a = radius_sweep(part.kept, part.removed);
  auto b = radius_sweep(part.kept, part.removed);
  EXPECT_EQ(a.best_radius, b.best_radius);
  EXPECT_EQ(a.table, b.table);
  EXPECT_EQ(a.table.size(), 14u);
  const auto est = cressman_cube(part.kept, part.removed.timestamps(), CressmanConfig{a.best_radius});
  EXPECT_EQ(mse_cubes(est, part.removed).overall, a.best_mse);
  for (auto [r, m] : a.table) EXPECT_GE(m, a.best_mse);
}

TEST(Sweep, TiesGoToSmallerRadius) {
  SeriesCube c(1, 1, 1, {1, 2}, {0.5f, 0.5f});
  auto res = radius_sweep(c, c, {3.0, 1.0, 2.0});
  EXPECT_EQ(res.best_radius, 1.0);
}

TEST(Sweep, OversmoothingLoses) {
  auto cube = smooth_cube(1, 0.0);
  auto part = subsample_irregular(cube, 0.5, 2);
  auto res = radius_sweep(part.kept, part.removed);
  EXPECT_LT(res.best_mse, res.table.back().second);
}

TEST(Sweep, Errors) {
  SeriesCube c(1, 1, 1, {1}, {0.5f});
  EXPECT_THROW(radius_sweep(c, SeriesCube(), {1.0}), PreconditionError);
  EXPECT_THROW(radius_sweep(c, c, {}), PreconditionError);
}
