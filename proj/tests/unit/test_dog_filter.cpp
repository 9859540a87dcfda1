// Copyright 2026 The dogseg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <doctest.h>

#include <cmath>
#include <map>
#include <random>

#include "dogseg/dog_filter.hpp"
#include "dogseg/sensor_sim.hpp"

using namespace dogseg;
using namespace dogseg::grid;
using namespace dogseg::dog;

namespace
{
FilterParams quiet()
{
  FilterParams p;
  p.process_noise_pos = 0.0;
  p.process_noise_vel = 0.0;
  return p;
}

int idx(const GridSpec & s, int x, int y) { return y * s.side_cells + x; }
}  // namespace

TEST_CASE("predict: single particle moving into an empty cell")
{
  GridSpec spec{8, 1.0};
  DynamicGridMap map(spec, 0.0);
  // From cell (4,4) one cell to the right in dt = 0.1.
  map.assign_particles({{0.5, 0.5, 10.0, 0.0, 0.7}});
  map.set_occupancy(idx(spec, 4, 4), 0.7);
  Rng rng(1);
  const auto pred = predict(map, quiet(), rng);
  CHECK(pred.transitions.size() == 1);
  CHECK(pred.transitions[0].weight == doctest::Approx(0.7));
  CHECK(pred.prior[idx(spec, 5, 4)] == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(pred.prior[idx(spec, 4, 4)] == doctest::Approx(0.0));
  CHECK(pred.map.occupancy(idx(spec, 5, 4)) == doctest::Approx(0.7));
}

TEST_CASE("predict: zero velocity without noise stays put")
{
  GridSpec spec{8, 1.0};
  DynamicGridMap map(spec, 0.0);
  map.assign_particles({{-2.3, 1.7, 0.0, 0.0, 0.4}});
  Rng rng(3);
  const auto pred = predict(map, quiet(), rng);
  REQUIRE(pred.map.particles().size() == 1);
  CHECK(pred.map.particles()[0].px == -2.3);
  CHECK(pred.map.particles()[0].py == 1.7);
  CHECK(pred.prior[*spec.cell_of(-2.3, 1.7)] == doctest::Approx(0.4));
}

TEST_CASE("predict: two incoming masses combine as independent events")
{
  GridSpec spec{8, 1.0};
  DynamicGridMap map(spec, 0.0);
  // Two source cells each pushing 0.5 into cell (4,4).
  map.assign_particles({{-0.5, 0.5, 10.0, 0.0, 0.5}, {1.5, 0.5, -10.0, 0.0, 0.5}});
  Rng rng(3);
  const auto pred = predict(map, quiet(), rng);
  CHECK(pred.prior[idx(spec, 4, 4)] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("predict: out-of-grid particles are dropped")
{
  GridSpec spec{8, 1.0};
  DynamicGridMap map(spec, 0.0);
  map.assign_particles({{3.9, 0.0, 10.0, 0.0, 0.5}, {0.0, 0.0, 0.0, 0.0, 0.5}});
  Rng rng(3);
  const auto pred = predict(map, quiet(), rng);
  CHECK(pred.map.particles().size() == 1);
}

TEST_CASE("predict: prior matches brute-force product on a 5x5 grid")
{
  // Exhaustive oracle: for every destination c and every source a, accumulate
  // P(E^{c<-a}) from the moved particles, then 1 - prod_a (1 - P).
  GridSpec spec{8, 1.0};
  std::mt19937 gen(17);
  std::uniform_real_distribution<double> pos(-2.0, 2.999);
  std::uniform_real_distribution<double> vel(-12.0, 12.0);
  std::uniform_real_distribution<double> w(0.0, 0.08);
  for (int trial = 0; trial < 20; ++trial) {
    DynamicGridMap map(spec, 0.0);
    std::vector<Particle> ps;
    for (int i = 0; i < 60; ++i) {
      ps.push_back({pos(gen), pos(gen), vel(gen), vel(gen), w(gen)});
    }
    map.assign_particles(ps);
    for (int c = 0; c < map.cell_count(); ++c) {
      map.set_occupancy(c, map.cell(c).count ? map.weight_sum(c) : 0.0);
    }
    Rng rng(trial);
    const auto pred = predict(map, quiet(), rng);

    std::map<std::pair<int, int>, double> mass;
    for (const auto & p : ps) {
      const auto a = spec.cell_of(p.px, p.py);
      const auto c = spec.cell_of(p.px + 0.1 * p.vx, p.py + 0.1 * p.vy);
      if (a && c) {
        mass[{*a, *c}] += p.weight;
      }
    }
    // Restrict the oracle to the central 5x5 block of cells.
    for (int cy = 2; cy < 7; ++cy) {
      for (int cx = 2; cx < 7; ++cx) {
        const int c = idx(spec, cx, cy);
        double keep = 1.0;
        for (int a = 0; a < spec.cell_count(); ++a) {
          const auto it = mass.find({a, c});
          keep *= 1.0 - (it == mass.end() ? 0.0 : it->second);
        }
        CHECK(std::abs(pred.prior[c] - std::min(1.0 - keep, kMaxPrior)) < 1e-12);
      }
    }
  }
}

TEST_CASE("predict: prior is clamped below one")
{
  GridSpec spec{8, 1.0};
  DynamicGridMap map(spec, 0.0);
  map.assign_particles({{0.5, 0.5, 0.0, 0.0, 1.0}});
  Rng rng(1);
  const auto pred = predict(map, quiet(), rng);
  CHECK(pred.prior[idx(spec, 4, 4)] == kMaxPrior);
}

TEST_CASE("update")
{
  GridSpec spec{8, 1.0};
  DynamicGridMap map(spec, 0.0);
  map.assign_particles({{0.5, 0.5, 1.0, 0.0, 0.2}, {0.6, 0.5, 2.0, 0.0, 0.3}, {-1.5, 0.5, 0.0, 1.0, 0.9}});
  std::vector<double> prior(64, 0.3);
  prior[idx(spec, 4, 4)] = 0.5;
  prior[idx(spec, 2, 4)] = 0.9;

  SUBCASE("uninformative measurement keeps the prior")
  {
    MeasurementGrid meas(8);
    const auto post = update(map, prior, meas);
    for (int c = 0; c < 64; ++c) {
      CHECK(post.occupancy(c) == doctest::Approx(prior[c]).epsilon(1e-12));
    }
    CHECK(post.weight_sum(idx(spec, 4, 4)) == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("uniform prior passes the likelihood through")
  {
    MeasurementGrid meas(8);
    meas.set(idx(spec, 4, 4), 0.8F, 0.2F);
    const auto post = update(map, prior, meas);
    CHECK(post.occupancy(idx(spec, 4, 4)) == doctest::Approx(0.8).epsilon(1e-6));
    const auto ps = post.particles_in(idx(spec, 4, 4));
    // Relative weights are kept.
    CHECK(ps[1].weight / ps[0].weight == doctest::Approx(1.5));
  }
  SUBCASE("single-particle cell carries the posterior")
  {
    MeasurementGrid meas(8);
    meas.set(idx(spec, 2, 4), 0.15F, 0.85F);
    const auto post = update(map, prior, meas);
    const double expect = bayes_update(0.9, 0.15F, 0.85F);
    CHECK(post.particles_in(idx(spec, 2, 4))[0].weight == doctest::Approx(expect).epsilon(1e-12));
  }
  SUBCASE("shape mismatch")
  {
    MeasurementGrid meas(9);
    CHECK_THROWS_AS(update(map, prior, meas), ShapeError);
  }
}

TEST_CASE("systematic resampling")
{
  Rng rng(5);
  const std::vector<double> w = {0.1, 0.0, 0.6, 0.3};
  const auto picks = systematic_resample(w, 100, rng);
  REQUIRE(picks.size() == 100);
  std::vector<int> counts(4, 0);
  for (int i : picks) {
    ++counts[i];
  }
  // Low-variance resampling puts each count within one of its expectation.
  CHECK(std::abs(counts[0] - 10) <= 1);
  CHECK(counts[1] == 0);
  CHECK(std::abs(counts[2] - 60) <= 1);
  CHECK(std::abs(counts[3] - 30) <= 1);
  CHECK(std::is_sorted(picks.begin(), picks.end()));
}

namespace
{
// Map with one occupied cell holding zero-velocity survivors.
DynamicGridMap one_cell(const GridSpec & spec, double occ, int n)
{
  DynamicGridMap map(spec, 0.0);
  std::vector<Particle> ps;
  for (int i = 0; i < n; ++i) {
    ps.push_back({0.1 + 0.8 * i / n, 0.5, 0.0, 0.0, occ / n});
  }
  map.assign_particles(ps);
  map.set_occupancy(idx(spec, 4, 4), occ);
  return map;
}

double zero_velocity_mass(std::span<const Particle> ps)
{
  double m = 0.0;
  for (const auto & p : ps) {
    if (p.vx == 0.0 && p.vy == 0.0) {
      m += p.weight;
    }
  }
  return m;
}
}  // namespace

TEST_CASE("resample")
{
  GridSpec spec{8, 1.0};
  auto params = FilterParams{};
  const int c = idx(spec, 4, 4);

  SUBCASE("newborn to survivor ratio when measured equals predicted")
  {
    params.newborn_ratio_gamma = 0.1;
    const auto map = one_cell(spec, 0.8, 20);
    std::vector<double> prior(64, 0.0);
    prior[c] = 0.8;
    Rng rng(2);
    const auto out = resample(map, prior, params, rng);
    const double surv = zero_velocity_mass(out.particles_in(c));
    const double born = out.weight_sum(c) - surv;
    CHECK(born / surv == doctest::Approx(0.1).epsilon(1e-9));
    CHECK(out.weight_sum(c) == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(out.particles_in(c).size() == static_cast<std::size_t>(params.particles_per_occupied_cell));
  }
  SUBCASE("ratio follows measured over predicted")
  {
    const auto map = one_cell(spec, 0.9, 20);
    std::vector<double> prior(64, 0.0);
    prior[c] = 0.3;
    Rng rng(2);
    const auto out = resample(map, prior, params, rng);
    const double surv = zero_velocity_mass(out.particles_in(c));
    const double born = out.weight_sum(c) - surv;
    CHECK(born / surv == doctest::Approx(params.newborn_ratio_gamma * 0.9 / 0.3).epsilon(1e-9));
  }
  SUBCASE("no predicted particles: all mass is newborn")
  {
    DynamicGridMap map(spec, 0.0);
    map.set_occupancy(c, 0.85);
    std::vector<double> prior(64, 0.0);
    Rng rng(2);
    const auto out = resample(map, prior, params, rng);
    CHECK(zero_velocity_mass(out.particles_in(c)) == 0.0);
    CHECK(out.weight_sum(c) == doctest::Approx(0.85).epsilon(1e-12));
    for (const auto & p : out.particles_in(c)) {
      CHECK(std::abs(p.vx) <= params.newborn_v_max);
      CHECK(std::abs(p.vy) <= params.newborn_v_max);
    }
  }
  SUBCASE("particle count and conservation over a random map")
  {
    DynamicGridMap map(spec, 0.0);
    std::mt19937 gen(4);
    std::uniform_real_distribution<double> u(-3.99, 3.99);
    std::vector<Particle> ps;
    for (int i = 0; i < 400; ++i) {
      ps.push_back({u(gen), u(gen), u(gen), u(gen), 0.01});
    }
    map.assign_particles(ps);
    int occupied = 0;
    for (int k = 0; k < 64; ++k) {
      map.set_occupancy(k, std::min(0.99, map.weight_sum(k)));
      occupied += map.occupancy(k) >= params.occupancy_threshold ? 1 : 0;
    }
    std::vector<double> prior(64, 0.5);
    Rng rng(8);
    const auto out = resample(map, prior, params, rng);
    CHECK(out.particles().size() == static_cast<std::size_t>(occupied * params.particles_per_occupied_cell));
    for (int k = 0; k < 64; ++k) {
      CHECK(out.occupancy(k) == map.occupancy(k));
      if (out.cell(k).count > 0) {
        CHECK(std::abs(out.weight_sum(k) - out.occupancy(k)) < 1e-9);
      }
    }
  }
}

TEST_CASE("birth floor")
{
  MeasurementGrid meas(8);
  meas.set(3, 0.85F, 0.15F);
  meas.set(4, 0.15F, 0.85F);
  std::vector<double> prior(64, 0.2);
  FilterParams p;
  const auto out = birth_floor(prior, meas, p);
  CHECK(out[3] == doctest::Approx(1.0 - 0.8 * 0.5));
  CHECK(out[4] == 0.2);
  CHECK(out[5] == 0.2);
}

TEST_CASE("filter parameter validation")
{
  FilterParams p;
  CHECK_NOTHROW(p.validate());
  p.dt = 0.0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = FilterParams{};
  p.newborn_ratio_gamma = 0.0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = FilterParams{};
  p.process_noise_vel = -1.0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
}

namespace
{
sim::Scenario wall_scene()
{
  sim::Scenario sc;
  sim::ScenarioObject wall;
  wall.kind = sim::ObjectKind::kWall;
  wall.length = 0.6;
  wall.width = 2.0;
  wall.x = 6.0;
  sc.objects.push_back(wall);
  return sc;
}

std::vector<int> hit_cells(const MeasurementGrid & m)
{
  std::vector<int> out;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m.l_occ[i] > m.l_free[i]) {
      out.push_back(static_cast<int>(i));
    }
  }
  return out;
}
}  // namespace

TEST_CASE("step: static wall converges")
{
  const GridSpec spec{64, 0.25};
  const auto sc = wall_scene();
  const auto meas = sim::render_measurement(sc, spec);
  DogFilter filter(FilterParams{});
  DynamicGridMap map(spec);
  for (int k = 0; k < 50; ++k) {
    map = filter.step(map, meas);
    for (int c = 0; c < map.cell_count(); ++c) {
      REQUIRE(map.occupancy(c) >= 0.0);
      REQUIRE(map.occupancy(c) <= 1.0);
    }
  }
  const auto hits = hit_cells(meas);
  REQUIRE(hits.size() >= 8);
  double mean = 0.0;
  for (int c : hits) {
    mean += map.occupancy(c);
    CHECK(map.occupancy(c) > 0.9);
  }
  CHECK(mean / static_cast<double>(hits.size()) > 0.95);
  CHECK(map.timestamp() == doctest::Approx(5.0));
}

TEST_CASE("step: free space decays")
{
  const GridSpec spec{64, 0.25};
  const auto meas = sim::render_measurement(sim::Scenario{}, spec);
  DogFilter filter(FilterParams{});
  DynamicGridMap map(spec);
  for (int k = 0; k < 40; ++k) {
    map = filter.step(map, meas);
  }
  for (int c = 0; c < map.cell_count(); ++c) {
    CHECK(map.occupancy(c) < 0.05);
  }
  CHECK(map.particles().empty());
}

TEST_CASE("step: bit-reproducible for a fixed seed")
{
  const GridSpec spec{48, 0.25};
  auto sc = wall_scene();
  sc.objects[0].x = 4.0;
  DogFilter a(FilterParams{});
  DogFilter b(FilterParams{});
  DynamicGridMap ma(spec);
  DynamicGridMap mb(spec);
  for (int k = 0; k < 10; ++k) {
    const auto meas = sim::render_measurement(sc, spec);
    ma = a.step(ma, meas);
    mb = b.step(mb, meas);
  }
  CHECK(ma == mb);
  FilterParams other;
  other.rng_seed = 2;
  DogFilter c(other);
  DynamicGridMap mc(spec);
  for (int k = 0; k < 10; ++k) {
    mc = c.step(mc, sim::render_measurement(sc, spec));
  }
  CHECK_FALSE(mc == ma);
}
