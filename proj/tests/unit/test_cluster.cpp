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

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "dogseg/cluster.hpp"

using namespace dogseg;
using namespace dogseg::cluster;

namespace
{

enc::FeatureFrame moving_frame(int side, double vx, double vy)
{
  enc::FeatureFrame f(side);
  for (std::size_t i = 0; i < f.occupancy.size(); ++i) {
    f.mean_vx[i] = static_cast<float>(vx);
    f.mean_vy[i] = static_cast<float>(vy);
    f.var_vx[i] = 0.25F;
    f.var_vy[i] = 0.25F;
    f.occupied[i] = 1;
    f.occupancy[i] = 0.9F;
  }
  return f;
}

grid::Mask random_mask(int side, double density, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution b(density);
  grid::Mask m(side, side, 0);
  for (auto & v : m.data) {
    v = b(rng) ? 1 : 0;
  }
  return m;
}

// Textbook O(n^2) DBSCAN with the same border rule, used as the reference.
std::set<std::set<std::pair<int, int>>> brute_dbscan(const grid::Mask & mask, double eps, int min_pts)
{
  std::vector<Cell> pts;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (mask.at(x, y)) {
        pts.push_back({x, y});
      }
    }
  }
  const std::size_t n = pts.size();
  auto d2 = [&](std::size_t i, std::size_t j) {
    const double dx = pts[i].x - pts[j].x;
    const double dy = pts[i].y - pts[j].y;
    return dx * dx + dy * dy;
  };
  std::vector<bool> core(n);
  for (std::size_t i = 0; i < n; ++i) {
    int c = 0;
    for (std::size_t j = 0; j < n; ++j) {
      c += d2(i, j) <= eps * eps ? 1 : 0;
    }
    core[i] = c >= min_pts;
  }
  std::vector<int> label(n, -1);
  int k = 0;
  for (std::size_t s = 0; s < n; ++s) {
    if (!core[s] || label[s] >= 0) {
      continue;
    }
    bool grew = true;
    label[s] = k;
    while (grew) {
      grew = false;
      for (std::size_t i = 0; i < n; ++i) {
        if (label[i] != k || !core[i]) {
          continue;
        }
        for (std::size_t j = 0; j < n; ++j) {
          if (core[j] && label[j] < 0 && d2(i, j) <= eps * eps) {
            label[j] = k;
            grew = true;
          }
        }
      }
    }
    ++k;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (core[i]) {
      continue;
    }
    double best = 1e18;
    for (std::size_t j = 0; j < n; ++j) {
      if (core[j] && d2(i, j) <= eps * eps && d2(i, j) < best) {
        best = d2(i, j);
        label[i] = label[j];
      }
    }
  }
  std::map<int, std::set<std::pair<int, int>>> groups;
  for (std::size_t i = 0; i < n; ++i) {
    if (label[i] >= 0) {
      groups[label[i]].insert({pts[i].x, pts[i].y});
    }
  }
  std::set<std::set<std::pair<int, int>>> out;
  for (auto & [_, g] : groups) {
    out.insert(g);
  }
  return out;
}

std::set<std::set<std::pair<int, int>>> as_partition(const std::vector<std::vector<Cell>> & clusters)
{
  std::set<std::set<std::pair<int, int>>> out;
  for (const auto & c : clusters) {
    std::set<std::pair<int, int>> s;
    for (const auto & p : c) {
      s.insert({p.x, p.y});
    }
    out.insert(s);
  }
  return out;
}

}  // namespace

TEST_CASE("baseline classifier")
{
  auto f = moving_frame(8, 0.0, 0.0);
  f.mean_vx.at(3, 3) = 2.0F;
  f.occupied.at(5, 5) = 0;
  f.mean_vx.at(5, 5) = 2.0F;
  for (double thr : {1e-9, 0.5, 3.0}) {
    const auto r = baseline_classify(f, thr);
    CHECK(r.mask.at(0, 0) == 0);  // zero velocity
    CHECK(r.mask.at(5, 5) == 0);  // unoccupied
  }
  const auto r = baseline_classify(f, 0.0);
  int dyn = 0;
  for (std::size_t i = 0; i < r.mask.size(); ++i) {
    CHECK(r.mask[i] == f.occupied[i]);
    dyn += r.mask[i];
  }
  CHECK(dyn == 63);
  // sqrt(v^2 / (var + reg)) for diagonal covariance
  CHECK(r.score.at(3, 3) == doctest::Approx(2.0 / std::sqrt(0.25 + 1e-6)).epsilon(1e-6));
  CHECK(baseline_classify(f, 3.9).mask.at(3, 3) == 1);
  CHECK(baseline_classify(f, 4.1).mask.at(3, 3) == 0);
}

TEST_CASE("occupancy refinement is set intersection")
{
  const grid::Mask all(6, 6, 1);
  const grid::Mask none(6, 6, 0);
  CHECK(refine_with_occupancy(all, none) == none);
  const auto occ = random_mask(6, 0.5, 1);
  CHECK(refine_with_occupancy(occ, occ) == occ);
  CHECK(refine_with_occupancy(none, occ) == none);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto p = random_mask(16, 0.3, 100 + seed);
    const auto o = random_mask(16, 0.6, 200 + seed);
    std::set<std::size_t> sp;
    std::set<std::size_t> so;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p[i]) sp.insert(i);
      if (o[i]) so.insert(i);
    }
    std::set<std::size_t> inter;
    std::set_intersection(sp.begin(), sp.end(), so.begin(), so.end(), std::inserter(inter, inter.begin()));
    const auto r = refine_with_occupancy(p, o);
    std::set<std::size_t> got;
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (r[i]) got.insert(i);
      CHECK(r[i] <= p[i]);
    }
    CHECK(got == inter);
  }
  grid::Raster<float> prob(6, 6, 0.8F);
  const auto rp = refine_with_occupancy(prob, occ);
  for (std::size_t i = 0; i < rp.size(); ++i) {
    CHECK(rp[i] == (occ[i] ? 0.8F : 0.0F));
  }
  CHECK_THROWS_AS(refine_with_occupancy(all, grid::Mask(5, 6, 1)), ShapeError);
}

TEST_CASE("dbscan")
{
  SUBCASE("two blobs far apart")
  {
    grid::Mask m(40, 40, 0);
    for (int y = 5; y < 9; ++y) {
      for (int x = 5; x < 9; ++x) {
        m.at(x, y) = 1;
        m.at(x + 15, y + 15) = 1;  // 15 cells = 10 eps
      }
    }
    const auto c = dbscan(m);
    REQUIRE(c.size() == 2);
    CHECK(c[0].size() == 16);
    CHECK(c[0].front() == Cell{5, 5});
    CHECK(c[1].front() == Cell{20, 20});
  }
  SUBCASE("isolated cells are noise")
  {
    grid::Mask m(20, 20, 0);
    m.at(2, 2) = 1;
    m.at(10, 10) = 1;
    m.at(3, 3) = 1;  // two in reach, still below min_pts 3
    CHECK(dbscan(m).empty());
    CHECK(dbscan(m, 1.5, 1).size() == 2);
  }
  SUBCASE("matches the brute-force reference")
  {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      const auto m = random_mask(24, 0.15 + 0.01 * static_cast<double>(seed), seed);
      for (auto [eps, pts] : {std::pair{1.5, 3}, std::pair{1.0, 2}, std::pair{2.3, 5}}) {
        CHECK(as_partition(dbscan(m, eps, pts)) == brute_dbscan(m, eps, pts));
      }
    }
  }
  SUBCASE("enumeration order does not matter")
  {
    const auto m = random_mask(30, 0.25, 77);
    const auto ref = dbscan(m);
    std::vector<Cell> pts;
    for (int y = 0; y < 30; ++y) {
      for (int x = 0; x < 30; ++x) {
        if (m.at(x, y)) pts.push_back({x, y});
      }
    }
    std::mt19937_64 rng(5);
    for (int k = 0; k < 10; ++k) {
      std::shuffle(pts.begin(), pts.end(), rng);
      CHECK(dbscan(pts) == ref);
    }
  }
  CHECK_THROWS_AS(dbscan(grid::Mask(4, 4, 1), 0.0, 3), ConfigError);
  CHECK_THROWS_AS(dbscan(grid::Mask(4, 4, 1), 1.5, 0), ConfigError);
}

TEST_CASE("convex hull")
{
  CHECK(convex_hull({{1, 1}}) == std::vector<Cell>{{1, 1}});
  CHECK(convex_hull({{0, 0}, {1, 1}, {2, 2}, {3, 3}}) == std::vector<Cell>{{0, 0}, {3, 3}});
  const auto sq = convex_hull({{0, 0}, {2, 0}, {2, 2}, {0, 2}, {1, 1}, {1, 0}});
  CHECK(sq == std::vector<Cell>{{0, 0}, {2, 0}, {2, 2}, {0, 2}});

  std::mt19937_64 rng(3);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (const auto & c : dbscan(random_mask(32, 0.3, 300 + seed))) {
      const auto h = convex_hull(c);
      for (const auto & p : c) {
        CHECK(hull_contains(h, p));
      }
      for (const auto & v : h) {
        CHECK(std::find(c.begin(), c.end(), v) != c.end());
      }
      if (h.size() >= 3) {
        CHECK_FALSE(hull_contains(h, {h[0].x - 100, h[0].y}));
      }
    }
  }
}

TEST_CASE("velocity orientation")
{
  const std::vector<Cell> cells{{1, 1}, {2, 1}, {2, 2}};
  CHECK(orientation_velocity(cells, moving_frame(4, 1, 0)) == 0.0);
  CHECK(orientation_velocity(cells, moving_frame(4, 1, 1)) == doctest::Approx(std::numbers::pi / 4));
  CHECK(orientation_velocity(cells, moving_frame(4, -1, 0)) == doctest::Approx(std::numbers::pi));
  for (int k = -3; k <= 4; ++k) {
    const double a = k * std::numbers::pi / 4;
    const auto f = moving_frame(4, 2 * std::cos(a), 2 * std::sin(a));
    CAPTURE(k);
    CHECK(orientation_velocity(cells, f) == doctest::Approx(a).epsilon(1e-6));
  }
  // positive scaling leaves the heading alone
  auto f = moving_frame(4, 0, 0);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(-3.0F, 3.0F);
  for (auto & v : f.mean_vx.data) v = u(rng);
  for (auto & v : f.mean_vy.data) v = u(rng);
  const double h = orientation_velocity(cells, f);
  for (auto & v : f.mean_vx.data) v *= 4.0F;
  for (auto & v : f.mean_vy.data) v *= 4.0F;
  CHECK(orientation_velocity(cells, f) == doctest::Approx(h));

  CHECK(std::isnan(orientation_velocity(cells, moving_frame(4, 0, 0))));
  CHECK_THROWS_AS(orientation_velocity({}, moving_frame(4, 1, 0)), DataError);
  CHECK_THROWS_AS(orientation_velocity({{4, 0}}, moving_frame(4, 1, 0)), BoundsError);
}

TEST_CASE("network orientation")
{
  const std::vector<Cell> cells{{0, 0}, {1, 0}, {0, 1}, {1, 1}};
  grid::Raster<float> s(2, 2, 0.0F);
  grid::Raster<float> c(2, 2, 1.0F);
  CHECK(orientation_cnn(cells, s, c) == 0.0);

  const double d = 10.0 * std::numbers::pi / 180.0;
  for (int i = 0; i < 4; ++i) {
    const double a = i % 2 ? d : -d;
    s[static_cast<std::size_t>(i)] = static_cast<float>(std::sin(a));
    c[static_cast<std::size_t>(i)] = static_cast<float>(std::cos(a));
  }
  CHECK(orientation_cnn(cells, s, c) == doctest::Approx(0.0).epsilon(1e-7));

  for (int i = 0; i < 4; ++i) {
    s[static_cast<std::size_t>(i)] = i % 2 ? 1.0F : -1.0F;
    c[static_cast<std::size_t>(i)] = 0.0F;
  }
  CHECK(std::isnan(orientation_cnn(cells, s, c)));

  // unnormalized outputs: only direction of the mean matters
  s.data = {0.3F, 0.3F, 0.3F, 0.3F};
  c.data = {-0.3F, -0.3F, -0.3F, -0.3F};
  CHECK(orientation_cnn(cells, s, c) == doctest::Approx(3 * std::numbers::pi / 4));
  CHECK_THROWS_AS(orientation_cnn(cells, s, grid::Raster<float>(3, 2)), ShapeError);
}

TEST_CASE("cluster statistics and export")
{
  auto f = moving_frame(16, 3.0, 0.0);
  for (auto & v : f.var_vx.data) v = 2.25F;  // m = 3 / 1.5 = 2
  grid::Mask dyn(16, 16, 0);
  for (int y = 2; y < 5; ++y) {
    for (int x = 2; x < 6; ++x) {
      dyn.at(x, y) = 1;
    }
  }
  dyn.at(12, 12) = 1;  // noise
  const auto clusters = extract_clusters("f0007", dyn, f);
  REQUIRE(clusters.size() == 1);
  const auto & c = clusters[0];
  CHECK(c.frame_id == "f0007");
  CHECK(c.cells.size() == 12);
  CHECK(c.mean_speed == doctest::Approx(3.0));
  CHECK(c.mean_mahalanobis == doctest::Approx(2.0).epsilon(1e-5));
  CHECK(c.suppression_p == doctest::Approx(6.0).epsilon(1e-5));
  CHECK(c.suppression_p == c.mean_mahalanobis * c.mean_speed);
  CHECK(c.mean_normalized_speed == doctest::Approx(3.0 / std::sqrt(2.25 + grid::kVarianceFloor)));
  CHECK(c.heading_vel == 0.0);
  CHECK(std::isnan(c.heading_cnn));
  CHECK(c.hull.size() == 4);

  // unoccupied cells are dropped before clustering
  f.occupied.at(2, 2) = 0;
  CHECK(extract_clusters("x", dyn, f)[0].cells.size() == 11);

  auto copy = clusters;
  copy[0].review = Review::kRejected;
  copy[0].heading_cnn = 1.25;
  copy.push_back(copy[0]);
  copy[1].id = 1;
  copy[1].heading_vel = kUndefinedHeading;
  std::stringstream ss;
  write_clusters(ss, copy);
  CHECK(ss.str().find("\"heading_vel\":null") != std::string::npos);
  const auto back = read_clusters(ss);
  REQUIRE(back.size() == 2);
  CHECK(back[0].cells == copy[0].cells);
  CHECK(back[0].hull == copy[0].hull);
  CHECK(back[0].review == Review::kRejected);
  CHECK(back[0].heading_cnn == 1.25);
  CHECK(back[0].suppression_p == copy[0].suppression_p);
  CHECK(std::isnan(back[1].heading_vel));

  CHECK_THROWS_AS(from_json_line("{\"frame\": 1}"), DataError);
  CHECK_THROWS_AS(from_json_line("not json"), DataError);
  auto line = to_json_line(copy[0]);
  line.replace(line.find("rejected"), 8, "maybe");
  CHECK_THROWS_AS(from_json_line(line), DataError);
}
