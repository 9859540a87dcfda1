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

#include "dogseg/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include <json.hpp>

namespace dogseg::cluster
{

namespace
{

using nlohmann::json;

long long cross(const Cell & o, const Cell & a, const Cell & b)
{
  return static_cast<long long>(a.x - o.x) * (b.y - o.y) - static_cast<long long>(a.y - o.y) * (b.x - o.x);
}

void check_cells(const std::vector<Cell> & cells, int width, int height)
{
  if (cells.empty()) {
    throw DataError("cluster has no cells");
  }
  for (const auto & c : cells) {
    if (c.x < 0 || c.y < 0 || c.x >= width || c.y >= height) {
      throw BoundsError("cluster cell outside the frame");
    }
  }
}

json heading_json(double h)
{
  return std::isnan(h) ? json(nullptr) : json(h);
}

double heading_from(const json & j)
{
  return j.is_null() ? kUndefinedHeading : j.get<double>();
}

json cells_json(const std::vector<Cell> & cells)
{
  json a = json::array();
  for (const auto & c : cells) {
    a.push_back({c.x, c.y});
  }
  return a;
}

std::vector<Cell> cells_from(const json & a)
{
  std::vector<Cell> out;
  for (const auto & p : a) {
    if (!p.is_array() || p.size() != 2) {
      throw DataError("cell must be [x, y]");
    }
    out.push_back({p[0].get<int>(), p[1].get<int>()});
  }
  return out;
}

}  // namespace

std::string to_string(Review r)
{
  switch (r) {
    case Review::kAuto:
      return "auto";
    case Review::kAccepted:
      return "accepted";
    case Review::kRejected:
      return "rejected";
    case Review::kFlipped:
      return "flipped";
  }
  return "auto";
}

Review parse_review(const std::string & text)
{
  if (text == "auto") {
    return Review::kAuto;
  }
  if (text == "accepted") {
    return Review::kAccepted;
  }
  if (text == "rejected") {
    return Review::kRejected;
  }
  if (text == "flipped") {
    return Review::kFlipped;
  }
  throw DataError("unknown review status '" + text + "'");
}

BaselineResult baseline_classify(const enc::FeatureFrame & frame, double threshold)
{
  BaselineResult r{grid::Raster<float>(frame.side, frame.side, 0.0F), grid::Mask(frame.side, frame.side, 0)};
  for (std::size_t i = 0; i < r.score.size(); ++i) {
    const double m = grid::mahalanobis(
      frame.mean_vx[i], frame.mean_vy[i], frame.var_vx[i], frame.var_vy[i], frame.cov_xy[i]);
    r.score[i] = static_cast<float>(m);
    r.mask[i] = frame.occupied[i] && m >= threshold ? 1 : 0;
  }
  return r;
}

grid::Mask refine_with_occupancy(const grid::Mask & prediction, const grid::Mask & occupied)
{
  if (!prediction.same_shape(occupied)) {
    throw ShapeError("prediction and occupancy masks differ in size");
  }
  grid::Mask out(prediction.width, prediction.height, 0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = prediction[i] && occupied[i] ? 1 : 0;
  }
  return out;
}

grid::Raster<float> refine_with_occupancy(const grid::Raster<float> & probability, const grid::Mask & occupied)
{
  if (!probability.same_shape(occupied)) {
    throw ShapeError("probability map and occupancy mask differ in size");
  }
  auto out = probability;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!occupied[i]) {
      out[i] = 0.0F;
    }
  }
  return out;
}

std::vector<std::vector<Cell>> dbscan(std::vector<Cell> points, double eps, int min_pts)
{
  if (!(eps > 0.0) || min_pts < 1) {
    throw ConfigError("dbscan needs eps > 0 and min_pts >= 1");
  }
  std::sort(points.begin(), points.end());
  points.erase(std::unique(points.begin(), points.end()), points.end());
  if (points.empty()) {
    return {};
  }

  int x0 = points[0].x;
  int x1 = x0;
  const int y0 = points.front().y;
  const int y1 = points.back().y;
  for (const auto & p : points) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
  }
  grid::Raster<int> index(x1 - x0 + 1, y1 - y0 + 1, -1);
  for (std::size_t i = 0; i < points.size(); ++i) {
    index.at(points[i].x - x0, points[i].y - y0) = static_cast<int>(i);
  }

  const int reach = static_cast<int>(std::floor(eps));
  const double eps2 = eps * eps + 1e-9;
  std::vector<std::vector<int>> nbrs(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto & p = points[i];
    for (int dy = -reach; dy <= reach; ++dy) {
      for (int dx = -reach; dx <= reach; ++dx) {
        if (dx * dx + dy * dy > eps2) {
          continue;
        }
        const int qx = p.x + dx - x0;
        const int qy = p.y + dy - y0;
        if (qx < 0 || qy < 0 || qx >= index.width || qy >= index.height) {
          continue;
        }
        const int j = index.at(qx, qy);
        if (j >= 0) {
          nbrs[i].push_back(j);
        }
      }
    }
  }

  std::vector<char> core(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    core[i] = static_cast<int>(nbrs[i].size()) >= min_pts;
  }

  // core components, seeded in row-major order
  std::vector<int> label(points.size(), -1);
  int n_clusters = 0;
  for (std::size_t s = 0; s < points.size(); ++s) {
    if (!core[s] || label[s] >= 0) {
      continue;
    }
    std::vector<int> stack{static_cast<int>(s)};
    label[s] = n_clusters;
    while (!stack.empty()) {
      const int i = stack.back();
      stack.pop_back();
      for (int j : nbrs[static_cast<std::size_t>(i)]) {
        if (core[static_cast<std::size_t>(j)] && label[static_cast<std::size_t>(j)] < 0) {
          label[static_cast<std::size_t>(j)] = n_clusters;
          stack.push_back(j);
        }
      }
    }
    ++n_clusters;
  }

  // border points join their nearest core
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (core[i]) {
      continue;
    }
    int best = -1;
    int best_d = 0;
    for (int j : nbrs[i]) {
      if (!core[static_cast<std::size_t>(j)]) {
        continue;
      }
      const int dx = points[static_cast<std::size_t>(j)].x - points[i].x;
      const int dy = points[static_cast<std::size_t>(j)].y - points[i].y;
      const int d = dx * dx + dy * dy;
      if (best < 0 || d < best_d || (d == best_d && j < best)) {
        best = j;
        best_d = d;
      }
    }
    if (best >= 0) {
      label[i] = label[static_cast<std::size_t>(best)];
    }
  }

  std::vector<std::vector<Cell>> clusters(static_cast<std::size_t>(n_clusters));
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (label[i] >= 0) {
      clusters[static_cast<std::size_t>(label[i])].push_back(points[i]);
    }
  }
  // cells were pushed in sorted order; clusters start at their seed which is also sorted
  std::sort(clusters.begin(), clusters.end(), [](const auto & a, const auto & b) { return a.front() < b.front(); });
  return clusters;
}

std::vector<std::vector<Cell>> dbscan(const grid::Mask & mask, double eps, int min_pts)
{
  std::vector<Cell> points;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (mask.at(x, y)) {
        points.push_back({x, y});
      }
    }
  }
  return dbscan(std::move(points), eps, min_pts);
}

std::vector<Cell> convex_hull(std::vector<Cell> points)
{
  std::sort(points.begin(), points.end(), [](const Cell & a, const Cell & b) {
    return a.x != b.x ? a.x < b.x : a.y < b.y;
  });
  points.erase(std::unique(points.begin(), points.end()), points.end());
  if (points.size() < 3) {
    return points;
  }
  std::vector<Cell> hull(2 * points.size());
  std::size_t k = 0;
  for (const auto & p : points) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) {
      --k;
    }
    hull[k++] = p;
  }
  const std::size_t lower = k + 1;
  for (auto it = points.rbegin() + 1; it != points.rend(); ++it) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], *it) <= 0) {
      --k;
    }
    hull[k++] = *it;
  }
  hull.resize(k - 1);
  return hull;
}

bool hull_contains(const std::vector<Cell> & hull, const Cell & p)
{
  if (hull.empty()) {
    return false;
  }
  if (hull.size() == 1) {
    return hull[0] == p;
  }
  if (hull.size() == 2) {
    const auto & a = hull[0];
    const auto & b = hull[1];
    return cross(a, b, p) == 0 && std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) &&
           std::min(a.y, b.y) <= p.y && p.y <= std::max(a.y, b.y);
  }
  for (std::size_t i = 0; i < hull.size(); ++i) {
    if (cross(hull[i], hull[(i + 1) % hull.size()], p) < 0) {
      return false;
    }
  }
  return true;
}

double orientation_velocity(const std::vector<Cell> & cells, const enc::FeatureFrame & frame)
{
  check_cells(cells, frame.side, frame.side);
  double sx = 0.0;
  double sy = 0.0;
  for (const auto & c : cells) {
    sx += frame.mean_vx.at(c.x, c.y);
    sy += frame.mean_vy.at(c.x, c.y);
  }
  const double n = static_cast<double>(cells.size());
  if (std::abs(sx / n) < 1e-6 && std::abs(sy / n) < 1e-6) {
    return kUndefinedHeading;
  }
  return std::atan2(sy, sx);
}

double orientation_cnn(const std::vector<Cell> & cells, const grid::Raster<float> & sin_map, const grid::Raster<float> & cos_map)
{
  if (!sin_map.same_shape(cos_map)) {
    throw ShapeError("sin and cos maps differ in size");
  }
  check_cells(cells, sin_map.width, sin_map.height);
  double s = 0.0;
  double c = 0.0;
  for (const auto & p : cells) {
    s += sin_map.at(p.x, p.y);
    c += cos_map.at(p.x, p.y);
  }
  const double n = static_cast<double>(cells.size());
  if (std::hypot(s / n, c / n) < 1e-6) {
    return kUndefinedHeading;
  }
  return std::atan2(s, c);
}

LabeledCluster describe(const std::string & frame_id, int id, std::vector<Cell> cells, const enc::FeatureFrame & frame)
{
  check_cells(cells, frame.side, frame.side);
  std::sort(cells.begin(), cells.end());
  LabeledCluster c;
  c.frame_id = frame_id;
  c.id = id;
  c.hull = convex_hull(cells);
  double speed = 0.0;
  double norm = 0.0;
  double maha = 0.0;
  for (const auto & p : cells) {
    const double vx = frame.mean_vx.at(p.x, p.y);
    const double vy = frame.mean_vy.at(p.x, p.y);
    const double sxx = frame.var_vx.at(p.x, p.y);
    const double syy = frame.var_vy.at(p.x, p.y);
    speed += std::hypot(vx, vy);
    norm += std::hypot(grid::normalized_velocity(vx, sxx), grid::normalized_velocity(vy, syy));
    maha += grid::mahalanobis(vx, vy, sxx, syy, frame.cov_xy.at(p.x, p.y));
  }
  const double n = static_cast<double>(cells.size());
  c.mean_speed = speed / n;
  c.mean_normalized_speed = norm / n;
  c.mean_mahalanobis = maha / n;
  c.suppression_p = c.mean_mahalanobis * c.mean_speed;
  c.cells = std::move(cells);
  c.heading_vel = orientation_velocity(c.cells, frame);
  return c;
}

std::vector<LabeledCluster> extract_clusters(
  const std::string & frame_id, const grid::Mask & dynamic, const enc::FeatureFrame & frame, double eps, int min_pts)
{
  const auto refined = refine_with_occupancy(dynamic, frame.occupied);
  std::vector<LabeledCluster> out;
  for (auto & cells : dbscan(refined, eps, min_pts)) {
    out.push_back(describe(frame_id, static_cast<int>(out.size()), std::move(cells), frame));
  }
  return out;
}

std::string to_json_line(const LabeledCluster & c)
{
  json j;
  j["frame"] = c.frame_id;
  j["id"] = c.id;
  j["n_cells"] = c.cells.size();
  j["cells"] = cells_json(c.cells);
  j["hull"] = cells_json(c.hull);
  j["mean_speed"] = c.mean_speed;
  j["mean_normalized_speed"] = c.mean_normalized_speed;
  j["mean_mahalanobis"] = c.mean_mahalanobis;
  j["p"] = c.suppression_p;
  j["heading_vel"] = heading_json(c.heading_vel);
  j["heading_cnn"] = heading_json(c.heading_cnn);
  j["review"] = to_string(c.review);
  return j.dump();
}

LabeledCluster from_json_line(const std::string & line)
{
  try {
    const auto j = json::parse(line);
    LabeledCluster c;
    c.frame_id = j.at("frame").get<std::string>();
    c.id = j.at("id").get<int>();
    c.cells = cells_from(j.at("cells"));
    c.hull = cells_from(j.at("hull"));
    if (j.at("n_cells").get<std::size_t>() != c.cells.size()) {
      throw DataError("n_cells does not match the cell list");
    }
    c.mean_speed = j.at("mean_speed").get<double>();
    c.mean_normalized_speed = j.at("mean_normalized_speed").get<double>();
    c.mean_mahalanobis = j.at("mean_mahalanobis").get<double>();
    c.suppression_p = j.at("p").get<double>();
    c.heading_vel = heading_from(j.at("heading_vel"));
    c.heading_cnn = heading_from(j.at("heading_cnn"));
    c.review = parse_review(j.at("review").get<std::string>());
    return c;
  } catch (const json::exception & e) {
    throw DataError(std::string("bad cluster record: ") + e.what());
  }
}

void write_clusters(std::ostream & out, const std::vector<LabeledCluster> & clusters)
{
  for (const auto & c : clusters) {
    out << to_json_line(c) << '\n';
  }
}

std::vector<LabeledCluster> read_clusters(std::istream & in)
{
  std::vector<LabeledCluster> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    out.push_back(from_json_line(line));
  }
  return out;
}

}  // namespace dogseg::cluster
