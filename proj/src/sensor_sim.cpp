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

#include "dogseg/sensor_sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>

#include "canned_scenarios.hpp"

namespace dogseg::sim
{

namespace
{

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::uint64_t splitmix(std::uint64_t x)
{
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30U)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27U)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31U);
}

// Independent stream per (seed, step, object, purpose) so results do not depend on
// evaluation order.
std::mt19937_64 stream(std::uint64_t seed, std::uint64_t step, std::size_t object, std::uint64_t salt)
{
  return std::mt19937_64(splitmix(splitmix(splitmix(seed) ^ step) ^ (object * 0x100000001b3ULL)) ^ salt);
}

double wrap_coordinate(double v, double extent)
{
  if (v > extent) {
    return v - 2.0 * extent;
  }
  if (v < -extent) {
    return v + 2.0 * extent;
  }
  return v;
}

void advance_waypoints(ScenarioObject & o, double dt)
{
  double budget = o.speed * dt;
  while (budget > 0.0 && o.next_waypoint < o.waypoints.size()) {
    const auto & wp = o.waypoints[o.next_waypoint];
    const double dx = wp.x - o.x;
    const double dy = wp.y - o.y;
    const double dist = std::hypot(dx, dy);
    if (dist > 1e-12) {
      o.heading = std::atan2(dy, dx);
    }
    if (dist > budget) {
      o.x += budget * dx / dist;
      o.y += budget * dy / dist;
      return;
    }
    o.x = wp.x;
    o.y = wp.y;
    budget -= dist;
    ++o.next_waypoint;
    if (o.next_waypoint == o.waypoints.size() && o.loop && o.waypoints.size() > 1) {
      o.x = o.waypoints.front().x;
      o.y = o.waypoints.front().y;
      o.next_waypoint = 1;
      const auto & nxt = o.waypoints[1];
      o.heading = std::atan2(nxt.y - o.y, nxt.x - o.x);
      return;
    }
  }
  if (o.next_waypoint >= o.waypoints.size()) {
    o.speed = 0.0;
    o.motion = Motion::kStationary;
  }
}

// Distance along the ray to the rectangle, or infinity. Rays starting inside ignore it.
double ray_rectangle(const ScenarioObject & o, double ox, double oy, double dx, double dy)
{
  const double c = std::cos(o.heading);
  const double s = std::sin(o.heading);
  const double rx = ox - o.x;
  const double ry = oy - o.y;
  const double lx = c * rx + s * ry;
  const double ly = -s * rx + c * ry;
  const double ldx = c * dx + s * dy;
  const double ldy = -s * dx + c * dy;
  const double hx = 0.5 * o.length;
  const double hy = 0.5 * o.width;
  if (std::abs(lx) <= hx && std::abs(ly) <= hy) {
    return std::numeric_limits<double>::infinity();
  }
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  const auto slab = [&](double p, double d, double h) {
    if (std::abs(d) < 1e-15) {
      return std::abs(p) <= h;
    }
    double a = (-h - p) / d;
    double b = (h - p) / d;
    if (a > b) {
      std::swap(a, b);
    }
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
    return t0 <= t1;
  };
  if (!slab(lx, ldx, hx) || !slab(ly, ldy, hy) || t1 < 0.0 || t0 < 0.0) {
    return std::numeric_limits<double>::infinity();
  }
  return t0;
}

bool covers(const ScenarioObject & o, double px, double py, double margin)
{
  const double c = std::cos(o.heading);
  const double s = std::sin(o.heading);
  const double rx = px - o.x;
  const double ry = py - o.y;
  const double lx = c * rx + s * ry;
  const double ly = -s * rx + c * ry;
  return std::abs(lx) <= 0.5 * o.length + margin && std::abs(ly) <= 0.5 * o.width + margin;
}

bool visible(const Scenario & scenario, std::size_t k)
{
  const auto & o = scenario.objects[k];
  if (o.kind != ObjectKind::kClutter || o.detect_prob >= 1.0) {
    return true;
  }
  auto rng = stream(scenario.seed, scenario.step_index, k, 0xd37ec7ULL);
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < o.detect_prob;
}

}  // namespace

bool ScenarioObject::is_moving() const
{
  return kind != ObjectKind::kClutter && kind != ObjectKind::kWall && speed > kMovingSpeed;
}

int Scenario::frame_count() const
{
  return static_cast<int>(std::lround(duration / dt));
}

Scenario step_world(Scenario scenario, double dt)
{
  if (!(dt > 0.0)) {
    throw ConfigError("world step dt must be positive");
  }
  for (std::size_t k = 0; k < scenario.objects.size(); ++k) {
    auto & o = scenario.objects[k];
    if (o.kind == ObjectKind::kWall) {
      continue;
    }
    if (o.kind == ObjectKind::kClutter) {
      auto rng = stream(scenario.seed, scenario.step_index, k, 0xc1a77eULL);
      std::uniform_real_distribution<double> u01(0.0, 1.0);
      const double angle = kTwoPi * u01(rng);
      const double v = o.phantom_speed * (0.5 + 0.5 * u01(rng));
      o.heading = angle;
      o.speed = v;
      o.x += v * std::cos(angle) * dt;
      o.y += v * std::sin(angle) * dt;
      const double ex = o.x - o.anchor_x;
      const double ey = o.y - o.anchor_y;
      const double d = std::hypot(ex, ey);
      if (d > o.jitter_radius) {
        o.x = o.anchor_x + ex * (o.jitter_radius / d) * 0.5;
        o.y = o.anchor_y + ey * (o.jitter_radius / d) * 0.5;
      }
      continue;
    }
    switch (o.motion) {
      case Motion::kStationary:
        break;
      case Motion::kConstantVelocity:
        o.x += o.speed * std::cos(o.heading) * dt;
        o.y += o.speed * std::sin(o.heading) * dt;
        if (o.wrap) {
          o.x = wrap_coordinate(o.x, scenario.wrap_extent);
          o.y = wrap_coordinate(o.y, scenario.wrap_extent);
        }
        break;
      case Motion::kWaypoints:
        advance_waypoints(o, dt);
        break;
    }
  }
  ++scenario.step_index;
  return scenario;
}

std::vector<double> cast_beams(const Scenario & scenario, double sensor_x, double sensor_y, int beams)
{
  std::vector<double> ranges(static_cast<std::size_t>(beams), std::numeric_limits<double>::infinity());
  std::vector<std::uint8_t> shown(scenario.objects.size());
  for (std::size_t k = 0; k < scenario.objects.size(); ++k) {
    shown[k] = visible(scenario, k) ? 1 : 0;
  }
  for (int b = 0; b < beams; ++b) {
    const double a = kTwoPi * b / beams;
    const double dx = std::cos(a);
    const double dy = std::sin(a);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < scenario.objects.size(); ++k) {
      if (shown[k]) {
        best = std::min(best, ray_rectangle(scenario.objects[k], sensor_x, sensor_y, dx, dy));
      }
    }
    ranges[static_cast<std::size_t>(b)] = best;
  }
  return ranges;
}

grid::MeasurementGrid render_measurement(const Scenario & scenario, const grid::GridSpec & spec, int beams)
{
  if (beams < 16) {
    throw ConfigError("need at least 16 beams");
  }
  const auto & sensor = scenario.sensor;
  const double sx = spec.origin_x;
  const double sy = spec.origin_y;
  const double max_range =
    sensor.max_range > 0.0 ? sensor.max_range : std::sqrt(2.0) * spec.half_extent() + spec.cell_size;
  const auto ranges = cast_beams(scenario, sx, sy, beams);
  const int side = spec.side_cells;
  grid::MeasurementGrid meas(side);

  const double step = kTwoPi / beams;
  for (int iy = 0; iy < side; ++iy) {
    for (int ix = 0; ix < side; ++ix) {
      const double dx = spec.center_x(ix) - sx;
      const double dy = spec.center_y(iy) - sy;
      const double d = std::hypot(dx, dy);
      if (d > max_range) {
        continue;
      }
      double a = std::atan2(dy, dx);
      if (a < 0.0) {
        a += kTwoPi;
      }
      const int b = static_cast<int>(std::lround(a / step)) % beams;
      if (d + 0.5 * spec.cell_size <= ranges[static_cast<std::size_t>(b)]) {
        meas.set(iy * side + ix, sensor.pass_occ, sensor.pass_free);
      }
    }
  }
  for (int b = 0; b < beams; ++b) {
    const double r = ranges[static_cast<std::size_t>(b)];
    if (!(r <= max_range)) {
      continue;
    }
    const double a = step * b;
    const auto cell = spec.cell_of(sx + (r + 1e-4) * std::cos(a), sy + (r + 1e-4) * std::sin(a));
    if (cell) {
      meas.set(*cell, sensor.hit_occ, sensor.hit_free);
    }
  }
  return meas;
}

grid::MeasurementGrid render_measurement(const Scenario & scenario, const grid::GridSpec & spec)
{
  return render_measurement(scenario, spec, scenario.sensor.beams);
}

GroundTruth ground_truth(const Scenario & scenario, const grid::GridSpec & spec)
{
  const int side = spec.side_cells;
  GroundTruth truth{grid::Mask(side, side, 0),
                    grid::Raster<float>(side, side, std::numeric_limits<float>::quiet_NaN())};
  // A cell counts as covered when the footprint reaches any part of it.
  const double margin = 0.5 * spec.cell_size;
  for (const auto & o : scenario.objects) {
    if (!o.is_moving()) {
      continue;
    }
    const double reach = 0.5 * std::hypot(o.length, o.width) + spec.cell_size;
    const int x0 = std::max(0, static_cast<int>(std::floor((o.x - reach - spec.min_x()) / spec.cell_size)));
    const int x1 = std::min(side - 1, static_cast<int>(std::floor((o.x + reach - spec.min_x()) / spec.cell_size)));
    const int y0 = std::max(0, static_cast<int>(std::floor((o.y - reach - spec.min_y()) / spec.cell_size)));
    const int y1 = std::min(side - 1, static_cast<int>(std::floor((o.y + reach - spec.min_y()) / spec.cell_size)));
    double heading = std::fmod(o.heading, kTwoPi);
    if (heading < 0.0) {
      heading += kTwoPi;
    }
    for (int iy = y0; iy <= y1; ++iy) {
      for (int ix = x0; ix <= x1; ++ix) {
        if (covers(o, spec.center_x(ix), spec.center_y(iy), margin)) {
          truth.labels.at(ix, iy) = 1;
          truth.heading.at(ix, iy) = static_cast<float>(heading);
        }
      }
    }
  }
  return truth;
}

// ---------------------------------------------------------------------------
// Scenario text format

namespace
{

ObjectKind parse_kind(const std::string & s)
{
  if (s == "vehicle") return ObjectKind::kVehicle;
  if (s == "pedestrian") return ObjectKind::kPedestrian;
  if (s == "wall") return ObjectKind::kWall;
  if (s == "clutter") return ObjectKind::kClutter;
  throw DataError("unknown object kind '" + s + "'");
}

Motion parse_motion(const std::string & s)
{
  if (s == "cv") return Motion::kConstantVelocity;
  if (s == "stationary") return Motion::kStationary;
  if (s == "path") return Motion::kWaypoints;
  throw DataError("unknown motion model '" + s + "'");
}

std::string motion_name(Motion m)
{
  switch (m) {
    case Motion::kConstantVelocity:
      return "cv";
    case Motion::kWaypoints:
      return "path";
    case Motion::kStationary:
    default:
      return "stationary";
  }
}

double to_double(const std::string & key, const std::string & v)
{
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) {
      throw std::invalid_argument(v);
    }
    return d;
  } catch (const std::exception &) {
    throw DataError("bad number for '" + key + "': " + v);
  }
}

std::vector<Waypoint> parse_waypoints(const std::string & v)
{
  std::vector<Waypoint> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ';')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) {
      throw DataError("waypoint needs x:y, got " + item);
    }
    out.push_back({to_double("waypoints", item.substr(0, colon)), to_double("waypoints", item.substr(colon + 1))});
  }
  return out;
}

ScenarioObject parse_object(std::istringstream & tokens)
{
  ScenarioObject o;
  bool have_anchor = false;
  std::string tok;
  while (tokens >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) {
      throw DataError("expected key=value, got " + tok);
    }
    const std::string key = tok.substr(0, eq);
    const std::string val = tok.substr(eq + 1);
    if (key == "kind") {
      o.kind = parse_kind(val);
    } else if (key == "length") {
      o.length = to_double(key, val);
    } else if (key == "width") {
      o.width = to_double(key, val);
    } else if (key == "x") {
      o.x = to_double(key, val);
    } else if (key == "y") {
      o.y = to_double(key, val);
    } else if (key == "heading") {
      o.heading = to_double(key, val);
    } else if (key == "heading_deg") {
      o.heading = to_double(key, val) * std::numbers::pi / 180.0;
    } else if (key == "speed") {
      o.speed = to_double(key, val);
    } else if (key == "motion") {
      o.motion = parse_motion(val);
    } else if (key == "waypoints") {
      o.waypoints = parse_waypoints(val);
    } else if (key == "loop") {
      o.loop = val == "1" || val == "true";
    } else if (key == "wrap") {
      o.wrap = val == "1" || val == "true";
    } else if (key == "anchor_x") {
      o.anchor_x = to_double(key, val);
      have_anchor = true;
    } else if (key == "anchor_y") {
      o.anchor_y = to_double(key, val);
      have_anchor = true;
    } else if (key == "radius") {
      o.jitter_radius = to_double(key, val);
    } else if (key == "phantom") {
      o.phantom_speed = to_double(key, val);
    } else if (key == "detect") {
      o.detect_prob = to_double(key, val);
    } else {
      throw DataError("unknown object key '" + key + "'");
    }
  }
  if (o.kind == ObjectKind::kWall) {
    o.speed = 0.0;
    o.motion = Motion::kStationary;
  }
  if (o.kind == ObjectKind::kClutter && !have_anchor) {
    o.anchor_x = o.x;
    o.anchor_y = o.y;
  }
  if (o.motion == Motion::kWaypoints) {
    if (o.waypoints.empty()) {
      throw DataError("path motion needs waypoints");
    }
    // Face the first waypoint that is not the start position.
    while (o.next_waypoint < o.waypoints.size() &&
           std::hypot(o.waypoints[o.next_waypoint].x - o.x, o.waypoints[o.next_waypoint].y - o.y) < 1e-9) {
      ++o.next_waypoint;
    }
    if (o.next_waypoint < o.waypoints.size()) {
      const auto & wp = o.waypoints[o.next_waypoint];
      o.heading = std::atan2(wp.y - o.y, wp.x - o.x);
    }
  }
  if (!(o.length > 0.0 && o.width > 0.0)) {
    throw DataError("object shape must be positive");
  }
  return o;
}

std::string trim(const std::string & s)
{
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) {
    return {};
  }
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

Scenario parse_scenario(std::istream & in)
{
  Scenario sc;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) {
      line.resize(hash);
    }
    line = trim(line);
    if (line.empty()) {
      continue;
    }
    std::istringstream tokens(line);
    std::string head;
    tokens >> head;
    try {
      if (head == "object") {
        sc.objects.push_back(parse_object(tokens));
        continue;
      }
      std::string value;
      tokens >> value;
      if (head == "name") {
        sc.name = value;
      } else if (head == "duration") {
        sc.duration = to_double(head, value);
      } else if (head == "dt") {
        sc.dt = to_double(head, value);
      } else if (head == "seed") {
        sc.seed = std::stoull(value);
      } else if (head == "wrap") {
        sc.wrap_extent = to_double(head, value);
      } else if (head == "beams") {
        sc.sensor.beams = static_cast<int>(to_double(head, value));
      } else if (head == "max_range") {
        sc.sensor.max_range = to_double(head, value);
      } else {
        throw DataError("unknown directive '" + head + "'");
      }
    } catch (const DataError & e) {
      throw DataError("scenario line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!(sc.dt > 0.0) || !(sc.duration > 0.0)) {
    throw DataError("scenario duration and dt must be positive");
  }
  return sc;
}

Scenario load_scenario(const std::string & path)
{
  std::ifstream in(path);
  if (!in) {
    throw NotFoundError("cannot open scenario " + path);
  }
  return parse_scenario(in);
}

std::string to_string(ObjectKind kind)
{
  switch (kind) {
    case ObjectKind::kVehicle:
      return "vehicle";
    case ObjectKind::kPedestrian:
      return "pedestrian";
    case ObjectKind::kWall:
      return "wall";
    case ObjectKind::kClutter:
    default:
      return "clutter";
  }
}

void write_scenario(std::ostream & out, const Scenario & sc)
{
  std::ostringstream os;
  os << std::setprecision(17);
  os << "name " << sc.name << "\nduration " << sc.duration << "\ndt " << sc.dt << "\nseed " << sc.seed
     << "\nwrap " << sc.wrap_extent << "\nbeams " << sc.sensor.beams << "\nmax_range " << sc.sensor.max_range
     << '\n';
  for (const auto & o : sc.objects) {
    os << "object kind=" << to_string(o.kind) << " length=" << o.length << " width=" << o.width << " x=" << o.x
       << " y=" << o.y << " heading=" << o.heading << " speed=" << o.speed << " motion=" << motion_name(o.motion);
    if (!o.waypoints.empty()) {
      os << " waypoints=";
      for (std::size_t i = 0; i < o.waypoints.size(); ++i) {
        os << (i ? ";" : "") << o.waypoints[i].x << ':' << o.waypoints[i].y;
      }
    }
    if (o.loop) os << " loop=1";
    if (o.wrap) os << " wrap=1";
    if (o.kind == ObjectKind::kClutter) {
      os << " anchor_x=" << o.anchor_x << " anchor_y=" << o.anchor_y << " radius=" << o.jitter_radius
         << " phantom=" << o.phantom_speed << " detect=" << o.detect_prob;
    }
    os << '\n';
  }
  out << os.str();
}

std::vector<std::string> canned_scenario_names()
{
  std::vector<std::string> names;
  for (const auto & s : detail::kCannedScenarios) {
    names.emplace_back(s.name);
  }
  return names;
}

Scenario canned_scenario(const std::string & name)
{
  for (const auto & s : detail::kCannedScenarios) {
    if (name == s.name) {
      std::istringstream in{std::string(s.text)};
      return parse_scenario(in);
    }
  }
  throw NotFoundError("no canned scenario named '" + name + "'");
}

Scenario resolve_scenario(const std::string & name_or_path)
{
  for (const auto & s : detail::kCannedScenarios) {
    if (name_or_path == s.name) {
      return canned_scenario(name_or_path);
    }
  }
  return load_scenario(name_or_path);
}

}  // namespace dogseg::sim
