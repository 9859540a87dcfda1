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

#ifndef DOGSEG__SENSOR_SIM_HPP_
#define DOGSEG__SENSOR_SIM_HPP_

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dogseg/grid.hpp"

namespace dogseg::sim
{

enum class ObjectKind { kVehicle, kPedestrian, kWall, kClutter };
enum class Motion { kConstantVelocity, kStationary, kWaypoints };

struct Waypoint
{
  double x = 0.0;
  double y = 0.0;
};

struct ScenarioObject
{
  ObjectKind kind = ObjectKind::kVehicle;
  double length = 4.5;  // along heading, m
  double width = 1.8;   // m
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;  // rad
  double speed = 0.0;    // m/s
  Motion motion = Motion::kStationary;
  std::vector<Waypoint> waypoints;
  std::size_t next_waypoint = 0;
  bool loop = false;  // waypoint paths restart at the first waypoint
  bool wrap = false;  // constant-velocity objects re-enter on the opposite side

  // Clutter: random walk around an anchor with a fresh phantom velocity each step.
  double anchor_x = 0.0;
  double anchor_y = 0.0;
  double jitter_radius = 1.0;
  double phantom_speed = 4.0;
  double detect_prob = 1.0;

  bool is_moving() const;
};

struct SensorModel
{
  int beams = 360;
  double max_range = 0.0;  // 0 = cover the whole grid
  float hit_occ = 0.85F;
  float hit_free = 0.15F;
  float pass_occ = 0.15F;
  float pass_free = 0.85F;
};

struct Scenario
{
  std::string name = "unnamed";
  double duration = 20.0;
  double dt = 0.1;
  std::uint64_t seed = 1;
  double wrap_extent = 20.0;  // |x|, |y| beyond which wrapping objects re-enter
  SensorModel sensor;
  std::vector<ScenarioObject> objects;
  std::uint64_t step_index = 0;

  int frame_count() const;
};

/// Speed above which an object's footprint is labeled dynamic.
inline constexpr double kMovingSpeed = 0.1;

Scenario step_world(Scenario scenario, double dt);

/// Ray-cast inverse sensor model from the grid center.
grid::MeasurementGrid render_measurement(const Scenario & scenario, const grid::GridSpec & spec, int beams);
grid::MeasurementGrid render_measurement(const Scenario & scenario, const grid::GridSpec & spec);

/// Per-beam range to the first visible object (infinity when nothing is hit).
std::vector<double> cast_beams(const Scenario & scenario, double sensor_x, double sensor_y, int beams);

struct GroundTruth
{
  grid::Mask labels;              // 1 = dynamic, 0 = static
  grid::Raster<float> heading;    // rad on the dynamic support, NaN elsewhere
};

GroundTruth ground_truth(const Scenario & scenario, const grid::GridSpec & spec);

Scenario parse_scenario(std::istream & in);
Scenario load_scenario(const std::string & path);
void write_scenario(std::ostream & out, const Scenario & scenario);

/// Built-in scenarios: "road", "intersection", "crossing", "parking_lot".
std::vector<std::string> canned_scenario_names();
Scenario canned_scenario(const std::string & name);
/// Canned name or path to a scenario file.
Scenario resolve_scenario(const std::string & name_or_path);

std::string to_string(ObjectKind kind);

}  // namespace dogseg::sim

#endif  // DOGSEG__SENSOR_SIM_HPP_
