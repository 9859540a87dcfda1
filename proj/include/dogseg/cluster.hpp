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

#ifndef DOGSEG__CLUSTER_HPP_
#define DOGSEG__CLUSTER_HPP_

#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "dogseg/encoder.hpp"
#include "dogseg/grid.hpp"

namespace dogseg::cluster
{

/// Returned when a heading cannot be extracted (cancelling or vanishing vectors).
inline constexpr double kUndefinedHeading = std::numeric_limits<double>::quiet_NaN();

struct Cell
{
  int x = 0;
  int y = 0;
  bool operator==(const Cell &) const = default;
  auto operator<=>(const Cell & o) const { return y != o.y ? y <=> o.y : x <=> o.x; }
};

enum class Review { kAuto, kAccepted, kRejected, kFlipped };

std::string to_string(Review r);
Review parse_review(const std::string & text);

struct LabeledCluster
{
  std::string frame_id;
  int id = 0;
  std::vector<Cell> cells;       // row-major order
  std::vector<Cell> hull;        // counter-clockwise, no collinear vertices
  double mean_speed = 0.0;       // m/s
  double mean_normalized_speed = 0.0;
  double mean_mahalanobis = 0.0;
  double suppression_p = 0.0;    // mean_mahalanobis * mean_speed
  double heading_vel = kUndefinedHeading;
  double heading_cnn = kUndefinedHeading;
  Review review = Review::kAuto;
};

struct BaselineResult
{
  grid::Raster<float> score;  // per-cell Mahalanobis distance
  grid::Mask mask;            // score >= threshold on occupied cells
};

/// Mahalanobis baseline. The distance itself is thresholded, not its square.
BaselineResult baseline_classify(const enc::FeatureFrame & frame, double threshold);

/// Keeps only occupied cells of a prediction.
grid::Mask refine_with_occupancy(const grid::Mask & prediction, const grid::Mask & occupied);
/// Probability variant: unoccupied cells drop to 0.
grid::Raster<float> refine_with_occupancy(const grid::Raster<float> & probability, const grid::Mask & occupied);

inline constexpr double kDefaultEps = 1.5;
inline constexpr int kDefaultMinPts = 3;

/// DBSCAN over cell centers with Euclidean eps (in cells). The neighborhood
/// includes the point itself. Border points go to the cluster of their nearest
/// core point (ties: first core in row-major order), so the partition does not
/// depend on enumeration order. Clusters are sorted by their first cell.
std::vector<std::vector<Cell>> dbscan(std::vector<Cell> points, double eps = kDefaultEps, int min_pts = kDefaultMinPts);
std::vector<std::vector<Cell>> dbscan(const grid::Mask & mask, double eps = kDefaultEps, int min_pts = kDefaultMinPts);

/// Andrew's monotone chain. Fewer than three distinct or all-collinear points
/// give the degenerate hull (extreme points only).
std::vector<Cell> convex_hull(std::vector<Cell> points);
/// Boundary counts as inside.
bool hull_contains(const std::vector<Cell> & hull, const Cell & p);

/// atan2 of the mean member velocity.
double orientation_velocity(const std::vector<Cell> & cells, const enc::FeatureFrame & frame);
/// atan2 of the mean (sin, cos) over member cells.
double orientation_cnn(const std::vector<Cell> & cells, const grid::Raster<float> & sin_map, const grid::Raster<float> & cos_map);

/// Builds the cluster record: hull, speed and Mahalanobis means, p, velocity heading.
LabeledCluster describe(const std::string & frame_id, int id, std::vector<Cell> cells, const enc::FeatureFrame & frame);

/// Baseline (or any mask) -> refine -> dbscan -> described clusters, ids from 0.
std::vector<LabeledCluster> extract_clusters(
  const std::string & frame_id, const grid::Mask & dynamic, const enc::FeatureFrame & frame,
  double eps = kDefaultEps, int min_pts = kDefaultMinPts);

// One JSON object per line. NaN headings are written as null.
void write_clusters(std::ostream & out, const std::vector<LabeledCluster> & clusters);
std::vector<LabeledCluster> read_clusters(std::istream & in);
std::string to_json_line(const LabeledCluster & c);
LabeledCluster from_json_line(const std::string & line);

}  // namespace dogseg::cluster

#endif  // DOGSEG__CLUSTER_HPP_
