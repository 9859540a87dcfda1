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

#ifndef DOGSEG__GRID_HPP_
#define DOGSEG__GRID_HPP_

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dogseg/error.hpp"

namespace dogseg::grid
{

/// Row-major 2-D array. Row index is the world y cell, column the world x cell.
template <typename T>
struct Raster
{
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Raster() = default;
  Raster(int w, int h, T fill = T{}) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  T & at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  const T & at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  T & operator[](std::size_t i) { return data[i]; }
  const T & operator[](std::size_t i) const { return data[i]; }
  std::size_t size() const { return data.size(); }
  template <typename U>
  bool same_shape(const Raster<U> & other) const
  {
    return width == other.width && height == other.height;
  }
  bool operator==(const Raster &) const = default;
};

using Mask = Raster<std::uint8_t>;

struct GridSpec
{
  int side_cells = 128;
  double cell_size = 0.25;  // meters
  double origin_x = 0.0;    // world coordinate of the grid center
  double origin_y = 0.0;

  void validate() const;
  int cell_count() const { return side_cells * side_cells; }
  double half_extent() const { return 0.5 * side_cells * cell_size; }
  double min_x() const { return origin_x - half_extent(); }
  double min_y() const { return origin_y - half_extent(); }
  /// Cell containing a world position, or nullopt outside the grid.
  std::optional<int> cell_of(double x, double y) const;
  double center_x(int ix) const { return min_x() + (ix + 0.5) * cell_size; }
  double center_y(int iy) const { return min_y() + (iy + 0.5) * cell_size; }
  bool operator==(const GridSpec &) const = default;
};

struct Particle
{
  double px = 0.0;
  double py = 0.0;
  double vx = 0.0;
  double vy = 0.0;
  double weight = 0.0;
};

/// Particles of a cell occupy the contiguous range [first, first + count) of the pool.
struct GridCell
{
  double occupancy = 0.5;
  std::uint32_t first = 0;
  std::uint32_t count = 0;
};

struct CellStats
{
  double mean_vx = 0.0;
  double mean_vy = 0.0;
  double var_vx = 0.0;
  double var_vy = 0.0;
  double cov_xy = 0.0;
  double mahalanobis = 0.0;
  double overall_var = 0.0;
  double speed = 0.0;
};

class DynamicGridMap
{
public:
  explicit DynamicGridMap(const GridSpec & spec, double initial_occupancy = 0.5);

  const GridSpec & spec() const { return spec_; }
  int cell_count() const { return static_cast<int>(cells_.size()); }
  double timestamp() const { return timestamp_; }
  void set_timestamp(double t) { timestamp_ = t; }

  const GridCell & cell(int idx) const { return cells_[static_cast<std::size_t>(idx)]; }
  std::span<const GridCell> cells() const { return cells_; }
  double occupancy(int idx) const { return cells_[static_cast<std::size_t>(idx)].occupancy; }
  void set_occupancy(int idx, double p) { cells_[static_cast<std::size_t>(idx)].occupancy = p; }

  std::span<const Particle> particles() const { return particles_; }
  std::span<const Particle> particles_in(int idx) const;
  std::span<Particle> particles_in(int idx);
  double weight_sum(int idx) const;

  /// Replaces the particle pool. Particles outside the grid are deleted; the rest
  /// are grouped (stably) by the cell containing their position.
  void assign_particles(std::vector<Particle> particles);

  bool operator==(const DynamicGridMap &) const;

private:
  GridSpec spec_;
  double timestamp_ = 0.0;
  std::vector<GridCell> cells_;
  std::vector<Particle> particles_;
};

/// Binary Bayes occupancy update with counter hypothesis P(F) = 1 - P(O).
double bayes_update(double prior, double likelihood_occ, double likelihood_free);

/// Variance floor used when normalizing velocities.
inline constexpr double kVarianceFloor = 1e-4;
/// Diagonal regularization added to the velocity covariance before inversion.
inline constexpr double kCovarianceRegularization = 1e-6;

double normalized_velocity(double mean_v, double var_v);

/// sqrt(v^T (S + eps I)^-1 v) for the 2x2 covariance S = [[vxx, cxy], [cxy, vyy]].
double mahalanobis(double vx, double vy, double var_x, double var_y, double cov_xy);

/// Weight-weighted velocity moments over a particle set.
CellStats cell_stats(std::span<const Particle> particles);
CellStats cell_stats(const DynamicGridMap & map, int cell);

/// Per-cell statistics for every cell holding particles.
struct StatsGrid
{
  int side = 0;
  std::vector<CellStats> stats;
  std::vector<std::uint8_t> valid;

  const CellStats & at(int x, int y) const { return stats[static_cast<std::size_t>(y) * side + x]; }
  bool is_valid(int x, int y) const { return valid[static_cast<std::size_t>(y) * side + x] != 0; }
};

StatsGrid compute_stats(const DynamicGridMap & map);

/// Inverse sensor model output: per-cell occupied/free likelihoods. Cells never
/// observed carry (0.5, 0.5).
struct MeasurementGrid
{
  int side = 0;
  std::vector<float> l_occ;
  std::vector<float> l_free;

  MeasurementGrid() = default;
  MeasurementGrid(int side_cells, float occ = 0.5F, float free = 0.5F)
  : side(side_cells),
    l_occ(static_cast<std::size_t>(side_cells) * side_cells, occ),
    l_free(static_cast<std::size_t>(side_cells) * side_cells, free)
  {
  }
  std::size_t size() const { return l_occ.size(); }
  void set(int idx, float occ, float free)
  {
    l_occ[static_cast<std::size_t>(idx)] = occ;
    l_free[static_cast<std::size_t>(idx)] = free;
  }
  bool operator==(const MeasurementGrid &) const = default;
};

/// Cells whose occupancy is at least the threshold.
Mask occupied_mask(const DynamicGridMap & map, double threshold);

// Frame files: "DOGF" magic, u32 version, then tagged chunks (4-byte tag, u64
// payload length, payload). SPEC: i32 side, f64 cell size, f64 origin x/y, f64
// timestamp. OCCP: side^2 f32 occupancies. PART: u32 count, then per particle
// f32 px, py, vx, vy and f64 weight. All little-endian.
void write_frame(std::ostream & out, const DynamicGridMap & map);
DynamicGridMap read_frame(std::istream & in);
void save_frame(const std::string & path, const DynamicGridMap & map);
DynamicGridMap load_frame(const std::string & path);

/// Lossless text dump of per-cell fields for debugging.
void export_cells_csv(std::ostream & out, const DynamicGridMap & map);

}  // namespace dogseg::grid

#endif  // DOGSEG__GRID_HPP_
