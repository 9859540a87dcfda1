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

#ifndef DOGSEG__DOG_FILTER_HPP_
#define DOGSEG__DOG_FILTER_HPP_

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "dogseg/grid.hpp"

namespace dogseg::dog
{

using Rng = std::mt19937_64;

struct FilterParams
{
  double dt = 0.1;
  double process_noise_pos = 0.01;  // m
  double process_noise_vel = 0.1;   // m/s
  int particles_per_occupied_cell = 64;
  double newborn_ratio_gamma = 0.1;
  // Cells at or above this posterior keep a particle population after resampling.
  double occupancy_threshold = 0.6;
  // Newborn velocities are uniform in [-v_max, v_max] per axis.
  double newborn_v_max = 16.7;
  // Probability of an independent birth event in a cell with a detection.
  double birth_prior = 0.5;
  std::uint64_t rng_seed = 1;

  void validate() const;
};

/// One particle's move from its source cell to its destination cell.
struct Transition
{
  int source = 0;
  int destination = 0;
  double weight = 0.0;
};

struct Prediction
{
  grid::DynamicGridMap map;
  std::vector<double> prior;             // a-priori occupancy per cell
  std::vector<Transition> transitions;   // particles that stayed inside the grid
};

/// Upper clamp applied to the a-priori occupancy.
inline constexpr double kMaxPrior = 1.0 - 1e-6;

/// Constant-velocity propagation with Gaussian noise. Particle-free cells keep their
/// occupancy as a stationary transition onto themselves.
Prediction predict(const grid::DynamicGridMap & map, const FilterParams & params, Rng & rng);

/// a-priori occupancy from per-cell products of (1 - transition mass).
std::vector<double> prior_from_transitions(
  const grid::DynamicGridMap & source_map, std::span<const Transition> transitions);

/// Posterior occupancy and rescaled particle weights (sum equals posterior per cell).
/// Adds an independent birth event to the prior of every cell with a detection,
/// so objects can appear where nothing was predicted.
std::vector<double> birth_floor(
  std::span<const double> prior, const grid::MeasurementGrid & measurement, const FilterParams & params);

grid::DynamicGridMap update(
  grid::DynamicGridMap predicted, std::span<const double> prior, const grid::MeasurementGrid & measurement);

/// Per occupied cell: survivors by systematic resampling plus newborns with mass ratio
/// gamma * posterior / prior. Cells below the occupancy threshold lose their particles.
grid::DynamicGridMap resample(
  const grid::DynamicGridMap & posterior, std::span<const double> prior, const FilterParams & params,
  Rng & rng);

/// Indices drawn by low-variance resampling; `weights` need not be normalized.
std::vector<int> systematic_resample(std::span<const double> weights, int draws, Rng & rng);

class DogFilter
{
public:
  explicit DogFilter(const FilterParams & params);

  const FilterParams & params() const { return params_; }
  /// predict -> update -> resample; advances the timestamp by dt.
  grid::DynamicGridMap step(const grid::DynamicGridMap & map, const grid::MeasurementGrid & measurement);

private:
  FilterParams params_;
  Rng rng_;
};

}  // namespace dogseg::dog

#endif  // DOGSEG__DOG_FILTER_HPP_
