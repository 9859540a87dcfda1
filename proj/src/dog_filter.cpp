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

#include "dogseg/dog_filter.hpp"

#include <algorithm>
#include <cmath>

namespace dogseg::dog
{

void FilterParams::validate() const
{
  if (!(dt > 0.0)) {
    throw ConfigError("filter dt must be positive");
  }
  if (process_noise_pos < 0.0 || process_noise_vel < 0.0) {
    throw ConfigError("process noise must be non-negative");
  }
  if (!(newborn_ratio_gamma > 0.0)) {
    throw ConfigError("newborn ratio gamma must be positive");
  }
  if (particles_per_occupied_cell < 2) {
    throw ConfigError("need at least two particles per occupied cell");
  }
  if (!(occupancy_threshold > 0.0 && occupancy_threshold < 1.0)) {
    throw ConfigError("occupancy threshold must lie in (0, 1)");
  }
  if (!(birth_prior >= 0.0 && birth_prior < 1.0)) {
    throw ConfigError("birth prior must lie in [0, 1)");
  }
}

std::vector<double> prior_from_transitions(
  const grid::DynamicGridMap & source_map, std::span<const Transition> transitions)
{
  const auto n = static_cast<std::size_t>(source_map.cell_count());
  std::vector<double> keep(n, 1.0);  // running product of (1 - P(E^{c<-a}))

  // Transitions arrive grouped by source cell; sum per (source, destination) pair.
  std::vector<std::pair<int, double>> per_dest;
  std::size_t i = 0;
  while (i < transitions.size()) {
    const int src = transitions[i].source;
    per_dest.clear();
    for (; i < transitions.size() && transitions[i].source == src; ++i) {
      per_dest.emplace_back(transitions[i].destination, transitions[i].weight);
    }
    std::stable_sort(per_dest.begin(), per_dest.end(), [](const auto & a, const auto & b) {
      return a.first < b.first;
    });
    std::size_t j = 0;
    while (j < per_dest.size()) {
      const int dst = per_dest[j].first;
      double mass = 0.0;
      for (; j < per_dest.size() && per_dest[j].first == dst; ++j) {
        mass += per_dest[j].second;
      }
      keep[static_cast<std::size_t>(dst)] *= 1.0 - std::min(mass, 1.0);
    }
  }
  for (int c = 0; c < source_map.cell_count(); ++c) {
    if (source_map.cell(c).count == 0) {
      keep[static_cast<std::size_t>(c)] *= 1.0 - source_map.occupancy(c);
    }
  }
  std::vector<double> prior(n);
  for (std::size_t c = 0; c < n; ++c) {
    prior[c] = std::clamp(1.0 - keep[c], 0.0, kMaxPrior);
  }
  return prior;
}

Prediction predict(const grid::DynamicGridMap & map, const FilterParams & params, Rng & rng)
{
  const auto & spec = map.spec();
  const double T = params.dt;
  std::normal_distribution<double> pos_noise(0.0, 1.0);

  std::vector<grid::Particle> moved;
  std::vector<Transition> transitions;
  moved.reserve(map.particles().size());
  transitions.reserve(map.particles().size());
  for (int src = 0; src < map.cell_count(); ++src) {
    for (const auto & p : map.particles_in(src)) {
      grid::Particle q = p;
      q.px = p.px + T * p.vx + params.process_noise_pos * pos_noise(rng);
      q.py = p.py + T * p.vy + params.process_noise_pos * pos_noise(rng);
      q.vx = p.vx + params.process_noise_vel * pos_noise(rng);
      q.vy = p.vy + params.process_noise_vel * pos_noise(rng);
      const auto dst = spec.cell_of(q.px, q.py);
      if (!dst) {
        continue;
      }
      transitions.push_back({src, *dst, q.weight});
      moved.push_back(q);
    }
  }

  Prediction out{grid::DynamicGridMap(spec), prior_from_transitions(map, transitions), std::move(transitions)};
  out.map.set_timestamp(map.timestamp());
  out.map.assign_particles(std::move(moved));
  for (int c = 0; c < out.map.cell_count(); ++c) {
    out.map.set_occupancy(c, out.prior[static_cast<std::size_t>(c)]);
  }
  return out;
}

std::vector<double> birth_floor(
  std::span<const double> prior, const grid::MeasurementGrid & measurement, const FilterParams & params)
{
  if (prior.size() != measurement.size()) {
    throw ShapeError("measurement grid does not match the prior");
  }
  std::vector<double> out(prior.begin(), prior.end());
  for (std::size_t c = 0; c < out.size(); ++c) {
    if (measurement.l_occ[c] > measurement.l_free[c]) {
      out[c] = 1.0 - (1.0 - out[c]) * (1.0 - params.birth_prior);
    }
  }
  return out;
}

grid::DynamicGridMap update(
  grid::DynamicGridMap predicted, std::span<const double> prior, const grid::MeasurementGrid & measurement)
{
  if (measurement.side != predicted.spec().side_cells || prior.size() != measurement.size()) {
    throw ShapeError("measurement grid does not match the map");
  }
  for (int c = 0; c < predicted.cell_count(); ++c) {
    const auto idx = static_cast<std::size_t>(c);
    const double l_occ = measurement.l_occ[idx];
    const double l_free = measurement.l_free[idx];
    const double posterior = grid::bayes_update(prior[idx], l_occ, l_free);
    predicted.set_occupancy(c, posterior);

    auto ps = predicted.particles_in(c);
    if (ps.empty()) {
      continue;
    }
    // The measurement likelihood is shared by all particles of a cell, so the
    // normalization reduces to rescaling the predicted weights onto the posterior.
    double unnormalized = 0.0;
    for (auto & q : ps) {
      q.weight *= l_occ;
      unnormalized += q.weight;
    }
    if (unnormalized > 0.0) {
      const double beta = unnormalized / posterior;
      for (auto & q : ps) {
        q.weight /= beta;
      }
    } else {
      for (auto & q : ps) {
        q.weight = posterior / static_cast<double>(ps.size());
      }
    }
  }
  return predicted;
}

std::vector<int> systematic_resample(std::span<const double> weights, int draws, Rng & rng)
{
  std::vector<int> picks;
  if (draws <= 0 || weights.empty()) {
    return picks;
  }
  double total = 0.0;
  for (double w : weights) {
    total += w;
  }
  picks.reserve(static_cast<std::size_t>(draws));
  if (!(total > 0.0)) {
    for (int k = 0; k < draws; ++k) {
      picks.push_back(k % static_cast<int>(weights.size()));
    }
    return picks;
  }
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double step = total / draws;
  double u = u01(rng) * step;
  double cumulative = weights[0];
  std::size_t i = 0;
  for (int k = 0; k < draws; ++k) {
    while (u > cumulative && i + 1 < weights.size()) {
      ++i;
      cumulative += weights[i];
    }
    picks.push_back(static_cast<int>(i));
    u += step;
  }
  return picks;
}

grid::DynamicGridMap resample(
  const grid::DynamicGridMap & posterior, std::span<const double> prior, const FilterParams & params,
  Rng & rng)
{
  const auto & spec = posterior.spec();
  const int n = params.particles_per_occupied_cell;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_real_distribution<double> vel(-params.newborn_v_max, params.newborn_v_max);

  grid::DynamicGridMap out(spec);
  out.set_timestamp(posterior.timestamp());
  std::vector<grid::Particle> pool;
  std::vector<double> weights;
  for (int c = 0; c < posterior.cell_count(); ++c) {
    const double occ = posterior.occupancy(c);
    out.set_occupancy(c, occ);
    if (occ < params.occupancy_threshold) {
      continue;
    }
    const auto ps = posterior.particles_in(c);
    const double pred = prior[static_cast<std::size_t>(c)];

    double survivor_mass = 0.0;
    double newborn_mass = occ;
    if (!ps.empty() && pred > 0.0) {
      const double ratio = params.newborn_ratio_gamma * occ / pred;
      survivor_mass = occ / (1.0 + ratio);
      newborn_mass = occ - survivor_mass;
    }

    int n_new = n;
    if (survivor_mass > 0.0) {
      n_new = static_cast<int>(std::lround(n * newborn_mass / occ));
      n_new = std::clamp(n_new, 1, n - 1);
    }
    const int n_surv = n - n_new;

    if (n_surv > 0) {
      weights.clear();
      for (const auto & q : ps) {
        weights.push_back(q.weight);
      }
      const double w = survivor_mass / n_surv;
      for (int idx : systematic_resample(weights, n_surv, rng)) {
        grid::Particle q = ps[static_cast<std::size_t>(idx)];
        q.weight = w;
        pool.push_back(q);
      }
    }
    const double x0 = spec.min_x() + (c % spec.side_cells) * spec.cell_size;
    const double y0 = spec.min_y() + (c / spec.side_cells) * spec.cell_size;
    const double w_new = newborn_mass / n_new;
    for (int k = 0; k < n_new; ++k) {
      grid::Particle q;
      // Keep newborns strictly inside their cell.
      q.px = x0 + (0.001 + 0.998 * u01(rng)) * spec.cell_size;
      q.py = y0 + (0.001 + 0.998 * u01(rng)) * spec.cell_size;
      q.vx = vel(rng);
      q.vy = vel(rng);
      q.weight = w_new;
      pool.push_back(q);
    }
  }
  out.assign_particles(std::move(pool));
  return out;
}

DogFilter::DogFilter(const FilterParams & params) : params_(params), rng_(params.rng_seed)
{
  params_.validate();
}

grid::DynamicGridMap DogFilter::step(const grid::DynamicGridMap & map, const grid::MeasurementGrid & measurement)
{
  auto pred = predict(map, params_, rng_);
  const auto prior = birth_floor(pred.prior, measurement, params_);
  auto post = update(std::move(pred.map), prior, measurement);
  auto next = resample(post, prior, params_, rng_);
  next.set_timestamp(map.timestamp() + params_.dt);
  return next;
}

}  // namespace dogseg::dog
