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

#include "dogseg/pipeline.hpp"

namespace dogseg::pipeline
{

void SimConfig::validate() const
{
  grid.validate();
  filter.validate();
  if (warmup < 0 || stride < 1 || max_frames < 0) {
    throw ConfigError("warmup >= 0, stride >= 1 and max_frames >= 0 required");
  }
  if (!(occupied_threshold > 0.0 && occupied_threshold < 1.0)) {
    throw ConfigError("occupied threshold must lie in (0, 1)");
  }
}

std::vector<SimFrame> simulate(
  const sim::Scenario & scenario, const SimConfig & config, const std::function<void(int, int)> & progress)
{
  config.validate();
  auto params = config.filter;
  params.dt = scenario.dt;
  dog::DogFilter filter(params);
  grid::DynamicGridMap map(config.grid);
  auto world = scenario;

  const int total = scenario.frame_count();
  std::vector<SimFrame> frames;
  for (int k = 0; k < total; ++k) {
    map = filter.step(map, sim::render_measurement(world, config.grid));
    if (k >= config.warmup && (k - config.warmup) % config.stride == 0) {
      const auto truth = sim::ground_truth(world, config.grid);
      frames.push_back({k, map.timestamp(),
        enc::make_features(map, grid::compute_stats(map), config.occupied_threshold, &truth)});
      if (config.max_frames > 0 && static_cast<int>(frames.size()) >= config.max_frames) {
        break;
      }
    }
    if (progress) {
      progress(k + 1, total);
    }
    world = sim::step_world(world, scenario.dt);
  }
  return frames;
}

}  // namespace dogseg::pipeline
