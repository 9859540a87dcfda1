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

#ifndef DOGSEG__PIPELINE_HPP_
#define DOGSEG__PIPELINE_HPP_

#include <functional>
#include <string>
#include <vector>

#include "dogseg/dog_filter.hpp"
#include "dogseg/encoder.hpp"
#include "dogseg/sensor_sim.hpp"

namespace dogseg::pipeline
{

struct SimConfig
{
  grid::GridSpec grid;
  dog::FilterParams filter;  // dt is taken from the scenario
  int warmup = 20;           // filter steps before the first sample
  int stride = 5;            // steps between samples
  int max_frames = 0;        // 0 = until the scenario ends
  double occupied_threshold = 0.6;

  void validate() const;
};

struct SimFrame
{
  int step = 0;
  double time = 0.0;
  enc::FeatureFrame features;  // labeled from the simulator truth
};

/// Runs world, sensor and filter together and samples labeled feature frames.
std::vector<SimFrame> simulate(
  const sim::Scenario & scenario, const SimConfig & config,
  const std::function<void(int step, int total)> & progress = nullptr);

}  // namespace dogseg::pipeline

#endif  // DOGSEG__PIPELINE_HPP_
