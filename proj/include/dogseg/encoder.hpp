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

#ifndef DOGSEG__ENCODER_HPP_
#define DOGSEG__ENCODER_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dogseg/grid.hpp"
#include "dogseg/sensor_sim.hpp"

namespace dogseg::enc
{

inline constexpr std::uint8_t kLabelStatic = 0;
inline constexpr std::uint8_t kLabelDynamic = 1;
inline constexpr std::uint8_t kLabelIgnore = 255;

/// Crop sizes are expressed on a 600-cell reference grid and scaled to the actual side.
inline constexpr int kReferenceSide = 600;

struct EncoderConfig
{
  int combo = 2;
  int range_t = 20;
  int crop = 600;
  bool include_freespace = true;

  void validate() const;
  /// Crop window in cells for a grid of the given side.
  int crop_cells(int side) const;
};

/// Cell features before quantization. Rotation works on these so that velocity
/// vectors and covariances can be turned with the grid.
struct FeatureFrame
{
  int side = 0;
  grid::Raster<float> occupancy;
  grid::Raster<float> mean_vx;
  grid::Raster<float> mean_vy;
  grid::Raster<float> var_vx;
  grid::Raster<float> var_vy;
  grid::Raster<float> cov_xy;
  grid::Mask occupied;
  grid::Mask labels;             // kLabelStatic / kLabelDynamic / kLabelIgnore
  grid::Raster<float> heading;   // NaN off the dynamic support

  explicit FeatureFrame(int side_cells = 0);
  /// NaN headings compare equal.
  bool operator==(const FeatureFrame &) const;
};

struct EncodedFrame
{
  int side = 0;
  std::vector<std::uint8_t> channels;  // 3 x side x side, order B, G, R
  grid::Mask labels;
  grid::Raster<float> heading;
  grid::Mask occupied;

  explicit EncodedFrame(int side_cells = 0);
  std::uint8_t channel(int c, int x, int y) const
  {
    return channels[(static_cast<std::size_t>(c) * side + y) * side + x];
  }
  std::uint8_t & channel(int c, int x, int y)
  {
    return channels[(static_cast<std::size_t>(c) * side + y) * side + x];
  }
  bool operator==(const EncodedFrame &) const;
};

/// Features of a filtered map. Without ground truth every cell is labeled ignore.
FeatureFrame make_features(
  const grid::DynamicGridMap & map, const grid::StatsGrid & stats, double occupied_threshold,
  const sim::GroundTruth * truth = nullptr);

/// Clamp to [-t, t], map linearly onto [0, 255], round half up.
std::uint8_t discretize(double value, double t);
/// Clamp to [0, t] and map onto [0, 255]; for non-negative quantities.
std::uint8_t discretize_unsigned(double value, double t);

EncodedFrame encode(const FeatureFrame & features, const EncoderConfig & config);
EncodedFrame encode(const grid::DynamicGridMap & map, const grid::StatsGrid & stats, const EncoderConfig & config);

/// Central crop x crop window resized back to the full side. Bilinear for channels,
/// nearest neighbour for labels, heading and mask.
EncodedFrame crop_zoom(const EncodedFrame & frame, int crop);

/// Counter-clockwise rotation about the grid center. Velocities and covariances are
/// co-rotated; uncovered corners get occupancy 0.5, zero motion features, label ignore.
FeatureFrame rotate_augment(const FeatureFrame & frame, int angle_deg);

/// The ten-degree rotation set: 0, 10, ..., 350.
std::vector<int> augmentation_angles();

/// rotate -> encode -> crop_zoom.
EncodedFrame prepare(const FeatureFrame & features, const EncoderConfig & config, int angle_deg = 0);

// Dataset directory: index.tsv plus, per frame id, <id>.feat (features),
// <id>.chan (encoded channels and mask) and <id>.lbl (labels and heading).
enum class Split { kTrain, kValidation, kTest, kUnlabeled };
std::string to_string(Split split);
Split parse_split(const std::string & text);

struct IndexEntry
{
  std::string id;
  Split split = Split::kTrain;
  std::string source = "manual";  // label provenance
  int rotation_deg = 0;           // rotated variants inherit their source's split
  bool operator==(const IndexEntry &) const = default;
};

void write_index(const std::string & path, const std::vector<IndexEntry> & entries);
std::vector<IndexEntry> read_index(const std::string & path);

/// Train entries expanded into the 36 rotations; other splits pass through unrotated.
std::vector<IndexEntry> expand_rotations(const std::vector<IndexEntry> & entries);

void save_features(const std::string & path, const FeatureFrame & frame);
FeatureFrame load_features(const std::string & path);
void save_encoded(const std::string & stem, const EncodedFrame & frame);
EncodedFrame load_encoded(const std::string & stem);

}  // namespace dogseg::enc

#endif  // DOGSEG__ENCODER_HPP_
