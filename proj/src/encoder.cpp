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

#include "dogseg/encoder.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace dogseg::enc
{

namespace
{

constexpr std::array<int, 5> kRanges{5, 10, 15, 20, 25};
constexpr std::array<int, 4> kCrops{300, 400, 500, 600};

const float kNaN = std::numeric_limits<float>::quiet_NaN();

std::uint8_t quantize(double unit)
{
  // unit in [0, 1]
  return static_cast<std::uint8_t>(std::floor(std::clamp(unit, 0.0, 1.0) * 255.0 + 0.5));
}

}  // namespace

void EncoderConfig::validate() const
{
  if (combo < 1 || combo > 5) {
    throw ConfigError("input combination must be 1..5, got " + std::to_string(combo));
  }
  if (std::find(kRanges.begin(), kRanges.end(), range_t) == kRanges.end()) {
    throw ConfigError("range_t must be one of 5, 10, 15, 20, 25");
  }
  if (std::find(kCrops.begin(), kCrops.end(), crop) == kCrops.end()) {
    throw ConfigError("crop must be one of 300, 400, 500, 600");
  }
  if (combo == 3 && include_freespace) {
    throw ConfigError("combination 3 is defined without freespace");
  }
}

int EncoderConfig::crop_cells(int side) const
{
  return std::max(1, static_cast<int>(std::lround(static_cast<double>(crop) * side / kReferenceSide)));
}

FeatureFrame::FeatureFrame(int side_cells)
: side(side_cells),
  occupancy(side_cells, side_cells, 0.5F),
  mean_vx(side_cells, side_cells),
  mean_vy(side_cells, side_cells),
  var_vx(side_cells, side_cells),
  var_vy(side_cells, side_cells),
  cov_xy(side_cells, side_cells),
  occupied(side_cells, side_cells),
  labels(side_cells, side_cells, kLabelIgnore),
  heading(side_cells, side_cells, kNaN)
{
}

EncodedFrame::EncodedFrame(int side_cells)
: side(side_cells),
  channels(static_cast<std::size_t>(3) * side_cells * side_cells, 0),
  labels(side_cells, side_cells, kLabelIgnore),
  heading(side_cells, side_cells, kNaN),
  occupied(side_cells, side_cells)
{
}

namespace
{

bool same_heading(const grid::Raster<float> & a, const grid::Raster<float> & b)
{
  if (!a.same_shape(b)) {
    return false;
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(a[i] == b[i] || (std::isnan(a[i]) && std::isnan(b[i])))) {
      return false;
    }
  }
  return true;
}

}  // namespace

bool FeatureFrame::operator==(const FeatureFrame & o) const
{
  return side == o.side && occupancy == o.occupancy && mean_vx == o.mean_vx && mean_vy == o.mean_vy &&
         var_vx == o.var_vx && var_vy == o.var_vy && cov_xy == o.cov_xy && occupied == o.occupied &&
         labels == o.labels && same_heading(heading, o.heading);
}

bool EncodedFrame::operator==(const EncodedFrame & o) const
{
  return side == o.side && channels == o.channels && labels == o.labels && occupied == o.occupied &&
         same_heading(heading, o.heading);
}

FeatureFrame make_features(
  const grid::DynamicGridMap & map, const grid::StatsGrid & stats, double occupied_threshold,
  const sim::GroundTruth * truth)
{
  const int side = map.spec().side_cells;
  if (stats.side != side) {
    throw ShapeError("stats grid does not match the map");
  }
  FeatureFrame f(side);
  for (int i = 0; i < map.cell_count(); ++i) {
    const double occ = map.occupancy(i);
    f.occupancy[i] = static_cast<float>(occ);
    f.occupied[i] = occ >= occupied_threshold ? 1 : 0;
    if (stats.valid[i]) {
      const auto & s = stats.stats[i];
      f.mean_vx[i] = static_cast<float>(s.mean_vx);
      f.mean_vy[i] = static_cast<float>(s.mean_vy);
      f.var_vx[i] = static_cast<float>(s.var_vx);
      f.var_vy[i] = static_cast<float>(s.var_vy);
      f.cov_xy[i] = static_cast<float>(s.cov_xy);
    }
  }
  if (truth != nullptr) {
    if (truth->labels.width != side || truth->labels.height != side) {
      throw ShapeError("ground truth does not match the map");
    }
    for (std::size_t i = 0; i < f.labels.size(); ++i) {
      f.labels[i] = truth->labels[i] != 0 ? kLabelDynamic : kLabelStatic;
      f.heading[i] = truth->heading[i];
    }
  }
  return f;
}

std::uint8_t discretize(double value, double t)
{
  if (std::isnan(value)) {
    value = 0.0;
  }
  return quantize((std::clamp(value, -t, t) + t) / (2.0 * t));
}

std::uint8_t discretize_unsigned(double value, double t)
{
  if (std::isnan(value)) {
    value = 0.0;
  }
  return quantize(std::clamp(value, 0.0, t) / t);
}

EncodedFrame encode(const FeatureFrame & features, const EncoderConfig & config)
{
  config.validate();
  const int side = features.side;
  const double t = config.range_t;
  EncodedFrame out(side);
  out.labels = features.labels;
  out.heading = features.heading;
  out.occupied = features.occupied;
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      double occ = features.occupancy.at(x, y);
      if (!config.include_freespace) {
        occ = std::max(occ, 0.5);
      }
      out.channel(0, x, y) = quantize(occ);

      const double mx = features.mean_vx.at(x, y);
      const double my = features.mean_vy.at(x, y);
      const double vxx = features.var_vx.at(x, y);
      const double vyy = features.var_vy.at(x, y);
      const double cxy = features.cov_xy.at(x, y);
      std::uint8_t g = 0;
      std::uint8_t r = 0;
      switch (config.combo) {
        case 1:
          g = discretize(mx, t);
          r = discretize(my, t);
          break;
        case 2:
        case 3:
          g = discretize(grid::normalized_velocity(mx, vxx), t);
          r = discretize(grid::normalized_velocity(my, vyy), t);
          break;
        case 4:
          g = discretize_unsigned(std::hypot(mx, my), t);
          r = discretize_unsigned(vxx + 2.0 * cxy + vyy, t);
          break;
        default:
          g = discretize_unsigned(std::hypot(mx, my), t);
          r = discretize_unsigned(grid::mahalanobis(mx, my, vxx, vyy, cxy), t);
          break;
      }
      out.channel(1, x, y) = g;
      out.channel(2, x, y) = r;
    }
  }
  return out;
}

EncodedFrame encode(const grid::DynamicGridMap & map, const grid::StatsGrid & stats, const EncoderConfig & config)
{
  return encode(make_features(map, stats, 0.6), config);
}

EncodedFrame crop_zoom(const EncodedFrame & frame, int crop)
{
  const int side = frame.side;
  if (crop > side || crop < 1) {
    throw BoundsError("crop " + std::to_string(crop) + " outside 1.." + std::to_string(side));
  }
  if (crop == side) {
    return frame;
  }
  const double off = 0.5 * (side - crop);
  const double scale = static_cast<double>(crop) / side;
  EncodedFrame out(side);
  // Pixel centers of the output map back onto the crop window.
  auto src = [&](int i) { return off + (i + 0.5) * scale - 0.5; };
  auto nearest = [&](int i) {
    return std::clamp(static_cast<int>(std::floor(off + (i + 0.5) * scale)), 0, side - 1);
  };
  for (int y = 0; y < side; ++y) {
    const double sy = std::clamp(src(y), 0.0, side - 1.0);
    const int y0 = std::min(static_cast<int>(sy), side - 2);
    const double fy = sy - y0;
    const int ny = nearest(y);
    for (int x = 0; x < side; ++x) {
      const double sx = std::clamp(src(x), 0.0, side - 1.0);
      const int x0 = std::min(static_cast<int>(sx), side - 2);
      const double fx = sx - x0;
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - fx) * (1 - fy) * frame.channel(c, x0, y0) + fx * (1 - fy) * frame.channel(c, x0 + 1, y0) +
                         (1 - fx) * fy * frame.channel(c, x0, y0 + 1) + fx * fy * frame.channel(c, x0 + 1, y0 + 1);
        out.channel(c, x, y) = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
      }
      const int nx = nearest(x);
      out.labels.at(x, y) = frame.labels.at(nx, ny);
      out.heading.at(x, y) = frame.heading.at(nx, ny);
      out.occupied.at(x, y) = frame.occupied.at(nx, ny);
    }
  }
  return out;
}

FeatureFrame rotate_augment(const FeatureFrame & frame, int angle_deg)
{
  if (angle_deg % 10 != 0 || angle_deg < 0 || angle_deg > 350) {
    throw ConfigError("rotation must be a multiple of 10 in [0, 350], got " + std::to_string(angle_deg));
  }
  if (angle_deg == 0) {
    return frame;
  }
  const int side = frame.side;
  double c = 0.0;
  double s = 0.0;
  // Exact trig for quarter turns so four of them compose to the identity.
  switch (angle_deg) {
    case 90: s = 1.0; break;
    case 180: c = -1.0; break;
    case 270: s = -1.0; break;
    default: {
      const double a = angle_deg * M_PI / 180.0;
      c = std::cos(a);
      s = std::sin(a);
    }
  }
  const double ctr = 0.5 * (side - 1);
  FeatureFrame out(side);
  out.labels.data.assign(out.labels.size(), kLabelIgnore);

  auto bilinear = [&](const grid::Raster<float> & r, int x0, int y0, double fx, double fy) {
    return (1 - fx) * (1 - fy) * r.at(x0, y0) + fx * (1 - fy) * r.at(x0 + 1, y0) +
           (1 - fx) * fy * r.at(x0, y0 + 1) + fx * fy * r.at(x0 + 1, y0 + 1);
  };

  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      // Inverse map: source = R^T (dst - ctr) + ctr.
      const double dx = x - ctr;
      const double dy = y - ctr;
      const double sx = c * dx + s * dy + ctr;
      const double sy = -s * dx + c * dy + ctr;
      if (sx < -0.5 || sy < -0.5 || sx > side - 0.5 || sy > side - 0.5) {
        continue;  // corner fill from the constructor
      }
      const int nx = std::clamp(static_cast<int>(std::lround(sx)), 0, side - 1);
      const int ny = std::clamp(static_cast<int>(std::lround(sy)), 0, side - 1);
      out.labels.at(x, y) = frame.labels.at(nx, ny);
      out.occupied.at(x, y) = frame.occupied.at(nx, ny);
      const float h = frame.heading.at(nx, ny);
      if (!std::isnan(h)) {
        out.heading.at(x, y) =
          static_cast<float>(std::remainder(static_cast<double>(h) + angle_deg * M_PI / 180.0, 2.0 * M_PI));
      }

      const double cx = std::clamp(sx, 0.0, side - 1.0);
      const double cy = std::clamp(sy, 0.0, side - 1.0);
      const int x0 = std::min(static_cast<int>(cx), side - 2);
      const int y0 = std::min(static_cast<int>(cy), side - 2);
      const double fx = cx - x0;
      const double fy = cy - y0;
      out.occupancy.at(x, y) = static_cast<float>(bilinear(frame.occupancy, x0, y0, fx, fy));
      const double mx = bilinear(frame.mean_vx, x0, y0, fx, fy);
      const double my = bilinear(frame.mean_vy, x0, y0, fx, fy);
      const double vxx = bilinear(frame.var_vx, x0, y0, fx, fy);
      const double vyy = bilinear(frame.var_vy, x0, y0, fx, fy);
      const double cxy = bilinear(frame.cov_xy, x0, y0, fx, fy);
      out.mean_vx.at(x, y) = static_cast<float>(c * mx - s * my);
      out.mean_vy.at(x, y) = static_cast<float>(s * mx + c * my);
      // R S R^T
      out.var_vx.at(x, y) = static_cast<float>(c * c * vxx - 2 * c * s * cxy + s * s * vyy);
      out.var_vy.at(x, y) = static_cast<float>(s * s * vxx + 2 * c * s * cxy + c * c * vyy);
      out.cov_xy.at(x, y) = static_cast<float>(c * s * (vxx - vyy) + (c * c - s * s) * cxy);
    }
  }
  return out;
}

std::vector<int> augmentation_angles()
{
  std::vector<int> a;
  for (int d = 0; d < 360; d += 10) {
    a.push_back(d);
  }
  return a;
}

EncodedFrame prepare(const FeatureFrame & features, const EncoderConfig & config, int angle_deg)
{
  auto enc = encode(angle_deg == 0 ? features : rotate_augment(features, angle_deg), config);
  return crop_zoom(enc, config.crop_cells(features.side));
}

std::string to_string(Split split)
{
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "val";
    case Split::kTest: return "test";
    case Split::kUnlabeled: return "unlabeled";
  }
  return "train";
}

Split parse_split(const std::string & text)
{
  if (text == "train") return Split::kTrain;
  if (text == "val") return Split::kValidation;
  if (text == "test") return Split::kTest;
  if (text == "unlabeled") return Split::kUnlabeled;
  throw DataError("unknown split '" + text + "'");
}

void write_index(const std::string & path, const std::vector<IndexEntry> & entries)
{
  std::ofstream out(path);
  if (!out) {
    throw DataError("cannot open " + path + " for writing");
  }
  out << "# id\tsplit\tsource\trotation_deg\n";
  for (const auto & e : entries) {
    out << e.id << '\t' << to_string(e.split) << '\t' << e.source << '\t' << e.rotation_deg << '\n';
  }
}

std::vector<IndexEntry> read_index(const std::string & path)
{
  std::ifstream in(path);
  if (!in) {
    throw NotFoundError("cannot open index " + path);
  }
  std::vector<IndexEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') {
      continue;
    }
    std::istringstream ls(line);
    IndexEntry e;
    std::string split;
    if (!std::getline(ls, e.id, '\t') || !std::getline(ls, split, '\t') || !std::getline(ls, e.source, '\t') ||
        !(ls >> e.rotation_deg)) {
      throw DataError(path + ":" + std::to_string(lineno) + ": malformed index line");
    }
    e.split = parse_split(split);
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<IndexEntry> expand_rotations(const std::vector<IndexEntry> & entries)
{
  std::vector<IndexEntry> out;
  for (const auto & e : entries) {
    if (e.split != Split::kTrain || e.rotation_deg != 0) {
      out.push_back(e);
      continue;
    }
    for (int a : augmentation_angles()) {
      auto r = e;
      r.rotation_deg = a;
      out.push_back(std::move(r));
    }
  }
  return out;
}

namespace
{

template <typename T>
void put_raster(std::ostream & out, const grid::Raster<T> & r)
{
  out.write(reinterpret_cast<const char *>(r.data.data()), static_cast<std::streamsize>(r.size() * sizeof(T)));
}

template <typename T>
void get_raster(std::istream & in, grid::Raster<T> & r)
{
  in.read(reinterpret_cast<char *>(r.data.data()), static_cast<std::streamsize>(r.size() * sizeof(T)));
}

void put_header(std::ostream & out, const char (&magic)[5], int side)
{
  const std::int32_t s = side;
  out.write(magic, 4);
  out.write(reinterpret_cast<const char *>(&s), sizeof(s));
}

int get_header(std::istream & in, const char (&magic)[5], const std::string & path)
{
  char m[4];
  std::int32_t s = 0;
  in.read(m, 4);
  in.read(reinterpret_cast<char *>(&s), sizeof(s));
  if (!in || std::memcmp(m, magic, 4) != 0) {
    throw DataError(path + ": bad magic");
  }
  if (s < 1 || s > 8192) {
    throw DataError(path + ": bad side " + std::to_string(s));
  }
  return s;
}

std::ofstream open_out(const std::string & path)
{
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw DataError("cannot open " + path + " for writing");
  }
  return out;
}

std::ifstream open_in(const std::string & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw NotFoundError("cannot open " + path);
  }
  return in;
}

void check_complete(std::istream & in, const std::string & path)
{
  if (!in) {
    throw DataError(path + ": truncated");
  }
  in.peek();
  if (!in.eof()) {
    throw DataError(path + ": trailing bytes");
  }
}

}  // namespace

void save_features(const std::string & path, const FeatureFrame & f)
{
  auto out = open_out(path);
  put_header(out, "DSFF", f.side);
  put_raster(out, f.occupancy);
  put_raster(out, f.mean_vx);
  put_raster(out, f.mean_vy);
  put_raster(out, f.var_vx);
  put_raster(out, f.var_vy);
  put_raster(out, f.cov_xy);
  put_raster(out, f.occupied);
  put_raster(out, f.labels);
  put_raster(out, f.heading);
  if (!out) {
    throw DataError("failed writing " + path);
  }
}

FeatureFrame load_features(const std::string & path)
{
  auto in = open_in(path);
  FeatureFrame f(get_header(in, "DSFF", path));
  get_raster(in, f.occupancy);
  get_raster(in, f.mean_vx);
  get_raster(in, f.mean_vy);
  get_raster(in, f.var_vx);
  get_raster(in, f.var_vy);
  get_raster(in, f.cov_xy);
  get_raster(in, f.occupied);
  get_raster(in, f.labels);
  get_raster(in, f.heading);
  check_complete(in, path);
  return f;
}

void save_encoded(const std::string & stem, const EncodedFrame & frame)
{
  {
    auto out = open_out(stem + ".chan");
    put_header(out, "DSEC", frame.side);
    out.write(reinterpret_cast<const char *>(frame.channels.data()), static_cast<std::streamsize>(frame.channels.size()));
    put_raster(out, frame.occupied);
    if (!out) {
      throw DataError("failed writing " + stem + ".chan");
    }
  }
  auto out = open_out(stem + ".lbl");
  put_header(out, "DSEL", frame.side);
  put_raster(out, frame.labels);
  put_raster(out, frame.heading);
  if (!out) {
    throw DataError("failed writing " + stem + ".lbl");
  }
}

EncodedFrame load_encoded(const std::string & stem)
{
  auto in = open_in(stem + ".chan");
  EncodedFrame f(get_header(in, "DSEC", stem + ".chan"));
  in.read(reinterpret_cast<char *>(f.channels.data()), static_cast<std::streamsize>(f.channels.size()));
  get_raster(in, f.occupied);
  check_complete(in, stem + ".chan");

  auto lin = open_in(stem + ".lbl");
  if (get_header(lin, "DSEL", stem + ".lbl") != f.side) {
    throw DataError(stem + ": label side differs from channel side");
  }
  get_raster(lin, f.labels);
  get_raster(lin, f.heading);
  check_complete(lin, stem + ".lbl");
  for (auto l : f.labels.data) {
    if (l != kLabelStatic && l != kLabelDynamic && l != kLabelIgnore) {
      throw DataError(stem + ".lbl: label value " + std::to_string(l) + " out of range");
    }
  }
  return f;
}

}  // namespace dogseg::enc
