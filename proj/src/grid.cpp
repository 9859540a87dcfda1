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

#include "dogseg/grid.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

namespace dogseg::grid
{

void GridSpec::validate() const
{
  if (side_cells < 8) {
    throw ConfigError("grid side must be at least 8 cells, got " + std::to_string(side_cells));
  }
  if (!(cell_size > 0.0)) {
    throw ConfigError("grid cell size must be positive");
  }
}

std::optional<int> GridSpec::cell_of(double x, double y) const
{
  const double fx = std::floor((x - min_x()) / cell_size);
  const double fy = std::floor((y - min_y()) / cell_size);
  if (!(fx >= 0.0 && fy >= 0.0 && fx < side_cells && fy < side_cells)) {
    return std::nullopt;
  }
  return static_cast<int>(fy) * side_cells + static_cast<int>(fx);
}

DynamicGridMap::DynamicGridMap(const GridSpec & spec, double initial_occupancy) : spec_(spec)
{
  spec_.validate();
  cells_.assign(static_cast<std::size_t>(spec_.cell_count()), GridCell{initial_occupancy, 0, 0});
}

std::span<const Particle> DynamicGridMap::particles_in(int idx) const
{
  const auto & c = cells_[static_cast<std::size_t>(idx)];
  return std::span<const Particle>(particles_).subspan(c.first, c.count);
}

std::span<Particle> DynamicGridMap::particles_in(int idx)
{
  const auto & c = cells_[static_cast<std::size_t>(idx)];
  return std::span<Particle>(particles_).subspan(c.first, c.count);
}

double DynamicGridMap::weight_sum(int idx) const
{
  double s = 0.0;
  for (const auto & p : particles_in(idx)) {
    s += p.weight;
  }
  return s;
}

void DynamicGridMap::assign_particles(std::vector<Particle> particles)
{
  const std::size_t n_cells = cells_.size();
  std::vector<std::int32_t> owner(particles.size());
  std::vector<std::uint32_t> counts(n_cells, 0);
  for (std::size_t i = 0; i < particles.size(); ++i) {
    const auto c = spec_.cell_of(particles[i].px, particles[i].py);
    owner[i] = c ? *c : -1;
    if (c) {
      ++counts[static_cast<std::size_t>(*c)];
    }
  }
  std::uint32_t offset = 0;
  for (std::size_t c = 0; c < n_cells; ++c) {
    cells_[c].first = offset;
    cells_[c].count = counts[c];
    offset += counts[c];
  }
  std::vector<Particle> sorted(offset);
  std::vector<std::uint32_t> cursor(n_cells);
  for (std::size_t c = 0; c < n_cells; ++c) {
    cursor[c] = cells_[c].first;
  }
  for (std::size_t i = 0; i < particles.size(); ++i) {
    if (owner[i] >= 0) {
      sorted[cursor[static_cast<std::size_t>(owner[i])]++] = particles[i];
    }
  }
  particles_ = std::move(sorted);
}

bool DynamicGridMap::operator==(const DynamicGridMap & o) const
{
  if (!(spec_ == o.spec_) || timestamp_ != o.timestamp_ || cells_.size() != o.cells_.size() ||
      particles_.size() != o.particles_.size()) {
    return false;
  }
  for (std::size_t i = 0; i < cells_.size(); ++i) {
    const auto & a = cells_[i];
    const auto & b = o.cells_[i];
    if (a.occupancy != b.occupancy || a.first != b.first || a.count != b.count) {
      return false;
    }
  }
  for (std::size_t i = 0; i < particles_.size(); ++i) {
    const auto & a = particles_[i];
    const auto & b = o.particles_[i];
    if (a.px != b.px || a.py != b.py || a.vx != b.vx || a.vy != b.vy || a.weight != b.weight) {
      return false;
    }
  }
  return true;
}

double bayes_update(double prior, double likelihood_occ, double likelihood_free)
{
  const double occ = prior * likelihood_occ;
  const double denom = occ + (1.0 - prior) * likelihood_free;
  if (denom < 1e-12) {
    throw DegenerateEvidenceError("bayes update denominator vanished");
  }
  return occ / denom;
}

double normalized_velocity(double mean_v, double var_v)
{
  return mean_v / std::sqrt(std::max(var_v, 0.0) + kVarianceFloor);
}

double mahalanobis(double vx, double vy, double var_x, double var_y, double cov_xy)
{
  const double a = var_x + kCovarianceRegularization;
  const double d = var_y + kCovarianceRegularization;
  const double b = cov_xy;
  double det = a * d - b * b;
  if (det <= 0.0) {
    // Numerically singular even after regularization: fall back to the diagonal.
    det = a * d;
  }
  // Inverse of [[a, b], [b, d]] is [[d, -b], [-b, a]] / det.
  const double q = (d * vx * vx - 2.0 * b * vx * vy + a * vy * vy) / det;
  return std::sqrt(std::max(q, 0.0));
}

CellStats cell_stats(std::span<const Particle> particles)
{
  double w_sum = 0.0;
  double mx = 0.0;
  double my = 0.0;
  for (const auto & p : particles) {
    w_sum += p.weight;
    mx += p.weight * p.vx;
    my += p.weight * p.vy;
  }
  if (particles.empty() || !(w_sum > 0.0)) {
    throw EmptyCellError("cell holds no particle mass");
  }
  mx /= w_sum;
  my /= w_sum;
  double vxx = 0.0;
  double vyy = 0.0;
  double vxy = 0.0;
  for (const auto & p : particles) {
    const double dx = p.vx - mx;
    const double dy = p.vy - my;
    vxx += p.weight * dx * dx;
    vyy += p.weight * dy * dy;
    vxy += p.weight * dx * dy;
  }
  CellStats s;
  s.mean_vx = mx;
  s.mean_vy = my;
  s.var_vx = vxx / w_sum;
  s.var_vy = vyy / w_sum;
  s.cov_xy = vxy / w_sum;
  s.mahalanobis = mahalanobis(mx, my, s.var_vx, s.var_vy, s.cov_xy);
  s.overall_var = s.var_vx + 2.0 * s.cov_xy + s.var_vy;
  s.speed = std::hypot(mx, my);
  return s;
}

CellStats cell_stats(const DynamicGridMap & map, int cell)
{
  return cell_stats(map.particles_in(cell));
}

StatsGrid compute_stats(const DynamicGridMap & map)
{
  StatsGrid g;
  g.side = map.spec().side_cells;
  g.stats.resize(static_cast<std::size_t>(map.cell_count()));
  g.valid.assign(static_cast<std::size_t>(map.cell_count()), 0);
  for (int c = 0; c < map.cell_count(); ++c) {
    const auto ps = map.particles_in(c);
    if (ps.empty()) {
      continue;
    }
    double w = 0.0;
    for (const auto & p : ps) {
      w += p.weight;
    }
    if (w > 0.0) {
      g.stats[static_cast<std::size_t>(c)] = cell_stats(ps);
      g.valid[static_cast<std::size_t>(c)] = 1;
    }
  }
  return g;
}

Mask occupied_mask(const DynamicGridMap & map, double threshold)
{
  const int side = map.spec().side_cells;
  Mask m(side, side, 0);
  for (int c = 0; c < map.cell_count(); ++c) {
    m[static_cast<std::size_t>(c)] = map.occupancy(c) >= threshold ? 1 : 0;
  }
  return m;
}

namespace
{

constexpr std::array<char, 4> kMagic{'D', 'O', 'G', 'F'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::string & buf, T v)
{
  char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  buf.append(bytes, sizeof(T));
}

template <typename T>
T take(const std::string & buf, std::size_t & pos)
{
  if (pos + sizeof(T) > buf.size()) {
    throw DataError("frame chunk truncated");
  }
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

void write_chunk(std::ostream & out, const char (&tag)[5], const std::string & payload)
{
  out.write(tag, 4);
  const std::uint64_t len = payload.size();
  out.write(reinterpret_cast<const char *>(&len), sizeof(len));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

}  // namespace

void write_frame(std::ostream & out, const DynamicGridMap & map)
{
  out.write(kMagic.data(), 4);
  out.write(reinterpret_cast<const char *>(&kVersion), sizeof(kVersion));

  const auto & spec = map.spec();
  std::string buf;
  put<std::int32_t>(buf, spec.side_cells);
  put<double>(buf, spec.cell_size);
  put<double>(buf, spec.origin_x);
  put<double>(buf, spec.origin_y);
  put<double>(buf, map.timestamp());
  write_chunk(out, "SPEC", buf);

  buf.clear();
  for (const auto & c : map.cells()) {
    put<float>(buf, static_cast<float>(c.occupancy));
  }
  write_chunk(out, "OCCP", buf);

  buf.clear();
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(map.particles().size()));
  for (const auto & p : map.particles()) {
    put<float>(buf, static_cast<float>(p.px));
    put<float>(buf, static_cast<float>(p.py));
    put<float>(buf, static_cast<float>(p.vx));
    put<float>(buf, static_cast<float>(p.vy));
    put<double>(buf, p.weight);
  }
  write_chunk(out, "PART", buf);
  if (!out) {
    throw DataError("failed writing frame");
  }
}

DynamicGridMap read_frame(std::istream & in)
{
  std::array<char, 4> magic{};
  std::uint32_t version = 0;
  in.read(magic.data(), 4);
  in.read(reinterpret_cast<char *>(&version), sizeof(version));
  if (!in || magic != kMagic) {
    throw DataError("not a frame file");
  }
  if (version != kVersion) {
    throw DataError("unsupported frame version " + std::to_string(version));
  }
  std::optional<GridSpec> spec;
  double timestamp = 0.0;
  std::vector<float> occ;
  std::vector<Particle> particles;
  bool have_particles = false;
  while (true) {
    char tag[4];
    if (!in.read(tag, 4)) {
      break;
    }
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char *>(&len), sizeof(len));
    std::string payload(len, '\0');
    in.read(payload.data(), static_cast<std::streamsize>(len));
    if (!in) {
      throw DataError("frame chunk truncated");
    }
    std::size_t pos = 0;
    const std::string t(tag, 4);
    if (t == "SPEC") {
      GridSpec s;
      s.side_cells = take<std::int32_t>(payload, pos);
      s.cell_size = take<double>(payload, pos);
      s.origin_x = take<double>(payload, pos);
      s.origin_y = take<double>(payload, pos);
      timestamp = take<double>(payload, pos);
      s.validate();
      spec = s;
    } else if (t == "OCCP") {
      occ.resize(len / sizeof(float));
      std::memcpy(occ.data(), payload.data(), occ.size() * sizeof(float));
    } else if (t == "PART") {
      const auto n = take<std::uint32_t>(payload, pos);
      particles.reserve(n);
      for (std::uint32_t i = 0; i < n; ++i) {
        Particle p;
        p.px = take<float>(payload, pos);
        p.py = take<float>(payload, pos);
        p.vx = take<float>(payload, pos);
        p.vy = take<float>(payload, pos);
        p.weight = take<double>(payload, pos);
        particles.push_back(p);
      }
      have_particles = true;
    }
    // Unknown chunks are skipped for forward compatibility.
  }
  if (!spec || occ.size() != static_cast<std::size_t>(spec->cell_count()) || !have_particles) {
    throw DataError("frame file missing required chunks");
  }
  DynamicGridMap map(*spec);
  map.set_timestamp(timestamp);
  for (int c = 0; c < map.cell_count(); ++c) {
    map.set_occupancy(c, occ[static_cast<std::size_t>(c)]);
  }
  map.assign_particles(std::move(particles));
  // Particle-bearing cells carry their occupancy in the (double precision) weights.
  for (int c = 0; c < map.cell_count(); ++c) {
    if (map.cell(c).count > 0) {
      map.set_occupancy(c, map.weight_sum(c));
    }
  }
  return map;
}

void save_frame(const std::string & path, const DynamicGridMap & map)
{
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw DataError("cannot open " + path + " for writing");
  }
  write_frame(out, map);
}

DynamicGridMap load_frame(const std::string & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw NotFoundError("cannot open frame " + path);
  }
  return read_frame(in);
}

void export_cells_csv(std::ostream & out, const DynamicGridMap & map)
{
  const int side = map.spec().side_cells;
  std::ostringstream os;
  os << std::setprecision(17);
  os << "ix,iy,occupancy,particles,weight_sum,mean_vx,mean_vy,var_vx,var_vy,cov_xy,mahalanobis\n";
  for (int c = 0; c < map.cell_count(); ++c) {
    os << (c % side) << ',' << (c / side) << ',' << map.occupancy(c) << ',' << map.cell(c).count << ','
       << map.weight_sum(c);
    if (map.cell(c).count > 0 && map.weight_sum(c) > 0.0) {
      const auto s = cell_stats(map, c);
      os << ',' << s.mean_vx << ',' << s.mean_vy << ',' << s.var_vx << ',' << s.var_vy << ',' << s.cov_xy
         << ',' << s.mahalanobis;
    } else {
      os << ",,,,,,";
    }
    os << '\n';
  }
  out << os.str();
}

}  // namespace dogseg::grid
