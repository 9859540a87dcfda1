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

#include "dogseg/labeler.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

namespace dogseg::label
{

namespace fs = std::filesystem;
using cluster::Cell;
using cluster::LabeledCluster;
using cluster::Review;
using nlohmann::json;

namespace
{

constexpr std::uint32_t kMaskVersion = 1;

void check_id(const std::string & id)
{
  if (id.empty() || id.size() > 128) {
    throw DataError("frame id must have 1..128 characters");
  }
  for (char c : id) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
    if (!ok) {
      throw DataError("frame id '" + id + "' may only use letters, digits, '_', '-' and '.'");
    }
  }
}

void write_text_atomic(const fs::path & path, const std::string & text)
{
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw DataError("cannot write " + tmp.string());
    }
    out << text;
    if (!out) {
      throw DataError("failed writing " + tmp.string());
    }
  }
  fs::rename(tmp, path);
}

std::vector<LabeledCluster> read_cluster_file(const fs::path & path)
{
  std::ifstream in(path);
  if (!in) {
    throw NotFoundError("missing " + path.string());
  }
  return cluster::read_clusters(in);
}

std::string cluster_text(const std::vector<LabeledCluster> & clusters)
{
  std::ostringstream ss;
  cluster::write_clusters(ss, clusters);
  return ss.str();
}

json audit_json(int seq, const std::string & id, const Correction & c)
{
  json j;
  j["seq"] = seq;
  j["frame"] = id;
  j["action"] = to_string(c.action);
  j["cluster"] = c.cluster_id;
  json region = json::array();
  for (const auto & p : c.region) {
    region.push_back({p.x, p.y});
  }
  j["region"] = region;
  return j;
}

std::pair<std::string, Correction> parse_audit(const std::string & line)
{
  try {
    const auto j = json::parse(line);
    Correction c;
    c.action = parse_action(j.at("action").get<std::string>());
    c.cluster_id = j.at("cluster").get<int>();
    for (const auto & p : j.at("region")) {
      c.region.push_back({p.at(0).get<int>(), p.at(1).get<int>()});
    }
    return {j.at("frame").get<std::string>(), c};
  } catch (const json::exception & e) {
    throw DataError(std::string("bad audit record: ") + e.what());
  }
}

// The single place where a correction changes a frame; replay goes through it too.
void apply_to(FrameState & s, const Correction & c, const enc::FeatureFrame & features)
{
  auto find = [&]() -> LabeledCluster & {
    for (auto & cl : s.clusters) {
      if (cl.id == c.cluster_id) {
        return cl;
      }
    }
    throw NotFoundError("frame " + s.record.id + " has no cluster " + std::to_string(c.cluster_id));
  };
  switch (c.action) {
    case Action::kAccept:
    case Action::kReject:
    case Action::kFlipToStatic: {
      auto & cl = find();
      if (cl.review != Review::kAuto) {
        throw ConflictError(
          "cluster " + std::to_string(cl.id) + " of frame " + s.record.id + " is already " + cluster::to_string(cl.review));
      }
      if (c.action == Action::kAccept) {
        cl.review = Review::kAccepted;
      } else {
        cl.review = c.action == Action::kReject ? Review::kRejected : Review::kFlipped;
        for (const auto & p : cl.cells) {
          s.labels.at(p.x, p.y) = enc::kLabelStatic;
        }
      }
      break;
    }
    case Action::kAddRegion: {
      if (c.region.empty()) {
        throw DataError("add-region needs at least one cell");
      }
      std::set<Cell> blocked;
      for (const auto & cl : s.clusters) {
        if (cl.review == Review::kRejected || cl.review == Review::kFlipped) {
          blocked.insert(cl.cells.begin(), cl.cells.end());
        }
      }
      for (const auto & p : c.region) {
        if (p.x < 0 || p.y < 0 || p.x >= s.labels.width || p.y >= s.labels.height) {
          throw BoundsError("region cell outside the frame");
        }
        if (blocked.count(p)) {
          throw ConflictError("region overlaps a rejected cluster of frame " + s.record.id);
        }
      }
      std::vector<Cell> cells(c.region);
      std::sort(cells.begin(), cells.end());
      cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
      for (const auto & p : cells) {
        s.labels.at(p.x, p.y) = enc::kLabelDynamic;
      }
      int next = 0;
      for (const auto & cl : s.clusters) {
        next = std::max(next, cl.id + 1);
      }
      auto added = cluster::describe(s.record.id, next, std::move(cells), features);
      added.review = Review::kAccepted;
      s.clusters.push_back(std::move(added));
      break;
    }
    case Action::kSkip:
      s.record.skipped = true;
      break;
  }
  s.record.source = kSourceHuman;
}

}  // namespace

AutoLabel auto_label(
  const std::string & frame_id, const enc::FeatureFrame & frame, const Classifier & classifier, double eps, int min_pts)
{
  AutoLabel out;
  if (const auto * b = std::get_if<BaselineClassifier>(&classifier)) {
    const auto r = cluster::baseline_classify(frame, b->threshold);
    out.clusters = cluster::extract_clusters(frame_id, r.mask, frame, eps, min_pts);
  } else {
    const auto & c = std::get<CnnClassifier>(classifier);
    if (c.net == nullptr) {
      throw ConfigError("cnn classifier without a network");
    }
    c.encoder.validate();
    if (c.encoder.crop_cells(frame.side) != frame.side) {
      throw ConfigError("auto-labeling needs the full view (crop 600)");
    }
    const auto result = c.net->forward(fcn::to_input(enc::encode(frame, c.encoder)));
    const auto p = fcn::dynamic_probability(result.segmentation);
    grid::Raster<float> prob(frame.side, frame.side);
    prob.data.assign(p.begin(), p.end());
    prob = cluster::refine_with_occupancy(prob, frame.occupied);
    grid::Mask mask(frame.side, frame.side, 0);
    for (std::size_t i = 0; i < mask.size(); ++i) {
      mask[i] = prob[i] > c.prob_threshold ? 1 : 0;
    }
    out.clusters = cluster::extract_clusters(frame_id, mask, frame, eps, min_pts);
    if (!result.orientation.data.empty()) {
      grid::Raster<float> sin_map(frame.side, frame.side);
      grid::Raster<float> cos_map(frame.side, frame.side);
      const std::size_t plane = result.orientation.plane();
      std::copy_n(result.orientation.data.begin(), plane, sin_map.data.begin());
      std::copy_n(result.orientation.data.begin() + static_cast<std::ptrdiff_t>(plane), plane, cos_map.data.begin());
      for (auto & cl : out.clusters) {
        cl.heading_cnn = cluster::orientation_cnn(cl.cells, sin_map, cos_map);
      }
    }
  }
  out.labels = labels_from(out.clusters, frame.side);
  return out;
}

grid::Mask labels_from(const std::vector<LabeledCluster> & clusters, int side)
{
  grid::Mask m(side, side, enc::kLabelStatic);
  for (const auto & c : clusters) {
    for (const auto & p : c.cells) {
      if (p.x < 0 || p.y < 0 || p.x >= side || p.y >= side) {
        throw BoundsError("cluster cell outside the frame");
      }
      m.at(p.x, p.y) = enc::kLabelDynamic;
    }
  }
  return m;
}

std::string to_string(SuppressionMode m)
{
  switch (m) {
    case SuppressionMode::kNone:
      return "none";
    case SuppressionMode::kNormalizedSpeed:
      return "normalized-speed";
    case SuppressionMode::kCombinedP:
      return "combined-p";
  }
  return "none";
}

SuppressionMode parse_suppression_mode(const std::string & text)
{
  if (text == "none") {
    return SuppressionMode::kNone;
  }
  if (text == "normalized-speed") {
    return SuppressionMode::kNormalizedSpeed;
  }
  if (text == "combined-p") {
    return SuppressionMode::kCombinedP;
  }
  throw ConfigError("unknown suppression mode '" + text + "'");
}

void SuppressionConfig::validate() const
{
  if (!(threshold >= 0.0)) {
    throw ConfigError("suppression threshold must be >= 0");
  }
  if (min_cluster_cells < 1) {
    throw ConfigError("min_cluster_cells must be >= 1");
  }
}

std::vector<LabeledCluster> suppress(const std::vector<LabeledCluster> & clusters, const SuppressionConfig & config)
{
  config.validate();
  std::vector<LabeledCluster> out;
  for (const auto & c : clusters) {
    if (static_cast<int>(c.cells.size()) < config.min_cluster_cells) {
      continue;
    }
    if (config.mode == SuppressionMode::kCombinedP && c.suppression_p < config.threshold) {
      continue;
    }
    if (config.mode == SuppressionMode::kNormalizedSpeed && c.mean_normalized_speed < config.threshold) {
      continue;
    }
    out.push_back(c);
  }
  return out;
}

void SplitConfig::validate() const
{
  if (!(train > 0.0) || !(validation > 0.0) || !(test > 0.0)) {
    throw ConfigError("split fractions must be positive");
  }
  if (min_gap < 0) {
    throw ConfigError("min_gap must be >= 0");
  }
}

std::vector<std::optional<enc::Split>> split_dataset(int n_frames, const SplitConfig & config)
{
  config.validate();
  const int usable = n_frames - 2 * config.min_gap;
  const double total = config.train + config.validation + config.test;
  const int n_val = static_cast<int>(std::lround(config.validation / total * usable));
  const int n_test = static_cast<int>(std::lround(config.test / total * usable));
  const int n_train = usable - n_val - n_test;
  if (usable < 3 || n_val < 1 || n_test < 1 || n_train < 1) {
    throw ConfigError(
      std::to_string(n_frames) + " frames are too few for three splits with gaps of " + std::to_string(config.min_gap));
  }

  std::array<std::pair<enc::Split, int>, 3> runs{
    {{enc::Split::kTrain, n_train}, {enc::Split::kValidation, n_val}, {enc::Split::kTest, n_test}}};
  std::mt19937_64 rng(config.seed);
  for (std::size_t i = runs.size() - 1; i > 0; --i) {
    std::swap(runs[i], runs[static_cast<std::size_t>(rng() % (i + 1))]);
  }

  std::vector<std::optional<enc::Split>> out;
  out.reserve(static_cast<std::size_t>(n_frames));
  for (std::size_t r = 0; r < runs.size(); ++r) {
    if (r > 0) {
      out.insert(out.end(), static_cast<std::size_t>(config.min_gap), std::nullopt);
    }
    out.insert(out.end(), static_cast<std::size_t>(runs[r].second), runs[r].first);
  }
  return out;
}

std::vector<std::string> ssl_select(const std::vector<std::string> & unlabeled, int take_every)
{
  if (take_every < 1) {
    throw ConfigError("take_every must be >= 1");
  }
  std::vector<std::string> out;
  for (std::size_t i = 0; i < unlabeled.size(); i += static_cast<std::size_t>(take_every)) {
    out.push_back(unlabeled[i]);
  }
  return out;
}

SslResult ssl_round(
  const std::vector<enc::IndexEntry> & dataset, const std::vector<std::string> & unlabeled, const FrameLoader & load,
  const CnnClassifier & classifier, const SuppressionConfig & suppression, int take_every, int base_iterations)
{
  suppression.validate();
  if (base_iterations < 1) {
    throw ConfigError("base_iterations must be >= 1");
  }
  std::set<std::string> known;
  int train_before = 0;
  for (const auto & e : dataset) {
    known.insert(e.id);
    train_before += e.split == enc::Split::kTrain && e.rotation_deg == 0 ? 1 : 0;
  }

  SslResult r;
  r.merged = dataset;
  for (const auto & id : ssl_select(unlabeled, take_every)) {
    if (!known.insert(id).second) {
      throw DataError("unlabeled frame " + id + " is already in the dataset");
    }
    const auto frame = load(id);
    auto al = auto_label(id, frame, classifier);
    al.clusters = suppress(al.clusters, suppression);
    al.labels = labels_from(al.clusters, frame.side);
    r.auto_labels.emplace(id, std::move(al));
    r.merged.push_back({id, enc::Split::kTrain, kSourceCnn, 0});
    ++r.added;
  }
  r.iterations = train_before == 0
                   ? base_iterations
                   : static_cast<int>(std::lround(
                       static_cast<double>(base_iterations) * (train_before + r.added) / train_before));
  return r;
}

std::string to_string(Action a)
{
  switch (a) {
    case Action::kAccept:
      return "accept";
    case Action::kReject:
      return "reject";
    case Action::kFlipToStatic:
      return "flip-to-static";
    case Action::kAddRegion:
      return "add-region";
    case Action::kSkip:
      return "skip";
  }
  return "accept";
}

Action parse_action(const std::string & text)
{
  for (auto a : {Action::kAccept, Action::kReject, Action::kFlipToStatic, Action::kAddRegion, Action::kSkip}) {
    if (to_string(a) == text) {
      return a;
    }
  }
  throw DataError("unknown correction action '" + text + "'");
}

void save_mask(const std::string & path, const grid::Mask & mask)
{
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw DataError("cannot open " + path + " for writing");
  }
  const std::int32_t dims[2] = {mask.width, mask.height};
  out.write("DSLM", 4);
  out.write(reinterpret_cast<const char *>(&kMaskVersion), sizeof kMaskVersion);
  out.write(reinterpret_cast<const char *>(dims), sizeof dims);
  out.write(reinterpret_cast<const char *>(mask.data.data()), static_cast<std::streamsize>(mask.size()));
  if (!out) {
    throw DataError("failed writing " + path);
  }
}

grid::Mask load_mask(const std::string & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw NotFoundError("cannot open " + path);
  }
  char magic[4];
  std::uint32_t version = 0;
  std::int32_t dims[2] = {0, 0};
  in.read(magic, 4);
  in.read(reinterpret_cast<char *>(&version), sizeof version);
  in.read(reinterpret_cast<char *>(dims), sizeof dims);
  if (!in || std::memcmp(magic, "DSLM", 4) != 0 || version != kMaskVersion || dims[0] < 0 || dims[1] < 0 ||
      dims[0] > 1 << 15 || dims[1] > 1 << 15) {
    throw DataError(path + " is not a label mask");
  }
  grid::Mask m(dims[0], dims[1]);
  in.read(reinterpret_cast<char *>(m.data.data()), static_cast<std::streamsize>(m.size()));
  if (!in || in.peek() != std::char_traits<char>::eof()) {
    throw DataError(path + " has the wrong length");
  }
  for (auto v : m.data) {
    if (v != enc::kLabelStatic && v != enc::kLabelDynamic && v != enc::kLabelIgnore) {
      throw DataError(path + " holds an invalid label value");
    }
  }
  return m;
}

LabelStore::LabelStore(std::string dir) : dir_(std::move(dir))
{
  const fs::path root(dir_);
  for (const char * sub : {"frames", "auto", "labels"}) {
    fs::create_directories(root / sub);
  }
  const auto manifest = root / "manifest.tsv";
  if (fs::exists(manifest)) {
    std::ifstream in(manifest);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') {
        continue;
      }
      std::istringstream ls(line);
      FrameRecord r;
      std::string split;
      int skipped = 0;
      if (!std::getline(ls, r.id, '\t') || !std::getline(ls, split, '\t') || !std::getline(ls, r.source, '\t') ||
          !(ls >> skipped >> r.time)) {
        throw DataError(manifest.string() + ":" + std::to_string(lineno) + ": malformed manifest line");
      }
      r.split = enc::parse_split(split);
      r.skipped = skipped != 0;
      records_.push_back(std::move(r));
    }
  }
  std::ifstream audit(root / "audit.jsonl");
  std::string line;
  while (std::getline(audit, line)) {
    next_seq_ += line.empty() ? 0 : 1;
  }
}

void LabelStore::write_manifest() const
{
  std::ostringstream ss;
  ss << "# id\tsplit\tsource\tskipped\ttime\n";
  ss.precision(17);
  for (const auto & r : records_) {
    ss << r.id << '\t' << enc::to_string(r.split) << '\t' << r.source << '\t' << (r.skipped ? 1 : 0) << '\t' << r.time
       << '\n';
  }
  write_text_atomic(fs::path(dir_) / "manifest.tsv", ss.str());
}

const FrameRecord & LabelStore::record(const std::string & id) const
{
  for (const auto & r : records_) {
    if (r.id == id) {
      return r;
    }
  }
  throw NotFoundError("unknown frame '" + id + "'");
}

void LabelStore::import_frame(
  const FrameRecord & rec, const enc::FeatureFrame & features, const grid::Mask & labels,
  const std::vector<LabeledCluster> & clusters)
{
  check_id(rec.id);
  if (labels.width != features.side || labels.height != features.side) {
    throw ShapeError("labels and features of " + rec.id + " differ in size");
  }
  labels_from(clusters, features.side);  // bounds check
  std::lock_guard lock(mutex_);
  for (const auto & r : records_) {
    if (r.id == rec.id) {
      throw ConflictError("frame '" + rec.id + "' already imported");
    }
  }
  const fs::path root(dir_);
  enc::save_features((root / "frames" / (rec.id + ".feat")).string(), features);
  save_mask((root / "auto" / (rec.id + ".lbl")).string(), labels);
  save_mask((root / "labels" / (rec.id + ".lbl")).string(), labels);
  write_text_atomic(root / "auto" / (rec.id + ".jsonl"), cluster_text(clusters));
  write_text_atomic(root / "labels" / (rec.id + ".jsonl"), cluster_text(clusters));
  records_.push_back(rec);
  write_manifest();
}

std::vector<FrameRecord> LabelStore::frames() const
{
  std::lock_guard lock(mutex_);
  return records_;
}

std::vector<FrameRecord> LabelStore::frames(enc::Split split) const
{
  std::lock_guard lock(mutex_);
  std::vector<FrameRecord> out;
  std::copy_if(records_.begin(), records_.end(), std::back_inserter(out), [&](const auto & r) { return r.split == split; });
  return out;
}

FrameState LabelStore::load_state(const std::string & id) const
{
  const fs::path root(dir_);
  FrameState s;
  s.record = record(id);
  s.labels = load_mask((root / "labels" / (id + ".lbl")).string());
  s.clusters = read_cluster_file(root / "labels" / (id + ".jsonl"));
  return s;
}

FrameState LabelStore::frame(const std::string & id) const
{
  std::lock_guard lock(mutex_);
  return load_state(id);
}

enc::FeatureFrame LabelStore::features(const std::string & id) const
{
  std::lock_guard lock(mutex_);
  record(id);
  return enc::load_features((fs::path(dir_) / "frames" / (id + ".feat")).string());
}

FrameState LabelStore::apply_correction(const std::string & id, const Correction & correction)
{
  std::lock_guard lock(mutex_);
  auto s = load_state(id);
  const fs::path root(dir_);
  const auto feats = enc::load_features((root / "frames" / (id + ".feat")).string());
  apply_to(s, correction, feats);  // throws before anything is written

  {
    std::ofstream audit(root / "audit.jsonl", std::ios::app);
    audit << audit_json(next_seq_, id, correction).dump() << '\n';
    audit.flush();
    if (!audit) {
      throw DataError("cannot append to the audit log");
    }
  }
  ++next_seq_;
  save_mask((root / "labels" / (id + ".lbl")).string(), s.labels);
  write_text_atomic(root / "labels" / (id + ".jsonl"), cluster_text(s.clusters));
  for (auto & r : records_) {
    if (r.id == id) {
      r = s.record;
    }
  }
  write_manifest();
  return s;
}

grid::Mask LabelStore::replay(const std::string & id) const
{
  std::lock_guard lock(mutex_);
  const fs::path root(dir_);
  FrameState s;
  s.record = record(id);
  s.labels = load_mask((root / "auto" / (id + ".lbl")).string());
  s.clusters = read_cluster_file(root / "auto" / (id + ".jsonl"));
  const auto feats = enc::load_features((root / "frames" / (id + ".feat")).string());
  std::ifstream audit(root / "audit.jsonl");
  std::string line;
  while (std::getline(audit, line)) {
    if (line.empty()) {
      continue;
    }
    const auto [frame_id, c] = parse_audit(line);
    if (frame_id == id) {
      apply_to(s, c, feats);
    }
  }
  return s.labels;
}

std::vector<std::pair<FrameRecord, grid::Mask>> LabelStore::training_labels() const
{
  std::lock_guard lock(mutex_);
  std::vector<std::pair<FrameRecord, grid::Mask>> out;
  for (const auto & r : records_) {
    if (r.split == enc::Split::kTrain && !r.skipped) {
      out.emplace_back(r, load_mask((fs::path(dir_) / "labels" / (r.id + ".lbl")).string()));
    }
  }
  return out;
}

}  // namespace dogseg::label
