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

#ifndef DOGSEG__LABELER_HPP_
#define DOGSEG__LABELER_HPP_

#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "dogseg/cluster.hpp"
#include "dogseg/encoder.hpp"
#include "dogseg/fcn.hpp"

namespace dogseg::label
{

// Provenance strings as stored in IndexEntry::source.
inline constexpr const char * kSourceSimulator = "simulator";
inline constexpr const char * kSourceBaseline = "baseline-auto";
inline constexpr const char * kSourceCnn = "cnn-auto";
inline constexpr const char * kSourceHuman = "human-corrected";

struct BaselineClassifier
{
  double threshold = 1.0;
};

struct CnnClassifier
{
  fcn::Net * net = nullptr;
  double prob_threshold = 0.5;  // dynamic when p > threshold
  enc::EncoderConfig encoder;   // crop must be the identity
};

using Classifier = std::variant<BaselineClassifier, CnnClassifier>;

struct AutoLabel
{
  grid::Mask labels;  // cluster cells dynamic, everything else static
  std::vector<cluster::LabeledCluster> clusters;
};

/// classify -> refine with occupancy -> dbscan -> cluster statistics.
AutoLabel auto_label(
  const std::string & frame_id, const enc::FeatureFrame & frame, const Classifier & classifier,
  double eps = cluster::kDefaultEps, int min_pts = cluster::kDefaultMinPts);

/// Label raster of the given clusters on a side x side grid.
grid::Mask labels_from(const std::vector<cluster::LabeledCluster> & clusters, int side);

enum class SuppressionMode { kNone, kNormalizedSpeed, kCombinedP };
std::string to_string(SuppressionMode m);
SuppressionMode parse_suppression_mode(const std::string & text);

struct SuppressionConfig
{
  SuppressionMode mode = SuppressionMode::kNone;
  double threshold = 0.0;
  int min_cluster_cells = 1;
  void validate() const;
};

/// Drops weak or small clusters; the survivors keep their order and ids.
std::vector<cluster::LabeledCluster> suppress(
  const std::vector<cluster::LabeledCluster> & clusters, const SuppressionConfig & config);

struct SplitConfig
{
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
  int min_gap = 20;  // frames dropped between runs of different splits
  std::uint64_t seed = 1;
  void validate() const;
};

/// One contiguous run per split in a seed-chosen order, separated by min_gap
/// unused frames. Fractions apply to the frames left after the gaps.
/// Entry i is the split of frame i, or nullopt for gap frames.
std::vector<std::optional<enc::Split>> split_dataset(int n_frames, const SplitConfig & config);

/// Every take_every-th id, starting with the first: ceil(n / take_every) ids.
std::vector<std::string> ssl_select(const std::vector<std::string> & unlabeled, int take_every);

struct SslResult
{
  std::vector<enc::IndexEntry> merged;  // input entries untouched, new ones appended
  std::map<std::string, AutoLabel> auto_labels;
  int added = 0;
  int iterations = 0;  // retraining budget scaled with the train-set size
};

using FrameLoader = std::function<enc::FeatureFrame(const std::string & id)>;

/// Labels the selected unlabeled frames with the net, suppresses, and appends them
/// to the train split as cnn-auto. Validation and test entries are never touched.
SslResult ssl_round(
  const std::vector<enc::IndexEntry> & dataset, const std::vector<std::string> & unlabeled, const FrameLoader & load,
  const CnnClassifier & classifier, const SuppressionConfig & suppression, int take_every, int base_iterations);

enum class Action { kAccept, kReject, kFlipToStatic, kAddRegion, kSkip };
std::string to_string(Action a);
Action parse_action(const std::string & text);

struct Correction
{
  int cluster_id = -1;  // unused for add-region and skip
  Action action = Action::kAccept;
  std::vector<cluster::Cell> region;
};

struct FrameRecord
{
  std::string id;
  enc::Split split = enc::Split::kTrain;
  std::string source;
  bool skipped = false;
  double time = 0.0;  // s, scenario time of the frame
  bool operator==(const FrameRecord &) const = default;
};

struct FrameState
{
  FrameRecord record;
  grid::Mask labels;
  std::vector<cluster::LabeledCluster> clusters;
};

// Directory layout:
//   manifest.tsv      id, split, label source, skipped, time
//   frames/<id>.feat  features
//   auto/<id>.lbl     labels as imported, auto/<id>.jsonl clusters as imported
//   labels/<id>.lbl   current labels, labels/<id>.jsonl current clusters
//   audit.jsonl       one line per applied correction, append-only
// All calls are serialized by an internal mutex.
class LabelStore
{
public:
  /// Opens an existing store or initializes an empty one.
  explicit LabelStore(std::string dir);

  const std::string & dir() const { return dir_; }

  void import_frame(
    const FrameRecord & record, const enc::FeatureFrame & features, const grid::Mask & labels,
    const std::vector<cluster::LabeledCluster> & clusters);

  std::vector<FrameRecord> frames() const;
  std::vector<FrameRecord> frames(enc::Split split) const;
  FrameState frame(const std::string & id) const;
  enc::FeatureFrame features(const std::string & id) const;

  /// Reviewed clusters are final: acting on one again is a conflict. So is painting
  /// over a rejected or flipped cluster.
  FrameState apply_correction(const std::string & id, const Correction & correction);

  /// Imported labels with the audit log re-applied from scratch.
  grid::Mask replay(const std::string & id) const;

  /// Train-split frames that were not skipped, with their current labels.
  std::vector<std::pair<FrameRecord, grid::Mask>> training_labels() const;

private:
  void write_manifest() const;
  FrameState load_state(const std::string & id) const;
  const FrameRecord & record(const std::string & id) const;

  std::string dir_;
  mutable std::mutex mutex_;
  std::vector<FrameRecord> records_;
  int next_seq_ = 0;
};

// Binary label raster: "DSLM", u32 version, i32 width, i32 height, bytes.
void save_mask(const std::string & path, const grid::Mask & mask);
grid::Mask load_mask(const std::string & path);

}  // namespace dogseg::label

#endif  // DOGSEG__LABELER_HPP_
