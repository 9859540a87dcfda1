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

#ifndef DOGSEG__WORKFLOW_HPP_
#define DOGSEG__WORKFLOW_HPP_

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dogseg/eval.hpp"
#include "dogseg/labeler.hpp"
#include "dogseg/pipeline.hpp"

// The steps behind the command line tool. Every step reads its inputs from
// directories and writes its artifacts under one output directory.
namespace dogseg::flow
{

using Reporter = std::function<void(const std::string & line)>;

// ---------------------------------------------------------------------------
// Datasets
//
// <dir>/index.tsv        IndexEntry per frame in a split
// <dir>/frames.tsv       id, scenario, step, time of every written frame
// <dir>/frames/<id>.feat features with labels and heading

struct FrameInfo
{
  std::string id;
  std::string scenario;
  int step = 0;
  double time = 0.0;
};

/// Union of one or more dataset directories. An id is taken from the first
/// directory that lists it; frame files are looked up in the same order.
class Dataset
{
public:
  explicit Dataset(std::vector<std::string> dirs);

  const std::vector<enc::IndexEntry> & entries() const { return entries_; }
  std::vector<std::string> ids(enc::Split split) const;
  const FrameInfo & info(const std::string & id) const;
  enc::FeatureFrame load(const std::string & id) const;
  std::string frame_path(const std::string & id) const;

private:
  std::vector<std::string> dirs_;
  std::vector<enc::IndexEntry> entries_;
  std::map<std::string, FrameInfo> info_;
};

void write_dataset_index(
  const std::string & dir, const std::vector<enc::IndexEntry> & entries, const std::vector<FrameInfo> & info);
std::string frame_file(const std::string & dir, const std::string & id);

/// Frames in memory served as every listed rotation of every frame.
class RotatingSource : public fcn::SampleSource
{
public:
  RotatingSource(std::vector<enc::FeatureFrame> frames, enc::EncoderConfig encoder, std::vector<int> angles);
  std::size_t size() const override { return frames_.size() * angles_.size(); }
  enc::EncodedFrame get(std::size_t index) const override;

private:
  std::vector<enc::FeatureFrame> frames_;
  enc::EncoderConfig encoder_;
  std::vector<int> angles_;
};

// ---------------------------------------------------------------------------
// simulate

struct SimulateOptions
{
  std::vector<std::string> scenarios{"road"};  // canned names or files
  pipeline::SimConfig sim;
  label::SplitConfig split;
  bool unlabeled = false;  // every frame goes to the unlabeled pool
  std::uint64_t seed = 1;
  std::string out;
};

/// Frames per scenario are split with split_dataset; gap frames are written but not
/// indexed. With sim.max_frames set the scenario runs long enough to deliver that many.
std::vector<enc::IndexEntry> run_simulate(const SimulateOptions & options, const Reporter & report = {});

// ---------------------------------------------------------------------------
// encode

struct EncodeOptions
{
  std::vector<std::string> data;
  enc::EncoderConfig encoder;
  bool rotations = false;  // write the 36 rotations of train frames as well
  std::string out;
};

/// <out>/index.tsv plus <out>/<id>[_r<deg>].chan/.lbl. Returns the frame count.
int run_encode(const EncodeOptions & options, const Reporter & report = {});

// ---------------------------------------------------------------------------
// train

struct TrainOptions
{
  std::vector<std::string> data;
  std::string arch = "TOY-32s";
  bool heads = false;
  fcn::TrainConfig train;
  enc::EncoderConfig encoder;
  bool rotate = true;           // train on all 36 rotations
  std::string incremental_from;  // run directory of a trained model, empty = from scratch
  std::string out;
};

struct TrainResult
{
  std::vector<fcn::CurvePoint> curve;
  std::vector<std::string> train_ids;
  std::uint64_t checksum = 0;
};

/// <out>/model.ckpt, encoder.json, curve.csv, curve.svg, loss.svg.
TrainResult run_train(const TrainOptions & options, const Reporter & report = {});

struct ModelRun
{
  fcn::Net net;
  enc::EncoderConfig encoder;
};

ModelRun load_model_run(const std::string & run_dir);
void save_encoder_config(const std::string & path, const enc::EncoderConfig & config);
enc::EncoderConfig load_encoder_config(const std::string & path);

// ---------------------------------------------------------------------------
// eval

struct EvalOptions
{
  std::vector<std::string> data;
  std::string model;  // run directory
  enc::Split split = enc::Split::kTest;
  double threshold = 0.5;           // network: dynamic when p > threshold
  double baseline_threshold = 1.0;  // Mahalanobis distance
  int sweep_frame = -1;             // index into the split for a rotation sweep, -1 = none
  std::string out;
};

struct EvalResult
{
  eval::RocCurve cnn;
  eval::RocCurve baseline;
  eval::PixelMetrics cnn_metrics;
  eval::PixelMetrics baseline_metrics;
  eval::OrientationReport velocity_orientation;
  std::optional<eval::OrientationReport> cnn_orientation;
  std::vector<eval::SweepRow> sweep;
  int frames = 0;
};

/// <out>/roc_cnn.csv, roc_baseline.csv, roc.svg, metrics.json and with a sweep
/// sweep.csv, sweep.svg.
EvalResult run_eval(const EvalOptions & options, const Reporter & report = {});

/// Recall at the largest ROC threshold whose false positive rate stays at or below fpr.
double recall_at_fpr(const eval::RocCurve & curve, double fpr);

// ---------------------------------------------------------------------------
// label

struct LabelOptions
{
  std::vector<std::string> data;
  std::vector<enc::Split> splits{enc::Split::kTrain, enc::Split::kValidation, enc::Split::kTest};
  std::string classifier = "baseline";  // or "cnn"
  std::string model;                    // run directory for the cnn classifier
  double threshold = 1.0;               // baseline distance or network probability
  double eps = cluster::kDefaultEps;
  int min_pts = cluster::kDefaultMinPts;
  label::SuppressionConfig suppression;
  std::string out;  // label store directory
};

/// Imports frames with auto labels into a label store. Returns the frame count.
int run_label(const LabelOptions & options, const Reporter & report = {});

// ---------------------------------------------------------------------------
// ssl

struct SslOptions
{
  std::vector<std::string> data;  // labeled dataset
  std::vector<std::string> pool;  // unlabeled frames
  std::string model;              // run directory of the current model
  int take_every = 5;
  double prob_threshold = 0.5;
  label::SuppressionConfig suppression;
  bool retrain = true;
  TrainOptions train;  // data, incremental_from and out are filled in
  std::string out;
};

struct SslRunResult
{
  label::SslResult round;
  std::optional<TrainResult> retrain;
};

/// <out>/index.tsv (merged), frames/ of the added frames with their auto labels,
/// ssl.json and, when retraining, the train artifacts.
SslRunResult run_ssl(const SslOptions & options, const Reporter & report = {});

// ---------------------------------------------------------------------------
// sweep

/// range, combo, crop, arch, lr, lr-policy, class-weight
std::vector<std::string> sweep_params();
std::vector<std::string> default_sweep_values(const std::string & param);
/// Applies one sweep value to the train options. Combo 3 turns freespace off.
void apply_sweep_value(TrainOptions & options, const std::string & param, const std::string & value);

struct SweepOptions
{
  std::string param;
  std::vector<std::string> values;  // empty = default grid
  TrainOptions train;
  EvalOptions eval;
  std::string out;
};

struct SweepPoint
{
  std::string value;
  EvalResult result;
};

/// One train + eval run per value under <out>/<param>=<value>/ and <out>/sweep_<param>.csv.
std::vector<SweepPoint> run_sweep(const SweepOptions & options, const Reporter & report = {});

}  // namespace dogseg::flow

#endif  // DOGSEG__WORKFLOW_HPP_
