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

#ifndef DOGSEG__EVAL_HPP_
#define DOGSEG__EVAL_HPP_

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "dogseg/cluster.hpp"
#include "dogseg/encoder.hpp"
#include "dogseg/fcn.hpp"

namespace dogseg::eval
{

/// Scores and binary truth of the cells that take part in an evaluation
/// (occupied, not ignored). Frames are appended one after the other.
struct ScoredCells
{
  std::vector<float> scores;
  std::vector<std::uint8_t> truth;  // 1 = dynamic

  void append(const grid::Raster<float> & score, const grid::Mask & labels, const grid::Mask & occupied);
  std::size_t size() const { return scores.size(); }
};

struct RocPoint
{
  double threshold = 0.0;  // positive when score >= threshold
  double fpr = 0.0;
  double tpr = 0.0;
  bool operator==(const RocPoint &) const = default;
};

struct RocCurve
{
  std::vector<RocPoint> points;  // ascending threshold, -inf first and +inf last
  double auc = 0.0;              // NaN when degenerate
  bool degenerate = false;       // no positive or no negative cells
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

inline constexpr int kRocThresholds = 512;

/// Exact distinct scores as thresholds when there are at most n of them,
/// otherwise n evenly spaced ones over [min, max]. Trapezoid AUC.
RocCurve roc(const ScoredCells & cells, int n_thresholds = kRocThresholds);
RocCurve roc(
  const grid::Raster<float> & scores, const grid::Mask & labels, const grid::Mask & occupied,
  int n_thresholds = kRocThresholds);

/// Operating point maximizing tpr - fpr (first one on ties).
RocPoint youden_point(const RocCurve & curve);

struct PixelMetrics
{
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;
  double accuracy = 0.0;   // NaN when nothing was counted
  double precision = 0.0;  // NaN without predicted positives
  double recall = 0.0;     // NaN without true positives in the truth
  bool defined = false;

  void finalize();
  PixelMetrics & operator+=(const PixelMetrics & o);
};

/// Confusion counts over occupied, non-ignored cells.
PixelMetrics pixel_metrics(const grid::Mask & prediction, const grid::Mask & labels, const grid::Mask & occupied);
/// The same at a threshold on scored cells.
PixelMetrics threshold_metrics(const ScoredCells & cells, double threshold);

/// Wraps into (-pi, pi].
double wrap_angle(double a);

struct TruthObject
{
  std::vector<cluster::Cell> cells;
  double heading = 0.0;  // circular mean of the per-cell truth heading
};

/// Connected dynamic regions of the truth labels (8-neighbourhood).
std::vector<TruthObject> truth_objects(const enc::FeatureFrame & frame);

enum class HeadingSource { kVelocity, kNetwork };

struct OrientationMatch
{
  int cluster_id = 0;
  int truth_index = 0;
  double iou = 0.0;
  double extracted = 0.0;
  double truth = 0.0;
  double error = 0.0;  // wrap(extracted - truth)
};

struct OrientationReport
{
  std::vector<OrientationMatch> matches;
  std::vector<int> false_positives;  // cluster ids without a truth partner
  int undefined = 0;                 // matched, but the heading could not be extracted
  double mean_error = 0.0;
  double mean_abs_error = 0.0;
  double error_std = 0.0;            // population standard deviation of the signed errors

  /// Recomputes the statistics from `matches`.
  void finalize();
  OrientationReport & operator+=(const OrientationReport & o);
};

inline constexpr double kMinMatchIou = 0.1;

/// Each cluster is paired with the truth object it overlaps most; pairs below
/// min_iou count as false positives.
OrientationReport orientation_error(
  const std::vector<cluster::LabeledCluster> & clusters, HeadingSource source, const std::vector<TruthObject> & truth,
  double min_iou = kMinMatchIou);

/// Network dynamic probability per cell of an (unzoomed or zoomed) encoded frame.
grid::Raster<float> cnn_probability(fcn::Net & net, const enc::EncodedFrame & frame);
/// Split of an orientation output into sin and cos maps.
std::pair<grid::Raster<float>, grid::Raster<float>> orientation_maps(const fcn::Tensor & orientation);

struct SweepRow
{
  int angle = 0;
  PixelMetrics metrics;
};

struct SweepSpread
{
  double accuracy = 0.0;  // max - min over angles
  double precision = 0.0;
  double recall = 0.0;
};

/// Rotates one frame through the ten-degree set and evaluates each rotation with
/// p > threshold as the dynamic decision.
std::vector<SweepRow> rotation_sweep(
  fcn::Net & net, const enc::FeatureFrame & frame, const enc::EncoderConfig & config, double threshold = 0.5);
SweepSpread sweep_spread(const std::vector<SweepRow> & rows);

// CSV files. Numbers use the shortest text that reads back to the same double.
void write_roc_csv(std::ostream & out, const RocCurve & curve);
RocCurve read_roc_csv(std::istream & in);
void write_sweep_csv(std::ostream & out, const std::vector<SweepRow> & rows);

struct PlotSeries
{
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Minimal line plot as SVG; identical input gives identical bytes.
std::string svg_line_plot(
  const std::string & title, const std::string & x_label, const std::string & y_label,
  const std::vector<PlotSeries> & series, bool unit_square = false);

struct PlotInputs
{
  std::map<std::string, RocCurve> rocs;  // method name -> curve
  std::vector<fcn::CurvePoint> learning;
  std::vector<SweepRow> sweep;
};

/// roc_<method>.csv + roc.svg, curve.csv + curve.svg, sweep.csv + sweep.svg for
/// whatever is present. Returns the written file names.
std::vector<std::string> emit_plots(const PlotInputs & inputs, const std::string & out_dir);

}  // namespace dogseg::eval

#endif  // DOGSEG__EVAL_HPP_
