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

#include "dogseg/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

namespace dogseg::eval
{

namespace
{

constexpr double kInf = std::numeric_limits<double>::infinity();
const double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_label(std::uint8_t v)
{
  if (v != enc::kLabelStatic && v != enc::kLabelDynamic && v != enc::kLabelIgnore) {
    throw DataError("label value " + std::to_string(v) + " is not static, dynamic or ignore");
  }
}

double ratio(std::size_t a, std::size_t b)
{
  return b == 0 ? kNaN : static_cast<double>(a) / static_cast<double>(b);
}

std::string num(double v)
{
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_num(const std::string & s)
{
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw DataError("bad number '" + s + "' in csv");
  }
  return v;
}

double trapezoid(const std::vector<RocPoint> & pts)
{
  // points run from (1,1) to (0,0)
  double area = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    area += (pts[i - 1].fpr - pts[i].fpr) * (pts[i - 1].tpr + pts[i].tpr) * 0.5;
  }
  return area;
}

std::string fixed(double v)
{
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string & s)
{
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '&':
        out += "&amp;";
        break;
      default:
        out += c;
    }
  }
  return out;
}

void write_file(const std::filesystem::path & path, const std::string & text)
{
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) {
    throw DataError("cannot write " + path.string());
  }
}

}  // namespace

void ScoredCells::append(const grid::Raster<float> & score, const grid::Mask & labels, const grid::Mask & occupied)
{
  if (!score.same_shape(labels) || !score.same_shape(occupied)) {
    throw ShapeError("scores, labels and occupancy differ in size");
  }
  for (std::size_t i = 0; i < score.size(); ++i) {
    check_label(labels[i]);
    if (!occupied[i] || labels[i] == enc::kLabelIgnore) {
      continue;
    }
    if (std::isnan(score[i])) {
      throw DataError("NaN score on an evaluated cell");
    }
    scores.push_back(score[i]);
    truth.push_back(labels[i] == enc::kLabelDynamic ? 1 : 0);
  }
}

RocCurve roc(const ScoredCells & cells, int n_thresholds)
{
  if (n_thresholds < 2) {
    throw ConfigError("a ROC sweep needs at least two thresholds");
  }
  if (cells.scores.size() != cells.truth.size()) {
    throw ShapeError("score and truth counts differ");
  }
  RocCurve curve;
  for (auto t : cells.truth) {
    (t ? curve.positives : curve.negatives) += 1;
  }
  if (curve.positives == 0 || curve.negatives == 0) {
    curve.degenerate = true;
    curve.auc = kNaN;
    return curve;
  }

  std::vector<std::size_t> order(cells.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return cells.scores[a] < cells.scores[b]; });
  std::vector<float> sorted(order.size());
  std::vector<std::size_t> pos_below(order.size() + 1, 0);  // positives among the first k
  for (std::size_t k = 0; k < order.size(); ++k) {
    sorted[k] = cells.scores[order[k]];
    pos_below[k + 1] = pos_below[k] + cells.truth[order[k]];
  }

  std::vector<double> thresholds;
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    if (k == 0 || sorted[k] != sorted[k - 1]) {
      thresholds.push_back(sorted[k]);
    }
  }
  if (static_cast<int>(thresholds.size()) > n_thresholds) {
    const double lo = sorted.front();
    const double hi = sorted.back();
    thresholds.resize(static_cast<std::size_t>(n_thresholds));
    for (int k = 0; k < n_thresholds; ++k) {
      thresholds[static_cast<std::size_t>(k)] = lo + (hi - lo) * k / (n_thresholds - 1);
    }
  }

  const double p = static_cast<double>(curve.positives);
  const double n = static_cast<double>(curve.negatives);
  // Twice the area in count units is an integer, so a perfect separator gives exactly 1.
  std::uint64_t area2 = 0;
  std::size_t prev_tp = curve.positives;
  std::size_t prev_fp = curve.negatives;
  auto add = [&](double t, std::size_t tp, std::size_t fp) {
    curve.points.push_back({t, static_cast<double>(fp) / n, static_cast<double>(tp) / p});
    area2 += static_cast<std::uint64_t>(prev_fp - fp) * (prev_tp + tp);
    prev_tp = tp;
    prev_fp = fp;
  };
  curve.points.push_back({-kInf, 1.0, 1.0});
  for (double t : thresholds) {
    // cells with score >= t
    const auto below = static_cast<std::size_t>(
      std::lower_bound(sorted.begin(), sorted.end(), t, [](float s, double v) { return s < v; }) - sorted.begin());
    add(t, curve.positives - pos_below[below], curve.negatives - (below - pos_below[below]));
  }
  add(kInf, 0, 0);
  curve.auc = static_cast<double>(area2) / (2.0 * p * n);
  return curve;
}

RocCurve roc(const grid::Raster<float> & scores, const grid::Mask & labels, const grid::Mask & occupied, int n_thresholds)
{
  ScoredCells cells;
  cells.append(scores, labels, occupied);
  return roc(cells, n_thresholds);
}

RocPoint youden_point(const RocCurve & curve)
{
  if (curve.degenerate || curve.points.empty()) {
    throw DataError("degenerate ROC curve has no operating point");
  }
  RocPoint best = curve.points.front();
  for (const auto & pt : curve.points) {
    if (pt.tpr - pt.fpr > best.tpr - best.fpr) {
      best = pt;
    }
  }
  return best;
}

void PixelMetrics::finalize()
{
  const std::size_t total = tp + fp + fn + tn;
  defined = total > 0;
  accuracy = ratio(tp + tn, total);
  precision = ratio(tp, tp + fp);
  recall = ratio(tp, tp + fn);
}

PixelMetrics & PixelMetrics::operator+=(const PixelMetrics & o)
{
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  tn += o.tn;
  finalize();
  return *this;
}

PixelMetrics pixel_metrics(const grid::Mask & prediction, const grid::Mask & labels, const grid::Mask & occupied)
{
  if (!prediction.same_shape(labels) || !prediction.same_shape(occupied)) {
    throw ShapeError("prediction, labels and occupancy differ in size");
  }
  PixelMetrics m;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    check_label(labels[i]);
    if (!occupied[i] || labels[i] == enc::kLabelIgnore) {
      continue;
    }
    const bool pred = prediction[i] != 0;
    const bool truth = labels[i] == enc::kLabelDynamic;
    if (pred && truth) {
      ++m.tp;
    } else if (pred) {
      ++m.fp;
    } else if (truth) {
      ++m.fn;
    } else {
      ++m.tn;
    }
  }
  m.finalize();
  return m;
}

PixelMetrics threshold_metrics(const ScoredCells & cells, double threshold)
{
  PixelMetrics m;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const bool pred = cells.scores[i] >= threshold;
    if (cells.truth[i]) {
      (pred ? m.tp : m.fn) += 1;
    } else {
      (pred ? m.fp : m.tn) += 1;
    }
  }
  m.finalize();
  return m;
}

double wrap_angle(double a)
{
  double r = std::remainder(a, 2.0 * std::numbers::pi);  // [-pi, pi]
  if (r <= -std::numbers::pi) {
    r += 2.0 * std::numbers::pi;
  }
  return r;
}

std::vector<TruthObject> truth_objects(const enc::FeatureFrame & frame)
{
  grid::Mask dyn(frame.side, frame.side, 0);
  for (std::size_t i = 0; i < dyn.size(); ++i) {
    dyn[i] = frame.labels[i] == enc::kLabelDynamic ? 1 : 0;
  }
  std::vector<TruthObject> out;
  for (auto & cells : cluster::dbscan(dyn, 1.5, 1)) {
    double s = 0.0;
    double c = 0.0;
    for (const auto & p : cells) {
      const double h = frame.heading.at(p.x, p.y);
      if (!std::isnan(h)) {
        s += std::sin(h);
        c += std::cos(h);
      }
    }
    const double heading = std::hypot(s, c) < 1e-9 ? kNaN : std::atan2(s, c);
    out.push_back({std::move(cells), heading});
  }
  return out;
}

void OrientationReport::finalize()
{
  std::vector<double> e;
  for (const auto & m : matches) {
    if (!std::isnan(m.error)) {
      e.push_back(m.error);
    }
  }
  if (e.empty()) {
    mean_error = mean_abs_error = error_std = kNaN;
    return;
  }
  const double n = static_cast<double>(e.size());
  mean_error = std::accumulate(e.begin(), e.end(), 0.0) / n;
  mean_abs_error = std::accumulate(e.begin(), e.end(), 0.0, [](double a, double b) { return a + std::abs(b); }) / n;
  double ss = 0.0;
  for (double v : e) {
    ss += (v - mean_error) * (v - mean_error);
  }
  error_std = std::sqrt(ss / n);
}

OrientationReport & OrientationReport::operator+=(const OrientationReport & o)
{
  matches.insert(matches.end(), o.matches.begin(), o.matches.end());
  false_positives.insert(false_positives.end(), o.false_positives.begin(), o.false_positives.end());
  undefined += o.undefined;
  finalize();
  return *this;
}

OrientationReport orientation_error(
  const std::vector<cluster::LabeledCluster> & clusters, HeadingSource source, const std::vector<TruthObject> & truth,
  double min_iou)
{
  std::map<cluster::Cell, int> owner;
  for (std::size_t t = 0; t < truth.size(); ++t) {
    for (const auto & p : truth[t].cells) {
      owner.emplace(p, static_cast<int>(t));
    }
  }
  OrientationReport r;
  for (const auto & c : clusters) {
    std::map<int, int> overlap;
    for (const auto & p : c.cells) {
      const auto it = owner.find(p);
      if (it != owner.end()) {
        ++overlap[it->second];
      }
    }
    int best = -1;
    int best_n = 0;
    for (const auto & [t, n] : overlap) {
      if (n > best_n) {
        best = t;
        best_n = n;
      }
    }
    const double iou = best < 0 ? 0.0
                                : static_cast<double>(best_n) /
                                    static_cast<double>(c.cells.size() + truth[static_cast<std::size_t>(best)].cells.size() - best_n);
    if (best < 0 || iou < min_iou) {
      r.false_positives.push_back(c.id);
      continue;
    }
    OrientationMatch m;
    m.cluster_id = c.id;
    m.truth_index = best;
    m.iou = iou;
    m.extracted = source == HeadingSource::kVelocity ? c.heading_vel : c.heading_cnn;
    m.truth = truth[static_cast<std::size_t>(best)].heading;
    m.error = std::isnan(m.extracted) || std::isnan(m.truth) ? kNaN : wrap_angle(m.extracted - m.truth);
    if (std::isnan(m.error)) {
      ++r.undefined;
    }
    r.matches.push_back(m);
  }
  r.finalize();
  return r;
}

grid::Raster<float> cnn_probability(fcn::Net & net, const enc::EncodedFrame & frame)
{
  const auto out = net.forward(fcn::to_input(frame));
  const auto p = fcn::dynamic_probability(out.segmentation);
  grid::Raster<float> r(frame.side, frame.side);
  r.data.assign(p.begin(), p.end());
  return r;
}

std::pair<grid::Raster<float>, grid::Raster<float>> orientation_maps(const fcn::Tensor & o)
{
  if (o.c != 2 || o.h != o.w) {
    throw ShapeError("orientation output must be (2, side, side)");
  }
  grid::Raster<float> s(o.w, o.h);
  grid::Raster<float> c(o.w, o.h);
  const std::size_t plane = o.plane();
  std::copy_n(o.data.begin(), plane, s.data.begin());
  std::copy_n(o.data.begin() + static_cast<std::ptrdiff_t>(plane), plane, c.data.begin());
  return {std::move(s), std::move(c)};
}

std::vector<SweepRow> rotation_sweep(
  fcn::Net & net, const enc::FeatureFrame & frame, const enc::EncoderConfig & config, double threshold)
{
  std::vector<SweepRow> rows;
  for (int angle : enc::augmentation_angles()) {
    const auto e = enc::prepare(frame, config, angle);
    const auto p = cnn_probability(net, e);
    grid::Mask pred(e.side, e.side, 0);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      pred[i] = p[i] > threshold ? 1 : 0;
    }
    rows.push_back({angle, pixel_metrics(pred, e.labels, e.occupied)});
  }
  return rows;
}

SweepSpread sweep_spread(const std::vector<SweepRow> & rows)
{
  auto spread = [&](auto get) {
    double lo = kInf;
    double hi = -kInf;
    for (const auto & r : rows) {
      const double v = get(r.metrics);
      if (!std::isnan(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
    return hi >= lo ? hi - lo : kNaN;
  };
  return {spread([](const PixelMetrics & m) { return m.accuracy; }),
    spread([](const PixelMetrics & m) { return m.precision; }), spread([](const PixelMetrics & m) { return m.recall; })};
}

void write_roc_csv(std::ostream & out, const RocCurve & curve)
{
  out << "threshold,fpr,tpr\n";
  for (const auto & p : curve.points) {
    out << num(p.threshold) << ',' << num(p.fpr) << ',' << num(p.tpr) << '\n';
  }
}

RocCurve read_roc_csv(std::istream & in)
{
  std::string line;
  if (!std::getline(in, line) || line != "threshold,fpr,tpr") {
    throw DataError("roc csv must start with threshold,fpr,tpr");
  }
  RocCurve c;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    std::istringstream ls(line);
    std::string a;
    std::string b;
    std::string d;
    if (!std::getline(ls, a, ',') || !std::getline(ls, b, ',') || !std::getline(ls, d)) {
      throw DataError("malformed roc row '" + line + "'");
    }
    c.points.push_back({parse_num(a), parse_num(b), parse_num(d)});
  }
  c.degenerate = c.points.empty();
  c.auc = c.degenerate ? kNaN : trapezoid(c.points);
  return c;
}

void write_sweep_csv(std::ostream & out, const std::vector<SweepRow> & rows)
{
  out << "angle,acc,prec,rec\n";
  for (const auto & r : rows) {
    out << r.angle << ',' << num(r.metrics.accuracy) << ',' << num(r.metrics.precision) << ','
        << num(r.metrics.recall) << '\n';
  }
}

std::string svg_line_plot(
  const std::string & title, const std::string & x_label, const std::string & y_label,
  const std::vector<PlotSeries> & series, bool unit_square)
{
  static const char * palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  constexpr double W = 520;
  constexpr double H = 380;
  constexpr double L = 60;
  constexpr double R = 130;
  constexpr double T = 36;
  constexpr double B = 50;

  double x0 = 0.0;
  double x1 = 1.0;
  double y0 = 0.0;
  double y1 = 1.0;
  if (!unit_square) {
    x0 = y0 = kInf;
    x1 = y1 = -kInf;
    for (const auto & s : series) {
      for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
        if (std::isfinite(s.x[i]) && std::isfinite(s.y[i])) {
          x0 = std::min(x0, s.x[i]);
          x1 = std::max(x1, s.x[i]);
          y0 = std::min(y0, s.y[i]);
          y1 = std::max(y1, s.y[i]);
        }
      }
    }
    if (!(x1 >= x0)) {
      x0 = 0.0;
      x1 = 1.0;
      y0 = 0.0;
      y1 = 1.0;
    }
    if (x1 == x0) {
      x1 = x0 + 1.0;
    }
    if (y1 == y0) {
      y1 = y0 + 1.0;
    }
  }
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << escape(title) << "</text>\n";
  s << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << W - L - R << "\" height=\"" << H - T - B
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4;
    const double yv = y0 + (y1 - y0) * k / 4;
    s << "<text x=\"" << fixed(px(xv)) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << fixed(xv) << "</text>\n";
    s << "<text x=\"" << L - 6 << "\" y=\"" << fixed(py(yv) + 4) << "\" text-anchor=\"end\">" << fixed(yv) << "</text>\n";
  }
  s << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << escape(x_label) << "</text>\n";
  s << "<text transform=\"translate(16," << (T + H - B) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape(y_label) << "</text>\n";
  if (unit_square) {
    s << "<line x1=\"" << fixed(px(0)) << "\" y1=\"" << fixed(py(0)) << "\" x2=\"" << fixed(px(1)) << "\" y2=\""
      << fixed(py(1)) << "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";
  }
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto & sr = series[k];
    const char * color = palette[k % (sizeof palette / sizeof palette[0])];
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    bool first = true;
    for (std::size_t i = 0; i < sr.x.size() && i < sr.y.size(); ++i) {
      if (!std::isfinite(sr.x[i]) || !std::isfinite(sr.y[i])) {
        continue;
      }
      s << (first ? "" : " ") << fixed(px(sr.x[i])) << ',' << fixed(py(sr.y[i]));
      first = false;
    }
    s << "\"/>\n";
    const double ly = T + 14 + 16.0 * static_cast<double>(k);
    s << "<line x1=\"" << W - R + 10 << "\" y1=\"" << ly << "\" x2=\"" << W - R + 30 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << W - R + 34 << "\" y=\"" << ly + 4 << "\">" << escape(sr.name) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::vector<std::string> emit_plots(const PlotInputs & in, const std::string & out_dir)
{
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) {
    throw DataError("cannot create output directory " + out_dir);
  }
  const fs::path dir(out_dir);
  std::vector<std::string> written;
  auto put = [&](const std::string & name, const std::string & text) {
    write_file(dir / name, text);
    written.push_back(name);
  };

  if (!in.rocs.empty()) {
    std::vector<PlotSeries> series;
    for (const auto & [name, curve] : in.rocs) {
      std::ostringstream csv;
      write_roc_csv(csv, curve);
      put("roc_" + name + ".csv", csv.str());
      PlotSeries ps{name + (curve.degenerate ? "" : " (AUC " + fixed(curve.auc) + ")"), {}, {}};
      for (auto it = curve.points.rbegin(); it != curve.points.rend(); ++it) {
        ps.x.push_back(it->fpr);
        ps.y.push_back(it->tpr);
      }
      series.push_back(std::move(ps));
    }
    put("roc.svg", svg_line_plot("ROC, occupied cells", "false positive rate", "true positive rate", series, true));
  }
  if (!in.learning.empty()) {
    std::ostringstream csv;
    fcn::write_curve_csv(csv, in.learning);
    put("curve.csv", csv.str());
    PlotSeries loss{"loss", {}, {}};
    PlotSeries acc{"accuracy", {}, {}};
    PlotSeries prec{"precision", {}, {}};
    PlotSeries rec{"recall", {}, {}};
    for (const auto & p : in.learning) {
      loss.x.push_back(p.iter);
      loss.y.push_back(p.loss);
      acc.x.push_back(p.iter);
      acc.y.push_back(p.accuracy);
      prec.x.push_back(p.iter);
      prec.y.push_back(p.precision);
      rec.x.push_back(p.iter);
      rec.y.push_back(p.recall);
    }
    put("curve.svg", svg_line_plot("Learning curve (occupied cells)", "iteration", "rate", {acc, prec, rec}));
    put("loss.svg", svg_line_plot("Training loss", "iteration", "loss", {loss}));
  }
  if (!in.sweep.empty()) {
    std::ostringstream csv;
    write_sweep_csv(csv, in.sweep);
    put("sweep.csv", csv.str());
    PlotSeries acc{"accuracy", {}, {}};
    PlotSeries prec{"precision", {}, {}};
    PlotSeries rec{"recall", {}, {}};
    for (const auto & r : in.sweep) {
      acc.x.push_back(r.angle);
      acc.y.push_back(r.metrics.accuracy);
      prec.x.push_back(r.angle);
      prec.y.push_back(r.metrics.precision);
      rec.x.push_back(r.angle);
      rec.y.push_back(r.metrics.recall);
    }
    put("sweep.svg", svg_line_plot("Rotation sweep", "angle [deg]", "rate", {acc, prec, rec}));
  }
  if (written.empty()) {
    throw DataError("nothing to plot");
  }
  return written;
}

}  // namespace dogseg::eval
