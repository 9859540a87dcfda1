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

#include "dogseg/workflow.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dogseg/error.hpp"

namespace dogseg::flow
{

namespace fs = std::filesystem;
using nlohmann::json;

namespace
{

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void say(const Reporter & report, const std::string & line)
{
  if (report) {
    report(line);
  }
}

void make_dir(const std::string & dir)
{
  if (dir.empty()) {
    throw ConfigError("an output directory is required");
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw DataError("cannot create directory " + dir);
  }
}

std::string join(const std::string & dir, const std::string & name)
{
  return (fs::path(dir) / name).string();
}

void write_text(const std::string & path, const std::string & text)
{
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) {
    throw DataError("failed writing " + path);
  }
}

json number_or_null(double v)
{
  return std::isfinite(v) ? json(v) : json(nullptr);
}

json metrics_json(const eval::PixelMetrics & m)
{
  return {{"tp", m.tp}, {"fp", m.fp}, {"fn", m.fn}, {"tn", m.tn}, {"accuracy", number_or_null(m.accuracy)},
    {"precision", number_or_null(m.precision)}, {"recall", number_or_null(m.recall)}};
}

json orientation_json(const eval::OrientationReport & r)
{
  return {{"matches", r.matches.size()}, {"false_positives", r.false_positives.size()}, {"undefined", r.undefined},
    {"mean_error", number_or_null(r.mean_error)}, {"mean_abs_error", number_or_null(r.mean_abs_error)},
    {"error_std", number_or_null(r.error_std)}};
}

std::string safe_id(const std::string & name)
{
  std::string out;
  for (char c : name) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.';
    out += ok ? c : '_';
  }
  return out.empty() ? "frame" : out;
}

std::vector<enc::FeatureFrame> load_all(const Dataset & ds, const std::vector<std::string> & ids)
{
  std::vector<enc::FeatureFrame> frames;
  frames.reserve(ids.size());
  for (const auto & id : ids) {
    frames.push_back(ds.load(id));
  }
  return frames;
}

}  // namespace

// ---------------------------------------------------------------------------

Dataset::Dataset(std::vector<std::string> dirs) : dirs_(std::move(dirs))
{
  if (dirs_.empty()) {
    throw ConfigError("at least one dataset directory is required");
  }
  std::set<std::string> seen;
  for (const auto & dir : dirs_) {
    for (auto & e : enc::read_index(join(dir, "index.tsv"))) {
      if (seen.insert(e.id).second) {
        entries_.push_back(std::move(e));
      }
    }
    std::ifstream in(join(dir, "frames.tsv"));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') {
        continue;
      }
      std::istringstream ls(line);
      FrameInfo fi;
      if (!std::getline(ls, fi.id, '\t') || !std::getline(ls, fi.scenario, '\t') || !(ls >> fi.step >> fi.time)) {
        throw DataError(join(dir, "frames.tsv") + ": malformed line '" + line + "'");
      }
      info_.emplace(fi.id, fi);
    }
  }
}

std::vector<std::string> Dataset::ids(enc::Split split) const
{
  std::vector<std::string> out;
  for (const auto & e : entries_) {
    if (e.split == split && e.rotation_deg == 0) {
      out.push_back(e.id);
    }
  }
  return out;
}

const FrameInfo & Dataset::info(const std::string & id) const
{
  static const FrameInfo kNone;
  const auto it = info_.find(id);
  return it == info_.end() ? kNone : it->second;
}

std::string Dataset::frame_path(const std::string & id) const
{
  for (const auto & dir : dirs_) {
    const auto p = frame_file(dir, id);
    if (fs::exists(p)) {
      return p;
    }
  }
  throw NotFoundError("no frame file for " + id);
}

enc::FeatureFrame Dataset::load(const std::string & id) const
{
  return enc::load_features(frame_path(id));
}

std::string frame_file(const std::string & dir, const std::string & id)
{
  return (fs::path(dir) / "frames" / (id + ".feat")).string();
}

void write_dataset_index(
  const std::string & dir, const std::vector<enc::IndexEntry> & entries, const std::vector<FrameInfo> & info)
{
  enc::write_index(join(dir, "index.tsv"), entries);
  std::ostringstream out;
  out << "# id\tscenario\tstep\ttime\n";
  for (const auto & fi : info) {
    char t[32];
    std::snprintf(t, sizeof t, "%.3f", fi.time);
    out << fi.id << '\t' << fi.scenario << '\t' << fi.step << '\t' << t << '\n';
  }
  write_text(join(dir, "frames.tsv"), out.str());
}

RotatingSource::RotatingSource(std::vector<enc::FeatureFrame> frames, enc::EncoderConfig encoder, std::vector<int> angles)
: frames_(std::move(frames)), encoder_(encoder), angles_(std::move(angles))
{
  encoder_.validate();
  if (angles_.empty()) {
    throw ConfigError("at least one rotation angle is required");
  }
}

enc::EncodedFrame RotatingSource::get(std::size_t index) const
{
  const auto n = angles_.size();
  return enc::prepare(frames_.at(index / n), encoder_, angles_[index % n]);
}

// ---------------------------------------------------------------------------

std::vector<enc::IndexEntry> run_simulate(const SimulateOptions & options, const Reporter & report)
{
  options.sim.validate();
  if (!options.unlabeled) {
    options.split.validate();
  }
  if (options.scenarios.empty()) {
    throw ConfigError("no scenario given");
  }
  make_dir(join(options.out, "frames"));

  std::vector<enc::IndexEntry> entries;
  std::vector<FrameInfo> infos;
  std::set<std::string> names;
  for (const auto & name : options.scenarios) {
    auto scenario = sim::resolve_scenario(name);
    scenario.seed += options.seed - 1;
    const auto stem = safe_id(scenario.name);
    if (!names.insert(stem).second) {
      throw DataError("scenario " + scenario.name + " is listed twice");
    }
    auto cfg = options.sim;
    cfg.filter.rng_seed = options.seed;
    if (cfg.max_frames > 0) {
      const int needed = cfg.warmup + cfg.stride * (cfg.max_frames - 1) + 1;
      if (scenario.frame_count() < needed) {
        scenario.duration = needed * scenario.dt;
      }
    }
    const auto frames = pipeline::simulate(scenario, cfg, [&](int step, int total) {
      if (step == total || step % 100 == 0) {
        say(report, scenario.name + ": step " + std::to_string(step) + "/" + std::to_string(total));
      }
    });
    const int n = static_cast<int>(frames.size());
    std::vector<std::optional<enc::Split>> splits(frames.size(), enc::Split::kUnlabeled);
    if (!options.unlabeled) {
      auto split_cfg = options.split;
      split_cfg.seed += options.seed - 1;
      splits = label::split_dataset(n, split_cfg);
    }
    for (int i = 0; i < n; ++i) {
      char id[256];
      std::snprintf(id, sizeof id, "%s_%04d", stem.c_str(), i);
      enc::save_features(frame_file(options.out, id), frames[i].features);
      // Gap frames are written but left out of the index.
      if (splits[i]) {
        entries.push_back({id, *splits[i], label::kSourceSimulator, 0});
      }
      infos.push_back({id, scenario.name, frames[i].step, frames[i].time});
    }
    say(report, scenario.name + ": " + std::to_string(n) + " frames");
  }
  write_dataset_index(options.out, entries, infos);
  return entries;
}

// ---------------------------------------------------------------------------

int run_encode(const EncodeOptions & options, const Reporter & report)
{
  options.encoder.validate();
  const Dataset ds(options.data);
  make_dir(options.out);
  const auto entries = options.rotations ? enc::expand_rotations(ds.entries()) : ds.entries();
  std::string last;
  enc::FeatureFrame frame;
  for (const auto & e : entries) {
    if (e.id != last) {
      frame = ds.load(e.id);
      last = e.id;
    }
    const auto stem = e.rotation_deg == 0 ? e.id : e.id + "_r" + std::to_string(e.rotation_deg);
    enc::save_encoded(join(options.out, stem), enc::prepare(frame, options.encoder, e.rotation_deg));
  }
  enc::write_index(join(options.out, "index.tsv"), entries);
  say(report, "encoded " + std::to_string(entries.size()) + " frames");
  return static_cast<int>(entries.size());
}

// ---------------------------------------------------------------------------

void save_encoder_config(const std::string & path, const enc::EncoderConfig & c)
{
  const json j{{"combo", c.combo}, {"range_t", c.range_t}, {"crop", c.crop}, {"include_freespace", c.include_freespace}};
  write_text(path, j.dump(2) + "\n");
}

enc::EncoderConfig load_encoder_config(const std::string & path)
{
  std::ifstream in(path);
  if (!in) {
    throw NotFoundError("cannot open " + path);
  }
  try {
    const auto j = json::parse(in);
    enc::EncoderConfig c;
    c.combo = j.at("combo").get<int>();
    c.range_t = j.at("range_t").get<int>();
    c.crop = j.at("crop").get<int>();
    c.include_freespace = j.at("include_freespace").get<bool>();
    c.validate();
    return c;
  } catch (const json::exception & e) {
    throw DataError(path + ": " + e.what());
  }
}

ModelRun load_model_run(const std::string & run_dir)
{
  return {fcn::load_checkpoint(join(run_dir, "model.ckpt")), load_encoder_config(join(run_dir, "encoder.json"))};
}

TrainResult run_train(const TrainOptions & options, const Reporter & report)
{
  options.train.validate();
  options.encoder.validate();
  const Dataset ds(options.data);
  TrainResult r;
  r.train_ids = ds.ids(enc::Split::kTrain);
  if (r.train_ids.empty()) {
    throw ConfigError("the dataset has no train frames");
  }
  const auto arch = fcn::make_arch(options.arch, options.heads);
  auto net = [&] {
    if (!options.incremental_from.empty()) {
      const auto coarse = fcn::load_checkpoint(join(options.incremental_from, "model.ckpt"));
      say(report, "initializing " + options.arch + " from " + coarse.arch().name);
      return fcn::init_from_coarser(arch, coarse, options.train.rng_seed);
    }
    fcn::Net n(arch);
    n.initialize(options.train.rng_seed);
    return n;
  }();
  make_dir(options.out);

  const RotatingSource source(
    load_all(ds, r.train_ids), options.encoder, options.rotate ? enc::augmentation_angles() : std::vector<int>{0});
  say(report, "training " + options.arch + " on " + std::to_string(r.train_ids.size()) + " frames (" +
                std::to_string(source.size()) + " samples)");
  r.curve = fcn::train(net, source, options.train, [&](const fcn::CurvePoint & p) {
    char line[160];
    std::snprintf(line, sizeof line, "iter %d loss %.5f acc %.4f prec %.4f rec %.4f", p.iter, p.loss, p.accuracy,
      p.precision, p.recall);
    say(report, line);
  });
  fcn::save_checkpoint(join(options.out, "model.ckpt"), net);
  save_encoder_config(join(options.out, "encoder.json"), options.encoder);
  eval::PlotInputs plots;
  plots.learning = r.curve;
  eval::emit_plots(plots, options.out);
  r.checksum = fcn::parameter_checksum(net);
  return r;
}

// ---------------------------------------------------------------------------

double recall_at_fpr(const eval::RocCurve & curve, double fpr)
{
  if (curve.degenerate) {
    return kNaN;
  }
  // Points run from (1, 1) down to (0, 0); interpolate on the first segment that
  // drops to the target rate.
  const auto & p = curve.points;
  for (std::size_t i = 1; i < p.size(); ++i) {
    if (p[i].fpr <= fpr) {
      const auto & a = p[i - 1];
      const auto & b = p[i];
      if (a.fpr <= fpr || a.fpr == b.fpr) {
        return std::max(a.tpr, b.tpr);
      }
      const double w = (fpr - b.fpr) / (a.fpr - b.fpr);
      return b.tpr + w * (a.tpr - b.tpr);
    }
  }
  return 0.0;
}

EvalResult run_eval(const EvalOptions & options, const Reporter & report)
{
  const Dataset ds(options.data);
  auto model = load_model_run(options.model);
  const auto ids = ds.ids(options.split);
  if (ids.empty()) {
    throw ConfigError("the dataset has no " + enc::to_string(options.split) + " frames");
  }
  make_dir(options.out);
  const bool identity_crop = model.encoder.crop == enc::kReferenceSide;
  const bool heads = model.net.arch().orientation_heads;

  EvalResult r;
  eval::ScoredCells cnn_cells;
  eval::ScoredCells base_cells;
  std::vector<enc::FeatureFrame> kept;
  for (const auto & id : ids) {
    const auto frame = ds.load(id);
    const auto encoded = enc::prepare(frame, model.encoder, 0);
    const auto p = eval::cnn_probability(model.net, encoded);
    cnn_cells.append(p, encoded.labels, encoded.occupied);
    grid::Mask pred(p.width, p.height);
    for (std::size_t i = 0; i < p.size(); ++i) {
      pred[i] = p[i] > options.threshold ? 1 : 0;
    }
    r.cnn_metrics += eval::pixel_metrics(pred, encoded.labels, encoded.occupied);

    const auto base = cluster::baseline_classify(frame, options.baseline_threshold);
    base_cells.append(base.score, frame.labels, frame.occupied);
    r.baseline_metrics += eval::pixel_metrics(base.mask, frame.labels, frame.occupied);

    if (identity_crop) {
      const auto al = label::auto_label(id, frame, label::CnnClassifier{&model.net, options.threshold, model.encoder});
      const auto truth = eval::truth_objects(frame);
      r.velocity_orientation += eval::orientation_error(al.clusters, eval::HeadingSource::kVelocity, truth);
      if (heads) {
        if (!r.cnn_orientation) {
          r.cnn_orientation.emplace();
        }
        *r.cnn_orientation += eval::orientation_error(al.clusters, eval::HeadingSource::kNetwork, truth);
      }
    }
    if (options.sweep_frame == r.frames) {
      r.sweep = eval::rotation_sweep(model.net, frame, model.encoder, options.threshold);
    }
    ++r.frames;
  }
  if (options.sweep_frame >= r.frames) {
    throw ConfigError("sweep frame " + std::to_string(options.sweep_frame) + " is out of range");
  }
  r.cnn_metrics.finalize();
  r.baseline_metrics.finalize();
  r.velocity_orientation.finalize();
  if (r.cnn_orientation) {
    r.cnn_orientation->finalize();
  }
  r.cnn = eval::roc(cnn_cells);
  r.baseline = eval::roc(base_cells);
  say(report, "frames " + std::to_string(r.frames) + ", auc cnn " + std::to_string(r.cnn.auc) + ", baseline " +
                std::to_string(r.baseline.auc));

  eval::PlotInputs plots;
  plots.rocs = {{"cnn", r.cnn}, {"baseline", r.baseline}};
  plots.sweep = r.sweep;
  eval::emit_plots(plots, options.out);

  json j{{"frames", r.frames}, {"split", enc::to_string(options.split)}, {"threshold", options.threshold},
    {"baseline_threshold", options.baseline_threshold},
    {"auc", {{"cnn", number_or_null(r.cnn.auc)}, {"baseline", number_or_null(r.baseline.auc)}}},
    {"cells", {{"positives", r.cnn.positives}, {"negatives", r.cnn.negatives}}},
    {"recall_at_fpr_0.05", {{"cnn", number_or_null(recall_at_fpr(r.cnn, 0.05))},
                             {"baseline", number_or_null(recall_at_fpr(r.baseline, 0.05))}}},
    {"metrics", {{"cnn", metrics_json(r.cnn_metrics)}, {"baseline", metrics_json(r.baseline_metrics)}}},
    {"orientation", {{"velocity", orientation_json(r.velocity_orientation)}}}};
  if (r.cnn_orientation) {
    j["orientation"]["cnn"] = orientation_json(*r.cnn_orientation);
  }
  if (!r.sweep.empty()) {
    const auto s = eval::sweep_spread(r.sweep);
    j["sweep_spread"] = {{"accuracy", s.accuracy}, {"precision", s.precision}, {"recall", s.recall}};
  }
  write_text(join(options.out, "metrics.json"), j.dump(2) + "\n");
  return r;
}

// ---------------------------------------------------------------------------

int run_label(const LabelOptions & options, const Reporter & report)
{
  options.suppression.validate();
  const Dataset ds(options.data);
  std::optional<ModelRun> model;
  label::Classifier classifier;
  const char * source = label::kSourceBaseline;
  if (options.classifier == "baseline") {
    classifier = label::BaselineClassifier{options.threshold};
  } else if (options.classifier == "cnn") {
    if (options.model.empty()) {
      throw ConfigError("the cnn classifier needs a model run");
    }
    model.emplace(load_model_run(options.model));
    classifier = label::CnnClassifier{&model->net, options.threshold, model->encoder};
    source = label::kSourceCnn;
  } else {
    throw ConfigError("unknown classifier '" + options.classifier + "'");
  }
  make_dir(options.out);
  label::LabelStore store(options.out);
  int n = 0;
  for (const auto & e : ds.entries()) {
    if (e.rotation_deg != 0 ||
        std::find(options.splits.begin(), options.splits.end(), e.split) == options.splits.end()) {
      continue;
    }
    const auto frame = ds.load(e.id);
    auto al = label::auto_label(e.id, frame, classifier, options.eps, options.min_pts);
    al.clusters = label::suppress(al.clusters, options.suppression);
    al.labels = label::labels_from(al.clusters, frame.side);
    store.import_frame({e.id, e.split, source, false, ds.info(e.id).time}, frame, al.labels, al.clusters);
    ++n;
  }
  say(report, "imported " + std::to_string(n) + " frames into " + options.out);
  return n;
}

// ---------------------------------------------------------------------------

SslRunResult run_ssl(const SslOptions & options, const Reporter & report)
{
  const Dataset ds(options.data);
  const Dataset pool(options.pool);
  for (const auto & d : options.data) {
    if (fs::exists(options.out) && fs::equivalent(d, options.out)) {
      throw ConfigError("the ssl output must not be one of the input datasets");
    }
  }
  auto model = load_model_run(options.model);
  const label::CnnClassifier classifier{&model.net, options.prob_threshold, model.encoder};
  make_dir(join(options.out, "frames"));

  SslRunResult r;
  r.round = label::ssl_round(ds.entries(), pool.ids(enc::Split::kUnlabeled),
    [&](const std::string & id) { return pool.load(id); }, classifier, options.suppression, options.take_every,
    options.train.train.iterations);

  std::vector<FrameInfo> infos;
  json added = json::array();
  for (const auto & e : r.round.merged) {
    const bool is_new = r.round.auto_labels.count(e.id) > 0;
    auto fi = is_new ? pool.info(e.id) : ds.info(e.id);
    fi.id = e.id;
    infos.push_back(fi);
    if (!is_new) {
      continue;
    }
    const auto & al = r.round.auto_labels.at(e.id);
    // The frame is retrained on its pseudo labels; headings come from the net where it has them.
    auto frame = pool.load(e.id);
    frame.labels = al.labels;
    std::fill(frame.heading.data.begin(), frame.heading.data.end(), std::numeric_limits<float>::quiet_NaN());
    for (const auto & c : al.clusters) {
      for (const auto & cell : c.cells) {
        frame.heading.at(cell.x, cell.y) = static_cast<float>(c.heading_cnn);
      }
    }
    enc::save_features(frame_file(options.out, e.id), frame);
    added.push_back({{"id", e.id}, {"clusters", al.clusters.size()}});
  }
  write_dataset_index(options.out, r.round.merged, infos);
  const json summary{{"added", r.round.added}, {"iterations", r.round.iterations}, {"take_every", options.take_every},
    {"suppression", label::to_string(options.suppression.mode)}, {"frames", added}};
  write_text(join(options.out, "ssl.json"), summary.dump(2) + "\n");
  say(report, "added " + std::to_string(r.round.added) + " pseudo-labeled frames");

  if (options.retrain) {
    auto t = options.train;
    t.data = {options.out};
    t.data.insert(t.data.end(), options.data.begin(), options.data.end());
    t.incremental_from = options.model;
    t.encoder = model.encoder;
    t.arch = model.net.arch().name;
    t.heads = model.net.arch().orientation_heads;
    t.train.iterations = r.round.iterations;
    t.out = options.out;
    r.retrain = run_train(t, report);
  }
  return r;
}

// ---------------------------------------------------------------------------

std::vector<std::string> sweep_params()
{
  return {"range", "combo", "crop", "arch", "lr", "lr-policy", "class-weight"};
}

std::vector<std::string> default_sweep_values(const std::string & param)
{
  if (param == "range") {
    return {"5", "10", "15", "20", "25"};
  }
  if (param == "combo") {
    return {"1", "2", "3", "4", "5"};
  }
  if (param == "crop") {
    return {"300", "400", "500", "600"};
  }
  if (param == "arch") {
    return {"TOY-32s", "TOY-16s", "TOY-8s"};
  }
  if (param == "lr") {
    // six rates with fixed ratios, anchored at the default base rate
    return {"0.001", "0.00334", "0.01", "0.0168", "0.0334", "0.1"};
  }
  if (param == "lr-policy") {
    return {"fixed", "step"};
  }
  if (param == "class-weight") {
    return {"1", "20", "40", "60", "80", "100", "120", "140", "160", "180", "200"};
  }
  throw ConfigError("unknown sweep parameter '" + param + "'");
}

void apply_sweep_value(TrainOptions & options, const std::string & param, const std::string & value)
{
  try {
    if (param == "range") {
      options.encoder.range_t = std::stoi(value);
    } else if (param == "combo") {
      options.encoder.combo = std::stoi(value);
      options.encoder.include_freespace = options.encoder.combo != 3;
    } else if (param == "crop") {
      options.encoder.crop = std::stoi(value);
    } else if (param == "arch") {
      options.arch = value;
    } else if (param == "lr") {
      options.train.base_lr = std::stod(value);
    } else if (param == "lr-policy") {
      if (value != "fixed" && value != "step") {
        throw ConfigError("lr policy must be fixed or step");
      }
      options.train.lr_policy = value == "step" ? fcn::LrPolicy::kStep : fcn::LrPolicy::kFixed;
    } else if (param == "class-weight") {
      options.train.class_weights[1] = std::stod(value);
    } else {
      throw ConfigError("unknown sweep parameter '" + param + "'");
    }
  } catch (const std::logic_error &) {
    throw ConfigError("bad value '" + value + "' for " + param);
  }
  options.encoder.validate();
  options.train.validate();
}

std::vector<SweepPoint> run_sweep(const SweepOptions & options, const Reporter & report)
{
  const auto values = options.values.empty() ? default_sweep_values(options.param) : options.values;
  // fail on a bad value before any training starts
  for (const auto & v : values) {
    auto t = options.train;
    apply_sweep_value(t, options.param, v);
  }
  make_dir(options.out);
  std::vector<SweepPoint> points;
  std::ostringstream csv;
  csv << "value,auc_cnn,auc_baseline,acc,prec,rec\n";
  for (const auto & v : values) {
    const auto dir = join(options.out, options.param + "=" + v);
    say(report, options.param + " = " + v);
    auto t = options.train;
    apply_sweep_value(t, options.param, v);
    t.out = dir;
    run_train(t, report);
    auto e = options.eval;
    if (e.data.empty()) {
      e.data = t.data;
    }
    e.model = dir;
    e.out = dir;
    auto res = run_eval(e, report);
    const auto num = [](double x) { return std::isfinite(x) ? std::to_string(x) : std::string("nan"); };
    csv << v << ',' << num(res.cnn.auc) << ',' << num(res.baseline.auc) << ',' << num(res.cnn_metrics.accuracy) << ','
        << num(res.cnn_metrics.precision) << ',' << num(res.cnn_metrics.recall) << '\n';
    points.push_back({v, std::move(res)});
  }
  write_text(join(options.out, "sweep_" + options.param + ".csv"), csv.str());
  return points;
}

}  // namespace dogseg::flow
