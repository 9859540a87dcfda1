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

// dogseg command line: simulate | encode | train | eval | label | ssl | sweep | serve
//
// Every run writes <out>/run.ini with the fully resolved options. Passing that file
// back with --config (and a new --out) replays the run.

#include <CLI11.hpp>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <spdlog/cfg/env.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "dogseg/error.hpp"
#include "dogseg/service.hpp"
#include "dogseg/workflow.hpp"

using namespace dogseg;
namespace fs = std::filesystem;

namespace
{

const char * const kVersion = "0.1.0";

void log_line(const std::string & line)
{
  spdlog::info("{}", line);
}

void add_common(CLI::App * sub, std::uint64_t & seed, std::string & out)
{
  sub->add_option("--seed", seed, "random seed")->capture_default_str();
  sub->add_option("--out", out, "output directory")->required();
  sub->fallthrough();
}

void add_encoder(CLI::App * sub, enc::EncoderConfig & e)
{
  sub->add_option("--combo", e.combo, "input combination 1..5")->capture_default_str()->group("Encoder");
  sub->add_option("--range", e.range_t, "input limit t of the velocity channels")->capture_default_str()->group("Encoder");
  sub->add_option("--crop", e.crop, "crop window on the 600-cell reference grid")->capture_default_str()->group("Encoder");
  sub->add_option("--freespace", e.include_freespace, "encode free space in the occupancy channel")
    ->capture_default_str()
    ->group("Encoder");
}

struct LrPolicyText
{
  std::string text = "fixed";
};

void add_train(CLI::App * sub, flow::TrainOptions & t, LrPolicyText & policy, bool with_arch)
{
  auto & c = t.train;
  if (with_arch) {
    sub->add_option("--arch", t.arch, "network structure")
      ->capture_default_str()
      ->check(CLI::IsMember(fcn::arch_names()))
      ->group("Training");
    sub->add_flag("--heads", t.heads, "add the sine/cosine orientation heads")->group("Training");
  }
  sub->add_option("--iterations", c.iterations, "SGD iterations")->capture_default_str()->group("Training");
  sub->add_option("--lr", c.base_lr, "base learning rate")->capture_default_str()->group("Training");
  sub->add_option("--lr-policy", policy.text, "fixed or step")
    ->capture_default_str()
    ->check(CLI::IsMember({"fixed", "step"}))
    ->group("Training");
  sub->add_option("--lr-scale", c.lr_scale, "learning rate multiplier")->capture_default_str()->group("Training");
  sub->add_option("--momentum", c.momentum)->capture_default_str()->group("Training");
  sub->add_option("--weight-decay", c.weight_decay)->capture_default_str()->group("Training");
  sub->add_option("--static-weight", c.class_weights[0], "loss weight c_static")->capture_default_str()->group("Training");
  sub->add_option("--class-weight", c.class_weights[1], "loss weight c_dynamic")->capture_default_str()->group("Training");
  sub->add_option("--orientation-weight", c.orientation_weight, "orientation loss weight")
    ->capture_default_str()
    ->group("Training");
  sub->add_option("--eval-interval", c.eval_interval, "iterations per learning curve point")
    ->capture_default_str()
    ->group("Training");
  sub->add_option("--rotate", t.rotate, "train on the 36 ten-degree rotations")->capture_default_str()->group("Training");
}

void add_suppression(CLI::App * sub, label::SuppressionConfig & s, std::string & mode)
{
  sub->add_option("--suppression", mode, "none, normalized-speed or combined-p")
    ->capture_default_str()
    ->check(CLI::IsMember({"none", "normalized-speed", "combined-p"}));
  sub->add_option("--suppression-threshold", s.threshold)->capture_default_str();
  sub->add_option("--min-cluster-cells", s.min_cluster_cells)->capture_default_str();
}

std::string incremental_dir(const std::string & spec)
{
  // accepts "from=<run>" or "<run>"
  const std::string prefix = "from=";
  return spec.rfind(prefix, 0) == 0 ? spec.substr(prefix.size()) : spec;
}

void write_manifest(const CLI::App & sub, const std::string & out)
{
  fs::create_directories(out);
  std::ofstream f(fs::path(out) / "run.ini");
  f << "# dogseg " << kVersion << " run manifest; replay with --config\n[" << sub.get_name() << "]\n"
    << sub.config_to_str(true, true);
  if (!f) {
    throw DataError("cannot write the run manifest in " + out);
  }
}


}  // namespace

int main(int argc, char ** argv)
{
  auto logger = spdlog::stderr_color_mt("dogseg");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S] [%l] %v");
  spdlog::cfg::load_env_levels();  // SPDLOG_LEVEL=debug|info|warn|...

  CLI::App app{"dogseg: moving-cell segmentation of dynamic occupancy grid maps"};
  app.set_version_flag("--version", kVersion);
  app.set_config("--config", "", "options file, for example a run.ini to replay");
  app.require_subcommand(1);

  // simulate
  flow::SimulateOptions sim;
  auto * s_sim = app.add_subcommand("simulate", "run scenarios through the sensor model and the filter");
  add_common(s_sim, sim.seed, sim.out);
  s_sim->add_option("--scenario", sim.scenarios, "canned name or scenario file")->capture_default_str()->delimiter(',');
  s_sim->add_option("--frames", sim.sim.max_frames, "frames per scenario, 0 = scenario length")->capture_default_str();
  s_sim->add_option("--grid-side", sim.sim.grid.side_cells)->capture_default_str();
  s_sim->add_option("--cell-size", sim.sim.grid.cell_size, "m")->capture_default_str();
  s_sim->add_option("--warmup", sim.sim.warmup, "filter steps before the first frame")->capture_default_str();
  s_sim->add_option("--stride", sim.sim.stride, "filter steps between frames")->capture_default_str();
  s_sim->add_option("--occupied-threshold", sim.sim.occupied_threshold)->capture_default_str();
  s_sim->add_option("--particles", sim.sim.filter.particles_per_occupied_cell)->capture_default_str();
  s_sim->add_option("--newborn-ratio", sim.sim.filter.newborn_ratio_gamma)->capture_default_str();
  s_sim->add_option("--train", sim.split.train, "train fraction")->capture_default_str();
  s_sim->add_option("--val", sim.split.validation, "validation fraction")->capture_default_str();
  s_sim->add_option("--test", sim.split.test, "test fraction")->capture_default_str();
  s_sim->add_option("--min-gap", sim.split.min_gap, "frames between splits")->capture_default_str();
  s_sim->add_flag("--unlabeled", sim.unlabeled, "put every frame in the unlabeled pool");

  // encode
  flow::EncodeOptions encode;
  std::uint64_t encode_seed = 1;
  auto * s_enc = app.add_subcommand("encode", "write encoded network inputs of a dataset");
  add_common(s_enc, encode_seed, encode.out);
  s_enc->add_option("--data", encode.data, "dataset directories")->required()->delimiter(',');
  add_encoder(s_enc, encode.encoder);
  s_enc->add_flag("--rotations", encode.rotations, "also write the 36 rotations of train frames");

  // train
  flow::TrainOptions train;
  LrPolicyText train_policy;
  std::string train_incremental;
  auto * s_train = app.add_subcommand("train", "train a network on a dataset");
  add_common(s_train, train.train.rng_seed, train.out);
  s_train->add_option("--data", train.data, "dataset directories")->required()->delimiter(',');
  add_train(s_train, train, train_policy, true);
  add_encoder(s_train, train.encoder);
  s_train->add_option("--incremental", train_incremental, "from=<run>: start from a trained coarser net");

  // eval
  flow::EvalOptions ev;
  std::uint64_t eval_seed = 1;
  std::string eval_split = "test";
  auto * s_eval = app.add_subcommand("eval", "ROC, pixel metrics and orientation error of a trained net");
  add_common(s_eval, eval_seed, ev.out);
  s_eval->add_option("--data", ev.data, "dataset directories")->required()->delimiter(',');
  s_eval->add_option("--model", ev.model, "train run directory")->required();
  s_eval->add_option("--split", eval_split)->capture_default_str()->check(CLI::IsMember({"train", "val", "test"}));
  s_eval->add_option("--threshold", ev.threshold, "dynamic when p > threshold")->capture_default_str();
  s_eval->add_option("--baseline-threshold", ev.baseline_threshold, "Mahalanobis distance")->capture_default_str();
  s_eval->add_option("--sweep-frame", ev.sweep_frame, "frame index for a rotation sweep, -1 = none")
    ->capture_default_str();

  // label
  flow::LabelOptions lab;
  std::uint64_t label_seed = 1;
  std::vector<std::string> label_splits{"train", "val", "test"};
  std::string label_mode = "none";
  auto * s_label = app.add_subcommand("label", "auto-label frames into a label store");
  add_common(s_label, label_seed, lab.out);
  s_label->add_option("--data", lab.data, "dataset directories")->required()->delimiter(',');
  s_label->add_option("--splits", label_splits)->capture_default_str()->delimiter(',');
  s_label->add_option("--classifier", lab.classifier)->capture_default_str()->check(CLI::IsMember({"baseline", "cnn"}));
  s_label->add_option("--model", lab.model, "train run directory for the cnn classifier");
  s_label->add_option("--threshold", lab.threshold, "baseline distance or network probability")->capture_default_str();
  s_label->add_option("--eps", lab.eps, "DBSCAN radius in cells")->capture_default_str();
  s_label->add_option("--min-pts", lab.min_pts, "DBSCAN core size")->capture_default_str();
  add_suppression(s_label, lab.suppression, label_mode);

  // ssl
  flow::SslOptions ssl;
  LrPolicyText ssl_policy;
  std::string ssl_mode = "none";
  auto * s_ssl = app.add_subcommand("ssl", "one semi-supervised round: pseudo-label, merge, retrain");
  add_common(s_ssl, ssl.train.train.rng_seed, ssl.out);
  s_ssl->add_option("--data", ssl.data, "labeled dataset directories")->required()->delimiter(',');
  s_ssl->add_option("--pool", ssl.pool, "unlabeled dataset directories")->required()->delimiter(',');
  s_ssl->add_option("--model", ssl.model, "train run directory")->required();
  s_ssl->add_option("--take-every", ssl.take_every)->capture_default_str();
  s_ssl->add_option("--prob-threshold", ssl.prob_threshold)->capture_default_str();
  s_ssl->add_option("--retrain", ssl.retrain)->capture_default_str();
  add_suppression(s_ssl, ssl.suppression, ssl_mode);
  add_train(s_ssl, ssl.train, ssl_policy, false);

  // sweep
  flow::SweepOptions sweep;
  LrPolicyText sweep_policy;
  std::string sweep_split = "test";
  auto * s_sweep = app.add_subcommand("sweep", "train and evaluate over one parameter");
  add_common(s_sweep, sweep.train.train.rng_seed, sweep.out);
  s_sweep->add_option("--param", sweep.param)->required()->check(CLI::IsMember(flow::sweep_params()));
  s_sweep->add_option("--values", sweep.values, "default: the parameter's standard grid")->delimiter(',');
  s_sweep->add_option("--data", sweep.train.data, "dataset directories")->required()->delimiter(',');
  add_train(s_sweep, sweep.train, sweep_policy, true);
  add_encoder(s_sweep, sweep.train.encoder);
  s_sweep->add_option("--split", sweep_split)->capture_default_str()->check(CLI::IsMember({"train", "val", "test"}));
  s_sweep->add_option("--threshold", sweep.eval.threshold)->capture_default_str();
  s_sweep->add_option("--baseline-threshold", sweep.eval.baseline_threshold)->capture_default_str();

  // serve
  std::string store_dir;
  service::ServiceConfig svc;
  auto * s_serve = app.add_subcommand("serve", "HTTP label service over a label store");
  s_serve->add_option("--store", store_dir, "label store directory")->required();
  s_serve->add_option("--host", svc.host)->capture_default_str();
  s_serve->add_option("--port", svc.port)->capture_default_str();
  s_serve->add_option("--cors-origin", svc.cors_origin)->capture_default_str();
  s_serve->add_option("--static", svc.static_dir, "directory with the annotation UI build");
  s_serve->fallthrough();

  CLI11_PARSE(app, argc, argv);

  const auto policy = [](const LrPolicyText & p) { return p.text == "step" ? fcn::LrPolicy::kStep : fcn::LrPolicy::kFixed; };
  try {
    if (s_sim->parsed()) {
      sim.sim.validate();
      write_manifest(*s_sim, sim.out);
      flow::run_simulate(sim, log_line);
    } else if (s_enc->parsed()) {
      encode.encoder.validate();
      write_manifest(*s_enc, encode.out);
      flow::run_encode(encode, log_line);
    } else if (s_train->parsed()) {
      train.train.lr_policy = policy(train_policy);
      train.incremental_from = incremental_dir(train_incremental);
      train.encoder.validate();
      train.train.validate();
      write_manifest(*s_train, train.out);
      const auto r = flow::run_train(train, log_line);
      spdlog::info("checksum {:016x}", r.checksum);
    } else if (s_eval->parsed()) {
      ev.split = enc::parse_split(eval_split);
      write_manifest(*s_eval, ev.out);
      const auto r = flow::run_eval(ev, log_line);
      std::cout << "auc_cnn " << r.cnn.auc << "\nauc_baseline " << r.baseline.auc << "\n";
    } else if (s_label->parsed()) {
      lab.splits.clear();
      for (const auto & s : label_splits) {
        lab.splits.push_back(enc::parse_split(s));
      }
      lab.suppression.mode = label::parse_suppression_mode(label_mode);
      lab.suppression.validate();
      write_manifest(*s_label, lab.out);
      flow::run_label(lab, log_line);
    } else if (s_ssl->parsed()) {
      ssl.train.train.lr_policy = policy(ssl_policy);
      ssl.suppression.mode = label::parse_suppression_mode(ssl_mode);
      ssl.suppression.validate();
      ssl.train.train.validate();
      write_manifest(*s_ssl, ssl.out);
      flow::run_ssl(ssl, log_line);
    } else if (s_sweep->parsed()) {
      sweep.train.train.lr_policy = policy(sweep_policy);
      sweep.eval.split = enc::parse_split(sweep_split);
      sweep.train.encoder.validate();
      sweep.train.train.validate();
      write_manifest(*s_sweep, sweep.out);
      flow::run_sweep(sweep, log_line);
    } else if (s_serve->parsed()) {
      label::LabelStore store(store_dir);
      service::Service server(store, svc);
      static service::Service * running = nullptr;
      running = &server;
      std::signal(SIGINT, [](int) { running->stop(); });
      std::signal(SIGTERM, [](int) { running->stop(); });
      spdlog::info("serving {} on {}:{}", store_dir, svc.host, svc.port);
      server.run();
    }
  } catch (const dogseg::Error & e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const std::exception & e) {
    spdlog::error("unexpected: {}", e.what());
    return 3;
  }
  return 0;
}
