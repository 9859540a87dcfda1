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

// Training loop, learning-rate policy, checkpoints and the gradient check.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <ostream>
#include <random>
#include <sstream>

#include "dogseg/fcn.hpp"

namespace dogseg::fcn
{

void TrainConfig::validate() const
{
  if (!(base_lr > 0.0)) {
    throw ConfigError("base_lr must be positive");
  }
  if (!(lr_scale > 0.0)) {
    throw ConfigError("lr_scale must be positive");
  }
  if (class_weights[0] <= 0.0 || class_weights[1] <= 0.0) {
    throw ConfigError("class weights must be positive");
  }
  if (batch != 1) {
    throw ConfigError("only batch size 1 is supported");
  }
  if (iterations < 1) {
    throw ConfigError("iterations must be at least 1");
  }
  if (momentum < 0.0 || momentum >= 1.0 || weight_decay < 0.0 || orientation_weight < 0.0) {
    throw ConfigError("momentum must lie in [0, 1); weight decay and orientation weight non-negative");
  }
  if (eval_interval < 1) {
    throw ConfigError("eval_interval must be at least 1");
  }
}

double lr_at(int iter, const TrainConfig & config)
{
  if (iter < 0 || iter >= config.iterations) {
    throw BoundsError("iteration " + std::to_string(iter) + " outside the schedule");
  }
  const double base = config.base_lr * config.lr_scale;
  if (config.lr_policy == LrPolicy::kFixed) {
    return base;
  }
  // kLrSteps geometric steps from 10x down to 1x, the last one landing on iterations / 2.
  const long long step = std::min<long long>(kLrSteps, 2LL * kLrSteps * iter / config.iterations);
  return base * std::pow(10.0, 1.0 - static_cast<double>(step) / kLrSteps);
}

namespace
{

double unit_uniform(std::mt19937_64 & rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

void shuffle(std::vector<std::size_t> & v, std::mt19937_64 & rng)
{
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(unit_uniform(rng) * static_cast<double>(i));
    std::swap(v[i - 1], v[std::min(j, i - 1)]);
  }
}

struct Confusion
{
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t correct_all = 0, counted_all = 0;
};

}  // namespace

std::vector<CurvePoint> train(Net & net, const SampleSource & data, const TrainConfig & config, const ProgressFn & progress)
{
  config.validate();
  if (data.size() == 0) {
    throw ConfigError("training set is empty");
  }
  std::mt19937_64 rng(config.rng_seed);
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    order[i] = i;
  }
  std::size_t pos = order.size();
  std::vector<CurvePoint> curve;
  double loss_sum = 0.0;
  int loss_n = 0;
  Confusion cm;
  const bool heads = net.arch().orientation_heads;

  for (int it = 0; it < config.iterations; ++it) {
    if (pos == order.size()) {
      shuffle(order, rng);
      pos = 0;
    }
    const auto frame = data.get(order[pos++]);
    const auto out = net.forward(to_input(frame));
    const auto seg = weighted_softmax_loss(out.segmentation, frame.labels.data, config.class_weights);
    double loss = seg.loss;
    LossResult<float> ori;
    if (heads) {
      ori = orientation_loss(out.orientation, frame.heading.data, frame.labels.data, config.orientation_weight);
      loss += ori.loss;
    }
    if (!std::isfinite(loss)) {
      throw TrainingDivergedError("loss is " + std::to_string(loss) + " at iteration " + std::to_string(it) +
                                  "; lower base_lr or the dynamic class weight");
    }
    net.zero_grad();
    net.backward(seg.grad, heads ? &ori.grad : nullptr);
    net.sgd_step(lr_at(it, config), config.momentum, config.weight_decay);

    loss_sum += loss;
    ++loss_n;
    const std::size_t plane = out.segmentation.plane();
    for (std::size_t i = 0; i < plane; ++i) {
      const auto l = frame.labels.data[i];
      if (l == enc::kLabelIgnore) {
        continue;
      }
      const bool pred = out.segmentation.data[plane + i] > out.segmentation.data[i];
      const bool truth = l == enc::kLabelDynamic;
      cm.counted_all++;
      cm.correct_all += pred == truth ? 1 : 0;
      if (!frame.occupied.data[i]) {
        continue;
      }
      if (pred && truth) {
        cm.tp++;
      } else if (pred) {
        cm.fp++;
      } else if (truth) {
        cm.fn++;
      } else {
        cm.tn++;
      }
    }
    if ((it + 1) % config.eval_interval == 0 || it + 1 == config.iterations) {
      CurvePoint p;
      p.iter = it + 1;
      p.loss = loss_sum / loss_n;
      const double occ = static_cast<double>(cm.tp + cm.fp + cm.tn + cm.fn);
      p.accuracy = occ > 0 ? static_cast<double>(cm.tp + cm.tn) / occ : 0.0;
      p.precision = cm.tp + cm.fp > 0 ? static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fp) : 0.0;
      p.recall = cm.tp + cm.fn > 0 ? static_cast<double>(cm.tp) / static_cast<double>(cm.tp + cm.fn) : 0.0;
      p.accuracy_all = cm.counted_all > 0 ? static_cast<double>(cm.correct_all) / static_cast<double>(cm.counted_all) : 0.0;
      curve.push_back(p);
      if (progress) {
        progress(p);
      }
      loss_sum = 0.0;
      loss_n = 0;
      cm = Confusion{};
    }
  }
  return curve;
}

void write_curve_csv(std::ostream & out, const std::vector<CurvePoint> & curve)
{
  out << "iter,loss,acc,prec,rec,acc_all\n";
  char buf[160];
  for (const auto & p : curve) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.9g\n", p.iter, p.loss, p.accuracy, p.precision, p.recall,
      p.accuracy_all);
    out << buf;
  }
}

// ---------------------------------------------------------------------------

namespace
{

constexpr char kCkptMagic[4] = {'D', 'S', 'C', 'K'};
constexpr std::uint32_t kCkptVersion = 1;

std::uint64_t fnv1a(const std::string & bytes)
{
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
void put(std::string & buf, T v)
{
  buf.append(reinterpret_cast<const char *>(&v), sizeof(T));
}

void put_str(std::string & buf, const std::string & s)
{
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(s.size()));
  buf += s;
}

struct Reader
{
  const std::string & buf;
  std::size_t pos = 0;
  const std::string & path;

  template <typename T>
  T get()
  {
    if (pos + sizeof(T) > buf.size()) {
      throw DataError(path + ": checkpoint truncated");
    }
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  std::string str()
  {
    const auto n = get<std::uint32_t>();
    if (n > 4096 || pos + n > buf.size()) {
      throw DataError(path + ": checkpoint truncated");
    }
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void save_checkpoint(const std::string & path, const Net & net)
{
  std::string buf(kCkptMagic, 4);
  put(buf, kCkptVersion);
  put_str(buf, net.arch().name);
  put<std::uint8_t>(buf, net.arch().orientation_heads ? 1 : 0);
  put<std::int32_t>(buf, net.input_channels());
  const auto ps = net.params();
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(ps.size()));
  for (const auto & p : ps) {
    put_str(buf, p.name);
    put<std::int32_t>(buf, p.value->n);
    put<std::int32_t>(buf, p.value->c);
    put<std::int32_t>(buf, p.value->h);
    put<std::int32_t>(buf, p.value->w);
    buf.append(reinterpret_cast<const char *>(p.value->data.data()), p.value->size() * sizeof(float));
  }
  put<std::uint64_t>(buf, fnv1a(buf));
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw DataError("cannot open " + path + " for writing");
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) {
    throw DataError("failed writing " + path);
  }
}

Net load_checkpoint(const std::string & path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw NotFoundError("cannot open checkpoint " + path);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string buf = ss.str();
  if (buf.size() < 16 || std::memcmp(buf.data(), kCkptMagic, 4) != 0) {
    throw DataError(path + ": not a checkpoint");
  }
  std::uint64_t stored = 0;
  std::memcpy(&stored, buf.data() + buf.size() - 8, 8);
  const std::string body = buf.substr(0, buf.size() - 8);
  if (fnv1a(body) != stored) {
    throw DataError(path + ": checksum mismatch");
  }
  Reader r{body, 4, path};
  if (r.get<std::uint32_t>() != kCkptVersion) {
    throw DataError(path + ": unsupported checkpoint version");
  }
  const auto arch_name = r.str();
  const bool heads = r.get<std::uint8_t>() != 0;
  const int in_ch = r.get<std::int32_t>();
  Net net(make_arch(arch_name, heads, in_ch), in_ch);
  auto ps = net.params();
  if (r.get<std::uint32_t>() != ps.size()) {
    throw DataError(path + ": parameter block count differs from " + arch_name);
  }
  for (auto & p : ps) {
    if (r.str() != p.name) {
      throw DataError(path + ": unexpected parameter block, wanted " + p.name);
    }
    const int n = r.get<std::int32_t>();
    const int c = r.get<std::int32_t>();
    const int h = r.get<std::int32_t>();
    const int w = r.get<std::int32_t>();
    if (n != p.value->n || c != p.value->c || h != p.value->h || w != p.value->w) {
      throw DataError(path + ": dims of " + p.name + " differ from the architecture");
    }
    const std::size_t bytes = p.value->size() * sizeof(float);
    if (r.pos + bytes > body.size()) {
      throw DataError(path + ": checkpoint truncated");
    }
    std::memcpy(p.value->data.data(), body.data() + r.pos, bytes);
    r.pos += bytes;
  }
  if (r.pos != body.size()) {
    throw DataError(path + ": trailing bytes");
  }
  return net;
}

// ---------------------------------------------------------------------------

namespace
{

struct Losses
{
  double total = 0.0;
  LossResult<double> seg;
  LossResult<double> ori;
};

Losses evaluate(BasicNet<double> & net, const GradientSample & sample)
{
  const auto out = net.forward(sample.input);
  Losses l;
  l.seg = weighted_softmax_loss(out.segmentation, sample.labels, sample.class_weights);
  l.total = l.seg.loss;
  if (net.arch().orientation_heads) {
    l.ori = orientation_loss(out.orientation, sample.heading, sample.labels, sample.orientation_weight);
    l.total += l.ori.loss;
  }
  return l;
}

}  // namespace

double sample_loss(BasicNet<double> & net, const GradientSample & sample) { return evaluate(net, sample).total; }

double gradient_check(BasicNet<double> & net, const GradientSample & sample, int probes, std::uint64_t seed, double step)
{
  auto base = evaluate(net, sample);
  net.zero_grad();
  net.backward(base.seg.grad, net.arch().orientation_heads ? &base.ori.grad : nullptr);
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (auto & p : net.params()) {
    const BasicTensor<double> analytic = *p.grad;
    for (int k = 0; k < probes; ++k) {
      const auto idx = static_cast<std::size_t>(unit_uniform(rng) * static_cast<double>(p.value->size()));
      double & w = p.value->data[idx];
      const double orig = w;
      w = orig + step;
      const double up = sample_loss(net, sample);
      w = orig - step;
      const double down = sample_loss(net, sample);
      w = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic.data[idx];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace dogseg::fcn
