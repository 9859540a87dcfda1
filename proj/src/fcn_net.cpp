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

// Architectures, shape inference and the layer graph.

#include <algorithm>
#include <cmath>
#include <random>

#include "dogseg/fcn.hpp"

namespace dogseg::fcn
{

const LayerSpec & NetworkArch::layer(const std::string & layer_name) const
{
  return layers.at(static_cast<std::size_t>(index_of(layer_name)));
}

int NetworkArch::index_of(const std::string & layer_name) const
{
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].name == layer_name) {
      return static_cast<int>(i);
    }
  }
  throw ArchError(name + ": no layer named '" + layer_name + "'");
}

int NetworkArch::count(LayerKind kind) const
{
  return static_cast<int>(std::count_if(layers.begin(), layers.end(), [&](const LayerSpec & l) { return l.kind == kind; }));
}

namespace
{

struct Builder
{
  NetworkArch arch;

  void conv(const std::string & name, const std::string & input, int n, int s, int p, int out, bool relu,
    bool zero_init = false)
  {
    LayerSpec l;
    l.name = name;
    l.kind = LayerKind::kConv;
    l.input = input;
    l.filter = n;
    l.stride = s;
    l.pad = p;
    l.out_channels = out;
    l.relu = relu;
    l.zero_init = zero_init;
    arch.layers.push_back(l);
  }
  void pool(const std::string & name, const std::string & input)
  {
    LayerSpec l;
    l.name = name;
    l.kind = LayerKind::kMaxPool;
    l.input = input;
    l.filter = 2;
    l.stride = 2;
    arch.layers.push_back(l);
  }
  void deconv(const std::string & name, const std::string & input, int f, int channels, const std::string & crop_like)
  {
    LayerSpec l;
    l.name = name;
    l.kind = LayerKind::kDeconv;
    l.input = input;
    l.filter = deconv_kernel_size(f);
    l.stride = f;
    l.out_channels = channels;
    l.crop_like = crop_like;
    arch.layers.push_back(l);
  }
  void fuse(const std::string & name, const std::string & skip, const std::string & up)
  {
    LayerSpec l;
    l.name = name;
    l.kind = LayerKind::kFuse;
    l.input = up;
    l.fuse_source = skip;
    arch.layers.push_back(l);
  }
  void terminal(const std::string & name, LayerKind kind, const std::string & input)
  {
    LayerSpec l;
    l.name = name;
    l.kind = kind;
    l.input = input;
    arch.layers.push_back(l);
  }

  // Score layer on the top features, then the deep-jet chain: each skip is reached by
  // an upsampling of the given factor and fused with a zero-initialized 1x1 score of
  // that layer. The last deconvolution returns to the input edge.
  std::string head(const std::string & prefix, const std::string & top, int channels,
    const std::vector<std::pair<std::string, int>> & skips, int final_factor)
  {
    std::string cur = prefix + "score_fr";
    conv(cur, top, 1, 1, 0, channels, false);
    for (const auto & [source, factor] : skips) {
      const std::string up = prefix + "upscore" + std::to_string(factor) + "_" + source;
      deconv(up, cur, factor, channels, source);
      const std::string score = prefix + "score_" + source;
      conv(score, source, 1, 1, 0, channels, false, true);
      cur = prefix + "fuse_" + source;
      fuse(cur, score, up);
    }
    const std::string out = prefix + "upscore" + std::to_string(final_factor);
    deconv(out, cur, final_factor, channels, "data");
    return out;
  }
};

struct Backbone
{
  std::string family;  // FCN, TOY, ALEX
  std::vector<std::pair<std::string, int>> skips;
  int final_factor = 32;
};

void vgg_backbone(Builder & b, const std::array<int, 5> & widths, int fc)
{
  static constexpr std::array<int, 5> kDepth{2, 2, 3, 3, 3};
  std::string prev = "data";
  for (int blk = 0; blk < 5; ++blk) {
    for (int i = 1; i <= kDepth[static_cast<std::size_t>(blk)]; ++i) {
      const std::string name = "conv" + std::to_string(blk + 1) + "_" + std::to_string(i);
      b.conv(name, prev, 3, 1, 1, widths[static_cast<std::size_t>(blk)], true);
      prev = name;
    }
    const std::string pool = "pool" + std::to_string(blk + 1);
    b.pool(pool, prev);
    prev = pool;
  }
  b.conv("fc6", prev, 7, 1, 3, fc, true);
  b.conv("fc7", "fc6", 1, 1, 0, fc, true);
}

void alex_backbone(Builder & b)
{
  b.conv("conv1", "data", 11, 4, 5, 96, true);
  b.pool("pool1", "conv1");
  b.conv("conv2", "pool1", 5, 1, 2, 256, true);
  b.pool("pool2", "conv2");
  b.conv("conv3", "pool2", 3, 1, 1, 384, true);
  b.conv("conv4", "conv3", 3, 1, 1, 384, true);
  b.conv("conv5", "conv4", 3, 1, 1, 256, true);
  b.pool("pool5", "conv5");
  b.conv("fc6", "pool5", 7, 1, 3, 4096, true);
  b.conv("fc7", "fc6", 1, 1, 0, 4096, true);
}

}  // namespace

std::vector<std::string> arch_names()
{
  return {"FCN-32s", "FCN-16s", "FCN-8s", "ALEX-32s", "ALEX-16s", "ALEX-4s", "TOY-32s", "TOY-16s", "TOY-8s"};
}

NetworkArch make_arch(const std::string & name, bool orientation_heads, int input_channels)
{
  (void)input_channels;  // first conv adapts to the input; kept for symmetry with infer_shapes
  Builder b;
  b.arch.name = name;
  b.arch.orientation_heads = orientation_heads;
  const auto dash = name.find('-');
  if (dash == std::string::npos) {
    throw ArchError("unknown architecture '" + name + "'");
  }
  const std::string family = name.substr(0, dash);
  const std::string stride = name.substr(dash + 1);
  std::vector<std::pair<std::string, int>> skips;
  int final_factor = 0;
  if (family == "FCN" || family == "TOY") {
    if (stride == "32s") {
      final_factor = 32;
    } else if (stride == "16s") {
      skips = {{"pool4", 2}};
      final_factor = 16;
    } else if (stride == "8s") {
      skips = {{"pool4", 2}, {"pool3", 2}};
      final_factor = 8;
    }
    if (family == "FCN") {
      vgg_backbone(b, {64, 128, 256, 512, 512}, 4096);
    } else {
      vgg_backbone(b, {8, 16, 32, 32, 32}, 64);
    }
  } else if (family == "ALEX") {
    if (stride == "32s") {
      final_factor = 32;
    } else if (stride == "16s") {
      skips = {{"pool2", 2}};
      final_factor = 16;
    } else if (stride == "4s") {
      // the stride-4 skip taps the first layer's output
      skips = {{"pool2", 2}, {"conv1", 4}};
      final_factor = 4;
    }
    alex_backbone(b);
  }
  if (final_factor == 0) {
    throw ArchError("unknown architecture '" + name + "'");
  }
  const auto seg = b.head("", "fc7", 2, skips, final_factor);
  b.terminal("prob", LayerKind::kSoftmax, seg);
  b.arch.segmentation_output = "prob";
  if (orientation_heads) {
    const auto ori = b.head("ori_", "fc7", 2, skips, final_factor);
    b.terminal("orientation", LayerKind::kRegression, ori);
    b.arch.orientation_output = "orientation";
  }
  return b.arch;
}

std::vector<Shape> infer_shapes(const NetworkArch & arch, int input_channels, int edge)
{
  const Shape data{input_channels, edge, edge};
  std::vector<Shape> shapes;
  auto lookup = [&](const std::string & layer_name) -> Shape {
    if (layer_name == "data") {
      return data;
    }
    const int i = arch.index_of(layer_name);
    if (i >= static_cast<int>(shapes.size())) {
      throw ArchError(arch.name + ": layer '" + layer_name + "' used before it is defined");
    }
    return shapes[static_cast<std::size_t>(i)];
  };
  for (const auto & l : arch.layers) {
    const Shape in = lookup(l.input);
    Shape out = in;
    switch (l.kind) {
      case LayerKind::kConv:
        out = {l.out_channels, conv_output_edge(in.h, l.filter, l.stride, l.pad),
          conv_output_edge(in.w, l.filter, l.stride, l.pad)};
        break;
      case LayerKind::kMaxPool:
        out = {in.c, conv_output_edge(in.h, l.filter, l.stride, 0), conv_output_edge(in.w, l.filter, l.stride, 0)};
        break;
      case LayerKind::kDeconv: {
        const Shape target = lookup(l.crop_like);
        const int full = (in.h - 1) * l.stride + l.filter;
        const int off = (l.filter - l.stride) / 2;
        if (off + target.h > full) {
          throw ArchError(arch.name + ": " + l.name + " upsamples to " + std::to_string(full - off) +
                          ", short of " + std::to_string(target.h));
        }
        out = {l.out_channels, target.h, target.w};
        break;
      }
      case LayerKind::kFuse: {
        const Shape skip = lookup(l.fuse_source);
        if (!(skip == in)) {
          throw ArchError(arch.name + ": " + l.name + " operands differ in shape");
        }
        break;
      }
      case LayerKind::kSoftmax:
      case LayerKind::kRegression:
        break;
    }
    shapes.push_back(out);
  }
  return shapes;
}

// ---------------------------------------------------------------------------

namespace
{

double unit_uniform(std::mt19937_64 & rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

template <typename T>
BasicNet<T>::BasicNet(NetworkArch arch, int input_channels) : arch_(std::move(arch)), input_channels_(input_channels)
{
  const std::size_t n = arch_.layers.size();
  input_index_.resize(n, -1);
  fuse_index_.resize(n, -1);
  crop_index_.resize(n, -1);
  state_.resize(n);
  acts_.resize(n);
  argmax_.resize(n);
  std::vector<int> channels(n, 0);
  auto index = [&](const std::string & nm, std::size_t before) {
    if (nm == "data") {
      return -1;
    }
    const int i = arch_.index_of(nm);
    if (i >= static_cast<int>(before)) {
      throw ArchError(arch_.name + ": layer '" + nm + "' used before it is defined");
    }
    return i;
  };
  for (std::size_t i = 0; i < n; ++i) {
    const auto & l = arch_.layers[i];
    input_index_[i] = index(l.input, i);
    const int in_ch = input_index_[i] < 0 ? input_channels_ : channels[static_cast<std::size_t>(input_index_[i])];
    auto & st = state_[i];
    switch (l.kind) {
      case LayerKind::kConv:
        st.weight = BasicTensor<T>(l.out_channels, in_ch, l.filter, l.filter);
        st.bias = BasicTensor<T>(l.out_channels, 1, 1);
        st.has_params = true;
        channels[i] = l.out_channels;
        break;
      case LayerKind::kDeconv:
        crop_index_[i] = index(l.crop_like, i);
        st.weight = BasicTensor<T>(in_ch, l.out_channels, l.filter, l.filter);
        st.has_params = true;
        channels[i] = l.out_channels;
        break;
      case LayerKind::kFuse:
        fuse_index_[i] = index(l.fuse_source, i);
        if (channels[static_cast<std::size_t>(fuse_index_[i])] != in_ch) {
          throw ArchError(arch_.name + ": " + l.name + " operands differ in channels");
        }
        channels[i] = in_ch;
        break;
      default:
        channels[i] = in_ch;
        break;
    }
    if (st.has_params) {
      st.weight_grad = BasicTensor<T>(st.weight.n, st.weight.c, st.weight.h, st.weight.w);
      st.weight_mom = st.weight_grad;
      if (!st.bias.data.empty()) {
        st.bias_grad = BasicTensor<T>(st.bias.c, 1, 1);
        st.bias_mom = st.bias_grad;
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    channels_.push_back(Shape{channels[i], 0, 0});
  }
  arch_.index_of(arch_.segmentation_output);
  if (arch_.orientation_heads) {
    arch_.index_of(arch_.orientation_output);
  }
}

template <typename T>
void BasicNet<T>::initialize(std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < state_.size(); ++i) {
    const auto & l = arch_.layers[i];
    auto & st = state_[i];
    if (!st.has_params) {
      continue;
    }
    std::fill(st.bias.data.begin(), st.bias.data.end(), T{0});
    if (l.kind == LayerKind::kDeconv) {
      st.weight = BasicTensor<T>(st.weight.n, st.weight.c, st.weight.h, st.weight.w);
      const auto k = bilinear_kernel<T>(l.stride);
      for (int ch = 0; ch < std::min(st.weight.n, st.weight.c); ++ch) {
        std::copy(k.data.begin(), k.data.end(),
          st.weight.data.begin() + (static_cast<std::size_t>(ch) * st.weight.c + ch) * k.size());
      }
    } else if (l.zero_init) {
      std::fill(st.weight.data.begin(), st.weight.data.end(), T{0});
    } else {
      const double area = static_cast<double>(l.filter) * l.filter;
      const double limit = std::sqrt(6.0 / ((st.weight.c + st.weight.n) * area));
      for (auto & v : st.weight.data) {
        v = static_cast<T>((2.0 * unit_uniform(rng) - 1.0) * limit);
      }
    }
  }
  for (auto & st : state_) {
    std::fill(st.weight_mom.data.begin(), st.weight_mom.data.end(), T{0});
    std::fill(st.bias_mom.data.begin(), st.bias_mom.data.end(), T{0});
  }
  zero_grad();
}

template <typename T>
NetOutput<T> BasicNet<T>::forward(const BasicTensor<T> & input)
{
  if (input.c != input_channels_) {
    throw ShapeError(arch_.name + ": expected " + std::to_string(input_channels_) + " input channels");
  }
  data_ = input;
  auto in_of = [&](int idx) -> const BasicTensor<T> & { return idx < 0 ? data_ : acts_[static_cast<std::size_t>(idx)]; };
  for (std::size_t i = 0; i < arch_.layers.size(); ++i) {
    const auto & l = arch_.layers[i];
    const auto & in = in_of(input_index_[i]);
    auto & st = state_[i];
    switch (l.kind) {
      case LayerKind::kConv:
        acts_[i] = conv_forward(in, st.weight, st.bias.data, l.stride, l.pad);
        if (l.relu) {
          for (auto & v : acts_[i].data) {
            v = v > T{0} ? v : T{0};
          }
        }
        break;
      case LayerKind::kMaxPool: {
        auto r = maxpool_forward(in, l.filter, l.stride);
        acts_[i] = std::move(r.output);
        argmax_[i] = std::move(r.argmax);
        break;
      }
      case LayerKind::kDeconv:
        acts_[i] = deconv_forward(in, st.weight, l.stride, in_of(crop_index_[i]).h);
        break;
      case LayerKind::kFuse:
        acts_[i] = fuse(in_of(fuse_index_[i]), in);
        break;
      case LayerKind::kSoftmax:
        acts_[i] = in;
        break;
      case LayerKind::kRegression:
        acts_[i] = in;
        for (auto & v : acts_[i].data) {
          v = std::tanh(v);
        }
        break;
    }
  }
  NetOutput<T> out;
  out.segmentation = acts_[static_cast<std::size_t>(arch_.index_of(arch_.segmentation_output))];
  if (arch_.orientation_heads) {
    out.orientation = acts_[static_cast<std::size_t>(arch_.index_of(arch_.orientation_output))];
  }
  return out;
}

template <typename T>
void BasicNet<T>::backward(const BasicTensor<T> & grad_segmentation, const BasicTensor<T> * grad_orientation)
{
  const std::size_t n = arch_.layers.size();
  std::vector<BasicTensor<T>> grads(n);
  auto add_grad = [&](int idx, BasicTensor<T> && g) {
    if (idx < 0) {
      return;
    }
    auto & dst = grads[static_cast<std::size_t>(idx)];
    if (dst.data.empty()) {
      dst = std::move(g);
    } else {
      for (std::size_t k = 0; k < dst.size(); ++k) {
        dst.data[k] += g.data[k];
      }
    }
  };
  add_grad(arch_.index_of(arch_.segmentation_output), BasicTensor<T>(grad_segmentation));
  if (grad_orientation != nullptr && arch_.orientation_heads) {
    add_grad(arch_.index_of(arch_.orientation_output), BasicTensor<T>(*grad_orientation));
  }
  auto in_of = [&](int idx) -> const BasicTensor<T> & { return idx < 0 ? data_ : acts_[static_cast<std::size_t>(idx)]; };

  for (std::size_t ii = n; ii-- > 0;) {
    auto & g = grads[ii];
    if (g.data.empty()) {
      continue;
    }
    const auto & l = arch_.layers[ii];
    auto & st = state_[ii];
    const int src = input_index_[ii];
    const auto & in = in_of(src);
    switch (l.kind) {
      case LayerKind::kConv: {
        if (l.relu) {
          const auto & a = acts_[ii];
          for (std::size_t k = 0; k < g.size(); ++k) {
            if (!(a.data[k] > T{0})) {
              g.data[k] = T{0};
            }
          }
        }
        BasicTensor<T> gi;
        conv_backward(in, st.weight, l.stride, l.pad, g, src < 0 ? nullptr : &gi, &st.weight_grad, &st.bias_grad.data);
        if (src >= 0) {
          add_grad(src, std::move(gi));
        }
        break;
      }
      case LayerKind::kMaxPool:
        add_grad(src, maxpool_backward(g, argmax_[ii], in.c, in.h, in.w));
        break;
      case LayerKind::kDeconv: {
        BasicTensor<T> gi;
        deconv_backward(in, st.weight, l.stride, g, src < 0 ? nullptr : &gi, &st.weight_grad);
        if (src >= 0) {
          add_grad(src, std::move(gi));
        }
        break;
      }
      case LayerKind::kFuse:
        add_grad(fuse_index_[ii], BasicTensor<T>(g));
        add_grad(src, std::move(g));
        break;
      case LayerKind::kSoftmax:
        add_grad(src, std::move(g));
        break;
      case LayerKind::kRegression: {
        const auto & y = acts_[ii];
        for (std::size_t k = 0; k < g.size(); ++k) {
          g.data[k] *= T{1} - y.data[k] * y.data[k];
        }
        add_grad(src, std::move(g));
        break;
      }
    }
    grads[ii] = BasicTensor<T>();
  }
}

template <typename T>
void BasicNet<T>::zero_grad()
{
  for (auto & st : state_) {
    std::fill(st.weight_grad.data.begin(), st.weight_grad.data.end(), T{0});
    std::fill(st.bias_grad.data.begin(), st.bias_grad.data.end(), T{0});
  }
}

template <typename T>
void BasicNet<T>::sgd_step(double lr, double momentum, double weight_decay)
{
  for (auto & st : state_) {
    if (!st.has_params) {
      continue;
    }
    for (std::size_t k = 0; k < st.weight.size(); ++k) {
      const double g = st.weight_grad.data[k] + weight_decay * st.weight.data[k];
      const double v = momentum * st.weight_mom.data[k] - lr * g;
      st.weight_mom.data[k] = static_cast<T>(v);
      st.weight.data[k] = static_cast<T>(st.weight.data[k] + v);
    }
    for (std::size_t k = 0; k < st.bias.size(); ++k) {
      const double v = momentum * st.bias_mom.data[k] - lr * st.bias_grad.data[k];
      st.bias_mom.data[k] = static_cast<T>(v);
      st.bias.data[k] = static_cast<T>(st.bias.data[k] + v);
    }
  }
}

template <typename T>
std::vector<ParamRef<T>> BasicNet<T>::params()
{
  std::vector<ParamRef<T>> out;
  for (std::size_t i = 0; i < state_.size(); ++i) {
    auto & st = state_[i];
    if (!st.has_params) {
      continue;
    }
    out.push_back({arch_.layers[i].name + ".w", &st.weight, &st.weight_grad, false});
    if (!st.bias.data.empty()) {
      out.push_back({arch_.layers[i].name + ".b", &st.bias, &st.bias_grad, true});
    }
  }
  return out;
}

template <typename T>
std::vector<ConstParamRef<T>> BasicNet<T>::params() const
{
  std::vector<ConstParamRef<T>> out;
  for (std::size_t i = 0; i < state_.size(); ++i) {
    const auto & st = state_[i];
    if (!st.has_params) {
      continue;
    }
    out.push_back({arch_.layers[i].name + ".w", &st.weight, false});
    if (!st.bias.data.empty()) {
      out.push_back({arch_.layers[i].name + ".b", &st.bias, true});
    }
  }
  return out;
}

template <typename T>
std::size_t BasicNet<T>::parameter_count() const
{
  std::size_t n = 0;
  for (const auto & p : params()) {
    n += p.value->size();
  }
  return n;
}

template <typename T>
const BasicTensor<T> & BasicNet<T>::activation(const std::string & layer_name) const
{
  return acts_.at(static_cast<std::size_t>(arch_.index_of(layer_name)));
}

template <typename T>
template <typename U>
std::vector<std::string> BasicNet<T>::copy_shared_from(const BasicNet<U> & other)
{
  std::vector<std::string> copied;
  for (std::size_t i = 0; i < state_.size(); ++i) {
    auto & st = state_[i];
    if (!st.has_params) {
      continue;
    }
    const auto & nm = arch_.layers[i].name;
    const auto & ol = other.arch_.layers;
    const auto it = std::find_if(ol.begin(), ol.end(), [&](const LayerSpec & l) { return l.name == nm; });
    if (it == ol.end()) {
      continue;
    }
    const auto & os = other.state_[static_cast<std::size_t>(it - ol.begin())];
    if (!os.has_params || os.weight.n != st.weight.n || os.weight.c != st.weight.c || os.weight.h != st.weight.h ||
        os.weight.w != st.weight.w || os.bias.size() != st.bias.size()) {
      continue;
    }
    std::transform(os.weight.data.begin(), os.weight.data.end(), st.weight.data.begin(),
      [](U v) { return static_cast<T>(v); });
    std::transform(os.bias.data.begin(), os.bias.data.end(), st.bias.data.begin(), [](U v) { return static_cast<T>(v); });
    copied.push_back(nm);
  }
  return copied;
}

template class BasicNet<float>;
template class BasicNet<double>;
template std::vector<std::string> BasicNet<float>::copy_shared_from(const BasicNet<float> &);
template std::vector<std::string> BasicNet<float>::copy_shared_from(const BasicNet<double> &);
template std::vector<std::string> BasicNet<double>::copy_shared_from(const BasicNet<float> &);
template std::vector<std::string> BasicNet<double>::copy_shared_from(const BasicNet<double> &);

std::uint64_t parameter_checksum(const Net & net)
{
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto & p : net.params()) {
    const auto * bytes = reinterpret_cast<const unsigned char *>(p.value->data.data());
    for (std::size_t i = 0; i < p.value->size() * sizeof(float); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

Tensor to_input(const enc::EncodedFrame & frame)
{
  Tensor t(3, frame.side, frame.side);
  for (std::size_t i = 0; i < t.size(); ++i) {
    t.data[i] = (static_cast<float>(frame.channels[i]) - 127.5F) / 127.5F;
  }
  return t;
}

std::vector<float> dynamic_probability(const Tensor & logits)
{
  const auto p = softmax(logits);
  return std::vector<float>(p.data.begin() + static_cast<std::ptrdiff_t>(p.plane()), p.data.end());
}

Net init_from_coarser(const NetworkArch & fine_arch, const Net & coarse, std::uint64_t seed)
{
  Net fine(fine_arch, coarse.input_channels());
  fine.initialize(seed);
  const auto copied = fine.copy_shared_from(coarse);
  // Every parametrized layer of the coarse net except its final upsampling must carry over.
  for (const auto & l : coarse.arch().layers) {
    if (l.kind != LayerKind::kConv) {
      continue;
    }
    if (std::find(copied.begin(), copied.end(), l.name) == copied.end()) {
      throw ArchError(fine_arch.name + " does not share layer '" + l.name + "' with " + coarse.arch().name);
    }
  }
  return fine;
}

}  // namespace dogseg::fcn
