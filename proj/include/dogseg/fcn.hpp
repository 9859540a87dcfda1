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

#ifndef DOGSEG__FCN_HPP_
#define DOGSEG__FCN_HPP_

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dogseg/encoder.hpp"
#include "dogseg/error.hpp"

namespace dogseg::fcn
{

/// Dense array with up to four dimensions (n, c, h, w). Feature maps use n = 1.
template <typename T>
struct BasicTensor
{
  int n = 1;
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<T> data;

  BasicTensor() = default;
  BasicTensor(int channels, int height, int width, T fill = T{})
  : BasicTensor(1, channels, height, width, fill)
  {
  }
  BasicTensor(int count, int channels, int height, int width, T fill = T{})
  : n(count), c(channels), h(height), w(width), data(static_cast<std::size_t>(count) * channels * height * width, fill)
  {
    if (count <= 0 || channels <= 0 || height <= 0 || width <= 0) {
      throw ShapeError("tensor dims must be positive");
    }
  }

  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  T & at(int ch, int y, int x) { return data[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  const T & at(int ch, int y, int x) const { return data[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  T & at(int i, int ch, int y, int x) { return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x]; }
  const T & at(int i, int ch, int y, int x) const
  {
    return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
  }
  bool same_dims(const BasicTensor & o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
  bool operator==(const BasicTensor &) const = default;
};

using Tensor = BasicTensor<float>;

// ---------------------------------------------------------------------------
// Layer primitives

/// (m - n + 2p) / s + 1; throws ArchError when not a positive integer.
int conv_output_edge(int m, int n, int s, int p);

/// Cross-correlation over a zero-padded input. filters: (out, in, n, n).
template <typename T>
BasicTensor<T> conv_forward(
  const BasicTensor<T> & input, const BasicTensor<T> & filters, const std::vector<T> & bias, int s, int p);

/// Gradients of conv_forward. Any output pointer may be null.
template <typename T>
void conv_backward(
  const BasicTensor<T> & input, const BasicTensor<T> & filters, int s, int p, const BasicTensor<T> & grad_out,
  BasicTensor<T> * grad_input, BasicTensor<T> * grad_filters, std::vector<T> * grad_bias);

template <typename T>
struct PoolResult
{
  BasicTensor<T> output;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
};

template <typename T>
PoolResult<T> maxpool_forward(const BasicTensor<T> & input, int n = 2, int s = 2);

template <typename T>
BasicTensor<T> maxpool_backward(
  const BasicTensor<T> & grad_out, const std::vector<std::uint32_t> & argmax, int c, int h, int w);

/// Interpolation between four nodes. dx, ex: distances to the left and right node;
/// dy, ey: to the lower and upper node.
double bilinear_point(double q00, double q10, double q01, double q11, double dx, double ex, double dy, double ey);

/// Kernel edge used for an upsampling factor f.
inline int deconv_kernel_size(int f) { return 2 * f - f % 2; }

/// Single-channel bilinear kernel, (1, 1, k, k) with k = deconv_kernel_size(f).
template <typename T>
BasicTensor<T> bilinear_kernel(int f);

/// (in, out, k, k) filters that upsample each channel bilinearly and mix nothing.
template <typename T>
BasicTensor<T> bilinear_filters(int channels, int f);

/// Offset of the aligned crop inside the full transposed-convolution output.
inline int deconv_crop_offset(int f) { return (deconv_kernel_size(f) - f) / 2; }

/// Transposed convolution with stride f, then the window [offset, offset + out_edge).
template <typename T>
BasicTensor<T> deconv_forward(const BasicTensor<T> & input, const BasicTensor<T> & filters, int f, int out_edge);

template <typename T>
void deconv_backward(
  const BasicTensor<T> & input, const BasicTensor<T> & filters, int f, const BasicTensor<T> & grad_out,
  BasicTensor<T> * grad_input, BasicTensor<T> * grad_filters);

/// Elementwise sum; dims must agree.
template <typename T>
BasicTensor<T> fuse(const BasicTensor<T> & skip, const BasicTensor<T> & upsampled);

template <typename T>
struct LossResult
{
  double loss = 0.0;
  BasicTensor<T> grad;
  std::size_t counted = 0;  // pixels contributing
};

/// Class probabilities per pixel (softmax over channels).
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T> & logits);

/// Weighted multinomial logistic loss over non-ignored pixels, divided by their count.
/// labels: 0 static, 1 dynamic, enc::kLabelIgnore skipped. Throws DataError otherwise.
template <typename T>
LossResult<T> weighted_softmax_loss(
  const BasicTensor<T> & logits, const std::vector<std::uint8_t> & labels, std::array<double, 2> class_weights);

/// lambda * mean over dynamic cells of (s - sin phi)^2 + (c - cos phi)^2. pred holds
/// channel 0 = sin, channel 1 = cos. Cells with NaN heading are skipped.
template <typename T>
LossResult<T> orientation_loss(
  const BasicTensor<T> & pred, const std::vector<float> & heading, const std::vector<std::uint8_t> & labels,
  double lambda);

/// atan2(sin, cos), or NaN when both are (near) zero.
double recombine(double s, double c);

// ---------------------------------------------------------------------------
// Architectures

enum class LayerKind { kConv, kMaxPool, kDeconv, kFuse, kSoftmax, kRegression };

struct LayerSpec
{
  std::string name;
  LayerKind kind = LayerKind::kConv;
  std::string input = "data";
  int filter = 3;
  int stride = 1;
  int pad = 0;
  int out_channels = 0;
  bool relu = false;
  std::string fuse_source;  // fuse: second operand
  std::string crop_like;    // deconv: layer whose edge the output is cropped to ("data" = input)
  bool zero_init = false;   // skip score layers start at zero
};

struct NetworkArch
{
  std::string name;
  std::vector<LayerSpec> layers;
  bool orientation_heads = false;
  std::string segmentation_output;  // a kSoftmax layer
  std::string orientation_output;   // a kRegression layer (2 channels: sin, cos)

  const LayerSpec & layer(const std::string & layer_name) const;
  int index_of(const std::string & layer_name) const;
  int count(LayerKind kind) const;
};

std::vector<std::string> arch_names();
/// FCN-32s/16s/8s, ALEX-32s/16s/4s, TOY-32s/16s/8s.
NetworkArch make_arch(const std::string & name, bool orientation_heads = false, int input_channels = 3);

struct Shape
{
  int c = 0;
  int h = 0;
  int w = 0;
  bool operator==(const Shape &) const = default;
};

/// Output shape of every layer for a square input, in layer order. Throws ArchError.
std::vector<Shape> infer_shapes(const NetworkArch & arch, int input_channels, int edge);

// ---------------------------------------------------------------------------
// Network

template <typename T>
struct ParamRef
{
  std::string name;
  BasicTensor<T> * value;
  BasicTensor<T> * grad;
  bool is_bias;
};

template <typename T>
struct ConstParamRef
{
  std::string name;
  const BasicTensor<T> * value;
  bool is_bias;
};

template <typename T>
struct NetOutput
{
  BasicTensor<T> segmentation;  // logits (2, H, W)
  BasicTensor<T> orientation;   // (2, H, W) in [-1, 1]; empty without heads
};

template <typename T>
class BasicNet
{
public:
  explicit BasicNet(NetworkArch arch, int input_channels = 3);

  const NetworkArch & arch() const { return arch_; }
  int input_channels() const { return input_channels_; }

  /// Uniform +-sqrt(6 / (fan_in + fan_out)) for convs, zero for skip scores and
  /// biases, bilinear for deconvs.
  void initialize(std::uint64_t seed);

  NetOutput<T> forward(const BasicTensor<T> & input);
  /// Accumulates parameter gradients for the last forward pass.
  void backward(const BasicTensor<T> & grad_segmentation, const BasicTensor<T> * grad_orientation);
  void zero_grad();
  /// Momentum SGD with L2 weight decay on weights (not biases).
  void sgd_step(double lr, double momentum, double weight_decay);

  std::vector<ParamRef<T>> params();
  std::vector<ConstParamRef<T>> params() const;
  std::size_t parameter_count() const;
  /// Output of a named layer from the last forward pass.
  const BasicTensor<T> & activation(const std::string & layer_name) const;

  /// Copies parameters of every layer present in both nets with equal shapes; returns
  /// the copied layer names.
  template <typename U>
  std::vector<std::string> copy_shared_from(const BasicNet<U> & other);

private:
  template <typename U>
  friend class BasicNet;

  struct LayerState
  {
    BasicTensor<T> weight;
    BasicTensor<T> bias;  // (out, 1, 1); empty for deconvs
    BasicTensor<T> weight_grad;
    BasicTensor<T> bias_grad;
    BasicTensor<T> weight_mom;
    BasicTensor<T> bias_mom;
    bool has_params = false;
  };

  NetworkArch arch_;
  int input_channels_;
  std::vector<int> input_index_;   // -1 = data
  std::vector<int> fuse_index_;
  std::vector<int> crop_index_;    // -1 = data
  std::vector<Shape> channels_;    // channel count per layer (h, w unused)
  std::vector<LayerState> state_;
  BasicTensor<T> data_;
  std::vector<BasicTensor<T>> acts_;
  std::vector<std::vector<std::uint32_t>> argmax_;
};

using Net = BasicNet<float>;

/// FNV-1a over the raw parameter bytes in layer order.
std::uint64_t parameter_checksum(const Net & net);

/// Input tensor from encoded channels: (code - 127.5) / 127.5.
Tensor to_input(const enc::EncodedFrame & frame);

/// Per-pixel probability of the dynamic class.
std::vector<float> dynamic_probability(const Tensor & logits);

// ---------------------------------------------------------------------------
// Training

enum class LrPolicy { kFixed, kStep };

struct TrainConfig
{
  LrPolicy lr_policy = LrPolicy::kFixed;
  double base_lr = 0.01;
  double lr_scale = 1.0;  // incremental training multiplier
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int iterations = 5000;
  std::array<double, 2> class_weights{1.0, 40.0};
  double orientation_weight = 1.0;
  std::uint64_t rng_seed = 1;
  int eval_interval = 100;
  int batch = 1;

  void validate() const;
};

/// Number of geometric decay steps of the step policy.
inline constexpr int kLrSteps = 5;

double lr_at(int iter, const TrainConfig & config);

struct CurvePoint
{
  int iter = 0;
  double loss = 0.0;
  double accuracy = 0.0;      // occupied cells
  double precision = 0.0;
  double recall = 0.0;
  double accuracy_all = 0.0;  // every non-ignored pixel
};

/// Training samples by index; implementations may synthesize (e.g. rotate) on demand.
class SampleSource
{
public:
  virtual ~SampleSource() = default;
  virtual std::size_t size() const = 0;
  virtual enc::EncodedFrame get(std::size_t index) const = 0;
};

class VectorSource : public SampleSource
{
public:
  explicit VectorSource(std::vector<enc::EncodedFrame> frames) : frames_(std::move(frames)) {}
  std::size_t size() const override { return frames_.size(); }
  enc::EncodedFrame get(std::size_t index) const override { return frames_.at(index); }

private:
  std::vector<enc::EncodedFrame> frames_;
};

using ProgressFn = std::function<void(const CurvePoint &)>;

/// SGD over shuffled epochs of the source. Throws TrainingDivergedError on NaN loss.
std::vector<CurvePoint> train(Net & net, const SampleSource & data, const TrainConfig & config,
  const ProgressFn & progress = {});

void write_curve_csv(std::ostream & out, const std::vector<CurvePoint> & curve);

/// Net for a finer arch: shared layers copied, new skip scores zero, new deconvs bilinear.
/// lr_scale is returned through the config the caller trains with.
Net init_from_coarser(const NetworkArch & fine_arch, const Net & coarse, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Checkpoints: "DSCK", u32 version, arch name, heads flag, input channels, then per
// parameter block: name, 4 x i32 dims, raw f32; trailing u64 FNV-1a of all prior bytes.

void save_checkpoint(const std::string & path, const Net & net);
Net load_checkpoint(const std::string & path);

// ---------------------------------------------------------------------------
// Gradient check

struct GradientSample
{
  BasicTensor<double> input;
  std::vector<std::uint8_t> labels;
  std::vector<float> heading;
  std::array<double, 2> class_weights{1.0, 1.0};
  double orientation_weight = 1.0;
};

/// Total loss of a double-precision net on a sample.
double sample_loss(BasicNet<double> & net, const GradientSample & sample);

/// Max relative error between analytic gradients and central differences over
/// `probes` random entries of every parameter block.
double gradient_check(
  BasicNet<double> & net, const GradientSample & sample, int probes, std::uint64_t seed, double step = 1e-6);

}  // namespace dogseg::fcn

#endif  // DOGSEG__FCN_HPP_
