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

// Layer primitives. Convolutions go through im2col and BLAS gemm.

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "dogseg/fcn.hpp"

namespace dogseg::fcn
{

namespace
{

void gemm(bool ta, bool tb, int m, int n, int k, float alpha, const float * a, const float * b, float beta, float * c)
{
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a,
    ta ? m : k, b, tb ? k : n, beta, c, n);
}

void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double * a, const double * b, double beta,
  double * c)
{
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a,
    ta ? m : k, b, tb ? k : n, beta, c, n);
}

// cols: (c * n * n, ho * wo). Cells of the (ho, wo) grid read image pixel
// (y * s - p + ky, x * s - p + kx); pixels outside the image read as zero.
template <typename T>
void im2col(const T * img, int c, int h, int w, int n, int s, int p, int ho, int wo, T * cols)
{
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < n; ++ky) {
      for (int kx = 0; kx < n; ++kx) {
        T * row = cols + ((static_cast<std::size_t>(ch) * n + ky) * n + kx) * ho * wo;
        for (int y = 0; y < ho; ++y) {
          const int iy = y * s - p + ky;
          T * out = row + static_cast<std::size_t>(y) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(out, out + wo, T{0});
            continue;
          }
          const T * in = img + (static_cast<std::size_t>(ch) * h + iy) * w;
          for (int x = 0; x < wo; ++x) {
            const int ix = x * s - p + kx;
            out[x] = (ix >= 0 && ix < w) ? in[ix] : T{0};
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates cols back into the image.
template <typename T>
void col2im(const T * cols, int c, int h, int w, int n, int s, int p, int ho, int wo, T * img)
{
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < n; ++ky) {
      for (int kx = 0; kx < n; ++kx) {
        const T * row = cols + ((static_cast<std::size_t>(ch) * n + ky) * n + kx) * ho * wo;
        for (int y = 0; y < ho; ++y) {
          const int iy = y * s - p + ky;
          if (iy < 0 || iy >= h) {
            continue;
          }
          const T * in = row + static_cast<std::size_t>(y) * wo;
          T * out = img + (static_cast<std::size_t>(ch) * h + iy) * w;
          for (int x = 0; x < wo; ++x) {
            const int ix = x * s - p + kx;
            if (ix >= 0 && ix < w) {
              out[ix] += in[x];
            }
          }
        }
      }
    }
  }
}

bool is_pointwise(int n, int s, int p) { return n == 1 && s == 1 && p == 0; }

}  // namespace

int conv_output_edge(int m, int n, int s, int p)
{
  if (s <= 0 || n <= 0 || p < 0) {
    throw ArchError("filter size and stride must be positive, padding non-negative");
  }
  const int span = m - n + 2 * p;
  if (span < 0 || span % s != 0) {
    throw ArchError("edge (" + std::to_string(m) + " - " + std::to_string(n) + " + 2*" + std::to_string(p) + ") / " +
                    std::to_string(s) + " + 1 is not a positive integer");
  }
  return span / s + 1;
}

template <typename T>
BasicTensor<T> conv_forward(
  const BasicTensor<T> & input, const BasicTensor<T> & filters, const std::vector<T> & bias, int s, int p)
{
  const int n = filters.h;
  if (filters.c != input.c || filters.w != n) {
    throw ShapeError("conv filters do not match the input channels");
  }
  if (!bias.empty() && static_cast<int>(bias.size()) != filters.n) {
    throw ShapeError("conv bias size differs from the filter count");
  }
  const int ho = conv_output_edge(input.h, n, s, p);
  const int wo = conv_output_edge(input.w, n, s, p);
  BasicTensor<T> out(filters.n, ho, wo);
  const int kdim = input.c * n * n;
  const T * cols = input.data.data();
  std::vector<T> buf;
  if (!is_pointwise(n, s, p)) {
    buf.resize(static_cast<std::size_t>(kdim) * ho * wo);
    im2col(input.data.data(), input.c, input.h, input.w, n, s, p, ho, wo, buf.data());
    cols = buf.data();
  }
  gemm(false, false, filters.n, ho * wo, kdim, T{1}, filters.data.data(), cols, T{0}, out.data.data());
  if (!bias.empty()) {
    for (int k = 0; k < filters.n; ++k) {
      T * o = out.data.data() + static_cast<std::size_t>(k) * ho * wo;
      for (int i = 0; i < ho * wo; ++i) {
        o[i] += bias[static_cast<std::size_t>(k)];
      }
    }
  }
  return out;
}

template <typename T>
void conv_backward(
  const BasicTensor<T> & input, const BasicTensor<T> & filters, int s, int p, const BasicTensor<T> & grad_out,
  BasicTensor<T> * grad_input, BasicTensor<T> * grad_filters, std::vector<T> * grad_bias)
{
  const int n = filters.h;
  const int ho = grad_out.h;
  const int wo = grad_out.w;
  const int kdim = input.c * n * n;
  const bool pointwise = is_pointwise(n, s, p);
  if (grad_filters != nullptr) {
    const T * cols = input.data.data();
    std::vector<T> buf;
    if (!pointwise) {
      buf.resize(static_cast<std::size_t>(kdim) * ho * wo);
      im2col(input.data.data(), input.c, input.h, input.w, n, s, p, ho, wo, buf.data());
      cols = buf.data();
    }
    if (!grad_filters->same_dims(filters)) {
      *grad_filters = BasicTensor<T>(filters.n, filters.c, filters.h, filters.w);
    }
    // accumulate: dW += G * cols^T
    gemm(false, true, filters.n, kdim, ho * wo, T{1}, grad_out.data.data(), cols, T{1}, grad_filters->data.data());
  }
  if (grad_bias != nullptr) {
    grad_bias->resize(static_cast<std::size_t>(filters.n), T{0});
    for (int k = 0; k < filters.n; ++k) {
      const T * g = grad_out.data.data() + static_cast<std::size_t>(k) * ho * wo;
      T acc{0};
      for (int i = 0; i < ho * wo; ++i) {
        acc += g[i];
      }
      (*grad_bias)[static_cast<std::size_t>(k)] += acc;
    }
  }
  if (grad_input != nullptr) {
    *grad_input = BasicTensor<T>(input.c, input.h, input.w);
    if (pointwise) {
      gemm(true, false, kdim, ho * wo, filters.n, T{1}, filters.data.data(), grad_out.data.data(), T{0},
        grad_input->data.data());
    } else {
      std::vector<T> cols(static_cast<std::size_t>(kdim) * ho * wo);
      gemm(true, false, kdim, ho * wo, filters.n, T{1}, filters.data.data(), grad_out.data.data(), T{0}, cols.data());
      col2im(cols.data(), input.c, input.h, input.w, n, s, p, ho, wo, grad_input->data.data());
    }
  }
}

template <typename T>
PoolResult<T> maxpool_forward(const BasicTensor<T> & input, int n, int s)
{
  const int ho = conv_output_edge(input.h, n, s, 0);
  const int wo = conv_output_edge(input.w, n, s, 0);
  PoolResult<T> r{BasicTensor<T>(input.c, ho, wo), {}};
  r.argmax.resize(r.output.size());
  std::size_t o = 0;
  for (int ch = 0; ch < input.c; ++ch) {
    for (int y = 0; y < ho; ++y) {
      for (int x = 0; x < wo; ++x, ++o) {
        T best = -std::numeric_limits<T>::infinity();
        std::uint32_t arg = 0;
        for (int ky = 0; ky < n; ++ky) {
          for (int kx = 0; kx < n; ++kx) {
            const std::size_t i = (static_cast<std::size_t>(ch) * input.h + y * s + ky) * input.w + x * s + kx;
            // first maximum in scan order wins ties
            if (input.data[i] > best) {
              best = input.data[i];
              arg = static_cast<std::uint32_t>(i);
            }
          }
        }
        r.output.data[o] = best;
        r.argmax[o] = arg;
      }
    }
  }
  return r;
}

template <typename T>
BasicTensor<T> maxpool_backward(
  const BasicTensor<T> & grad_out, const std::vector<std::uint32_t> & argmax, int c, int h, int w)
{
  if (argmax.size() != grad_out.size()) {
    throw ShapeError("pool gradient does not match the stored argmax");
  }
  BasicTensor<T> g(c, h, w);
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    g.data[argmax[i]] += grad_out.data[i];
  }
  return g;
}

double bilinear_point(double q00, double q10, double q01, double q11, double dx, double ex, double dy, double ey)
{
  const double r0 = ex / (dx + ex) * q00 + dx / (dx + ex) * q10;
  const double r1 = ex / (dx + ex) * q01 + dx / (dx + ex) * q11;
  return ey / (dy + ey) * r0 + dy / (dy + ey) * r1;
}

template <typename T>
BasicTensor<T> bilinear_kernel(int f)
{
  if (f < 1) {
    throw ArchError("upsampling factor must be at least 1");
  }
  const int k = deconv_kernel_size(f);
  const double center = (k % 2 == 1) ? f - 1.0 : f - 0.5;
  BasicTensor<T> kern(1, 1, k, k);
  for (int y = 0; y < k; ++y) {
    for (int x = 0; x < k; ++x) {
      const double wy = 1.0 - std::abs(y - center) / f;
      const double wx = 1.0 - std::abs(x - center) / f;
      kern.data[static_cast<std::size_t>(y) * k + x] = static_cast<T>(wy * wx);
    }
  }
  return kern;
}

template <typename T>
BasicTensor<T> bilinear_filters(int channels, int f)
{
  const auto kern = bilinear_kernel<T>(f);
  const int k = kern.h;
  BasicTensor<T> filt(channels, channels, k, k);
  for (int ch = 0; ch < channels; ++ch) {
    std::copy(kern.data.begin(), kern.data.end(), filt.data.begin() + (static_cast<std::size_t>(ch) * channels + ch) * k * k);
  }
  return filt;
}

template <typename T>
BasicTensor<T> deconv_forward(const BasicTensor<T> & input, const BasicTensor<T> & filters, int f, int out_edge)
{
  const int k = filters.h;
  if (filters.n != input.c || filters.w != k) {
    throw ShapeError("deconv filters do not match the input channels");
  }
  const int off = (k - f) / 2;
  const int full = (input.h - 1) * f + k;
  if (out_edge < 1 || off + out_edge > full || input.h != input.w) {
    throw ArchError("upsampled edge " + std::to_string(full - off) + " cannot be cropped to " + std::to_string(out_edge));
  }
  const int cout = filters.c;
  const int kdim = cout * k * k;
  const int pix = input.h * input.w;
  std::vector<T> cols(static_cast<std::size_t>(kdim) * pix);
  gemm(true, false, kdim, pix, input.c, T{1}, filters.data.data(), input.data.data(), T{0}, cols.data());
  BasicTensor<T> out(cout, out_edge, out_edge);
  col2im(cols.data(), cout, out_edge, out_edge, k, f, off, input.h, input.w, out.data.data());
  return out;
}

template <typename T>
void deconv_backward(
  const BasicTensor<T> & input, const BasicTensor<T> & filters, int f, const BasicTensor<T> & grad_out,
  BasicTensor<T> * grad_input, BasicTensor<T> * grad_filters)
{
  const int k = filters.h;
  const int off = (k - f) / 2;
  const int cout = filters.c;
  const int kdim = cout * k * k;
  const int pix = input.h * input.w;
  std::vector<T> cols(static_cast<std::size_t>(kdim) * pix);
  im2col(grad_out.data.data(), cout, grad_out.h, grad_out.w, k, f, off, input.h, input.w, cols.data());
  if (grad_filters != nullptr) {
    if (!grad_filters->same_dims(filters)) {
      *grad_filters = BasicTensor<T>(filters.n, filters.c, filters.h, filters.w);
    }
    // dW (cin, kdim) += X (cin, pix) * cols^T
    gemm(false, true, input.c, kdim, pix, T{1}, input.data.data(), cols.data(), T{1}, grad_filters->data.data());
  }
  if (grad_input != nullptr) {
    *grad_input = BasicTensor<T>(input.c, input.h, input.w);
    gemm(false, false, input.c, pix, kdim, T{1}, filters.data.data(), cols.data(), T{0}, grad_input->data.data());
  }
}

template <typename T>
BasicTensor<T> fuse(const BasicTensor<T> & skip, const BasicTensor<T> & upsampled)
{
  if (!skip.same_dims(upsampled)) {
    throw ArchError("fuse operands differ in shape");
  }
  BasicTensor<T> out = skip;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data[i] += upsampled.data[i];
  }
  return out;
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T> & logits)
{
  BasicTensor<T> p(logits.c, logits.h, logits.w);
  const std::size_t plane = logits.plane();
  for (std::size_t i = 0; i < plane; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < logits.c; ++k) {
      mx = std::max(mx, static_cast<double>(logits.data[k * plane + i]));
    }
    double z = 0.0;
    for (int k = 0; k < logits.c; ++k) {
      z += std::exp(static_cast<double>(logits.data[k * plane + i]) - mx);
    }
    for (int k = 0; k < logits.c; ++k) {
      p.data[k * plane + i] = static_cast<T>(std::exp(static_cast<double>(logits.data[k * plane + i]) - mx) / z);
    }
  }
  return p;
}

template <typename T>
LossResult<T> weighted_softmax_loss(
  const BasicTensor<T> & logits, const std::vector<std::uint8_t> & labels, std::array<double, 2> class_weights)
{
  if (logits.c != 2) {
    throw ShapeError("segmentation logits must have two channels");
  }
  const std::size_t plane = logits.plane();
  if (labels.size() != plane) {
    throw ShapeError("label raster does not match the logits");
  }
  LossResult<T> r{0.0, BasicTensor<T>(2, logits.h, logits.w), 0};
  for (std::size_t i = 0; i < plane; ++i) {
    const auto l = labels[i];
    if (l == enc::kLabelIgnore) {
      continue;
    }
    if (l > 1) {
      throw DataError("label " + std::to_string(l) + " out of range");
    }
    ++r.counted;
  }
  if (r.counted == 0) {
    return r;
  }
  const double inv = 1.0 / static_cast<double>(r.counted);
  double total = 0.0;
  for (std::size_t i = 0; i < plane; ++i) {
    const auto l = labels[i];
    if (l == enc::kLabelIgnore) {
      continue;
    }
    const double a = logits.data[i];
    const double b = logits.data[plane + i];
    const double mx = std::max(a, b);
    const double lse = mx + std::log(std::exp(a - mx) + std::exp(b - mx));
    const double p0 = std::exp(a - lse);
    const double p1 = std::exp(b - lse);
    const double cw = class_weights[l];
    total += cw * (lse - (l == 0 ? a : b));
    r.grad.data[i] = static_cast<T>(cw * (p0 - (l == 0 ? 1.0 : 0.0)) * inv);
    r.grad.data[plane + i] = static_cast<T>(cw * (p1 - (l == 1 ? 1.0 : 0.0)) * inv);
  }
  r.loss = total * inv;
  return r;
}

template <typename T>
LossResult<T> orientation_loss(
  const BasicTensor<T> & pred, const std::vector<float> & heading, const std::vector<std::uint8_t> & labels,
  double lambda)
{
  if (pred.c != 2) {
    throw ShapeError("orientation output must have two channels");
  }
  const std::size_t plane = pred.plane();
  if (heading.size() != plane || labels.size() != plane) {
    throw ShapeError("heading raster does not match the prediction");
  }
  LossResult<T> r{0.0, BasicTensor<T>(2, pred.h, pred.w), 0};
  for (std::size_t i = 0; i < plane; ++i) {
    if (labels[i] == enc::kLabelDynamic && !std::isnan(heading[i])) {
      ++r.counted;
    }
  }
  if (r.counted == 0) {
    return r;
  }
  const double scale = lambda / static_cast<double>(r.counted);
  double total = 0.0;
  for (std::size_t i = 0; i < plane; ++i) {
    if (labels[i] != enc::kLabelDynamic || std::isnan(heading[i])) {
      continue;
    }
    const double ds = pred.data[i] - std::sin(static_cast<double>(heading[i]));
    const double dc = pred.data[plane + i] - std::cos(static_cast<double>(heading[i]));
    total += ds * ds + dc * dc;
    r.grad.data[i] = static_cast<T>(2.0 * ds * scale);
    r.grad.data[plane + i] = static_cast<T>(2.0 * dc * scale);
  }
  r.loss = total * scale;
  return r;
}

double recombine(double s, double c)
{
  if (std::hypot(s, c) < 1e-6) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  return std::atan2(s, c);
}

#define DOGSEG_INSTANTIATE(T)                                                                                      \
  template BasicTensor<T> conv_forward(const BasicTensor<T> &, const BasicTensor<T> &, const std::vector<T> &, int, \
    int);                                                                                                          \
  template void conv_backward(const BasicTensor<T> &, const BasicTensor<T> &, int, int, const BasicTensor<T> &,     \
    BasicTensor<T> *, BasicTensor<T> *, std::vector<T> *);                                                          \
  template PoolResult<T> maxpool_forward(const BasicTensor<T> &, int, int);                                         \
  template BasicTensor<T> maxpool_backward(const BasicTensor<T> &, const std::vector<std::uint32_t> &, int, int,    \
    int);                                                                                                          \
  template BasicTensor<T> bilinear_kernel<T>(int);                                                                  \
  template BasicTensor<T> bilinear_filters<T>(int, int);                                                            \
  template BasicTensor<T> deconv_forward(const BasicTensor<T> &, const BasicTensor<T> &, int, int);                 \
  template void deconv_backward(const BasicTensor<T> &, const BasicTensor<T> &, int, const BasicTensor<T> &,        \
    BasicTensor<T> *, BasicTensor<T> *);                                                                            \
  template BasicTensor<T> fuse(const BasicTensor<T> &, const BasicTensor<T> &);                                     \
  template BasicTensor<T> softmax(const BasicTensor<T> &);                                                          \
  template LossResult<T> weighted_softmax_loss(const BasicTensor<T> &, const std::vector<std::uint8_t> &,           \
    std::array<double, 2>);                                                                                        \
  template LossResult<T> orientation_loss(const BasicTensor<T> &, const std::vector<float> &,                      \
    const std::vector<std::uint8_t> &, double);

DOGSEG_INSTANTIATE(float)
DOGSEG_INSTANTIATE(double)

#undef DOGSEG_INSTANTIATE

}  // namespace dogseg::fcn
