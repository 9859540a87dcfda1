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

#include <doctest.h>

#include <cmath>
#include <random>

#include "dogseg/fcn.hpp"

using namespace dogseg;
using namespace dogseg::fcn;

namespace
{

BasicTensor<double> random_tensor(int n, int c, int h, int w, std::mt19937_64 & rng)
{
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  BasicTensor<double> t(n, c, h, w);
  for (auto & v : t.data) {
    v = u(rng);
  }
  return t;
}

BasicTensor<double> random_map(int c, int h, int w, std::mt19937_64 & rng) { return random_tensor(1, c, h, w, rng); }

// Direct cross-correlation, the oracle for the im2col path.
BasicTensor<double> naive_conv(
  const BasicTensor<double> & in, const BasicTensor<double> & f, const std::vector<double> & b, int s, int p)
{
  const int n = f.h;
  const int ho = (in.h - n + 2 * p) / s + 1;
  const int wo = (in.w - n + 2 * p) / s + 1;
  BasicTensor<double> out(f.n, ho, wo);
  for (int k = 0; k < f.n; ++k) {
    for (int y = 0; y < ho; ++y) {
      for (int x = 0; x < wo; ++x) {
        double acc = b[static_cast<std::size_t>(k)];
        for (int c = 0; c < in.c; ++c) {
          for (int ky = 0; ky < n; ++ky) {
            for (int kx = 0; kx < n; ++kx) {
              const int iy = y * s - p + ky;
              const int ix = x * s - p + kx;
              if (iy >= 0 && iy < in.h && ix >= 0 && ix < in.w) {
                acc += in.at(c, iy, ix) * f.at(k, c, ky, kx);
              }
            }
          }
        }
        out.at(k, y, x) = acc;
      }
    }
  }
  return out;
}

// Scalar probe: L = sum(out * weights) for a fixed random weighting.
double dot(const BasicTensor<double> & a, const BasicTensor<double> & b)
{
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += a.data[i] * b.data[i];
  }
  return s;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

}  // namespace

TEST_CASE("output edge law")
{
  CHECK(conv_output_edge(6, 2, 2, 0) == 3);
  CHECK(conv_output_edge(11, 3, 1, 1) == 11);
  CHECK(conv_output_edge(224, 7, 1, 3) == 224);
  CHECK_THROWS_AS(conv_output_edge(7, 2, 2, 0), ArchError);
  CHECK_THROWS_AS(conv_output_edge(2, 5, 1, 0), ArchError);

  // 50 configurations against the closed form
  int tested = 0;
  for (int m : {8, 13, 16, 31, 64}) {
    for (auto [n, s, p] : std::vector<std::array<int, 3>>{
           {1, 1, 0}, {2, 2, 0}, {3, 1, 1}, {3, 2, 1}, {5, 1, 2}, {7, 1, 3}, {11, 4, 5}, {3, 1, 0}, {4, 2, 1}, {5, 3, 2}}) {
      ++tested;
      const int span = m - n + 2 * p;
      if (span >= 0 && span % s == 0) {
        CHECK(conv_output_edge(m, n, s, p) == span / s + 1);
        std::mt19937_64 rng(static_cast<std::uint64_t>(tested));
        const auto in = random_map(1, m, m, rng);
        const auto f = random_tensor(1, 1, n, n, rng);
        const auto out = conv_forward(in, f, std::vector<double>{0.0}, s, p);
        CHECK(out.h == span / s + 1);
      } else {
        CHECK_THROWS_AS(conv_output_edge(m, n, s, p), ArchError);
      }
    }
  }
  CHECK(tested == 50);
}

TEST_CASE("convolution matches direct cross-correlation")
{
  std::mt19937_64 rng(3);
  for (auto [n, s, p] : std::vector<std::array<int, 3>>{{3, 1, 1}, {2, 2, 0}, {1, 1, 0}, {5, 1, 2}, {4, 2, 1}}) {
    const auto in = random_map(3, 10, 10, rng);
    const auto f = random_tensor(4, 3, n, n, rng);
    const std::vector<double> b{0.1, -0.2, 0.3, 0.0};
    const auto got = conv_forward(in, f, b, s, p);
    const auto want = naive_conv(in, f, b, s, p);
    REQUIRE(got.same_dims(want));
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));
    }
  }
  // identity 1x1 filter
  const auto in = random_map(2, 6, 6, rng);
  BasicTensor<double> id(2, 2, 1, 1);
  id.at(0, 0, 0, 0) = 1.0;
  id.at(1, 1, 0, 0) = 1.0;
  CHECK(conv_forward(in, id, {0.0, 0.0}, 1, 0) == in);
}

TEST_CASE("convolution gradients against finite differences")
{
  std::mt19937_64 rng(5);
  for (auto [n, s, p] : std::vector<std::array<int, 3>>{{3, 1, 1}, {3, 2, 1}, {1, 1, 0}}) {
    auto in = random_map(2, 9, 9, rng);
    auto f = random_tensor(3, 2, n, n, rng);
    std::vector<double> b{0.1, 0.2, -0.1};
    const auto probe = random_map(3, conv_output_edge(9, n, s, p), conv_output_edge(9, n, s, p), rng);
    BasicTensor<double> gi;
    BasicTensor<double> gf;
    std::vector<double> gb;
    conv_backward(in, f, s, p, probe, &gi, &gf, &gb);
    const double h = 1e-6;
    auto loss = [&] { return dot(conv_forward(in, f, b, s, p), probe); };
    for (std::size_t i = 0; i < in.size(); i += 7) {
      const double o = in.data[i];
      in.data[i] = o + h;
      const double up = loss();
      in.data[i] = o - h;
      const double dn = loss();
      in.data[i] = o;
      CHECK(rel_err(gi.data[i], (up - dn) / (2 * h)) < 1e-6);
    }
    for (std::size_t i = 0; i < f.size(); i += 3) {
      const double o = f.data[i];
      f.data[i] = o + h;
      const double up = loss();
      f.data[i] = o - h;
      const double dn = loss();
      f.data[i] = o;
      CHECK(rel_err(gf.data[i], (up - dn) / (2 * h)) < 1e-6);
    }
    for (std::size_t i = 0; i < b.size(); ++i) {
      const double o = b[i];
      b[i] = o + h;
      const double up = loss();
      b[i] = o - h;
      const double dn = loss();
      b[i] = o;
      CHECK(rel_err(gb[i], (up - dn) / (2 * h)) < 1e-6);
    }
  }
}

TEST_CASE("max pooling")
{
  BasicTensor<double> flat(1, 8, 8, 2.5);
  const auto pc = maxpool_forward(flat);
  CHECK(pc.output.h == 4);
  for (auto v : pc.output.data) {
    CHECK(v == 2.5);
  }

  // 4x4 block as in the usual stride-two illustration
  BasicTensor<double> in(1, 4, 4);
  const double vals[16] = {1, 1, 2, 4, 5, 6, 7, 8, 3, 2, 1, 0, 1, 2, 3, 4};
  std::copy(std::begin(vals), std::end(vals), in.data.begin());
  const auto r = maxpool_forward(in);
  CHECK(r.output.data == std::vector<double>{6, 8, 3, 4});

  // backward: brute-force finite differences on random (tie-free) input
  std::mt19937_64 rng(9);
  auto x = random_map(2, 4, 4, rng);
  const auto probe = random_map(2, 2, 2, rng);
  const auto fw = maxpool_forward(x);
  const auto g = maxpool_backward(probe, fw.argmax, 2, 4, 4);
  int routed = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double o = x.data[i];
    const double h = 1e-7;
    x.data[i] = o + h;
    const double up = dot(maxpool_forward(x).output, probe);
    x.data[i] = o - h;
    const double dn = dot(maxpool_forward(x).output, probe);
    x.data[i] = o;
    CHECK(g.data[i] == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-6));
    routed += g.data[i] != 0.0 ? 1 : 0;
  }
  CHECK(routed == 8);
  CHECK_THROWS_AS(maxpool_forward(BasicTensor<double>(1, 5, 5)), ArchError);
}

TEST_CASE("bilinear interpolation and kernel")
{
  // corners 0,0 on the left and 1,1 on the right: midpoint 0.5
  CHECK(bilinear_point(0, 1, 0, 1, 0.5, 0.5, 0.5, 0.5) == doctest::Approx(0.5));
  CHECK(bilinear_point(0, 1, 0, 1, 0.25, 0.75, 0.9, 0.1) == doctest::Approx(0.25));
  for (double q : {-2.0, 0.0, 3.7}) {
    CHECK(bilinear_point(q, q, q, q, 0.3, 0.7, 0.6, 0.4) == doctest::Approx(q));
  }
  // at a node the node's value
  CHECK(bilinear_point(4, 1, 2, 3, 0.0, 1.0, 0.0, 1.0) == 4.0);

  const auto k2 = bilinear_kernel<double>(2);
  CHECK(k2.h == 4);
  CHECK(k2.at(0, 0, 0, 0) == doctest::Approx(1.0 / 16));
  CHECK(k2.at(0, 0, 1, 1) == doctest::Approx(9.0 / 16));
  CHECK(bilinear_kernel<double>(3).h == 5);
  CHECK(bilinear_kernel<double>(32).h == 64);
  CHECK(bilinear_kernel<double>(1).data == std::vector<double>{1.0});
}

TEST_CASE("bilinear deconvolution")
{
  for (int f : {2, 3, 4, 8, 16, 32}) {
    const int in_edge = 4;
    BasicTensor<double> flat(2, in_edge, in_edge, 0.7);
    const auto out = deconv_forward(flat, bilinear_filters<double>(2, f), f, in_edge * f);
    // interior: at least half a source pixel from the border
    const int margin = f;
    for (int c = 0; c < 2; ++c) {
      for (int y = margin; y < out.h - margin; ++y) {
        for (int x = margin; x < out.w - margin; ++x) {
          CHECK(std::abs(out.at(c, y, x) - 0.7) < 1e-6);
        }
      }
    }
  }

  // interior samples equal the interpolation between the neighbouring source pixels
  std::mt19937_64 rng(12);
  const int f = 4;
  const auto in = random_map(1, 6, 6, rng);
  const auto out = deconv_forward(in, bilinear_filters<double>(1, f), f, 24);
  for (int y = f; y < 24 - f; ++y) {
    for (int x = f; x < 24 - f; ++x) {
      const double u = (x + 0.5) / f - 0.5;
      const double v = (y + 0.5) / f - 0.5;
      const int x0 = static_cast<int>(std::floor(u));
      const int y0 = static_cast<int>(std::floor(v));
      const double dx = u - x0;
      const double dy = v - y0;
      const double want = bilinear_point(
        in.at(0, y0, x0), in.at(0, y0, x0 + 1), in.at(0, y0 + 1, x0), in.at(0, y0 + 1, x0 + 1), dx, 1 - dx, dy, 1 - dy);
      CHECK(out.at(0, y, x) == doctest::Approx(want).epsilon(1e-12));
    }
  }

  // impulse reproduces the kernel, shifted by the crop offset
  for (int ff : {2, 3, 5}) {
    BasicTensor<double> imp(1, 5, 5);
    imp.at(0, 2, 2) = 1.0;
    const auto kern = bilinear_kernel<double>(ff);
    const auto o = deconv_forward(imp, bilinear_filters<double>(1, ff), ff, 5 * ff);
    const int off = deconv_crop_offset(ff);
    for (int y = 0; y < o.h; ++y) {
      for (int x = 0; x < o.w; ++x) {
        const int ky = y + off - 2 * ff;
        const int kx = x + off - 2 * ff;
        const double want = (ky >= 0 && ky < kern.h && kx >= 0 && kx < kern.w) ? kern.at(0, 0, ky, kx) : 0.0;
        CHECK(o.at(0, y, x) == doctest::Approx(want).epsilon(1e-12));
      }
    }
  }

  // f = 1 is the identity
  const auto x = random_map(3, 5, 5, rng);
  CHECK(deconv_forward(x, bilinear_filters<double>(3, 1), 1, 5) == x);
  CHECK_THROWS_AS(deconv_forward(x, bilinear_filters<double>(3, 2), 2, 20), ArchError);
}

TEST_CASE("deconvolution gradients")
{
  std::mt19937_64 rng(21);
  for (int f : {2, 3}) {
    auto in = random_map(2, 4, 4, rng);
    auto filt = random_tensor(2, 3, deconv_kernel_size(f), deconv_kernel_size(f), rng);
    const int edge = 4 * f - 1;
    const auto probe = random_map(3, edge, edge, rng);
    BasicTensor<double> gi;
    BasicTensor<double> gf;
    deconv_backward(in, filt, f, probe, &gi, &gf);
    auto loss = [&] { return dot(deconv_forward(in, filt, f, edge), probe); };
    const double h = 1e-6;
    for (std::size_t i = 0; i < in.size(); ++i) {
      const double o = in.data[i];
      in.data[i] = o + h;
      const double up = loss();
      in.data[i] = o - h;
      const double dn = loss();
      in.data[i] = o;
      CHECK(rel_err(gi.data[i], (up - dn) / (2 * h)) < 1e-6);
    }
    for (std::size_t i = 0; i < filt.size(); i += 5) {
      const double o = filt.data[i];
      filt.data[i] = o + h;
      const double up = loss();
      filt.data[i] = o - h;
      const double dn = loss();
      filt.data[i] = o;
      CHECK(rel_err(gf.data[i], (up - dn) / (2 * h)) < 1e-6);
    }
  }
}

TEST_CASE("fuse")
{
  std::mt19937_64 rng(2);
  const auto up = random_map(2, 4, 4, rng);
  CHECK(fuse(BasicTensor<double>(2, 4, 4), up) == up);
  const auto twice = fuse(up, up);
  for (std::size_t i = 0; i < up.size(); ++i) {
    CHECK(twice.data[i] == 2 * up.data[i]);
  }
  CHECK_THROWS_AS(fuse(BasicTensor<double>(2, 4, 5), up), ArchError);
}

TEST_CASE("weighted softmax loss")
{
  BasicTensor<double> one(2, 1, 1);
  auto r = weighted_softmax_loss(one, {0}, {1.0, 1.0});
  CHECK(r.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(r.loss == doctest::Approx(0.6931).epsilon(1e-4));

  std::mt19937_64 rng(4);
  const auto logits = random_map(2, 6, 6, rng);
  std::vector<std::uint8_t> labels(36);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i] = static_cast<std::uint8_t>(i % 2);
  }
  // unweighted multinomial logistic loss per counted pixel
  const auto p = softmax(logits);
  double ref = 0.0;
  for (std::size_t i = 0; i < 36; ++i) {
    ref -= std::log(p.data[labels[i] * 36 + i]);
    CHECK(p.data[i] + p.data[36 + i] == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(weighted_softmax_loss(logits, labels, {1.0, 1.0}).loss == doctest::Approx(ref / 36).epsilon(1e-12));

  // linear in the class weight
  double dyn = 0.0;
  double stat = 0.0;
  for (std::size_t i = 0; i < 36; ++i) {
    (labels[i] ? dyn : stat) -= std::log(p.data[labels[i] * 36 + i]);
  }
  CHECK(weighted_softmax_loss(logits, labels, {1.0, 2.0}).loss == doctest::Approx((stat + 2 * dyn) / 36).epsilon(1e-12));

  // ignore pixels contribute nothing
  labels[5] = enc::kLabelIgnore;
  const auto ri = weighted_softmax_loss(logits, labels, {1.0, 3.0});
  CHECK(ri.counted == 35);
  CHECK(ri.grad.data[5] == 0.0);
  CHECK(ri.grad.data[36 + 5] == 0.0);

  labels[7] = 2;
  CHECK_THROWS_AS(weighted_softmax_loss(logits, labels, {1.0, 1.0}), DataError);
}

TEST_CASE("weighted softmax gradient")
{
  std::mt19937_64 rng(8);
  auto logits = random_map(2, 5, 5, rng);
  std::vector<std::uint8_t> labels(25);
  for (std::size_t i = 0; i < 25; ++i) {
    labels[i] = i % 5 == 0 ? enc::kLabelIgnore : static_cast<std::uint8_t>(i % 3 == 0);
  }
  const std::array<double, 2> c{1.0, 40.0};
  const auto r = weighted_softmax_loss(logits, labels, c);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double o = logits.data[i];
    const double h = 1e-6;
    logits.data[i] = o + h;
    const double up = weighted_softmax_loss(logits, labels, c).loss;
    logits.data[i] = o - h;
    const double dn = weighted_softmax_loss(logits, labels, c).loss;
    logits.data[i] = o;
    const double num = (up - dn) / (2 * h);
    CHECK(std::abs(r.grad.data[i] - num) <= 1e-4 * std::max(std::abs(num), 1e-3));
  }
}

TEST_CASE("biternion round trip")
{
  CHECK(std::cos(0.0) == 1.0);
  CHECK(recombine(0.0, 1.0) == 0.0);
  CHECK(recombine(1.0, 0.0) == doctest::Approx(M_PI / 2));
  double worst = 0.0;
  for (int i = 0; i < 360; ++i) {
    const double phi = -M_PI + (i + 0.5) * (2 * M_PI / 360);
    worst = std::max(worst, std::abs(phi - recombine(std::sin(phi), std::cos(phi))));
  }
  CHECK(worst < 1e-9);
  CHECK(std::isnan(recombine(0.0, 0.0)));
}

TEST_CASE("orientation loss")
{
  BasicTensor<double> pred(2, 1, 2);
  std::vector<float> heading{0.0F, 0.0F};
  std::vector<std::uint8_t> labels{enc::kLabelDynamic, enc::kLabelStatic};
  // (sin, cos) prediction (0, 0) against target (0, 1)
  auto r = orientation_loss(pred, heading, labels, 1.0);
  CHECK(r.loss == doctest::Approx(1.0));
  CHECK(r.counted == 1);
  CHECK(orientation_loss(pred, heading, labels, 0.5).loss == doctest::Approx(0.5));

  pred.at(1, 0, 0) = 1.0;
  CHECK(orientation_loss(pred, heading, labels, 1.0).loss == doctest::Approx(0.0));

  labels[0] = enc::kLabelStatic;
  CHECK(orientation_loss(pred, heading, labels, 1.0).loss == 0.0);

  std::mt19937_64 rng(10);
  auto p = random_map(2, 4, 4, rng);
  std::vector<float> hd(16);
  std::vector<std::uint8_t> lb(16);
  for (std::size_t i = 0; i < 16; ++i) {
    hd[i] = static_cast<float>(0.4 * static_cast<double>(i) - 3.0);
    lb[i] = i % 3 == 0 ? enc::kLabelStatic : enc::kLabelDynamic;
  }
  const auto g = orientation_loss(p, hd, lb, 1.5);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double o = p.data[i];
    const double h = 1e-6;
    p.data[i] = o + h;
    const double up = orientation_loss(p, hd, lb, 1.5).loss;
    p.data[i] = o - h;
    const double dn = orientation_loss(p, hd, lb, 1.5).loss;
    p.data[i] = o;
    CHECK(rel_err(g.grad.data[i], (up - dn) / (2 * h)) < 1e-4);
  }
}

TEST_CASE("learning rate policy")
{
  TrainConfig c;
  c.base_lr = 1e-3;
  c.iterations = 1000;
  for (int it : {0, 1, 499, 500, 999}) {
    CHECK(lr_at(it, c) == 1e-3);
  }
  c.lr_policy = LrPolicy::kStep;
  CHECK(lr_at(0, c) == doctest::Approx(1e-2));
  CHECK(lr_at(500, c) == doctest::Approx(1e-3));
  CHECK(lr_at(999, c) == doctest::Approx(1e-3));
  double last = 1.0;
  int changes = 0;
  for (int it = 0; it < 1000; ++it) {
    const double lr = lr_at(it, c);
    CHECK(lr <= last);
    changes += lr < last && it > 0 ? 1 : 0;
    last = lr;
  }
  CHECK(changes == kLrSteps);
  c.lr_scale = 0.1;
  CHECK(lr_at(0, c) == doctest::Approx(1e-3));
  CHECK(lr_at(999, c) == doctest::Approx(1e-4));
  CHECK_THROWS_AS(lr_at(1000, c), BoundsError);
}
