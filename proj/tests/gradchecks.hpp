#pragma once

// Finite-difference checks of every differentiable layer, with respect to
// both inputs and parameters, on randomized small shapes (64-bit).

#include <functional>
#include <string>
#include <vector>

#include "jpeggan/autograd.hpp"
#include "jpeggan/decoder.hpp"
#include "jpeggan/layers.hpp"
#include "oracles.hpp"

namespace gradchecks {

using T = jpeggan::Tensor<double>;
using jpeggan::Shape;

// Step for maps that are affine in the perturbed argument. Central
// differences are then exact up to roundoff, which a larger step reduces;
// some gradient entries are ~1e-7 while the probe sum is ~1e4. Maps with
// ReLU kinks (residual blocks) keep the default 1e-5.
inline constexpr double kAffineStep = 1e-3;

struct Result {
  std::string name;
  double worst = 0;
};

// sum(f(x) * R) for a fixed random R, so every output element contributes.
inline double probe(const std::function<T(const T&)>& f, const T& x, jpeggan::Rng& rng, double eps = 1e-5) {
  Shape out_shape;
  {
    jpeggan::NoGradGuard g;
    out_shape = f(x).shape();
  }
  T r = oracle::random_tensor(out_shape, rng);
  return jpeggan::gradient_check([&](const T& v) { return jpeggan::ops::sum(jpeggan::ops::mul(f(v), r)); }, x, eps);
}

// Coefficients whose decoded YCbCr and RGB values stay clear of the clip
// limits, so the decoder is differentiable at the probe point.
inline jpeggan::CoeffTensors<double> unsaturated_coeffs(std::size_t n, std::size_t h, std::size_t w,
                                                        jpeggan::SubsamplingMode mode,
                                                        const jpeggan::QuantizationMatrix& q, jpeggan::Rng& rng) {
  using namespace jpeggan;
  for (;;) {
    CoeffTensors<double> c;
    const Shape ys{n, 1, h, w}, cs{n, 1, h / factor_h(mode), w / factor_w(mode)};
    for (int comp = 0; comp < 3; ++comp) {
      const Shape& s = comp == 0 ? ys : cs;
      const auto& table = q.for_component(comp);
      std::vector<double> v(numel_of(s));
      for (std::size_t i = 0; i < v.size(); ++i) {
        const std::size_t r = (i / s[3]) % s[2], col = i % s[3];
        v[i] = rng.uniform(-1.0, 1.0) * 6.0 / table[(r % 8) * 8 + col % 8];
      }
      c[comp] = T(s, std::move(v));
    }
    NoGradGuard g;
    T ycc = decode_ycc(c, q, mode), rgb = ycc_to_rgb(ycc);
    bool clear = true;
    for (const T* t : {&ycc, &rgb})
      for (double v : t->data()) clear = clear && v > 2.0 && v < 253.0;
    if (clear) return c;
  }
}

inline std::vector<Result> run_all(std::uint64_t seed, int trials = 2) {
  using namespace jpeggan;
  Rng rng(seed);
  std::vector<Result> out;
  auto record = [&](const std::string& name, double err) {
    for (auto& r : out)
      if (r.name == name) {
        r.worst = std::max(r.worst, err);
        return;
      }
    out.push_back({name, err});
  };

  for (int trial = 0; trial < trials; ++trial) {
    const std::size_t n = 1 + rng.below(2), cin = 1 + rng.below(3), cout = 1 + rng.below(3);
    const std::size_t h = 2 * (1 + rng.below(3)), w = 2 * (1 + rng.below(3));
    ParamSet<double> ps;
    T x = oracle::random_tensor({n, cin, h, w}, rng);

    {
      const std::size_t k = rng.below(2) ? 3 : 1;
      auto conv = Conv2d<double>::make(ps, "conv" + std::to_string(trial), cin, cout, k, rng);
      conv.bias = oracle::random_tensor({cout}, rng);
      record("conv/input", probe([&](const T& v) { return conv(v); }, x, rng, kAffineStep));
      record("conv/weight", probe([&](const T& v) { auto c = conv; c.weight = v; return c(x); }, conv.weight, rng, kAffineStep));
      record("conv/bias", probe([&](const T& v) { auto c = conv; c.bias = v; return c(x); }, conv.bias, rng, kAffineStep));
    }
    {
      const std::size_t in = 1 + rng.below(6), o = 1 + rng.below(4);
      auto fc = Linear<double>::make(ps, "fc" + std::to_string(trial), in, o, rng);
      fc.bias = oracle::random_tensor({o}, rng);
      T v2 = oracle::random_tensor({n + 1, in}, rng);
      record("fc/input", probe([&](const T& v) { return fc(v); }, v2, rng, kAffineStep));
      record("fc/weight", probe([&](const T& v) { auto f = fc; f.weight = v; return f(v2); }, fc.weight, rng, kAffineStep));
      record("fc/bias", probe([&](const T& v) { auto f = fc; f.bias = v; return f(v2); }, fc.bias, rng, kAffineStep));
    }
    for (Resample rs : {Resample::kNone, Resample::kUp, Resample::kDown}) {
      const char* tag = rs == Resample::kUp ? "up" : rs == Resample::kDown ? "down" : "plain";
      auto blk = ResidualBlock<double>::make(ps, std::string("res") + tag + std::to_string(trial), cin, cout, rs, rng);
      blk.conv1.bias = oracle::random_tensor({cout}, rng);
      record(std::string("resblock-") + tag + "/input", probe([&](const T& v) { return blk(v); }, x, rng));
      record(std::string("resblock-") + tag + "/conv1",
             probe([&](const T& v) { auto b = blk; b.conv1.weight = v; return b(x); }, blk.conv1.weight, rng));
      record(std::string("resblock-") + tag + "/conv2",
             probe([&](const T& v) { auto b = blk; b.conv2.weight = v; return b(x); }, blk.conv2.weight, rng));
      record(std::string("resblock-") + tag + "/skip",
             probe([&](const T& v) { auto b = blk; b.skip.weight = v; return b(x); }, blk.skip.weight, rng));
    }
    for (std::size_t b : {1u, 2u, 8u}) {
      const std::size_t hh = b * (1 + rng.below(2)), ww = b * (1 + rng.below(2));
      auto lc = LocallyConnected<double>::make(ps, "lc" + std::to_string(b) + "_" + std::to_string(trial), b, b, cin,
                                               cout, rng);
      lc.bias = oracle::random_tensor(lc.bias.shape(), rng);
      T xl = oracle::random_tensor({n, cin, hh, ww}, rng);
      const std::string tag = "locally-connected-" + std::to_string(b) + "x" + std::to_string(b);
      record(tag + "/input", probe([&](const T& v) { return lc(v); }, xl, rng, kAffineStep));
      record(tag + "/weight", probe([&](const T& v) { auto l = lc; l.weight = v; return l(xl); }, lc.weight, rng, kAffineStep));
      record(tag + "/bias", probe([&](const T& v) { auto l = lc; l.bias = v; return l(xl); }, lc.bias, rng, kAffineStep));
    }
    for (SubsamplingMode m : kAllModes) {
      T xc = oracle::random_tensor({n, cin, 4, 4}, rng);
      record("chroma-subsample-" + to_string(m),
             probe([&](const T& v) { return chroma_subsample_layer(v, m); }, xc, rng, kAffineStep));
    }
    // The decoder is affine in the coefficients away from the clip limits; a
    // 1e-3 step moves no sample by more than ~0.3, inside the 2-level margin.
    for (SubsamplingMode m : kAllModes) {
      const int quality = 10 + static_cast<int>(rng.below(90));
      const QuantizationMatrix q = scale_quant_matrix(quality);
      const auto c = unsaturated_coeffs(n, 16, 16, m, q, rng);
      for (int comp = 0; comp < 3; ++comp) {
        record("decoder-" + to_string(m) + "/" + (comp == 0 ? "y" : comp == 1 ? "cb" : "cr"),
               probe(
                   [&](const T& v) {
                     auto cc = c;
                     cc[comp] = v;
                     return decode(cc, q, m);
                   },
                   c[comp], rng, kAffineStep));
      }
    }
    Tape<double>::current().clear();
  }
  return out;
}

// Straight-through consistency of the quantization layer: forward is
// round(a / Q) and the backward multiplies the upstream gradient by 1 / Q
// elementwise. Returns the largest deviation from either rule.
inline double quantization_ste_error(std::uint64_t seed) {
  using namespace jpeggan;
  Rng rng(seed);
  double worst = 0;
  for (int quality : {1, 10, 50, 90, 100}) {
    const auto table = scale_quant_matrix(quality).luma;
    T a = oracle::random_tensor({2, 1, 16, 8}, rng, -300, 300);
    a.set_requires_grad(true);
    T y = quantization_layer(a, table);
    T up = oracle::random_tensor(y.shape(), rng);
    T g = grad(ops::sum(ops::mul(y, up)), {a})[0];
    Tape<double>::current().clear();
    for (std::size_t i = 0; i < a.numel(); ++i) {
      const std::size_t r = (i / 8) % 16, c = i % 8;
      const int q = table[(r % 8) * 8 + c];
      const double v = std::round(a[i] / q);
      const int lim = coefficient_limit(q);
      const bool inside = std::abs(v) <= lim;
      const double want_y = inside ? v : (v > 0 ? lim : -lim);
      const double want_g = inside ? up[i] / q : 0.0;
      worst = std::max({worst, std::abs(y[i] - want_y), std::abs(g[i] - want_g)});
    }
  }
  return worst;
}

}  // namespace gradchecks
