#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "jpeggan/jpeg_kernels.hpp"
#include "jpeggan/ops.hpp"
#include "jpeggan/rng.hpp"
#include "jpeggan/tensor.hpp"

namespace jpeggan {

// Ordered, named collection of trainable tensors.
template <class T>
class ParamSet {
 public:
  Tensor<T> add(const std::string& name, Tensor<T> t) {
    for (const auto& e : entries_)
      if (e.first == name) throw std::invalid_argument("duplicate parameter name " + name);
    t.set_requires_grad(trainable_);
    entries_.emplace_back(name, t);
    return t;
  }

  const Tensor<T>& get(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.first == name) return e.second;
    throw std::out_of_range("no parameter named " + name);
  }
  bool contains(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.first == name) return true;
    return false;
  }

  std::vector<std::pair<std::string, Tensor<T>>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.numel();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
  }

  // Frozen sets never require grad, so ops on them record nothing for them.
  void set_trainable(bool on) {
    trainable_ = on;
    for (auto& e : entries_) e.second.set_requires_grad(on);
  }
  bool trainable() const { return trainable_; }

  // Copies values for every name present in both sets (shapes must agree).
  // Names in `only_prefix` restrict the copy when non-empty.
  std::size_t copy_values_from(const ParamSet& other, const std::string& only_prefix = "") {
    std::size_t copied = 0;
    for (auto& e : entries_) {
      if (!only_prefix.empty() && e.first.rfind(only_prefix, 0) != 0) continue;
      if (!other.contains(e.first)) continue;
      const Tensor<T>& src = other.get(e.first);
      if (src.shape() != e.second.shape())
        throw ShapeError("parameter " + e.first + " shape " + to_string(src.shape()) + " vs " +
                         to_string(e.second.shape()));
      std::copy(src.data().begin(), src.data().end(), e.second.mutable_data().begin());
      ++copied;
    }
    return copied;
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
  bool trainable_ = true;
};

// Uniform(-b, b) with b = gain * sqrt(3 / fan_in); gain sqrt(2) before ReLU.
template <class T>
Tensor<T> uniform_init(const Shape& shape, std::size_t fan_in, double gain, Rng& rng) {
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
  std::vector<T> v(numel_of(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>(shape, std::move(v));
}

inline constexpr double kReluGain = 1.4142135623730951;

template <class T>
struct Conv2d {
  Tensor<T> weight, bias;  // Cout x Cin x k x k, Cout
  std::size_t stride = 1, pad = 0;

  static Conv2d make(ParamSet<T>& ps, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                     Rng& rng, double gain = kReluGain) {
    Conv2d c;
    c.weight = ps.add(name + ".weight", uniform_init<T>({cout, cin, k, k}, cin * k * k, gain, rng));
    c.bias = ps.add(name + ".bias", Tensor<T>::zeros({cout}));
    c.pad = k / 2;
    return c;
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return ops::conv2d(x, weight, bias, stride, pad); }
};

template <class T>
struct Linear {
  Tensor<T> weight, bias;  // in x out, out

  static Linear make(ParamSet<T>& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                     double gain = kReluGain) {
    Linear l;
    l.weight = ps.add(name + ".weight", uniform_init<T>({in, out}, in, gain, rng));
    l.bias = ps.add(name + ".bias", Tensor<T>::zeros({out}));
    return l;
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return ops::linear(x, weight, bias); }
};

// Block-wise affine map: every block_h x block_w tile of the input is mapped
// by the same dense matrix to the co-located output tile. Weights are shared
// between tiles but not between positions inside a tile.
template <class T>
struct LocallyConnected {
  std::size_t block_h = 1, block_w = 1, in_channels = 1, out_channels = 1;
  Tensor<T> weight;  // (block_h*block_w*in) x (block_h*block_w*out), rows ordered (c, dy, dx)
  Tensor<T> bias;    // block_h*block_w*out

  static LocallyConnected make(ParamSet<T>& ps, const std::string& name, std::size_t bh, std::size_t bw,
                               std::size_t cin, std::size_t cout, Rng& rng, double gain = 1.0) {
    LocallyConnected l{bh, bw, cin, cout, {}, {}};
    const std::size_t rows = bh * bw * cin, cols = bh * bw * cout;
    l.weight = ps.add(name + ".weight", uniform_init<T>({rows, cols}, rows, gain, rng));
    l.bias = ps.add(name + ".bias", Tensor<T>::zeros({cols}));
    return l;
  }

  std::size_t parameter_count() const { return weight.numel() + bias.numel(); }

  Tensor<T> operator()(const Tensor<T>& x) const {
    if (x.rank() != 4 || x.dim(1) != in_channels)
      throw ShapeError("locally connected layer: expected N x " + std::to_string(in_channels) + " x H x W, got " +
                       to_string(x.shape()));
    Tensor<T> rows = ops::blocks_to_rows(x, block_h, block_w);
    Tensor<T> y = ops::matmul(rows, weight);
    y = ops::add(y, ops::repeat_rows(ops::reshape(bias, Shape{1, bias.numel()}), y.dim(0)));
    return ops::rows_to_blocks(y, Shape{x.dim(0), out_channels, x.dim(2), x.dim(3)}, block_h, block_w);
  }
};

// Chroma subsampling: mean over 2x2 (4:2:0), 1x2 (4:2:2) or nothing (4:4:4).
template <class T>
Tensor<T> chroma_subsample_layer(const Tensor<T>& x, SubsamplingMode mode) {
  if (mode == SubsamplingMode::k444) return x;
  return ops::avg_pool(x, factor_h(mode), factor_w(mode));
}

// Tiles an 8x8 table over an H x W plane (per sample and channel).
template <class T>
std::vector<T> tile_table(const Shape& shape, const std::array<int, 64>& table, bool reciprocal) {
  const std::size_t h = shape[2], w = shape[3], planes = shape[0] * shape[1];
  std::vector<T> out(numel_of(shape));
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) {
        const T q = static_cast<T>(table[(r % 8) * 8 + c % 8]);
        out[(p * h + r) * w + c] = reciprocal ? T(1) / q : q;
      }
  return out;
}

// Forward: round(a / Q) per 8x8 coefficient block, clamped to the legal
// coefficient range. Backward: straight-through, d out / d a = 1 / Q
// (zero where the clamp is active).
template <class T>
Tensor<T> quantization_layer(const Tensor<T>& amplitudes, const std::array<int, 64>& table) {
  const Shape& s = amplitudes.shape();
  if (s.size() != 4 || s[2] % 8 != 0 || s[3] % 8 != 0)
    throw ShapeError("quantization layer: input " + to_string(s) + " does not tile into 8x8 blocks");
  const std::size_t h = s[2], w = s[3], planes = s[0] * s[1];
  std::vector<T> out(amplitudes.numel()), slope(amplitudes.numel());
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) {
        const std::size_t i = (p * h + r) * w + c;
        const int q = table[(r % 8) * 8 + c % 8];
        const int limit = coefficient_limit(q);
        const double v = std::round(static_cast<double>(amplitudes[i]) / q);
        const bool inside = std::abs(v) <= limit;
        out[i] = static_cast<T>(inside ? v : (v > 0 ? limit : -limit));
        slope[i] = inside ? T(1) / static_cast<T>(q) : T(0);
      }
  Tensor<T> m(s, std::move(slope));
  return Tensor<T>::make_result("quantize", s, std::move(out), {amplitudes},
                                [m](const Tensor<T>& g, const std::vector<bool>&) {
                                  return std::vector<Tensor<T>>{ops::mul(g, m)};
                                });
}

enum class Resample { kNone, kUp, kDown };

// Two 3x3 convolutions on the main path, one 1x1 convolution on the skip
// path, summed. kUp applies nearest 2x upsampling before the convolutions
// (generator); kDown applies 2x mean pooling after them (discriminator).
template <class T>
struct ResidualBlock {
  Conv2d<T> conv1, conv2, skip;
  Resample resample = Resample::kNone;

  static ResidualBlock make(ParamSet<T>& ps, const std::string& name, std::size_t cin, std::size_t cout,
                            Resample rs, Rng& rng) {
    ResidualBlock b;
    b.conv1 = Conv2d<T>::make(ps, name + ".conv1", cin, cout, 3, rng);
    b.conv2 = Conv2d<T>::make(ps, name + ".conv2", cout, cout, 3, rng, 1.0);
    b.skip = Conv2d<T>::make(ps, name + ".skip", cin, cout, 1, rng, 1.0);
    b.resample = rs;
    return b;
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    Tensor<T> main = ops::relu(x), side = x;
    if (resample == Resample::kUp) {
      main = ops::upsample_nearest(main, 2, 2);
      side = ops::upsample_nearest(side, 2, 2);
    }
    main = conv2(ops::relu(conv1(main)));
    side = skip(side);
    if (resample == Resample::kDown) {
      main = ops::avg_pool(main, 2, 2);
      side = ops::avg_pool(side, 2, 2);
    }
    if (main.shape() != side.shape())
      throw ShapeError("residual block: path shapes differ " + to_string(main.shape()) + " vs " +
                       to_string(side.shape()));
    return ops::add(main, side);
  }
};

}  // namespace jpeggan
