#pragma once

// Generator (shared trunk + three JPEG paths), discriminator, and the RGB
// anchor generator built from the same trunk.

#include <memory>
#include <string>
#include <vector>

#include "jpeggan/decoder.hpp"
#include "jpeggan/layers.hpp"

namespace jpeggan {

struct GeneratorSpec {
  std::size_t resolution = 32;
  std::size_t latent_dim = 128;
  std::size_t channels = 0;  // 0: 128 at 64x64, halved at 32x32
  std::size_t residual_blocks = 4;
  std::size_t loc_channels = 1;  // width between Loc1 and Loc2
  SubsamplingMode mode = SubsamplingMode::k420;
  int quality = 50;
  bool jpeg_layers = true;  // false: RGB output from the trunk head (baseline / anchor)

  std::size_t trunk_channels() const {
    if (channels) return channels;
    return resolution >= 64 ? 128 : 64;
  }
  std::size_t base_extent() const { return resolution >> residual_blocks; }

  void validate() const {
    if (latent_dim == 0 || loc_channels == 0 || residual_blocks == 0)
      throw std::invalid_argument("generator spec: zero-sized layer");
    if (base_extent() == 0 || base_extent() << residual_blocks != resolution)
      throw std::invalid_argument("generator spec: resolution " + std::to_string(resolution) +
                                  " is not reachable with " + std::to_string(residual_blocks) + " 2x upsamplings");
    if (jpeg_layers) {
      validate_quality(quality);
      if (resolution % mcu_height(mode) != 0 || resolution % mcu_width(mode) != 0)
        throw std::invalid_argument("generator spec: resolution " + std::to_string(resolution) +
                                    " is not a whole number of MCUs for " + to_string(mode));
    }
  }
};

struct DiscriminatorSpec {
  std::size_t resolution = 32;
  std::size_t channels = 0;
  std::size_t residual_blocks = 4;

  std::size_t width() const {
    if (channels) return channels;
    return resolution >= 64 ? 128 : 64;
  }
  std::size_t final_extent() const { return resolution >> residual_blocks; }

  void validate() const {
    if (residual_blocks == 0 || final_extent() == 0 || final_extent() << residual_blocks != resolution)
      throw std::invalid_argument("discriminator spec: resolution " + std::to_string(resolution) +
                                  " is not reachable with " + std::to_string(residual_blocks) + " 2x poolings");
  }

  static DiscriminatorSpec matching(const GeneratorSpec& g) { return {g.resolution, g.channels, g.residual_blocks}; }
};

// Images entering the discriminator are rescaled from [0, 255] to [-1, 1].
template <class T>
Tensor<T> normalize_pixels(const Tensor<T>& rgb) {
  return ops::add_scalar(ops::scale(rgb, T(1.0 / 127.5)), T(-1));
}

template <class T>
Tensor<T> denormalize_pixels(const Tensor<T>& x) {
  return ops::scale(ops::add_scalar(x, T(1)), T(127.5));
}

template <class T>
struct GeneratorOutput {
  CoeffTensors<T> coeffs;  // quantized planes (undefined for RGB generators)
  Tensor<T> rgb;           // N x 3 x H x W in [0, 255]
};

template <class T>
class Generator {
 public:
  // Amplitude scale between the Loc2 output and DCT amplitudes.
  static constexpr double kAmplitudeScale = 127.5;

  Generator(const GeneratorSpec& spec, Rng& rng) : spec_(spec) {
    spec_.validate();
    const std::size_t c = spec_.trunk_channels(), s = spec_.base_extent();
    fc_ = Linear<T>::make(params_, "trunk.fc", spec_.latent_dim, c * s * s, rng, 1.0);
    for (std::size_t i = 0; i < spec_.residual_blocks; ++i)
      blocks_.push_back(ResidualBlock<T>::make(params_, "trunk.block" + std::to_string(i), c, c, Resample::kUp, rng));
    out_ = Conv2d<T>::make(params_, "trunk.out", c, 3, 3, rng, 1.0);
    if (spec_.jpeg_layers) {
      static const char* names[3] = {"y", "cb", "cr"};
      for (int p = 0; p < 3; ++p) {
        loc1_[p] = LocallyConnected<T>::make(params_, std::string(names[p]) + ".loc1", 1, 1, 3, spec_.loc_channels, rng);
        loc2_[p] = LocallyConnected<T>::make(params_, std::string(names[p]) + ".loc2", 8, 8, spec_.loc_channels, 1, rng);
      }
      quant_ = scale_quant_matrix(spec_.quality);
    }
  }

  const GeneratorSpec& spec() const { return spec_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  const QuantizationMatrix& quant() const { return quant_; }

  // Trunk output in [-1, 1] (tanh), N x 3 x H x W.
  Tensor<T> trunk(const Tensor<T>& z) const {
    if (z.rank() != 2 || z.dim(1) != spec_.latent_dim)
      throw ShapeError("generator: latent must be N x " + std::to_string(spec_.latent_dim) + ", got " +
                       to_string(z.shape()));
    const std::size_t c = spec_.trunk_channels(), s = spec_.base_extent();
    Tensor<T> h = ops::reshape(fc_(z), Shape{z.dim(0), c, s, s});
    for (const auto& b : blocks_) h = b(h);
    return ops::tanh(out_(ops::relu(h)));
  }

  // Quantized coefficient planes for Y, Cb, Cr.
  CoeffTensors<T> coefficients(const Tensor<T>& z) const {
    if (!spec_.jpeg_layers) throw std::logic_error("generator has no JPEG layers");
    const Tensor<T> t = trunk(z);
    CoeffTensors<T> out;
    for (int p = 0; p < 3; ++p) {
      Tensor<T> h = loc1_[p](t);
      if (p > 0) h = chroma_subsample_layer(h, spec_.mode);
      h = ops::scale(loc2_[p](h), T(kAmplitudeScale));
      out[p] = quantization_layer(h, quant_.for_component(p));
    }
    return out;
  }

  GeneratorOutput<T> operator()(const Tensor<T>& z) const {
    GeneratorOutput<T> out;
    if (spec_.jpeg_layers) {
      out.coeffs = coefficients(z);
      out.rgb = decode(out.coeffs, quant_, spec_.mode);
    } else {
      out.rgb = denormalize_pixels(trunk(z));
    }
    return out;
  }

  std::vector<EncodedImage> encoded(const Tensor<T>& z) const {
    NoGradGuard no_grad;
    return to_encoded_images(coefficients(z), spec_.quality, spec_.mode);
  }

  std::size_t trunk_parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_.entries())
      if (name.rfind("trunk.", 0) == 0) n += t.numel();
    return n;
  }

 private:
  GeneratorSpec spec_;
  ParamSet<T> params_;
  Linear<T> fc_;
  std::vector<ResidualBlock<T>> blocks_;
  Conv2d<T> out_;
  std::array<LocallyConnected<T>, 3> loc1_, loc2_;
  QuantizationMatrix quant_;
};

// Frozen RGB generator whose trunk is copied from a pretrained baseline.
template <class T>
std::unique_ptr<Generator<T>> extract_anchor(const Generator<T>& pretrained) {
  GeneratorSpec s = pretrained.spec();
  s.jpeg_layers = false;
  Rng unused(0);
  auto anchor = std::make_unique<Generator<T>>(s, unused);
  for (auto& [name, t] : anchor->params().entries()) {
    if (!pretrained.params().contains(name))
      throw ShapeError("extract_anchor: pretrained generator lacks " + name);
    const Tensor<T>& src = pretrained.params().get(name);
    if (src.shape() != t.shape())
      throw ShapeError("extract_anchor: " + name + " has shape " + to_string(src.shape()) + ", anchor expects " +
                       to_string(t.shape()));
    std::copy(src.data().begin(), src.data().end(), t.mutable_data().begin());
  }
  anchor->params().set_trainable(false);
  return anchor;
}

template <class T>
class Discriminator {
 public:
  Discriminator(const DiscriminatorSpec& spec, Rng& rng) : spec_(spec) {
    spec_.validate();
    const std::size_t c = spec_.width(), s = spec_.final_extent();
    in_ = Conv2d<T>::make(params_, "d.in", 3, c, 3, rng, 1.0);
    for (std::size_t i = 0; i < spec_.residual_blocks; ++i)
      blocks_.push_back(ResidualBlock<T>::make(params_, "d.block" + std::to_string(i), c, c, Resample::kDown, rng));
    fc_ = Linear<T>::make(params_, "d.fc", c * s * s, 1, rng);
  }

  const DiscriminatorSpec& spec() const { return spec_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  std::size_t feature_dim() const { return spec_.width() * spec_.final_extent() * spec_.final_extent(); }

  // Penultimate activations, N x feature_dim. Input is normalized to [-1, 1].
  Tensor<T> features(const Tensor<T>& x) const {
    if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) != spec_.resolution || x.dim(3) != spec_.resolution)
      throw ShapeError("discriminator: expected N x 3 x " + std::to_string(spec_.resolution) + " x " +
                       std::to_string(spec_.resolution) + ", got " + to_string(x.shape()));
    Tensor<T> h = in_(x);
    for (const auto& b : blocks_) h = b(h);
    return ops::reshape(ops::relu(h), Shape{x.dim(0), feature_dim()});
  }

  // One critic value per sample, N x 1.
  Tensor<T> operator()(const Tensor<T>& x) const { return fc_(features(x)); }

 private:
  DiscriminatorSpec spec_;
  ParamSet<T> params_;
  Conv2d<T> in_;
  std::vector<ResidualBlock<T>> blocks_;
  Linear<T> fc_;
};

}  // namespace jpeggan
