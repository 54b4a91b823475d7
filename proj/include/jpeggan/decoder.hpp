#pragma once

// The transform between generator and discriminator (dequantize, inverse
// DCT, chroma upsampling, YCbCr -> RGB, clip) as a differentiable tensor
// program, plus the reference encoder used for real data and oracles.

#include <array>
#include <span>
#include <vector>

#include "jpeggan/image.hpp"
#include "jpeggan/jpeg_kernels.hpp"
#include "jpeggan/layers.hpp"
#include "jpeggan/ops.hpp"

namespace jpeggan {

// Coefficient planes of a batch, one N x 1 x Hc x Wc tensor per component.
template <class T>
using CoeffTensors = std::array<Tensor<T>, 3>;

namespace detail {

template <class T>
Tensor<T> idct_blocks(const Tensor<T>& amplitudes) {
  static const std::vector<double> k64 = idct_matrix();
  Tensor<T> k(Shape{64, 64}, std::vector<T>(k64.begin(), k64.end()));
  Tensor<T> rows = ops::blocks_to_rows(amplitudes, 8, 8);
  return ops::rows_to_blocks(ops::matmul(rows, k), amplitudes.shape(), 8, 8);
}

}  // namespace detail

// Inverse of the encoder up to (and including) chroma upsampling:
// returns N x 3 x H x W YCbCr with each component limited to [0, 255].
template <class T>
Tensor<T> decode_ycc(const CoeffTensors<T>& coeffs, const QuantizationMatrix& q, SubsamplingMode mode) {
  const Shape& ys = coeffs[0].shape();
  if (ys.size() != 4 || ys[1] != 1 || ys[2] % 8 != 0 || ys[3] % 8 != 0)
    throw ShapeError("decode: luma plane must be N x 1 x 8a x 8b, got " + to_string(ys));
  const std::size_t fh = factor_h(mode), fw = factor_w(mode);
  const Shape cs{ys[0], 1, ys[2] / fh, ys[3] / fw};
  if (ys[2] % (8 * fh) != 0 || ys[3] % (8 * fw) != 0)
    throw ShapeError("decode: luma extent is not a whole number of MCUs for " + to_string(mode));
  std::vector<Tensor<T>> comps;
  for (int c = 0; c < 3; ++c) {
    if (coeffs[c].shape() != (c == 0 ? ys : cs))
      throw ShapeError("decode: component " + std::to_string(c) + " has shape " + to_string(coeffs[c].shape()));
    const auto& table = q.for_component(c);
    Tensor<T> qt(coeffs[c].shape(), tile_table<T>(coeffs[c].shape(), table, false));
    Tensor<T> plane = detail::idct_blocks(ops::mul(coeffs[c], qt));
    plane = ops::clamp(ops::add_scalar(plane, T(128)), T(0), T(255));
    if (c > 0 && mode != SubsamplingMode::k444) plane = ops::upsample_nearest(plane, fh, fw);
    comps.push_back(plane);
  }
  return ops::concat(comps, 1);
}

// Full-range YCbCr -> RGB on N x 3 x H x W, as a fixed 1x1 convolution.
template <class T>
Tensor<T> ycc_to_rgb(const Tensor<T>& ycc) {
  const auto& m = YccToRgb::get().m;
  Tensor<T> w(Shape{3, 3, 1, 1}, std::vector<T>(m.begin(), m.end()));
  std::vector<T> b(3);
  for (int i = 0; i < 3; ++i) b[i] = static_cast<T>(-128.0 * (m[i * 3 + 1] + m[i * 3 + 2]));
  return ops::conv2d(ycc, w, Tensor<T>(Shape{3}, b), 1, 0);
}

// Decoded RGB in [0, 255], N x 3 x H x W. Differentiable in the coefficient
// tensors except where a clip saturates.
template <class T>
Tensor<T> decode(const CoeffTensors<T>& coeffs, const QuantizationMatrix& q, SubsamplingMode mode) {
  return ops::clamp(ycc_to_rgb(decode_ycc(coeffs, q, mode)), T(0), T(255));
}

// Packs encoded images (same extent, quality and mode) into coefficient tensors.
template <class T>
CoeffTensors<T> coefficient_tensors(std::span<const EncodedImage> batch) {
  if (batch.empty()) throw std::invalid_argument("coefficient_tensors: empty batch");
  const EncodedImage& first = batch[0];
  CoeffTensors<T> out;
  for (int c = 0; c < 3; ++c) {
    const std::size_t rows = first.planes[c].rows(), cols = first.planes[c].cols();
    std::vector<T> data;
    data.reserve(batch.size() * rows * cols);
    for (const auto& e : batch) {
      if (e.planes[c].rows() != rows || e.planes[c].cols() != cols || e.mode != first.mode ||
          e.quality != first.quality)
        throw ShapeError("coefficient_tensors: images differ in layout");
      for (int v : e.planes[c].coeffs) data.push_back(static_cast<T>(v));
    }
    out[c] = Tensor<T>(Shape{batch.size(), 1, rows, cols}, std::move(data));
  }
  return out;
}

// Unpacks integer-valued coefficient tensors into encoded images.
template <class T>
std::vector<EncodedImage> to_encoded_images(const CoeffTensors<T>& coeffs, int quality, SubsamplingMode mode) {
  const std::size_t n = coeffs[0].dim(0);
  std::vector<EncodedImage> out(n);
  for (std::size_t b = 0; b < n; ++b) {
    EncodedImage& e = out[b];
    e.quality = quality;
    e.mode = mode;
    e.height = coeffs[0].dim(2);
    e.width = coeffs[0].dim(3);
    for (int c = 0; c < 3; ++c) {
      const std::size_t rows = coeffs[c].dim(2), cols = coeffs[c].dim(3);
      CoeffPlane p(rows / 8, cols / 8);
      for (std::size_t i = 0; i < rows * cols; ++i) {
        const double v = static_cast<double>(coeffs[c][b * rows * cols + i]);
        if (v != std::round(v)) throw CodecError("coefficient tensor holds a non-integer value");
        p.coeffs[i] = static_cast<int>(v);
      }
      e.planes[c] = std::move(p);
    }
    e.validate();
  }
  return out;
}

// Decodes images of identical layout as one batch (64-bit path), each
// cropped to its displayed extent.
inline std::vector<Image> decode_images(std::span<const EncodedImage> batch) {
  if (batch.empty()) return {};
  for (const auto& e : batch) e.validate();
  NoGradGuard no_grad;
  const EncodedImage& first = batch[0];
  Tensor<double> rgb = decode(coefficient_tensors<double>(batch), first.quant(), first.mode);
  std::vector<Image> full = tensor_to_images(rgb);
  for (std::size_t k = 0; k < full.size(); ++k) {
    const EncodedImage& e = batch[k];
    if (full[k].width == e.width && full[k].height == e.height) continue;
    Image out(e.width, e.height);
    for (std::size_t r = 0; r < e.height; ++r)
      for (std::size_t c = 0; c < e.width; ++c)
        for (std::size_t ch = 0; ch < 3; ++ch) out.at(r, c, ch) = full[k].at(r, c, ch);
    full[k] = std::move(out);
  }
  return full;
}

inline Image decode_image(const EncodedImage& enc) {
  return decode_images(std::span<const EncodedImage>(&enc, 1))[0];
}

// Reference encoder: color conversion, edge padding to whole MCUs, chroma
// subsampling, level shift, 8x8 DCT and quantization.
inline EncodedImage encode(const Image& img, int quality, SubsamplingMode mode) {
  validate_quality(quality);
  if (img.width == 0 || img.height == 0 || img.rgb.size() != img.width * img.height * 3)
    throw std::invalid_argument("encode: malformed image");
  std::array<Plane, 3> ycc{Plane(img.height, img.width), Plane(img.height, img.width), Plane(img.height, img.width)};
  for (std::size_t r = 0; r < img.height; ++r)
    for (std::size_t c = 0; c < img.width; ++c) {
      const Ycc p = rgb_to_ycbcr({img.at(r, c, 0), img.at(r, c, 1), img.at(r, c, 2)});
      ycc[0](r, c) = p.y;
      ycc[1](r, c) = p.cb;
      ycc[2](r, c) = p.cr;
    }
  EncodedImage enc;
  enc.width = img.width;
  enc.height = img.height;
  enc.quality = quality;
  enc.mode = mode;
  const QuantizationMatrix q = scale_quant_matrix(quality);
  for (int comp = 0; comp < 3; ++comp) {
    Plane p = pad_edge(ycc[comp], mcu_height(mode), mcu_width(mode));
    if (comp > 0) p = subsample(p, mode);
    CoeffPlane cp(p.height / 8, p.width / 8);
    for (std::size_t by = 0; by < cp.blocks_h; ++by)
      for (std::size_t bx = 0; bx < cp.blocks_w; ++bx) {
        Block b{};
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x) b[y * 8 + x] = p(by * 8 + y, bx * 8 + x) - 128.0;
        cp.set_block(by, bx, quantize(dct8x8(b), q.for_component(comp)));
      }
    enc.planes[comp] = std::move(cp);
  }
  return enc;
}

}  // namespace jpeggan
