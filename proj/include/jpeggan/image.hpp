#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "jpeggan/tensor.hpp"

namespace jpeggan {

// Interleaved H x W x 3 raster with real values in [0, 255].
struct Image {
  std::size_t width = 0, height = 0;
  std::vector<double> rgb;

  Image() = default;
  Image(std::size_t w, std::size_t h, double fill = 0.0) : width(w), height(h), rgb(w * h * 3, fill) {}

  double& at(std::size_t r, std::size_t c, std::size_t ch) { return rgb[(r * width + c) * 3 + ch]; }
  double at(std::size_t r, std::size_t c, std::size_t ch) const { return rgb[(r * width + c) * 3 + ch]; }

  bool operator==(const Image&) const = default;
};

// Stacks equally sized images into an N x 3 x H x W tensor, mapping
// [0, 255] through value * gain + offset.
template <class T>
Tensor<T> images_to_tensor(std::span<const Image> images, double gain = 1.0, double offset = 0.0) {
  if (images.empty()) throw std::invalid_argument("images_to_tensor: empty batch");
  const std::size_t h = images[0].height, w = images[0].width;
  std::vector<T> data(images.size() * 3 * h * w);
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& im = images[n];
    if (im.height != h || im.width != w) throw ShapeError("images_to_tensor: mixed image extents");
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t col = 0; col < w; ++col)
          data[((n * 3 + c) * h + r) * w + col] = static_cast<T>(im.at(r, col, c) * gain + offset);
  }
  return Tensor<T>(Shape{images.size(), 3, h, w}, std::move(data));
}

template <class T>
std::vector<Image> tensor_to_images(const Tensor<T>& t, double gain = 1.0, double offset = 0.0) {
  if (t.rank() != 4 || t.dim(1) != 3) throw ShapeError("tensor_to_images: expected N x 3 x H x W");
  const std::size_t n = t.dim(0), h = t.dim(2), w = t.dim(3);
  std::vector<Image> out(n, Image(w, h));
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t col = 0; col < w; ++col)
          out[b].at(r, col, c) = static_cast<double>(t[((b * 3 + c) * h + r) * w + col]) * gain + offset;
  return out;
}

}  // namespace jpeggan
