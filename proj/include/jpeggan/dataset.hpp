#pragma once

// Image sources (CIFAR-10 binary, PPM directories, seeded procedural images),
// PPM raster I/O and sample grids.

#include <algorithm>
#include <cmath>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "jpeggan/image.hpp"
#include "jpeggan/rng.hpp"

namespace jpeggan {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- PPM

inline Image read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path);
  auto token = [&]() {
    std::string t;
    char c;
    while (f.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(f, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(c);
    }
    return t;
  };
  if (token() != "P6") throw DataError(path + ": not a binary PPM (P6)");
  long w = 0, h = 0, maxval = 0;
  try {
    w = std::stol(token());
    h = std::stol(token());
    maxval = std::stol(token());
  } catch (const std::exception&) {
    throw DataError(path + ": malformed PPM header");
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) throw DataError(path + ": malformed PPM header");
  const std::size_t bytes_per = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> raw(static_cast<std::size_t>(w * h * 3) * bytes_per);
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(f.gcount()) != raw.size()) throw DataError(path + ": truncated PPM data");
  Image img(static_cast<std::size_t>(w), static_cast<std::size_t>(h));
  for (std::size_t i = 0; i < img.rgb.size(); ++i) {
    const double v = bytes_per == 2 ? raw[2 * i] * 256.0 + raw[2 * i + 1] : raw[i];
    img.rgb[i] = maxval == 255 ? v : v * 255.0 / static_cast<double>(maxval);
  }
  return img;
}

// Writes 8-bit P6, rounding and clamping to [0, 255].
inline void write_ppm(const Image& img, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<unsigned char> raw(img.rgb.size());
  for (std::size_t i = 0; i < raw.size(); ++i)
    raw[i] = static_cast<unsigned char>(std::clamp(std::lround(img.rgb[i]), 0L, 255L));
  f.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!f) throw std::runtime_error("write failed for " + path);
}

// ---------------------------------------------------------------- resizing

// Center crop to a square.
inline Image center_crop_square(const Image& img) {
  const std::size_t s = std::min(img.width, img.height);
  const std::size_t r0 = (img.height - s) / 2, c0 = (img.width - s) / 2;
  Image out(s, s);
  for (std::size_t r = 0; r < s; ++r)
    for (std::size_t c = 0; c < s; ++c)
      for (std::size_t ch = 0; ch < 3; ++ch) out.at(r, c, ch) = img.at(r0 + r, c0 + c, ch);
  return out;
}

// Area-weighted resampling (exact box filter with fractional coverage).
inline Image resize_area(const Image& img, std::size_t w, std::size_t h) {
  if (img.width == w && img.height == h) return img;
  auto weights = [](std::size_t src, std::size_t dst) {
    // For each output index, (source index, weight) pairs summing to 1.
    std::vector<std::vector<std::pair<std::size_t, double>>> out(dst);
    const double scale = static_cast<double>(src) / static_cast<double>(dst);
    for (std::size_t o = 0; o < dst; ++o) {
      const double a = o * scale, b = (o + 1) * scale;
      for (auto i = static_cast<std::size_t>(std::floor(a)); i < src && static_cast<double>(i) < b; ++i) {
        const double cover = std::min(b, i + 1.0) - std::max(a, static_cast<double>(i));
        if (cover > 0) out[o].emplace_back(i, cover / scale);
      }
    }
    return out;
  };
  const auto wy = weights(img.height, h), wx = weights(img.width, w);
  Image out(w, h);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      for (std::size_t ch = 0; ch < 3; ++ch) {
        double acc = 0;
        for (const auto& [sr, a] : wy[r])
          for (const auto& [sc, b] : wx[c]) acc += a * b * img.at(sr, sc, ch);
        out.at(r, c, ch) = std::clamp(acc, 0.0, 255.0);
      }
  return out;
}

inline Image fit_resolution(const Image& img, std::size_t resolution) {
  if (img.width == resolution && img.height == resolution) return img;
  return resize_area(center_crop_square(img), resolution, resolution);
}

// ---------------------------------------------------------------- sources

enum class SourceKind { kCifarBinary, kPpmDirectory, kSynthetic };

inline SourceKind parse_source_kind(const std::string& s) {
  if (s == "cifar" || s == "cifar-binary") return SourceKind::kCifarBinary;
  if (s == "ppm" || s == "ppm-directory") return SourceKind::kPpmDirectory;
  if (s == "synthetic" || s == "synthetic-generator") return SourceKind::kSynthetic;
  throw std::invalid_argument("unknown dataset kind '" + s + "' (expected cifar, ppm or synthetic)");
}

struct DatasetSource {
  SourceKind kind = SourceKind::kSynthetic;
  std::string path;  // file or directory for cifar/ppm
  std::size_t resolution = 32;
};

// One CIFAR-10 record: label byte, then 1024 R, 1024 G, 1024 B bytes.
inline constexpr std::size_t kCifarRecordBytes = 1 + 3 * 32 * 32;

inline Image cifar_record_to_image(const unsigned char* rec) {
  Image img(32, 32);
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t r = 0; r < 32; ++r)
      for (std::size_t c = 0; c < 32; ++c) img.at(r, c, ch) = rec[1 + ch * 1024 + r * 32 + c];
  return img;
}

// Procedural image: two-color linear gradient, one to three filled shapes
// (discs or axis-aligned rectangles), mild per-pixel noise.
inline Image synthetic_image(std::uint64_t seed, std::size_t index, std::size_t resolution) {
  Rng rng = Rng::stream(seed ^ (index * 0x9e3779b97f4a7c15ull), "synthetic");
  const double n = static_cast<double>(resolution);
  Image img(resolution, resolution);
  double c0[3], c1[3];
  for (int k = 0; k < 3; ++k) {
    c0[k] = rng.uniform(20, 235);
    c1[k] = rng.uniform(20, 235);
  }
  const double angle = rng.uniform(0, 2 * std::numbers::pi);
  const double dx = std::cos(angle), dy = std::sin(angle);
  for (std::size_t r = 0; r < resolution; ++r)
    for (std::size_t c = 0; c < resolution; ++c) {
      const double t = 0.5 + ((c + 0.5) / n - 0.5) * dx + ((r + 0.5) / n - 0.5) * dy;
      const double u = std::clamp(t, 0.0, 1.0);
      for (int k = 0; k < 3; ++k) img.at(r, c, k) = c0[k] * (1 - u) + c1[k] * u;
    }
  const std::size_t shapes = 1 + rng.below(3);
  for (std::size_t s = 0; s < shapes; ++s) {
    double color[3];
    for (auto& v : color) v = rng.uniform(0, 255);
    const bool disc = rng.uniform() < 0.5;
    const double cx = rng.uniform(0.2, 0.8) * n, cy = rng.uniform(0.2, 0.8) * n;
    const double a = rng.uniform(0.1, 0.3) * n, b = rng.uniform(0.1, 0.3) * n;
    for (std::size_t r = 0; r < resolution; ++r)
      for (std::size_t c = 0; c < resolution; ++c) {
        const double px = c + 0.5 - cx, py = r + 0.5 - cy;
        const bool inside = disc ? px * px + py * py <= a * a : std::abs(px) <= a && std::abs(py) <= b;
        if (inside)
          for (int k = 0; k < 3; ++k) img.at(r, c, k) = color[k];
      }
  }
  for (auto& v : img.rgb) v = std::clamp(v + rng.uniform(-4, 4), 0.0, 255.0);
  return img;
}

inline std::vector<std::filesystem::path> sorted_files(const std::filesystem::path& dir, const std::string& ext) {
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

// The first `count` images of the source in its canonical order (file order
// for CIFAR, sorted file names for PPM, index order for synthetic), fitted to
// the source resolution. The seed selects the synthetic population.
inline std::vector<Image> load_dataset(const DatasetSource& src, std::size_t count, std::uint64_t seed) {
  std::vector<Image> out;
  out.reserve(count);
  switch (src.kind) {
    case SourceKind::kSynthetic:
      for (std::size_t i = 0; i < count; ++i) out.push_back(synthetic_image(seed, i, src.resolution));
      return out;
    case SourceKind::kCifarBinary: {
      std::vector<std::filesystem::path> files;
      if (std::filesystem::is_directory(src.path))
        files = sorted_files(src.path, ".bin");
      else if (std::filesystem::is_regular_file(src.path))
        files = {src.path};
      else
        throw DataError("dataset path " + src.path + " does not exist");
      std::vector<unsigned char> rec(kCifarRecordBytes);
      for (const auto& p : files) {
        std::ifstream f(p, std::ios::binary);
        if (!f) throw DataError("cannot open " + p.string());
        while (out.size() < count) {
          f.read(reinterpret_cast<char*>(rec.data()), static_cast<std::streamsize>(rec.size()));
          if (f.gcount() == 0) break;
          if (static_cast<std::size_t>(f.gcount()) != rec.size())
            throw DataError(p.string() + ": malformed record (file size is not a multiple of 3073 bytes)");
          if (rec[0] > 9) throw DataError(p.string() + ": malformed record (label byte " + std::to_string(rec[0]) + ")");
          out.push_back(fit_resolution(cifar_record_to_image(rec.data()), src.resolution));
        }
        if (out.size() == count) break;
      }
      break;
    }
    case SourceKind::kPpmDirectory: {
      if (!std::filesystem::is_directory(src.path)) throw DataError("dataset path " + src.path + " is not a directory");
      for (const auto& p : sorted_files(src.path, ".ppm")) {
        if (out.size() == count) break;
        out.push_back(fit_resolution(read_ppm(p.string()), src.resolution));
      }
      break;
    }
  }
  if (out.size() < count)
    throw DataError("dataset holds " + std::to_string(out.size()) + " images, " + std::to_string(count) + " requested");
  return out;
}

// ---------------------------------------------------------------- sample grid

inline constexpr std::size_t kGridSeparator = 2;

// Tiles equally sized images row-major with separators of background value 255.
inline Image sample_grid(const std::vector<Image>& images, std::size_t cols) {
  if (images.empty()) throw std::invalid_argument("sample grid: no images");
  if (cols == 0) throw std::invalid_argument("sample grid: zero columns");
  cols = std::min(cols, images.size());
  const std::size_t rows = (images.size() + cols - 1) / cols, w = images[0].width, h = images[0].height;
  const std::size_t sep = kGridSeparator;
  Image grid(cols * w + (cols + 1) * sep, rows * h + (rows + 1) * sep, 255.0);
  for (std::size_t k = 0; k < images.size(); ++k) {
    if (images[k].width != w || images[k].height != h) throw ShapeError("sample grid: mixed image extents");
    const std::size_t r0 = sep + (k / cols) * (h + sep), c0 = sep + (k % cols) * (w + sep);
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c)
        for (std::size_t ch = 0; ch < 3; ++ch) grid.at(r0 + r, c0 + c, ch) = images[k].at(r, c, ch);
  }
  return grid;
}

inline void write_sample_grid(const std::vector<Image>& images, std::size_t cols, const std::string& path) {
  write_ppm(sample_grid(images, cols), path);
}

// Inverse of sample_grid for a known tile extent.
inline Image grid_tile(const Image& grid, std::size_t index, std::size_t cols, std::size_t w, std::size_t h) {
  const std::size_t sep = kGridSeparator;
  const std::size_t r0 = sep + (index / cols) * (h + sep), c0 = sep + (index % cols) * (w + sep);
  Image out(w, h);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      for (std::size_t ch = 0; ch < 3; ++ch) out.at(r, c, ch) = grid.at(r0 + r, c0 + c, ch);
  return out;
}

}  // namespace jpeggan
