#pragma once

// Baseline JPEG arithmetic: color conversion, chroma resampling, the 8x8
// orthonormal DCT, quality-scaled quantization tables and zig-zag order.

#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace jpeggan {

class CodecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Block = std::array<double, 64>;  // row-major, [row * 8 + col]
using IntBlock = std::array<int, 64>;

// ---------------------------------------------------------------- subsampling

enum class SubsamplingMode { k444, k422, k420 };

inline constexpr std::array<SubsamplingMode, 3> kAllModes{SubsamplingMode::k444, SubsamplingMode::k422,
                                                          SubsamplingMode::k420};

// Chroma reduction factor along each axis.
inline std::size_t factor_h(SubsamplingMode m) { return m == SubsamplingMode::k420 ? 2 : 1; }
inline std::size_t factor_w(SubsamplingMode m) { return m == SubsamplingMode::k444 ? 1 : 2; }

inline std::string to_string(SubsamplingMode m) {
  switch (m) {
    case SubsamplingMode::k444: return "4:4:4";
    case SubsamplingMode::k422: return "4:2:2";
    case SubsamplingMode::k420: return "4:2:0";
  }
  return "?";
}

inline SubsamplingMode parse_mode(std::string_view s) {
  if (s == "4:4:4" || s == "444") return SubsamplingMode::k444;
  if (s == "4:2:2" || s == "422") return SubsamplingMode::k422;
  if (s == "4:2:0" || s == "420") return SubsamplingMode::k420;
  throw std::invalid_argument("unknown subsampling mode '" + std::string(s) + "'");
}

// ---------------------------------------------------------------- planes

struct Plane {
  std::size_t height = 0, width = 0;
  std::vector<double> data;

  Plane() = default;
  Plane(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), data(h * w, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * width + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * width + c]; }
};

inline Plane subsample(const Plane& p, SubsamplingMode mode) {
  const std::size_t fh = factor_h(mode), fw = factor_w(mode);
  if (p.height % fh != 0 || p.width % fw != 0)
    throw std::invalid_argument("subsample: odd extent " + std::to_string(p.height) + "x" + std::to_string(p.width) +
                                " for mode " + to_string(mode));
  Plane out(p.height / fh, p.width / fw);
  const double inv = 1.0 / static_cast<double>(fh * fw);
  for (std::size_t r = 0; r < out.height; ++r)
    for (std::size_t c = 0; c < out.width; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < fh; ++i)
        for (std::size_t j = 0; j < fw; ++j) acc += p(r * fh + i, c * fw + j);
      out(r, c) = acc * inv;
    }
  return out;
}

// Nearest-neighbour replication back over each source tile.
inline Plane upsample(const Plane& p, SubsamplingMode mode, std::size_t height, std::size_t width) {
  const std::size_t fh = factor_h(mode), fw = factor_w(mode);
  if (p.height * fh != height || p.width * fw != width)
    throw std::invalid_argument("upsample: target extent inconsistent with mode");
  Plane out(height, width);
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < width; ++c) out(r, c) = p(r / fh, c / fw);
  return out;
}

// Edge replication up to the next multiple of (mh, mw).
inline Plane pad_edge(const Plane& p, std::size_t mh, std::size_t mw) {
  const std::size_t h = (p.height + mh - 1) / mh * mh, w = (p.width + mw - 1) / mw * mw;
  Plane out(h, w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) out(r, c) = p(std::min(r, p.height - 1), std::min(c, p.width - 1));
  return out;
}

// ---------------------------------------------------------------- color

struct Ycc {
  double y, cb, cr;
};
struct Rgb {
  double r, g, b;
};

// Full-range (JFIF) conversion.
inline Ycc rgb_to_ycbcr(Rgb p) {
  if (!(p.r >= 0 && p.r <= 255 && p.g >= 0 && p.g <= 255 && p.b >= 0 && p.b <= 255))
    throw std::invalid_argument("rgb_to_ycbcr: value outside [0,255]");
  return {0.299 * p.r + 0.587 * p.g + 0.114 * p.b, 128.0 - 0.168736 * p.r - 0.331264 * p.g + 0.5 * p.b,
          128.0 + 0.5 * p.r - 0.418688 * p.g - 0.081312 * p.b};
}

// Exact inverse of the forward matrix above (not the rounded 1.402/0.344/... constants).
struct YccToRgb {
  std::array<double, 9> m;  // row-major, applied to (y, cb-128, cr-128)
  static const YccToRgb& get() {
    static const YccToRgb inst = [] {
      const double a[9] = {0.299, 0.587, 0.114, -0.168736, -0.331264, 0.5, 0.5, -0.418688, -0.081312};
      const double det = a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6]) +
                         a[2] * (a[3] * a[7] - a[4] * a[6]);
      YccToRgb r{};
      r.m = {(a[4] * a[8] - a[5] * a[7]) / det, (a[2] * a[7] - a[1] * a[8]) / det, (a[1] * a[5] - a[2] * a[4]) / det,
             (a[5] * a[6] - a[3] * a[8]) / det, (a[0] * a[8] - a[2] * a[6]) / det, (a[2] * a[3] - a[0] * a[5]) / det,
             (a[3] * a[7] - a[4] * a[6]) / det, (a[1] * a[6] - a[0] * a[7]) / det, (a[0] * a[4] - a[1] * a[3]) / det};
      return r;
    }();
    return inst;
  }
};

inline Rgb ycbcr_to_rgb(Ycc p) {
  const auto& m = YccToRgb::get().m;
  const double cb = p.cb - 128.0, cr = p.cr - 128.0;
  return {m[0] * p.y + m[1] * cb + m[2] * cr, m[3] * p.y + m[4] * cb + m[5] * cr,
          m[6] * p.y + m[7] * cb + m[8] * cr};
}

// ---------------------------------------------------------------- DCT

// C[u][x] = a(u) cos((2x+1) u pi / 16), a(0) = sqrt(1/8), a(u>0) = sqrt(2/8).
inline const std::array<double, 64>& dct_basis() {
  static const std::array<double, 64> c = [] {
    std::array<double, 64> t{};
    for (int u = 0; u < 8; ++u)
      for (int x = 0; x < 8; ++x) {
        const double a = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
        t[u * 8 + x] = a * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
      }
    return t;
  }();
  return c;
}

namespace detail {
inline void require_finite(const Block& b, const char* what) {
  for (double v : b)
    if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + ": non-finite input");
}
}  // namespace detail

// Orthonormal 2-D DCT-II of a level-shifted block.
inline Block dct8x8(const Block& b) {
  detail::require_finite(b, "dct8x8");
  const auto& c = dct_basis();
  Block tmp{}, out{};
  for (int y = 0; y < 8; ++y)  // rows: transform along x
    for (int v = 0; v < 8; ++v) {
      double acc = 0.0;
      for (int x = 0; x < 8; ++x) acc += c[v * 8 + x] * b[y * 8 + x];
      tmp[y * 8 + v] = acc;
    }
  for (int u = 0; u < 8; ++u)
    for (int v = 0; v < 8; ++v) {
      double acc = 0.0;
      for (int y = 0; y < 8; ++y) acc += c[u * 8 + y] * tmp[y * 8 + v];
      out[u * 8 + v] = acc;
    }
  return out;
}

inline Block idct8x8(const Block& a) {
  detail::require_finite(a, "idct8x8");
  const auto& c = dct_basis();
  Block tmp{}, out{};
  for (int u = 0; u < 8; ++u)
    for (int x = 0; x < 8; ++x) {
      double acc = 0.0;
      for (int v = 0; v < 8; ++v) acc += c[v * 8 + x] * a[u * 8 + v];
      tmp[u * 8 + x] = acc;
    }
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      double acc = 0.0;
      for (int u = 0; u < 8; ++u) acc += c[u * 8 + y] * tmp[u * 8 + x];
      out[y * 8 + x] = acc;
    }
  return out;
}

// 64 x 64 matrix K with pixels_row = amplitudes_row * K (both in row-major
// block order), i.e. K[(u,v)][(y,x)] = C[u][y] C[v][x].
inline std::vector<double> idct_matrix() {
  const auto& c = dct_basis();
  std::vector<double> k(64 * 64);
  for (int u = 0; u < 8; ++u)
    for (int v = 0; v < 8; ++v)
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) k[(u * 8 + v) * 64 + y * 8 + x] = c[u * 8 + y] * c[v * 8 + x];
  return k;
}

// ---------------------------------------------------------------- quantization

inline constexpr std::array<int, 64> kLumaQ50{
    16, 11, 10, 16, 24,  40,  51,  61,   //
    12, 12, 14, 19, 26,  58,  60,  55,   //
    14, 13, 16, 24, 40,  57,  69,  56,   //
    14, 17, 22, 29, 51,  87,  80,  62,   //
    18, 22, 37, 56, 68,  109, 103, 77,   //
    24, 35, 55, 64, 81,  104, 113, 92,   //
    49, 64, 78, 87, 103, 121, 120, 101,  //
    72, 92, 95, 98, 112, 100, 103, 99};

inline constexpr std::array<int, 64> kChromaQ50{
    17, 18, 24, 47, 99, 99, 99, 99,  //
    18, 21, 26, 66, 99, 99, 99, 99,  //
    24, 26, 56, 99, 99, 99, 99, 99,  //
    47, 66, 99, 99, 99, 99, 99, 99,  //
    99, 99, 99, 99, 99, 99, 99, 99,  //
    99, 99, 99, 99, 99, 99, 99, 99,  //
    99, 99, 99, 99, 99, 99, 99, 99,  //
    99, 99, 99, 99, 99, 99, 99, 99};

struct QuantizationMatrix {
  std::array<int, 64> luma{};
  std::array<int, 64> chroma{};
  int quality = 50;

  const std::array<int, 64>& for_component(int component) const { return component == 0 ? luma : chroma; }
  bool operator==(const QuantizationMatrix&) const = default;
};

inline void validate_quality(int n) {
  if (n <= 0 || n > 100) throw std::invalid_argument("quality factor " + std::to_string(n) + " outside (0, 100]");
}

inline std::array<int, 64> scale_table(const std::array<int, 64>& base, int n) {
  validate_quality(n);
  std::array<int, 64> out{};
  for (int i = 0; i < 64; ++i) {
    if (n >= 50) {
      out[i] = std::max(1, static_cast<int>(std::floor((100.0 - n) / 50.0 * base[i] + 0.5)));
    } else {
      out[i] = static_cast<int>(std::floor(50.0 / n * base[i] + 0.5));
    }
  }
  return out;
}

inline QuantizationMatrix scale_quant_matrix(int n) {
  return QuantizationMatrix{scale_table(kLumaQ50, n), scale_table(kChromaQ50, n), n};
}

// round(a / Q), half away from zero.
inline IntBlock quantize(const Block& a, const std::array<int, 64>& q) {
  detail::require_finite(a, "quantize");
  IntBlock c{};
  for (int i = 0; i < 64; ++i) c[i] = static_cast<int>(std::round(a[i] / q[i]));
  return c;
}

inline Block dequantize(const IntBlock& c, const std::array<int, 64>& q) {
  Block a{};
  for (int i = 0; i < 64; ++i) a[i] = static_cast<double>(c[i]) * q[i];
  return a;
}

// Largest coefficient magnitude a block position may carry: keeps
// |c * Q| <= 1024 + 8Q and stays inside the baseline 10-bit AC category.
inline int coefficient_limit(int q) { return std::min(1023, static_cast<int>(std::lround(1024.0 / q))); }

// ---------------------------------------------------------------- zig-zag

// kZigzag[k] = natural (row-major) index of the k-th coefficient in scan order.
inline const std::array<int, 64>& zigzag_order() {
  static const std::array<int, 64> order = [] {
    std::array<int, 64> z{};
    int k = 0;
    for (int s = 0; s < 15; ++s) {
      // odd diagonals run top-right to bottom-left, even ones the reverse
      const int lo = std::max(0, s - 7), hi = std::min(7, s);
      for (int i = lo; i <= hi; ++i) {
        const int row = (s % 2 == 0) ? s - i : i;
        z[k++] = row * 8 + (s - row);
      }
    }
    return z;
  }();
  return order;
}

template <class V>
std::array<V, 64> zigzag(const std::array<V, 64>& block) {
  std::array<V, 64> out{};
  const auto& z = zigzag_order();
  for (int k = 0; k < 64; ++k) out[k] = block[z[k]];
  return out;
}

template <class V>
std::array<V, 64> inverse_zigzag(std::span<const V> seq) {
  if (seq.size() != 64) throw std::invalid_argument("inverse_zigzag: expected 64 values");
  std::array<V, 64> out{};
  const auto& z = zigzag_order();
  for (int k = 0; k < 64; ++k) out[z[k]] = seq[k];
  return out;
}

// ---------------------------------------------------------------- encoded image

// Integer coefficient grid of one component. Blocks are tiled spatially:
// coefficient (u, v) of block (by, bx) sits at row by*8+u, column bx*8+v.
struct CoeffPlane {
  std::size_t blocks_h = 0, blocks_w = 0;
  std::vector<int> coeffs;

  CoeffPlane() = default;
  CoeffPlane(std::size_t bh, std::size_t bw) : blocks_h(bh), blocks_w(bw), coeffs(bh * bw * 64, 0) {}

  std::size_t rows() const { return blocks_h * 8; }
  std::size_t cols() const { return blocks_w * 8; }

  IntBlock block(std::size_t by, std::size_t bx) const {
    IntBlock b{};
    for (int u = 0; u < 8; ++u)
      for (int v = 0; v < 8; ++v) b[u * 8 + v] = coeffs[(by * 8 + u) * cols() + bx * 8 + v];
    return b;
  }
  void set_block(std::size_t by, std::size_t bx, const IntBlock& b) {
    for (int u = 0; u < 8; ++u)
      for (int v = 0; v < 8; ++v) coeffs[(by * 8 + u) * cols() + bx * 8 + v] = b[u * 8 + v];
  }
  bool operator==(const CoeffPlane&) const = default;
};

// Minimum coded unit extent in luma pixels.
inline std::size_t mcu_height(SubsamplingMode m) { return 8 * factor_h(m); }
inline std::size_t mcu_width(SubsamplingMode m) { return 8 * factor_w(m); }

struct EncodedImage {
  std::size_t width = 0, height = 0;  // displayed extent; planes cover the MCU-padded extent
  int quality = 50;
  SubsamplingMode mode = SubsamplingMode::k444;
  std::array<CoeffPlane, 3> planes;  // Y, Cb, Cr

  std::size_t padded_width() const { return (width + mcu_width(mode) - 1) / mcu_width(mode) * mcu_width(mode); }
  std::size_t padded_height() const { return (height + mcu_height(mode) - 1) / mcu_height(mode) * mcu_height(mode); }
  QuantizationMatrix quant() const { return scale_quant_matrix(quality); }

  bool operator==(const EncodedImage&) const = default;

  // Throws CodecError describing the first violated invariant.
  void validate() const {
    validate_quality(quality);
    if (width == 0 || height == 0) throw CodecError("encoded image has zero extent");
    const std::size_t ph = padded_height(), pw = padded_width();
    const std::size_t ch = ph / factor_h(mode), cw = pw / factor_w(mode);
    const std::array<std::pair<std::size_t, std::size_t>, 3> want{{{ph, pw}, {ch, cw}, {ch, cw}}};
    const QuantizationMatrix q = quant();
    for (int c = 0; c < 3; ++c) {
      const CoeffPlane& p = planes[c];
      if (p.rows() != want[c].first || p.cols() != want[c].second || p.coeffs.size() != p.rows() * p.cols())
        throw CodecError("component " + std::to_string(c) + " grid does not match mode " + to_string(mode));
      const auto& table = q.for_component(c);
      for (std::size_t r = 0; r < p.rows(); ++r)
        for (std::size_t col = 0; col < p.cols(); ++col) {
          const long qv = table[(r % 8) * 8 + col % 8];
          const long v = p.coeffs[r * p.cols() + col];
          if (std::abs(v * qv) > 1024 + 8 * qv)
            throw CodecError("coefficient " + std::to_string(v) + " out of range at component " +
                             std::to_string(c) + " row " + std::to_string(r) + " col " + std::to_string(col));
        }
    }
  }
};

}  // namespace jpeggan
