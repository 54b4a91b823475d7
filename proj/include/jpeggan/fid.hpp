#pragma once

// Frechet distance between Gaussian fits of feature populations, feature
// extractors, and the compression sweep over quality factors and modes.

#include <Eigen/Dense>

#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "jpeggan/decoder.hpp"
#include "jpeggan/image.hpp"
#include "jpeggan/networks.hpp"
#include "jpeggan/params_io.hpp"

namespace jpeggan {

struct FidStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  std::size_t count = 0;

  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
};

// Streaming mean / scatter accumulation; shards merge exactly (Chan et al.).
class StatsAccumulator {
 public:
  explicit StatsAccumulator(std::size_t d) : mean_(Eigen::VectorXd::Zero(d)), scatter_(Eigen::MatrixXd::Zero(d, d)) {}

  void add(std::span<const double> f) {
    if (f.size() != static_cast<std::size_t>(mean_.size()))
      throw ShapeError("feature dimension " + std::to_string(f.size()) + ", expected " + std::to_string(mean_.size()));
    const Eigen::Map<const Eigen::VectorXd> x(f.data(), static_cast<Eigen::Index>(f.size()));
    ++n_;
    const Eigen::VectorXd delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    scatter_.noalias() += delta * (x - mean_).transpose();
  }

  void merge(const StatsAccumulator& o) {
    if (o.mean_.size() != mean_.size()) throw ShapeError("cannot merge statistics of different dimension");
    if (o.n_ == 0) return;
    const double na = static_cast<double>(n_), nb = static_cast<double>(o.n_), n = na + nb;
    const Eigen::VectorXd delta = o.mean_ - mean_;
    scatter_ += o.scatter_ + delta * delta.transpose() * (na * nb / n);
    mean_ += delta * (nb / n);
    n_ += o.n_;
  }

  std::size_t count() const { return n_; }

  FidStats stats() const {
    if (n_ < 2) throw std::invalid_argument("statistics need at least 2 samples, got " + std::to_string(n_));
    FidStats s;
    s.mean = mean_;
    s.cov = scatter_ / static_cast<double>(n_ - 1);
    s.cov = 0.5 * (s.cov + s.cov.transpose());
    s.count = n_;
    return s;
  }

 private:
  std::size_t n_ = 0;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd scatter_;
};

inline FidStats accumulate_stats(const std::vector<std::vector<double>>& features) {
  if (features.size() < 2) throw std::invalid_argument("statistics need at least 2 samples");
  StatsAccumulator acc(features[0].size());
  for (const auto& f : features) acc.add(f);
  return acc.stats();
}

namespace detail {

// Symmetric eigendecomposition; eigenvalues below -tol (relative to the
// largest magnitude, at least 1) are an error, smaller negatives clamp to 0.
inline Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> psd_eigen(const Eigen::MatrixXd& m, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  if (es.info() != Eigen::Success) throw NumericalError(std::string("eigendecomposition failed for ") + what);
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  if (es.eigenvalues().minCoeff() < -1e-6 * scale)
    throw NumericalError(std::string(what) + " is not positive semidefinite (eigenvalue " +
                         std::to_string(es.eigenvalues().minCoeff()) + ")");
  return es;
}

}  // namespace detail

// d = sqrt(|m - mw|^2 + Tr(C + Cw - 2 (C Cw)^(1/2))), with the trace of the
// square root taken from the eigenvalues of C^(1/2) Cw C^(1/2).
inline double frechet_distance(const FidStats& a, const FidStats& b) {
  if (a.dim() != b.dim() || a.cov.rows() != b.cov.rows())
    throw ShapeError("frechet distance: dimensions " + std::to_string(a.dim()) + " and " + std::to_string(b.dim()));
  auto ea = detail::psd_eigen(a.cov, "first covariance");
  detail::psd_eigen(b.cov, "second covariance");
  const Eigen::VectorXd root = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd sa = ea.eigenvectors() * root.asDiagonal() * ea.eigenvectors().transpose();
  auto em = detail::psd_eigen(sa * b.cov * sa, "covariance product");
  const double tr_sqrt = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double d2 = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
  return std::sqrt(std::max(d2, 0.0));
}

// ---------------------------------------------------------------- feature extractors

enum class ExtractorKind { kPixels, kDiscriminator, kExternal };

inline ExtractorKind parse_extractor(const std::string& s) {
  if (s == "pixels" || s == "raw-pixels") return ExtractorKind::kPixels;
  if (s == "discriminator" || s == "disc") return ExtractorKind::kDiscriminator;
  if (s == "external" || s == "file") return ExtractorKind::kExternal;
  throw std::invalid_argument("unknown feature extractor '" + s + "' (expected pixels, discriminator or external)");
}

struct FeatureExtractor {
  std::string name;
  std::size_t dim = 0;
  std::function<std::vector<std::vector<double>>(std::span<const Image>)> extract;
};

inline constexpr std::size_t kPixelGrid = 8;

// Mean over an 8 x 8 grid of cells per channel, ordered (gy, gx, channel): d = 192.
inline std::vector<double> pixel_features(const Image& img) {
  if (img.width < kPixelGrid || img.height < kPixelGrid)
    throw ShapeError("pixel features need images of at least 8x8");
  std::vector<double> f(kPixelGrid * kPixelGrid * 3, 0.0);
  for (std::size_t gy = 0; gy < kPixelGrid; ++gy) {
    const std::size_t r0 = gy * img.height / kPixelGrid, r1 = (gy + 1) * img.height / kPixelGrid;
    for (std::size_t gx = 0; gx < kPixelGrid; ++gx) {
      const std::size_t c0 = gx * img.width / kPixelGrid, c1 = (gx + 1) * img.width / kPixelGrid;
      const double inv = 1.0 / static_cast<double>((r1 - r0) * (c1 - c0));
      for (std::size_t ch = 0; ch < 3; ++ch) {
        double acc = 0;
        for (std::size_t r = r0; r < r1; ++r)
          for (std::size_t c = c0; c < c1; ++c) acc += img.at(r, c, ch);
        f[(gy * kPixelGrid + gx) * 3 + ch] = acc * inv;
      }
    }
  }
  return f;
}

inline FeatureExtractor pixel_extractor() {
  return {"pixels", kPixelGrid * kPixelGrid * 3, [](std::span<const Image> images) {
            std::vector<std::vector<double>> out;
            out.reserve(images.size());
            for (const auto& im : images) out.push_back(pixel_features(im));
            return out;
          }};
}

// Penultimate discriminator activations (the critic is only read).
template <class T>
FeatureExtractor discriminator_extractor(const Discriminator<T>& d, std::size_t batch = 100) {
  return {"discriminator", d.feature_dim(), [&d, batch](std::span<const Image> images) {
            NoGradGuard no_grad;
            std::vector<std::vector<double>> out;
            out.reserve(images.size());
            for (std::size_t i = 0; i < images.size(); i += batch) {
              const auto chunk = images.subspan(i, std::min(batch, images.size() - i));
              Tensor<T> f = d.features(images_to_tensor<T>(chunk, 1.0 / 127.5, -1.0));
              const std::size_t dim = f.dim(1);
              for (std::size_t r = 0; r < chunk.size(); ++r)
                out.emplace_back(f.data().begin() + r * dim, f.data().begin() + (r + 1) * dim);
            }
            return out;
          }};
}

inline FidStats image_stats(std::span<const Image> images, const FeatureExtractor& fx) {
  const auto feats = fx.extract(images);
  if (!feats.empty() && feats[0].size() != fx.dim) throw ShapeError("extractor produced an unexpected dimension");
  return accumulate_stats(feats);
}

// External activations: u64 count, u64 d, then count * d little-endian float32, row-major.
inline std::vector<std::vector<double>> read_activations(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::uint64_t n = 0, d = 0;
  f.read(reinterpret_cast<char*>(&n), 8);
  f.read(reinterpret_cast<char*>(&d), 8);
  if (!f || d == 0 || d > (1u << 20)) throw FormatError(path + ": malformed activations header");
  std::vector<std::vector<double>> out(n, std::vector<double>(d));
  std::vector<float> row(d);
  for (auto& r : out) {
    f.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(d * 4));
    if (!f) throw FormatError(path + ": truncated activations");
    std::copy(row.begin(), row.end(), r.begin());
  }
  return out;
}

inline void write_activations(const std::string& path, const std::vector<std::vector<double>>& rows) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  const std::uint64_t n = rows.size(), d = rows.empty() ? 0 : rows[0].size();
  f.write(reinterpret_cast<const char*>(&n), 8);
  f.write(reinterpret_cast<const char*>(&d), 8);
  for (const auto& r : rows) {
    if (r.size() != d) throw ShapeError("activation rows differ in length");
    std::vector<float> row(r.begin(), r.end());
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(d * 4));
  }
}

// ---------------------------------------------------------------- compression sweep

struct SweepRow {
  int quality = 0;
  SubsamplingMode mode = SubsamplingMode::k444;
  double fid = 0;
};

// encode then decode every image (batched through the decoder transform).
inline std::vector<Image> jpeg_round_trip(std::span<const Image> images, int quality, SubsamplingMode mode) {
  std::vector<Image> out;
  out.reserve(images.size());
  constexpr std::size_t kChunk = 100;
  for (std::size_t i = 0; i < images.size(); i += kChunk) {
    std::vector<EncodedImage> enc;
    for (std::size_t j = i; j < std::min(images.size(), i + kChunk); ++j) enc.push_back(encode(images[j], quality, mode));
    for (auto& im : decode_images(enc)) out.push_back(std::move(im));
  }
  return out;
}

inline std::vector<SweepRow> compression_sweep(std::span<const Image> real, const std::vector<int>& qualities,
                                               const std::vector<SubsamplingMode>& modes, const FeatureExtractor& fx) {
  if (real.empty()) throw std::invalid_argument("compression sweep: no images");
  const FidStats ref = image_stats(real, fx);
  std::vector<SweepRow> rows;
  for (SubsamplingMode mode : modes)
    for (int q : qualities) {
      validate_quality(q);
      const auto processed = jpeg_round_trip(real, q, mode);
      rows.push_back({q, mode, frechet_distance(image_stats(processed, fx), ref)});
    }
  return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "qf,mode,fid\n" << std::setprecision(10);
  for (const auto& r : rows) os << r.quality << ',' << to_string(r.mode) << ',' << r.fid << '\n';
  return os.str();
}

}  // namespace jpeggan
