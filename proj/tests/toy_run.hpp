#pragma once

// The toy training run used by the acceptance suite: baseline pretraining,
// anchor extraction, joint training, then FID and bitstream checks on
// generated samples.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#include "jpeggan/dataset.hpp"
#include "jpeggan/decoder.hpp"
#include "jpeggan/fid.hpp"
#include "jpeggan/jfif.hpp"
#include "jpeggan/trainer.hpp"

namespace toy {

struct Settings {
  std::size_t images = 1000;
  std::size_t resolution = 32;
  std::size_t channels = 8;
  std::size_t pretrain_steps = 2000;
  std::size_t joint_steps = 2000;
  std::size_t samples = 500;
  std::uint64_t seed = 1;
  bool verbose = false;
};

struct Outcome {
  std::vector<jpeggan::LossReport> pretrain, joint;
  bool all_finite = true;
  double final_grad_norm = 0;    // mean over the last 100 joint steps
  double anchor_at_100 = 0;      // joint step 100
  double anchor_final = 0;       // mean over the last 100 joint steps
  double fid_init = 0, fid_final = 0;
  std::size_t valid_outputs = 0, decodable_outputs = 0, outputs = 0;
  double seconds = 0;
};

inline double tail_mean(const std::vector<jpeggan::LossReport>& rows, std::size_t k,
                        double jpeggan::LossReport::*field) {
  if (rows.empty()) return std::nan("");
  const std::size_t from = rows.size() > k ? rows.size() - k : 0;
  double s = 0;
  for (std::size_t i = from; i < rows.size(); ++i) s += rows[i].*field;
  return s / static_cast<double>(rows.size() - from);
}

template <class T>
std::vector<jpeggan::EncodedImage> generate(const jpeggan::Generator<T>& g, std::size_t n, std::uint64_t seed) {
  jpeggan::Rng rng = jpeggan::Rng::stream(seed, "toy-samples");
  std::vector<jpeggan::EncodedImage> out;
  for (std::size_t done = 0; done < n; done += 100) {
    const std::size_t b = std::min<std::size_t>(100, n - done);
    std::vector<T> z(b * g.spec().latent_dim);
    for (auto& v : z) v = static_cast<T>(rng.normal());
    auto enc = g.encoded(jpeggan::Tensor<T>(jpeggan::Shape{b, g.spec().latent_dim}, std::move(z)));
    out.insert(out.end(), std::make_move_iterator(enc.begin()), std::make_move_iterator(enc.end()));
  }
  return out;
}

inline double sample_fid(const std::vector<jpeggan::EncodedImage>& enc, const jpeggan::FidStats& real,
                         const jpeggan::FeatureExtractor& fx) {
  const auto imgs = jpeggan::decode_images(enc);
  return jpeggan::frechet_distance(jpeggan::image_stats(imgs, fx), real);
}

template <class T = float>
Outcome run(const Settings& s) {
  using namespace jpeggan;
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  const auto data = load_dataset({SourceKind::kSynthetic, "", s.resolution}, s.images, s.seed);
  const auto fx = pixel_extractor();
  const FidStats real_stats = image_stats(data, fx);

  GeneratorSpec gs;
  gs.resolution = s.resolution;
  gs.channels = s.channels;
  gs.jpeg_layers = false;
  Rng init = Rng::stream(s.seed, "init");
  Generator<T> base(gs, init);
  Discriminator<T> d(DiscriminatorSpec::matching(gs), init);

  TrainConfig cfg;
  cfg.seed = s.seed;
  auto log = [&](const char* phase) {
    return [&, phase](const LossReport& r) {
      if (!std::isfinite(r.d_loss) || !r.finite()) o.all_finite = false;
      if (s.verbose && r.step % 100 == 0)
        std::fprintf(stderr, "%s %zu d=%.4f g=%.4f anchor=%.4f gp=%.4f |grad|=%.4f\n", phase, r.step, r.d_loss,
                     r.g_loss, r.anchor_term, r.gp_term, r.mean_grad_norm);
    };
  };
  {
    Trainer<T> pre(base, d, nullptr, data, cfg);
    o.pretrain = pre.train(s.pretrain_steps, log("pretrain"));
  }

  gs.jpeg_layers = true;
  Generator<T> g(gs, init);
  g.params().copy_values_from(base.params(), "trunk.");
  const auto anchor = extract_anchor(base);

  o.fid_init = sample_fid(generate(g, s.samples, s.seed), real_stats, fx);
  {
    TrainConfig jc = cfg;
    jc.seed = s.seed + 1;
    Trainer<T> joint(g, d, anchor.get(), data, jc);
    o.joint = joint.train(s.joint_steps, log("joint"));
  }
  const auto enc = generate(g, s.samples, s.seed);
  o.fid_final = sample_fid(enc, real_stats, fx);

  o.final_grad_norm = tail_mean(o.joint, 100, &LossReport::mean_grad_norm);
  o.anchor_at_100 = o.joint.size() >= 100 ? o.joint[99].anchor_term : std::nan("");
  o.anchor_final = tail_mean(o.joint, 100, &LossReport::anchor_term);
  o.outputs = enc.size();
  for (const auto& e : enc) {
    try {
      e.validate();
      ++o.valid_outputs;
      const auto bytes = jfif_bytes(e);
      const auto back = parse_jfif(bytes);
      if (back == e) ++o.decodable_outputs;
    } catch (const std::exception&) {
    }
  }
  o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return o;
}

}  // namespace toy
