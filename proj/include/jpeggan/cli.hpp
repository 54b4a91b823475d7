#pragma once

// Command-line driver: train, pretrain, generate, encode, decode, fid, sweep.
// run() is the whole program; tools/jpeggan_cli.cpp only forwards argv.

#include <Eigen/Core>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "jpeggan/config.hpp"
#include "jpeggan/dataset.hpp"
#include "jpeggan/fid.hpp"
#include "jpeggan/jfif.hpp"
#include "jpeggan/trainer.hpp"

namespace jpeggan::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kDiverged = 3 };

// Every recognised key with its default.
inline const std::vector<std::pair<std::string, std::string>>& default_settings() {
  static const std::vector<std::pair<std::string, std::string>> d{
      {"run.seed", "1"},
      {"run.precision", "f32"},
      {"run.out", "out"},
      {"model.resolution", "32"},
      {"model.latent_dim", "128"},
      {"model.channels", "0"},
      {"model.residual_blocks", "4"},
      {"model.loc_channels", "1"},
      {"jpeg.quality", "50"},
      {"jpeg.mode", "4:2:0"},
      {"train.gamma", "100"},
      {"train.lambda", "10"},
      {"train.lr_discriminator", "0.0003"},
      {"train.lr_generator", "0.0001"},
      {"train.beta1", "0"},
      {"train.beta2", "0.9"},
      {"train.batch_size", "64"},
      {"train.steps", "2000"},
      {"train.critic_updates", "1"},
      {"train.checkpoint_every", "0"},
      {"train.log_every", "100"},
      {"data.source", "synthetic"},
      {"data.path", ""},
      {"data.count", "1000"},
      {"data.seed", "7"},
      {"generate.count", "16"},
      {"generate.grid_cols", "8"},
      {"sweep.qualities", "100,90,75,50,25,10"},
      {"sweep.modes", "4:4:4,4:2:2,4:2:0"},
      {"fid.extractor", "pixels"},
  };
  return d;
}

struct Flags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out, qf, mode, precision;
  std::optional<long long> steps;
  std::optional<std::string> data, data_path;
  std::optional<long long> count;
  std::string init, resume, checkpoint, extractor;
  std::vector<std::string> inputs;
};

// Values set by the config file, JPEGGAN_* variables and flags, in that
// order of increasing precedence (defaults not included).
inline Config explicit_settings(const std::string& command, const Flags& f) {
  std::vector<std::string> known;
  for (const auto& [k, v] : default_settings()) known.push_back(k);
  Config cfg;
  if (!f.config_path.empty()) {
    cfg = Config::load(f.config_path);
    std::string unknown;
    for (const auto& [k, v] : cfg.values())
      if (std::find(known.begin(), known.end(), k) == known.end()) unknown += " " + k;
    if (!unknown.empty()) throw ConfigError(f.config_path + ": unknown keys" + unknown);
  }
  cfg.apply_environment(known);
  const bool sweep = command == "sweep";
  if (f.seed) cfg.set("run.seed", std::to_string(*f.seed));
  if (f.out) cfg.set("run.out", *f.out);
  if (f.precision) cfg.set("run.precision", *f.precision);
  if (f.steps) cfg.set("train.steps", std::to_string(*f.steps));
  if (f.qf) cfg.set(sweep ? "sweep.qualities" : "jpeg.quality", *f.qf);
  if (f.mode) cfg.set(sweep ? "sweep.modes" : "jpeg.mode", *f.mode);
  if (f.data) cfg.set("data.source", *f.data);
  if (f.data_path) cfg.set("data.path", *f.data_path);
  if (f.count) cfg.set(command == "generate" ? "generate.count" : "data.count", std::to_string(*f.count));
  if (!f.extractor.empty()) cfg.set("fid.extractor", f.extractor);
  return cfg;
}

inline Config with_defaults(const Config& explicit_cfg) {
  Config cfg;
  for (const auto& [k, v] : default_settings()) cfg.set(k, v);
  for (const auto& [k, v] : explicit_cfg.values()) cfg.set(k, v);
  return cfg;
}

inline std::size_t positive(const Config& c, const std::string& key, bool allow_zero = false) {
  const long long v = c.get_int(key, 0);
  if (v < 0 || (v == 0 && !allow_zero)) c.add_error(key + " must be " + (allow_zero ? "non-negative" : "positive"));
  return v < 0 ? 0 : static_cast<std::size_t>(v);
}

inline GeneratorSpec model_spec(const Config& c, bool jpeg_layers) {
  GeneratorSpec s;
  s.resolution = positive(c, "model.resolution");
  s.latent_dim = positive(c, "model.latent_dim");
  s.channels = positive(c, "model.channels", true);
  s.residual_blocks = positive(c, "model.residual_blocks");
  s.loc_channels = positive(c, "model.loc_channels");
  s.quality = static_cast<int>(c.get_int("jpeg.quality", 50));
  try {
    s.mode = parse_mode(c.get("jpeg.mode", "4:2:0"));
  } catch (const std::invalid_argument& e) {
    c.add_error(std::string("jpeg.mode: ") + e.what());
  }
  if (s.quality <= 0 || s.quality > 100) c.add_error("jpeg.quality must lie in (0, 100]");
  s.jpeg_layers = jpeg_layers;
  return s;
}

inline TrainConfig train_config(const Config& c) {
  TrainConfig t;
  t.gamma = c.get_real("train.gamma", t.gamma);
  t.lambda = c.get_real("train.lambda", t.lambda);
  t.lr_discriminator = c.get_real("train.lr_discriminator", t.lr_discriminator);
  t.lr_generator = c.get_real("train.lr_generator", t.lr_generator);
  t.beta1 = c.get_real("train.beta1", t.beta1);
  t.beta2 = c.get_real("train.beta2", t.beta2);
  t.batch_size = static_cast<std::size_t>(std::max(0LL, c.get_int("train.batch_size", 64)));
  t.steps = static_cast<std::size_t>(std::max(0LL, c.get_int("train.steps", 2000)));
  t.critic_updates_per_gen = static_cast<std::size_t>(std::max(0LL, c.get_int("train.critic_updates", 1)));
  t.checkpoint_every = static_cast<std::size_t>(std::max(0LL, c.get_int("train.checkpoint_every", 0)));
  t.seed = static_cast<std::uint64_t>(c.get_int("run.seed", 1));
  for (const auto& p : t.problems()) c.add_error(p);
  return t;
}

inline DatasetSource data_source(const Config& c, std::size_t resolution) {
  DatasetSource s;
  try {
    s.kind = parse_source_kind(c.get("data.source", "synthetic"));
  } catch (const std::invalid_argument& e) {
    c.add_error(std::string("data.source: ") + e.what());
  }
  s.path = c.get("data.path", "");
  s.resolution = resolution;
  if (s.kind != SourceKind::kSynthetic && s.path.empty())
    c.add_error("data.path is required for data.source = " + c.get("data.source", ""));
  return s;
}

// ---------------------------------------------------------------- checkpoints

inline void store_spec(ArrayFile& f, const GeneratorSpec& s) {
  f.put_u64("spec", {s.resolution, s.latent_dim, s.trunk_channels(), s.residual_blocks, s.loc_channels,
                     static_cast<std::uint64_t>(s.mode), static_cast<std::uint64_t>(s.quality),
                     static_cast<std::uint64_t>(s.jpeg_layers)});
}

inline GeneratorSpec load_spec(const ArrayFile& f) {
  const auto v = f.get_u64("spec");
  if (v.size() != 8 || v[5] > 2) throw FormatError("checkpoint spec record is malformed");
  GeneratorSpec s;
  s.resolution = v[0];
  s.latent_dim = v[1];
  s.channels = v[2];
  s.residual_blocks = v[3];
  s.loc_channels = v[4];
  s.mode = static_cast<SubsamplingMode>(v[5]);
  s.quality = static_cast<int>(v[6]);
  s.jpeg_layers = v[7] != 0;
  return s;
}

// Differences between a checkpoint's spec and explicitly configured values.
inline void check_spec_against(const GeneratorSpec& s, const Config& file_and_flags, bool check_jpeg) {
  std::vector<std::string> diffs;
  auto cmp = [&](const std::string& key, long long have) {
    if (!file_and_flags.has(key)) return;
    const long long want = file_and_flags.get_int(key, have);
    if (want != have && !(key == "model.channels" && want == 0))
      diffs.push_back(key + " = " + std::to_string(want) + " but checkpoint has " + std::to_string(have));
  };
  cmp("model.resolution", static_cast<long long>(s.resolution));
  cmp("model.latent_dim", static_cast<long long>(s.latent_dim));
  cmp("model.channels", static_cast<long long>(s.trunk_channels()));
  cmp("model.residual_blocks", static_cast<long long>(s.residual_blocks));
  cmp("model.loc_channels", static_cast<long long>(s.loc_channels));
  if (check_jpeg) {
    cmp("jpeg.quality", s.quality);
    if (file_and_flags.has("jpeg.mode") && parse_mode(file_and_flags.get("jpeg.mode", "")) != s.mode)
      diffs.push_back("jpeg.mode = " + file_and_flags.get("jpeg.mode", "") + " but checkpoint has " + to_string(s.mode));
  }
  if (!diffs.empty()) {
    std::string msg = "checkpoint does not match the configured model:";
    for (const auto& d : diffs) msg += " " + d + ";";
    throw ConfigError(msg);
  }
}

// ---------------------------------------------------------------- run context

struct Context {
  std::string command;
  Config cfg;       // resolved
  Config explicit_;  // file + environment + flags only (no defaults)
  std::filesystem::path out;
  std::ostream* log = &std::cout;
};

inline void write_manifest(const Context& ctx) {
  Config m = ctx.cfg;
  m.set("manifest.command", ctx.command);
  m.set("manifest.version", kVersion);
  m.set("manifest.eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                              std::to_string(EIGEN_MINOR_VERSION));
#if defined(__VERSION__)
  m.set("manifest.compiler", __VERSION__);
#endif
  std::ofstream f(ctx.out / "manifest.txt");
  if (!f) throw std::runtime_error("cannot write manifest in " + ctx.out.string());
  f << "# jpeggan run manifest\n" << m.dump();
}

template <class T>
void log_report(const Context& ctx, const LossReport& r, std::size_t every) {
  if (every == 0 || r.step % every != 0) return;
  char buf[200];
  std::snprintf(buf, sizeof buf, "step %zu  d_loss %.5g  g_loss %.5g  anchor %.5g  grad_norm %.4f\n", r.step,
                r.d_loss, r.g_loss, r.anchor_term, r.mean_grad_norm);
  *ctx.log << buf << std::flush;
}

template <class T>
std::unique_ptr<Generator<T>> generator_from(const ArrayFile& f, const std::string& prefix, const GeneratorSpec& s) {
  Rng unused(0);
  auto g = std::make_unique<Generator<T>>(s, unused);
  load_params(g->params(), f, prefix);
  return g;
}

// ---------------------------------------------------------------- commands

template <class T>
int cmd_train(const Context& ctx, bool pretrain, const Flags& flags) {
  const Config& c = ctx.cfg;
  TrainConfig tc = train_config(c);
  const std::size_t log_every = positive(c, "train.log_every", true);
  GeneratorSpec spec = model_spec(c, !pretrain);
  DatasetSource src = data_source(c, spec.resolution);
  const std::size_t count = positive(c, "data.count");
  const auto data_seed = static_cast<std::uint64_t>(c.get_int("data.seed", 7));
  if (!pretrain && flags.init.empty() && flags.resume.empty())
    c.add_error("train needs --init <pretrained checkpoint> or --resume <checkpoint>");
  c.check();

  std::optional<ArrayFile> resume, init;
  if (!flags.resume.empty()) {
    resume = ArrayFile::load(flags.resume);
    const GeneratorSpec saved = load_spec(*resume);
    if (saved.jpeg_layers == pretrain)
      throw ConfigError(flags.resume + " is a " + (saved.jpeg_layers ? "joint-training" : "pretraining") +
                        " checkpoint");
    check_spec_against(saved, ctx.explicit_, !pretrain);
    spec = saved;
  }
  if (!pretrain && !resume) {
    init = ArrayFile::load(flags.init);
    const GeneratorSpec base = load_spec(*init);
    if (base.jpeg_layers) throw ConfigError(flags.init + " is not a pretrained (RGB) checkpoint");
    check_spec_against(base, ctx.explicit_, false);
    const int q = spec.quality;
    const SubsamplingMode mode = spec.mode;
    spec = base;
    spec.jpeg_layers = true;
    spec.quality = q;
    spec.mode = mode;
  }
  spec.validate();
  *ctx.log << "loading " << count << " images (" << c.get("data.source", "") << ")\n";
  const std::vector<Image> data = load_dataset(src, count, data_seed);

  Rng init_rng = Rng::stream(tc.seed, "init");
  Generator<T> g(spec, init_rng);
  Discriminator<T> d(DiscriminatorSpec::matching(spec), init_rng);
  std::unique_ptr<Generator<T>> anchor;
  if (!pretrain) {
    GeneratorSpec rgb = spec;
    rgb.jpeg_layers = false;
    if (resume) {
      anchor = generator_from<T>(*resume, "anchor.", rgb);
      anchor->params().set_trainable(false);
    } else {
      auto base = generator_from<T>(*init, "g.", rgb);
      load_params(d.params(), *init, "d.");
      g.params().copy_values_from(base->params(), "trunk.");
      anchor = extract_anchor(*base);
    }
  }
  Trainer<T> trainer(g, d, anchor.get(), data, tc);
  if (resume) trainer.load_checkpoint(*resume);
  const std::size_t done = trainer.step_count();
  const std::size_t remaining = tc.steps > done ? tc.steps - done : 0;

  const std::string ckpt = (ctx.out / "checkpoint.bin").string();
  auto save = [&] {
    ArrayFile f;
    trainer.store(f);
    store_spec(f, spec);
    f.save(ckpt);
  };
  std::vector<LossReport> rows;
  std::string last_good = resume ? flags.resume : "none";
  for (std::size_t i = 0; i < remaining; ++i) {
    try {
      rows.push_back(trainer.step());
    } catch (const NumericalError& e) {
      write_loss_csv((ctx.out / "loss.csv").string(), rows);
      throw DivergenceError(std::string(e.what()) + " (last good checkpoint: " + last_good + ")");
    }
    log_report<T>(ctx, rows.back(), log_every);
    if (tc.checkpoint_every && trainer.step_count() % tc.checkpoint_every == 0) {
      save();
      last_good = ckpt;
    }
  }
  save();
  write_loss_csv((ctx.out / "loss.csv").string(), rows);
  *ctx.log << (pretrain ? "pretrained " : "trained ") << rows.size() << " steps; checkpoint " << ckpt << "\n";
  return kOk;
}

template <class T>
int cmd_generate(const Context& ctx, const Flags& flags) {
  const Config& c = ctx.cfg;
  if (flags.checkpoint.empty()) c.add_error("generate needs --checkpoint");
  const std::size_t n = positive(c, "generate.count", true);
  const std::size_t cols = positive(c, "generate.grid_cols");
  const auto seed = static_cast<std::uint64_t>(c.get_int("run.seed", 1));
  c.check();
  const ArrayFile f = ArrayFile::load(flags.checkpoint);
  const GeneratorSpec spec = load_spec(f);
  if (!spec.jpeg_layers) throw ConfigError(flags.checkpoint + " holds an RGB generator; generate needs a joint-training checkpoint");
  check_spec_against(spec, ctx.explicit_, true);
  auto g = generator_from<T>(f, "g.", spec);

  Rng rng = Rng::stream(seed, "generate");
  std::vector<Image> previews;
  constexpr std::size_t kBatch = 64;
  for (std::size_t i = 0; i < n; i += kBatch) {
    const std::size_t b = std::min(kBatch, n - i);
    std::vector<T> z(b * spec.latent_dim);
    for (auto& v : z) v = static_cast<T>(rng.normal());
    const auto encoded = g->encoded(Tensor<T>(Shape{b, spec.latent_dim}, std::move(z)));
    for (std::size_t k = 0; k < b; ++k) {
      char name[32];
      std::snprintf(name, sizeof name, "sample_%04zu.jpg", i + k);
      const std::string path = (ctx.out / name).string();
      write_jfif(encoded[k], path);
      if (!(read_jfif(path) == encoded[k])) throw CodecError(path + ": emitted file does not read back exactly");
    }
    for (auto& im : decode_images(encoded)) previews.push_back(std::move(im));
  }
  if (!previews.empty()) write_sample_grid(previews, cols, (ctx.out / "grid.ppm").string());
  *ctx.log << "wrote " << n << " JFIF files to " << ctx.out.string() << "\n";
  return kOk;
}

inline int cmd_encode(const Context& ctx, const Flags& flags) {
  const Config& c = ctx.cfg;
  const int q = static_cast<int>(c.get_int("jpeg.quality", 50));
  SubsamplingMode mode = SubsamplingMode::k420;
  try {
    mode = parse_mode(c.get("jpeg.mode", "4:2:0"));
  } catch (const std::invalid_argument& e) {
    c.add_error(std::string("jpeg.mode: ") + e.what());
  }
  if (q <= 0 || q > 100) c.add_error("quality factor " + std::to_string(q) + " outside (0, 100]");
  if (flags.inputs.empty()) c.add_error("encode needs at least one input PPM");
  c.check();
  for (const auto& in : flags.inputs) {
    const auto out = ctx.out / (std::filesystem::path(in).stem().string() + ".jpg");
    write_jfif(encode(read_ppm(in), q, mode), out.string());
    *ctx.log << out.string() << "\n";
  }
  return kOk;
}

inline int cmd_decode(const Context& ctx, const Flags& flags) {
  if (flags.inputs.empty()) throw ConfigError("decode needs at least one input JFIF file");
  for (const auto& in : flags.inputs) {
    const auto out = ctx.out / (std::filesystem::path(in).stem().string() + ".ppm");
    write_ppm(decode_image(read_jfif(in)), out.string());
    *ctx.log << out.string() << "\n";
  }
  return kOk;
}

// A set is a directory of .ppm / .jpg images or an activation file.
inline std::vector<Image> load_image_set(const std::string& path) {
  if (!std::filesystem::is_directory(path)) throw DataError(path + " is not a directory of images");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(path)) {
    const auto ext = e.path().extension().string();
    if (ext == ".ppm" || ext == ".jpg" || ext == ".jpeg") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Image> out;
  for (const auto& p : files) {
    const auto ext = p.extension().string();
    out.push_back(ext == ".ppm" ? read_ppm(p.string()) : decode_image(read_jfif(p.string())));
  }
  if (out.empty()) throw DataError(path + " holds no .ppm or .jpg images");
  return out;
}

template <class T>
FeatureExtractor make_extractor(const Context& ctx, const Flags& flags, std::unique_ptr<Discriminator<T>>& keep) {
  const ExtractorKind kind = parse_extractor(ctx.cfg.get("fid.extractor", "pixels"));
  if (kind == ExtractorKind::kPixels) return pixel_extractor();
  if (kind == ExtractorKind::kDiscriminator) {
    if (flags.checkpoint.empty()) throw ConfigError("the discriminator extractor needs --checkpoint");
    const ArrayFile f = ArrayFile::load(flags.checkpoint);
    const GeneratorSpec spec = load_spec(f);
    Rng unused(0);
    keep = std::make_unique<Discriminator<T>>(DiscriminatorSpec::matching(spec), unused);
    load_params(keep->params(), f, "d.");
    return discriminator_extractor(*keep);
  }
  return {"external", 0, {}};
}

template <class T>
int cmd_fid(const Context& ctx, const Flags& flags) {
  if (flags.inputs.size() != 2) throw ConfigError("fid needs exactly two sets");
  std::unique_ptr<Discriminator<T>> d;
  const FeatureExtractor fx = make_extractor<T>(ctx, flags, d);
  std::array<FidStats, 2> stats;
  for (int i = 0; i < 2; ++i) {
    if (fx.name == "external") {
      stats[i] = accumulate_stats(read_activations(flags.inputs[i]));
    } else {
      const auto images = load_image_set(flags.inputs[i]);
      stats[i] = image_stats(images, fx);
    }
  }
  if (stats[0].dim() != stats[1].dim())
    throw ShapeError("feature dimensions differ: " + std::to_string(stats[0].dim()) + " vs " +
                     std::to_string(stats[1].dim()));
  const double fid = frechet_distance(stats[0], stats[1]);
  std::ofstream f(ctx.out / "fid.csv");
  f << "set_a,set_b,extractor,fid\n" << flags.inputs[0] << ',' << flags.inputs[1] << ',' << fx.name << ','
    << std::setprecision(10) << fid << '\n';
  *ctx.log << "fid " << std::setprecision(10) << fid << "\n";
  return kOk;
}

template <class T>
int cmd_sweep(const Context& ctx, const Flags& flags) {
  const Config& c = ctx.cfg;
  const std::size_t res = positive(c, "model.resolution");
  DatasetSource src = data_source(c, res);
  const std::size_t count = positive(c, "data.count");
  std::vector<int> qualities;
  for (const auto& s : c.get_list("sweep.qualities", {})) {
    Config one;
    one.set("q", s);
    const long long q = one.get_int("q", 0);
    if (q <= 0 || q > 100) c.add_error("sweep.qualities: '" + s + "' outside (0, 100]");
    qualities.push_back(static_cast<int>(q));
  }
  std::vector<SubsamplingMode> modes;
  for (const auto& s : c.get_list("sweep.modes", {})) {
    try {
      modes.push_back(parse_mode(s));
    } catch (const std::invalid_argument& e) {
      c.add_error(std::string("sweep.modes: ") + e.what());
    }
  }
  if (qualities.empty() || modes.empty()) c.add_error("sweep needs at least one quality and one mode");
  c.check();
  std::unique_ptr<Discriminator<T>> d;
  const FeatureExtractor fx = make_extractor<T>(ctx, flags, d);
  if (fx.name == "external") throw ConfigError("sweep computes its own features; use pixels or discriminator");
  const auto real = load_dataset(src, count, static_cast<std::uint64_t>(c.get_int("data.seed", 7)));
  const auto rows = compression_sweep(real, qualities, modes, fx);
  const std::string csv = sweep_csv(rows);
  std::ofstream f(ctx.out / "sweep.csv");
  f << csv;
  *ctx.log << csv;
  return kOk;
}

template <class T>
int dispatch(const Context& ctx, const Flags& flags) {
  const std::string& cmd = ctx.command;
  if (cmd == "pretrain" || cmd == "train") return cmd_train<T>(ctx, cmd == "pretrain", flags);
  if (cmd == "generate") return cmd_generate<T>(ctx, flags);
  if (cmd == "encode") return cmd_encode(ctx, flags);
  if (cmd == "decode") return cmd_decode(ctx, flags);
  if (cmd == "fid") return cmd_fid<T>(ctx, flags);
  if (cmd == "sweep") return cmd_sweep<T>(ctx, flags);
  throw ConfigError("unknown command " + cmd);
}

// ---------------------------------------------------------------- entry point

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"JPEG-domain GAN: training, generation, codec and FID tools", "jpeggan"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  Flags f;
  auto common = [&f](CLI::App* s) {
    s->add_option("--config", f.config_path, "Sectioned key = value config file")->check(CLI::ExistingFile);
    s->add_option("--seed", f.seed, "Random seed");
    s->add_option("--out", f.out, "Output directory");
    s->add_option("--qf", f.qf, "JPEG quality factor (comma list for sweep)");
    s->add_option("--mode", f.mode, "Chroma subsampling 4:4:4, 4:2:2 or 4:2:0 (comma list for sweep)");
    s->add_option("--steps", f.steps, "Training iterations");
    s->add_option("--precision", f.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  };
  auto data_opts = [&f](CLI::App* s) {
    s->add_option("--data", f.data, "Dataset kind: synthetic, cifar or ppm");
    s->add_option("--data-path", f.data_path, "CIFAR batch file/directory or PPM directory");
    s->add_option("--count", f.count, "Number of images");
  };
  CLI::App* pretrain = app.add_subcommand("pretrain", "Train the RGB baseline generator and critic");
  CLI::App* train = app.add_subcommand("train", "Joint training of the JPEG generator against the critic");
  CLI::App* generate = app.add_subcommand("generate", "Emit JFIF files and a preview grid from a checkpoint");
  CLI::App* enc = app.add_subcommand("encode", "Encode PPM images to JFIF with the reference encoder");
  CLI::App* dec = app.add_subcommand("decode", "Decode JFIF files to PPM through the decoder transform");
  CLI::App* fid = app.add_subcommand("fid", "Frechet distance between two image sets");
  CLI::App* sweep = app.add_subcommand("sweep", "FID of JPEG-compressed real data across qualities and modes");
  for (CLI::App* s : {pretrain, train, generate, enc, dec, fid, sweep}) common(s);
  for (CLI::App* s : {pretrain, train, sweep}) data_opts(s);
  train->add_option("--init", f.init, "Pretrained checkpoint supplying the trunk, critic and anchor");
  for (CLI::App* s : {pretrain, train}) s->add_option("--resume", f.resume, "Continue from a checkpoint");
  generate->add_option("--checkpoint", f.checkpoint, "Joint-training checkpoint")->required();
  generate->add_option("-n,--count", f.count, "Number of images");
  enc->add_option("inputs", f.inputs, "PPM files")->required();
  dec->add_option("inputs", f.inputs, "JFIF files")->required();
  fid->add_option("sets", f.inputs, "Two image directories (or activation files with --extractor external)")
      ->required()
      ->expected(2);
  for (CLI::App* s : {fid, sweep}) {
    s->add_option("--extractor", f.extractor, "pixels, discriminator or external");
    s->add_option("--checkpoint", f.checkpoint, "Checkpoint supplying the critic for --extractor discriminator");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  Context ctx;
  ctx.command = app.get_subcommands().front()->get_name();
  ctx.log = &out;
  try {
    ctx.explicit_ = explicit_settings(ctx.command, f);
    ctx.cfg = with_defaults(ctx.explicit_);
    ctx.out = ctx.cfg.get("run.out", "out");
    const std::string precision = ctx.cfg.get("run.precision", "f32");
    if (precision != "f32" && precision != "f64") throw ConfigError("run.precision must be f32 or f64");
    std::filesystem::create_directories(ctx.out);
    write_manifest(ctx);
    return precision == "f64" ? dispatch<double>(ctx, f) : dispatch<float>(ctx, f);
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericalError& e) {
    err << "numerical divergence: " << e.what() << "\n";
    return kDiverged;
  } catch (const std::invalid_argument& e) {
    err << "invalid argument: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kData;
  }
}

}  // namespace jpeggan::cli
