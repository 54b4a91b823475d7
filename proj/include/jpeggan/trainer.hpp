#pragma once

// WGAN-GP training with the anchor term and two time-scale Adam updates.

#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "jpeggan/adam.hpp"
#include "jpeggan/autograd.hpp"
#include "jpeggan/networks.hpp"
#include "jpeggan/params_io.hpp"

namespace jpeggan {

class DivergenceError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

struct TrainConfig {
  double gamma = 100.0;
  double lambda = 10.0;
  double lr_discriminator = 3e-4;
  double lr_generator = 1e-4;
  double beta1 = 0.0;
  double beta2 = 0.9;
  double adam_eps = 1e-8;
  std::size_t batch_size = 64;
  std::size_t steps = 2000;
  std::size_t critic_updates_per_gen = 1;
  std::size_t checkpoint_every = 0;  // 0: no periodic checkpoints
  std::uint64_t seed = 1;

  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    if (!(gamma >= 0)) out.push_back("gamma must be >= 0");
    if (!(lambda >= 0)) out.push_back("lambda must be >= 0");
    if (!(lr_discriminator > 0)) out.push_back("lr_discriminator must be > 0");
    if (!(lr_generator > 0)) out.push_back("lr_generator must be > 0");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) out.push_back("adam betas must lie in [0, 1)");
    if (batch_size == 0) out.push_back("batch_size must be > 0");
    if (critic_updates_per_gen == 0) out.push_back("critic_updates_per_gen must be > 0");
    return out;
  }

  void validate() const {
    const auto p = problems();
    if (p.empty()) return;
    std::string msg = "invalid training config:";
    for (const auto& s : p) msg += "\n  " + s;
    throw std::invalid_argument(msg);
  }
};

struct LossReport {
  std::size_t step = 0;
  double d_loss = 0, g_loss = 0, anchor_term = 0, gp_term = 0, mean_grad_norm = 0;
  double d_real = 0, d_fake = 0, g_fake = 0;  // E[D(x)], E[D(x~)] in the critic step; E[D(x~)] in the generator step

  bool finite() const {
    for (double v : {d_loss, g_loss, anchor_term, gp_term, mean_grad_norm})
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline constexpr const char* kLossCsvHeader = "step,d_loss,g_loss,anchor_term,gp_term,mean_grad_norm";

inline std::string csv_row(const LossReport& r) {
  std::ostringstream os;
  os << std::setprecision(17) << r.step << ',' << r.d_loss << ',' << r.g_loss << ',' << r.anchor_term << ','
     << r.gp_term << ',' << r.mean_grad_norm;
  return os.str();
}

inline void write_loss_csv(const std::string& path, const std::vector<LossReport>& rows) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  f << kLossCsvHeader << '\n';
  for (const auto& r : rows) f << csv_row(r) << '\n';
}

template <class T>
struct Penalty {
  Tensor<T> value;  // mean over the batch of (||grad D(x^)|| - 1)^2
  double mean_grad_norm = 0;
};

// Penalty at x^ = e x + (1 - e) x~, e ~ U(0, 1) per sample. The result stays
// differentiable w.r.t. the critic's parameters (double backward).
template <class T, class Critic>
Penalty<T> gradient_penalty(const Critic& critic, const Tensor<T>& real, const Tensor<T>& fake, Rng& rng) {
  if (real.shape() != fake.shape() || real.rank() < 2)
    throw ShapeError("gradient_penalty: batches differ " + to_string(real.shape()) + " vs " + to_string(fake.shape()));
  const std::size_t n = real.dim(0), per = real.numel() / n;
  std::vector<T> mix(real.numel());
  for (std::size_t b = 0; b < n; ++b) {
    const T e = static_cast<T>(rng.uniform());
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) mix[i] = e * real[i] + (T(1) - e) * fake[i];
  }
  Tensor<T> x_hat(real.shape(), std::move(mix));
  x_hat.set_requires_grad(true);
  Tensor<T> out = ops::sum(critic(x_hat));
  Tensor<T> g = grad(out, {x_hat}, true)[0];
  Tensor<T> norms = ops::row_norm(ops::reshape(g, Shape{n, per}));
  Tensor<T> dev = ops::add_scalar(norms, T(-1));
  Penalty<T> p;
  p.value = ops::mean(ops::mul(dev, dev));
  double acc = 0;
  for (T v : norms.data()) acc += static_cast<double>(v);
  p.mean_grad_norm = acc / static_cast<double>(n);
  return p;
}

// Alternating critic / generator updates. With an anchor the generator loss
// carries gamma * mean |P(G(z)) - G^(z)| (pixels in [-1, 1] units); without
// one it is plain WGAN-GP (used for baseline pretraining).
template <class T>
class Trainer {
 public:
  Trainer(Generator<T>& g, Discriminator<T>& d, const Generator<T>* anchor, std::span<const Image> data,
          const TrainConfig& cfg)
      : g_(g),
        d_(d),
        anchor_(anchor),
        cfg_(cfg),
        opt_g_(g.params(), {cfg.lr_generator, cfg.beta1, cfg.beta2, cfg.adam_eps}),
        opt_d_(d.params(), {cfg.lr_discriminator, cfg.beta1, cfg.beta2, cfg.adam_eps}),
        noise_(Rng::stream(cfg.seed, "noise")),
        penalty_rng_(Rng::stream(cfg.seed, "penalty")),
        data_rng_(Rng::stream(cfg.seed, "data")) {
    cfg_.validate();
    if (data.empty()) throw std::invalid_argument("training dataset is empty");
    if (data[0].width != g.spec().resolution || data[0].height != g.spec().resolution)
      throw ShapeError("training images are " + std::to_string(data[0].width) + "x" + std::to_string(data[0].height) +
                       ", generator resolution is " + std::to_string(g.spec().resolution));
    if (d.spec().resolution != g.spec().resolution) throw ShapeError("generator and discriminator resolutions differ");
    if (anchor_ && anchor_->params().trainable()) throw std::invalid_argument("anchor generator must be frozen");
    real_ = images_to_tensor<T>(data, 1.0 / 127.5, -1.0);
  }

  const TrainConfig& config() const { return cfg_; }
  std::size_t step_count() const { return step_; }

  Tensor<T> sample_latent(std::size_t n) {
    std::vector<T> z(n * g_.spec().latent_dim);
    for (auto& v : z) v = static_cast<T>(noise_.normal());
    return Tensor<T>(Shape{n, g_.spec().latent_dim}, std::move(z));
  }

  Tensor<T> sample_real(std::size_t n) {
    const std::size_t per = real_.numel() / real_.dim(0);
    std::vector<T> out(n * per);
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t k = data_rng_.below(real_.dim(0));
      std::copy(real_.data().begin() + k * per, real_.data().begin() + (k + 1) * per, out.begin() + b * per);
    }
    Shape s = real_.shape();
    s[0] = n;
    return Tensor<T>(s, std::move(out));
  }

  // One iteration: critic_updates_per_gen critic steps, then one generator step.
  LossReport step() {
    LossReport r;
    r.step = step_ + 1;
    for (std::size_t k = 0; k < cfg_.critic_updates_per_gen; ++k) critic_step(r);
    generator_step(r);
    ++step_;
    if (!r.finite()) throw DivergenceError("non-finite loss at step " + std::to_string(r.step));
    return r;
  }

  void critic_step(LossReport& r) {
    Tape<T>::current().clear();
    d_.params().zero_grad();
    Tensor<T> fake;
    {
      NoGradGuard no_grad;
      fake = normalize_pixels(g_(sample_latent(cfg_.batch_size)).rgb);
    }
    Tensor<T> real = sample_real(cfg_.batch_size);
    Tensor<T> d_real = ops::mean(d_(real));
    Tensor<T> d_fake = ops::mean(d_(fake));
    Penalty<T> gp = gradient_penalty(d_, real, fake, penalty_rng_);
    Tensor<T> loss = ops::add(ops::sub(d_fake, d_real), ops::scale(gp.value, T(cfg_.lambda)));
    backward(loss);
    opt_d_.step();
    r.d_loss = loss.item();
    r.d_real = d_real.item();
    r.d_fake = d_fake.item();
    r.gp_term = gp.value.item();
    r.mean_grad_norm = gp.mean_grad_norm;
  }

  void generator_step(LossReport& r) {
    Tape<T>::current().clear();
    g_.params().zero_grad();
    d_.params().set_trainable(false);
    Tensor<T> z = sample_latent(cfg_.batch_size);
    Tensor<T> fake = normalize_pixels(g_(z).rgb);
    Tensor<T> g_fake = ops::mean(d_(fake));
    Tensor<T> loss = ops::scale(g_fake, T(-1));
    if (anchor_) {
      Tensor<T> target;
      {
        NoGradGuard no_grad;
        target = anchor_->trunk(z);
      }
      Tensor<T> anchor_term = ops::mean(ops::abs(ops::sub(fake, target)));
      r.anchor_term = anchor_term.item();
      if (cfg_.gamma != 0) loss = ops::add(loss, ops::scale(anchor_term, T(cfg_.gamma)));
    }
    backward(loss);
    d_.params().set_trainable(true);
    opt_g_.step();
    r.g_loss = loss.item();
    r.g_fake = g_fake.item();
  }

  // Runs `steps` iterations. `on_step` sees every report; periodic
  // checkpoints go to checkpoint_path when configured.
  std::vector<LossReport> train(std::size_t steps, const std::function<void(const LossReport&)>& on_step = {},
                                const std::string& checkpoint_path = "") {
    std::vector<LossReport> out;
    out.reserve(steps);
    std::string last_good = "none";
    for (std::size_t i = 0; i < steps; ++i) {
      LossReport r;
      try {
        r = step();
      } catch (const NumericalError& e) {
        throw DivergenceError(std::string(e.what()) + " (iteration " + std::to_string(step_ + 1) +
                              ", last good checkpoint: " + last_good + ")");
      }
      out.push_back(r);
      if (on_step) on_step(r);
      if (!checkpoint_path.empty() && cfg_.checkpoint_every && step_ % cfg_.checkpoint_every == 0) {
        save_checkpoint(checkpoint_path);
        last_good = checkpoint_path;
      }
    }
    return out;
  }

  void store(ArrayFile& f) const {
    store_params(f, g_.params(), "g.");
    store_params(f, d_.params(), "d.");
    if (anchor_) store_params(f, anchor_->params(), "anchor.");
    opt_g_.store(f, "opt_g.");
    opt_d_.store(f, "opt_d.");
    for (const auto& [name, rng] : {std::pair{"noise", &noise_}, {"penalty", &penalty_rng_}, {"data", &data_rng_}}) {
      const auto s = rng->save();
      f.put_u64(std::string("rng.") + name, std::vector<std::uint64_t>(s.begin(), s.end()));
    }
    f.put_u64("step", {step_});
  }

  void save_checkpoint(const std::string& path) const {
    ArrayFile f;
    store(f);
    f.save(path);
  }

  // Restores parameters, optimizer moments, RNG streams and the step count
  // (the anchor is not restored: it is rebuilt from its own source).
  void load_checkpoint(const ArrayFile& f) {
    load_params(g_.params(), f, "g.");
    load_params(d_.params(), f, "d.");
    opt_g_.load(f, "opt_g.");
    opt_d_.load(f, "opt_d.");
    for (const auto& [name, rng] : {std::pair{"noise", &noise_}, {"penalty", &penalty_rng_}, {"data", &data_rng_}}) {
      const auto v = f.get_u64(std::string("rng.") + name);
      if (v.size() != 6) throw FormatError("rng state has the wrong size");
      std::array<std::uint64_t, 6> s;
      std::copy(v.begin(), v.end(), s.begin());
      rng->restore(s);
    }
    step_ = f.get_u64("step").at(0);
  }

 private:
  Generator<T>& g_;
  Discriminator<T>& d_;
  const Generator<T>* anchor_;
  TrainConfig cfg_;
  Adam<T> opt_g_, opt_d_;
  Rng noise_, penalty_rng_, data_rng_;
  Tensor<T> real_;
  std::size_t step_ = 0;
};

}  // namespace jpeggan
