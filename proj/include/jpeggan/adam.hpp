#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "jpeggan/layers.hpp"
#include "jpeggan/params_io.hpp"

namespace jpeggan {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.0;
  double beta2 = 0.9;
  double eps = 1e-8;
};

// Adam over a ParamSet, updating values in place from accumulated grads.
template <class T>
class Adam {
 public:
  Adam(ParamSet<T>& params, AdamConfig cfg) : params_(params), cfg_(cfg) {
    for (const auto& e : params_.entries()) {
      m_.emplace_back(e.second.numel(), 0.0);
      v_.emplace_back(e.second.numel(), 0.0);
    }
  }

  const AdamConfig& config() const { return cfg_; }
  std::uint64_t steps() const { return t_; }

  // Parameters without a gradient are treated as having a zero gradient.
  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    auto& entries = params_.entries();
    for (std::size_t k = 0; k < entries.size(); ++k) {
      Tensor<T>& p = entries[k].second;
      const Tensor<T> g = p.grad();
      auto w = p.mutable_data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g.defined() ? static_cast<double>(g[i]) : 0.0;
        m_[k][i] = cfg_.beta1 * m_[k][i] + (1.0 - cfg_.beta1) * gi;
        v_[k][i] = cfg_.beta2 * v_[k][i] + (1.0 - cfg_.beta2) * gi * gi;
        const double mhat = m_[k][i] / c1, vhat = v_[k][i] / c2;
        const double denom = std::sqrt(vhat) + cfg_.eps;
        if (denom > 0.0) w[i] = static_cast<T>(static_cast<double>(w[i]) - cfg_.lr * mhat / denom);
      }
    }
  }

  void store(ArrayFile& file, const std::string& prefix) const {
    auto& entries = params_.entries();
    for (std::size_t k = 0; k < entries.size(); ++k) {
      file.put(prefix + "m." + entries[k].first, Tensor<double>(entries[k].second.shape(), m_[k]));
      file.put(prefix + "v." + entries[k].first, Tensor<double>(entries[k].second.shape(), v_[k]));
    }
    file.put_u64(prefix + "t", {t_});
  }

  void load(const ArrayFile& file, const std::string& prefix) {
    auto& entries = params_.entries();
    for (std::size_t k = 0; k < entries.size(); ++k) {
      m_[k] = file.get<double>(prefix + "m." + entries[k].first).vec();
      v_[k] = file.get<double>(prefix + "v." + entries[k].first).vec();
      if (m_[k].size() != entries[k].second.numel() || v_[k].size() != entries[k].second.numel())
        throw FormatError("optimizer state for " + entries[k].first + " has the wrong size");
    }
    t_ = file.get_u64(prefix + "t").at(0);
  }

 private:
  ParamSet<T>& params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace jpeggan
