#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "mop/error.hpp"

namespace mop::nn {

struct AdamWConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Adam with decoupled weight decay over a fixed set of flat tensors.
class AdamW {
 public:
  AdamW(std::vector<std::span<double>> params, AdamWConfig cfg)
      : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  /// `grads` must mirror the parameter list tensor for tensor.
  void step(const std::vector<std::span<double>>& grads) {
    if (grads.size() != params_.size()) throw ConfigError("gradient/parameter list mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const double lr = cfg_.learning_rate;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto p = params_[i];
      const auto g = grads[i];
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        const double update = (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.eps);
        p[j] -= lr * (update + cfg_.weight_decay * p[j]);
      }
    }
  }

  long steps() const noexcept { return t_; }

 private:
  std::vector<std::span<double>> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamWConfig cfg_;
  long t_ = 0;
};

}  // namespace mop::nn
