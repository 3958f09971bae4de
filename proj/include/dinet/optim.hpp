#pragma once

#include <cmath>
#include <string>
#include <unordered_map>

#include "dinet/nn.hpp"

namespace dinet {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over a fixed parameter list. Parameters without an accumulated
/// gradient are left untouched (their moments do not advance).
class Adam {
 public:
  Adam(nn::ParamList params, AdamOptions opt) : params_(std::move(params)), opt_(opt) {
    if (!(opt_.lr > 0)) throw ConfigError("learning rate must be positive");
    for (const auto& p : params_) {
      m_.emplace(p.name, Tensor::zeros_like(p.var.value()));
      v_.emplace(p.name, Tensor::zeros_like(p.var.value()));
    }
  }

  void zero_grad() { nn::zero_grad(params_); }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (auto p : params_) {
      if (!p.var.has_grad()) continue;
      const Tensor& g = p.var.node().grad;
      Tensor& w = p.var.mutable_value();
      Tensor& m = m_.at(p.name);
      Tensor& v = v_.at(p.name);
      for (int64_t i = 0; i < w.numel(); ++i) {
        m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g[i];
        v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g[i] * g[i];
        w[i] -= opt_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + opt_.eps);
      }
    }
  }

  const nn::ParamList& params() const noexcept { return params_; }
  const AdamOptions& options() const noexcept { return opt_; }
  int64_t steps() const noexcept { return t_; }
  void set_steps(int64_t t) noexcept { t_ = t; }
  Tensor& first_moment(const std::string& name) { return m_.at(name); }
  Tensor& second_moment(const std::string& name) { return v_.at(name); }

 private:
  nn::ParamList params_;
  AdamOptions opt_;
  int64_t t_ = 0;
  std::unordered_map<std::string, Tensor> m_, v_;
};

}  // namespace dinet
