#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dinet/ops.hpp"

namespace dinet::nn {

struct NamedParam {
  std::string name;
  Var var;
};
using ParamList = std::vector<NamedParam>;

/// Portable uniform draw in [0, 1) from a 64-bit engine (std distributions are
/// implementation-defined, which would make checkpoints library-dependent).
inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline Tensor uniform_init(Shape shape, double bound, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.vec()) v = (2.0 * unit_uniform(rng) - 1.0) * bound;
  return t;
}

// NamedParam copies share the underlying node, so these act on the module.
inline void set_requires_grad(const ParamList& params, bool on) {
  for (auto p : params) p.var.set_requires_grad(on);
}

inline void zero_grad(const ParamList& params) {
  for (auto p : params) p.var.zero_grad();
}

inline void append(ParamList& out, const ParamList& in) { out.insert(out.end(), in.begin(), in.end()); }

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int64_t cin, int64_t cout, int64_t k, int64_t stride, std::mt19937_64& rng)
      : Conv2d(cin, cout, k, k, stride, rng) {}
  Conv2d(int64_t cin, int64_t cout, int64_t kh, int64_t kw, int64_t stride, std::mt19937_64& rng)
      : stride_(stride), pad_h_(kh / 2), pad_w_(kw / 2) {
    const double bound = std::sqrt(6.0 / static_cast<double>(cin * kh * kw));  // He-uniform
    weight_ = Var(uniform_init({cout, cin, kh, kw}, bound, rng), true);
    bias_ = Var(Tensor({cout}), true);
  }

  Var operator()(const Var& x) const {
    return ops::conv2d(x, weight_, bias_, {stride_, pad_h_, pad_w_});
  }

  void collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight_});
    out.push_back({prefix + ".bias", bias_});
  }

  Var& weight() { return weight_; }
  Var& bias() { return bias_; }

 private:
  Var weight_, bias_;
  int64_t stride_ = 1, pad_h_ = 0, pad_w_ = 0;
};

class Linear {
 public:
  Linear() = default;
  Linear(int64_t in, int64_t out, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight_ = Var(uniform_init({out, in}, bound, rng), true);
    bias_ = Var(Tensor({out}), true);
  }

  Var operator()(const Var& x) const { return ops::linear(x, weight_, bias_); }

  void collect(ParamList& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight_});
    out.push_back({prefix + ".bias", bias_});
  }

  /// Zeroes weight and bias in place (used for identity-at-init heads).
  void zero() {
    weight_.mutable_value().fill(0.0);
    bias_.mutable_value().fill(0.0);
  }

 private:
  Var weight_, bias_;
};

/// lrelu(x + conv(lrelu(conv(x))))
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(int64_t ch, std::mt19937_64& rng) : a_(ch, ch, 3, 1, rng), b_(ch, ch, 3, 1, rng) {}

  Var operator()(const Var& x) const {
    return ops::leaky_relu(ops::add(x, b_(ops::leaky_relu(a_(x)))));
  }

  void collect(ParamList& out, const std::string& prefix) const {
    a_.collect(out, prefix + ".conv_a");
    b_.collect(out, prefix + ".conv_b");
  }

 private:
  Conv2d a_, b_;
};

}  // namespace dinet::nn
