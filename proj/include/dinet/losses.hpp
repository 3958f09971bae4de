#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "dinet/nn.hpp"

namespace dinet {

struct LossWeights {
  double lambda_p = 10.0;
  double lambda_sync = 0.1;

  void validate() const {
    if (!(lambda_p >= 0.0) || !(lambda_sync >= 0.0)) throw ConfigError("loss weights must be non-negative");
  }
};

/// Frozen feature pyramid used by the perception loss. Implementations must
/// not expose trainable parameters.
class PerceptualExtractor {
 public:
  virtual ~PerceptualExtractor() = default;
  virtual std::string name() const = 0;
  /// Feature maps V_1..V_N of a (3, H, W) image.
  virtual std::vector<Var> stages(const Var& image) const = 0;
  virtual nn::ParamList parameters() const { return {}; }
};

/// Single stage that returns the image itself (pixel-space L1).
class IdentityExtractor final : public PerceptualExtractor {
 public:
  std::string name() const override { return "identity"; }
  std::vector<Var> stages(const Var& image) const override { return {image}; }
};

namespace ops {

/// 2x2 max pooling with floor semantics on odd sizes.
inline Var max_pool2(const Var& a) {
  const Tensor& x = a.value();
  if (x.rank() != 3 || x.dim(1) < 2 || x.dim(2) < 2) throw ContractViolation("max_pool2: map too small");
  const int64_t c = x.dim(0), h = x.dim(1) / 2, w = x.dim(2) / 2;
  Tensor out({c, h, w});
  std::vector<int64_t> arg(static_cast<std::size_t>(out.numel()));
  for (int64_t k = 0; k < c; ++k)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t xx = 0; xx < w; ++xx) {
        int64_t best = (k * x.dim(1) + 2 * y) * x.dim(2) + 2 * xx;
        for (int64_t dy = 0; dy < 2; ++dy)
          for (int64_t dx = 0; dx < 2; ++dx) {
            const int64_t i = (k * x.dim(1) + 2 * y + dy) * x.dim(2) + 2 * xx + dx;
            if (x[i] > x[best]) best = i;
          }
        const int64_t o = (k * h + y) * w + xx;
        out[o] = x[best];
        arg[static_cast<std::size_t>(o)] = best;
      }
  return make_op(std::move(out), {a}, [arg = std::move(arg)](Node& self) {
    Tensor g = Tensor::zeros_like(self.parents[0]->value);
    for (std::size_t o = 0; o < arg.size(); ++o) g[arg[o]] += self.grad[static_cast<int64_t>(o)];
    accumulate_into(self, 0, g);
  });
}

}  // namespace ops

/// 19-layer VGG feature stack tapped at relu1_1, relu2_1, relu3_1, relu4_1 and
/// relu5_1 (the first `stage_count` of them). Weights come either from a
/// weight file (the pretrained network, converted to the dinet checkpoint
/// container by the user) or from a seeded initialisation used as a
/// deterministic stand-in when no weights are available.
class Vgg19Extractor final : public PerceptualExtractor {
 public:
  /// `width_divisor` shrinks every layer (1 = the standard 64..512 widths).
  Vgg19Extractor(int64_t stage_count, int64_t width_divisor, uint64_t seed) : stage_count_(stage_count) {
    if (stage_count < 1 || stage_count > 5) throw ConfigError("vgg19 extractor supports 1..5 stages");
    if (width_divisor < 1) throw ConfigError("vgg19 width divisor must be >= 1");
    std::mt19937_64 rng(seed);
    int64_t cin = 3;
    for (int64_t width : kWidths) {
      const int64_t cout = std::max<int64_t>(1, width / width_divisor);
      convs_.emplace_back(cin, cout, 3, 1, rng);
      cin = cout;
    }
    freeze();
  }

  std::string name() const override { return "vgg19"; }

  /// Number of convolutions the tapped stages need (relu5_1 is conv 13).
  int64_t conv_count() const { return kTaps[static_cast<std::size_t>(stage_count_ - 1)] + 1; }

  std::vector<Var> stages(const Var& image) const override {
    // ImageNet channel normalisation.
    static constexpr double mean[3] = {0.485, 0.456, 0.406};
    static constexpr double stdv[3] = {0.229, 0.224, 0.225};
    const Tensor& im = image.value();
    if (im.rank() != 3 || im.dim(0) != 3) throw ContractViolation("vgg19: expected a 3-channel image");
    Tensor shift(im.shape()), gain(im.shape());
    const int64_t plane = im.dim(1) * im.dim(2);
    for (int64_t c = 0; c < 3; ++c) {
      std::fill_n(shift.data() + c * plane, plane, -mean[c] / stdv[c]);
      std::fill_n(gain.data() + c * plane, plane, 1.0 / stdv[c]);
    }
    Var x = ops::add(ops::mul(image, Var(gain)), Var(shift));

    std::vector<Var> out;
    std::size_t tap = 0;
    for (int64_t i = 0; i < conv_count(); ++i) {
      if (i == 2 || i == 4 || i == 8 || i == 12) x = ops::max_pool2(x);
      x = ops::relu(convs_[static_cast<std::size_t>(i)](x));
      if (tap < static_cast<std::size_t>(stage_count_) && i == kTaps[tap]) {
        out.push_back(x);
        ++tap;
      }
    }
    return out;
  }

  nn::ParamList parameters() const override {
    nn::ParamList p;
    for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].collect(p, "vgg19.conv" + std::to_string(i));
    return p;
  }

  /// Replaces weights by name from `params`; every name must be present.
  void assign(const std::vector<std::pair<std::string, Tensor>>& named) {
    auto mine = parameters();
    for (auto& p : mine) {
      auto it = std::find_if(named.begin(), named.end(), [&](const auto& kv) { return kv.first == p.name; });
      if (it == named.end()) throw ConfigError("vgg19 weights missing tensor '" + p.name + "'");
      if (it->second.shape() != p.var.shape())
        throw ConfigError("vgg19 weight '" + p.name + "' has shape " + to_string(it->second.shape()) +
                          ", expected " + to_string(p.var.shape()));
      p.var.mutable_value() = it->second;
    }
    freeze();
  }

 private:
  static constexpr int64_t kWidths[16] = {64, 64, 128, 128, 256, 256, 256, 256, 512, 512, 512, 512, 512, 512, 512, 512};
  static constexpr int64_t kTaps[5] = {0, 2, 4, 8, 12};

  void freeze() { nn::set_requires_grad(parameters(), false); }

  int64_t stage_count_;
  std::vector<nn::Conv2d> convs_;
};

/// Mean absolute difference of two equally shaped Vars.
inline Var mean_abs_diff(const Var& a, const Var& b) { return ops::mean(ops::abs(ops::sub(a, b))); }

/// Two-scale perception loss:
///   sum_i [ |V_i(out) - V_i(real)|_1 / |V_i| + |V_i(out/2) - V_i(real/2)|_1 / |V_i'| ] / (2N)
/// where /2 is 2x2 average downsampling and |V| the element count of a stage.
inline Var perception_loss(const Var& out, const Var& real, const PerceptualExtractor& ex) {
  const Tensor& o = out.value();
  if (o.shape() != real.shape())
    throw ContractViolation("perception_loss: shapes " + to_string(o.shape()) + " and " + to_string(real.shape()));
  if (o.rank() != 3 || o.dim(1) % 2 || o.dim(2) % 2)
    throw ContractViolation("perception_loss: H and W must be even, got " + to_string(o.shape()));

  const auto so = ex.stages(out);
  const auto sr = ex.stages(real);
  const auto so_half = ex.stages(ops::avg_pool2(out));
  const auto sr_half = ex.stages(ops::avg_pool2(real));
  const double n = static_cast<double>(so.size());
  std::vector<Var> terms;
  for (std::size_t i = 0; i < so.size(); ++i) {
    terms.push_back(mean_abs_diff(so[i], sr[i]));
    terms.push_back(mean_abs_diff(so_half[i], sr_half[i]));
  }
  return ops::scale(ops::add_all(terms), 1.0 / (2.0 * n));
}

inline double perception_loss(const Tensor& out, const Tensor& real, const PerceptualExtractor& ex) {
  NoGradGuard ng;
  return perception_loss(Var(out), Var(real), ex).value()[0];
}

/// Discriminator objective: 0.5 E[(D(real) - 1)^2] + 0.5 E[D(fake)^2].
inline Var lsgan_d_loss(const Var& d_real, const Var& d_fake) {
  return ops::add(ops::scale(ops::mean(ops::square(ops::add_scalar(d_real, -1.0))), 0.5),
                  ops::scale(ops::mean(ops::square(d_fake)), 0.5));
}

/// Generator objective: E[(D(fake) - 1)^2].
inline Var lsgan_g_loss(const Var& d_fake) { return ops::mean(ops::square(ops::add_scalar(d_fake, -1.0))); }

/// (score - 1)^2 for a sync confidence in [0, 1].
inline Var sync_loss(const Var& score) {
  if (score.value().numel() != 1) throw ContractViolation("sync_loss: expected a scalar score");
  const double s = score.value()[0];
  if (!(s >= 0.0 && s <= 1.0)) throw ContractViolation("sync_loss: score outside [0, 1]");
  return ops::square(ops::add_scalar(score, -1.0));
}

inline Var total_g_loss(const Var& l_p, const Var& l_sync, const Var& l_gan_g, const LossWeights& w) {
  w.validate();
  return ops::add(ops::add(ops::scale(l_p, w.lambda_p), ops::scale(l_sync, w.lambda_sync)), l_gan_g);
}

// Scalar conveniences.

inline double lsgan_d_loss(const Tensor& d_real, const Tensor& d_fake) {
  NoGradGuard ng;
  return lsgan_d_loss(Var(d_real), Var(d_fake)).value()[0];
}
inline double lsgan_g_loss(const Tensor& d_fake) {
  NoGradGuard ng;
  return lsgan_g_loss(Var(d_fake)).value()[0];
}
inline double sync_loss(double score) {
  NoGradGuard ng;
  return sync_loss(Var(Tensor({1}, score))).value()[0];
}
inline double total_g_loss(double l_p, double l_sync, double l_gan_g, const LossWeights& w = {}) {
  w.validate();
  return w.lambda_p * l_p + w.lambda_sync * l_sync + l_gan_g;
}

}  // namespace dinet
