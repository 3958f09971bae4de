#pragma once

#include <nlohmann/json.hpp>

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dinet/adaat.hpp"
#include "dinet/nn.hpp"

namespace dinet {

inline constexpr int64_t kAudioFeatureDim = 29;
inline constexpr int64_t kEmbeddingDim = 128;
inline constexpr int64_t kReferenceCount = 5;
inline constexpr double kScaleEpsilon = 1e-4;

/// Sizes of every learnable component. The layer stacks themselves are fixed
/// (see the README for the exact stacks).
struct NetworkConfig {
  int64_t base_channels = 32;
  int64_t feature_channels = 256;
  int64_t height = 416;
  int64_t width = 320;
  int64_t audio_window = 5;
  int64_t mouth_size = 256;
  int64_t res_blocks = 1;
  uint64_t seed = 0;

  /// 416x320 faces, 256 feature channels, 256x256 mouths.
  static NetworkConfig full() { return {}; }
  /// 64x48 faces, 32 feature channels, 64x64 mouths; CPU-sized.
  static NetworkConfig toy() {
    NetworkConfig c;
    c.base_channels = 8;
    c.feature_channels = 32;
    c.height = 64;
    c.width = 48;
    c.mouth_size = 64;
    return c;
  }

  void validate() const {
    if (base_channels < 1 || feature_channels < 1 || audio_window < 1 || mouth_size < 16 || res_blocks < 0)
      throw ConfigError("network config has non-positive sizes");
    if (height < 4 || width < 4 || height % 4 || width % 4)
      throw ConfigError("face height and width must be positive multiples of 4");
  }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(NetworkConfig, base_channels, feature_channels, height, width, audio_window,
                                   mouth_size, res_blocks, seed)

/// Name of the first field whose value differs, if any.
inline std::optional<std::string> first_mismatch(const NetworkConfig& a, const NetworkConfig& b) {
  const nlohmann::json ja = a, jb = b;
  for (auto it = ja.begin(); it != ja.end(); ++it)
    if (jb.at(it.key()) != it.value()) return it.key();
  return std::nullopt;
}

namespace detail {

inline void require_image(const Var& x, int64_t channels, const char* what) {
  const Tensor& t = x.value();
  if (t.rank() != 3 || t.dim(0) != channels)
    throw ContractViolation(std::string(what) + ": expected " + std::to_string(channels) + " x H x W, got " +
                            to_string(t.shape()));
  if (t.dim(1) % 4 || t.dim(2) % 4 || t.dim(1) == 0 || t.dim(2) == 0)
    throw ContractViolation(std::string(what) + ": H and W must be multiples of 4, got " + to_string(t.shape()));
}

inline void require_audio(const Var& a, int64_t window, const char* what) {
  const Tensor& t = a.value();
  if (t.rank() != 2 || t.dim(0) != window || t.dim(1) != kAudioFeatureDim)
    throw ContractViolation(std::string(what) + ": expected audio window " + std::to_string(window) + "x" +
                            std::to_string(kAudioFeatureDim) + ", got " + to_string(t.shape()));
}

inline double identity_scale(double raw) {
  return 1.0 + (1.0 - kScaleEpsilon) * (ops::softplus(raw) / ops::softplus(0.0) - 1.0);
}

}  // namespace detail

/// Positive scale activation: a rescaled softplus offset by epsilon, equal to
/// exactly 1 at raw = 0 and bounded below by epsilon.
inline Var scale_activation(const Var& raw) {
  return ops::detail::unary(
      raw, [](double r) { return detail::identity_scale(r); },
      [](double r, double) { return (1.0 - kScaleEpsilon) * ops::sigmoid(r) / ops::softplus(0.0); });
}

/// Window (T x 29) -> 128: temporal convolutions, time pooling, projection.
class AudioEncoder {
 public:
  AudioEncoder() = default;
  AudioEncoder(int64_t window, std::mt19937_64& rng)
      : window_(window),
        c1_(kAudioFeatureDim, 64, 1, 3, 1, rng),
        c2_(64, kEmbeddingDim, 1, 3, 1, rng),
        fc_(kEmbeddingDim, kEmbeddingDim, rng) {}

  Var operator()(const Var& audio) const {
    detail::require_audio(audio, window_, "encode_audio");
    // (T, 29) -> (29, 1, T): feature dims become channels.
    const Tensor& a = audio.value();
    Tensor perm({kAudioFeatureDim, 1, window_});
    for (int64_t t = 0; t < window_; ++t)
      for (int64_t d = 0; d < kAudioFeatureDim; ++d) perm[d * window_ + t] = a[t * kAudioFeatureDim + d];
    Var x = make_op(std::move(perm), {audio}, [w = window_](Node& self) {
      Tensor g({w, kAudioFeatureDim});
      for (int64_t t = 0; t < w; ++t)
        for (int64_t d = 0; d < kAudioFeatureDim; ++d) g[t * kAudioFeatureDim + d] = self.grad[d * w + t];
      accumulate_into(self, 0, g);
    });
    x = ops::leaky_relu(c1_(x));
    x = ops::leaky_relu(c2_(x));
    return fc_(ops::global_avg_pool(x));
  }

  void collect(nn::ParamList& out, const std::string& prefix) const {
    c1_.collect(out, prefix + ".conv1");
    c2_.collect(out, prefix + ".conv2");
    fc_.collect(out, prefix + ".fc");
  }

 private:
  int64_t window_ = 5;
  nn::Conv2d c1_, c2_;
  nn::Linear fc_;
};

/// Image (in_ch x H x W) -> features (F x H/4 x W/4).
class FeatureEncoder {
 public:
  FeatureEncoder() = default;
  FeatureEncoder(int64_t in_ch, const NetworkConfig& cfg, std::mt19937_64& rng) : in_ch_(in_ch) {
    const int64_t b = cfg.base_channels;
    stem_ = nn::Conv2d(in_ch, b, 3, 1, rng);
    down1_ = nn::Conv2d(b, 2 * b, 3, 2, rng);
    down2_ = nn::Conv2d(2 * b, cfg.feature_channels, 3, 2, rng);
    for (int64_t i = 0; i < cfg.res_blocks; ++i) res_.emplace_back(cfg.feature_channels, rng);
  }

  Var operator()(const Var& img, const char* what) const {
    detail::require_image(img, in_ch_, what);
    Var x = ops::leaky_relu(stem_(img));
    x = ops::leaky_relu(down1_(x));
    x = ops::leaky_relu(down2_(x));
    for (const auto& r : res_) x = r(x);
    return x;
  }

  void collect(nn::ParamList& out, const std::string& prefix) const {
    stem_.collect(out, prefix + ".stem");
    down1_.collect(out, prefix + ".down1");
    down2_.collect(out, prefix + ".down2");
    for (std::size_t i = 0; i < res_.size(); ++i) res_[i].collect(out, prefix + ".res" + std::to_string(i));
  }

 private:
  int64_t in_ch_ = 3;
  nn::Conv2d stem_, down1_, down2_;
  std::vector<nn::ResBlock> res_;
};

/// (F_s, F_ref) -> 128: strided convolutions, spatial pooling, projection.
class AlignmentEncoder {
 public:
  AlignmentEncoder() = default;
  AlignmentEncoder(const NetworkConfig& cfg, std::mt19937_64& rng)
      : c1_(2 * cfg.feature_channels, cfg.feature_channels, 3, 2, rng),
        c2_(cfg.feature_channels, kEmbeddingDim, 3, 2, rng),
        fc_(kEmbeddingDim, kEmbeddingDim, rng) {}

  Var operator()(const Var& f_s, const Var& f_ref) const {
    if (f_s.shape() != f_ref.shape() || f_s.value().rank() != 3)
      throw ContractViolation("encode_alignment: source " + to_string(f_s.shape()) + " vs reference " +
                              to_string(f_ref.shape()));
    Var x = ops::concat_channels({f_s, f_ref});
    x = ops::leaky_relu(c1_(x));
    x = ops::leaky_relu(c2_(x));
    return fc_(ops::global_avg_pool(x));
  }

  void collect(nn::ParamList& out, const std::string& prefix) const {
    c1_.collect(out, prefix + ".conv1");
    c2_.collect(out, prefix + ".conv2");
    fc_.collect(out, prefix + ".fc");
  }

 private:
  nn::Conv2d c1_, c2_;
  nn::Linear fc_;
};

/// (F_audio, F_align) -> per-channel (theta, s, tx, ty). The output layer
/// starts at zero, so a fresh head emits the identity transform.
class AffineHead {
 public:
  AffineHead() = default;
  AffineHead(int64_t channels, std::mt19937_64& rng)
      : channels_(channels), hidden_(2 * kEmbeddingDim, 2 * kEmbeddingDim, rng), out_(2 * kEmbeddingDim, 4 * channels, rng) {
    out_.zero();
  }

  AffineParamVars operator()(const Var& f_audio, const Var& f_align) const {
    for (const Var* v : {&f_audio, &f_align})
      if (v->value().rank() != 1 || v->dim(0) != kEmbeddingDim)
        throw ContractViolation("predict_affine: inputs must be length-128 vectors");
    Var joint = make_op(concat_vectors(f_audio.value(), f_align.value()), {f_audio, f_align}, [](Node& self) {
      const int64_t n = self.parents[0]->value.dim(0);
      Tensor ga({n}), gb({self.parents[1]->value.dim(0)});
      std::copy_n(self.grad.data(), n, ga.data());
      std::copy_n(self.grad.data() + n, gb.numel(), gb.data());
      accumulate_into(self, 0, ga);
      accumulate_into(self, 1, gb);
    });
    Var raw = out_(ops::leaky_relu(hidden_(joint)));
    Var raw3 = ops::reshape(raw, {4 * channels_, 1, 1});
    auto part = [&](int64_t i) { return ops::reshape(ops::channel_slice(raw3, i * channels_, channels_), {channels_}); };
    return {part(0), scale_activation(part(1)), part(2), part(3)};
  }

  void collect(nn::ParamList& out, const std::string& prefix) const {
    hidden_.collect(out, prefix + ".hidden");
    out_.collect(out, prefix + ".out");
  }

 private:
  static Tensor concat_vectors(const Tensor& a, const Tensor& b) {
    Tensor out({a.numel() + b.numel()});
    std::copy_n(a.data(), a.numel(), out.data());
    std::copy_n(b.data(), b.numel(), out.data() + a.numel());
    return out;
  }

  int64_t channels_ = 256;
  nn::Linear hidden_, out_;
};

/// (F_s, F_d) -> image in [0, 1], two nearest-neighbour 2x upsamples.
class InpaintDecoder {
 public:
  InpaintDecoder() = default;
  InpaintDecoder(const NetworkConfig& cfg, std::mt19937_64& rng) {
    const int64_t f = cfg.feature_channels, b = cfg.base_channels;
    fuse_ = nn::Conv2d(2 * f, f, 3, 1, rng);
    for (int64_t i = 0; i < cfg.res_blocks; ++i) res_.emplace_back(f, rng);
    up1_ = nn::Conv2d(f, 2 * b, 3, 1, rng);
    up2_ = nn::Conv2d(2 * b, b, 3, 1, rng);
    rgb_ = nn::Conv2d(b, 3, 3, 1, rng);
  }

  Var operator()(const Var& f_s, const Var& f_d) const {
    if (f_s.shape() != f_d.shape() || f_s.value().rank() != 3)
      throw ContractViolation("inpaint_decode: source " + to_string(f_s.shape()) + " vs deformed " +
                              to_string(f_d.shape()));
    Var x = ops::leaky_relu(fuse_(ops::concat_channels({f_s, f_d})));
    for (const auto& r : res_) x = r(x);
    x = ops::leaky_relu(up1_(ops::upsample_nearest2(x)));
    x = ops::leaky_relu(up2_(ops::upsample_nearest2(x)));
    return ops::sigmoid(rgb_(x));
  }

  void collect(nn::ParamList& out, const std::string& prefix) const {
    fuse_.collect(out, prefix + ".fuse");
    for (std::size_t i = 0; i < res_.size(); ++i) res_[i].collect(out, prefix + ".res" + std::to_string(i));
    up1_.collect(out, prefix + ".up1");
    up2_.collect(out, prefix + ".up2");
    rgb_.collect(out, prefix + ".rgb");
  }

 private:
  nn::Conv2d fuse_, up1_, up2_, rgb_;
  std::vector<nn::ResBlock> res_;
};

struct DinetOutput {
  Var image;
  Var source_features;
  Var reference_features;
  Var deformed_features;
  Var audio_features;
  Var alignment_features;
  AffineParamVars affine;
};

enum class Warp { Adaat, Bypass };

/// Deformation part (encoders, affine head, AdaAT) plus inpainting decoder.
class Dinet {
 public:
  explicit Dinet(NetworkConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.seed);
    audio_ = AudioEncoder(cfg_.audio_window, rng);
    source_ = FeatureEncoder(3, cfg_, rng);
    reference_ = FeatureEncoder(3 * kReferenceCount, cfg_, rng);
    alignment_ = AlignmentEncoder(cfg_, rng);
    head_ = AffineHead(cfg_.feature_channels, rng);
    decoder_ = InpaintDecoder(cfg_, rng);
  }

  const NetworkConfig& config() const noexcept { return cfg_; }

  Var encode_audio(const Var& audio) const { return audio_(audio); }
  Var encode_source(const Var& img) const { return source_(img, "encode_source"); }
  Var encode_reference(const Var& refs) const { return reference_(refs, "encode_reference"); }
  Var encode_alignment(const Var& f_s, const Var& f_ref) const { return alignment_(f_s, f_ref); }
  AffineParamVars predict_affine(const Var& f_audio, const Var& f_align) const { return head_(f_audio, f_align); }
  Var inpaint_decode(const Var& f_s, const Var& f_d) const { return decoder_(f_s, f_d); }

  /// Masked source (3xHxW), reference stack (15xHxW), audio window (Tx29).
  DinetOutput forward(const Var& source, const Var& refs, const Var& audio, Warp warp = Warp::Adaat) const {
    if (source.value().rank() == 3 && refs.value().rank() == 3 &&
        (source.dim(1) != refs.dim(1) || source.dim(2) != refs.dim(2)))
      throw ContractViolation("dinet_forward: source " + to_string(source.shape()) + " and references " +
                              to_string(refs.shape()) + " differ in size");
    DinetOutput o;
    o.audio_features = encode_audio(audio);
    o.source_features = encode_source(source);
    o.reference_features = encode_reference(refs);
    o.alignment_features = encode_alignment(o.source_features, o.reference_features);
    o.affine = predict_affine(o.audio_features, o.alignment_features);
    o.deformed_features =
        warp == Warp::Adaat ? adaat_deform(o.reference_features, o.affine) : o.reference_features;
    o.image = inpaint_decode(o.source_features, o.deformed_features);
    return o;
  }

  Tensor infer(const Tensor& source, const Tensor& refs, const Tensor& audio) const {
    NoGradGuard ng;
    return forward(Var(source), Var(refs), Var(audio)).image.value();
  }

  nn::ParamList parameters() const {
    nn::ParamList p;
    audio_.collect(p, "audio_encoder");
    source_.collect(p, "source_encoder");
    reference_.collect(p, "reference_encoder");
    alignment_.collect(p, "alignment_encoder");
    head_.collect(p, "affine_head");
    decoder_.collect(p, "decoder");
    return p;
  }

 private:
  NetworkConfig cfg_;
  AudioEncoder audio_;
  FeatureEncoder source_, reference_;
  AlignmentEncoder alignment_;
  AffineHead head_;
  InpaintDecoder decoder_;
};

/// Patch discriminator: three stride-2 convolutions and a one-channel score
/// map at 1/8 resolution. No output squashing (least-squares objective).
class PatchDiscriminator {
 public:
  PatchDiscriminator() = default;
  PatchDiscriminator(int64_t in_ch, int64_t base, uint64_t seed) : in_ch_(in_ch) {
    std::mt19937_64 rng(seed);
    c1_ = nn::Conv2d(in_ch, base, 3, 2, rng);
    c2_ = nn::Conv2d(base, 2 * base, 3, 2, rng);
    c3_ = nn::Conv2d(2 * base, 4 * base, 3, 2, rng);
    score_ = nn::Conv2d(4 * base, 1, 3, 1, rng);
  }

  Var operator()(const Var& x) const {
    detail::require_image(x, in_ch_, in_ch_ == 3 ? "discriminate_frame" : "discriminate_sequence");
    Var h = ops::leaky_relu(c1_(x));
    h = ops::leaky_relu(c2_(h));
    h = ops::leaky_relu(c3_(h));
    return score_(h);
  }

  int64_t input_channels() const noexcept { return in_ch_; }

  nn::ParamList parameters(const std::string& prefix) const {
    nn::ParamList p;
    c1_.collect(p, prefix + ".conv1");
    c2_.collect(p, prefix + ".conv2");
    c3_.collect(p, prefix + ".conv3");
    score_.collect(p, prefix + ".score");
    return p;
  }

 private:
  int64_t in_ch_ = 3;
  nn::Conv2d c1_, c2_, c3_, score_;
};

inline PatchDiscriminator make_frame_discriminator(const NetworkConfig& cfg) {
  return PatchDiscriminator(3, cfg.base_channels, cfg.seed + 101);
}
inline PatchDiscriminator make_sequence_discriminator(const NetworkConfig& cfg) {
  return PatchDiscriminator(3 * kReferenceCount, cfg.base_channels, cfg.seed + 202);
}

/// Two-tower audio/visual sync scorer. score = sigmoid(a * cos(e_audio, e_mouth) + b).
class SyncNet {
 public:
  explicit SyncNet(NetworkConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.seed + 303);
    const int64_t b = cfg_.base_channels;
    audio_ = AudioEncoder(cfg_.audio_window, rng);
    v1_ = nn::Conv2d(3 * kReferenceCount, b, 3, 2, rng);
    v2_ = nn::Conv2d(b, 2 * b, 3, 2, rng);
    v3_ = nn::Conv2d(2 * b, 4 * b, 3, 2, rng);
    v4_ = nn::Conv2d(4 * b, 4 * b, 3, 2, rng);
    vfc_ = nn::Linear(4 * b, kEmbeddingDim, rng);
    logit_scale_ = Var(Tensor({1}, 5.0), true);
    logit_bias_ = Var(Tensor({1}, 0.0), true);
  }

  const NetworkConfig& config() const noexcept { return cfg_; }

  Var embed_audio(const Var& audio) const { return audio_(audio); }

  Var embed_mouths(const Var& mouths) const {
    const Tensor& m = mouths.value();
    if (m.rank() != 3 || m.dim(0) != 3 * kReferenceCount)
      throw ContractViolation("syncnet_score: expected 5 mouth frames (15 x M x M), got " + to_string(m.shape()));
    if (m.dim(1) != cfg_.mouth_size || m.dim(2) != cfg_.mouth_size)
      throw ContractViolation("syncnet_score: mouth crops must be " + std::to_string(cfg_.mouth_size) + "x" +
                              std::to_string(cfg_.mouth_size) + ", got " + to_string(m.shape()));
    Var h = ops::leaky_relu(v1_(ops::add_scalar(mouths, -0.5)));
    h = ops::leaky_relu(v2_(h));
    h = ops::leaky_relu(v3_(h));
    h = ops::leaky_relu(v4_(h));
    return vfc_(ops::global_avg_pool(h));
  }

  /// Confidence in [0, 1] that the audio window and the five mouths match.
  Var score(const Var& audio, const Var& mouths) const {
    Var cos = ops::cosine_similarity(embed_audio(audio), embed_mouths(mouths));
    return ops::sigmoid(ops::add(ops::mul(cos, logit_scale_), logit_bias_));
  }

  double score_value(const Tensor& audio, const Tensor& mouths) const {
    NoGradGuard ng;
    return score(Var(audio), Var(mouths)).value()[0];
  }

  nn::ParamList parameters() const {
    nn::ParamList p;
    audio_.collect(p, "syncnet.audio");
    v1_.collect(p, "syncnet.visual.conv1");
    v2_.collect(p, "syncnet.visual.conv2");
    v3_.collect(p, "syncnet.visual.conv3");
    v4_.collect(p, "syncnet.visual.conv4");
    vfc_.collect(p, "syncnet.visual.fc");
    p.push_back({"syncnet.logit_scale", logit_scale_});
    p.push_back({"syncnet.logit_bias", logit_bias_});
    return p;
  }

 private:
  NetworkConfig cfg_;
  AudioEncoder audio_;
  nn::Conv2d v1_, v2_, v3_, v4_;
  nn::Linear vfc_;
  Var logit_scale_, logit_bias_;
};

}  // namespace dinet
