#pragma once

// Procedural talking-face clips for tests and demos: a drifting cartoon face
// whose mouth opening follows feature 0 of a synthetic audio stream, with
// exact 68-point landmarks.

#include <cmath>
#include <numbers>
#include <string>

#include "dinet/audio.hpp"
#include "dinet/data.hpp"

namespace dinet {

struct SyntheticClipOptions {
  int64_t frame_h = 128;
  int64_t frame_w = 128;
  int64_t frames = 100;
  uint64_t seed = 0;         // audio stream and identity
  std::string identity = "synthetic";
};

namespace detail {

struct Ellipse {
  double cx, cy, rx, ry;
  /// Anti-aliased coverage of pixel centre (x, y).
  double coverage(double x, double y) const {
    const double dx = (x - cx) / rx, dy = (y - cy) / ry;
    const double d = (std::sqrt(dx * dx + dy * dy) - 1.0) * std::min(rx, ry);
    return std::clamp(0.5 - d, 0.0, 1.0);
  }
};

struct FaceLayout {
  double cx, cy, a, b;  // face centre and semi-axes
  double open;          // mouth opening in [0, 1]
  double mouth_cy() const { return cy + 0.5 * b; }
  double mouth_rx() const { return 0.35 * a; }
  double inner_ry() const { return 0.02 * b + 0.14 * b * open; }
  double outer_ry() const { return inner_ry() + 0.05 * b; }
};

inline Landmarks layout_landmarks(const FaceLayout& f) {
  Landmarks lm{};
  auto put = [&](std::size_t i, double x, double y) {
    lm[2 * i] = x;
    lm[2 * i + 1] = y;
  };
  constexpr double pi = std::numbers::pi;
  for (std::size_t k = 0; k <= 16; ++k) {  // jaw
    const double th = pi * (1.0 - static_cast<double>(k) / 16.0);
    put(k, f.cx + f.a * std::cos(th), f.cy + f.b * std::sin(th));
  }
  for (std::size_t k = 0; k < 5; ++k) {  // brows
    const double t = static_cast<double>(k) / 4.0;
    put(17 + k, f.cx - f.a * (0.75 - 0.5 * t), f.cy - 0.45 * f.b);
    put(22 + k, f.cx + f.a * (0.25 + 0.5 * t), f.cy - 0.45 * f.b);
  }
  for (std::size_t k = 0; k < 4; ++k) put(27 + k, f.cx, f.cy - 0.35 * f.b + 0.133 * f.b * static_cast<double>(k));
  for (std::size_t k = 0; k < 5; ++k) put(31 + k, f.cx + f.a * (-0.2 + 0.1 * static_cast<double>(k)), f.cy + 0.12 * f.b);
  for (std::size_t e = 0; e < 2; ++e) {  // eyes
    const double ex = f.cx + (e ? 0.4 : -0.4) * f.a, ey = f.cy - 0.28 * f.b;
    for (std::size_t k = 0; k < 6; ++k) {
      const double th = pi * static_cast<double>(k) / 3.0;
      put(36 + 6 * e + k, ex - 0.18 * f.a * std::cos(th), ey - 0.05 * f.b * std::sin(th));
    }
  }
  for (std::size_t k = 0; k < 12; ++k) {  // outer lips
    const double th = 2 * pi * static_cast<double>(k) / 12.0;
    put(48 + k, f.cx - f.mouth_rx() * std::cos(th), f.mouth_cy() - f.outer_ry() * std::sin(th));
  }
  for (std::size_t k = 0; k < 8; ++k) {  // inner lips
    const double th = 2 * pi * static_cast<double>(k) / 8.0;
    put(60 + k, f.cx - 0.8 * f.mouth_rx() * std::cos(th), f.mouth_cy() - f.inner_ry() * std::sin(th));
  }
  return lm;
}

}  // namespace detail

/// Static textured background shared by every frame of a clip.
inline double synthetic_background(int64_t c, int64_t y, int64_t x) {
  const double xf = static_cast<double>(x), yf = static_cast<double>(y);
  switch (c) {
    case 0: return 0.25 + 0.1 * std::sin(xf / 7.0) * std::cos(yf / 11.0);
    case 1: return 0.30 + 0.1 * std::cos(yf / 9.0);
    default: return 0.35 + 0.05 * std::sin((xf + yf) / 13.0);
  }
}

/// Mouth opening driven by an audio feature row.
inline double mouth_opening(const FeatureStream& s, int64_t t) { return 0.5 + 0.5 * s[t * kAudioFeatureDim]; }

inline ClipRecord make_synthetic_clip(const SyntheticClipOptions& opt) {
  if (opt.frames < 1 || opt.frame_h < 32 || opt.frame_w < 32) throw InvalidParameter("synthetic clip too small");
  ClipRecord clip;
  clip.identity = opt.identity;
  clip.features = SyntheticAudioProvider(opt.seed).stream(opt.frames);

  // Identity: skin tone and face size vary with the seed.
  const double tone = 0.1 * SyntheticAudioProvider::hash(opt.seed, -1, 0);
  const double skin[3] = {0.82 + tone, 0.62 + tone, 0.48 + tone};
  const double lip[3] = {0.70, 0.25, 0.25};
  const double dark[3] = {0.12, 0.04, 0.05};
  const double fh = static_cast<double>(opt.frame_h), fw = static_cast<double>(opt.frame_w);
  const double a = std::min(0.2 * fw, 0.2 * fh) * (1.0 + 0.05 * SyntheticAudioProvider::hash(opt.seed, -1, 1));
  const double b = 1.72 * a;

  for (int64_t t = 0; t < opt.frames; ++t) {
    const double tf = static_cast<double>(t);
    detail::FaceLayout f{fw / 2 + 0.02 * fw * std::sin(2 * std::numbers::pi * tf / 40.0),
                         0.47 * fh + 0.015 * fh * std::cos(2 * std::numbers::pi * tf / 50.0), a, b,
                         mouth_opening(clip.features, t)};
    const detail::Ellipse face{f.cx, f.cy, f.a, f.b};
    const detail::Ellipse eye_l{f.cx - 0.4 * f.a, f.cy - 0.28 * f.b, 0.16 * f.a, 0.05 * f.b};
    const detail::Ellipse eye_r{f.cx + 0.4 * f.a, f.cy - 0.28 * f.b, 0.16 * f.a, 0.05 * f.b};
    const detail::Ellipse nose{f.cx, f.cy + 0.05 * f.b, 0.08 * f.a, 0.12 * f.b};
    const detail::Ellipse lips{f.cx, f.mouth_cy(), f.mouth_rx(), f.outer_ry()};
    const detail::Ellipse inner{f.cx, f.mouth_cy(), 0.8 * f.mouth_rx(), f.inner_ry()};

    Image img({3, opt.frame_h, opt.frame_w});
    for (int64_t y = 0; y < opt.frame_h; ++y)
      for (int64_t x = 0; x < opt.frame_w; ++x) {
        const double xf = static_cast<double>(x), yf = static_cast<double>(y);
        const double cf = face.coverage(xf, yf);
        if (cf == 0.0) {
          for (int64_t c = 0; c < 3; ++c) img.at(c, y, x) = synthetic_background(c, y, x);
          continue;
        }
        const double shade = 1.0 - 0.15 * std::pow((yf - f.cy) / f.b, 2);
        const double ce = std::max(eye_l.coverage(xf, yf), eye_r.coverage(xf, yf));
        const double cn = 0.3 * nose.coverage(xf, yf);
        const double cl = lips.coverage(xf, yf), ci = inner.coverage(xf, yf);
        for (int64_t c = 0; c < 3; ++c) {
          double v = skin[c] * shade;
          v = v * (1 - cn) + 0.8 * skin[c] * cn;
          v = v * (1 - ce) + dark[c] * ce;
          v = v * (1 - cl) + lip[c] * cl;
          v = v * (1 - ci) + dark[c] * ci;
          img.at(c, y, x) = cf * v + (1 - cf) * synthetic_background(c, y, x);
        }
      }
    clip.frames.push_back(quantized(std::move(img)));
    clip.landmarks.emplace_back(detail::layout_landmarks(f));
  }
  return clip;
}

/// Several synthetic identities, clip i seeded with seed + i.
inline std::vector<ClipRecord> make_synthetic_dataset(int64_t clips, const SyntheticClipOptions& base) {
  std::vector<ClipRecord> out;
  for (int64_t i = 0; i < clips; ++i) {
    SyntheticClipOptions o = base;
    o.seed = base.seed + static_cast<uint64_t>(i);
    o.identity = base.identity + "_" + std::to_string(i);
    out.push_back(make_synthetic_clip(o));
  }
  return out;
}

}  // namespace dinet
