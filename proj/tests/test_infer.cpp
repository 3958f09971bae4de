#include <gtest/gtest.h>

#include <random>

#include "dinet/infer.hpp"
#include "dinet/synthetic.hpp"
#include "test_util.hpp"

namespace dinet {
namespace {

using testing::random_tensor;

// Box with integer-aligned edges well inside a 60x80 frame.
CropTransform interior_transform() {
  CropTransform t;
  t.x0 = 20.0, t.y0 = 10.0, t.box_w = 36.0, t.box_h = 48.0;
  t.out_h = 32, t.out_w = 24;
  t.frame_h = 60, t.frame_w = 80;
  return t;
}

TEST(PasteBack, OwnCropIsExactRoundTrip) {
  std::mt19937_64 rng(1);
  const Image frame = random_tensor({3, 60, 80}, rng, 0, 1);
  CropTransform t = interior_transform();
  t.x0 = 17.3, t.y0 = 8.6, t.box_w = 41.2;
  const Image face = apply_crop(frame, t);
  for (int64_t band : {0, 5}) EXPECT_EQ(paste_back(frame, face, t, band), frame) << band;
}

TEST(PasteBack, FeatherRampsLinearly) {
  const CropTransform t = interior_transform();
  const PixelRect r = t.footprint();
  ASSERT_EQ(r, (PixelRect{10, 20, 48, 36}));
  const Image frame({3, 60, 80}, 0.2), face({3, 32, 24}, 0.8);
  const Image out = paste_back(frame, face, t, 5);
  const int64_t x = r.left + r.width / 2;
  // Band centre (2 px in) is the average of frame and face.
  EXPECT_NEAR(out.at(0, r.top + 2, x), 0.5, 1e-12);
  EXPECT_NEAR(out.at(1, r.bottom() - 3, x), 0.5, 1e-12);
  EXPECT_NEAR(out.at(2, r.top, x), 0.2 + 0.6 * 0.1, 1e-12);
  EXPECT_NEAR(out.at(0, r.top + 5, x), 0.8, 1e-12);
  EXPECT_NEAR(out.at(0, 30, r.left + 2), 0.5, 1e-12);
  EXPECT_EQ(out.at(0, r.top - 1, x), 0.2);

  const Image hard = paste_back(frame, face, t, 0);
  EXPECT_NEAR(hard.at(0, r.top, x), 0.8, 1e-12);
}

TEST(PasteBack, OnlyFootprintChanges) {
  std::mt19937_64 rng(2);
  const Image frame = random_tensor({3, 60, 80}, rng, 0, 1), face = random_tensor({3, 32, 24}, rng, 0, 1);
  CropTransform t = interior_transform();
  t.x0 = 50.5;  // runs off the right border
  const PixelRect r = t.footprint();
  EXPECT_EQ(r.right(), 80);
  const Image out = paste_back(frame, face, t, 5);
  int64_t changed = 0;
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < 60; ++y)
      for (int64_t x = 0; x < 80; ++x) {
        if (!r.contains(y, x)) {
          ASSERT_EQ(out.at(c, y, x), frame.at(c, y, x)) << y << "," << x;
        } else {
          changed += out.at(c, y, x) != frame.at(c, y, x);
        }
      }
  EXPECT_GT(changed, 0);
  // The frame-border edge is not feathered: full weight right at it.
  const Image flat = paste_back(Image({3, 60, 80}, 0.2), Image({3, 32, 24}, 0.8), t, 5);
  EXPECT_NEAR(flat.at(0, 30, 79), 0.8, 1e-12);
}

TEST(PasteBack, FullHdFrameKeepsSize) {
  Landmarks lm{};
  for (std::size_t i = 0; i < 68; ++i) {
    lm[2 * i] = 800.0 + 300.0 * static_cast<double>(i % 9) / 8.0;
    lm[2 * i + 1] = 400.0 + 380.0 * static_cast<double>(i / 9) / 7.0;
  }
  const Image frame({3, 1080, 1920}, 0.3);
  const auto [face, t] = crop_face(frame, lm);
  EXPECT_EQ(face.shape(), (Shape{3, 416, 320}));
  const Image out = paste_back(frame, Image({3, 416, 320}, 0.6), t);
  EXPECT_EQ(out.shape(), (Shape{3, 1080, 1920}));
  EXPECT_NEAR(out.at(1, 600, 950), 0.6, 1e-12);
  EXPECT_EQ(out.at(1, 10, 10), 0.3);
}

TEST(PasteBack, RejectsMismatches) {
  const CropTransform t = interior_transform();
  EXPECT_THROW(paste_back(Image({3, 60, 81}), Image({3, 32, 24}), t), ContractViolation);
  EXPECT_THROW(paste_back(Image({3, 60, 80}), Image({3, 32, 25}), t), ContractViolation);
  EXPECT_THROW(paste_back(Image({3, 60, 80}), Image({1, 32, 24}), t), ContractViolation);
}

TEST(References, EvenlySpaced) {
  std::vector<int64_t> c(10);
  std::iota(c.begin(), c.end(), 0);
  EXPECT_EQ(even_reference_indices(c), (std::array<int64_t, 5>{1, 3, 5, 7, 9}));
  for (int64_t n : {1, 3, 7, 23, 250}) {
    std::vector<int64_t> cand;
    for (int64_t i = 0; i < n; ++i) cand.push_back(3 * i + 1);
    const auto idx = even_reference_indices(cand);
    for (int k = 0; k < 5; ++k)
      EXPECT_EQ(idx[static_cast<std::size_t>(k)],
                cand[static_cast<std::size_t>(std::floor((k + 0.5) * static_cast<double>(n) / 5.0))]);
  }
  EXPECT_THROW(even_reference_indices({}), IngestionError);
}

NetworkConfig toy() {
  NetworkConfig n = NetworkConfig::toy();
  n.seed = 3;
  return n;
}

// Fresh networks ignore audio (identity affine head); give the head weights.
Dinet audio_sensitive_net() {
  Dinet net(toy());
  std::mt19937_64 rng(9);
  for (auto p : net.parameters())
    if (p.name.rfind("affine_head", 0) == 0) p.var.mutable_value() = nn::uniform_init(p.var.shape(), 0.5, rng);
  return net;
}

TEST(DubVideo, DurationLoopingAndLocality) {
  const ClipRecord src = make_synthetic_clip({.frame_h = 96, .frame_w = 96, .frames = 7, .seed = 1});
  const FeatureStream audio = SyntheticAudioProvider(77).stream(frames_for_duration(0.8));
  ASSERT_EQ(audio.dim(0), 20);
  const Dinet net = audio_sensitive_net();
  DubReport report;
  const auto out = dub_frames(net, src.frames, src.landmarks, audio, {.feather_band = 0}, &report);
  ASSERT_EQ(out.size(), 20U);
  EXPECT_EQ(report.frames, 20);
  EXPECT_TRUE(report.copied.empty());
  EXPECT_EQ(report.references, (std::array<int64_t, 5>{0, 2, 3, 4, 6}));
  for (int64_t t = 0; t < 20; ++t) {
    const Image& frame = src.frames[static_cast<std::size_t>(t % 7)];
    const PixelRect r = crop_transform(*src.landmarks[static_cast<std::size_t>(t % 7)], 96, 96, 64, 48).footprint();
    ASSERT_EQ(out[static_cast<std::size_t>(t)].shape(), frame.shape());
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t y = 0; y < 96; ++y)
        for (int64_t x = 0; x < 96; ++x)
          if (!r.contains(y, x)) ASSERT_EQ(out[static_cast<std::size_t>(t)].at(c, y, x), frame.at(c, y, x));
  }
  EXPECT_EQ(dub_frames(net, src.frames, src.landmarks, audio, {.feather_band = 0}), out);
}

TEST(DubVideo, MouthFollowsAudio) {
  const ClipRecord src = make_synthetic_clip({.frame_h = 96, .frame_w = 96, .frames = 6, .seed = 2});
  const Dinet net = audio_sensitive_net();
  const auto a = dub_frames(net, src.frames, src.landmarks, SyntheticAudioProvider(5).stream(6));
  const auto b = dub_frames(net, src.frames, src.landmarks, SyntheticAudioProvider(6).stream(6));
  for (std::size_t t = 0; t < 6; ++t) {
    const CropTransform tr = crop_transform(*src.landmarks[t], 96, 96, 64, 48);
    const PixelRect m = mouth_rect(64, 48);
    const Image fa = apply_crop(a[t], tr), fb = apply_crop(b[t], tr);
    double diff = 0;
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t y = m.top; y < m.bottom(); ++y)
        for (int64_t x = m.left; x < m.right(); ++x) diff += std::abs(fa.at(c, y, x) - fb.at(c, y, x));
    EXPECT_GT(diff / static_cast<double>(3 * m.height * m.width), 0.0) << t;
  }
}

TEST(DubVideo, FramesWithoutFaceAreCopied) {
  ClipRecord src = make_synthetic_clip({.frame_h = 96, .frame_w = 96, .frames = 6, .seed = 3});
  src.landmarks[2].reset();
  const Dinet net(toy());
  DubReport report;
  const auto out = dub_frames(net, src.frames, src.landmarks, SyntheticAudioProvider(1).stream(9), {}, &report);
  EXPECT_EQ(report.copied, (std::vector<int64_t>{2, 8}));
  EXPECT_EQ(out[2], src.frames[2]);
  EXPECT_EQ(out[8], src.frames[2]);
  for (auto i : report.references) EXPECT_NE(i, 2);

  for (auto& lm : src.landmarks) lm.reset();
  EXPECT_THROW(dub_frames(net, src.frames, src.landmarks, SyntheticAudioProvider(1).stream(3)), IngestionError);
  src.landmarks.pop_back();
  EXPECT_THROW(dub_frames(net, src.frames, src.landmarks, SyntheticAudioProvider(1).stream(3)), IngestionError);
}

}  // namespace
}  // namespace dinet
