#pragma once

#include <functional>
#include <limits>
#include <optional>
#include <vector>

#include "dinet/audio.hpp"
#include "dinet/data.hpp"
#include "dinet/networks.hpp"

namespace dinet {

/// Feather weight for a pixel `d` whole pixels inside the footprint edge:
/// ramps linearly over `band` pixels, 1 beyond it (and everywhere for band 0).
inline double feather_weight(int64_t d, int64_t band) {
  if (d >= band) return 1.0;
  return (static_cast<double>(d) + 0.5) / static_cast<double>(band);
}

/// Writes `face` (generated through `t`) back into `frame`. Composites the
/// residual: out = frame + w * resample(face - crop(frame)), so pasting the
/// frame's own crop returns the frame bit-for-bit. Pixels outside
/// t.footprint() are never touched. Edges of the footprint that coincide
/// with the frame border are not feathered.
inline Image paste_back(Image frame, const Image& face, const CropTransform& t, int64_t band = 5) {
  require_frame_for(frame, t, "paste_back");
  if (face.rank() != 3 || face.dim(0) != 3 || face.dim(1) != t.out_h || face.dim(2) != t.out_w)
    throw ContractViolation("paste_back: face is " + to_string(face.shape()) + ", transform expects 3x" +
                            std::to_string(t.out_h) + "x" + std::to_string(t.out_w));
  if (band < 0) throw ContractViolation("paste_back: negative feather band");
  Tensor residual = face;
  const Image base = apply_crop(frame, t);
  for (int64_t i = 0; i < residual.numel(); ++i) residual[i] -= base[i];

  const PixelRect r = t.footprint();
  constexpr int64_t kFar = std::numeric_limits<int64_t>::max() / 4;
  for (int64_t y = r.top; y < r.bottom(); ++y) {
    const int64_t dy = std::min(r.top > 0 ? y - r.top : kFar, r.bottom() < t.frame_h ? r.bottom() - 1 - y : kFar);
    for (int64_t x = r.left; x < r.right(); ++x) {
      const int64_t dx =
          std::min(r.left > 0 ? x - r.left : kFar, r.right() < t.frame_w ? r.right() - 1 - x : kFar);
      const double w = feather_weight(std::min(dy, dx), band);
      const auto [u, v] = t.to_crop(static_cast<double>(x), static_cast<double>(y));
      for (int64_t c = 0; c < 3; ++c) frame.at(c, y, x) += w * ops::sample_clamped(residual, c, v, u);
    }
  }
  return frame;
}

/// Reference frames for inference: 5 indices spread evenly over `candidates`
/// (index k takes candidate floor((k + 0.5) * n / 5)).
inline std::array<int64_t, kReferenceCount> even_reference_indices(const std::vector<int64_t>& candidates) {
  if (candidates.empty()) throw IngestionError("no frame of the source video has a face");
  const auto n = static_cast<int64_t>(candidates.size());
  std::array<int64_t, kReferenceCount> idx{};
  for (int64_t k = 0; k < kReferenceCount; ++k)
    idx[static_cast<std::size_t>(k)] = candidates[static_cast<std::size_t>((2 * k + 1) * n / (2 * kReferenceCount))];
  return idx;
}

struct DubOptions {
  int64_t feather_band = 5;
};

struct DubReport {
  int64_t frames = 0;
  /// Output frames whose source frame had no face (copied unchanged).
  std::vector<int64_t> copied;
  std::array<int64_t, kReferenceCount> references{};
};

using FrameSource = std::function<Image(int64_t)>;
using FrameSink = std::function<void(int64_t, const Image&)>;

/// Dubs `source_frames` frames (fetched on demand) to `audio`: one output
/// frame per audio feature row, source frames looping when the audio is
/// longer. Output frame t uses source frame t mod n, the audio window centred
/// on t and a fixed reference stack.
inline DubReport dub_video(const Dinet& net, const FrameSource& source, int64_t source_frames,
                           const std::vector<std::optional<Landmarks>>& landmarks, const FeatureStream& audio,
                           const FrameSink& sink, const DubOptions& opt = {}) {
  require_stream(audio, "dub_video");
  if (source_frames < 1) throw IngestionError("source video has no frames");
  if (static_cast<int64_t>(landmarks.size()) != source_frames)
    throw IngestionError("source video has " + std::to_string(source_frames) + " frames but " +
                         std::to_string(landmarks.size()) + " landmark entries");
  const NetworkConfig& cfg = net.config();

  // Crops of every source frame with a face; reused on each loop.
  std::vector<std::optional<CroppedFace>> crops(static_cast<std::size_t>(source_frames));
  std::vector<int64_t> with_face;
  for (int64_t i = 0; i < source_frames; ++i) {
    const auto& lm = landmarks[static_cast<std::size_t>(i)];
    if (!lm) continue;
    crops[static_cast<std::size_t>(i)] = crop_face(source(i), *lm, cfg.height, cfg.width);
    with_face.push_back(i);
  }
  DubReport report;
  report.references = even_reference_indices(with_face);
  std::vector<Image> ref_faces;
  for (auto i : report.references) ref_faces.push_back(crops[static_cast<std::size_t>(i)]->face);
  const Tensor refs = concat_channels(ref_faces);

  report.frames = audio.dim(0);
  for (int64_t t = 0; t < report.frames; ++t) {
    const int64_t s = t % source_frames;
    Image frame = source(s);
    const auto& crop = crops[static_cast<std::size_t>(s)];
    if (!crop) {
      report.copied.push_back(t);
      sink(t, frame);
      continue;
    }
    const Image out = net.infer(mask_mouth(crop->face), refs, audio_window(audio, t, cfg.audio_window));
    sink(t, paste_back(std::move(frame), out, crop->transform, opt.feather_band));
  }
  return report;
}

/// In-memory convenience form.
inline std::vector<Image> dub_frames(const Dinet& net, const std::vector<Image>& frames,
                                     const std::vector<std::optional<Landmarks>>& landmarks,
                                     const FeatureStream& audio, const DubOptions& opt = {},
                                     DubReport* report = nullptr) {
  std::vector<Image> out;
  const DubReport r = dub_video(
      net, [&](int64_t i) { return frames.at(static_cast<std::size_t>(i)); }, static_cast<int64_t>(frames.size()),
      landmarks, audio, [&](int64_t, const Image& f) { out.push_back(f); }, opt);
  if (report) *report = r;
  return out;
}

}  // namespace dinet
