#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dinet/audio.hpp"
#include "dinet/image.hpp"
#include "dinet/ops.hpp"

namespace dinet {

/// 68 (x, y) points in full-frame pixel-index coordinates, x0 y0 x1 y1 ...
using Landmarks = std::array<double, 136>;

/// Uniform integer in [0, n) from raw generator output (rejection sampling;
/// identical on every platform, unlike std::uniform_int_distribution).
inline uint64_t uniform_index(std::mt19937_64& rng, uint64_t n) {
  if (n == 0) throw InvalidParameter("uniform_index: empty range");
  const uint64_t threshold = (0 - n) % n;
  for (;;) {
    const uint64_t r = rng();
    if (r >= threshold) return r % n;
  }
}

// ---------------------------------------------------------------------------
// Crop geometry

struct PixelRect {
  int64_t top = 0, left = 0, height = 0, width = 0;
  int64_t bottom() const { return top + height; }  // exclusive
  int64_t right() const { return left + width; }   // exclusive
  bool contains(int64_t y, int64_t x) const { return y >= top && y < bottom() && x >= left && x < right(); }
  friend bool operator==(const PixelRect&, const PixelRect&) = default;
};

/// Maps between a full frame and an out_h x out_w face crop. The crop samples
/// the box [x0, x0 + box_w) x [y0, y0 + box_h); crop pixel u has its centre at
/// full-frame x = x0 + (u + 0.5) * box_w / out_w - 0.5.
struct CropTransform {
  double x0 = 0, y0 = 0, box_w = 1, box_h = 1;
  int64_t out_h = 416, out_w = 320;
  int64_t frame_h = 0, frame_w = 0;

  double sx() const { return box_w / static_cast<double>(out_w); }
  double sy() const { return box_h / static_cast<double>(out_h); }

  std::array<double, 2> to_full(double u, double v) const { return {x0 + (u + 0.5) * sx() - 0.5, y0 + (v + 0.5) * sy() - 0.5}; }
  std::array<double, 2> to_crop(double x, double y) const { return {(x + 0.5 - x0) / sx() - 0.5, (y + 0.5 - y0) / sy() - 0.5}; }

  /// Full-frame pixels whose centres fall inside the box, clipped to the frame.
  PixelRect footprint() const {
    const auto l = std::max<int64_t>(0, static_cast<int64_t>(std::ceil(x0 - 0.5)));
    const auto t = std::max<int64_t>(0, static_cast<int64_t>(std::ceil(y0 - 0.5)));
    const auto r = std::min<int64_t>(frame_w, static_cast<int64_t>(std::floor(x0 + box_w - 0.5)) + 1);
    const auto b = std::min<int64_t>(frame_h, static_cast<int64_t>(std::floor(y0 + box_h - 0.5)) + 1);
    return {t, l, std::max<int64_t>(0, b - t), std::max<int64_t>(0, r - l)};
  }

  friend bool operator==(const CropTransform&, const CropTransform&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(CropTransform, x0, y0, box_w, box_h, out_h, out_w, frame_h, frame_w)

/// Face box from landmarks: the landmark bounding box grown 20% upward, 10%
/// on each side and 5% downward, then widened or heightened symmetrically to
/// the out_h : out_w aspect.
inline CropTransform crop_transform(const Landmarks& lm, int64_t frame_h, int64_t frame_w, int64_t out_h,
                                    int64_t out_w) {
  double xmin = std::numeric_limits<double>::infinity(), ymin = xmin, xmax = -xmin, ymax = -xmin;
  for (std::size_t i = 0; i < 68; ++i) {
    const double x = lm[2 * i], y = lm[2 * i + 1];
    if (!std::isfinite(x) || !std::isfinite(y)) throw IngestionError("landmark " + std::to_string(i) + " is not finite");
    if (x < 0 || y < 0 || x > static_cast<double>(frame_w - 1) || y > static_cast<double>(frame_h - 1))
      throw IngestionError("landmark " + std::to_string(i) + " lies outside the frame");
    xmin = std::min(xmin, x);
    xmax = std::max(xmax, x);
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
  }
  const double bw = xmax - xmin, bh = ymax - ymin;
  if (!(bw > 0) || !(bh > 0)) throw IngestionError("degenerate landmarks: zero-area face box");
  double x0 = xmin - 0.10 * bw, w = 1.20 * bw;
  double y0 = ymin - 0.20 * bh, h = 1.25 * bh;
  const double aspect = static_cast<double>(out_h) / static_cast<double>(out_w);
  if (h / w < aspect) {
    const double nh = w * aspect;
    y0 -= 0.5 * (nh - h);
    h = nh;
  } else {
    const double nw = h / aspect;
    x0 -= 0.5 * (nw - w);
    w = nw;
  }
  return {x0, y0, w, h, out_h, out_w, frame_h, frame_w};
}

inline void require_frame_for(const Image& frame, const CropTransform& t, const char* what) {
  require_rgb(frame, what);
  if (frame.dim(1) != t.frame_h || frame.dim(2) != t.frame_w)
    throw ContractViolation(std::string(what) + ": transform was built for a " + std::to_string(t.frame_h) + "x" +
                            std::to_string(t.frame_w) + " frame, got " + to_string(frame.shape()));
}

/// Bilinear crop (border clamp) of `frame` through `t`.
inline Image apply_crop(const Image& frame, const CropTransform& t) {
  require_frame_for(frame, t, "apply_crop");
  Image out({3, t.out_h, t.out_w});
  for (int64_t v = 0; v < t.out_h; ++v)
    for (int64_t u = 0; u < t.out_w; ++u) {
      const auto [x, y] = t.to_full(static_cast<double>(u), static_cast<double>(v));
      for (int64_t c = 0; c < 3; ++c) out.at(c, v, u) = ops::sample_clamped(frame, c, y, x);
    }
  return out;
}

struct CroppedFace {
  Image face;
  CropTransform transform;
};

inline CroppedFace crop_face(const Image& frame, const Landmarks& lm, int64_t out_h = 416, int64_t out_w = 320) {
  require_rgb(frame, "crop_face");
  const CropTransform t = crop_transform(lm, frame.dim(1), frame.dim(2), out_h, out_w);
  return {apply_crop(frame, t), t};
}

// ---------------------------------------------------------------------------
// Mouth region

/// Mouth rectangle in face coordinates: 256x256 at rows 160..415, columns
/// 32..287 of a 416x320 face, scaled proportionally for other sizes (bottom
/// aligned, horizontally centred).
inline PixelRect mouth_rect(int64_t h, int64_t w) {
  const auto mh = static_cast<int64_t>(std::lround(256.0 * static_cast<double>(h) / 416.0));
  const auto mw = static_cast<int64_t>(std::lround(256.0 * static_cast<double>(w) / 320.0));
  return {h - mh, (w - mw) / 2, mh, mw};
}

inline Image mask_mouth(Image face) {
  require_rgb(face, "mask_mouth");
  const PixelRect r = mouth_rect(face.dim(1), face.dim(2));
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = r.top; y < r.bottom(); ++y) std::fill_n(&face.at(c, y, r.left), r.width, 0.0);
  return face;
}

/// Mouth rectangle resized to size x size (syncnet input).
inline Var mouth_crop(const Var& face, int64_t size) {
  const PixelRect r = mouth_rect(face.dim(1), face.dim(2));
  return ops::resize_bilinear(ops::crop_region(face, r.top, r.left, r.height, r.width), size, size);
}

inline Tensor mouth_crop(const Image& face, int64_t size) {
  NoGradGuard ng;
  return mouth_crop(Var(face), size).value();
}

// ---------------------------------------------------------------------------
// Clips

/// Full-frame clip at 25 fps. Frames without a detected face carry no landmarks.
struct ClipRecord {
  std::string identity;
  double fps = kVideoFps;
  std::vector<Image> frames;
  std::vector<std::optional<Landmarks>> landmarks;
  FeatureStream features;

  int64_t size() const { return static_cast<int64_t>(frames.size()); }

  void validate() const {
    if (fps != kVideoFps) throw IngestionError("clip '" + identity + "' is not 25 fps");
    if (frames.empty()) throw IngestionError("clip '" + identity + "' has no frames");
    if (landmarks.size() != frames.size() || features.rank() != 2 || features.dim(0) != size())
      throw IngestionError("clip '" + identity + "': " + std::to_string(frames.size()) + " frames, " +
                           std::to_string(landmarks.size()) + " landmark sets, " +
                           std::to_string(features.rank() == 2 ? features.dim(0) : 0) + " feature rows");
    require_stream(features, "clip features");
  }
};

/// Cropped faces of a clip, ready for sampling.
struct FaceClip {
  std::string identity;
  std::vector<Image> faces;
  std::vector<CropTransform> transforms;
  FeatureStream features;

  int64_t size() const { return static_cast<int64_t>(faces.size()); }
  int64_t height() const { return faces.front().dim(1); }
  int64_t width() const { return faces.front().dim(2); }

  void validate() const {
    if (faces.empty()) throw IngestionError("clip '" + identity + "' has no faces");
    if (transforms.size() != faces.size() || features.rank() != 2 || features.dim(0) != size())
      throw IngestionError("clip '" + identity + "': face, transform and feature counts differ");
    if (!features.all_finite()) throw IngestionError("clip '" + identity + "': audio features are not finite");
    for (const auto& f : faces)
      if (f.shape() != faces.front().shape()) throw IngestionError("clip '" + identity + "': face sizes differ");
  }
};

inline FaceClip prepare_clip(const ClipRecord& clip, int64_t out_h, int64_t out_w) {
  clip.validate();
  FaceClip fc{clip.identity, {}, {}, clip.features};
  for (int64_t i = 0; i < clip.size(); ++i) {
    const auto& lm = clip.landmarks[static_cast<std::size_t>(i)];
    if (!lm) throw IngestionError("clip '" + clip.identity + "' frame " + std::to_string(i) + " has no face");
    auto [face, t] = crop_face(clip.frames[static_cast<std::size_t>(i)], *lm, out_h, out_w);
    fc.faces.push_back(std::move(face));
    fc.transforms.push_back(t);
  }
  return fc;
}

// ---------------------------------------------------------------------------
// Sampling

inline constexpr int64_t kDefaultExclusionRadius = 5;

/// Five distinct frame indices drawn uniformly (in random order) from those
/// farther than `radius` frames from `src`.
inline std::array<int64_t, kReferenceCount> select_reference_indices(int64_t clip_len, int64_t src, int64_t radius,
                                                                     std::mt19937_64& rng) {
  if (src < 0 || src >= clip_len) throw InvalidParameter("source index outside the clip");
  std::vector<int64_t> eligible;
  for (int64_t i = 0; i < clip_len; ++i)
    if (std::abs(i - src) > radius) eligible.push_back(i);
  if (static_cast<int64_t>(eligible.size()) < kReferenceCount)
    throw SamplingError("clip of " + std::to_string(clip_len) + " frames has " + std::to_string(eligible.size()) +
                        " reference candidates for source " + std::to_string(src) + " at radius " +
                        std::to_string(radius) + "; need 5");
  std::array<int64_t, kReferenceCount> out{};
  for (std::size_t k = 0; k < out.size(); ++k) {
    const auto j = k + uniform_index(rng, eligible.size() - k);
    std::swap(eligible[k], eligible[j]);
    out[k] = eligible[k];
  }
  return out;
}

/// Concatenates five faces into a 15 x H x W stack.
inline Tensor reference_stack(const std::vector<Image>& faces, const std::array<int64_t, kReferenceCount>& idx) {
  std::vector<Tensor> parts;
  for (int64_t i : idx) parts.push_back(faces.at(static_cast<std::size_t>(i)));
  return concat_channels(parts);
}

inline Tensor select_references(const FaceClip& clip, int64_t src, std::mt19937_64& rng,
                                 int64_t radius = kDefaultExclusionRadius) {
  return reference_stack(clip.faces, select_reference_indices(clip.size(), src, radius, rng));
}

struct TrainingSample {
  Image source;      // mouth-masked face at src_index
  Image target;      // unmasked face at src_index
  Tensor references;  // 15 x H x W
  Tensor audio;       // T x 29
  PixelRect mouth;
  int64_t src_index = 0;
  std::array<int64_t, kReferenceCount> ref_indices{};
};

inline TrainingSample build_training_sample(const FaceClip& clip, int64_t src, std::mt19937_64& rng,
                                            int64_t radius = kDefaultExclusionRadius, int64_t audio_T = 5) {
  TrainingSample s;
  s.src_index = src;
  s.ref_indices = select_reference_indices(clip.size(), src, radius, rng);
  s.target = clip.faces.at(static_cast<std::size_t>(src));
  s.source = mask_mouth(s.target);
  s.references = reference_stack(clip.faces, s.ref_indices);
  s.audio = audio_window(clip.features, src, audio_T);
  s.mouth = mouth_rect(s.target.dim(1), s.target.dim(2));
  return s;
}

// ---------------------------------------------------------------------------
// Landmark files
//
// CSV: one line per frame, 136 comma-separated numbers (x0,y0,...,x67,y67);
// an empty line or "none" marks a frame without a face.
// Binary (.lmk): magic "LMK68F32", uint32 frame count, then 136 float32 per
// frame; a NaN first value marks a frame without a face.

inline std::vector<std::optional<Landmarks>> read_landmarks(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IngestionError("cannot open landmark file " + path.string());
  std::vector<std::optional<Landmarks>> out;
  if (path.extension() == ".lmk") {
    char magic[8];
    uint32_t n = 0;
    is.read(magic, 8);
    is.read(reinterpret_cast<char*>(&n), 4);
    if (!is || std::memcmp(magic, "LMK68F32", 8) != 0) throw IngestionError(path.string() + ": bad landmark header");
    for (uint32_t f = 0; f < n; ++f) {
      std::array<float, 136> raw{};
      is.read(reinterpret_cast<char*>(raw.data()), sizeof(raw));
      if (!is) throw IngestionError(path.string() + ": truncated landmark data");
      if (std::isnan(raw[0])) {
        out.emplace_back();
        continue;
      }
      Landmarks lm{};
      std::copy(raw.begin(), raw.end(), lm.begin());
      out.emplace_back(lm);
    }
    return out;
  }
  std::string line;
  int64_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line == "none") {
      out.emplace_back();
      continue;
    }
    Landmarks lm{};
    std::stringstream ss(line);
    std::string cell;
    std::size_t k = 0;
    while (std::getline(ss, cell, ',')) {
      if (k >= lm.size()) throw IngestionError(path.string() + ":" + std::to_string(lineno) + ": more than 136 values");
      try {
        lm[k++] = std::stod(cell);
      } catch (const std::exception&) {
        throw IngestionError(path.string() + ":" + std::to_string(lineno) + ": bad number '" + cell + "'");
      }
    }
    if (k != lm.size())
      throw IngestionError(path.string() + ":" + std::to_string(lineno) + ": expected 136 values, got " +
                           std::to_string(k));
    out.emplace_back(lm);
  }
  return out;
}

inline void write_landmarks(const std::filesystem::path& path, const std::vector<std::optional<Landmarks>>& lms) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IngestionError("cannot write " + path.string());
  char buf[32];
  for (const auto& lm : lms) {
    if (!lm) {
      os << "none\n";
      continue;
    }
    for (std::size_t k = 0; k < lm->size(); ++k) {
      std::snprintf(buf, sizeof(buf), "%.17g", (*lm)[k]);
      os << (k ? "," : "") << buf;
    }
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Preprocessed clip directories
//
//   manifest.json   format, identity, frame_count, fps, face_height,
//                   face_width, files, checksum
//   faces/          000000.ppm ...  cropped faces
//   landmarks.csv   full-frame landmarks
//   crops.json      one CropTransform per frame
//   features.dsf    25 fps audio features

inline constexpr char kClipFormat[] = "dinet-clip/1";

/// FNV-1a over the listed files, in order.
inline std::string checksum_files(const std::vector<std::filesystem::path>& files) {
  uint64_t h = 0xcbf29ce484222325ULL;
  std::vector<char> buf(1 << 16);
  for (const auto& f : files) {
    std::ifstream is(f, std::ios::binary);
    if (!is) throw IngestionError("cannot read " + f.string());
    while (is) {
      is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
      for (std::streamsize i = 0; i < is.gcount(); ++i) {
        h ^= static_cast<unsigned char>(buf[static_cast<std::size_t>(i)]);
        h *= 0x100000001b3ULL;
      }
    }
  }
  char out[40];
  std::snprintf(out, sizeof(out), "fnv1a64:%016llx", static_cast<unsigned long long>(h));
  return out;
}

inline std::vector<std::filesystem::path> clip_payload(const std::filesystem::path& dir, int64_t frames) {
  std::vector<std::filesystem::path> files;
  for (int64_t i = 0; i < frames; ++i) files.push_back(dir / "faces" / frame_name(i));
  files.push_back(dir / "landmarks.csv");
  files.push_back(dir / "crops.json");
  files.push_back(dir / "features.dsf");
  return files;
}

/// Writes a clip directory. Faces are stored as 8-bit images.
inline nlohmann::json save_clip(const std::filesystem::path& dir, const FaceClip& clip,
                                const std::vector<std::optional<Landmarks>>& landmarks) {
  clip.validate();
  std::filesystem::create_directories(dir);
  write_frames(dir / "faces", clip.faces);
  write_landmarks(dir / "landmarks.csv", landmarks);
  {
    std::ofstream os(dir / "crops.json", std::ios::trunc);
    os << nlohmann::json(clip.transforms).dump() << '\n';
  }
  save_features(dir / "features.dsf", clip.features);
  nlohmann::json m;
  m["format"] = kClipFormat;
  m["identity"] = clip.identity;
  m["frame_count"] = clip.size();
  m["fps"] = kVideoFps;
  m["face_height"] = clip.height();
  m["face_width"] = clip.width();
  m["files"] = {{"faces", "faces"}, {"landmarks", "landmarks.csv"}, {"crops", "crops.json"}, {"features", "features.dsf"}};
  m["checksum"] = checksum_files(clip_payload(dir, clip.size()));
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  os << m.dump(2) << '\n';
  return m;
}

inline nlohmann::json read_manifest(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw IngestionError("no manifest.json in " + dir.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError(dir.string() + "/manifest.json: " + e.what());
  }
}

/// Checks the manifest fields and recomputes the checksum.
inline nlohmann::json validate_clip_dir(const std::filesystem::path& dir) {
  const auto m = read_manifest(dir);
  if (m.value("format", "") != kClipFormat) throw VersionMismatch(dir.string() + ": unsupported clip format");
  for (const char* key : {"identity", "frame_count", "fps", "face_height", "face_width", "checksum"})
    if (!m.contains(key)) throw IngestionError(dir.string() + "/manifest.json lacks '" + key + "'");
  if (m.at("fps").get<double>() != kVideoFps) throw IngestionError(dir.string() + ": manifest fps is not 25");
  const auto n = m.at("frame_count").get<int64_t>();
  if (static_cast<int64_t>(list_frames(dir / "faces").size()) != n)
    throw IngestionError(dir.string() + ": face count differs from manifest frame_count");
  if (checksum_files(clip_payload(dir, n)) != m.at("checksum").get<std::string>())
    throw IngestionError(dir.string() + ": checksum mismatch");
  return m;
}

inline FaceClip load_clip(const std::filesystem::path& dir) {
  const auto m = validate_clip_dir(dir);
  FaceClip clip;
  clip.identity = m.at("identity").get<std::string>();
  clip.faces = read_frames(dir / "faces");
  std::ifstream is(dir / "crops.json");
  clip.transforms = nlohmann::json::parse(is).get<std::vector<CropTransform>>();
  clip.features = load_features(dir / "features.dsf");
  clip.validate();
  return clip;
}

/// A clip directory, or a directory whose subdirectories are clip directories
/// (visited in name order).
inline std::vector<FaceClip> load_dataset(const std::filesystem::path& root) {
  if (std::filesystem::exists(root / "manifest.json")) return {load_clip(root)};
  if (!std::filesystem::is_directory(root)) throw IngestionError("dataset not found: " + root.string());
  std::vector<std::filesystem::path> dirs;
  for (const auto& e : std::filesystem::directory_iterator(root))
    if (e.is_directory() && std::filesystem::exists(e.path() / "manifest.json")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw IngestionError("no clip directories under " + root.string());
  std::vector<FaceClip> clips;
  for (const auto& d : dirs) clips.push_back(load_clip(d));
  return clips;
}

}  // namespace dinet
