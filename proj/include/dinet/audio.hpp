#pragma once

// Per-frame audio features: a (frames, 29) tensor aligned to 25 fps video.
//
// Feature file layout (little-endian):
//   bytes 0..7    magic "DSFEAT01"
//   bytes 8..11   frame count N, uint32
//   bytes 12..15  feature dim D, uint32
//   bytes 16..19  frame rate, float32
//   remainder     N*D float32 values, frame-major

#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "dinet/errors.hpp"
#include "dinet/networks.hpp"
#include "dinet/tensor.hpp"

namespace dinet {

inline constexpr double kVideoFps = 25.0;
inline constexpr char kFeatureMagic[] = "DSFEAT01";

using FeatureStream = Tensor;

inline void require_stream(const FeatureStream& s, const char* what) {
  if (s.rank() != 2 || s.dim(1) != kAudioFeatureDim || s.dim(0) < 1)
    throw ContractViolation(std::string(what) + ": expected a non-empty N x 29 feature stream, got " +
                            to_string(s.shape()));
}

/// Number of 25 fps frames covering `seconds` of audio.
inline int64_t frames_for_duration(double seconds) {
  if (!(seconds >= 0)) throw InvalidParameter("negative duration");
  return static_cast<int64_t>(std::ceil(seconds * kVideoFps - 1e-9));
}

/// Source index feeding output frame k when converting `fps` to 25 fps
/// (nearest timestamp, ties toward the later frame).
inline int64_t resample_source_index(int64_t k, double fps, int64_t n) {
  const auto i = static_cast<int64_t>(std::floor(static_cast<double>(k) * fps / kVideoFps + 0.5));
  return std::min(i, n - 1);
}

inline int64_t resampled_count(int64_t n, double fps) {
  if (!(fps > 0)) throw IngestionError("frame rate must be positive");
  return std::llround(static_cast<double>(n) * kVideoFps / fps);
}

/// Constant-rate resampling of any frame sequence to 25 fps.
template <class T>
std::vector<T> resample_to_25fps(const std::vector<T>& frames, double fps) {
  const int64_t n = static_cast<int64_t>(frames.size());
  if (n == 0) throw IngestionError("empty frame sequence");
  std::vector<T> out;
  const int64_t m = resampled_count(n, fps);
  out.reserve(static_cast<std::size_t>(m));
  for (int64_t k = 0; k < m; ++k) out.push_back(frames[static_cast<std::size_t>(resample_source_index(k, fps, n))]);
  return out;
}

/// Row resampling of a feature stream recorded at `fps` rows per second.
inline FeatureStream resample_stream(const FeatureStream& s, double fps) {
  if (s.rank() != 2 || s.dim(0) < 1) throw IngestionError("empty feature stream");
  const int64_t n = s.dim(0), d = s.dim(1), m = resampled_count(n, fps);
  FeatureStream out({m, d});
  for (int64_t k = 0; k < m; ++k) {
    const int64_t i = resample_source_index(k, fps, n);
    std::copy_n(s.data() + i * d, d, out.data() + k * d);
  }
  return out;
}

/// T rows centred on `frame` (offsets -T/2 .. T-1-T/2), edges replicated.
inline Tensor audio_window(const FeatureStream& s, int64_t frame, int64_t T = 5) {
  require_stream(s, "audio_window");
  if (T < 1) throw InvalidParameter("audio window length must be positive");
  const int64_t n = s.dim(0);
  Tensor out({T, kAudioFeatureDim});
  for (int64_t r = 0; r < T; ++r) {
    const int64_t i = std::clamp<int64_t>(frame - T / 2 + r, 0, n - 1);
    std::copy_n(s.data() + i * kAudioFeatureDim, kAudioFeatureDim, out.data() + r * kAudioFeatureDim);
  }
  return out;
}

// Feature files.

inline void save_features(const std::filesystem::path& path, const FeatureStream& s, float fps = 25.0F) {
  static_assert(std::endian::native == std::endian::little);
  if (s.rank() != 2) throw ContractViolation("save_features: expected N x D");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IngestionError("cannot write feature file " + path.string());
  os.write(kFeatureMagic, 8);
  const auto n = static_cast<uint32_t>(s.dim(0)), d = static_cast<uint32_t>(s.dim(1));
  os.write(reinterpret_cast<const char*>(&n), 4);
  os.write(reinterpret_cast<const char*>(&d), 4);
  os.write(reinterpret_cast<const char*>(&fps), 4);
  for (double v : s.vec()) {
    const auto f = static_cast<float>(v);
    os.write(reinterpret_cast<const char*>(&f), 4);
  }
  if (!os) throw IngestionError("failed writing feature file " + path.string());
}

struct FeatureFile {
  FeatureStream values;
  double fps = kVideoFps;
};

inline FeatureFile read_feature_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("audio feature file not found: " + path.string());
  char magic[8];
  uint32_t n = 0, d = 0;
  float fps = 0;
  is.read(magic, 8);
  is.read(reinterpret_cast<char*>(&n), 4);
  is.read(reinterpret_cast<char*>(&d), 4);
  is.read(reinterpret_cast<char*>(&fps), 4);
  if (!is || std::memcmp(magic, kFeatureMagic, 8) != 0) throw IngestionError(path.string() + ": not a feature file");
  if (!(fps > 0)) throw IngestionError(path.string() + ": invalid frame rate");
  FeatureFile f{FeatureStream({static_cast<int64_t>(n), static_cast<int64_t>(d)}), fps};
  std::vector<float> raw(static_cast<std::size_t>(n) * d);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
  if (!is) throw IngestionError(path.string() + ": truncated feature data");
  std::copy(raw.begin(), raw.end(), f.values.data());
  return f;
}

/// Loads a feature file and brings it to 25 fps with 29 dims per row.
inline FeatureStream load_features(const std::filesystem::path& path) {
  FeatureFile f = read_feature_file(path);
  if (f.values.dim(1) != kAudioFeatureDim)
    throw IngestionError(path.string() + ": feature dim " + std::to_string(f.values.dim(1)) + ", expected 29");
  return f.fps == kVideoFps ? std::move(f.values) : resample_stream(f.values, f.fps);
}

// WAV input.

struct WavInfo {
  uint16_t channels = 0;
  uint32_t sample_rate = 0;
  uint16_t bits_per_sample = 0;
  uint32_t data_bytes = 0;
  double seconds() const {
    const double bytes_per_second = static_cast<double>(sample_rate) * channels * (bits_per_sample / 8);
    return static_cast<double>(data_bytes) / bytes_per_second;
  }
};

inline WavInfo read_wav_info(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IngestionError("cannot open audio " + path.string());
  char riff[12];
  is.read(riff, 12);
  if (!is || std::memcmp(riff, "RIFF", 4) != 0 || std::memcmp(riff + 8, "WAVE", 4) != 0)
    throw IngestionError(path.string() + ": not a RIFF/WAVE file");
  WavInfo info;
  bool have_fmt = false;
  char id[4];
  uint32_t size = 0;
  while (is.read(id, 4) && is.read(reinterpret_cast<char*>(&size), 4)) {
    if (std::memcmp(id, "fmt ", 4) == 0) {
      char fmt[16];
      is.read(fmt, 16);
      std::memcpy(&info.channels, fmt + 2, 2);
      std::memcpy(&info.sample_rate, fmt + 4, 4);
      std::memcpy(&info.bits_per_sample, fmt + 14, 2);
      is.seekg(static_cast<std::streamoff>(size - 16 + (size & 1)), std::ios::cur);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      info.data_bytes = size;
      if (!have_fmt) break;
      if (info.channels == 0 || info.sample_rate == 0 || info.bits_per_sample < 8)
        throw IngestionError(path.string() + ": unsupported sample format");
      return info;
    } else {
      is.seekg(static_cast<std::streamoff>(size + (size & 1)), std::ios::cur);
    }
  }
  throw IngestionError(path.string() + ": missing fmt or data chunk");
}

/// 16-bit mono PCM; samples in [-1, 1].
inline void write_wav(const std::filesystem::path& path, const std::vector<double>& samples, uint32_t rate) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IngestionError("cannot write " + path.string());
  const uint32_t data = static_cast<uint32_t>(samples.size() * 2);
  auto u32 = [&](uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
  auto u16 = [&](uint16_t v) { os.write(reinterpret_cast<const char*>(&v), 2); };
  os.write("RIFF", 4);
  u32(36 + data);
  os.write("WAVEfmt ", 8);
  u32(16);
  u16(1);
  u16(1);
  u32(rate);
  u32(rate * 2);
  u16(2);
  u16(16);
  os.write("data", 4);
  u32(data);
  for (double s : samples) {
    const auto v = static_cast<int16_t>(std::lround(std::clamp(s, -1.0, 1.0) * 32767.0));
    os.write(reinterpret_cast<const char*>(&v), 2);
  }
}

// Providers.

class AudioFeatureProvider {
 public:
  virtual ~AudioFeatureProvider() = default;
  virtual std::string name() const = 0;
  /// 25 fps stream for an audio input (a WAV file or a feature file).
  virtual FeatureStream extract(const std::filesystem::path& audio) const = 0;
};

/// Deterministic pseudo-features. Dimension 0 of frame t is a uniform draw
/// o_t in [-1, 1) (the synthetic faces open their mouths with it); every other
/// dimension mixes a fixed nonlinear function of o_t with per-frame noise, so
/// the whole window carries the lip signal, as real speech features do.
/// Values sit on a float-exact grid so streams survive a feature-file round trip.
class SyntheticAudioProvider final : public AudioFeatureProvider {
 public:
  explicit SyntheticAudioProvider(uint64_t seed) : seed_(seed) {}

  std::string name() const override { return "synthetic"; }

  /// Uniform hash of (seed, frame, dim) on a 24-bit grid in [-1, 1).
  static double hash(uint64_t seed, int64_t frame, int64_t dim) {
    uint64_t z = seed * 0x9E3779B97F4A7C15ULL + static_cast<uint64_t>(frame) * 0xD1B54A32D192ED03ULL +
                 static_cast<uint64_t>(dim) * 0x8CB92BA72F3D8DD7ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return (static_cast<double>(z >> 40) - 8388608.0) / 8388608.0;
  }

  static double value(uint64_t seed, int64_t frame, int64_t dim) {
    const double o = hash(seed, frame, 0);
    if (dim == 0) return o;
    // Frequencies and phases are shared by every seed: the mapping from
    // mouth opening to features is the "language", not the speaker.
    const double freq = 0.5 + 0.25 * static_cast<double>(dim % 4);
    const double phase = 3.14159265358979 * hash(0, -1, dim);
    const double v = 0.75 * std::sin(3.14159265358979 * freq * o + phase) + 0.25 * hash(seed, frame, dim);
    return std::ldexp(std::round(std::ldexp(v, 22)), -22);
  }

  FeatureStream stream(int64_t frames) const {
    FeatureStream s({frames, kAudioFeatureDim});
    for (int64_t t = 0; t < frames; ++t)
      for (int64_t d = 0; d < kAudioFeatureDim; ++d) s[t * kAudioFeatureDim + d] = value(seed_, t, d);
    return s;
  }

  /// Stream length follows the WAV duration (or the feature file's length).
  FeatureStream extract(const std::filesystem::path& audio) const override {
    if (audio.extension() == ".wav") return stream(frames_for_duration(read_wav_info(audio).seconds()));
    return stream(load_features(audio).dim(0));
  }

 private:
  uint64_t seed_;
};

/// Reads precomputed feature files; WAV input is rejected.
class FileAudioProvider final : public AudioFeatureProvider {
 public:
  std::string name() const override { return "file"; }
  FeatureStream extract(const std::filesystem::path& audio) const override {
    if (audio.extension() == ".wav")
      throw ConfigError("audio provider 'file' needs a precomputed feature file, got " + audio.string());
    return load_features(audio);
  }
};

/// Runs an external speech model. `command` may use {model}, {wav} and {out};
/// the tool must write a feature file to {out} at its native frame rate,
/// which is resampled here to 25 fps by nearest timestamp.
class ExternalAudioProvider final : public AudioFeatureProvider {
 public:
  ExternalAudioProvider(std::string command, std::filesystem::path model)
      : command_(std::move(command)), model_(std::move(model)) {
    if (!std::filesystem::exists(model_)) throw ConfigError("speech model not found: " + model_.string());
    if (command_.empty()) throw ConfigError("speech model command is empty");
  }

  std::string name() const override { return "external"; }

  FeatureStream extract(const std::filesystem::path& audio) const override {
    if (audio.extension() != ".wav") return load_features(audio);
    const auto out = std::filesystem::temp_directory_path() /
                     ("dinet_features_" + std::to_string(std::hash<std::string>{}(audio.string())) + ".dsf");
    std::string cmd = command_;
    substitute(cmd, "{model}", model_.string());
    substitute(cmd, "{wav}", audio.string());
    substitute(cmd, "{out}", out.string());
    if (std::system(cmd.c_str()) != 0) throw IngestionError("speech model command failed: " + cmd);
    FeatureStream s = load_features(out);
    std::filesystem::remove(out);
    // Trim or pad to the audio duration.
    const int64_t want = frames_for_duration(read_wav_info(audio).seconds());
    FeatureStream fit({want, kAudioFeatureDim});
    for (int64_t t = 0; t < want; ++t)
      std::copy_n(s.data() + std::min(t, s.dim(0) - 1) * kAudioFeatureDim, kAudioFeatureDim,
                  fit.data() + t * kAudioFeatureDim);
    return fit;
  }

 private:
  static void substitute(std::string& s, const std::string& key, const std::string& value) {
    for (auto pos = s.find(key); pos != std::string::npos; pos = s.find(key, pos + value.size()))
      s.replace(pos, key.size(), value);
  }

  std::string command_;
  std::filesystem::path model_;
};

/// "synthetic[:SEED]", "file", or "external:MODEL:COMMAND".
inline std::unique_ptr<AudioFeatureProvider> make_audio_provider(const std::string& spec, uint64_t seed = 0) {
  if (spec == "file") return std::make_unique<FileAudioProvider>();
  if (spec.rfind("synthetic", 0) == 0) {
    if (spec.size() > 9 && spec[9] == ':') seed = std::stoull(spec.substr(10));
    return std::make_unique<SyntheticAudioProvider>(seed);
  }
  if (spec.rfind("external:", 0) == 0) {
    const std::string rest = spec.substr(9);
    const auto colon = rest.find(':');
    if (colon == std::string::npos) throw ConfigError("audio provider 'external' needs MODEL:COMMAND");
    return std::make_unique<ExternalAudioProvider>(rest.substr(colon + 1), rest.substr(0, colon));
  }
  throw ConfigError("unknown audio provider '" + spec + "'");
}

}  // namespace dinet
