#pragma once

// Images are (3, H, W) tensors with values in [0, 1]. On disk they are binary
// PPM (P6, maxval 255); a frame directory holds 000000.ppm, 000001.ppm, ...

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dinet/errors.hpp"
#include "dinet/tensor.hpp"

namespace dinet {

using Image = Tensor;

inline void require_rgb(const Tensor& img, const char* what) {
  if (img.rank() != 3 || img.dim(0) != 3 || img.dim(1) < 1 || img.dim(2) < 1)
    throw ContractViolation(std::string(what) + ": expected a 3 x H x W image, got " + to_string(img.shape()));
}

inline uint8_t quantize(double v) {
  if (!(v > 0.0)) return 0;
  if (v >= 1.0) return 255;
  return static_cast<uint8_t>(std::lround(v * 255.0));
}

namespace detail {

inline std::string ppm_token(std::istream& is) {
  std::string tok;
  int ch;
  while ((ch = is.get()) != EOF) {
    if (ch == '#') {
      while ((ch = is.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

}  // namespace detail

/// Reads a binary PPM (P6) or PGM (P5, replicated to three channels).
inline Image read_ppm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IngestionError("cannot open image " + path.string());
  const std::string magic = detail::ppm_token(is);
  if (magic != "P6" && magic != "P5") throw IngestionError(path.string() + ": not a binary PPM/PGM file");
  int64_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoll(detail::ppm_token(is));
    h = std::stoll(detail::ppm_token(is));
    maxval = std::stoll(detail::ppm_token(is));
  } catch (const std::exception&) {
    throw IngestionError(path.string() + ": malformed header");
  }
  if (w < 1 || h < 1 || maxval != 255) throw IngestionError(path.string() + ": unsupported size or maxval");
  const int64_t planes = magic == "P6" ? 3 : 1;
  std::vector<unsigned char> raw(static_cast<std::size_t>(w * h * planes));
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!is) throw IngestionError(path.string() + ": truncated pixel data");
  Image img({3, h, w});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c)
        img.at(c, y, x) = raw[static_cast<std::size_t>((y * w + x) * planes + (planes == 3 ? c : 0))] / 255.0;
  return img;
}

inline void write_ppm(const std::filesystem::path& path, const Image& img) {
  require_rgb(img, "write_ppm");
  const int64_t h = img.dim(1), w = img.dim(2);
  std::vector<unsigned char> raw(static_cast<std::size_t>(3 * h * w));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c) raw[static_cast<std::size_t>((y * w + x) * 3 + c)] = quantize(img.at(c, y, x));
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IngestionError("cannot write image " + path.string());
  os << "P6\n" << w << ' ' << h << "\n255\n";
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!os) throw IngestionError("failed writing image " + path.string());
}

/// Rounds every value to the nearest multiple of 1/255, the precision frames
/// have after a write/read round trip.
inline Image quantized(Image img) {
  for (auto& v : img.vec()) v = quantize(v) / 255.0;
  return img;
}

inline std::string frame_name(int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06lld.ppm", static_cast<long long>(index));
  return buf;
}

/// Sorted list of the .ppm/.pgm files in `dir`.
inline std::vector<std::filesystem::path> list_frames(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IngestionError("not a frame directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto ext = e.path().extension();
    if (e.is_regular_file() && (ext == ".ppm" || ext == ".pgm")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<Image> read_frames(const std::filesystem::path& dir) {
  std::vector<Image> frames;
  for (const auto& p : list_frames(dir)) frames.push_back(read_ppm(p));
  if (frames.empty()) throw IngestionError("no frames in " + dir.string());
  return frames;
}

inline void write_frames(const std::filesystem::path& dir, const std::vector<Image>& frames) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < frames.size(); ++i) write_ppm(dir / frame_name(static_cast<int64_t>(i)), frames[i]);
}

}  // namespace dinet
