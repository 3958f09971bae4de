#pragma once

// Checkpoint container
// --------------------
//   bytes 0..9    magic "DINETCKPT\n"
//   bytes 10..13  header length L, uint32 little-endian
//   next L bytes  UTF-8 JSON header:
//                   format   "dinet-checkpoint/1"
//                   kind     "dinet" | "syncnet" | "vgg19" | ...
//                   config   embedded NetworkConfig (object)
//                   meta     free-form object (iteration, optimizer settings)
//                   tensors  [{name, shape, offset}]  offset in doubles
//   remainder     float64 little-endian tensor data, in header order
//
// Keys are serialised sorted, so saving a loaded checkpoint reproduces the
// file byte for byte.

#include <nlohmann/json.hpp>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "dinet/losses.hpp"
#include "dinet/networks.hpp"
#include "dinet/optim.hpp"

namespace dinet {

inline constexpr char kCheckpointMagic[] = "DINETCKPT\n";
inline constexpr char kCheckpointFormat[] = "dinet-checkpoint/1";

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

struct Checkpoint {
  std::string kind;
  nlohmann::json config = nlohmann::json::object();
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  void add(const std::string& prefix, const nn::ParamList& params) {
    for (const auto& p : params) tensors.emplace_back(prefix + p.name, p.var.value());
  }

  const Tensor& get(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return t;
    throw ConfigError("checkpoint has no tensor named '" + name + "'");
  }

  bool has(const std::string& name) const {
    for (const auto& kv : tensors)
      if (kv.first == name) return true;
    return false;
  }

  /// Copies stored values into `params`; names and shapes must match.
  void assign(const std::string& prefix, const nn::ParamList& params) const {
    for (auto p : params) {
      const Tensor& t = get(prefix + p.name);
      if (t.shape() != p.var.shape())
        throw ConfigError("checkpoint tensor '" + prefix + p.name + "' has shape " + to_string(t.shape()) +
                          ", model expects " + to_string(p.var.shape()));
      p.var.mutable_value() = t;
    }
  }

  void add_optimizer(const std::string& prefix, Adam& opt) {
    meta[prefix + "steps"] = opt.steps();
    for (const auto& p : opt.params()) {
      tensors.emplace_back(prefix + p.name + ".m", opt.first_moment(p.name));
      tensors.emplace_back(prefix + p.name + ".v", opt.second_moment(p.name));
    }
  }

  void restore_optimizer(const std::string& prefix, Adam& opt) const {
    if (!meta.contains(prefix + "steps")) throw ConfigError("checkpoint has no optimizer state '" + prefix + "'");
    opt.set_steps(meta.at(prefix + "steps").get<int64_t>());
    for (const auto& p : opt.params()) {
      opt.first_moment(p.name) = get(prefix + p.name + ".m");
      opt.second_moment(p.name) = get(prefix + p.name + ".v");
    }
  }
};

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  nlohmann::json header;
  header["format"] = kCheckpointFormat;
  header["kind"] = ck.kind;
  header["config"] = ck.config;
  header["meta"] = ck.meta;
  header["tensors"] = nlohmann::json::array();
  int64_t offset = 0;
  for (const auto& [name, t] : ck.tensors) {
    header["tensors"].push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.numel();
  }
  const std::string text = header.dump();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ConfigError("cannot write checkpoint " + path.string());
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic) - 1);
  const auto len = static_cast<uint32_t>(text.size());
  os.write(reinterpret_cast<const char*>(&len), sizeof(len));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& kv : ck.tensors)
    os.write(reinterpret_cast<const char*>(kv.second.data()),
             static_cast<std::streamsize>(kv.second.numel() * static_cast<int64_t>(sizeof(double))));
  if (!os) throw ConfigError("failed writing checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("checkpoint not found: " + path.string());
  char magic[sizeof(kCheckpointMagic) - 1];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw VersionMismatch(path.string() + " is not a dinet checkpoint");
  uint32_t len = 0;
  is.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string text(len, '\0');
  is.read(text.data(), len);
  if (!is) throw VersionMismatch(path.string() + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw VersionMismatch(path.string() + ": unreadable header (" + e.what() + ")");
  }
  const std::string format = header.value("format", std::string{});
  if (format != kCheckpointFormat)
    throw VersionMismatch(path.string() + ": checkpoint format '" + format + "', this build reads '" +
                          kCheckpointFormat + "'");
  Checkpoint ck;
  ck.kind = header.at("kind").get<std::string>();
  ck.config = header.at("config");
  ck.meta = header.at("meta");
  for (const auto& entry : header.at("tensors")) {
    Tensor t(entry.at("shape").get<Shape>());
    is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * static_cast<int64_t>(sizeof(double))));
    if (!is) throw VersionMismatch(path.string() + ": truncated tensor data");
    ck.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  return ck;
}

/// Reads the embedded network config, verifying `kind` and, if given, that
/// every field equals `expected`.
inline NetworkConfig checkpoint_config(const Checkpoint& ck, const std::string& kind,
                                       const std::optional<NetworkConfig>& expected = std::nullopt) {
  if (ck.kind != kind) throw ConfigError("expected a '" + kind + "' checkpoint, found '" + ck.kind + "'");
  NetworkConfig cfg;
  try {
    cfg = ck.config.get<NetworkConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint config unreadable: ") + e.what());
  }
  if (expected) {
    if (auto field = first_mismatch(cfg, *expected))
      throw ConfigError("checkpoint config field '" + *field + "' mismatch: checkpoint has " +
                        nlohmann::json(cfg)[*field].dump() + ", expected " + nlohmann::json(*expected)[*field].dump());
  }
  return cfg;
}

inline void save_syncnet(const std::filesystem::path& path, const SyncNet& net, nlohmann::json meta = {}) {
  Checkpoint ck;
  ck.kind = "syncnet";
  ck.config = net.config();
  ck.meta = meta.is_null() ? nlohmann::json::object() : std::move(meta);
  ck.add("", net.parameters());
  save_checkpoint(path, ck);
}

inline SyncNet load_syncnet(const std::filesystem::path& path,
                            const std::optional<NetworkConfig>& expected = std::nullopt) {
  const Checkpoint ck = load_checkpoint(path);
  SyncNet net(checkpoint_config(ck, "syncnet", expected));
  ck.assign("", net.parameters());
  return net;
}

/// Loads a VGG-19 weight file (kind "vgg19", tensors vgg19.convN.*).
inline std::unique_ptr<Vgg19Extractor> load_vgg19(const std::filesystem::path& path, int64_t stages) {
  if (!std::filesystem::exists(path))
    throw ConfigError("perceptual network weights not found: " + path.string() +
                      " (convert pretrained VGG-19 weights to a dinet checkpoint of kind 'vgg19')");
  const Checkpoint ck = load_checkpoint(path);
  if (ck.kind != "vgg19") throw ConfigError(path.string() + " is a '" + ck.kind + "' checkpoint, not vgg19");
  auto ex = std::make_unique<Vgg19Extractor>(stages, 1, 0);
  ex->assign(ck.tensors);
  return ex;
}

/// Perceptual extractor from a provider string:
///   "identity"                    pixel-space stage
///   "vgg19-random[:DIV[:SEED]]"   seeded VGG-19 layout, widths / DIV
///   "vgg19:PATH"                  pretrained weights from PATH
inline std::unique_ptr<PerceptualExtractor> make_perceptual_extractor(const std::string& spec, int64_t stages = 5) {
  if (spec == "identity") return std::make_unique<IdentityExtractor>();
  if (spec.rfind("vgg19-random", 0) == 0) {
    int64_t div = 8;
    uint64_t seed = 19;
    std::string rest = spec.substr(std::string("vgg19-random").size());
    if (!rest.empty()) {
      if (rest[0] != ':') throw ConfigError("bad perceptual provider '" + spec + "'");
      rest = rest.substr(1);
      const auto colon = rest.find(':');
      div = std::stoll(rest.substr(0, colon));
      if (colon != std::string::npos) seed = std::stoull(rest.substr(colon + 1));
    }
    return std::make_unique<Vgg19Extractor>(stages, div, seed);
  }
  if (spec.rfind("vgg19:", 0) == 0) return load_vgg19(spec.substr(6), stages);
  throw ConfigError("unknown perceptual provider '" + spec + "'");
}

}  // namespace dinet
