#pragma once

// Configuration shared by every subcommand.
//
// File format: one `key = value` per line; `#` starts a comment; blank lines
// are ignored; unknown keys are errors. Keys:
//
//   preset              full | toy            network sizes to start from
//   base_channels, feature_channels, height, width, audio_window,
//   mouth_size, res_blocks                    network overrides
//   seed                                      global seed (networks, sampling)
//   lr, beta1, beta2, eps                     Adam settings
//   batch_size          DINet batch (each item is 5 consecutive frames)
//   syncnet_batch_size  syncnet pairs per step (half matched, half shifted)
//   iterations, syncnet_iterations
//   lambda_p, lambda_sync                     generator loss weights
//   reference_radius    reference frames must be farther than this from the source
//   perceptual          identity | vgg19-random[:DIV[:SEED]] | vgg19:PATH
//   perceptual_stages   1..5
//   checkpoint_every    0 = only at the end
//   log_every
//   device              cpu
//   audio_provider      synthetic[:SEED] | file | external:MODEL:COMMAND
//   feather_band        paste-back feather width in pixels (0 disables)

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "dinet/errors.hpp"
#include "dinet/losses.hpp"
#include "dinet/networks.hpp"
#include "dinet/optim.hpp"

namespace dinet {

struct TrainConfig {
  AdamOptions adam;
  int64_t batch_size = 3;
  int64_t syncnet_batch_size = 20;
  int64_t iterations = 1000;
  int64_t syncnet_iterations = 1000;
  LossWeights weights;
  int64_t reference_radius = 5;
  std::string perceptual = "vgg19-random";
  int64_t perceptual_stages = 5;
  int64_t checkpoint_every = 0;
  int64_t log_every = 1;
  uint64_t seed = 0;
  std::string device = "cpu";

  void validate() const {
    if (!(adam.lr > 0) || !(adam.eps > 0)) throw ConfigError("lr and eps must be positive");
    if (!(adam.beta1 >= 0 && adam.beta1 < 1) || !(adam.beta2 >= 0 && adam.beta2 < 1))
      throw ConfigError("beta1 and beta2 must lie in [0, 1)");
    if (batch_size < 1 || syncnet_batch_size < 2) throw ConfigError("batch sizes must be positive (syncnet >= 2)");
    if (iterations < 0 || syncnet_iterations < 0 || checkpoint_every < 0 || log_every < 1 || reference_radius < 0)
      throw ConfigError("iteration counts and cadences must be non-negative");
    weights.validate();
    if (device != "cpu") throw ConfigError("device '" + device + "' is not available; this build runs on cpu");
  }
};

struct RunConfig {
  NetworkConfig network = NetworkConfig::full();
  TrainConfig train;
  std::string audio_provider = "file";
  int64_t feather_band = 5;

  void validate() const {
    network.validate();
    train.validate();
    if (feather_band < 0) throw ConfigError("feather_band must be non-negative");
  }

  void set_seed(uint64_t seed) {
    train.seed = seed;
    network.seed = seed;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || ptr != end) throw ConfigError("config key '" + key + "': bad value '" + v + "'");
  return out;
}

}  // namespace detail

/// Applies one key; throws ConfigError for unknown keys or bad values.
inline void apply_config_key(RunConfig& c, const std::string& key, const std::string& v) {
  using detail::parse_number;
  auto i64 = [&] { return parse_number<int64_t>(key, v); };
  auto f64 = [&] { return parse_number<double>(key, v); };
  NetworkConfig& n = c.network;
  TrainConfig& t = c.train;
  if (key == "preset") {
    if (v != "full" && v != "toy") throw ConfigError("config key 'preset': expected full or toy, got '" + v + "'");
    const uint64_t seed = n.seed;
    n = v == "full" ? NetworkConfig::full() : NetworkConfig::toy();
    n.seed = seed;
  } else if (key == "base_channels") n.base_channels = i64();
  else if (key == "feature_channels") n.feature_channels = i64();
  else if (key == "height") n.height = i64();
  else if (key == "width") n.width = i64();
  else if (key == "audio_window") n.audio_window = i64();
  else if (key == "mouth_size") n.mouth_size = i64();
  else if (key == "res_blocks") n.res_blocks = i64();
  else if (key == "seed") c.set_seed(parse_number<uint64_t>(key, v));
  else if (key == "lr") t.adam.lr = f64();
  else if (key == "beta1") t.adam.beta1 = f64();
  else if (key == "beta2") t.adam.beta2 = f64();
  else if (key == "eps") t.adam.eps = f64();
  else if (key == "batch_size") t.batch_size = i64();
  else if (key == "syncnet_batch_size") t.syncnet_batch_size = i64();
  else if (key == "iterations") t.iterations = i64();
  else if (key == "syncnet_iterations") t.syncnet_iterations = i64();
  else if (key == "lambda_p") t.weights.lambda_p = f64();
  else if (key == "lambda_sync") t.weights.lambda_sync = f64();
  else if (key == "reference_radius") t.reference_radius = i64();
  else if (key == "perceptual") t.perceptual = v;
  else if (key == "perceptual_stages") t.perceptual_stages = i64();
  else if (key == "checkpoint_every") t.checkpoint_every = i64();
  else if (key == "log_every") t.log_every = i64();
  else if (key == "device") t.device = v;
  else if (key == "audio_provider") c.audio_provider = v;
  else if (key == "feather_band") c.feather_band = i64();
  else throw ConfigError("unknown config key '" + key + "'");
}

inline RunConfig parse_config(const std::string& text, RunConfig base = {}) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    try {
      apply_config_key(base, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  base.validate();
  return base;
}

inline RunConfig load_config(const std::filesystem::path& path, RunConfig base = {}) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config file not found: " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

inline std::string format_config(const RunConfig& c) {
  std::ostringstream os;
  os.precision(17);
  const auto& n = c.network;
  const auto& t = c.train;
  os << "base_channels = " << n.base_channels << "\nfeature_channels = " << n.feature_channels
     << "\nheight = " << n.height << "\nwidth = " << n.width << "\naudio_window = " << n.audio_window
     << "\nmouth_size = " << n.mouth_size << "\nres_blocks = " << n.res_blocks << "\nseed = " << t.seed
     << "\nlr = " << t.adam.lr << "\nbeta1 = " << t.adam.beta1 << "\nbeta2 = " << t.adam.beta2
     << "\neps = " << t.adam.eps << "\nbatch_size = " << t.batch_size
     << "\nsyncnet_batch_size = " << t.syncnet_batch_size << "\niterations = " << t.iterations
     << "\nsyncnet_iterations = " << t.syncnet_iterations << "\nlambda_p = " << t.weights.lambda_p
     << "\nlambda_sync = " << t.weights.lambda_sync << "\nreference_radius = " << t.reference_radius
     << "\nperceptual = " << t.perceptual << "\nperceptual_stages = " << t.perceptual_stages
     << "\ncheckpoint_every = " << t.checkpoint_every << "\nlog_every = " << t.log_every
     << "\ndevice = " << t.device << "\naudio_provider = " << c.audio_provider
     << "\nfeather_band = " << c.feather_band << '\n';
  return os.str();
}

}  // namespace dinet
