#pragma once

// Image quality metrics on (C, H, W) images with values in [0, 1], and a
// directory evaluator that writes a JSON report.
//
// Report (format "dinet-eval/1"):
//   metrics    names of the evaluated metrics, in column order
//   videos     [{name, frames, <metric>: value, ...}]  per-video frame means
//   aggregate  {videos, frames, <metric>: value, ...}  mean over videos
// An infinite PSNR (identical frames) is written as the string "inf".

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "dinet/image.hpp"

namespace dinet {

inline constexpr double kPsnrInfinity = std::numeric_limits<double>::infinity();

inline void require_same_image_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape() || a.rank() != 3)
    throw ContractViolation(std::string(what) + ": shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
}

/// 10 log10(1 / MSE); +infinity when the images are identical.
inline double psnr(const Tensor& a, const Tensor& b) {
  require_same_image_shape(a, b, "psnr");
  double se = 0;
  for (int64_t i = 0; i < a.numel(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
  if (se == 0.0) return kPsnrInfinity;
  return 10.0 * std::log10(static_cast<double>(a.numel()) / se);
}

struct SsimOptions {
  int64_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

namespace detail {

inline std::vector<double> gaussian_taps(int64_t n, double sigma) {
  std::vector<double> g(static_cast<std::size_t>(n));
  double sum = 0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(i - n / 2);
    sum += g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * sigma * sigma));
  }
  for (auto& v : g) v /= sum;
  return g;
}

/// Separable "valid" filtering of an h x w plane.
inline std::vector<double> filter_valid(const double* x, int64_t h, int64_t w, const std::vector<double>& g) {
  const auto n = static_cast<int64_t>(g.size());
  const int64_t oh = h - n + 1, ow = w - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h * ow)), out(static_cast<std::size_t>(oh * ow));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t j = 0; j < ow; ++j) {
      double s = 0;
      for (int64_t k = 0; k < n; ++k) s += g[static_cast<std::size_t>(k)] * x[y * w + j + k];
      tmp[static_cast<std::size_t>(y * ow + j)] = s;
    }
  for (int64_t i = 0; i < oh; ++i)
    for (int64_t j = 0; j < ow; ++j) {
      double s = 0;
      for (int64_t k = 0; k < n; ++k) s += g[static_cast<std::size_t>(k)] * tmp[static_cast<std::size_t>((i + k) * ow + j)];
      out[static_cast<std::size_t>(i * ow + j)] = s;
    }
  return out;
}

}  // namespace detail

/// Mean SSIM over all fully covered window positions, averaged over channels.
inline double ssim(const Tensor& a, const Tensor& b, const SsimOptions& opt = {}) {
  require_same_image_shape(a, b, "ssim");
  const int64_t c = a.dim(0), h = a.dim(1), w = a.dim(2);
  if (h < opt.window || w < opt.window)
    throw ContractViolation("ssim: images must be at least " + std::to_string(opt.window) + " pixels per side");
  const auto g = detail::gaussian_taps(opt.window, opt.sigma);
  const double c1 = std::pow(opt.k1 * opt.data_range, 2), c2 = std::pow(opt.k2 * opt.data_range, 2);
  const int64_t plane = h * w;
  std::vector<double> xx(static_cast<std::size_t>(plane)), yy(xx.size()), xy(xx.size());
  double total = 0;
  for (int64_t k = 0; k < c; ++k) {
    const double* x = a.data() + k * plane;
    const double* y = b.data() + k * plane;
    for (int64_t i = 0; i < plane; ++i) {
      xx[static_cast<std::size_t>(i)] = x[i] * x[i];
      yy[static_cast<std::size_t>(i)] = y[i] * y[i];
      xy[static_cast<std::size_t>(i)] = x[i] * y[i];
    }
    const auto mx = detail::filter_valid(x, h, w, g), my = detail::filter_valid(y, h, w, g);
    const auto exx = detail::filter_valid(xx.data(), h, w, g), eyy = detail::filter_valid(yy.data(), h, w, g);
    const auto exy = detail::filter_valid(xy.data(), h, w, g);
    double sum = 0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = exx[i] - mx[i] * mx[i], vy = eyy[i] - my[i] * my[i], cxy = exy[i] - mx[i] * my[i];
      sum += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    total += sum / static_cast<double>(mx.size());
  }
  return total / static_cast<double>(c);
}

// ---------------------------------------------------------------------------
// Plug-in metrics

/// Metric computed over a whole video by an external model.
class MetricPlugin {
 public:
  virtual ~MetricPlugin() = default;
  virtual std::string name() const = 0;
  virtual double evaluate(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir) const = 0;
};

/// Runs `command` with {pred} and {gt} substituted and reads the last number
/// printed on stdout. This is how LPIPS or LSE-D/LSE-C evaluators plug in.
class CommandMetricPlugin final : public MetricPlugin {
 public:
  CommandMetricPlugin(std::string name, std::string command) : name_(std::move(name)), command_(std::move(command)) {
    if (name_.empty() || command_.empty()) throw ConfigError("metric plug-in needs NAME=COMMAND");
  }

  std::string name() const override { return name_; }

  double evaluate(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir) const override {
    std::string cmd = command_;
    for (const auto& [key, val] : {std::pair<std::string, std::string>{"{pred}", pred_dir.string()}, {"{gt}", gt_dir.string()}})
      for (auto pos = cmd.find(key); pos != std::string::npos; pos = cmd.find(key, pos + val.size()))
        cmd.replace(pos, key.size(), val);
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) throw ConfigError("cannot run metric plug-in '" + name_ + "'");
    std::string out;
    std::array<char, 256> buf{};
    while (std::fgets(buf.data(), buf.size(), pipe)) out += buf.data();
    if (pclose(pipe) != 0) throw ConfigError("metric plug-in '" + name_ + "' failed: " + cmd);
    const auto end = out.find_last_of("0123456789.");
    if (end == std::string::npos) throw ConfigError("metric plug-in '" + name_ + "' printed no number");
    auto begin = out.find_last_not_of("0123456789.eE+-", end);
    begin = begin == std::string::npos ? 0 : begin + 1;
    return std::stod(out.substr(begin, end - begin + 1));
  }

 private:
  std::string name_, command_;
};

inline std::unique_ptr<MetricPlugin> make_metric_plugin(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos) throw ConfigError("metric plug-in spec must be NAME=COMMAND, got '" + spec + "'");
  return std::make_unique<CommandMetricPlugin>(spec.substr(0, eq), spec.substr(eq + 1));
}

// ---------------------------------------------------------------------------
// Directory evaluation

struct VideoScores {
  std::string name;
  int64_t frames = 0;
  std::map<std::string, double> values;
};

struct EvalReport {
  std::vector<std::string> metrics;
  std::vector<VideoScores> videos;
  std::map<std::string, double> aggregate;
  int64_t total_frames = 0;
};

inline nlohmann::json metric_value_json(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline double metric_value_from_json(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return kPsnrInfinity;
    if (s == "-inf") return -kPsnrInfinity;
    throw IngestionError("bad metric value '" + s + "'");
  }
  return j.get<double>();
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["format"] = "dinet-eval/1";
  j["metrics"] = r.metrics;
  j["videos"] = nlohmann::json::array();
  for (const auto& v : r.videos) {
    nlohmann::json e{{"name", v.name}, {"frames", v.frames}};
    for (const auto& [k, x] : v.values) e[k] = metric_value_json(x);
    j["videos"].push_back(e);
  }
  nlohmann::json agg{{"videos", r.videos.size()}, {"frames", r.total_frames}};
  for (const auto& [k, x] : r.aggregate) agg[k] = metric_value_json(x);
  j["aggregate"] = agg;
  return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "dinet-eval/1") throw VersionMismatch("not a dinet-eval/1 report");
  EvalReport r;
  r.metrics = j.at("metrics").get<std::vector<std::string>>();
  for (const auto& e : j.at("videos")) {
    VideoScores v{e.at("name").get<std::string>(), e.at("frames").get<int64_t>(), {}};
    for (const auto& m : r.metrics) v.values[m] = metric_value_from_json(e.at(m));
    r.videos.push_back(std::move(v));
  }
  r.total_frames = j.at("aggregate").at("frames").get<int64_t>();
  for (const auto& m : r.metrics) r.aggregate[m] = metric_value_from_json(j.at("aggregate").at(m));
  return r;
}

/// Video directories under `root`: its subdirectories holding frames, or
/// `root` itself when it holds frames directly.
inline std::map<std::string, std::filesystem::path> video_dirs(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) throw IngestionError("not a directory: " + root.string());
  std::map<std::string, std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(root))
    if (e.is_directory() && !list_frames(e.path()).empty()) out[e.path().filename().string()] = e.path();
  if (out.empty() && !list_frames(root).empty()) out[root.filename().string()] = root;
  if (out.empty()) throw IngestionError("no frames under " + root.string());
  return out;
}

inline EvalReport evaluate_dirs(const std::filesystem::path& pred_root, const std::filesystem::path& gt_root,
                                const std::vector<const MetricPlugin*>& plugins = {}) {
  auto pred = video_dirs(pred_root), gt = video_dirs(gt_root);
  // A single-video pair is matched regardless of directory names.
  if (pred.size() == 1 && gt.size() == 1 && pred.begin()->first != gt.begin()->first) {
    auto p = pred.begin()->second;
    pred.clear();
    pred[gt.begin()->first] = p;
  }
  std::vector<std::string> problems;
  for (const auto& [name, dir] : gt)
    if (!pred.count(name)) problems.push_back(name + ": missing from predictions");
  for (const auto& [name, dir] : pred)
    if (!gt.count(name)) problems.push_back(name + ": no ground truth");
    else if (list_frames(dir).size() != list_frames(gt.at(name)).size())
      problems.push_back(name + ": " + std::to_string(list_frames(dir).size()) + " predicted vs " +
                         std::to_string(list_frames(gt.at(name)).size()) + " ground-truth frames");
  if (!problems.empty()) {
    std::string msg = "frame count mismatch:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw IngestionError(msg);
  }

  EvalReport r;
  r.metrics = {"ssim", "psnr"};
  for (const auto* p : plugins) r.metrics.push_back(p->name());
  for (const auto& [name, gdir] : gt) {
    const auto pf = list_frames(pred.at(name)), gf = list_frames(gdir);
    VideoScores v{name, static_cast<int64_t>(gf.size()), {{"ssim", 0.0}, {"psnr", 0.0}}};
    for (std::size_t i = 0; i < gf.size(); ++i) {
      const Image a = read_ppm(pf[i]), b = read_ppm(gf[i]);
      v.values["ssim"] += ssim(a, b) / static_cast<double>(gf.size());
      v.values["psnr"] += psnr(a, b) / static_cast<double>(gf.size());
    }
    for (const auto* p : plugins) v.values[p->name()] = p->evaluate(pred.at(name), gdir);
    r.total_frames += v.frames;
    r.videos.push_back(std::move(v));
  }
  for (const auto& m : r.metrics) {
    double s = 0;
    for (const auto& v : r.videos) s += v.values.at(m);
    r.aggregate[m] = s / static_cast<double>(r.videos.size());
  }
  return r;
}

inline void write_report(const std::filesystem::path& path, const EvalReport& r) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IngestionError("cannot write report " + path.string());
  os << to_json(r).dump(2) << '\n';
}

inline EvalReport read_report(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IngestionError("cannot read report " + path.string());
  return report_from_json(nlohmann::json::parse(is));
}

}  // namespace dinet
