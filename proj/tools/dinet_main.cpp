// dinet: preprocess -> train-syncnet -> train-dinet -> dub -> evaluate, plus
// `synth` for a synthetic demo dataset.
//
// Exit codes: 0 ok, 1 runtime error, 2 usage, 3 configuration or version
// mismatch, 4 ingestion or sampling error, 5 training divergence.

#include <CLI11.hpp>
#include <opencv2/core.hpp>
#include <opencv2/videoio.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dinet/dinet.hpp"

namespace fs = std::filesystem;
using namespace dinet;

namespace {

constexpr int kExitUsage = 2;

// ---------------------------------------------------------------------------
// Video I/O. Frame directories (PPM) are read directly; anything else goes
// through OpenCV. Frames are kept 8-bit until needed.

cv::Mat to_mat(const Image& img) {
  cv::Mat m(static_cast<int>(img.dim(1)), static_cast<int>(img.dim(2)), CV_8UC3);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) {
      auto& px = m.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c) px[2 - c] = quantize(img.at(c, y, x));
    }
  return m;
}

Image to_image(const cv::Mat& m) {
  Image img({3, m.rows, m.cols});
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) {
      const auto& px = m.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = px[2 - c] / 255.0;
    }
  return img;
}

struct Video {
  std::vector<cv::Mat> frames;
  double fps = kVideoFps;
};

Video read_video(const fs::path& path, double dir_fps) {
  Video v;
  if (fs::is_directory(path)) {
    for (const auto& f : list_frames(path)) v.frames.push_back(to_mat(read_ppm(f)));
    v.fps = dir_fps;
  } else {
    if (!fs::exists(path)) throw ConfigError("video not found: " + path.string());
    cv::VideoCapture cap(path.string());
    if (!cap.isOpened()) throw IngestionError("cannot decode video " + path.string());
    v.fps = cap.get(cv::CAP_PROP_FPS);
    cv::Mat frame;
    while (cap.read(frame)) {
      if (frame.type() != CV_8UC3) throw IngestionError(path.string() + ": expected 8-bit colour frames");
      v.frames.push_back(frame.clone());
    }
  }
  if (v.frames.empty()) throw IngestionError("no frames in " + path.string());
  if (!(v.fps > 0)) throw IngestionError(path.string() + ": unknown frame rate");
  return v;
}

bool is_video_file(const fs::path& p) {
  const auto e = p.extension().string();
  return e == ".mp4" || e == ".avi" || e == ".mkv" || e == ".mov";
}

/// Writes frames either to a video container or to a PPM directory.
class FrameWriter {
 public:
  explicit FrameWriter(fs::path out) : out_(std::move(out)) {
    if (!is_video_file(out_)) fs::create_directories(out_);
  }

  void write(int64_t index, const Image& frame) {
    if (!is_video_file(out_)) {
      write_ppm(out_ / frame_name(index), frame);
      return;
    }
    if (!writer_.isOpened()) {
      if (out_.has_parent_path()) fs::create_directories(out_.parent_path());
      const int fourcc = out_.extension() == ".avi" ? cv::VideoWriter::fourcc('M', 'J', 'P', 'G')
                                                    : cv::VideoWriter::fourcc('m', 'p', '4', 'v');
      writer_.open(out_.string(), fourcc, kVideoFps, cv::Size(static_cast<int>(frame.dim(2)), static_cast<int>(frame.dim(1))));
      if (!writer_.isOpened()) throw ConfigError("cannot open video writer for " + out_.string());
    }
    writer_.write(to_mat(frame));
  }

 private:
  fs::path out_;
  cv::VideoWriter writer_;
};

std::vector<std::optional<Landmarks>> read_landmark_source(const fs::path& p) {
  if (!fs::is_directory(p)) return read_landmarks(p);
  for (const char* name : {"landmarks.csv", "landmarks.lmk"})
    if (fs::exists(p / name)) return read_landmarks(p / name);
  throw ConfigError("no landmarks.csv or landmarks.lmk in " + p.string());
}

// ---------------------------------------------------------------------------

struct Globals {
  std::optional<uint64_t> seed;
  std::string config;
  std::string log_level = "info";
};

RunConfig resolve_config(const Globals& g) {
  RunConfig c = g.config.empty() ? RunConfig{} : load_config(g.config);
  if (g.seed) c.set_seed(*g.seed);
  c.validate();
  return c;
}

/// JSON-lines progress goes to `path`, or stdout when empty.
struct LogSink {
  std::ofstream file;
  std::ostream* stream = &std::cout;
  explicit LogSink(const std::string& path) {
    if (path.empty()) return;
    file.open(path, std::ios::trunc);
    if (!file) throw ConfigError("cannot write log " + path);
    stream = &file;
  }
};

// preprocess ----------------------------------------------------------------

struct PreprocessArgs {
  std::string video, landmarks, audio, out, identity;
  double fps = kVideoFps;
};

int run_preprocess(const Globals& g, const PreprocessArgs& a) {
  const RunConfig cfg = resolve_config(g);
  Video video = read_video(a.video, a.fps);
  auto landmarks = read_landmark_source(a.landmarks);
  if (landmarks.size() != video.frames.size())
    throw IngestionError(std::to_string(video.frames.size()) + " frames but " + std::to_string(landmarks.size()) +
                         " landmark entries");
  if (video.fps != kVideoFps) {
    spdlog::info("resampling {} frames from {} fps to 25 fps", video.frames.size(), video.fps);
    video.frames = resample_to_25fps(video.frames, video.fps);
    landmarks = resample_to_25fps(landmarks, video.fps);
  }
  const auto provider = make_audio_provider(cfg.audio_provider, cfg.train.seed);
  FeatureStream features = provider->extract(a.audio);
  const auto n = static_cast<int64_t>(video.frames.size());
  if (features.dim(0) < n)
    throw IngestionError("audio covers " + std::to_string(features.dim(0)) + " frames, video has " + std::to_string(n));
  if (features.dim(0) > n) {
    spdlog::warn("audio is {} frames longer than the video; trimming", features.dim(0) - n);
    features = Tensor({n, kAudioFeatureDim}, Storage(features.vec().begin(), features.vec().begin() + n * kAudioFeatureDim));
  }

  ClipRecord rec;
  rec.identity = a.identity.empty() ? fs::path(a.out).filename().string() : a.identity;
  for (const auto& m : video.frames) rec.frames.push_back(to_image(m));
  rec.landmarks = landmarks;
  rec.features = features;
  const FaceClip clip = prepare_clip(rec, cfg.network.height, cfg.network.width);
  save_clip(a.out, clip, landmarks);
  validate_clip_dir(a.out);
  spdlog::info("wrote {} ({} frames, {}x{} faces)", (fs::path(a.out) / "manifest.json").string(), clip.size(),
               clip.height(), clip.width());
  return 0;
}

// training ------------------------------------------------------------------

struct TrainArgs {
  std::string data, out, syncnet, resume, log;
  std::optional<int64_t> iterations;
};

std::vector<FaceClip> load_training_data(const std::string& root) {
  auto clips = load_dataset(root);
  spdlog::info("loaded {} clip(s) from {}", clips.size(), root);
  return clips;
}

int run_train_syncnet(const Globals& g, const TrainArgs& a) {
  const RunConfig cfg = resolve_config(g);
  auto clips = load_training_data(a.data);
  SyncNetTrainer trainer(cfg.network, cfg.train, clips);
  if (!a.resume.empty()) trainer.restore(load_checkpoint(a.resume));
  LogSink sink(a.log);
  TrainLog log(sink.stream);
  const int64_t iters = a.iterations.value_or(cfg.train.syncnet_iterations);
  trainer.run(iters, log, [&](int64_t) { save_checkpoint(a.out, trainer.checkpoint()); });
  save_checkpoint(a.out, trainer.checkpoint());
  const SyncSeparation s = evaluate_sync(trainer.net(), clips, 100, cfg.train.seed + 7);
  spdlog::info("syncnet after {} iterations: matched {:.4f}, shifted {:.4f}, gap {:.4f}", trainer.iteration(),
               s.matched, s.mismatched, s.gap());
  return 0;
}

int run_train_dinet(const Globals& g, const TrainArgs& a) {
  const RunConfig cfg = resolve_config(g);
  auto clips = load_training_data(a.data);
  std::optional<SyncNet> syncnet;
  if (!a.syncnet.empty()) syncnet = load_syncnet(a.syncnet);
  DinetTrainer trainer(cfg.network, cfg.train, clips, std::move(syncnet),
                       make_perceptual_extractor(cfg.train.perceptual, cfg.train.perceptual_stages));
  if (!a.resume.empty()) trainer.restore(load_checkpoint(a.resume));
  LogSink sink(a.log);
  TrainLog log(sink.stream);
  const int64_t iters = a.iterations.value_or(cfg.train.iterations);
  trainer.run(iters, log, [&](int64_t) { save_checkpoint(a.out, trainer.checkpoint()); });
  save_checkpoint(a.out, trainer.checkpoint());
  spdlog::info("DINet checkpoint written to {} after {} iterations", a.out, trainer.iteration());
  return 0;
}

// dub -----------------------------------------------------------------------

struct DubArgs {
  std::string video, audio, ckpt, out, landmarks;
  double fps = kVideoFps;
  bool no_feather = false;
};

int run_dub(const Globals& g, const DubArgs& a) {
  const RunConfig cfg = resolve_config(g);
  if (a.landmarks.empty())
    throw ConfigError("dub needs --landmarks (landmark detection is not built in)");
  const Dinet net = load_dinet(a.ckpt);
  Video video = read_video(a.video, a.fps);
  auto landmarks = read_landmark_source(a.landmarks);
  if (landmarks.size() != video.frames.size())
    throw IngestionError(std::to_string(video.frames.size()) + " frames but " + std::to_string(landmarks.size()) +
                         " landmark entries");
  if (video.fps != kVideoFps) {
    video.frames = resample_to_25fps(video.frames, video.fps);
    landmarks = resample_to_25fps(landmarks, video.fps);
  }
  const FeatureStream audio = make_audio_provider(cfg.audio_provider, cfg.train.seed)->extract(a.audio);
  FrameWriter writer(a.out);
  const DubReport r = dub_video(
      net, [&](int64_t i) { return to_image(video.frames[static_cast<std::size_t>(i)]); },
      static_cast<int64_t>(video.frames.size()), landmarks, audio,
      [&](int64_t t, const Image& f) { writer.write(t, f); }, {.feather_band = a.no_feather ? 0 : cfg.feather_band});
  for (auto t : r.copied) spdlog::warn("frame {}: no face in source frame, copied unchanged", t);
  spdlog::info("wrote {} frames to {} ({} source frames, references {})", r.frames, a.out, video.frames.size(),
               fmt::join(r.references, ","));
  return 0;
}

// evaluate ------------------------------------------------------------------

struct EvalArgs {
  std::string pred, gt, out;
  std::vector<std::string> plugins;
};

int run_evaluate(const Globals& g, const EvalArgs& a) {
  resolve_config(g);
  std::vector<std::unique_ptr<MetricPlugin>> owned;
  std::vector<const MetricPlugin*> plugins;
  for (const auto& spec : a.plugins) {
    owned.push_back(make_metric_plugin(spec));
    plugins.push_back(owned.back().get());
  }
  const EvalReport r = evaluate_dirs(a.pred, a.gt, plugins);
  if (a.out.empty()) {
    std::cout << to_json(r).dump(2) << '\n';
  } else {
    write_report(a.out, r);
  }
  for (const auto& m : r.metrics) spdlog::info("{}: {}", m, r.aggregate.at(m));
  return 0;
}

// synth ---------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  int64_t clips = 4, frames = 40, size = 96;
};

int run_synth(const Globals& g, const SynthArgs& a) {
  const uint64_t seed = resolve_config(g).train.seed;
  const auto records =
      make_synthetic_dataset(a.clips, {.frame_h = a.size, .frame_w = a.size, .frames = a.frames, .seed = seed});
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    const fs::path dir = fs::path(a.out) / rec.identity;
    write_frames(dir / "frames", rec.frames);
    write_landmarks(dir / "landmarks.csv", rec.landmarks);
    save_features(dir / "features.dsf", rec.features);
    // A quiet tone of matching duration, for providers that start from WAV.
    std::vector<double> samples(static_cast<std::size_t>(rec.size() * 16000 / kVideoFps));
    for (std::size_t k = 0; k < samples.size(); ++k) samples[k] = 0.1 * std::sin(2 * M_PI * 220.0 * k / 16000.0);
    write_wav(dir / "audio.wav", samples, 16000);
    spdlog::info("wrote {} (seed {})", dir.string(), seed + i);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DINet face dubbing: preprocessing, training, dubbing and evaluation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Global seed (overrides the config file)");
  app.add_option("--config", g.config, "key = value config file");
  app.add_option("--log-level", g.log_level, "trace|debug|info|warn|error|off")
      ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error", "off"}));

  PreprocessArgs pre;
  auto* pre_cmd = app.add_subcommand("preprocess", "Crop faces, align audio and write a clip directory");
  pre_cmd->add_option("--video", pre.video, "Video file or directory of PPM frames")->required();
  pre_cmd->add_option("--landmarks", pre.landmarks, "Landmark file (.csv/.lmk) or directory holding one")->required();
  pre_cmd->add_option("--audio", pre.audio, "Feature file (.dsf) or WAV, per audio_provider")->required();
  pre_cmd->add_option("--out", pre.out, "Output clip directory")->required();
  pre_cmd->add_option("--identity", pre.identity, "Identity tag (default: output directory name)");
  pre_cmd->add_option("--fps", pre.fps, "Frame rate of a frame directory")->check(CLI::PositiveNumber);

  TrainArgs ts;
  auto* ts_cmd = app.add_subcommand("train-syncnet", "Pretrain the lip-sync scorer");
  ts_cmd->add_option("--data", ts.data, "Clip directory or directory of clips")->required();
  ts_cmd->add_option("--out", ts.out, "Checkpoint to write")->required();
  ts_cmd->add_option("--iterations", ts.iterations, "Override syncnet_iterations");
  ts_cmd->add_option("--resume", ts.resume, "Continue from a syncnet checkpoint");
  ts_cmd->add_option("--log", ts.log, "Progress log (JSON lines; default stdout)");

  TrainArgs td;
  auto* td_cmd = app.add_subcommand("train-dinet", "Train the dubbing network against a frozen syncnet");
  td_cmd->add_option("--data", td.data, "Clip directory or directory of clips")->required();
  td_cmd->add_option("--syncnet", td.syncnet, "Syncnet checkpoint (required unless lambda_sync = 0)");
  td_cmd->add_option("--out", td.out, "Checkpoint to write")->required();
  td_cmd->add_option("--iterations", td.iterations, "Override iterations");
  td_cmd->add_option("--resume", td.resume, "Continue from a DINet checkpoint");
  td_cmd->add_option("--log", td.log, "Progress log (JSON lines; default stdout)");

  DubArgs dub;
  auto* dub_cmd = app.add_subcommand("dub", "Re-synthesise the mouth of a video to match new audio");
  dub_cmd->add_option("--video", dub.video, "Source video file or directory of PPM frames")->required();
  dub_cmd->add_option("--audio", dub.audio, "Driving audio (WAV or feature file, per audio_provider)")->required();
  dub_cmd->add_option("--ckpt", dub.ckpt, "DINet checkpoint")->required();
  dub_cmd->add_option("--out", dub.out, "Output video (.mp4/.avi/...) or frame directory")->required();
  dub_cmd->add_option("--landmarks", dub.landmarks, "Landmarks of the source video (file or directory)");
  dub_cmd->add_option("--fps", dub.fps, "Frame rate of a frame directory")->check(CLI::PositiveNumber);
  dub_cmd->add_flag("--no-feather", dub.no_feather, "Paste faces back without edge feathering");

  EvalArgs ev;
  auto* ev_cmd = app.add_subcommand("evaluate", "SSIM/PSNR (plus plug-in metrics) of predicted vs ground-truth frames");
  ev_cmd->add_option("--pred", ev.pred, "Predicted frames (video directory or directory of videos)")->required();
  ev_cmd->add_option("--gt", ev.gt, "Ground-truth frames, same layout")->required();
  ev_cmd->add_option("--out", ev.out, "Report file (default: print)");
  ev_cmd->add_option("--plugin", ev.plugins, "Extra metric NAME=COMMAND ({pred}, {gt} substituted)");

  SynthArgs sy;
  auto* sy_cmd = app.add_subcommand("synth", "Write a synthetic talking-face dataset (frames, landmarks, features)");
  sy_cmd->add_option("--out", sy.out, "Output directory")->required();
  sy_cmd->add_option("--clips", sy.clips, "Number of clips")->check(CLI::PositiveNumber);
  sy_cmd->add_option("--frames", sy.frames, "Frames per clip")->check(CLI::PositiveNumber);
  sy_cmd->add_option("--size", sy.size, "Frame height and width in pixels")->check(CLI::Range(32, 4096));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  auto logger = spdlog::stderr_color_mt("dinet");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(g.log_level));

  try {
    if (*pre_cmd) return run_preprocess(g, pre);
    if (*ts_cmd) return run_train_syncnet(g, ts);
    if (*td_cmd) return run_train_dinet(g, td);
    if (*dub_cmd) return run_dub(g, dub);
    if (*ev_cmd) return run_evaluate(g, ev);
    if (*sy_cmd) return run_synth(g, sy);
  } catch (const dinet::Error& e) {
    spdlog::error("{}", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return kExitUsage;
}
