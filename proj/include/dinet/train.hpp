#pragma once

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "dinet/checkpoint.hpp"
#include "dinet/config.hpp"
#include "dinet/data.hpp"
#include "dinet/losses.hpp"
#include "dinet/networks.hpp"
#include "dinet/optim.hpp"

namespace dinet {

/// Line-delimited JSON progress records. Every record carries `iter`, the
/// loss terms and `wall_s` (seconds since the log was created).
class TrainLog {
 public:
  explicit TrainLog(std::ostream* sink = nullptr) : sink_(sink), start_(std::chrono::steady_clock::now()) {}

  void add(nlohmann::json record) {
    record["wall_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    if (sink_) *sink_ << record.dump() << '\n' << std::flush;
    records_.push_back(std::move(record));
  }

  const std::vector<nlohmann::json>& records() const noexcept { return records_; }

  /// Records without the wall-clock field, for run-to-run comparison.
  std::vector<nlohmann::json> timeless() const {
    auto out = records_;
    for (auto& r : out) r.erase("wall_s");
    return out;
  }

 private:
  std::ostream* sink_;
  std::chrono::steady_clock::time_point start_;
  std::vector<nlohmann::json> records_;
};

inline void require_finite(double v, const char* term, int64_t iteration) {
  if (!std::isfinite(v))
    throw TrainingDivergence("non-finite " + std::string(term) + " (" + std::to_string(v) + ") at iteration " +
                             std::to_string(iteration));
}

inline nlohmann::json train_config_json(const TrainConfig& t) {
  return {{"lr", t.adam.lr},
          {"beta1", t.adam.beta1},
          {"beta2", t.adam.beta2},
          {"eps", t.adam.eps},
          {"batch_size", t.batch_size},
          {"syncnet_batch_size", t.syncnet_batch_size},
          {"lambda_p", t.weights.lambda_p},
          {"lambda_sync", t.weights.lambda_sync},
          {"reference_radius", t.reference_radius},
          {"perceptual", t.perceptual},
          {"seed", t.seed}};
}

// ---------------------------------------------------------------------------
// Syncnet pretraining

/// Mouth crops (3 x M x M) for every frame of every clip.
class MouthCache {
 public:
  MouthCache() = default;
  MouthCache(const std::vector<FaceClip>& clips, int64_t size) {
    for (const auto& c : clips) {
      std::vector<Tensor> m;
      for (const auto& f : c.faces) m.push_back(mouth_crop(f, size));
      mouths_.push_back(std::move(m));
    }
  }

  /// Five mouths centred on frame t (edges replicated), 15 x M x M.
  Tensor window(std::size_t clip, int64_t t) const {
    const auto& m = mouths_.at(clip);
    const auto n = static_cast<int64_t>(m.size());
    std::vector<Tensor> parts;
    for (int64_t k = -kReferenceCount / 2; k <= kReferenceCount / 2; ++k)
      parts.push_back(m[static_cast<std::size_t>(std::clamp<int64_t>(t + k, 0, n - 1))]);
    return concat_channels(parts);
  }

 private:
  std::vector<std::vector<Tensor>> mouths_;
};

/// Mismatched pairs are at least this many frames apart (or from another clip).
inline constexpr int64_t kSyncMinShift = 5;

struct SyncPair {
  Tensor audio;   // T x 29
  Tensor mouths;  // 15 x M x M
  double label = 1.0;
};

/// Matched pair (label 1) at a random frame, or a time-shifted mismatch
/// (label 0): the audio window comes from a frame at least kSyncMinShift away.
inline SyncPair draw_sync_pair(const std::vector<FaceClip>& clips, const MouthCache& cache, bool matched,
                               int64_t audio_T, std::mt19937_64& rng) {
  const auto c = static_cast<std::size_t>(uniform_index(rng, clips.size()));
  const int64_t n = clips[c].size();
  const auto t = static_cast<int64_t>(uniform_index(rng, static_cast<uint64_t>(n)));
  SyncPair p;
  p.mouths = cache.window(c, t);
  if (matched) {
    p.audio = audio_window(clips[c].features, t, audio_T);
    return p;
  }
  p.label = 0.0;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const auto c2 = static_cast<std::size_t>(uniform_index(rng, clips.size()));
    const auto t2 = static_cast<int64_t>(uniform_index(rng, static_cast<uint64_t>(clips[c2].size())));
    if (c2 != c || std::abs(t2 - t) >= kSyncMinShift) {
      p.audio = audio_window(clips[c2].features, t2, audio_T);
      return p;
    }
  }
  throw SamplingError("cannot draw a time-shifted pair: clips are shorter than " + std::to_string(kSyncMinShift + 1) +
                      " frames");
}

struct SyncSeparation {
  double matched = 0;
  double mismatched = 0;
  double gap() const { return matched - mismatched; }
};

inline SyncSeparation evaluate_sync(const SyncNet& net, const std::vector<FaceClip>& clips, int64_t pairs,
                                    uint64_t seed) {
  const MouthCache cache(clips, net.config().mouth_size);
  std::mt19937_64 rng(seed);
  SyncSeparation s;
  for (int64_t i = 0; i < pairs; ++i) {
    const auto m = draw_sync_pair(clips, cache, true, net.config().audio_window, rng);
    const auto x = draw_sync_pair(clips, cache, false, net.config().audio_window, rng);
    s.matched += net.score_value(m.audio, m.mouths) / static_cast<double>(pairs);
    s.mismatched += net.score_value(x.audio, x.mouths) / static_cast<double>(pairs);
  }
  return s;
}

class SyncNetTrainer {
 public:
  SyncNetTrainer(const NetworkConfig& net, const TrainConfig& cfg, std::vector<FaceClip> clips)
      : cfg_(cfg), clips_(std::move(clips)), net_(net), opt_(net_.parameters(), cfg.adam), rng_(cfg.seed + 1) {
    cfg_.validate();
    if (clips_.empty()) throw IngestionError("syncnet training needs at least one clip");
    for (const auto& c : clips_) c.validate();
    cache_ = MouthCache(clips_, net.mouth_size);
  }

  /// One optimisation step over `syncnet_batch_size` pairs; returns the loss.
  double step() {
    const int64_t b = cfg_.syncnet_batch_size;
    opt_.zero_grad();
    std::vector<Var> terms;
    for (int64_t i = 0; i < b; ++i) {
      const auto p = draw_sync_pair(clips_, cache_, i < b / 2 + b % 2, net_.config().audio_window, rng_);
      const Var score = net_.score(Var(p.audio), Var(p.mouths));
      terms.push_back(ops::square(ops::add_scalar(score, -p.label)));
    }
    const Var loss = ops::scale(ops::add_all(terms), 1.0 / static_cast<double>(b));
    ++iteration_;
    require_finite(loss.value()[0], "syncnet loss", iteration_);
    backward(loss);
    opt_.step();
    return loss.value()[0];
  }

  void run(int64_t iterations, TrainLog& log, const std::function<void(int64_t)>& on_checkpoint = {}) {
    for (int64_t i = 0; i < iterations; ++i) {
      const double loss = step();
      if (iteration_ % cfg_.log_every == 0) log.add({{"iter", iteration_}, {"loss_sync", loss}});
      if (on_checkpoint && cfg_.checkpoint_every > 0 && iteration_ % cfg_.checkpoint_every == 0) on_checkpoint(iteration_);
    }
  }

  const SyncNet& net() const noexcept { return net_; }
  int64_t iteration() const noexcept { return iteration_; }

  Checkpoint checkpoint() {
    Checkpoint ck;
    ck.kind = "syncnet";
    ck.config = net_.config();
    ck.meta = {{"iteration", iteration_}, {"train", train_config_json(cfg_)}};
    ck.add("", net_.parameters());
    ck.add_optimizer("opt.", opt_);
    return ck;
  }

  /// Restores weights and optimizer state (the sampler restarts from the seed).
  void restore(const Checkpoint& ck) {
    checkpoint_config(ck, "syncnet", net_.config());
    ck.assign("", net_.parameters());
    ck.restore_optimizer("opt.", opt_);
    iteration_ = ck.meta.value("iteration", int64_t{0});
  }

 private:
  TrainConfig cfg_;
  std::vector<FaceClip> clips_;
  SyncNet net_;
  Adam opt_;
  MouthCache cache_;
  std::mt19937_64 rng_;
  int64_t iteration_ = 0;
};

// ---------------------------------------------------------------------------
// DINet training

struct DinetLosses {
  double perception = 0;
  double sync = 0;
  double g_frame = 0;
  double g_seq = 0;
  double generator = 0;
  double d_frame = 0;
  double d_seq = 0;

  nlohmann::json to_json(int64_t iteration) const {
    return {{"iter", iteration},  {"loss_p", perception},  {"loss_sync", sync}, {"loss_g_frame", g_frame},
            {"loss_g_seq", g_seq}, {"loss_g", generator}, {"loss_d_frame", d_frame}, {"loss_d_seq", d_seq}};
  }
};

/// Number of consecutive frames per batch item (the sequence discriminator's input).
inline constexpr int64_t kSequenceLength = 5;

class DinetTrainer {
 public:
  /// `syncnet` may be empty only when lambda_sync is 0.
  DinetTrainer(const NetworkConfig& net, const TrainConfig& cfg, std::vector<FaceClip> clips,
               std::optional<SyncNet> syncnet, std::unique_ptr<PerceptualExtractor> extractor)
      : cfg_(cfg),
        clips_(std::move(clips)),
        gen_(net),
        d_frame_(make_frame_discriminator(net)),
        d_seq_(make_sequence_discriminator(net)),
        syncnet_(std::move(syncnet)),
        extractor_(std::move(extractor)),
        opt_g_(gen_.parameters(), cfg.adam),
        opt_d_(discriminator_parameters(), cfg.adam),
        rng_(cfg.seed + 2) {
    cfg_.validate();
    if (!extractor_) throw ConfigError("train-dinet needs a perceptual extractor");
    if (clips_.empty()) throw IngestionError("DINet training needs at least one clip");
    for (const auto& c : clips_) {
      c.validate();
      if (c.height() != net.height || c.width() != net.width)
        throw ConfigError("clip '" + c.identity + "' faces are " + std::to_string(c.height()) + "x" +
                          std::to_string(c.width()) + ", network expects " + std::to_string(net.height) + "x" +
                          std::to_string(net.width));
      if (c.size() < kSequenceLength) throw SamplingError("clip '" + c.identity + "' is shorter than 5 frames");
    }
    if (cfg_.weights.lambda_sync > 0) {
      if (!syncnet_) throw ConfigError("train-dinet needs a syncnet checkpoint when lambda_sync > 0");
      for (const char* field : {"mouth_size", "audio_window"})
        if (nlohmann::json(syncnet_->config())[field] != nlohmann::json(net)[field])
          throw ConfigError(std::string("syncnet checkpoint config field '") + field + "' differs from the network config");
    }
    if (syncnet_) nn::set_requires_grad(syncnet_->parameters(), false);
    nn::set_requires_grad(extractor_->parameters(), false);
    nn::set_requires_grad(discriminator_parameters(), false);
  }

  DinetLosses step() {
    const int64_t batch = cfg_.batch_size;
    const double inv_b = 1.0 / static_cast<double>(batch), inv_f = 1.0 / static_cast<double>(kSequenceLength);
    const bool use_sync = cfg_.weights.lambda_sync > 0;
    ++iteration_;

    struct Item {
      std::vector<Tensor> real, fake;
    };
    std::vector<Item> items(static_cast<std::size_t>(batch));
    std::vector<Var> p_terms, sync_terms, gf_terms, gs_terms;

    // Generator step; discriminators, syncnet and extractor are frozen.
    opt_g_.zero_grad();
    for (auto& item : items) {
      const auto c = static_cast<std::size_t>(uniform_index(rng_, clips_.size()));
      const FaceClip& clip = clips_[c];
      const auto start = static_cast<int64_t>(uniform_index(rng_, static_cast<uint64_t>(clip.size() - kSequenceLength + 1)));
      std::vector<Var> outs, mouths, frame_p, frame_g;
      for (int64_t k = 0; k < kSequenceLength; ++k) {
        const TrainingSample s =
            build_training_sample(clip, start + k, rng_, cfg_.reference_radius, gen_.config().audio_window);
        Var out;
        try {
          out = gen_.forward(Var(s.source), Var(s.references), Var(s.audio)).image;
        } catch (const InvalidParameter& e) {
          // Non-finite affine coefficients: the weights have blown up.
          throw TrainingDivergence(std::string(e.what()) + " at iteration " + std::to_string(iteration_));
        }
        frame_p.push_back(perception_loss(out, Var(s.target), *extractor_));
        frame_g.push_back(lsgan_g_loss(d_frame_(out)));
        if (use_sync) mouths.push_back(mouth_crop(out, gen_.config().mouth_size));
        outs.push_back(out);
        item.real.push_back(s.target);
        item.fake.push_back(out.value());
      }
      p_terms.push_back(ops::scale(ops::add_all(frame_p), inv_f));
      gf_terms.push_back(ops::scale(ops::add_all(frame_g), inv_f));
      gs_terms.push_back(lsgan_g_loss(d_seq_(ops::concat_channels(outs))));
      if (use_sync) {
        const Tensor audio = audio_window(clip.features, start + kSequenceLength / 2, gen_.config().audio_window);
        sync_terms.push_back(sync_loss(syncnet_->score(Var(audio), ops::concat_channels(mouths))));
      }
    }
    const Var l_p = ops::scale(ops::add_all(p_terms), inv_b);
    const Var l_gf = ops::scale(ops::add_all(gf_terms), inv_b);
    const Var l_gs = ops::scale(ops::add_all(gs_terms), inv_b);
    const Var l_sync = use_sync ? ops::scale(ops::add_all(sync_terms), inv_b) : Var(Tensor({1}, 0.0));
    const Var l_g = ops::add(total_g_loss(l_p, l_sync, l_gf, cfg_.weights), l_gs);

    DinetLosses out;
    out.perception = l_p.value()[0];
    out.sync = l_sync.value()[0];
    out.g_frame = l_gf.value()[0];
    out.g_seq = l_gs.value()[0];
    out.generator = l_g.value()[0];
    require_finite(out.generator, "generator loss", iteration_);
    backward(l_g);
    opt_g_.step();

    // Discriminator step on detached generated frames.
    const auto d_params = discriminator_parameters();
    nn::set_requires_grad(d_params, true);
    opt_d_.zero_grad();
    std::vector<Var> df_terms, ds_terms;
    for (const auto& item : items) {
      std::vector<Var> per_frame;
      for (int64_t k = 0; k < kSequenceLength; ++k)
        per_frame.push_back(lsgan_d_loss(d_frame_(Var(item.real[static_cast<std::size_t>(k)])),
                                         d_frame_(Var(item.fake[static_cast<std::size_t>(k)]))));
      df_terms.push_back(ops::scale(ops::add_all(per_frame), inv_f));
      ds_terms.push_back(lsgan_d_loss(d_seq_(Var(concat_channels(item.real))), d_seq_(Var(concat_channels(item.fake)))));
    }
    const Var l_df = ops::scale(ops::add_all(df_terms), inv_b);
    const Var l_ds = ops::scale(ops::add_all(ds_terms), inv_b);
    out.d_frame = l_df.value()[0];
    out.d_seq = l_ds.value()[0];
    require_finite(out.d_frame + out.d_seq, "discriminator loss", iteration_);
    backward(ops::add(l_df, l_ds));
    opt_d_.step();
    nn::set_requires_grad(d_params, false);
    return out;
  }

  void run(int64_t iterations, TrainLog& log, const std::function<void(int64_t)>& on_checkpoint = {}) {
    for (int64_t i = 0; i < iterations; ++i) {
      const DinetLosses l = step();
      history_.push_back(l);
      if (iteration_ % cfg_.log_every == 0) log.add(l.to_json(iteration_));
      if (on_checkpoint && cfg_.checkpoint_every > 0 && iteration_ % cfg_.checkpoint_every == 0) on_checkpoint(iteration_);
    }
  }

  const Dinet& generator() const noexcept { return gen_; }
  const PatchDiscriminator& frame_discriminator() const noexcept { return d_frame_; }
  const PatchDiscriminator& sequence_discriminator() const noexcept { return d_seq_; }
  const std::optional<SyncNet>& syncnet() const noexcept { return syncnet_; }
  const PerceptualExtractor& extractor() const noexcept { return *extractor_; }
  const std::vector<DinetLosses>& history() const noexcept { return history_; }
  int64_t iteration() const noexcept { return iteration_; }

  nn::ParamList discriminator_parameters() const {
    auto p = d_frame_.parameters("disc_frame");
    nn::append(p, d_seq_.parameters("disc_seq"));
    return p;
  }

  Checkpoint checkpoint() {
    Checkpoint ck;
    ck.kind = "dinet";
    ck.config = gen_.config();
    ck.meta = {{"iteration", iteration_}, {"train", train_config_json(cfg_)}};
    ck.add("", gen_.parameters());
    ck.add("", discriminator_parameters());
    ck.add_optimizer("opt_g.", opt_g_);
    ck.add_optimizer("opt_d.", opt_d_);
    return ck;
  }

  void restore(const Checkpoint& ck) {
    checkpoint_config(ck, "dinet", gen_.config());
    ck.assign("", gen_.parameters());
    ck.assign("", discriminator_parameters());
    ck.restore_optimizer("opt_g.", opt_g_);
    ck.restore_optimizer("opt_d.", opt_d_);
    iteration_ = ck.meta.value("iteration", int64_t{0});
  }

 private:
  TrainConfig cfg_;
  std::vector<FaceClip> clips_;
  Dinet gen_;
  PatchDiscriminator d_frame_, d_seq_;
  std::optional<SyncNet> syncnet_;
  std::unique_ptr<PerceptualExtractor> extractor_;
  Adam opt_g_, opt_d_;
  std::mt19937_64 rng_;
  int64_t iteration_ = 0;
  std::vector<DinetLosses> history_;
};

/// Generator weights from a "dinet" checkpoint.
inline Dinet load_dinet(const std::filesystem::path& path, const std::optional<NetworkConfig>& expected = std::nullopt) {
  const Checkpoint ck = load_checkpoint(path);
  Dinet net(checkpoint_config(ck, "dinet", expected));
  ck.assign("", net.parameters());
  return net;
}

inline void save_dinet(const std::filesystem::path& path, const Dinet& net, nlohmann::json meta = nlohmann::json::object()) {
  Checkpoint ck;
  ck.kind = "dinet";
  ck.config = net.config();
  ck.meta = std::move(meta);
  ck.add("", net.parameters());
  save_checkpoint(path, ck);
}

}  // namespace dinet
