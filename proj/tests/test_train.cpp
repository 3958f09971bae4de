#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "dinet/synthetic.hpp"
#include "dinet/train.hpp"

namespace dinet {
namespace {

namespace fs = std::filesystem;

TEST(Config, ParsesKeysCommentsAndPreset) {
  const RunConfig c = parse_config(
      "# toy run\n"
      "seed = 7\n"
      "preset = toy   # keeps the seed\n"
      "\n"
      "lr = 0.001\n"
      "lambda_sync = 0\n"
      "perceptual = identity\n"
      "feather_band = 3\n");
  EXPECT_EQ(c.network.height, 64);
  EXPECT_EQ(c.network.seed, 7U);
  EXPECT_EQ(c.train.seed, 7U);
  EXPECT_EQ(c.train.adam.lr, 0.001);
  EXPECT_EQ(c.train.weights.lambda_sync, 0.0);
  EXPECT_EQ(c.train.perceptual, "identity");
  EXPECT_EQ(c.feather_band, 3);
}

TEST(Config, ErrorsNameTheLine) {
  try {
    parse_config("seed = 1\nbatchsize = 4\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("batchsize"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_config("lr = fast\n"), ConfigError);
  EXPECT_THROW(parse_config("lr\n"), ConfigError);
  EXPECT_THROW(parse_config("device = cuda\n"), ConfigError);
  EXPECT_THROW(parse_config("lambda_p = -1\n"), ConfigError);
  EXPECT_THROW(parse_config("height = 30\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/dinet.cfg"), ConfigError);
}

TEST(Config, FormatRoundTrips) {
  RunConfig c = parse_config("preset = toy\nseed = 3\nlr = 0.000123\nperceptual = vgg19-random:8\n");
  const RunConfig back = parse_config(format_config(c));
  EXPECT_EQ(format_config(back), format_config(c));
  EXPECT_EQ(back.network, c.network);
  EXPECT_EQ(back.train.adam.lr, 0.000123);
}

std::vector<FaceClip> toy_clips(int64_t count, int64_t frames, uint64_t seed) {
  std::vector<FaceClip> out;
  for (const auto& rec : make_synthetic_dataset(count, {.frame_h = 96, .frame_w = 96, .frames = frames, .seed = seed}))
    out.push_back(prepare_clip(rec, 64, 48));
  return out;
}

TrainConfig toy_train() {
  TrainConfig t;
  t.batch_size = 1;
  t.syncnet_batch_size = 4;
  t.reference_radius = 1;
  t.adam.lr = 1e-3;
  t.seed = 5;
  return t;
}

NetworkConfig toy_net() {
  NetworkConfig n = NetworkConfig::toy();
  n.seed = 5;
  return n;
}

TEST(SyncNetTrainer, StepsAreFiniteAndDeterministic) {
  const auto clips = toy_clips(2, 12, 1);
  SyncNetTrainer a(toy_net(), toy_train(), clips), b(toy_net(), toy_train(), clips);
  for (int i = 0; i < 3; ++i) {
    const double la = a.step();
    EXPECT_TRUE(std::isfinite(la));
    EXPECT_GE(la, 0.0);
    EXPECT_LE(la, 1.0);
    EXPECT_EQ(la, b.step());
  }
  EXPECT_EQ(a.iteration(), 3);
}

TEST(SyncNetTrainer, MismatchNeedsDistantFrames) {
  const auto clip = toy_clips(1, 4, 2);
  SyncNetTrainer t(toy_net(), toy_train(), clip);
  EXPECT_THROW(t.step(), SamplingError);
}

TEST(SyncNetTrainer, CheckpointRestoresOptimizerState) {
  const auto clips = toy_clips(1, 12, 3);
  SyncNetTrainer a(toy_net(), toy_train(), clips);
  a.step();
  a.step();
  const Checkpoint ck = a.checkpoint();
  SyncNetTrainer b(toy_net(), toy_train(), clips);
  b.restore(ck);
  EXPECT_EQ(b.iteration(), 2);
  const auto pa = a.net().parameters(), pb = b.net().parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].var.value().vec(), pb[i].var.value().vec());
  for (const auto& [name, t] : ck.tensors) EXPECT_TRUE(b.checkpoint().has(name)) << name;
  for (const auto& [name, t] : b.checkpoint().tensors) EXPECT_EQ(t.vec(), ck.get(name).vec()) << name;
}

DinetTrainer toy_dinet(const std::vector<FaceClip>& clips, TrainConfig t = toy_train(),
                       std::optional<SyncNet> sync = std::nullopt) {
  return DinetTrainer(toy_net(), t, clips, std::move(sync), make_perceptual_extractor("vgg19-random:16", 2));
}

TEST(DinetTrainer, SyncnetRequirements) {
  const auto clips = toy_clips(1, 10, 4);
  EXPECT_THROW(toy_dinet(clips), ConfigError);
  NetworkConfig other = toy_net();
  other.mouth_size = 32;
  try {
    toy_dinet(clips, toy_train(), SyncNet(other));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("mouth_size"), std::string::npos) << e.what();
  }
  TrainConfig no_sync = toy_train();
  no_sync.weights.lambda_sync = 0;
  EXPECT_NO_THROW(toy_dinet(clips, no_sync));
  NetworkConfig big = toy_net();
  big.height = 68;
  EXPECT_THROW(DinetTrainer(big, no_sync, clips, std::nullopt, make_perceptual_extractor("identity")), ConfigError);
}

TEST(DinetTrainer, FrozenNetworksDoNotMove) {
  const auto clips = toy_clips(1, 10, 5);
  NetworkConfig net = toy_net();
  DinetTrainer t = toy_dinet(clips, toy_train(), SyncNet(net));
  auto snapshot = [](const nn::ParamList& ps) {
    std::vector<Storage> v;
    for (const auto& p : ps) v.push_back(p.var.value().vec());
    return v;
  };
  const auto sync0 = snapshot(t.syncnet()->parameters()), ext0 = snapshot(t.extractor().parameters());
  const auto gen0 = snapshot(t.generator().parameters()), disc0 = snapshot(t.discriminator_parameters());
  for (int i = 0; i < 2; ++i) {
    const DinetLosses l = t.step();
    EXPECT_TRUE(std::isfinite(l.generator));
    EXPECT_GT(l.sync, 0.0);
  }
  EXPECT_EQ(snapshot(t.syncnet()->parameters()), sync0);
  EXPECT_EQ(snapshot(t.extractor().parameters()), ext0);
  EXPECT_NE(snapshot(t.generator().parameters()), gen0);
  EXPECT_NE(snapshot(t.discriminator_parameters()), disc0);
  for (const auto& p : t.discriminator_parameters()) EXPECT_FALSE(p.var.requires_grad()) << p.name;
}

TEST(DinetTrainer, ZeroSyncWeightSkipsSyncnet) {
  const auto clips = toy_clips(1, 10, 6);
  TrainConfig cfg = toy_train();
  cfg.weights.lambda_sync = 0;
  DinetTrainer t = toy_dinet(clips, cfg);
  const DinetLosses l = t.step();
  EXPECT_EQ(l.sync, 0.0);
  EXPECT_NEAR(l.generator, cfg.weights.lambda_p * l.perception + l.g_frame + l.g_seq, 1e-12);
}

TEST(DinetTrainer, RunsAreReproducible) {
  const auto clips = toy_clips(2, 10, 7);
  TrainConfig cfg = toy_train();
  cfg.weights.lambda_sync = 0;
  std::ostringstream sink;
  TrainLog la(&sink), lb;
  toy_dinet(clips, cfg).run(3, la);
  toy_dinet(clips, cfg).run(3, lb);
  EXPECT_EQ(la.timeless(), lb.timeless());
  ASSERT_EQ(la.records().size(), 3U);
  EXPECT_EQ(la.records()[2]["iter"], 3);
  EXPECT_TRUE(la.records()[0].contains("wall_s"));
  EXPECT_FALSE(la.timeless()[0].contains("wall_s"));
  for (const char* key : {"loss_p", "loss_sync", "loss_g_frame", "loss_g_seq", "loss_g", "loss_d_frame", "loss_d_seq"})
    EXPECT_TRUE(la.records()[0].contains(key)) << key;
  const std::string text = sink.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
}

TEST(DinetTrainer, NonFiniteLossRaisesDivergence) {
  auto clips = toy_clips(1, 10, 8);
  TrainConfig cfg = toy_train();
  cfg.weights.lambda_sync = 0;
  for (const bool early : {true, false}) {
    DinetTrainer t = toy_dinet(clips, cfg);
    // Poison the first (encoder) or last (decoder) generator weight.
    const auto params = t.generator().parameters();
    Var w = (early ? params.front() : params.back()).var;
    w.mutable_value()[0] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(t.step(), TrainingDivergence);
  }
  clips[0].features[3] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(toy_dinet(clips, cfg), IngestionError);
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("dinet_test_train_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const auto dir = scratch("bytes");
  const auto clips = toy_clips(1, 10, 9);
  TrainConfig cfg = toy_train();
  cfg.weights.lambda_sync = 0;
  DinetTrainer t = toy_dinet(clips, cfg);
  t.step();
  save_checkpoint(dir / "a.ckpt", t.checkpoint());
  save_checkpoint(dir / "b.ckpt", load_checkpoint(dir / "a.ckpt"));
  EXPECT_EQ(slurp(dir / "a.ckpt"), slurp(dir / "b.ckpt"));
}

TEST(Checkpoint, ResumeMatchesUninterruptedRun) {
  const auto dir = scratch("resume");
  const auto clips = toy_clips(1, 10, 10);
  TrainConfig cfg = toy_train();
  cfg.weights.lambda_sync = 0;
  DinetTrainer a = toy_dinet(clips, cfg);
  a.step();
  save_checkpoint(dir / "a.ckpt", a.checkpoint());
  DinetTrainer b = toy_dinet(clips, cfg);
  b.restore(load_checkpoint(dir / "a.ckpt"));
  EXPECT_EQ(b.iteration(), 1);
  for (const auto& [name, tensor] : a.checkpoint().tensors) EXPECT_EQ(b.checkpoint().get(name).vec(), tensor.vec()) << name;

  // Bit-exact inference after reload.
  save_dinet(dir / "g.ckpt", a.generator());
  const Dinet g = load_dinet(dir / "g.ckpt", toy_net());
  std::mt19937_64 rng(1);
  const TrainingSample s = build_training_sample(clips[0], 5, rng, 1);
  EXPECT_EQ(g.infer(s.source, s.references, s.audio).vec(), a.generator().infer(s.source, s.references, s.audio).vec());
}

TEST(Checkpoint, MismatchesAreNamed) {
  const auto dir = scratch("mismatch");
  save_dinet(dir / "g.ckpt", Dinet(toy_net()));
  NetworkConfig other = toy_net();
  other.feature_channels = 16;
  try {
    load_dinet(dir / "g.ckpt", other);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("feature_channels"), std::string::npos) << e.what();
  }
  save_syncnet(dir / "s.ckpt", SyncNet(toy_net()));
  EXPECT_THROW(load_dinet(dir / "s.ckpt"), ConfigError);

  std::string bytes = slurp(dir / "g.ckpt");
  const auto pos = bytes.find("dinet-checkpoint/1");
  ASSERT_NE(pos, std::string::npos);
  bytes[pos + 17] = '9';
  std::ofstream(dir / "bad.ckpt", std::ios::binary) << bytes;
  EXPECT_THROW(load_checkpoint(dir / "bad.ckpt"), VersionMismatch);
}

}  // namespace
}  // namespace dinet
