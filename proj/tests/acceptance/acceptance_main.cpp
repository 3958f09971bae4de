// Acceptance checks 1-11. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. `acceptance 6 7` runs a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dinet/dinet.hpp"

using namespace dinet;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.vec()) v = dist(rng);
  return t;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

// ---------------------------------------------------------------------------
// 1-3: AdaAT

Outcome adaat_identity() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int64_t> cdist(1, 8), sdist(1, 16);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const int64_t c = cdist(rng), h = sdist(rng), w = sdist(rng);
    const Tensor f = random_tensor({c, h, w}, rng);
    worst = std::max(worst, max_abs_diff(adaat_deform(f, AffineParamSet::identity(c)), f));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-6 && secs < 5.0, fmt("100 maps, max abs error %.3g, %.2f s", worst, secs)};
}

// Smallest distance of any sampling position of channel k to an integer pixel index.
double boundary_margin(const SamplingGrid& g, int64_t k, int64_t h, int64_t w) {
  double m = 1.0;
  for (int64_t p = 0; p < h * w; ++p) {
    const double ix = (g.coords()[(k * h * w + p) * 2] + 1) * 0.5 * static_cast<double>(w - 1);
    const double iy = (g.coords()[(k * h * w + p) * 2 + 1] + 1) * 0.5 * static_cast<double>(h - 1);
    m = std::min({m, std::abs(ix - std::round(ix)), std::abs(iy - std::round(iy))});
  }
  return m;
}

Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double step) {
  Tensor g(x.shape()), probe = x;
  for (int64_t i = 0; i < x.numel(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double fp = f(probe);
    probe[i] = orig - step;
    const double fm = f(probe);
    probe[i] = orig;
    g[i] = (fp - fm) / (2 * step);
  }
  return g;
}

Outcome adaat_gradients() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<int64_t> cdist(1, 4), sdist(2, 8);
  double worst = 0;
  int checked = 0, skipped = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const int64_t c = cdist(rng), h = sdist(rng), w = sdist(rng);
    const Tensor f = random_tensor({c, h, w}, rng), wts = random_tensor({c, h, w}, rng);
    const Tensor th = random_tensor({c}, rng, -0.6, 0.6), s = random_tensor({c}, rng, 0.6, 1.4);
    const Tensor tx = random_tensor({c}, rng, -0.4, 0.4), ty = random_tensor({c}, rng, -0.4, 0.4);

    Var fv(f, true);
    AffineParamVars pv{Var(th, true), Var(s, true), Var(tx, true), Var(ty, true)};
    backward(ops::sum(ops::mul(adaat_deform(fv, pv), Var(wts))));

    auto eval = [&](const Tensor& f_, const Tensor& th_, const Tensor& s_, const Tensor& tx_, const Tensor& ty_) {
      const Tensor out = adaat_deform(f_, AffineParamSet(th_, s_, tx_, ty_));
      double acc = 0;
      for (int64_t i = 0; i < out.numel(); ++i) acc += out[i] * wts[i];
      return acc;
    };
    const double step = 1e-5;
    const Tensor gf = numeric_gradient([&](const Tensor& x) { return eval(x, th, s, tx, ty); }, f, step);
    for (int64_t i = 0; i < f.numel(); ++i) worst = std::max(worst, rel_err(fv.grad()[i], gf[i]));

    const auto grid = make_affine_grid(AffineParamSet(th, s, tx, ty), h, w);
    const Tensor g[4] = {numeric_gradient([&](const Tensor& x) { return eval(f, x, s, tx, ty); }, th, step),
                         numeric_gradient([&](const Tensor& x) { return eval(f, th, x, tx, ty); }, s, step),
                         numeric_gradient([&](const Tensor& x) { return eval(f, th, s, x, ty); }, tx, step),
                         numeric_gradient([&](const Tensor& x) { return eval(f, th, s, tx, x); }, ty, step)};
    const Var* analytic[4] = {&pv.theta, &pv.scale, &pv.tx, &pv.ty};
    for (int64_t k = 0; k < c; ++k) {
      if (boundary_margin(grid, k, h, w) < 1e-3) {
        ++skipped;
        continue;
      }
      ++checked;
      for (int fam = 0; fam < 4; ++fam) worst = std::max(worst, rel_err(analytic[fam]->grad()[k], g[fam][k]));
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && checked > 0 && secs < 60.0,
          fmt("20 instances, max relative error %.3g, %d coefficient channels checked (%d near cell boundaries), "
              "%.2f s",
              worst, checked, skipped, secs)};
}

Outcome warp_oracles() {
  // One-pixel translation of a 1x4x4 ramp: one pixel spacing is 2/3.
  Tensor ramp({1, 4, 4});
  for (int64_t y = 0; y < 4; ++y)
    for (int64_t x = 0; x < 4; ++x) ramp.at(0, y, x) = 10.0 * static_cast<double>(y) + static_cast<double>(x);
  const auto one = [](double v) { return Tensor({1}, v); };
  const Tensor shifted = adaat_deform(ramp, AffineParamSet(one(0), one(1), one(2.0 / 3.0), one(0)));
  int bad = 0;
  for (int64_t y = 0; y < 4; ++y) {
    for (int64_t x = 0; x < 3; ++x) bad += shifted.at(0, y, x) != ramp.at(0, y, x + 1);
    bad += shifted.at(0, y, 3) != ramp.at(0, y, 3);
  }
  // Quarter turn on a 5x5 map: output (i, j) = input (j, 4 - i).
  std::mt19937_64 rng(303);
  const Tensor f = random_tensor({1, 5, 5}, rng);
  const Tensor rot = adaat_deform(f, AffineParamSet(one(std::numbers::pi / 2), one(1), one(0), one(0)));
  for (int64_t i = 0; i < 5; ++i)
    for (int64_t j = 0; j < 5; ++j) bad += rot.at(0, i, j) != f.at(0, j, 4 - i);
  return {bad == 0, fmt("translation and rotation oracles, %d mismatching pixels", bad)};
}

// ---------------------------------------------------------------------------
// 4-5

Outcome shape_contract() {
  NoGradGuard ng;
  const NetworkConfig cfg = NetworkConfig::full();
  const Dinet net(cfg);
  std::mt19937_64 rng(404);
  const Tensor src = random_tensor({3, 416, 320}, rng, 0, 1), refs = random_tensor({15, 416, 320}, rng, 0, 1);
  const Tensor audio = random_tensor({5, 29}, rng);
  const DinetOutput out = net.forward(Var(src), Var(refs), Var(audio));
  std::vector<std::string> bad;
  auto expect = [&](const char* what, const Shape& got, const Shape& want) {
    if (got != want) bad.push_back(std::string(what) + " " + to_string(got));
  };
  expect("F_s", out.source_features.shape(), {256, 104, 80});
  expect("F_ref", out.reference_features.shape(), {256, 104, 80});
  expect("F_d", out.deformed_features.shape(), {256, 104, 80});
  expect("F_audio", out.audio_features.shape(), {128});
  expect("F_align", out.alignment_features.shape(), {128});
  expect("I_o", out.image.shape(), {3, 416, 320});
  for (const Var* v : {&out.affine.theta, &out.affine.scale, &out.affine.tx, &out.affine.ty})
    expect("affine", v->shape(), {256});
  std::string detail = "F_s/F_ref/F_d 256x104x80, F_audio/F_align 128, I_o 3x416x320, 256x4 affine coefficients";
  for (const auto& b : bad) detail += "; wrong " + b;
  return {bad.empty(), detail};
}

Outcome loss_arithmetic() {
  std::vector<std::string> bad;
  auto check = [&](const std::string& what, double got, double want) {
    if (!(std::abs(got - want) <= 1e-10)) bad.push_back(what + fmt(" = %.12g (want %.12g)", got, want));
  };
  const IdentityExtractor id;
  const Tensor zeros = Tensor::zeros({1, 2, 2}), ones = Tensor::ones({1, 2, 2});
  check("perception(zeros, ones)", perception_loss(zeros, ones, id), 1.0);
  check("perception(ones, zeros)", perception_loss(ones, zeros, id), 1.0);
  check("perception(x, x)", perception_loss(ones, ones, id), 0.0);
  check("d_loss(1, 0)", lsgan_d_loss(Tensor({1, 4, 4}, 1.0), Tensor({1, 4, 4}, 0.0)), 0.0);
  check("d_loss(.5, .5)", lsgan_d_loss(Tensor({1, 4, 4}, 0.5), Tensor({1, 4, 4}, 0.5)), 0.25);
  check("g_loss(1)", lsgan_g_loss(Tensor({1, 4, 4}, 1.0)), 0.0);
  check("g_loss(0)", lsgan_g_loss(Tensor({1, 4, 4}, 0.0)), 1.0);
  check("sync(1)", sync_loss(1.0), 0.0);
  check("sync(0)", sync_loss(0.0), 1.0);
  check("sync(0.6)", sync_loss(0.6), 0.16);
  check("total(0,0,0)", total_g_loss(0, 0, 0), 0.0);
  check("total(1,1,1)", total_g_loss(1, 1, 1), 11.1);
  check("total(.5,.2,.3)", total_g_loss(0.5, 0.2, 0.3), 5.32);
  const LossWeights w;
  if (w.lambda_p != 10.0 || w.lambda_sync != 0.1) bad.push_back("default weights are not 10 / 0.1");

  // Scalar-loop oracles on random inputs.
  std::mt19937_64 rng(505);
  for (int i = 0; i < 10; ++i) {
    const Tensor a = random_tensor({3, 6, 8}, rng, 0, 1), b = random_tensor({3, 6, 8}, rng, 0, 1);
    double full = 0, half = 0;
    for (int64_t k = 0; k < a.numel(); ++k) full += std::abs(a[k] - b[k]);
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t y = 0; y < 3; ++y)
        for (int64_t x = 0; x < 4; ++x) {
          double da = 0, db = 0;
          for (int64_t dy = 0; dy < 2; ++dy)
            for (int64_t dx = 0; dx < 2; ++dx) {
              da += a.at(c, 2 * y + dy, 2 * x + dx) / 4;
              db += b.at(c, 2 * y + dy, 2 * x + dx) / 4;
            }
          half += std::abs(da - db);
        }
    check("perception oracle", perception_loss(a, b, id), (full / 144.0 + half / 36.0) / 2.0);
    const Tensor dr = random_tensor({1, 5, 4}, rng), df = random_tensor({1, 5, 4}, rng);
    double sd = 0, sg = 0;
    for (int64_t k = 0; k < 20; ++k) {
      sd += 0.5 * (dr[k] - 1) * (dr[k] - 1) / 20 + 0.5 * df[k] * df[k] / 20;
      sg += (df[k] - 1) * (df[k] - 1) / 20;
    }
    check("d_loss oracle", lsgan_d_loss(dr, df), sd);
    check("g_loss oracle", lsgan_g_loss(df), sg);
  }
  std::string detail = "perception, LS-GAN, sync and total-loss examples at 1e-10; weights 10 / 0.1";
  for (const auto& b : bad) detail += "; " + b;
  return {bad.empty(), detail};
}

// ---------------------------------------------------------------------------
// 6, 7, 9 and their reruns for 11

constexpr uint64_t kSeed = 2024;

NetworkConfig toy_net() {
  NetworkConfig n = NetworkConfig::toy();
  n.seed = kSeed;
  return n;
}

std::vector<FaceClip> bundled_dataset() {
  std::vector<FaceClip> clips;
  for (const auto& rec : make_synthetic_dataset(4, {.frame_h = 96, .frame_w = 96, .frames = 40, .seed = kSeed}))
    clips.push_back(prepare_clip(rec, 64, 48));
  return clips;
}

std::vector<Tensor> param_values(const nn::ParamList& ps) {
  std::vector<Tensor> out;
  for (const auto& p : ps) out.push_back(p.var.value());
  return out;
}

struct SyncRun {
  std::vector<nlohmann::json> log;
  SyncSeparation sep;
  std::vector<Tensor> params;
  std::optional<SyncNet> net;
  double seconds = 0;
};

SyncRun run_syncnet() {
  const auto t0 = Clock::now();
  const auto clips = bundled_dataset();
  TrainConfig cfg;  // lr 1e-4, batch 20
  cfg.seed = kSeed;
  SyncNetTrainer trainer(toy_net(), cfg, clips);
  TrainLog log;
  trainer.run(500, log);
  SyncRun r;
  r.sep = evaluate_sync(trainer.net(), clips, 200, kSeed + 9);
  r.log = log.timeless();
  r.net = trainer.net();
  r.params = param_values(r.net->parameters());
  r.seconds = seconds_since(t0);
  return r;
}

struct DinetRun {
  std::vector<nlohmann::json> log;
  double lp_10 = 0, lp_final = 0, mouth_ssim = 0;
  std::vector<Image> generated;
  std::optional<Dinet> gen;
  bool finite = true;
  double seconds = 0;
};

FaceClip overfit_clip() {
  return prepare_clip(make_synthetic_clip({.frame_h = 96, .frame_w = 96, .frames = 8, .seed = kSeed + 50}), 64, 48);
}

DinetRun run_dinet(const SyncNet& syncnet) {
  const auto t0 = Clock::now();
  const FaceClip clip = overfit_clip();
  TrainConfig cfg;
  cfg.seed = kSeed;
  cfg.adam.lr = 1e-3;
  cfg.reference_radius = 1;
  DinetTrainer trainer(toy_net(), cfg, {clip}, syncnet, make_perceptual_extractor("vgg19-random", 5));
  TrainLog log;
  trainer.run(500, log);
  DinetRun r;
  r.log = log.timeless();
  r.lp_10 = trainer.history()[9].perception;
  r.lp_final = trainer.history().back().perception;
  for (const auto& l : trainer.history())
    for (double v : {l.perception, l.sync, l.g_frame, l.g_seq, l.generator, l.d_frame, l.d_seq})
      r.finite = r.finite && std::isfinite(v);

  std::mt19937_64 rng(kSeed + 3);
  const PixelRect m = mouth_rect(clip.height(), clip.width());
  for (int64_t i = 0; i < clip.size(); ++i) {
    const TrainingSample s = build_training_sample(clip, i, rng, cfg.reference_radius);
    const Image out = trainer.generator().infer(s.source, s.references, s.audio);
    r.mouth_ssim += ssim(crop_region(out, m.top, m.left, m.height, m.width),
                         crop_region(s.target, m.top, m.left, m.height, m.width)) /
                    static_cast<double>(clip.size());
    r.generated.push_back(out);
  }
  r.gen = trainer.generator();
  r.seconds = seconds_since(t0);
  return r;
}

struct DubRun {
  ClipRecord source;
  FeatureStream audio;
  std::vector<Image> frames;
  DubReport report;
};

DubRun run_dub(const Dinet& net) {
  DubRun r;
  r.source = make_synthetic_clip({.frame_h = 96, .frame_w = 96, .frames = 12, .seed = kSeed + 70});
  // 1.3 s of driving audio, longer than the 0.48 s source, so frames loop.
  r.audio = SyntheticAudioProvider(kSeed + 71).stream(frames_for_duration(1.3));
  r.frames = dub_frames(net, r.source.frames, r.source.landmarks, r.audio, {.feather_band = 0}, &r.report);
  return r;
}

struct Cache {
  std::optional<SyncRun> sync;
  std::optional<DinetRun> dinet;
  std::optional<DubRun> dub;

  SyncRun& get_sync() {
    if (!sync) sync = run_syncnet();
    return *sync;
  }
  DinetRun& get_dinet() {
    if (!dinet) dinet = run_dinet(*get_sync().net);
    return *dinet;
  }
  DubRun& get_dub() {
    if (!dub) dub = run_dub(*get_dinet().gen);
    return *dub;
  }
};

Outcome syncnet_separation(Cache& c) {
  const SyncRun& r = c.get_sync();
  return {r.sep.gap() >= 0.2 && r.seconds < 600,
          fmt("500 iterations: matched %.4f, shifted %.4f, gap %.4f (>= 0.2), %.1f s", r.sep.matched, r.sep.mismatched,
              r.sep.gap(), r.seconds)};
}

Outcome dinet_overfit(Cache& c) {
  const DinetRun& r = c.get_dinet();
  const double ratio = r.lp_final / r.lp_10;
  return {ratio <= 0.5 && r.mouth_ssim >= 0.80 && r.finite && r.seconds < 900,
          fmt("500 iterations: L_p %.4f -> %.4f (%.1f%% of iteration 10), mouth SSIM %.4f (>= 0.80), losses %s, "
              "%.1f s",
              r.lp_10, r.lp_final, 100 * ratio, r.mouth_ssim, r.finite ? "finite" : "NOT finite", r.seconds)};
}

Outcome frozen_parameters(Cache& c) {
  const SyncNet& syncnet = *c.get_sync().net;
  const FaceClip clip = overfit_clip();
  TrainConfig cfg;
  cfg.seed = kSeed + 1;
  cfg.batch_size = 1;
  cfg.reference_radius = 1;
  DinetTrainer trainer(toy_net(), cfg, {clip}, syncnet, make_perceptual_extractor("vgg19-random", 5));
  const auto sync0 = param_values(trainer.syncnet()->parameters());
  const auto ext0 = param_values(trainer.extractor().parameters());
  const auto gen0 = param_values(trainer.generator().parameters());
  for (int i = 0; i < 100; ++i) trainer.step();
  const bool sync_same = param_values(trainer.syncnet()->parameters()) == sync0;
  const bool ext_same = param_values(trainer.extractor().parameters()) == ext0;
  const bool gen_moved = param_values(trainer.generator().parameters()) != gen0;
  return {sync_same && ext_same && gen_moved,
          fmt("after 100 steps: syncnet %s, perceptual extractor %s (%zu tensors), generator %s",
              sync_same ? "bit-identical" : "CHANGED", ext_same ? "bit-identical" : "CHANGED", ext0.size(),
              gen_moved ? "updated" : "NOT updated")};
}

Outcome dub_locality(Cache& c) {
  const DubRun& r = c.get_dub();
  const int64_t want = frames_for_duration(1.3);
  const auto n = static_cast<int64_t>(r.source.frames.size());
  int64_t outside = 0, differing = 0, inside_changed = 0;
  for (int64_t t = 0; t < static_cast<int64_t>(r.frames.size()); ++t) {
    const Image& src = r.source.frames[static_cast<std::size_t>(t % n)];
    const Image& out = r.frames[static_cast<std::size_t>(t)];
    const PixelRect fp = crop_transform(*r.source.landmarks[static_cast<std::size_t>(t % n)], 96, 96, 64, 48).footprint();
    for (int64_t ch = 0; ch < 3; ++ch)
      for (int64_t y = 0; y < 96; ++y)
        for (int64_t x = 0; x < 96; ++x) {
          const bool same = out.at(ch, y, x) == src.at(ch, y, x);
          if (fp.contains(y, x)) {
            inside_changed += !same;
          } else {
            ++outside;
            differing += !same;
          }
        }
  }
  const auto got = static_cast<int64_t>(r.frames.size());
  return {got == want && r.audio.dim(0) == want && differing == 0 && inside_changed > 0,
          fmt("%lld output frames for %lld audio frames (1.3 s) from %lld source frames; %lld of %lld pixels outside "
              "crop rectangles differ; %lld inside changed",
              static_cast<long long>(got), static_cast<long long>(want), static_cast<long long>(n),
              static_cast<long long>(differing), static_cast<long long>(outside),
              static_cast<long long>(inside_changed))};
}

// ---------------------------------------------------------------------------
// 10

double ssim_oracle(const Tensor& a, const Tensor& b) {
  double g[11][11], gs = 0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) gs += g[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0;
  for (int64_t c = 0; c < a.dim(0); ++c) {
    double sum = 0;
    int64_t count = 0;
    for (int64_t y = 0; y + 11 <= a.dim(1); ++y)
      for (int64_t x = 0; x + 11 <= a.dim(2); ++x) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            const double wgt = g[i][j] / gs, p = a.at(c, y + i, x + j), q = b.at(c, y + i, x + j);
            mx += wgt * p, my += wgt * q, sxx += wgt * p * p, syy += wgt * q * q, sxy += wgt * p * q;
          }
        const double vx = sxx - mx * mx, vy = syy - my * my, cov = sxy - mx * my;
        sum += (2 * mx * my + c1) * (2 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++count;
      }
    total += sum / static_cast<double>(count);
  }
  return total / static_cast<double>(a.dim(0));
}

Outcome metric_oracles() {
  std::mt19937_64 rng(1010);
  double ssim_err = 0, psnr_err = 0;
  for (int i = 0; i < 10; ++i) {
    const Tensor a = random_tensor({3, 21, 17}, rng, 0, 1), b = random_tensor({3, 21, 17}, rng, 0, 1);
    ssim_err = std::max(ssim_err, std::abs(ssim(a, b) - ssim_oracle(a, b)));
    double se = 0;
    for (int64_t k = 0; k < a.numel(); ++k) se += (a[k] - b[k]) * (a[k] - b[k]);
    psnr_err = std::max(psnr_err, std::abs(psnr(a, b) - 10 * std::log10(static_cast<double>(a.numel()) / se)));
  }
  // Values computed with scikit-image for a closed-form image pair.
  Tensor a({3, 24, 20}), b({3, 24, 20});
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < 24; ++y)
      for (int64_t x = 0; x < 20; ++x) {
        const double xf = static_cast<double>(x), yf = static_cast<double>(y), cf = static_cast<double>(c);
        a.at(c, y, x) = 0.5 + 0.4 * std::sin(0.37 * xf + 0.23 * yf + cf) * std::cos(0.011 * xf * yf + 0.5 * cf);
        b.at(c, y, x) = a.at(c, y, x) + 0.08 * std::sin(1.3 * xf - 0.7 * yf + 2 * cf);
      }
  ssim_err = std::max(ssim_err, std::abs(ssim(a, b) - 0.8188840223066532));
  psnr_err = std::max(psnr_err, std::abs(psnr(a, b) - 24.949510248339372));
  const Tensor x = random_tensor({3, 16, 16}, rng, 0, 1);
  const bool edges = ssim(x, x) == 1.0 && psnr(x, x) == kPsnrInfinity &&
                     std::abs(ssim(Tensor({3, 16, 16}, 0.5), Tensor({3, 16, 16}, 0.5)) - 1.0) < 1e-12;
  return {ssim_err < 1e-6 && psnr_err < 1e-9 && edges,
          fmt("SSIM max error %.3g (< 1e-6), PSNR max error %.3g (< 1e-9), identical inputs -> 1.0 / inf: %s", ssim_err,
              psnr_err, edges ? "yes" : "NO")};
}

// ---------------------------------------------------------------------------
// 11

Outcome determinism(Cache& c) {
  const SyncRun& s1 = c.get_sync();
  const DinetRun& d1 = c.get_dinet();
  const DubRun& u1 = c.get_dub();
  const SyncRun s2 = run_syncnet();
  const DinetRun d2 = run_dinet(*s2.net);
  const DubRun u2 = run_dub(*d2.gen);
  const bool sync_same = s1.log == s2.log && s1.params == s2.params && s1.sep.gap() == s2.sep.gap();
  const bool dinet_same = d1.log == d2.log && d1.generated == d2.generated &&
                          param_values(d1.gen->parameters()) == param_values(d2.gen->parameters());
  const bool dub_same = u1.frames == u2.frames;
  return {sync_same && dinet_same && dub_same,
          fmt("second runs of 6 / 7 / 9: syncnet log+weights %s, DINet log+weights+frames %s, dubbed frames %s",
              sync_same ? "identical" : "DIFFER", dinet_same ? "identical" : "DIFFER", dub_same ? "identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  Cache cache;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"AdaAT identity", adaat_identity},
      {"AdaAT gradients", adaat_gradients},
      {"warp oracles", warp_oracles},
      {"shape contract", shape_contract},
      {"loss arithmetic", loss_arithmetic},
      {"toy syncnet separation", [&] { return syncnet_separation(cache); }},
      {"toy DINet overfit", [&] { return dinet_overfit(cache); }},
      {"frozen parameters", [&] { return frozen_parameters(cache); }},
      {"dubbing locality and duration", [&] { return dub_locality(cache); }},
      {"metric oracles", metric_oracles},
      {"determinism", [&] { return determinism(cache); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
