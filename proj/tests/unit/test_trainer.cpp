#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "vqloc/augment.hpp"
#include "vqloc/checkpoint.hpp"
#include "vqloc/config.hpp"
#include "vqloc/optim.hpp"
#include "vqloc/trainer.hpp"

using namespace vqloc;
namespace fs = std::filesystem;

namespace {

ResponseTrack track(int s, int e) {
  return {s, e, std::vector<BoundingBox>(static_cast<std::size_t>(e - s + 1), BoundingBox{20, 20, 8, 8}), 1.0};
}

}  // namespace

TEST(ClipSampling, EveryClipIntersectsTheTrack) {
  std::mt19937_64 rng(1);
  const ResponseTrack tr = track(10, 12);
  std::set<int> starts;
  for (int k = 0; k < 1000; ++k) {
    const auto c = sample_training_clip(100, tr, 30, rng);
    ASSERT_EQ(c.frames.size(), 30u);
    const int s = c.frames.front();
    starts.insert(s);
    ASSERT_GE(s, 0);
    ASSERT_LE(s, 12);
    int with_gt = 0;
    for (std::size_t k2 = 0; k2 < 30; ++k2) {
      ASSERT_EQ(c.frames[k2], s + static_cast<int>(k2));
      with_gt += c.gt[k2].has_value();
    }
    ASSERT_GT(with_gt, 0);
  }
  EXPECT_EQ(starts.size(), 13u);  // every start in {0..12} is reachable
}

TEST(ClipSampling, FullTrackAllowsAnyStart) {
  std::mt19937_64 rng(2);
  std::set<int> starts;
  for (int k = 0; k < 2000; ++k) starts.insert(sample_training_clip(40, track(0, 39), 8, rng).frames.front());
  EXPECT_EQ(starts.size(), 33u);
}

TEST(ClipSampling, ShortVideoIsLeftPadded) {
  std::mt19937_64 rng(3);
  const auto c = sample_training_clip(5, track(1, 3), 8, rng);
  EXPECT_EQ(c.frames, (std::vector<int>{0, 0, 0, 0, 1, 2, 3, 4}));
  EXPECT_EQ(c.valid, (std::vector<bool>{false, false, false, true, true, true, true, true}));
  EXPECT_FALSE(c.gt[0]);
  EXPECT_TRUE(c.gt[4]);
}

TEST(ClipSampling, DeterministicGivenSeed) {
  std::mt19937_64 a(9), b(9);
  for (int k = 0; k < 50; ++k)
    ASSERT_EQ(sample_training_clip(100, track(40, 60), 8, a, 2).frames,
              sample_training_clip(100, track(40, 60), 8, b, 2).frames);
}

TEST(Augment, FlipTwiceIsIdentityOnBoxes) {
  AugmentParams p;
  p.flip = true;
  const BoundingBox b{12.5, 30, 7, 9};
  EXPECT_EQ(*transform_box(*transform_box(b, p, 64), p, 64), b);
  EXPECT_EQ(transform_box(b, p, 64)->cx, 64 - 12.5);
}

TEST(Augment, IdentityPassesThrough) {
  const auto s = generate_dataset(1, 1, SyntheticConfig{})[0];
  const auto out = apply_augment(s.query, AugmentParams::identity());
  EXPECT_EQ(out, s.query);
  AugmentConfig off;
  off.enabled = false;
  std::mt19937_64 rng(0);
  const auto p = draw_augment(off, 64, rng);
  EXPECT_FALSE(p.flip);
  EXPECT_FALSE(p.crop);
  EXPECT_EQ(p.contrast, 1.0);
}

TEST(Augment, CropThatMissesTheBoxDropsTheLabel) {
  AugmentParams p;
  p.crop = CropWindow{32, 32, 32};
  const std::vector<std::optional<BoundingBox>> gt{BoundingBox{8, 8, 8, 8}, BoundingBox{48, 48, 8, 8}};
  const auto out = augment({Image(64), Image(64)}, gt, p);
  EXPECT_FALSE(out.gt[0]);
  ASSERT_TRUE(out.gt[1]);
  EXPECT_EQ(*out.gt[1], (BoundingBox{32, 32, 16, 16}));
}

TEST(Augment, QueryCropKeepsTheQueryBox) {
  AugmentConfig cfg;
  cfg.crop_prob = 1.0;
  std::mt19937_64 rng(4);
  const Corners box{20, 30, 44, 50};
  for (int k = 0; k < 500; ++k) {
    const auto p = draw_augment(cfg, 64, rng, box);
    if (!p.crop) continue;
    ASSERT_LE(p.crop->x0, box.x1);
    ASSERT_LE(p.crop->y0, box.y1);
    ASSERT_GE(p.crop->x0 + p.crop->size, box.x2);
    ASSERT_GE(p.crop->y0 + p.crop->size, box.y2);
  }
}

TEST(Augment, EmptyCropConfigRejected) {
  AugmentConfig cfg;
  cfg.crop_min_scale = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Schedule, Examples) {
  const ScheduleConfig published{60000, 1000, 1e-4};
  EXPECT_DOUBLE_EQ(lr_at(500, published), 5e-5);
  EXPECT_DOUBLE_EQ(lr_at(1000, published), 1e-4);
  EXPECT_EQ(lr_at(60000, published), 0.0);
  EXPECT_EQ(lr_at(0, published), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(30500, published), 5e-5);
  EXPECT_THROW(lr_at(-1, published), ConfigError);
}

TEST(Adam, ZeroGradientOnlyDecays) {
  ParameterSet<double> p;
  const int id = p.add("w", 3, 2);
  p[id].setConstant(2.0);
  auto st = AdamState<double>::init(p);
  optimizer_step(p, p.zeros_like(), st, AdamConfig{}, 1e-4);
  EXPECT_TRUE((p[id].array() == 2.0 * (1 - 1e-4 * 0.05)).all());
}

TEST(Adam, MatchesHandTrace) {
  // Scalar Adam without decay, constant gradient g = 0.3.
  ParameterSet<double> p;
  const int id = p.add("w", 1, 1);
  p[id](0, 0) = 1.0;
  ParameterSet<double> g = p.zeros_like();
  g[id](0, 0) = 0.3;
  AdamConfig cfg;
  cfg.weight_decay = 0.0;
  auto st = AdamState<double>::init(p);
  double w = 1.0, m = 0, v = 0;
  for (int t = 1; t <= 10; ++t) {
    const double lr = 1e-2 * t;
    m = 0.9 * m + 0.1 * 0.3;
    v = 0.999 * v + 0.001 * 0.09;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    w -= lr * mh / (std::sqrt(vh) + 1e-8);
    optimizer_step(p, g, st, cfg, lr);
    ASSERT_NEAR(p[id](0, 0), w, 1e-10) << "step " << t;
  }
}

TEST(Adam, ZeroRateLeavesParameters) {
  ParameterSet<double> p;
  const int id = p.add("w", 2, 2);
  p[id].setConstant(1.5);
  ParameterSet<double> g = p.zeros_like();
  g[id].setConstant(0.7);
  auto st = AdamState<double>::init(p);
  optimizer_step(p, g, st, AdamConfig{}, 0.0);
  EXPECT_TRUE((p[id].array() == 1.5).all());
}

TEST(Adam, NonFiniteGradientSkipsStep) {
  ParameterSet<double> p;
  const int id = p.add("w", 2, 2);
  p[id].setConstant(1.0);
  ParameterSet<double> g = p.zeros_like();
  g[id](1, 1) = std::nan("");
  auto st = AdamState<double>::init(p);
  EXPECT_FALSE(optimizer_step(p, g, st, AdamConfig{}, 1e-3));
  EXPECT_EQ(st.skipped, 1);
  EXPECT_EQ(st.step, 0);
  EXPECT_TRUE((p[id].array() == 1.0).all());
}

TEST(Config, RoundTripAndUnknownKeys) {
  const ExperimentConfig e = toy_experiment();
  const auto j = to_json(e);
  const ExperimentConfig back = experiment_from_json(j);
  EXPECT_EQ(to_json(back), j);
  auto bad = j;
  bad["loss"]["lamda_p"] = 2.0;
  try {
    experiment_from_json(bad);
    FAIL() << "expected unknown key error";
  } catch (const ConfigError& err) {
    EXPECT_NE(std::string(err.what()).find("loss.lamda_p"), std::string::npos) << err.what();
  }
  auto mismatch = j;
  mismatch["data"]["canvas_side"] = 96;
  EXPECT_THROW(experiment_from_json(mismatch).validate(), ConfigError);
}

TEST(Checkpoint, RoundTripIsExact) {
  const fs::path dir = fs::temp_directory_path() / "vqloc_test_ckpt";
  fs::remove_all(dir);
  ModelConfig c = toy_model_config();
  c.zero_init_head_outputs = false;
  const auto m = Model<float>::create(c, 17);
  save_checkpoint(dir, m);
  const auto back = load_checkpoint(dir);
  ASSERT_EQ(back.params.size(), m.params.size());
  for (int i = 0; i < static_cast<int>(m.params.size()); ++i) {
    EXPECT_EQ(back.params.name(i), m.params.name(i));
    EXPECT_TRUE((back.params[i].array() == m.params[i].array()).all()) << m.params.name(i);
  }
  EXPECT_EQ(to_json(back.config()), to_json(m.config()));
}

TEST(Training, LossDecreasesAndRunsAreReproducible) {
  const auto data = to_items(generate_dataset(1, 2, SyntheticConfig{}));
  TrainConfig tc;
  tc.iterations = 12;
  tc.batch_size = 2;
  tc.warmup_iters = 2;
  auto run = [&] {
    auto m = Model<float>::create(toy_model_config(), 3);
    return train(m, data, tc, LossConfig{}, {});
  };
  const auto a = run();
  const auto b = run();
  ASSERT_EQ(a.size(), 12u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].to_json().dump(), b[i].to_json().dump());
  EXPECT_EQ(a[0].lr, 0.0);
  EXPECT_LT(a.back().loss.total, a[1].loss.total);
}
