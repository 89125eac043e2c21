#include <gtest/gtest.h>

#include <random>

#include "vqloc/config.hpp"
#include "vqloc/model.hpp"

using namespace vqloc;

namespace {

std::vector<FeatureMap<float>> random_clip(const ModelConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0, 1);
  std::vector<FeatureMap<float>> clip;
  for (int t = 0; t < c.clip_len; ++t) {
    FeatureMap<float> f{c.input_side, c.input_side, Mat<float>(c.input_side * c.input_side, 3)};
    for (Eigen::Index i = 0; i < f.data.size(); ++i) f.data.data()[i] = u(rng);
    clip.push_back(std::move(f));
  }
  return clip;
}

FeatureMap<float> random_query(const ModelConfig& c, std::uint64_t seed) { return random_clip(c, seed).front(); }

}  // namespace

TEST(Model, ToyOutputShapes) {
  const ModelConfig c = toy_model_config();
  const auto m = Model<float>::create(c, 1);
  const auto out = forward(m, random_clip(c, 2), random_query(c, 3));
  ASSERT_EQ(out.size(), 8u);
  for (const auto& f : out) {
    EXPECT_EQ(f.probs.size(), 768);
    EXPECT_EQ(f.deltas.rows(), 768);
    EXPECT_EQ(f.deltas.cols(), 4);
  }
}

TEST(Model, ZeroInitializedHeadsGiveHalfAndNoRefinement) {
  const ModelConfig c = toy_model_config();
  const auto m = Model<float>::create(c, 1);
  for (const auto& f : forward(m, random_clip(c, 4), random_query(c, 5))) {
    EXPECT_EQ(f.probs.minCoeff(), 0.5f);
    EXPECT_EQ(f.probs.maxCoeff(), 0.5f);
    EXPECT_EQ(f.deltas.cwiseAbs().maxCoeff(), 0.0f);
  }
}

TEST(Model, ClipLengthMismatchRejected) {
  const ModelConfig c = toy_model_config();
  const auto m = Model<float>::create(c, 1);
  auto clip = random_clip(c, 2);
  clip.pop_back();
  EXPECT_THROW(forward(m, clip, random_query(c, 3)), ConfigError);
}

TEST(Model, DeterministicGivenSeed) {
  ModelConfig c = toy_model_config();
  c.zero_init_head_outputs = false;
  const auto a = forward(Model<float>::create(c, 7), random_clip(c, 2), random_query(c, 3));
  const auto b = forward(Model<float>::create(c, 7), random_clip(c, 2), random_query(c, 3));
  for (std::size_t t = 0; t < a.size(); ++t) {
    EXPECT_TRUE((a[t].probs.array() == b[t].probs.array()).all());
    EXPECT_TRUE((a[t].deltas.array() == b[t].deltas.array()).all());
  }
}

TEST(Model, TemporalReceptiveFieldIsLayersTimesHalfWidth) {
  ModelConfig c = toy_model_config();
  c.zero_init_head_outputs = false;
  c.temporal_layers = 1;
  c.window_half_width = 1;
  const auto m = Model<float>::create(c, 3);
  const auto clip = random_clip(c, 10);
  const auto q = random_query(c, 11);
  const auto base = forward(m, clip, q);
  const int reach = c.temporal_layers * c.window_half_width;
  for (int t : {0, 4, 7}) {
    auto moved = clip;
    moved[t].data = Mat<float>::Constant(moved[t].data.rows(), 3, 0.25f);
    const auto out = forward(m, moved, q);
    for (int s = 0; s < c.clip_len; ++s) {
      const float diff = (out[s].probs - base[s].probs).cwiseAbs().maxCoeff() +
                         (out[s].deltas - base[s].deltas).cwiseAbs().maxCoeff();
      if (std::abs(s - t) > reach) {
        EXPECT_EQ(diff, 0.0f) << "t=" << t << " s=" << s;
      } else {
        EXPECT_GT(diff, 0.0f) << "t=" << t << " s=" << s;
      }
    }
  }
}

TEST(Model, SpatialStageIsFrameOrderEquivariant) {
  // Without temporal layers every frame is processed independently.
  ModelConfig c = toy_model_config();
  c.zero_init_head_outputs = false;
  c.temporal_layers = 0;
  const auto m = Model<float>::create(c, 5);
  const auto clip = random_clip(c, 20);
  const auto q = random_query(c, 21);
  const auto base = forward(m, clip, q);
  std::vector<FeatureMap<float>> reversed(clip.rbegin(), clip.rend());
  const auto out = forward(m, reversed, q);
  for (int t = 0; t < c.clip_len; ++t)
    EXPECT_TRUE((out[t].probs.array() == base[c.clip_len - 1 - t].probs.array()).all()) << t;
}

TEST(Model, ConvolutionFusionRuns) {
  ModelConfig c = toy_model_config();
  c.fusion = QueryFusion::kConvolution;
  const auto m = Model<float>::create(c, 1);
  EXPECT_EQ(forward(m, random_clip(c, 2), random_query(c, 3)).size(), 8u);
}

TEST(ModelConfig, InvalidConfigsRejected) {
  ModelConfig c = toy_model_config();
  c.input_side = 60;
  EXPECT_THROW(c.validate(), ConfigError);
  c = toy_model_config();
  c.temporal_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = toy_model_config();
  c.spatial_heads = 5;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ModelConfig, FullScaleGeometry) {
  const ModelConfig c;
  EXPECT_EQ(c.feature_side(), 32);
  EXPECT_EQ(c.reduced_side(), 8);
  EXPECT_EQ(c.anchors_per_cell(), 12);
  EXPECT_EQ(c.window_length(), 5);
  EXPECT_EQ(build_grid(c.anchor_config()).size(), 768);
}
