#include <gtest/gtest.h>

#include <random>

#include "vqloc/config.hpp"
#include "vqloc/gradcheck.hpp"
#include "vqloc/model.hpp"
#include "vqloc/nn/attention.hpp"
#include "vqloc/nn/layers.hpp"

using namespace vqloc;

namespace {

Mat<double> randn(int r, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Mat<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
  return m;
}

}  // namespace

TEST(Tensor, ShapeProductMustMatchBuffer) {
  EXPECT_EQ(Tensor<float>({2, 3, 4}).numel(), 24u);
  EXPECT_THROW(Tensor<float>({2, 3}, std::vector<float>(5)), ConfigError);
  EXPECT_THROW(Tensor<float>({2, 0}), ConfigError);
}

TEST(Softmax, RowsSumToOne) {
  Mat<double> m = randn(7, 9, 1) * 10.0;
  nn::softmax_rows_inplace(m);
  for (int r = 0; r < 7; ++r) EXPECT_NEAR(m.row(r).sum(), 1.0, 1e-12);
}

TEST(AttentionMask, AllMaskedRowRejected) {
  std::vector<unsigned char> allowed{1, 0, 0, 0};
  EXPECT_THROW(nn::AttentionMask(2, 2, allowed), ConfigError);
}

TEST(AttentionMask, TemporalWindowMembership) {
  // T = 5, one token per frame, w = 2.
  const auto m = nn::AttentionMask::temporal_window(5, 1, 2);
  for (int s = 0; s < 5; ++s) EXPECT_EQ(m.allowed(0, s), s <= 2) << s;
  for (int s = 0; s < 5; ++s) EXPECT_TRUE(m.allowed(2, s));
  const auto global = nn::AttentionMask::temporal_window(5, 3, -1);
  for (int r = 0; r < 15; ++r)
    for (int c = 0; c < 15; ++c) EXPECT_TRUE(global.allowed(r, c));
}

TEST(Attention, HeadCountMustDivideWidth) {
  ParameterSet<double> p;
  nn::Rng rng(0);
  EXPECT_THROW(nn::MultiHeadAttention::create(p, "a", 10, 3, rng), ConfigError);
}

TEST(Attention, MaskedWeightsAreZeroAndRowsNormalize) {
  ParameterSet<double> p;
  nn::Rng rng(1);
  const auto attn = nn::MultiHeadAttention::create(p, "a", 8, 2, rng);
  const int T = 5, per = 3;
  const auto mask = nn::AttentionMask::temporal_window(T, per, 1);
  const Mat<double> x = randn(T * per, 8, 2);
  nn::MultiHeadAttention::Cache<double> c;
  attn.forward(p, x, x, &mask, c);
  for (int h = 0; h < 2; ++h) {
    // Reassemble the dense attention matrix of head h from its blocks.
    Mat<double> dense = Mat<double>::Zero(T * per, T * per);
    for (std::size_t bi = 0; bi < mask.blocks().size(); ++bi) {
      const auto& b = mask.blocks()[bi];
      dense.block(b.row_begin, b.col_begin, b.row_end - b.row_begin, b.col_end - b.col_begin) = c.probs[bi * 2 + h];
    }
    for (int r = 0; r < T * per; ++r) {
      EXPECT_NEAR(dense.row(r).sum(), 1.0, 1e-6);
      for (int s = 0; s < T * per; ++s)
        if (!mask.allowed(r, s)) {
          EXPECT_EQ(dense(r, s), 0.0);
        }
    }
  }
}

TEST(Attention, NonContiguousMaskUsesBias) {
  ParameterSet<double> p;
  nn::Rng rng(4);
  const auto attn = nn::MultiHeadAttention::create(p, "a", 4, 1, rng);
  std::vector<unsigned char> allowed{1, 0, 1, 0, 1, 0, 1, 1, 1};
  const nn::AttentionMask mask(3, 3, allowed);
  ASSERT_TRUE(mask.needs_bias());
  nn::MultiHeadAttention::Cache<double> c;
  attn.forward(p, randn(3, 4, 5), randn(3, 4, 6), &mask, c);
  EXPECT_EQ(c.probs[0](0, 1), 0.0);
  EXPECT_EQ(c.probs[0](1, 0), 0.0);
  EXPECT_EQ(c.probs[0](1, 2), 0.0);
  EXPECT_NEAR(c.probs[0].row(0).sum(), 1.0, 1e-12);
}

TEST(Attention, GlobalMaskIsBitIdenticalToUnmasked) {
  ParameterSet<double> p;
  nn::Rng rng(3);
  const auto block = nn::SelfAttentionBlock::create(p, "s", {8, 2, 4}, rng);
  const Mat<double> x = randn(12, 8, 9);
  const auto global = nn::AttentionMask::temporal_window(4, 3, -1);
  nn::SelfAttentionBlock::Cache<double> c1, c2;
  const Mat<double> a = block.forward(p, x, &global, c1);
  const Mat<double> b = block.forward(p, x, nullptr, c2);
  EXPECT_TRUE((a.array() == b.array()).all());
}

TEST(CrossAttention, IdenticalQueryTokensGiveUniformRows) {
  ParameterSet<double> p;
  nn::Rng rng(2);
  const auto block = nn::CrossAttentionBlock::create(p, "x", {32, 2, 4}, rng);
  const Mat<double> frame = randn(16, 32, 3);
  const Mat<double> query = randn(1, 32, 4).replicate(16, 1);
  nn::CrossAttentionBlock::Cache<double> c;
  const Mat<double> out = block.forward(p, frame, query, c);
  EXPECT_EQ(out.rows(), 16);
  EXPECT_EQ(out.cols(), 32);
  for (const auto& probs : c.attn.probs)
    for (Eigen::Index i = 0; i < probs.size(); ++i) EXPECT_NEAR(probs.data()[i], 1.0 / 16.0, 1e-12);
  for (int r = 1; r < 16; ++r) EXPECT_NEAR((c.attn.context.row(r) - c.attn.context.row(0)).norm(), 0.0, 1e-12);
}

TEST(CrossAttention, ChannelMismatchRejected) {
  ParameterSet<double> p;
  nn::Rng rng(2);
  const auto block = nn::CrossAttentionBlock::create(p, "x", {8, 2, 4}, rng);
  nn::CrossAttentionBlock::Cache<double> c;
  EXPECT_THROW(block.forward(p, randn(4, 8, 1), randn(4, 6, 2), c), ConfigError);
}

TEST(WindowedAttention, SingleLayerLocality) {
  ParameterSet<double> p;
  nn::Rng rng(5);
  const auto block = nn::SelfAttentionBlock::create(p, "s", {8, 2, 4}, rng);
  const int T = 7, per = 4, w = 1;
  const auto mask = nn::AttentionMask::temporal_window(T, per, w);
  const Mat<double> x = randn(T * per, 8, 6);
  for (int t = 0; t < T; ++t) {
    Mat<double> y = x;
    y.middleRows(t * per, per) += randn(per, 8, 100 + t);
    nn::SelfAttentionBlock::Cache<double> c1, c2;
    const Mat<double> a = block.forward(p, x, &mask, c1);
    const Mat<double> b = block.forward(p, y, &mask, c2);
    for (int s = 0; s < T; ++s) {
      const double diff = (a.middleRows(s * per, per) - b.middleRows(s * per, per)).cwiseAbs().maxCoeff();
      if (std::abs(s - t) > w) {
        EXPECT_EQ(diff, 0.0) << "t=" << t << " s=" << s;
      } else {
        EXPECT_GT(diff, 0.0) << "t=" << t << " s=" << s;
      }
    }
  }
}

TEST(Conv, IdentityKernelStrideOne) {
  ParameterSet<double> p;
  nn::Rng rng(0);
  const auto conv = nn::Conv2d::create(p, "c", 3, 3, 3, 1, 1, rng);
  p[conv.weight].setZero();
  for (int ch = 0; ch < 3; ++ch) p[conv.weight]((1 * 3 + 1) * 3 + ch, ch) = 1.0;  // center tap
  const FeatureMap<double> x{5, 5, randn(25, 3, 1)};
  const auto y = conv.forward(p, x);
  EXPECT_TRUE((y.data.array() == x.data.array()).all());
}

TEST(Conv, IndivisibleExtentRejected) {
  ParameterSet<double> p;
  nn::Rng rng(0);
  const auto conv = nn::Conv2d::create(p, "c", 3, 4, 3, 2, 1, rng);
  EXPECT_THROW(conv.forward(p, FeatureMap<double>{5, 5, randn(25, 3, 1)}), ConfigError);
}

TEST(Conv, FullScaleShapes) {
  ModelConfig c;  // full-scale defaults
  ParameterSet<float> p;
  const Network net = build_network(c, p, 0);
  const FeatureMap<float> img{448, 448, Mat<float>::Random(448 * 448, 3)};
  const auto v = encode(net, p, img, static_cast<ConvStackCache<float>*>(nullptr));
  EXPECT_EQ(v.height, 32);
  EXPECT_EQ(v.width, 32);
  EXPECT_EQ(v.channels(), 256);
  const auto d = conv_stack_forward(net.downsample, p, v, static_cast<ConvStackCache<float>*>(nullptr));
  EXPECT_EQ(d.height, 8);
  EXPECT_EQ(d.width, 8);
  EXPECT_EQ(d.channels(), 256);
}

TEST(Encoder, ToyShapesAndDeterminism) {
  const ModelConfig c = toy_model_config();
  ParameterSet<float> p1, p2;
  const Network n1 = build_network(c, p1, 42);
  const Network n2 = build_network(c, p2, 42);
  const FeatureMap<float> img{64, 64, Mat<float>::Random(64 * 64, 3)};
  const auto a = encode(n1, p1, img, static_cast<ConvStackCache<float>*>(nullptr));
  const auto b = encode(n2, p2, img, static_cast<ConvStackCache<float>*>(nullptr));
  EXPECT_EQ(a.height, 8);
  EXPECT_EQ(a.channels(), 64);
  EXPECT_TRUE((a.data.array() == b.data.array()).all());
  EXPECT_THROW(encode(n1, p1, FeatureMap<float>{60, 60, Mat<float>::Zero(3600, 3)},
                      static_cast<ConvStackCache<float>*>(nullptr)),
               ConfigError);
}

TEST(Flatten, ZeroEmbeddingIsPureReshape) {
  std::vector<FeatureMap<double>> f{{2, 2, randn(4, 3, 1)}, {2, 2, randn(4, 3, 2)}};
  const Mat<double> tok = nn::add_positional_and_flatten(f, Mat<double>(Mat<double>::Zero(8, 3)));
  EXPECT_TRUE((tok.topRows(4).array() == f[0].data.array()).all());
  EXPECT_TRUE((tok.bottomRows(4).array() == f[1].data.array()).all());
  const auto back = nn::unflatten(tok, 2, 2, 2);
  EXPECT_TRUE((back[1].data.array() == f[1].data.array()).all());
}

TEST(Flatten, FrameOrder) {
  std::vector<FeatureMap<double>> f{{1, 1, Mat<double>::Constant(1, 2, 1.0)}, {1, 1, Mat<double>::Constant(1, 2, 2.0)}};
  const Mat<double> tok = nn::add_positional_and_flatten(f, Mat<double>(Mat<double>::Zero(2, 2)));
  EXPECT_EQ(tok(0, 0), 1.0);
  EXPECT_EQ(tok(1, 0), 2.0);
  EXPECT_THROW(nn::add_positional_and_flatten(f, Mat<double>(Mat<double>::Zero(3, 2))), ConfigError);
}

TEST(PositionalEmbedding, InitializedToZero) {
  ParameterSet<float> p;
  const Network net = build_network(toy_model_config(), p, 0);
  EXPECT_EQ(p[net.positional.values].rows(), 8 * 8 * 8);
  EXPECT_EQ(p[net.positional.values].cols(), 32);
  EXPECT_EQ(p[net.positional.values].cwiseAbs().maxCoeff(), 0.0f);
}

TEST(GradientCheck, EveryBlockOneSeed) {
  for (const auto& e : run_gradcheck({123})) EXPECT_TRUE(e.pass) << e.suite << " " << e.tensor << " " << e.rel_error;
}
