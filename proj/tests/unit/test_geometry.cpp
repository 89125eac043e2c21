#include <gtest/gtest.h>

#include <random>

#include "vqloc/geometry.hpp"
#include "../support/oracles.hpp"

using namespace vqloc;

namespace {

Corners random_int_box(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> c(0, 63);
  int x1 = c(rng), x2 = c(rng), y1 = c(rng), y2 = c(rng);
  if (x1 > x2) std::swap(x1, x2);
  if (y1 > y2) std::swap(y1, y2);
  return {double(x1), double(y1), double(x2 + 1), double(y2 + 1)};
}

BoundingBox random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> c(-20, 20), s(0.1, 15);
  return {c(rng), c(rng), s(rng), s(rng)};
}

}  // namespace

TEST(Iou, IdentityIsOne) {
  const BoundingBox b{3, 4, 5, 6};
  EXPECT_DOUBLE_EQ(iou(b, b), 1.0);
}

TEST(Iou, PartialOverlapOneSeventh) { EXPECT_NEAR(iou({1, 1, 2, 2}, {2, 2, 2, 2}), 1.0 / 7.0, 1e-12); }

TEST(Iou, DisjointIsZero) { EXPECT_EQ(iou({0.5, 0.5, 1, 1}, {2.5, 2.5, 1, 1}), 0.0); }

TEST(Iou, DegenerateInputThrows) {
  EXPECT_THROW(iou({0, 0, 0, 1}, {0, 0, 1, 1}), DomainError);
  EXPECT_THROW(giou({0, 0, 1, 1}, {0, 0, 1, -2}), DomainError);
}

TEST(Overlap, MatchesRasterizationOracle) {
  std::mt19937_64 rng(11);
  for (int k = 0; k < 2000; ++k) {
    const Corners a = random_int_box(rng), b = random_int_box(rng);
    const auto r = oracle::raster_overlap(a, b);
    EXPECT_NEAR(iou(from_corners(a), from_corners(b)), r.iou, 1e-9);
    EXPECT_NEAR(giou(from_corners(a), from_corners(b)), r.giou, 1e-9);
  }
}

TEST(Giou, IdentityIsOne) {
  const BoundingBox b{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(giou(b, b), 1.0);
}

TEST(Giou, DisjointUnitBoxes) { EXPECT_NEAR(giou({0.5, 0.5, 1, 1}, {2.5, 2.5, 1, 1}), -7.0 / 9.0, 1e-12); }

TEST(Giou, EqualsIouUnderContainment) {
  const BoundingBox outer{5, 5, 8, 8}, inner{5.5, 4.5, 2, 3};
  EXPECT_NEAR(giou(outer, inner), iou(outer, inner), 1e-15);
}

TEST(Giou, PropertiesOverRandomPairs) {
  std::mt19937_64 rng(7);
  for (int k = 0; k < 10000; ++k) {
    const BoundingBox a = random_box(rng), b = random_box(rng);
    const double i = iou(a, b), g = giou(a, b);
    ASSERT_GE(i, 0.0);
    ASSERT_LE(i, 1.0);
    ASSERT_NEAR(i, iou(b, a), 1e-15);
    ASSERT_NEAR(g, giou(b, a), 1e-15);
    ASSERT_LE(g, i + 1e-15);
    ASSERT_GE(g, i - 1.0 - 1e-15);
    ASSERT_GE(g, -1.0);
  }
}

TEST(Giou, AnalyticGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> c(0, 10), s(2, 8);
  int checked = 0;
  for (int k = 0; k < 500; ++k) {
    const BoundingBox p{c(rng), c(rng), s(rng), s(rng)}, g{c(rng), c(rng), s(rng), s(rng)};
    const auto res = giou_with_grad(p, g);
    EXPECT_NEAR(res.value, giou(p, g), 1e-14);
    double num[4];
    bool smooth = true;
    for (int i = 0; i < 4; ++i) {
      const double h = 1e-6;
      BoundingBox hi = p, lo = p;
      (&hi.cx)[i] += h;
      (&lo.cx)[i] -= h;
      num[i] = (giou(hi, g) - giou(lo, g)) / (2 * h);
      // Skip samples sitting on a kink (an edge coinciding within h).
      const Corners a = to_corners(p), b = to_corners(g);
      for (double d : {a.x1 - b.x1, a.x2 - b.x2, a.y1 - b.y1, a.y2 - b.y2, a.x2 - b.x1, a.x1 - b.x2, a.y2 - b.y1,
                       a.y1 - b.y2})
        smooth = smooth && std::abs(d) > 1e-4;
    }
    if (!smooth) continue;
    ++checked;
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(res.d_pred[i], num[i], 1e-6) << "component " << i;
  }
  EXPECT_GT(checked, 400);
}

TEST(Corners, Conversions) {
  EXPECT_EQ(to_corners({2, 2, 2, 2}), (Corners{1, 1, 3, 3}));
  EXPECT_EQ(from_corners({0, 0, 4, 2}), (BoundingBox{2, 1, 4, 2}));
  const BoundingBox b{3.25, 7.5, 2.5, 4.0};
  EXPECT_EQ(from_corners(to_corners(b)), b);
}

TEST(Clamp, DegenerateSidesBecomeOnePixel) {
  const BoundingBox c = clamp_degenerate({4, 5, -3, 0.25});
  EXPECT_EQ(c, (BoundingBox{4, 5, 1, 1}));
  const Corners k = to_corners(c);
  EXPECT_LT(k.x1, k.x2);
  EXPECT_LT(k.y1, k.y2);
}
