#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "lodseg/losses/dice.hpp"
#include "lodseg/nn/layers.hpp"
#include "lodseg/volume/conform.hpp"
#include "test_support.hpp"

using namespace lodseg;

namespace {

// Independent triple-loop counter over grid coordinates.
double brute_force_dice(const LabelMap& p, const LabelMap& g, int cls) {
  long inter = 0, np = 0, ng = 0;
  for (int z = 0; z < p.shape.z; ++z)
    for (int y = 0; y < p.shape.y; ++y)
      for (int x = 0; x < p.shape.x; ++x) {
        const bool a = p.at(x, y, z) == cls;
        const bool b = g.at(x, y, z) == cls;
        np += a;
        ng += b;
        inter += a && b;
      }
  if (np + ng == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

Tensor<double> random_probs(int c, Shape3 s, std::uint64_t seed) {
  Tensor<double> logits(c, s);
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 1.5);
  for (auto& v : logits.values()) v = n(rng);
  return nn::softmax_forward(logits);
}

}  // namespace

TEST(DiceCoefficient, IdentityGivesOne) {
  auto scheme = ClassScheme::raw7();
  LabelMap l = lodseg::testing::random_labels(Shape3::cube(6), scheme, 1);
  auto r = dice_coefficient(l, l, scheme, true);
  for (const auto& [name, d] : r.per_class) EXPECT_EQ(d, 1.0) << name;
  EXPECT_EQ(r.mean, 1.0);
}

TEST(DiceCoefficient, AnalyticHalfOverlap) {
  ClassScheme scheme;
  LabelMap p(Shape3::cube(4), Affine::Identity(), scheme), g(Shape3::cube(4), Affine::Identity(), scheme);
  for (int i = 0; i < 4; ++i) p.data[static_cast<std::size_t>(i)] = 1;      // voxels 0..3
  for (int i = 2; i < 6; ++i) g.data[static_cast<std::size_t>(i)] = 1;      // voxels 2..5
  auto r = dice_coefficient(p, g, scheme);
  EXPECT_DOUBLE_EQ(r.per_class.at("foreground"), 0.5);
  EXPECT_DOUBLE_EQ(r.mean, 0.5);
}

TEST(DiceCoefficient, EmptyClassConventions) {
  auto scheme = ClassScheme::skullstripped4();
  LabelMap p(Shape3::cube(3), Affine::Identity(), scheme), g(Shape3::cube(3), Affine::Identity(), scheme);
  p.data[0] = 1;  // csf only in prediction
  auto r = dice_coefficient(p, g, scheme);
  EXPECT_EQ(r.per_class.at("csf"), 0.0);
  EXPECT_EQ(r.per_class.at("gray_matter"), 1.0);
  EXPECT_EQ(r.per_class.at("white_matter"), 1.0);
  EXPECT_EQ(r.per_class.count("background"), 0u);
  EXPECT_NEAR(r.mean, 2.0 / 3.0, 1e-15);
}

TEST(DiceCoefficient, MatchesBruteForceAndIsSymmetric) {
  for (int c : {4, 7}) {
    const auto scheme = ClassScheme::for_count(c);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      LabelMap p = lodseg::testing::random_labels(Shape3::cube(4), scheme, seed * 2 + 1);
      LabelMap g = lodseg::testing::random_labels(Shape3::cube(4), scheme, seed * 2 + 2);
      auto r = dice_coefficient(p, g, scheme, true);
      auto rs = dice_coefficient(g, p, scheme, true);
      for (int k = 0; k < c; ++k) {
        ASSERT_EQ(r.per_class.at(scheme.name(k)), brute_force_dice(p, g, k));
        ASSERT_EQ(r.per_class.at(scheme.name(k)), rs.per_class.at(scheme.name(k)));
      }
    }
  }
}

TEST(DiceCoefficient, ShapeOrSchemeMismatchIsContractError) {
  auto scheme = ClassScheme::skullstripped4();
  LabelMap a(Shape3::cube(3), Affine::Identity(), scheme), b(Shape3::cube(4), Affine::Identity(), scheme);
  EXPECT_THROW(dice_coefficient(a, b, scheme), ContractError);
  LabelMap c(Shape3::cube(3), Affine::Identity(), ClassScheme::raw7());
  EXPECT_THROW(dice_coefficient(a, c, scheme), ContractError);
}

TEST(DiceLoss, PerfectPredictionIsNearZero) {
  auto scheme = ClassScheme::skullstripped4();
  LabelMap l = lodseg::testing::random_labels(Shape3::cube(4), scheme, 5);
  auto t = one_hot<double>(l);
  EXPECT_NEAR(dice_loss(t, t), 0.0, 1e-12);
}

TEST(DiceLoss, UniformProbabilitiesClosedForm) {
  // C = 3, N = 64, gt all class 0, p = 1/3 everywhere:
  //   channel 0: 2I/(P+G) = (128/3)/(64/3 + 64) = 0.5
  //   channels 1,2: I = G = 0 -> eps / (64/3 + eps) ~ 4.7e-8
  //   loss ~ 1 - 0.5/3 = 0.833333...
  Tensor<double> p(3, Shape3::cube(4), 1.0 / 3.0);
  Tensor<double> g(3, Shape3::cube(4), 0.0);
  for (auto& v : g.channel(0)) v = 1.0;
  EXPECT_NEAR(dice_loss(p, g), 0.8333333, 1e-6);
}

TEST(DiceLoss, NonFiniteInputIsNumericError) {
  Tensor<double> p(2, Shape3::cube(2), 0.5), g(2, Shape3::cube(2), 0.5);
  p.values()[3] = std::nan("");
  EXPECT_THROW(dice_loss(p, g), NumericError);
}

TEST(DiceLoss, GradientMatchesCentralDifferences) {
  const double h = 1e-4;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto p = random_probs(3, Shape3::cube(4), 100 + seed);
    auto labels = lodseg::testing::random_labels(Shape3::cube(4), ClassScheme::for_count(3), 200 + seed);
    auto g = one_hot<double>(labels);
    Tensor<double> grad;
    dice_loss(p, g, true, &grad);
    for (std::size_t i = 0; i < p.size(); ++i) {
      auto plus = p, minus = p;
      plus.values()[i] += h;
      minus.values()[i] -= h;
      const double numeric = (dice_loss(plus, g) - dice_loss(minus, g)) / (2 * h);
      const double analytic = grad.values()[i];
      const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-12});
      worst = std::max(worst, rel);
    }
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(DiceLoss, BoundedAndPermutationInvariant) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto p = random_probs(4, Shape3::cube(4), seed);
    auto g = one_hot<double>(lodseg::testing::random_labels(Shape3::cube(4), ClassScheme::for_count(4), seed + 50));
    const double l = dice_loss(p, g);
    EXPECT_GE(l, 0.0);
    EXPECT_LE(l, 1.0);
    // reverse channel order in both
    Tensor<double> pr(4, p.shape()), gr(4, g.shape());
    for (int c = 0; c < 4; ++c) {
      std::copy(p.channel(c).begin(), p.channel(c).end(), pr.channel(3 - c).begin());
      std::copy(g.channel(c).begin(), g.channel(c).end(), gr.channel(3 - c).begin());
    }
    EXPECT_NEAR(dice_loss(pr, gr), l, 1e-14);
  }
}

TEST(DiceLoss, HardLimitEqualsOneMinusMetric) {
  const auto scheme = ClassScheme::for_count(4);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto a = lodseg::testing::random_labels(Shape3::cube(4), scheme, seed);
    auto b = lodseg::testing::random_labels(Shape3::cube(4), scheme, seed + 99);
    const double metric = dice_coefficient(a, b, scheme, true).mean;
    const double loss = dice_loss(one_hot<double>(a), one_hot<double>(b), true, static_cast<Tensor<double>*>(nullptr), 1e-12);
    EXPECT_NEAR(1.0 - loss, metric, 1e-9);
  }
}
