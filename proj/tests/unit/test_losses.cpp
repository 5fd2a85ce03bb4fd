#include <gtest/gtest.h>

#include <cmath>

#include "adlj/errors.hpp"
#include "adlj/losses.hpp"
#include "adlj/rng.hpp"
#include "oracles.hpp"

using namespace adlj;

namespace {

Tensor unit_rows(Tensor t) {
  const std::size_t e = t.shape.back();
  for (std::size_t r = 0; r < t.numel() / e; ++r) {
    double n = 0;
    for (std::size_t k = 0; k < e; ++k) n += t.data[r * e + k] * t.data[r * e + k];
    n = std::sqrt(n);
    for (std::size_t k = 0; k < e; ++k) t.data[r * e + k] /= n;
  }
  return t;
}

std::vector<BevMaskPlan> random_plans(std::size_t b, std::size_t h, std::size_t w, Rng& rng) {
  std::vector<BevMaskPlan> plans;
  for (std::size_t n = 0; n < b; ++n) plans.push_back(oracle::random_plan(h, w, rng));
  return plans;
}

}  // namespace

TEST(JepaLoss, IdenticalEmbeddingsGiveZero) {
  Rng rng(1);
  const auto plans = random_plans(2, 4, 4, rng);
  const auto x = unit_rows(oracle::random_tensor({2, 4, 4, 6}, rng));
  ad::Tape tape;
  const auto v = tape.constant(x);
  EXPECT_NEAR(jepa_loss(v, v, plans, 0.25, 0.75).total.item(), 0.0, 1e-15);
}

TEST(JepaLoss, OrthogonalEmbeddingsGiveOne) {
  Rng rng(2);
  const auto plans = random_plans(3, 4, 4, rng);
  Tensor a({3, 4, 4, 2}), b({3, 4, 4, 2});
  for (std::size_t r = 0; r < 48; ++r) {
    a.data[2 * r] = 1;
    b.data[2 * r + 1] = 1;
  }
  ad::Tape tape;
  EXPECT_NEAR(jepa_loss(tape.constant(a), tape.constant(b), plans, 0.25, 0.75).total.item(), 1.0, 1e-15);
}

TEST(JepaLoss, MatchesLoopOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t b = 1 + rng.below(3), h = 2 + rng.below(5), w = 2 + rng.below(5), e = 1 + rng.below(9);
    const auto plans = random_plans(b, h, w, rng);
    const auto p = oracle::random_tensor({b, h, w, e}, rng);
    const auto t = oracle::random_tensor({b, h, w, e}, rng);
    const double a0 = rng.uniform(), a1 = rng.uniform();
    ad::Tape tape;
    const auto got = jepa_loss(tape.constant(p), tape.constant(t), plans, a0, a1);
    const auto ref = oracle::jepa(p, t, plans, a0, a1);
    EXPECT_NEAR(got.total.item(), ref.total, 1e-12);
    EXPECT_NEAR(got.cos_empty.item(), ref.cos_empty, 1e-12);
    EXPECT_NEAR(got.cos_occupied.item(), ref.cos_occupied, 1e-12);
  }
}

TEST(VarianceHinge, ConstantRowsGiveGamma) {
  Tensor y({10, 4}, 0.3);
  ad::Tape tape;
  EXPECT_NEAR(variance_hinge(tape.constant(y), 1.0 / 16, 0.0).value.item(), 0.0625, 1e-15);
  EXPECT_NEAR(variance_hinge(tape.constant(y), 1.0 / 16, 1e-8).value.item(), 0.0625 - 1e-4, 1e-15);
}

TEST(VarianceHinge, InactiveWhenSpreadExceedsGamma) {
  Tensor y({2, 3}, std::vector<double>{-1, -1, -1, 1, 1, 1});
  ad::Tape tape;
  EXPECT_EQ(variance_hinge(tape.constant(y), 0.5, 1e-8).value.item(), 0.0);
}

TEST(VarianceHinge, GaussianSamplesNearZero) {
  Rng rng(4);
  Tensor y({1000, 8});
  for (auto& v : y.data) v = rng.normal();
  ad::Tape tape;
  EXPECT_LT(variance_hinge(tape.constant(y), 1.0 / 16, 1e-8).value.item(), 1e-6);
}

TEST(VarianceHinge, EmptyInputIsDegenerate) {
  ad::Tape tape;
  const auto r = variance_hinge(tape.constant(Tensor({0, 3})), 0.1, 1e-8);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.value.item(), 0.0);
}

TEST(VarianceHinge, MatchesLoopOracle) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 1 + rng.below(30), c = 1 + rng.below(10);
    const double scale = rng.uniform(0.01, 0.3), gamma = rng.uniform(0.02, 0.3);
    const auto y = oracle::random_tensor({m, c}, rng, -scale, scale);
    ad::Tape tape;
    EXPECT_NEAR(variance_hinge(tape.constant(y), gamma, 1e-8).value.item(), oracle::hinge(y.data, m, c, gamma, 1e-8),
                1e-12);
  }
}

TEST(VarianceRegLoss, SceneConstantBatchIsCaught) {
  const std::size_t h = 3, w = 3, e = 4;
  BevOccupancy occ{h, w, std::vector<char>(h * w, 1)};
  std::vector<char> masked(h * w, 0);
  for (std::size_t c = 0; c < h * w; c += 2) masked[c] = 1;
  const std::vector<BevMaskPlan> plans{make_plan(occ, masked), make_plan(occ, masked)};
  Tensor x({2, h, w, e});
  for (std::size_t c = 0; c < h * w; ++c) {
    x.data[c * e + 0] = 1.0;            // scene 0: every cell e0
    x.data[(h * w + c) * e + 1] = 1.0;  // scene 1: every cell e1
  }
  const double gamma = 0.25, b1 = 1.0, b2 = 1.0;
  ad::Tape tape;
  const auto v = tape.constant(x);
  const auto per_input = variance_reg_loss(v, v, plans, b1, b2, gamma, 1e-8, RegNormalization::mean_over_batch);
  EXPECT_NEAR(per_input.total.item(), (b1 + b2) * gamma, 1e-3);
  const auto pooled = variance_reg_loss(v, v, plans, b1, b2, gamma, 1e-8, RegNormalization::pooled_batch);
  // Pooled over both scenes, columns 0 and 1 have std 0.5; only columns 2 and 3 are penalised.
  EXPECT_NEAR(pooled.total.item(), (b1 + b2) * gamma / 2, 1e-3);
}

TEST(VarianceRegLoss, SpreadEmbeddingsGiveZero) {
  Rng rng(6);
  const auto plans = random_plans(2, 6, 6, rng);
  const auto x = oracle::random_tensor({2, 6, 6, 5}, rng, -3, 3);
  ad::Tape tape;
  const auto v = tape.constant(x);
  EXPECT_EQ(variance_reg_loss(v, v, plans, 1, 1, 0.0625, 1e-8, RegNormalization::mean_over_batch).total.item(), 0.0);
}

TEST(VarianceRegLoss, MatchesLoopOracleInEveryMode) {
  Rng rng(7);
  const std::pair<RegNormalization, oracle::Norm> modes[] = {
      {RegNormalization::mean_over_batch, oracle::Norm::mean},
      {RegNormalization::sum_over_batch, oracle::Norm::sum},
      {RegNormalization::pooled_batch, oracle::Norm::pooled},
  };
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t b = 1 + rng.below(4), h = 2 + rng.below(5), w = 2 + rng.below(5), e = 1 + rng.below(9);
    const auto plans = random_plans(b, h, w, rng);
    const double s = rng.uniform(0.02, 0.4);
    const auto c = oracle::random_tensor({b, h, w, e}, rng, -s, s);
    const auto p = oracle::random_tensor({b, h, w, e}, rng, -s, s);
    const double b1 = rng.uniform(0.5, 2), b2 = rng.uniform(0.5, 2), gamma = rng.uniform(0.05, 0.4);
    for (auto [mode, ref_mode] : modes) {
      ad::Tape tape;
      const auto got = variance_reg_loss(tape.constant(c), tape.constant(p), plans, b1, b2, gamma, 1e-8, mode);
      EXPECT_NEAR(got.total.item(), oracle::reg(c, p, plans, b1, b2, gamma, 1e-8, ref_mode), 1e-12);
    }
  }
}

TEST(TotalLoss, WeightedSum) {
  ad::Tape tape;
  auto j = tape.constant(Tensor({1}, 0.5));
  auto r = tape.constant(Tensor({1}, 0.02));
  EXPECT_NEAR(total_loss(j, r, 1, 10).item(), 0.7, 1e-15);
  EXPECT_EQ(total_loss(j, tape.constant(Tensor({1}, 0.0)), 1, 123).item(), 0.5);
  auto bad = tape.constant(Tensor({1}, std::nan("")));
  EXPECT_THROW(total_loss(bad, r, 1, 1), NumericalError);
}

TEST(Spread, MatchesHingeQuantity) {
  Rng rng(8);
  const auto y = oracle::random_tensor({20, 3}, rng);
  const double gamma = 10.0;  // large enough that the hinge equals gamma - mean std
  EXPECT_NEAR(embedding_spread(y.data, 3, 1e-8), gamma - oracle::hinge(y.data, 20, 3, gamma, 1e-8), 1e-12);
}

TEST(Spread, MeanSceneSpreadSkipsSmallScenes) {
  BevOccupancy occ{1, 3, {1, 0, 0}};
  const std::vector<BevMaskPlan> plans{make_plan(occ, {0, 0, 0})};
  Tensor x({1, 1, 3, 2}, 1.0);
  EXPECT_EQ(mean_scene_spread(x, plans, CellSet::visible_occupied, 1e-8), 0.0);
}
