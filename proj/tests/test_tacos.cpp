#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "kws/tacos.hpp"
#include "support/tacos_oracle.hpp"

namespace {

using namespace kws;

SegmentLabel label(int n_kw, int kw, std::vector<double> pos, std::size_t sample = 0) {
  return {one_hot(n_kw, kw), std::move(pos), sample, 0};
}

TEST(Tacos, SelfSimilarityIsOne) {
  ClusterCenters c = ClusterCenters::random_unit(1, 2, 3, 4, 1);
  Matrix e(3, 4);
  for (int t = 0; t < 3; ++t) e.row(t) = c.rows.row(c.row_index(0, 1, 2)) * (t + 1.0);
  const Matrix th = similarity(e, c);
  EXPECT_NEAR(th(1, 2), 1.0, 1e-12);
  EXPECT_LE(th.maxCoeff(), 1.0 + 1e-12);
  EXPECT_GE(th.minCoeff(), -1.0 - 1e-12);
}

TEST(Tacos, OrthogonalFramesGiveZero) {
  ClusterCenters c{1, 1, 2, Matrix::Zero(2, 4)};
  c.rows(0, 0) = 1.0;
  c.rows(1, 1) = 1.0;
  Matrix e = Matrix::Zero(2, 4);
  e(0, 2) = 1.0;
  e(1, 3) = 2.0;
  const Matrix th = similarity(e, c);
  EXPECT_DOUBLE_EQ(th(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(th(0, 1), 0.0);
}

TEST(Tacos, MaxPicksMatchingClusterPerFrame) {
  ClusterCenters c{2, 1, 1, Matrix::Zero(2, 3)};
  c.rows(c.row_index(0, 0, 0), 0) = 1.0;
  c.rows(c.row_index(1, 0, 0), 1) = 1.0;
  Matrix e = Matrix::Zero(2, 3);
  e(0, 0) = 3.0;
  e(1, 1) = 0.5;
  EXPECT_NEAR(similarity(e, c)(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(similarity(e, c)(0, 0), oracle::theta(e, c)(0, 0), 1e-12);
}

TEST(Tacos, ZeroNormRaises) {
  ClusterCenters c = ClusterCenters::random_unit(1, 2, 2, 3, 2);
  Matrix e = Matrix::Ones(2, 3);
  e.row(1).setZero();
  EXPECT_THROW(similarity(e, c), NumericDomainError);
  c.rows.row(0).setZero();
  EXPECT_THROW(similarity(Matrix::Ones(2, 3), c), NumericDomainError);
}

TEST(Tacos, ScaleInvariance) {
  const auto in = oracle::random_instance(4);
  ClusterCenters scaled = in.centers;
  scaled.rows *= 3.5;
  const Matrix a = similarity(in.embeddings[0], in.centers);
  const Matrix b = similarity(in.embeddings[0] * 0.2, scaled);
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Tacos, SimilarityMatchesOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto in = oracle::random_instance(seed, 6, 5, 4, 3, 3, 2);
    const Matrix a = similarity(in.embeddings[1], in.centers);
    EXPECT_LT((a - oracle::theta(in.embeddings[1], in.centers)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Tacos, SoftmaxConstantIsUniform) {
  const Matrix s = joint_softmax(Matrix::Constant(3, 4, 0.3), {5.0});
  for (Eigen::Index i = 0; i < s.size(); ++i) EXPECT_NEAR(s.data()[i], 1.0 / 12, 1e-15);
  EXPECT_NEAR(keyword_marginal(s).sum(), 1.0, 1e-12);
  EXPECT_NEAR(position_marginal(s).sum(), 1.0, 1e-12);
}

TEST(Tacos, SoftmaxConcentratesWithLargeScale) {
  Matrix th = Matrix::Constant(3, 4, 0.1);
  th(2, 1) = 0.3;
  const double gap = 0.2;
  const double needed = std::log(99.0 * 11.0) / gap;
  const Matrix s = joint_softmax(th, {needed});
  EXPECT_GE(s(2, 1), 0.99 - 1e-12);
  Eigen::Index r, col;
  joint_softmax(th, {1.0}).maxCoeff(&r, &col);
  EXPECT_EQ(r, 2);
  EXPECT_EQ(col, 1);
  // No overflow for huge logits.
  const Matrix big = joint_softmax(th, {1e6});
  EXPECT_TRUE(big.allFinite());
}

TEST(Tacos, InitialScale) {
  EXPECT_NEAR(AdaptiveScale::initial(12).value, std::numbers::sqrt2 * std::log(11.0), 1e-12);
}

TEST(Tacos, ScaleUpdateWithZeroThetaReturnsInitial) {
  const int n_kw = 3, n_pos = 4;
  std::vector<Matrix> th(4, Matrix::Zero(n_kw, n_pos));
  std::vector<SegmentLabel> y(4, label(n_kw, 1, positional_label({2, 2}, n_pos).weights));
  for (double prev : {1.0, 7.0, 50.0}) {
    const auto next = update_scale(th, y, {prev});
    EXPECT_NEAR(next.value, AdaptiveScale::initial(n_kw * n_pos).value, 1e-12);
  }
}

TEST(Tacos, ScaleUpdateIsClamped) {
  const int n_kw = 3, n_pos = 4;
  std::vector<Matrix> th(2, Matrix::Constant(n_kw, n_pos, 0.9));
  std::vector<SegmentLabel> y(2, label(n_kw, 0, positional_label({1, 1}, n_pos).weights));
  EXPECT_DOUBLE_EQ(update_scale(th, y, {99.0}).value, AdaptiveScale::kMax);
  std::vector<Matrix> low(2, Matrix::Constant(n_kw, n_pos, -0.9));
  EXPECT_DOUBLE_EQ(update_scale(low, y, {10.0}).value, AdaptiveScale::kMin);
  EXPECT_THROW(update_scale(std::vector<Matrix>{}, std::vector<SegmentLabel>{}, {2.0}), ParameterError);
}

TEST(Tacos, ScaleUpdateReachesFixedPoint) {
  const auto in = oracle::random_instance(7);
  std::vector<Matrix> th;
  for (const auto& e : in.embeddings) th.push_back(similarity(e, in.centers) * 0.3);
  AdaptiveScale s = AdaptiveScale::initial(12);
  double prev = 0;
  for (int it = 0; it < 200; ++it) {
    prev = s.value;
    s = update_scale(th, in.labels, s);
  }
  EXPECT_NEAR(s.value, prev, 1e-6);
  EXPECT_GT(s.value, 0.0);
}

TEST(Tacos, LossExamples) {
  const int n_kw = 3, n_pos = 4;
  const SegmentLabel y = label(n_kw, 1, positional_label({3, 3}, n_pos).weights);
  Matrix th = Matrix::Constant(n_kw, n_pos, -1.0);
  th(1, 2) = 1.0;
  const auto perfect = detail::item_loss(th, y, {100.0}, {});
  EXPECT_LT(perfect.loss_total, 1e-60);

  const auto uniform = detail::item_loss(Matrix::Zero(n_kw, n_pos), y, {3.0}, {});
  EXPECT_NEAR(uniform.loss_total, std::log(3.0) + std::log(4.0), 1e-12);

  const SegmentLabel soft = label(2, 0, {0.5, 0.5});
  const auto half = detail::item_loss(Matrix::Zero(2, 2), soft, {2.0}, {0.0, 1.0});
  EXPECT_NEAR(half.loss_total, std::log(2.0), 1e-12);
}

TEST(Tacos, BatchLossMatchesOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto in = oracle::random_instance(seed);
    const auto items = oracle::items_of(in);
    const BatchLoss b = tacos_loss(items, in.centers, in.scale);
    EXPECT_NEAR(b.total, oracle::batch_loss(in), 1e-12);
    EXPECT_GE(b.total, 0.0);
    for (const auto& it : b.items) {
      EXPECT_NEAR(it.s.sum(), 1.0, 1e-12);
      EXPECT_GE(it.loss_total, 0.0);
      EXPECT_LE(it.theta.cwiseAbs().maxCoeff(), 1.0 + 1e-12);
    }
  }
}

TEST(Tacos, SampleWeighting) {
  // Two segments of one sample weigh as much as one segment of another.
  auto in = oracle::random_instance(3, 5, 8, 3, 4, 2, 3);
  in.labels[0].sample_id = 0;
  in.labels[1].sample_id = 0;
  in.labels[2].sample_id = 1;
  const auto b = tacos_loss(oracle::items_of(in), in.centers, in.scale);
  const double expected =
      0.5 * (0.5 * b.items[0].loss_total + 0.5 * b.items[1].loss_total) + 0.5 * b.items[2].loss_total;
  EXPECT_NEAR(b.total, expected, 1e-12);
}

TEST(Tacos, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto r = oracle::check_gradients(oracle::random_instance(1000 + seed));
    EXPECT_LE(r.max_rel, 1e-4) << "seed " << seed;
    EXPECT_GT(r.checked, 100);
  }
}

TEST(Tacos, GradientsMatchNearSubClusterTie) {
  // Two sub-cluster cosines of this instance lie 1.3e-6 apart.
  const auto r = oracle::check_gradients(oracle::random_instance(65));
  EXPECT_GT(r.kinks, 0);
  EXPECT_LE(r.max_rel, 1e-4);
}

TEST(Tacos, GradientsVanishAtPerfectPrediction) {
  const int n_kw = 2, n_pos = 2;
  ClusterCenters c{1, n_kw, n_pos, Matrix::Identity(4, 4)};
  Matrix e = Matrix::Zero(3, 4);
  e.col(static_cast<Eigen::Index>(c.row_index(0, 1, 0))).setOnes();
  const SegmentLabel y = label(n_kw, 1, {1.0, 0.0});
  const std::vector<LossItem> items{{&e, &y}};
  const auto g = tacos_gradients(items, c, {100.0});
  EXPECT_LT(g.loss.total, 1e-30);
  EXPECT_LT(g.d_embedding[0].norm(), 1e-30);
  EXPECT_LT(g.d_centers.norm(), 1e-30);
}

TEST(Tacos, NonWinningCentresGetNoGradient) {
  // Cluster 1 of every cell points away from all frames, so it never attains the max.
  auto in = oracle::random_instance(21);
  for (int kw = 0; kw < in.centers.n_kw; ++kw)
    for (int pos = 0; pos < in.centers.n_pos; ++pos)
      in.centers.rows.row(in.centers.row_index(1, kw, pos)) = -in.centers.rows.row(in.centers.row_index(0, kw, pos));
  for (auto& e : in.embeddings)
    for (Eigen::Index t = 0; t < e.rows(); ++t) e.row(t) = in.centers.rows.row(t % 12) + 0.01 * e.row(t);
  const auto g = tacos_gradients(oracle::items_of(in), in.centers, in.scale);
  double losing = 0.0;
  for (int kw = 0; kw < in.centers.n_kw; ++kw)
    for (int pos = 0; pos < in.centers.n_pos; ++pos) {
      bool wins = false;
      const auto r1 = in.centers.row_index(1, kw, pos);
      const auto r0 = in.centers.row_index(0, kw, pos);
      for (const auto& e : in.embeddings)
        for (Eigen::Index t = 0; t < e.rows(); ++t)
          wins = wins || oracle::cosine(e, t, in.centers.rows, r1) > oracle::cosine(e, t, in.centers.rows, r0);
      if (!wins) losing = std::max(losing, g.d_centers.row(r1).norm());
    }
  EXPECT_EQ(losing, 0.0);
}

TEST(Tacos, GradientOfNegligibleCellIsTiny) {
  // An unlabelled cell whose softmax mass is ~0 only feels the softmax pull s_a * (...), which is ~0.
  const int n_kw = 2, n_pos = 1;
  ClusterCenters c{1, n_kw, n_pos, Matrix::Identity(2, 3)};
  Matrix e(2, 3);
  e << 1.0, -0.2, 0.3, 1.0, -0.1, 0.2;
  const SegmentLabel y = label(n_kw, 0, {1.0});
  const std::vector<LossItem> items{{&e, &y}};
  const auto g = tacos_gradients(items, c, {60.0});
  const Matrix s = joint_softmax(similarity(e, c), {60.0});
  EXPECT_LT(s(1, 0), 1e-20);
  EXPECT_LT(g.d_centers.row(c.row_index(0, 1, 0)).norm(), 1e-15);
}

}  // namespace
