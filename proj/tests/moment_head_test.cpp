#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "support.hpp"

namespace vdi {
namespace {

using testing::random_matrix;

constexpr double kInf = std::numeric_limits<double>::infinity();

double cosine(const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
  double dot = 0, na = 0, nb = 0;
  for (Index k = 0; k < a.size(); ++k) {
    dot += a(k) * b(k);
    na += a(k) * a(k);
    nb += b(k) * b(k);
  }
  return dot / std::sqrt(na * nb);
}

Eigen::RowVectorXd apply_linear(const nn::ParameterSet& ps, const std::string& name,
                                const Eigen::RowVectorXd& x) {
  const Matrix w = ps.find(name + ".weight").value();
  const Matrix b = ps.find(name + ".bias").value();
  Eigen::RowVectorXd y(w.cols());
  for (Index o = 0; o < w.cols(); ++o) {
    y(o) = b(0, o);
    for (Index k = 0; k < w.rows(); ++k) y(o) += x(k) * w(k, o);
  }
  return y;
}

TEST(GridTest, ValidCellIndexMatchesEnumeration) {
  for (Index l = 1; l <= 9; ++l) {
    Index r = 0;
    for (const auto& [i, j] : valid_cells(l)) EXPECT_EQ(valid_cell_index(l, i, j), r++);
    EXPECT_EQ(r, l * (l + 1) / 2);
  }
}

TEST(SegmentMapTest, SingleFrameIsOneCell) {
  nn::ParameterSet ps;
  Rng rng(1);
  MomentHead head(ps, 4, 1, rng);
  head.set_identity_convolution();
  FrameFeatures f = testing::random_frames(1, 4, 2, 2, rng);
  f.global = f.global.cwiseAbs();
  const auto map = head.build_segment_map(f);
  EXPECT_EQ(map.num_valid(), 1);
  EXPECT_LT((map.at(0, 0) - f.global.row(0)).norm(), 1e-15);
}

TEST(SegmentMapTest, IdentityConvolutionOfConstantFramesIsConstant) {
  nn::ParameterSet ps;
  Rng rng(2);
  MomentHead head(ps, 3, 3, rng);
  head.set_identity_convolution();
  FrameFeatures f = testing::random_frames(3, 3, 2, 2, rng);
  for (Index i = 0; i < 3; ++i) f.global.row(i) << 0.2, 0.7, 1.5;
  const auto map = head.build_segment_map(f);
  for (const auto& [i, j] : valid_cells(3)) EXPECT_LT((map.at(i, j) - f.global.row(0)).norm(), 1e-14);
}

TEST(SegmentMapTest, IdentityConvolutionMeanPoolsTwoFrames) {
  nn::ParameterSet ps;
  Rng rng(3);
  MomentHead head(ps, 2, 2, rng);
  head.set_identity_convolution();
  FrameFeatures f = testing::random_frames(2, 2, 2, 2, rng);
  f.global << 1, 0, 0, 1;
  const auto map = head.build_segment_map(f);
  EXPECT_NEAR(map.at(0, 1)(0), 0.5, 1e-15);
  EXPECT_NEAR(map.at(0, 1)(1), 0.5, 1e-15);
  EXPECT_FALSE(map.valid(1, 0));
}

TEST(SegmentMapTest, ConvolutionMatchesNeighbourhoodLoop) {
  nn::ParameterSet ps;
  Rng rng(4);
  const Index l = 4, d = 3;
  MomentHead head(ps, d, l, rng);
  const Matrix pooled = pool_segments(random_matrix(l, d, rng));
  const Matrix w1 = ps.find("head.conv1.weight").value(), b1 = ps.find("head.conv1.bias").value();
  const Matrix w2 = ps.find("head.conv2.weight").value(), b2 = ps.find("head.conv2.bias").value();

  auto conv = [&](const Matrix& x, const Matrix& w, const Matrix& b, bool relu) {
    Matrix out(x.rows(), d);
    for (const auto& [i, j] : valid_cells(l)) {
      const Index r = valid_cell_index(l, i, j);
      for (Index o = 0; o < d; ++o) {
        double s = b(0, o);
        int tap = 0;
        for (Index di = -1; di <= 1; ++di) {
          for (Index dj = -1; dj <= 1; ++dj, ++tap) {
            const Index a = i + di, c = j + dj;
            if (a < 0 || c < 0 || a >= l || c >= l || c < a) continue;
            const Index src = valid_cell_index(l, a, c);
            for (Index k = 0; k < d; ++k) s += x(src, k) * w(tap * d + k, o);
          }
        }
        out(r, o) = relu ? std::max(s, 0.0) : s;
      }
    }
    return out;
  };
  const Matrix want = conv(conv(pooled, w1, b1, true), w2, b2, false);
  EXPECT_LT((head.build_from_pooled(pooled).features.value() - want).norm(), 1e-12);
}

TEST(IoULabelTest, HandExamples) {
  const TimeGrid grid{4.0, 4};
  const auto map = iou_label_map(1.0, 3.0, grid);
  EXPECT_DOUBLE_EQ(map.labels(1, 2), 1.0);
  EXPECT_NEAR(map.labels(0, 1), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(map.labels(3, 3), 0.0);
  EXPECT_EQ(map.labels(2, 1), 0.0);
  EXPECT_EQ(map.best_cell(), (std::pair<Index, Index>{1, 2}));
  EXPECT_THROW(iou_label_map(2.0, 2.0, grid), InvalidBoundary);
}

TEST(IoULabelTest, MatchesDirectIntervalArithmetic) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const Index l = rng.range(1, 12);
    const double duration = 1.0 + 20.0 * rng.uniform();
    const double a = rng.uniform() * duration, b = rng.uniform() * duration;
    if (a == b) continue;
    const auto map = iou_label_map(std::min(a, b), std::max(a, b), {duration, l});
    for (Index i = 0; i < l; ++i) {
      for (Index j = 0; j < l; ++j) {
        double want = 0.0;
        if (j >= i) {
          const double cs = i * duration / l, ce = (j + 1) * duration / l;
          const double lo = std::max(cs, std::min(a, b)), hi = std::min(ce, std::max(a, b));
          const double uni = std::max(ce, std::max(a, b)) - std::min(cs, std::min(a, b));
          want = hi > lo ? (hi - lo) / uni : 0.0;
        }
        EXPECT_NEAR(map.labels(i, j), want, 1e-12);
        EXPECT_GE(map.labels(i, j), 0.0);
        EXPECT_LE(map.labels(i, j), 1.0);
      }
    }
  }
}

TEST(IoUScoreTest, ParallelAndOrthogonalCells) {
  nn::ParameterSet ps;
  Rng rng(6);
  MomentHead head(ps, 2, 2, rng);
  head.set_identity_convolution();
  head.iou_query().set_identity();
  head.iou_moment().set_identity();
  FrameFeatures f = testing::random_frames(2, 2, 2, 2, rng);
  f.global << 1, 0, 0, 1;
  const auto map = head.build_segment_map(f);
  const TextEmbedding q{Var(Matrix(Eigen::RowVector2d(3.0, 0.0))), SourceKind::full};
  const auto s = head.iou_scores(q, map);
  EXPECT_NEAR(s.scores(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(s.scores(1, 1), 0.0, 1e-15);
  EXPECT_EQ(s.scores(1, 0), -kInf);
}

TEST(IoUScoreTest, MatchesPerCellCosineLoop) {
  nn::ParameterSet ps;
  Rng rng(7);
  MomentHead head(ps, 8, 5, rng);
  const auto map = head.build_from_pooled(pool_segments(random_matrix(5, 8, rng)));
  const Eigen::RowVectorXd q = random_matrix(1, 8, rng);
  const auto s = head.iou_scores({Var(Matrix(q)), SourceKind::full}, map);
  const auto pq = apply_linear(ps, "head.iou_query", q);
  for (const auto& [i, j] : valid_cells(5)) {
    EXPECT_NEAR(s.scores(i, j), cosine(apply_linear(ps, "head.iou_moment", map.at(i, j)), pq), 1e-12);
  }
  const auto c = head.cl_scores({Var(Matrix(q)), SourceKind::full}, map);
  const auto cq = apply_linear(ps, "head.cl_query", q);
  for (const auto& [i, j] : valid_cells(5)) {
    EXPECT_NEAR(c.scores(i, j), cosine(apply_linear(ps, "head.cl_moment", map.at(i, j)), cq), 1e-12);
  }
}

TEST(IoUScoreTest, InvariantToQueryScale) {
  nn::ParameterSet ps;
  Rng rng(8);
  MomentHead head(ps, 6, 4, rng);
  head.iou_query().bias().mutable_value().setZero();
  const auto map = head.build_from_pooled(pool_segments(random_matrix(4, 6, rng)));
  const Matrix q = random_matrix(1, 6, rng);
  const auto a = head.iou_scores({Var(q), SourceKind::full}, map);
  const auto b = head.iou_scores({Var(Matrix(4.0 * q)), SourceKind::full}, map);
  for (const auto& [i, j] : valid_cells(4)) EXPECT_NEAR(a.scores(i, j), b.scores(i, j), 1e-12);
}

TEST(IoULossTest, HalfEverywhereIsLn2) {
  IoULabelMap labels{Matrix::Constant(3, 3, 0.5)};
  ProposalScoreMap p{Matrix::Constant(3, 3, 0.5), ScoreKind::iou};
  EXPECT_NEAR(iou_loss(labels, p), std::log(2.0), 1e-10);
  // Zero cosines give sigmoid(0) = 0.5 on the autodiff path too.
  EXPECT_NEAR(iou_loss(labels, Var(Matrix::Zero(6, 1)), 0.1).item(), std::log(2.0), 1e-10);
}

TEST(IoULossTest, ConfidentCorrectPredictionApproachesZero) {
  IoULabelMap labels{Matrix::Ones(1, 1)};
  EXPECT_LT(iou_loss(labels, ProposalScoreMap{Matrix::Constant(1, 1, 1.0 - 1e-12), ScoreKind::iou}), 1e-11);
  EXPECT_LT(iou_loss(labels, Var(Matrix::Constant(1, 1, 1.0)), 0.01).item(), 1e-40);
}

TEST(IoULossTest, MatchesElementwiseLoop) {
  Rng rng(9);
  const auto labels = iou_label_map(0.7, 2.1, {3.0, 3});
  const Matrix cos = random_matrix(6, 1, rng);
  const double sigma = 0.3;
  double want = 0.0;
  for (Index r = 0; r < 6; ++r) {
    const auto [i, j] = valid_cells(3)[static_cast<std::size_t>(r)];
    const double p = 1.0 / (1.0 + std::exp(-cos(r, 0) / sigma));
    const double y = labels.labels(i, j);
    want -= y * std::log(p) + (1 - y) * std::log(1 - p);
  }
  want /= 6.0;
  EXPECT_NEAR(iou_loss(labels, Var(cos), sigma).item(), want, 1e-12);
  ProposalScoreMap cos_map{Matrix::Constant(3, 3, -kInf), ScoreKind::iou};
  for (Index r = 0; r < 6; ++r) {
    const auto [i, j] = valid_cells(3)[static_cast<std::size_t>(r)];
    cos_map.scores(i, j) = cos(r, 0);
  }
  EXPECT_NEAR(iou_loss(labels, to_probabilities(cos_map, sigma)), want, 1e-12);
}

TEST(ContrastiveTest, NoNegativesGivesZero) {
  Rng rng(10);
  const Var m(random_matrix(1, 4, rng)), q(random_matrix(1, 4, rng));
  EXPECT_NEAR(contrastive_loss(m, q, {}).item(), 0.0, 1e-15);
}

TEST(ContrastiveTest, OneEqualNegativeGivesLn2) {
  Rng rng(11);
  const Matrix m = random_matrix(1, 4, rng), q = random_matrix(1, 4, rng);
  NegativeSets negs;
  negs.moment_negatives = Var(Matrix(2.0 * m));
  EXPECT_NEAR(contrastive_loss(Var(m), Var(q), negs).item(), std::log(2.0), 1e-10);
}

TEST(ContrastiveTest, MatchesIndependentSoftmax) {
  Rng rng(12);
  const Matrix m = random_matrix(1, 6, rng), q = random_matrix(1, 6, rng);
  const Matrix mn = random_matrix(4, 6, rng), qn = random_matrix(3, 6, rng);
  const double tau = 0.2;
  NegativeSets negs{Var(mn), Var(qn), tau};
  const double pos = std::exp(cosine(m, q) / tau);
  double zm = pos, zq = pos;
  for (Index k = 0; k < 4; ++k) zm += std::exp(cosine(mn.row(k), q) / tau);
  for (Index k = 0; k < 3; ++k) zq += std::exp(cosine(qn.row(k), m) / tau);
  const double want = -std::log(pos / zm) - std::log(pos / zq);
  EXPECT_NEAR(contrastive_loss(Var(m), Var(q), negs).item(), want, 1e-12);
  negs.temperature = 0.0;
  EXPECT_THROW(contrastive_loss(Var(m), Var(q), negs), ConfigError);
}

TEST(DecodeTest, HandExample) {
  Matrix fused(2, 2);
  fused << 0.1, 0.9, -kInf, 0.4;
  EXPECT_EQ(decode_boundary(fused), (std::pair<Index, Index>{0, 1}));
  EXPECT_EQ(decode_boundary(Matrix::Constant(1, 1, 0.3)), (std::pair<Index, Index>{0, 0}));
}

TEST(DecodeTest, EqualsGlobalArgmaxAndIgnoresPerMapScale) {
  Rng rng(13);
  for (int trial = 0; trial < 300; ++trial) {
    const Index l = rng.range(1, 10);
    ProposalScoreMap a{Matrix::Constant(l, l, -kInf), ScoreKind::iou};
    ProposalScoreMap b{Matrix::Constant(l, l, -kInf), ScoreKind::cl};
    std::pair<Index, Index> best{0, 0};
    double best_v = -1.0;
    for (const auto& [i, j] : valid_cells(l)) {
      a.scores(i, j) = rng.uniform();
      b.scores(i, j) = rng.uniform();
      if (a.scores(i, j) * b.scores(i, j) > best_v) {
        best_v = a.scores(i, j) * b.scores(i, j);
        best = {i, j};
      }
    }
    const auto decoded = fuse_and_decode(a, b);
    EXPECT_EQ(decoded.top_cell, best);
    EXPECT_EQ(decoded.ranked_cells.front(), best);
    EXPECT_EQ(decoded.ranked_cells.size(), static_cast<std::size_t>(l * (l + 1) / 2));
    ProposalScoreMap a2 = a, b2 = b;
    for (const auto& [i, j] : valid_cells(l)) {
      a2.scores(i, j) *= 0.3;
      b2.scores(i, j) *= 0.9;
    }
    EXPECT_EQ(fuse_and_decode(a2, b2).top_cell, best);
  }
}

TEST(DecodeTest, PredictionSegmentsFollowRanking) {
  ProposalScoreMap a{Matrix::Constant(2, 2, -kInf), ScoreKind::iou};
  a.scores(0, 0) = 0.2;
  a.scores(0, 1) = 0.8;
  a.scores(1, 1) = 0.5;
  ProposalScoreMap ones = a;
  for (const auto& [i, j] : valid_cells(2)) ones.scores(i, j) = 1.0;
  const auto p = to_prediction(fuse_and_decode(a, ones), {10.0, 2}, "v", 3);
  ASSERT_EQ(p.segments.size(), 3u);
  EXPECT_EQ(p.segments[0], (Segment{0.0, 10.0, 0.8}));
  EXPECT_EQ(p.segments[1], (Segment{5.0, 10.0, 0.5}));
  EXPECT_EQ(p.segments[2], (Segment{0.0, 5.0, 0.2}));
}

TEST(MomentHeadTest, RejectsWrongPooledShape) {
  nn::ParameterSet ps;
  Rng rng(14);
  MomentHead head(ps, 4, 3, rng);
  EXPECT_THROW(head.build_from_pooled(Matrix::Zero(5, 4)), DimensionMismatch);
}

}  // namespace
}  // namespace vdi
