#include <gtest/gtest.h>

#include <sstream>

#include "support.hpp"

namespace vdi {
namespace {

MomentPrediction pred(std::size_t qid, std::vector<Segment> segs) { return {"v", qid, std::move(segs)}; }

TEST(TemporalIoUTest, Examples) {
  EXPECT_DOUBLE_EQ(temporal_iou({1, 3}, {1, 3}), 1.0);
  EXPECT_NEAR(temporal_iou({0, 4}, {2, 6}), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(temporal_iou({0, 1}, {2, 3}), 0.0);
  EXPECT_EQ(temporal_iou({0, 1}, {1, 2}), 0.0);
  EXPECT_THROW(temporal_iou({2, 1}, {0, 1}), InvalidBoundary);
}

TEST(EvaluateTest, PerfectPredictions) {
  const auto r = evaluate({pred(0, {{1, 2, 0}}), pred(1, {{0, 5, 0}})}, {{0, {1, 2}}, {1, {0, 5}}});
  for (const auto& [key, v] : r.recall) EXPECT_DOUBLE_EQ(v, 100.0) << recall_name(key);
  EXPECT_DOUBLE_EQ(r.miou, 100.0);
  EXPECT_EQ(r.num_queries, 2u);
}

TEST(EvaluateTest, TwoQueriesWithMixedIoU) {
  // top-1 IoUs: [0, 6] vs [0, 10] = 0.6; [0, 4] vs [0, 10] = 0.4
  const auto r = evaluate({pred(0, {{0, 6, 0}}), pred(1, {{0, 4, 0}})}, {{0, {0, 10}}, {1, {0, 10}}});
  EXPECT_NEAR(r.recall_at(1, 0.5), 50.0, 1e-12);
  EXPECT_NEAR(r.miou, 50.0, 1e-12);
  EXPECT_NEAR(r.recall_at(1, 0.7), 0.0, 1e-12);
}

TEST(EvaluateTest, ThresholdIsStrict) {
  const auto r = evaluate({pred(0, {{0, 5, 0}})}, {{0, {0, 10}}}, {1}, {0.5});
  EXPECT_EQ(r.recall_at(1, 0.5), 0.0);
}

TEST(EvaluateTest, MissingPredictionThrows) {
  EXPECT_THROW(evaluate({pred(0, {{0, 1, 0}})}, {{0, {0, 1}}, {7, {0, 1}}}), MissingPrediction);
  EXPECT_THROW(evaluate({pred(0, {})}, {{0, {0, 1}}}), MissingPrediction);
}

TEST(EvaluateTest, TopNUsesBestOfFirstN) {
  std::vector<Segment> segs = {{5, 6, 0}, {6, 7, 0}, {0, 9, 0}};
  const auto r = evaluate({pred(0, segs)}, {{0, {0, 10}}}, {1, 2, 5}, {0.5});
  EXPECT_EQ(r.recall_at(1, 0.5), 0.0);
  EXPECT_EQ(r.recall_at(2, 0.5), 0.0);
  EXPECT_EQ(r.recall_at(5, 0.5), 100.0);
}

struct RandomCase {
  std::vector<MomentPrediction> preds;
  std::vector<GroundTruth> truths;
};

RandomCase random_case(Rng& rng, std::size_t queries) {
  RandomCase c;
  for (std::size_t q = 0; q < queries; ++q) {
    const double a = rng.uniform() * 10, b = a + 0.1 + rng.uniform() * 10;
    c.truths.push_back({q, {a, b}});
    std::vector<Segment> segs;
    const int k = rng.range(1, 8);
    for (int s = 0; s < k; ++s) {
      const double x = rng.uniform() * 20, y = x + 0.05 + rng.uniform() * 10;
      segs.push_back({x, y, rng.uniform()});
    }
    c.preds.push_back(pred(q, segs));
  }
  return c;
}

// Brute force written independently: per query, per key, scan the first n
// segments and test IoU against mu.
TEST(EvaluateTest, MatchesBruteForce) {
  Rng rng(21);
  const auto c = random_case(rng, 100);
  const std::vector<int> ns = {1, 3, 5};
  const std::vector<double> mus = {0.3, 0.5, 0.7};
  const auto r = evaluate(c.preds, c.truths, ns, mus);
  for (int n : ns) {
    for (double mu : mus) {
      int hit = 0;
      for (std::size_t q = 0; q < c.truths.size(); ++q) {
        bool ok = false;
        for (std::size_t s = 0; s < c.preds[q].segments.size() && s < static_cast<std::size_t>(n); ++s) {
          const auto& seg = c.preds[q].segments[s];
          const auto& gt = c.truths[q].interval;
          const double inter = std::max(0.0, std::min(seg.end_s, gt.end) - std::max(seg.start_s, gt.start));
          const double uni = std::max(seg.end_s, gt.end) - std::min(seg.start_s, gt.start);
          if (inter / uni > mu) ok = true;
        }
        hit += ok;
      }
      EXPECT_NEAR(r.recall_at(n, mu), 100.0 * hit / 100.0, 1e-12);
    }
  }
  double miou = 0.0;
  for (std::size_t q = 0; q < c.truths.size(); ++q) {
    miou += temporal_iou(c.preds[q].segments[0].interval(), c.truths[q].interval);
  }
  EXPECT_NEAR(r.miou, miou, 1e-9);
}

TEST(EvaluateTest, RecallMonotoneInNAndMu) {
  Rng rng(22);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto c = random_case(rng, static_cast<std::size_t>(rng.range(1, 6)));
    const auto r = evaluate(c.preds, c.truths, {1, 5}, {0.5, 0.7});
    EXPECT_LE(r.recall_at(1, 0.5), r.recall_at(5, 0.5));
    EXPECT_LE(r.recall_at(1, 0.7), r.recall_at(5, 0.7));
    EXPECT_LE(r.recall_at(1, 0.7), r.recall_at(1, 0.5));
    EXPECT_LE(r.recall_at(5, 0.7), r.recall_at(5, 0.5));
  }
}

TEST(PredictionFileTest, JsonLinesRoundTrip) {
  Rng rng(23);
  const auto c = random_case(rng, 5);
  std::stringstream buf;
  write_predictions(buf, c.preds);
  EXPECT_EQ(read_predictions(buf), c.preds);
}

TEST(PredictionFileTest, MalformedLineReportsLine) {
  std::stringstream buf("{\"video_id\":\"a\",\"query_id\":0,\"segments\":[]}\n{\"video_id\":1}\n");
  try {
    read_predictions(buf);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(ReportTest, JsonAndTableCarryEveryMetric) {
  const auto r = evaluate({pred(0, {{0, 6, 0}})}, {{0, {0, 10}}});
  const auto j = to_json(r);
  EXPECT_DOUBLE_EQ(j.at("R@1,IoU=0.5").get<double>(), 100.0);
  EXPECT_DOUBLE_EQ(j.at("mIoU").get<double>(), 60.0);
  const std::string table = format_table(r);
  EXPECT_NE(table.find("R@5,IoU=0.7"), std::string::npos);
  EXPECT_NE(table.find("60.00"), std::string::npos);
}

}  // namespace
}  // namespace vdi
