#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <vector>

#include "kws/detect.hpp"

namespace {

using namespace kws;

Candidate cand(std::string kw, double score, double on, double off, double source = 0.8) {
  Candidate c;
  c.keyword = std::move(kw);
  c.score = score;
  c.onset_s = on;
  c.offset_s = off;
  c.source_duration_s = source;
  return c;
}

TEST(Detect, TwoCandidateFixture) {
  const auto kept = resolve_candidates({cand("a", 0.9, 1.0, 2.0), cand("b", 0.5, 1.5, 2.5, 0.8)}, Thresholds::uniform(0.0));
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].keyword, "a");
  EXPECT_DOUBLE_EQ(kept[0].onset_s, 1.0);
  EXPECT_DOUBLE_EQ(kept[0].offset_s, 2.0);
  EXPECT_EQ(kept[1].keyword, "b");
  EXPECT_DOUBLE_EQ(kept[1].onset_s, 2.0);
  EXPECT_DOUBLE_EQ(kept[1].offset_s, 2.5);
  EXPECT_DOUBLE_EQ(kept[1].score, 0.5);

  // Half of a 1.2 s training sample is 0.6 s > 0.5 s.
  const auto dropped =
      resolve_candidates({cand("a", 0.9, 1.0, 2.0), cand("b", 0.5, 1.5, 2.5, 1.2)}, Thresholds::uniform(0.0));
  ASSERT_EQ(dropped.size(), 1u);
  EXPECT_EQ(dropped[0].keyword, "a");
}

TEST(Detect, ShortDetectionDiscarded) {
  EXPECT_TRUE(resolve_candidates({cand("a", 0.9, 1.0, 1.3, 0.8)}, Thresholds::uniform(0.0)).empty());
  EXPECT_EQ(resolve_candidates({cand("a", 0.9, 1.0, 1.4, 0.8)}, Thresholds::uniform(0.0)).size(), 1u);
}

TEST(Detect, SplitCandidateIsDropped) {
  const auto kept =
      resolve_candidates({cand("a", 0.9, 1.4, 1.6, 0.2), cand("b", 0.5, 1.0, 2.0, 0.2)}, Thresholds::uniform(0.0));
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].keyword, "a");
}

TEST(Detect, NothingAboveThreshold) {
  EXPECT_TRUE(resolve_candidates({cand("a", -0.3, 1.0, 2.0)}, Thresholds::uniform(-0.2)).empty());
  // Strictly greater than the threshold.
  EXPECT_TRUE(resolve_candidates({cand("a", -0.2, 1.0, 2.0)}, Thresholds::uniform(-0.2)).empty());
}

TEST(Detect, PerKeywordThresholds) {
  Thresholds t;
  t.per_keyword = {{"a", -0.1}, {"b", -0.5}};
  const auto kept = resolve_candidates({cand("a", -0.2, 0.0, 1.0), cand("b", -0.3, 2.0, 3.0)}, t);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].keyword, "b");
}

TEST(Detect, MissingThresholdIsConfigError) {
  Thresholds t;
  t.per_keyword = {{"a", 0.0}};
  EXPECT_THROW(resolve_candidates({cand("b", 0.9, 1.0, 2.0)}, t), ConfigError);
  Template templ;
  templ.frames = Matrix::Ones(2, 3);
  templ.keyword = "c";
  EXPECT_THROW(detect({templ}, templ, t), ConfigError);
}

TEST(Detect, TiesResolveByOnsetThenKeyword) {
  const auto kept = resolve_candidates({cand("b", 0.5, 1.0, 2.0, 0.2), cand("a", 0.5, 1.0, 2.0, 0.2),
                                        cand("c", 0.5, 0.5, 1.5, 0.2)},
                                       Thresholds::uniform(0.0));
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_EQ(kept[0].keyword, "c");
  EXPECT_EQ(kept[1].keyword, "a");
  EXPECT_DOUBLE_EQ(kept[1].onset_s, 1.5);
}

std::vector<Candidate> random_candidates(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> on(0.0, 20.0), len(0.05, 1.5), score(-1.0, 0.0), src(0.1, 1.0);
  const char* names[] = {"a", "b", "c"};
  std::vector<Candidate> out;
  for (int i = 0; i < n; ++i) {
    const double o = on(rng);
    out.push_back(cand(names[i % 3], score(rng), o, o + len(rng), src(rng)));
    out.back().template_index = static_cast<std::size_t>(i);
  }
  return out;
}

TEST(Detect, ExclusivityAndScorePreservation) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const auto cands = random_candidates(rng, 60);
    const auto kept = resolve_candidates(cands, Thresholds::uniform(-0.7));
    for (std::size_t i = 0; i < kept.size(); ++i) {
      EXPECT_LT(kept[i].onset_s, kept[i].offset_s);
      if (i + 1 < kept.size()) EXPECT_LE(kept[i].offset_s, kept[i + 1].onset_s + 1e-9);
      const bool from_input = std::any_of(cands.begin(), cands.end(), [&](const Candidate& c) {
        return c.score == kept[i].score && c.keyword == kept[i].keyword && c.onset_s <= kept[i].onset_s &&
               kept[i].offset_s <= c.offset_s;
      });
      EXPECT_TRUE(from_input);
    }
  }
}

TEST(Detect, RaisingThresholdNeverAddsDetections) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto cands = random_candidates(rng, 80);
    std::size_t prev = std::numeric_limits<std::size_t>::max();
    for (double t = -1.05; t <= 0.0; t += 0.05) {
      const std::size_t n = resolve_candidates(cands, Thresholds::uniform(t)).size();
      EXPECT_LE(n, prev) << "threshold " << t;
      prev = n;
    }
  }
}

TEST(Detect, FindsPlantedTemplate) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0.0, 1.0);
  Template templ;
  templ.keyword = "kw";
  templ.frames.resize(20, 8);
  for (Eigen::Index k = 0; k < templ.frames.size(); ++k) templ.frames.data()[k] = n(rng);
  templ.source_duration_s = 20 * templ.frame_hop_s;
  Template query;
  query.frames.resize(200, 8);
  for (Eigen::Index k = 0; k < query.frames.size(); ++k) query.frames.data()[k] = n(rng);
  query.frames.middleRows(90, 20) = templ.frames;
  query.source_duration_s = 200 * query.frame_hop_s;

  const auto cands = extract_candidates(templ, query);
  for (std::size_t i = 1; i < cands.size(); ++i) EXPECT_NE(cands[i].start_col, cands[i - 1].start_col);
  const auto dets = detect({templ}, query, Thresholds::uniform(-0.05));
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_NEAR(dets[0].score, 0.0, 1e-12);
  EXPECT_NEAR(dets[0].onset_s, 89.5 * query.frame_hop_s, 1e-9);
  EXPECT_NEAR(dets[0].offset_s, 109.5 * query.frame_hop_s, 1e-9);
}

}  // namespace
