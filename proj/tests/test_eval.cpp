#include <gtest/gtest.h>

#include <fstream>

#include "motarfuse/error.hpp"
#include "motarfuse/eval.hpp"
#include "ranking_oracle.hpp"
#include "support.hpp"

namespace motarfuse {
namespace {

using testing::random_frame;
using testing::ranking_oracle;
using testing::TempDir;
using testing::tiny_model;

FeatureRecord rec(std::vector<double> f, int id, int cam) { return FeatureRecord{std::move(f), id, cam}; }

TEST(CmcMap, PerfectRetrieval) {
  std::vector<FeatureRecord> q, g;
  for (int id = 0; id < 5; ++id) {
    std::vector<double> f(4, 0.0);
    f[static_cast<std::size_t>(id) % 4] = 1.0;
    f[3] += 0.3 * id;
    q.push_back(rec(f, id, 1));
    g.push_back(rec(f, id, 2));
  }
  const RankingResult r = cmc_map(q, g, 5);
  EXPECT_EQ(r.cmc[0], 1.0);
  EXPECT_EQ(r.map, 1.0);
}

TEST(CmcMap, SolePositiveAtRankTwo) {
  const std::vector<FeatureRecord> q{rec({1, 0}, 7, 1)};
  const std::vector<FeatureRecord> g{rec({1, 0.1}, 3, 2), rec({1, 0.5}, 7, 2), rec({-1, 0}, 4, 2)};
  const RankingResult r = cmc_map(q, g, 3);
  EXPECT_EQ(r.cmc, (std::vector<double>{0, 1, 1}));
  EXPECT_EQ(r.per_query_ap, (std::vector<double>{0.5}));
  EXPECT_EQ(r.map, 0.5);
}

TEST(CmcMap, SameCameraPositiveIsExcludedAndQuerySkipped) {
  const std::vector<FeatureRecord> q{rec({1, 0}, 7, 1), rec({0, 1}, 8, 1)};
  const std::vector<FeatureRecord> g{rec({1, 0}, 7, 1), rec({0, 1}, 8, 2), rec({1, 1}, 9, 2)};
  const RankingResult r = cmc_map(q, g, 2);
  EXPECT_EQ(r.skipped, 1u);
  EXPECT_EQ(r.evaluated, 1u);
  EXPECT_EQ(r.map, 1.0);
  EXPECT_THROW(cmc_map({q[0]}, g, 2), EvaluationError);
}

TEST(CmcMap, EmptyGalleryIsEvaluationError) {
  EXPECT_THROW(cmc_map({rec({1}, 1, 1)}, {}, 1), EvaluationError);
}

TEST(CmcMap, TiesFollowGalleryOrder) {
  const std::vector<FeatureRecord> q{rec({1, 0}, 1, 1)};
  const std::vector<FeatureRecord> first_neg{rec({0, 1}, 2, 2), rec({0, 1}, 1, 2)};
  const std::vector<FeatureRecord> first_pos{rec({0, 1}, 1, 2), rec({0, 1}, 2, 2)};
  EXPECT_EQ(cmc_map(q, first_neg, 1).cmc[0], 0.0);
  EXPECT_EQ(cmc_map(q, first_pos, 1).cmc[0], 1.0);
}

TEST(CmcMap, MatchesBruteForceOracle) {
  Rng rng(2024);
  int compared = 0, all_skipped = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto inst = testing::random_ranking_instance(rng);
    const auto oracle = ranking_oracle(inst.query, inst.gallery, inst.max_rank);
    if (!oracle) {
      EXPECT_THROW(cmc_map(inst.query, inst.gallery, inst.max_rank), EvaluationError);
      ++all_skipped;
      continue;
    }
    const RankingResult r = cmc_map(inst.query, inst.gallery, inst.max_rank);
    ASSERT_EQ(r.per_query_ap.size(), oracle->ap.size());
    EXPECT_EQ(r.skipped, oracle->skipped);
    for (std::size_t i = 0; i < r.per_query_ap.size(); ++i) EXPECT_NEAR(r.per_query_ap[i], oracle->ap[i], 1e-9);
    for (std::size_t k = 0; k < r.cmc.size(); ++k) EXPECT_NEAR(r.cmc[k], oracle->cmc[k], 1e-9);
    EXPECT_NEAR(r.map, oracle->map, 1e-9);
    ++compared;
  }
  EXPECT_GT(compared, 100);
  EXPECT_GT(all_skipped, 0);
}

TEST(CmcMap, InvariantProperties) {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    auto inst = testing::random_ranking_instance(rng);
    RankingResult r;
    try {
      r = cmc_map(inst.query, inst.gallery, inst.max_rank);
    } catch (const EvaluationError&) {
      continue;
    }
    for (std::size_t k = 0; k < r.cmc.size(); ++k) {
      EXPECT_GE(r.cmc[k], 0.0);
      EXPECT_LE(r.cmc[k], 1.0);
      if (k > 0) EXPECT_GE(r.cmc[k], r.cmc[k - 1]);
    }
    double mean = 0.0;
    for (double ap : r.per_query_ap) mean += ap / static_cast<double>(r.per_query_ap.size());
    EXPECT_NEAR(r.map, mean, 1e-12);
    // Every evaluated query has a positive somewhere, so the last rank of a
    // full-length curve is 1.
    const RankingResult full = cmc_map(inst.query, inst.gallery, inst.gallery.size());
    EXPECT_NEAR(full.cmc.back(), 1.0, 1e-12);

    const double s = rng.uniform(0.1, 10.0);
    for (auto* side : {&inst.query, &inst.gallery})
      for (auto& f : *side)
        for (double& v : f.feature) v *= s;
    const RankingResult scaled = cmc_map(inst.query, inst.gallery, inst.max_rank);
    for (std::size_t k = 0; k < r.cmc.size(); ++k) EXPECT_NEAR(scaled.cmc[k], r.cmc[k], 1e-12);
    EXPECT_NEAR(scaled.map, r.map, 1e-12);
  }
}

TEST(RankList, AgreesWithCmcPositions) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto inst = testing::random_ranking_instance(rng);
    for (const auto& q : inst.query) {
      const auto list = rank_list(q, inst.gallery, inst.gallery.size() + 5);
      std::size_t valid = 0;
      for (const auto& g : inst.gallery) valid += !(g.identity_id == q.identity_id && g.camera_id == q.camera_id);
      ASSERT_EQ(list.size(), valid);
      for (std::size_t i = 1; i < list.size(); ++i) {
        EXPECT_LE(list[i - 1].distance, list[i].distance);
        if (list[i - 1].distance == list[i].distance) EXPECT_LT(list[i - 1].index, list[i].index);
      }
      const auto hit = std::find_if(list.begin(), list.end(), [&](const RankedEntry& e) {
        return inst.gallery[e.index].identity_id == q.identity_id;
      });
      if (hit == list.end()) continue;
      const auto single = cmc_map({q}, inst.gallery, inst.gallery.size());
      const auto first = static_cast<std::size_t>(hit - list.begin());
      EXPECT_EQ(single.cmc[first], 1.0);
      if (first > 0) EXPECT_EQ(single.cmc[first - 1], 0.0);
    }
  }
}

TEST(RankList, TopOneOnPerfectSetupIsTrueMatch) {
  const std::vector<FeatureRecord> g{rec({0, 1}, 2, 2), rec({1, 0}, 1, 2), rec({-1, 0}, 3, 2)};
  const auto top = rank_list(rec({1, 0}, 1, 1), g, 1);
  ASSERT_EQ(top.size(), 1u);
  EXPECT_EQ(top[0].index, 1u);
  EXPECT_EQ(rank_list(rec({1, 0}, 1, 1), g, 10).size(), 3u);
}

TEST(ExtractFeatures, DeterministicAndBatchIndependent) {
  Network net(tiny_model(), 4, 9);
  Rng rng(3);
  std::vector<Sample> samples;
  for (int i = 0; i < 5; ++i) {
    Sample s;
    s.identity_id = i;
    s.camera_id = 1 + i % 2;
    const std::size_t frames = i % 2 ? 1 : 3;
    for (std::size_t f = 0; f < frames; ++f) s.frames.push_back(random_frame(16, 8, rng));
    samples.push_back(s);
  }
  samples.push_back(samples[0]);
  const auto one = extract_features(net, samples, 1);
  const auto batched = extract_features(net, samples, 4);
  ASSERT_EQ(one.size(), samples.size());
  for (std::size_t i = 0; i < one.size(); ++i) {
    EXPECT_EQ(one[i].feature, batched[i].feature) << i;
    EXPECT_EQ(one[i].feature.size(), net.config().d_model);
    EXPECT_EQ(one[i].identity_id, samples[i].identity_id);
    EXPECT_EQ(one[i].camera_id, samples[i].camera_id);
  }
  EXPECT_EQ(one.front().feature, one.back().feature);
}

TEST(ExtractFeatures, LongTracksAreSubsampled) {
  ModelConfig cfg = tiny_model();
  cfg.max_frames = 2;
  Network net(cfg, 2, 1);
  Rng rng(4);
  Sample s;
  for (int f = 0; f < 5; ++f) s.frames.push_back(random_frame(16, 8, rng));
  const auto r = extract_features(net, {s});
  EXPECT_EQ(r[0].feature, net.feature({s.frames[0], s.frames[2]}));
}

TEST(RankingOutput, CsvAndTable) {
  TempDir dir("ranking_csv");
  RankingResult r;
  r.cmc = {0.5, 1.0};
  r.map = 0.75;
  r.evaluated = 2;
  write_ranking_csv(dir / "r.csv", r);
  std::ifstream in(dir / "r.csv");
  std::string all((std::istreambuf_iterator<char>(in)), {});
  EXPECT_EQ(all, "rank,cmc\n1,0.5\n2,1\nmap,0.75\n");
  const std::string table = format_ranking_table(r);
  EXPECT_NE(table.find("mAP=0.7500"), std::string::npos) << table;
}

}  // namespace
}  // namespace motarfuse
