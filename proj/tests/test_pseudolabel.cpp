#include <gtest/gtest.h>

#include "oracles.hpp"
#include "support.hpp"

using namespace prodretrieve;

namespace {

std::vector<std::string> ids_of(const ClusterResult& r) {
  std::vector<std::string> all = r.pool;
  for (const auto& c : r.clusters) all.insert(all.end(), c.begin(), c.end());
  std::sort(all.begin(), all.end());
  return all;
}

ClusterResult fixture(const std::vector<std::size_t>& sizes, std::size_t pool) {
  ClusterResult r;
  std::size_t next = 0;
  auto id = [&] {
    char buf[16];
    std::snprintf(buf, sizeof buf, "i%08zu", next++);
    return std::string(buf);
  };
  for (std::size_t s : sizes) {
    std::vector<std::string> c;
    for (std::size_t i = 0; i < s; ++i) c.push_back(id());
    r.clusters.push_back(std::move(c));
  }
  for (std::size_t i = 0; i < pool; ++i) r.pool.push_back(id());
  return r;
}

EmbeddingSet tight_groups(std::mt19937_64& rng, std::size_t groups, std::size_t per_group, std::size_t noise) {
  std::normal_distribution<double> nd(0.0, 1.0);
  const std::size_t dim = 32;
  std::vector<float> v;
  std::vector<std::string> ids;
  for (std::size_t g = 0; g < groups + noise; ++g) {
    std::vector<double> c(dim);
    for (auto& x : c) x = nd(rng);
    const std::size_t n = g < groups ? per_group : 1;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t d = 0; d < dim; ++d) v.push_back(float(c[d] + 0.05 * nd(rng)));
      ids.push_back("g" + std::to_string(g) + "_" + std::to_string(i));
    }
  }
  return l2_normalize(EmbeddingSet(ids, dim, v));
}

std::set<std::set<std::string>> as_sets(const ClusterResult& r) {
  std::set<std::set<std::string>> out;
  for (const auto& c : r.clusters) out.insert(std::set<std::string>(c.begin(), c.end()));
  return out;
}

}  // namespace

TEST(Cluster, OrthogonalVectorsNeverCluster) {
  const EmbeddingSet s({"a", "b", "c"}, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const ClusterResult r = cluster_features(s, 0.99);
  EXPECT_TRUE(r.clusters.empty());
  EXPECT_EQ(r.pool.size(), 3u);
}

TEST(Cluster, TwoIdenticalPlusOneOrthogonal) {
  const EmbeddingSet s({"a", "b", "c"}, 2, {1, 0, 1, 0, 0, 1});
  const ClusterResult r = cluster_features(s, 0.9);
  ASSERT_EQ(r.clusters.size(), 1u);
  EXPECT_EQ(r.clusters[0], (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(r.pool, (std::vector<std::string>{"c"}));
}

TEST(Cluster, MatchesAllPairsOracle) {
  std::mt19937_64 rng(51);
  const EmbeddingSet s = tight_groups(rng, 10, 5, 0);
  const ClusterResult r = cluster_features(s, 0.8, 3);
  EXPECT_EQ(as_sets(r), oracle::components(s, 0.8));
  EXPECT_EQ(ids_of(r), [&] {
    auto v = s.ids();
    std::sort(v.begin(), v.end());
    return v;
  }());
}

TEST(Cluster, RaisingThresholdNeverMerges) {
  std::mt19937_64 rng(52);
  const EmbeddingSet s = tight_groups(rng, 6, 4, 10);
  std::map<std::string, std::size_t> prev;
  for (double t : {0.1, 0.3, 0.5, 0.7, 0.9, 0.99}) {
    const ClusterResult r = cluster_features(s, t);
    std::map<std::string, std::size_t> comp;
    for (std::size_t c = 0; c < r.clusters.size(); ++c) {
      for (const auto& id : r.clusters[c]) comp[id] = c;
    }
    // Items together now were together at every lower threshold.
    for (const auto& c : r.clusters) {
      for (const auto& id : c) {
        if (!prev.empty()) EXPECT_EQ(prev.at(id), prev.at(c.front()));
      }
    }
    prev = comp;
    for (const auto& id : r.pool) prev.erase(id);
    if (prev.empty()) break;
  }
}

TEST(Cluster, ThresholdMustBeOpenInterval) {
  const EmbeddingSet s({"a"}, 2, {1, 0});
  EXPECT_THROW(cluster_features(s, 0.0), Error);
  EXPECT_THROW(cluster_features(s, 1.0), Error);
}

TEST(Filter, BoundaryAndMixedSizes) {
  const ClusterResult small = fixture({2, 2, 2}, 4);
  EXPECT_EQ(filter_confident(small), small);
  const ClusterResult ten = filter_confident(fixture({10}, 0));
  EXPECT_TRUE(ten.clusters.empty());
  EXPECT_EQ(ten.pool.size(), 10u);
  const ClusterResult mixed = fixture({3, 9, 10, 40}, 7);
  const ClusterResult kept = filter_confident(mixed);
  ASSERT_EQ(kept.clusters.size(), 2u);
  EXPECT_EQ(kept.clusters[0].size(), 3u);
  EXPECT_EQ(kept.clusters[1].size(), 9u);
  EXPECT_EQ(kept.pool.size(), mixed.pool.size() + 50);
  EXPECT_EQ(ids_of(kept), ids_of(mixed));
  EXPECT_EQ(filter_confident(kept), kept);
}

TEST(Assign, SmallExampleIsSeededAndCounted) {
  const ClusterResult kept = fixture({2, 2, 3}, 10);
  const PseudoLabelAssignment a = assign_pseudo_labels(kept, 5, 99);
  EXPECT_EQ(a.n_singleton_classes, 2u);
  EXPECT_EQ(a.n_images, 9u);
  EXPECT_EQ(a.n_classes, 5u);
  EXPECT_EQ(a, assign_pseudo_labels(kept, 5, 99));
  std::map<std::size_t, std::size_t> per_class;
  for (const auto& [id, c] : a.class_of) ++per_class[c];
  EXPECT_EQ(per_class.size(), 5u);
  EXPECT_EQ(per_class[3], 1u);
  EXPECT_EQ(per_class[4], 1u);
  EXPECT_NE(a.class_of[7].first, a.class_of[8].first);
}

TEST(Assign, TargetEqualToClusterCount) {
  const ClusterResult kept = fixture({2, 4}, 3);
  const PseudoLabelAssignment a = assign_pseudo_labels(kept, 2, 1);
  EXPECT_EQ(a.n_singleton_classes, 0u);
  EXPECT_EQ(a.n_images, 6u);
}

TEST(Assign, Errors) {
  const ClusterResult kept = fixture({2, 2, 3}, 1);
  try {
    assign_pseudo_labels(kept, 2, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TargetBelowClusterCount);
  }
  try {
    assign_pseudo_labels(kept, 5, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::PoolTooSmall);
  }
}

TEST(Assign, ArithmeticLawOnRandomFixtures) {
  std::mt19937_64 rng(53);
  for (int t = 0; t < 100; ++t) {
    std::vector<std::size_t> sizes(rng() % 30);
    std::size_t total = 0;
    for (auto& s : sizes) total += (s = 2 + rng() % 8);
    const ClusterResult kept = fixture(sizes, rng() % 50);
    const std::size_t target = sizes.size() + rng() % (kept.pool.size() + 1);
    const PseudoLabelAssignment a = assign_pseudo_labels(kept, target, rng());
    EXPECT_EQ(a.n_classes, a.n_cluster_classes + a.n_singleton_classes);
    EXPECT_EQ(a.n_images, total + a.n_singleton_classes);
    EXPECT_EQ(a.class_of.size(), a.n_images);
  }
}

TEST(PseudoLabelIo, ClusterDumpRoundTrip) {
  const ClusterResult r = fixture({2, 3}, 4);
  EXPECT_EQ(cluster_result_from_json(nlohmann::json::parse(to_json(r).dump())), r);
}
