#include <gtest/gtest.h>

#include "support.hpp"

using namespace prodretrieve;

namespace {

RankingList list_of(const std::string& q, const std::vector<std::string>& ids) {
  RankingList l{q, {}, 10, Orientation::Distance};
  for (std::size_t r = 0; r < ids.size(); ++r) l.entries.push_back({ids[r], float(r)});
  return l;
}

}  // namespace

TEST(Mar, PerfectRetrieval) {
  const GroundTruth gt(std::vector<GroundTruth::Entry>{{"q1", {"a", "b"}}, {"q2", {"c"}}});
  const auto r = mar_at_k({list_of("q1", {"b", "x", "a"}), list_of("q2", {"c"})}, gt, 10);
  EXPECT_EQ(r.mar_at_k, 1.0);
}

TEST(Mar, TwoOfThree) {
  const GroundTruth gt(std::vector<GroundTruth::Entry>{{"q", {"a", "b", "c"}}});
  const auto r = mar_at_k({list_of("q", {"a", "x", "c", "y"})}, gt, 10);
  EXPECT_NEAR(r.mar_at_k, 0.666667, 1e-6);
}

TEST(Mar, HandEnumeratedFiveQueries) {
  // k = 3. Intersections counted by hand:
  // q1 rel{a,b}       top3 (a,x,b)  -> 2/2
  // q2 rel{c,d,e,f}   top3 (c,d,y)  -> 2/min(4,3)=2/3
  // q3 rel{g}         top3 (x,y,z)  -> 0
  // q4 rel{h,i}       top3 (z,i,w)  -> 1/2; h at rank 4 is past k
  // q5 missing                      -> 0
  const GroundTruth gt(std::vector<GroundTruth::Entry>{{"q1", {"a", "b"}}, {"q2", {"c", "d", "e", "f"}}, {"q3", {"g"}}, {"q4", {"h", "i"}}, {"q5", {"a"}}});
  const std::vector<RankingList> lists{list_of("q1", {"a", "x", "b"}), list_of("q2", {"c", "d", "y"}),
                                       list_of("q3", {"x", "y", "z"}), list_of("q4", {"z", "i", "w", "h"})};
  const auto r = mar_at_k(lists, gt, 3);
  EXPECT_NEAR(r.mar_at_k, (1.0 + 2.0 / 3.0 + 0.0 + 0.5 + 0.0) / 5.0, 1e-12);
  EXPECT_EQ(r.n_missing, 1u);
  EXPECT_EQ(r.per_query[4].second, 0.0);
}

TEST(Mar, ClampedDenominator) {
  std::vector<std::string> rel, top;
  for (int i = 0; i < 30; ++i) rel.push_back("r" + std::to_string(i));
  for (int i = 0; i < 10; ++i) top.push_back("r" + std::to_string(i * 3));
  const auto r = mar_at_k({list_of("q", top)}, GroundTruth(std::vector<GroundTruth::Entry>{{"q", rel}}), 10);
  EXPECT_EQ(r.mar_at_k, 1.0);
}

TEST(Mar, MonotoneAndPermutationInvariant) {
  const GroundTruth gt(std::vector<GroundTruth::Entry>{{"q1", {"a", "b", "c"}}, {"q2", {"d"}}});
  const auto base = mar_at_k({list_of("q1", {"a", "x", "y"}), list_of("q2", {"z"})}, gt, 3);
  const auto more = mar_at_k({list_of("q1", {"a", "b", "y"}), list_of("q2", {"z"})}, gt, 3);
  EXPECT_GE(more.mar_at_k, base.mar_at_k);
  const auto swapped = mar_at_k({list_of("q2", {"z"}), list_of("q1", {"a", "x", "y"})}, gt, 3);
  EXPECT_EQ(swapped.mar_at_k, base.mar_at_k);
}

TEST(Mar, UnknownGalleryId) {
  const std::vector<std::string> gallery{"a", "b"};
  try {
    mar_at_k({list_of("q", {"a", "zz"})}, GroundTruth(std::vector<GroundTruth::Entry>{{"q", {"a"}}}), 10, &gallery);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnknownGalleryId);
  }
}

TEST(Synthetic, ZeroNoiseIsPerfect) {
  SyntheticParams p;
  p.noise_sigma = 0.0;
  p.n_classes = 50;
  const SyntheticData d = gen_synthetic(p);
  const auto lists = search_topk(d.queries, d.gallery, 10);
  EXPECT_EQ(mar_at_k(lists, d.gt, 10).mar_at_k, 1.0);
}

TEST(Synthetic, SameSeedSameBytes) {
  SyntheticParams p;
  p.n_classes = 20;
  const SyntheticData a = gen_synthetic(p), b = gen_synthetic(p);
  EXPECT_EQ(encode_embeddings(a.gallery), encode_embeddings(b.gallery));
  EXPECT_EQ(encode_embeddings(a.queries), encode_embeddings(b.queries));
  EXPECT_EQ(encode_ground_truth(a.gt), encode_ground_truth(b.gt));
  p.seed = 8;
  EXPECT_NE(encode_embeddings(gen_synthetic(p).gallery), encode_embeddings(a.gallery));
}

TEST(Synthetic, ShapesAndIds) {
  SyntheticParams p;
  p.n_classes = 3;
  p.gallery_per_class = 4;
  p.queries_per_class = 2;
  p.dim = 5;
  const SyntheticData d = gen_synthetic(p);
  EXPECT_EQ(d.gallery.size(), 12u);
  EXPECT_EQ(d.queries.size(), 6u);
  EXPECT_EQ(d.gallery.id(5), "c000001_g0001");
  EXPECT_EQ(d.queries.id(5), "c000002_q0001");
  EXPECT_EQ(d.gt.relevant("c000002_q0001")->size(), 4u);
  p.dim = 1;
  EXPECT_THROW(gen_synthetic(p), Error);
}
