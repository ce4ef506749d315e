#include <gtest/gtest.h>

#include "support.hpp"

using namespace prodretrieve;
using testsupport::TempDir;

namespace {

struct Job {
  TempDir dir{"job"};
  EmbeddingSet queries, gallery;

  explicit Job(std::size_t n_queries = 20, std::uint64_t seed = 31) {
    SyntheticParams p;
    p.n_classes = n_queries / 2;
    p.queries_per_class = 2;
    p.gallery_per_class = 5;
    p.dim = 16;
    p.noise_sigma = 0.3;
    p.seed = seed;
    const SyntheticData d = gen_synthetic(p);
    queries = d.queries;
    gallery = d.gallery;
    save_embeddings(queries, dir / "q.emb");
    save_embeddings(gallery, dir / "g.emb");
  }

  fs::path manifest(std::size_t n_shards, const std::string& name = "job") const {
    const fs::path job_dir = dir / name;
    fs::create_directories(job_dir);
    JobManifest m;
    m.job_id = name;
    m.queries_path = "../q.emb";
    m.gallery_path = "../g.emb";
    m.params = {10, 3, 0.3};
    m.k = 10;
    m.shards = build_shard_manifest(queries.size(), n_shards, job_dir);
    m.created_at = "1970-01-01T00:00:00Z";
    save_job_manifest(m, job_dir / "manifest.json");
    return job_dir / "manifest.json";
  }

  std::vector<RankingList> in_process() const { return topk(kreciprocal_rerank(queries, gallery, {10, 3, 0.3}), 10); }
};

WorkerLauncher launcher(std::set<std::size_t> fail = {}) { return WorkerLauncher{PRODRETRIEVE_EXE, 1, std::move(fail)}; }

}  // namespace

TEST(Sharding, ModuloAssignment) {
  EXPECT_EQ(build_shard_manifest(10, 1).queries_of(0), (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}));
  const ShardManifest m = build_shard_manifest(10, 3);
  EXPECT_EQ(m.queries_of(0), (std::vector<std::size_t>{0, 3, 6, 9}));
  EXPECT_EQ(m.queries_of(1), (std::vector<std::size_t>{1, 4, 7}));
  EXPECT_EQ(m.queries_of(2), (std::vector<std::size_t>{2, 5, 8}));
  const ShardManifest big = build_shard_manifest(1000, 100);
  for (std::size_t s = 0; s < 100; ++s) EXPECT_EQ(big.queries_of(s).size(), 10u);
  EXPECT_THROW(build_shard_manifest(10, 0), Error);
}

TEST(Sharding, ChecksumCatchesEveryFlippedByte) {
  Job job(6);
  const std::string bytes = encode_shard_file(job.in_process());
  ASSERT_TRUE(decode_shard_file(bytes).has_value());
  const std::size_t payload_end = bytes.rfind("{\"checksum\"");
  for (std::size_t i = 0; i < payload_end; ++i) {
    std::string bad = bytes;
    bad[i] ^= 0x01;
    EXPECT_FALSE(decode_shard_file(bad).has_value()) << "byte " << i;
  }
}

TEST(Worker, SingleShardEqualsInProcessRerank) {
  Job job;
  const fs::path manifest = job.manifest(1);
  worker_run(manifest, 0);
  const std::string bytes = read_file(manifest.parent_path() / "shard_0.jsonl");
  EXPECT_EQ(bytes, encode_shard_file(job.in_process()));
  worker_run(manifest, 0);
  EXPECT_EQ(read_file(manifest.parent_path() / "shard_0.jsonl"), bytes);
}

TEST(Merge, ShardCountInvariance) {
  Job job;
  std::string reference;
  for (std::size_t n : {1u, 2u, 7u, 20u}) {
    const fs::path manifest = job.manifest(n, "job" + std::to_string(n));
    for (std::size_t s = 0; s < n; ++s) worker_run(manifest, s);
    const MergeResult r = merge_shard_results(load_job_manifest(manifest).shards, manifest.parent_path(), job.queries.ids());
    EXPECT_TRUE(r.missing.empty());
    const std::string bytes = encode_rankings(r.results);
    if (reference.empty()) reference = bytes;
    EXPECT_EQ(bytes, reference) << n << " shards";
  }
  EXPECT_EQ(reference, encode_rankings(job.in_process()));
}

TEST(Merge, DeletedShardIsReportedExactly) {
  Job job;
  const fs::path manifest = job.manifest(3);
  for (std::size_t s = 0; s < 3; ++s) worker_run(manifest, s);
  const auto full = job.in_process();
  fs::remove(manifest.parent_path() / "shard_1.jsonl");
  const MergeResult r = merge_shard_results(load_job_manifest(manifest).shards, manifest.parent_path(), job.queries.ids());
  std::vector<std::string> expect_missing;
  std::vector<RankingList> expect_present;
  for (std::size_t i = 0; i < full.size(); ++i) {
    (i % 3 == 1 ? expect_missing.push_back(full[i].query_id) : expect_present.push_back(full[i]));
  }
  EXPECT_EQ(r.missing.missing_queries, expect_missing);
  ASSERT_EQ(r.missing.reasons.size(), 1u);
  EXPECT_EQ(r.missing.reasons.at(1), MissingReason::Absent);
  EXPECT_EQ(r.results, expect_present);
}

TEST(Merge, CorruptShardReportedAsChecksum) {
  Job job;
  const fs::path manifest = job.manifest(2);
  for (std::size_t s = 0; s < 2; ++s) worker_run(manifest, s);
  const fs::path f = manifest.parent_path() / "shard_0.jsonl";
  std::string bytes = read_file(f);
  bytes[20] ^= 0x20;
  write_file_atomic(f, bytes);
  const MergeResult r = merge_shard_results(load_job_manifest(manifest).shards, manifest.parent_path(), job.queries.ids());
  EXPECT_EQ(r.missing.reasons.at(0), MissingReason::Checksum);
  EXPECT_EQ(r.missing.missing_queries.size(), 10u);
  EXPECT_EQ(r.results.size(), 10u);
}

TEST(Manifest, InvalidManifests) {
  Job job;
  const fs::path manifest = job.manifest(2);
  auto expect_invalid = [&](const std::string& text) {
    write_file_atomic(manifest, text);
    try {
      load_job_manifest(manifest);
      ADD_FAILURE() << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::ManifestInvalid);
    }
  };
  const std::string good = read_file(manifest);
  expect_invalid("{not json");
  expect_invalid("{}");
  std::string missing_input = good;
  missing_input.replace(missing_input.find("../q.emb"), 8, "../zz.emb");
  expect_invalid(missing_input);
  auto j = nlohmann::json::parse(good);
  j["params"]["k2"] = 99;
  expect_invalid(j.dump());
}

TEST(Coordinator, ParallelismDoesNotChangeResults) {
  Job job;
  const fs::path manifest = job.manifest(4);
  const auto baseline = job.in_process();
  for (std::size_t par : {1u, 2u, 4u}) {
    const MergeResult r = coordinator_run(manifest, par, FailPolicy::Strict, launcher(), nullptr);
    EXPECT_TRUE(r.missing.empty());
    EXPECT_EQ(encode_rankings(r.results), encode_rankings(baseline)) << "parallelism " << par;
  }
}

TEST(Coordinator, TolerateReportsFailedShard) {
  Job job;
  const fs::path manifest = job.manifest(4);
  const auto baseline = job.in_process();
  const MergeResult r = coordinator_run(manifest, 2, FailPolicy::Tolerate, launcher({2}), nullptr);
  std::vector<std::string> expect_missing;
  std::vector<RankingList> survivors;
  for (std::size_t i = 0; i < baseline.size(); ++i) {
    (i % 4 == 2 ? expect_missing.push_back(baseline[i].query_id) : survivors.push_back(baseline[i]));
  }
  EXPECT_EQ(r.missing.missing_queries, expect_missing);
  EXPECT_EQ(r.missing.reasons.at(2), MissingReason::Absent);
  EXPECT_EQ(r.results, survivors);
  EXPECT_FALSE(fs::exists(manifest.parent_path() / "shard_2.jsonl"));
}

TEST(Coordinator, StrictRaisesShardsMissing) {
  Job job;
  const fs::path manifest = job.manifest(4);
  try {
    coordinator_run(manifest, 2, FailPolicy::Strict, launcher({0}), nullptr);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShardsMissing);
  }
}

TEST(Coordinator, StaleShardFilesAreNotReused) {
  Job job;
  const fs::path manifest = job.manifest(2);
  coordinator_run(manifest, 1, FailPolicy::Strict, launcher(), nullptr);
  const MergeResult r = coordinator_run(manifest, 1, FailPolicy::Tolerate, launcher({1}), nullptr);
  EXPECT_EQ(r.missing.reasons.count(1), 1u);
}

TEST(WorkerProcess, KillDuringWriteLeavesNoFinalFile) {
  Job job;
  const fs::path manifest = job.manifest(3);
  const int status = testsupport::run_exe({"worker", "--manifest", manifest.string(), "--shard", "1", "--inject-kill"});
  EXPECT_EQ(status, 128 + SIGKILL);
  const fs::path dir = manifest.parent_path();
  EXPECT_FALSE(fs::exists(dir / "shard_1.jsonl"));
  EXPECT_TRUE(fs::exists(dir / "shard_1.jsonl.tmp"));
  worker_run(manifest, 0);
  worker_run(manifest, 2);
  const MergeResult r = merge_shard_results(load_job_manifest(manifest).shards, dir, job.queries.ids());
  ASSERT_EQ(r.missing.reasons.size(), 1u);
  EXPECT_EQ(r.missing.reasons.at(1), MissingReason::Absent);
}

TEST(WorkerProcess, InjectedFailExitsNonzero) {
  Job job;
  const fs::path manifest = job.manifest(2);
  EXPECT_NE(testsupport::run_exe({"worker", "--manifest", manifest.string(), "--shard", "0", "--inject-fail"}), 0);
  EXPECT_FALSE(fs::exists(manifest.parent_path() / "shard_0.jsonl"));
}
