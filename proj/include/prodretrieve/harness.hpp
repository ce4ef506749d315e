#pragma once

#include <fcntl.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <csignal>
#include <cstddef>
#include <cerrno>
#include <deque>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "prodretrieve/embed_store.hpp"
#include "prodretrieve/error.hpp"
#include "prodretrieve/fileio.hpp"
#include "prodretrieve/rerank.hpp"
#include "prodretrieve/sharding.hpp"

extern char** environ;

namespace prodretrieve {

/// Description of one sharded re-ranking job; lives at <job_dir>/manifest.json.
/// Input paths are stored as given and resolved against job_dir when relative.
struct JobManifest {
  std::string job_id;
  std::string stage = "rerank";
  std::string queries_path;
  std::string gallery_path;
  RerankParams params;
  std::size_t k = 10;  // depth of the ranking lists written per query
  ShardManifest shards;
  std::string created_at;
};

inline ojson to_json(const JobManifest& m) {
  return {{"job_id", m.job_id},
          {"stage", m.stage},
          {"inputs", {{"queries", m.queries_path}, {"gallery", m.gallery_path}}},
          {"params", {{"k1", m.params.k1}, {"k2", m.params.k2}, {"lambda", m.params.lambda}, {"k", m.k}}},
          {"shards", to_json(m.shards)},
          {"created_at", m.created_at}};
}

inline fs::path resolve_input(const fs::path& job_dir, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : job_dir / path;
}

/// Parses and validates a job manifest. Every failure is ManifestInvalid.
inline JobManifest load_job_manifest(const fs::path& manifest_path) {
  JobManifest m;
  try {
    const auto j = nlohmann::json::parse(read_file(manifest_path));
    m.job_id = j.at("job_id").get<std::string>();
    m.stage = j.value("stage", std::string("rerank"));
    m.queries_path = j.at("inputs").at("queries").get<std::string>();
    m.gallery_path = j.at("inputs").at("gallery").get<std::string>();
    const auto& p = j.at("params");
    m.params.k1 = p.value("k1", 20);
    m.params.k2 = p.value("k2", 6);
    m.params.lambda = p.value("lambda", 0.3);
    m.k = p.value("k", std::size_t{10});
    m.shards = shard_manifest_from_json(j.at("shards"));
    m.created_at = j.value("created_at", std::string{});
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ManifestInvalid, manifest_path.string() + ": " + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ManifestInvalid) throw;
    throw Error(ErrorCode::ManifestInvalid, e.what());
  }
  if (m.stage != "rerank") throw Error(ErrorCode::ManifestInvalid, "unsupported stage '" + m.stage + "'");
  if (m.k == 0) throw Error(ErrorCode::ManifestInvalid, "k must be >= 1");
  try {
    m.params.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::ManifestInvalid, e.what());
  }
  const fs::path job_dir = manifest_path.parent_path();
  for (const auto& in : {m.queries_path, m.gallery_path}) {
    std::error_code ec;
    if (!fs::is_regular_file(resolve_input(job_dir, in), ec)) {
      throw Error(ErrorCode::ManifestInvalid, "input '" + in + "' does not exist");
    }
  }
  return m;
}

inline void save_job_manifest(const JobManifest& m, const fs::path& manifest_path) {
  write_file_atomic(manifest_path, to_json(m).dump(2) + "\n");
}

/// Fault injection for failure tests. Fail writes half of the result to the
/// temp name and throws; Kill does the same and then SIGKILLs the process.
enum class WorkerFault { None, Fail, Kill };

/// Computes one shard's ranking lists in memory. Neighbor structures cover the
/// full probe set, identically in every shard.
inline std::vector<RankingList> compute_shard(const JobManifest& m, const fs::path& job_dir, std::size_t shard,
                                              unsigned threads = 1) {
  const EmbeddingSet queries = load_embeddings(resolve_input(job_dir, m.queries_path));
  const EmbeddingSet gallery = load_embeddings(resolve_input(job_dir, m.gallery_path));
  if (queries.size() != m.shards.n_queries) {
    throw Error(ErrorCode::ManifestInvalid, "query file has " + std::to_string(queries.size()) +
                                                " rows, manifest declares " + std::to_string(m.shards.n_queries));
  }
  const KReciprocalIndex index(queries, gallery, m.params, threads);
  const auto rows = m.shards.queries_of(shard);
  return topk(index.rerank_rows(rows, threads), m.k);
}

inline void worker_run(const fs::path& manifest_path, std::size_t shard, unsigned threads = 1,
                       WorkerFault fault = WorkerFault::None) {
  const JobManifest m = load_job_manifest(manifest_path);
  if (shard >= m.shards.n_shards) {
    throw Error(ErrorCode::ManifestInvalid, "shard " + std::to_string(shard) + " out of range");
  }
  const fs::path job_dir = manifest_path.parent_path();
  const fs::path out = job_dir / m.shards.result_files[shard];
  const std::string bytes = encode_shard_file(compute_shard(m, job_dir, shard, threads));
  if (fault != WorkerFault::None) {
    fs::path tmp = out;
    tmp += ".tmp";
    std::ofstream partial(tmp, std::ios::binary | std::ios::trunc);
    partial.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    partial.flush();
    if (fault == WorkerFault::Kill) std::raise(SIGKILL);
    throw Error(ErrorCode::IoFailure, "injected failure in shard " + std::to_string(shard));
  }
  write_file_atomic(out, bytes);
}

enum class FailPolicy { Tolerate, Strict };

/// How the coordinator starts a worker process:
/// <executable> [--threads N] worker --manifest <path> --shard <i> [--inject-fail]
struct WorkerLauncher {
  fs::path executable;
  unsigned threads_per_worker = 1;
  std::set<std::size_t> inject_fail;  // shards started with --inject-fail
};

namespace detail {

inline pid_t spawn_worker(const WorkerLauncher& launcher, const fs::path& manifest_path, std::size_t shard) {
  std::vector<std::string> args{launcher.executable.string(), "--threads", std::to_string(launcher.threads_per_worker),
                                "worker", "--manifest", manifest_path.string(), "--shard", std::to_string(shard)};
  if (launcher.inject_fail.count(shard)) args.emplace_back("--inject-fail");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);
  // Worker status lines would interleave with the coordinator's own stdout.
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_addopen(&actions, STDOUT_FILENO, "/dev/null", O_WRONLY, 0);
  pid_t pid = 0;
  const int rc = posix_spawn(&pid, launcher.executable.c_str(), &actions, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  if (rc != 0) throw Error(ErrorCode::IoFailure, "cannot spawn " + launcher.executable.string());
  return pid;
}

inline int wait_exit_status(pid_t pid) {
  int status = 0;
  while (waitpid(pid, &status, 0) < 0) {
    if (errno != EINTR) return -1;
  }
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  return 128 + (WIFSIGNALED(status) ? WTERMSIG(status) : 0);
}

}  // namespace detail

/// Runs every shard as an independent worker process, at most `parallelism`
/// at a time, then merges. Stale shard files are removed first so results
/// only ever come from this run.
inline MergeResult coordinator_run(const fs::path& manifest_path, std::size_t parallelism, FailPolicy policy,
                                   const WorkerLauncher& launcher, std::ostream* log = &std::cerr) {
  const JobManifest m = load_job_manifest(manifest_path);
  const fs::path job_dir = manifest_path.parent_path();
  if (parallelism == 0) parallelism = 1;
  for (const auto& f : m.shards.result_files) {
    std::error_code ec;
    fs::remove(job_dir / f, ec);
    fs::remove(job_dir / (f + ".tmp"), ec);
  }
  std::deque<std::pair<std::size_t, pid_t>> running;
  auto reap_one = [&] {
    const auto [shard, pid] = running.front();
    running.pop_front();
    const int status = detail::wait_exit_status(pid);
    if (status != 0 && log) *log << "worker for shard " << shard << " exited with status " << status << "\n";
  };
  for (std::size_t s = 0; s < m.shards.n_shards; ++s) {
    while (running.size() >= parallelism) reap_one();
    running.emplace_back(s, detail::spawn_worker(launcher, manifest_path, s));
  }
  while (!running.empty()) reap_one();

  const EmbeddingSet queries = load_embeddings(resolve_input(job_dir, m.queries_path));
  MergeResult merged = merge_shard_results(m.shards, job_dir, queries.ids());
  if (policy == FailPolicy::Strict && !merged.missing.empty()) {
    throw Error(ErrorCode::ShardsMissing, std::to_string(merged.missing.reasons.size()) + " shard(s) missing, " +
                                              std::to_string(merged.missing.missing_queries.size()) + " queries");
  }
  return merged;
}

}  // namespace prodretrieve
