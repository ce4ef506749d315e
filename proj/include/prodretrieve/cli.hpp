#pragma once

#include <unistd.h>

#include <chrono>
#include <ctime>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "prodretrieve/prodretrieve.hpp"

namespace prodretrieve::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kConfigError = 3 };

struct Context {
  /// Binary started for `worker` processes by `coordinate`.
  fs::path self_exe;
  std::ostream* out = &std::cout;
  std::ostream* err = &std::cerr;
};

inline fs::path current_executable() {
  std::error_code ec;
  auto p = fs::read_symlink("/proc/self/exe", ec);
  return ec ? fs::path("prodretrieve") : p;
}

inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ManifestInvalid:
    case ErrorCode::ConfigInvalid:
      return kConfigError;
    default:
      return kDataError;
  }
}

int run(const std::vector<std::string>& args, const Context& ctx);

namespace detail {

inline std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

inline ojson status(const std::vector<std::string>& outputs, ojson extra = ojson::object()) {
  ojson j{{"ok", true}, {"outputs", outputs}};
  for (auto& [k, v] : extra.items()) j[k] = v;
  return j;
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

/// Option names whose values are input files or directories.
inline const std::set<std::string>& path_input_flags() {
  static const std::set<std::string> flags{"in",   "queries", "gallery", "matrix", "map",     "lists",
                                           "gt",   "spec",    "manifest", "config", "sidecar"};
  return flags;
}

struct Step {
  std::string name;
  std::string run;
  std::vector<std::pair<std::string, nlohmann::json>> args;
  std::vector<std::pair<std::string, std::string>> outputs;  // flag -> relative path
};

struct PipelineConfig {
  fs::path base_dir;
  fs::path work_dir;
  std::vector<Step> steps;
};

inline PipelineConfig load_pipeline_config(const fs::path& path, const std::optional<fs::path>& work_dir_override) {
  PipelineConfig cfg;
  cfg.base_dir = fs::absolute(path).parent_path();
  try {
    const auto j = ojson::parse(read_file(path));
    cfg.work_dir = work_dir_override ? *work_dir_override : fs::path(j.value("work_dir", std::string("work")));
    if (cfg.work_dir.is_relative()) cfg.work_dir = (work_dir_override ? fs::absolute(cfg.work_dir) : cfg.base_dir / cfg.work_dir);
    std::set<std::string> names;
    const ojson steps = j.value("steps", ojson::array());
    for (const auto& s : steps) {
      Step step;
      step.name = s.at("name").get<std::string>();
      step.run = s.at("run").get<std::string>();
      if (!names.insert(step.name).second) throw Error(ErrorCode::ConfigInvalid, "duplicate step name '" + step.name + "'");
      if (step.run == "pipeline") throw Error(ErrorCode::ConfigInvalid, "step '" + step.name + "' nests a pipeline");
      const ojson args = s.value("args", ojson::object());
      const ojson outputs = s.value("outputs", ojson::object());
      for (const auto& [k, v] : args.items()) step.args.emplace_back(k, nlohmann::json::parse(v.dump()));
      for (const auto& [k, v] : outputs.items()) step.outputs.emplace_back(k, v.get<std::string>());
      cfg.steps.push_back(std::move(step));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, path.string() + ": " + e.what());
  }
  return cfg;
}

inline fs::path step_output_path(const PipelineConfig& cfg, const Step& step, const std::string& rel) {
  return cfg.work_dir / step.name / rel;
}

/// "@step.flag" or "@step.flag/sub/path" -> file under that step's output.
/// Only steps listed before `current` may be referenced.
inline fs::path resolve_reference(const PipelineConfig& cfg, std::size_t current, const std::string& ref) {
  const std::string body = ref.substr(1);
  const auto slash = body.find('/');
  const std::string head = body.substr(0, slash);
  const std::string tail = slash == std::string::npos ? "" : body.substr(slash + 1);
  const auto dot = head.find('.');
  if (dot == std::string::npos) throw Error(ErrorCode::ConfigInvalid, "malformed reference '" + ref + "'");
  const std::string step_name = head.substr(0, dot), flag = head.substr(dot + 1);
  for (std::size_t i = 0; i < current; ++i) {
    const Step& s = cfg.steps[i];
    if (s.name != step_name) continue;
    for (const auto& [f, rel] : s.outputs) {
      if (f == flag) return tail.empty() ? step_output_path(cfg, s, rel) : step_output_path(cfg, s, rel) / tail;
    }
    break;
  }
  throw Error(ErrorCode::ConfigInvalid, "step '" + cfg.steps[current].name + "' has dangling reference '" + ref +
                                            "' (no earlier step output of that name)");
}

inline std::string arg_scalar(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number_unsigned()) return std::to_string(v.get<unsigned long long>());
  return v.dump();
}

/// Validates every step and builds its argument vector (without argv[0]).
inline std::vector<std::vector<std::string>> plan_pipeline(const PipelineConfig& cfg) {
  std::vector<std::vector<std::string>> plans;
  for (std::size_t i = 0; i < cfg.steps.size(); ++i) {
    const Step& step = cfg.steps[i];
    std::vector<std::string> argv{step.run};
    auto add_value = [&](const std::string& flag, const nlohmann::json& v) {
      if (v.is_boolean()) {
        if (v.get<bool>()) argv.push_back("--" + flag);
        return;
      }
      std::string value = arg_scalar(v);
      if (!value.empty() && value.front() == '@') {
        value = resolve_reference(cfg, i, value).string();
      } else if (path_input_flags().count(flag)) {
        fs::path p(value);
        if (p.is_relative()) p = cfg.base_dir / p;
        std::error_code ec;
        if (!fs::exists(p, ec)) {
          throw Error(ErrorCode::ConfigInvalid, "step '" + step.name + "' input '" + value + "' does not exist");
        }
        value = p.string();
      }
      argv.push_back("--" + flag);
      argv.push_back(value);
    };
    for (const auto& [flag, v] : step.args) {
      if (v.is_array()) {
        for (const auto& item : v) add_value(flag, item);
      } else {
        add_value(flag, v);
      }
    }
    for (const auto& [flag, rel] : step.outputs) {
      argv.push_back("--" + flag);
      argv.push_back(step_output_path(cfg, step, rel).string());
    }
    plans.push_back(std::move(argv));
  }
  return plans;
}

/// sha256 of a file, or of the sorted (name, sha256) list of a directory tree.
inline std::string output_digest(const fs::path& p) {
  std::error_code ec;
  if (fs::is_regular_file(p, ec)) return sha256_hex(read_file(p));
  if (!fs::is_directory(p, ec)) return {};
  std::vector<std::pair<std::string, std::string>> files;
  for (const auto& e : fs::recursive_directory_iterator(p)) {
    if (e.is_regular_file()) files.emplace_back(fs::relative(e.path(), p).generic_string(), sha256_hex(read_file(e.path())));
  }
  std::sort(files.begin(), files.end());
  std::string acc;
  for (const auto& [name, digest] : files) acc += name + '\0' + digest + '\n';
  return sha256_hex(acc);
}

inline int run_pipeline(const fs::path& config_path, const std::optional<fs::path>& work_dir, bool resume,
                        unsigned threads, const Context& ctx) {
  const PipelineConfig cfg = load_pipeline_config(config_path, work_dir);
  const auto plans = plan_pipeline(cfg);
  if (plans.empty()) {
    *ctx.out << status({}, {{"steps_run", 0}, {"steps_skipped", 0}}).dump() << "\n";
    return kOk;
  }
  fs::create_directories(cfg.work_dir);
  const fs::path state_path = cfg.work_dir / "pipeline_state.json";
  ojson state = ojson::object();
  if (resume) {
    std::error_code ec;
    if (fs::is_regular_file(state_path, ec)) {
      try {
        state = ojson::parse(read_file(state_path));
      } catch (const nlohmann::json::exception&) {
        state = ojson::object();
      }
    }
  }
  std::vector<std::string> outputs;
  int ran = 0, skipped = 0;
  for (std::size_t i = 0; i < plans.size(); ++i) {
    const Step& step = cfg.steps[i];
    std::vector<fs::path> step_outputs;
    for (const auto& [flag, rel] : step.outputs) step_outputs.push_back(step_output_path(cfg, step, rel));
    // The fingerprint covers the arguments and the current content of every
    // input, so a changed upstream output forces this step to run again.
    std::string joined;
    for (const auto& a : plans[i]) {
      joined += a + '\x1f';
      if (a.empty() || a.front() == '-' || std::find(step_outputs.begin(), step_outputs.end(), fs::path(a)) != step_outputs.end()) continue;
      std::error_code ec;
      if (fs::exists(a, ec)) joined += output_digest(a) + '\x1f';
    }
    const std::string fingerprint = hex64(fnv1a64(joined));

    bool skip = false;
    if (resume && state.contains(step.name) && state[step.name].value("fingerprint", "") == fingerprint) {
      skip = true;
      const auto& recorded = state[step.name]["outputs"];
      for (const auto& p : step_outputs) {
        const std::string digest = output_digest(p);
        if (digest.empty() || !recorded.contains(p.string()) || recorded[p.string()].get<std::string>() != digest) {
          skip = false;
          break;
        }
      }
    }
    for (const auto& p : step_outputs) outputs.push_back(p.string());
    if (skip) {
      ++skipped;
      *ctx.err << "[pipeline] skip " << step.name << " (outputs up to date)\n";
      continue;
    }
    for (const auto& p : step_outputs) ensure_parent(p);
    *ctx.err << "[pipeline] run " << step.name << ": " << step.run << "\n";
    std::vector<std::string> argv{"prodretrieve", "--threads", std::to_string(threads)};
    argv.insert(argv.end(), plans[i].begin(), plans[i].end());
    std::ostringstream step_out;
    Context step_ctx{ctx.self_exe, &step_out, ctx.err};
    const int rc = run(argv, step_ctx);
    if (!step_out.str().empty()) *ctx.err << "[pipeline]   " << step_out.str();
    if (rc != kOk) {
      *ctx.err << "[pipeline] step '" << step.name << "' failed with exit code " << rc << "\n";
      return rc;
    }
    ++ran;
    ojson recorded = ojson::object();
    for (const auto& p : step_outputs) recorded[p.string()] = output_digest(p);
    state[step.name] = {{"fingerprint", fingerprint}, {"outputs", std::move(recorded)}};
    write_file_atomic(state_path, state.dump(2) + "\n");
  }
  *ctx.out << status(outputs, {{"steps_run", ran}, {"steps_skipped", skipped}}).dump() << "\n";
  return kOk;
}

inline std::vector<EmbeddingSet> load_all(const std::vector<std::string>& paths) {
  std::vector<EmbeddingSet> sets;
  for (const auto& p : paths) sets.push_back(load_embeddings(p));
  return sets;
}

}  // namespace detail

/// Runs one subcommand. args[0] is the program name.
inline int run(const std::vector<std::string>& args, const Context& ctx) {
  auto& out = *ctx.out;
  auto& err = *ctx.err;

  CLI::App app{"Product retrieval engine: exact search, crop matching, k-reciprocal re-ranking, ensembles, "
               "pseudo-labels and MAR@k evaluation over EMB1 embedding files.",
               "prodretrieve"};
  app.require_subcommand(1);
  unsigned threads = default_threads();
  app.add_option("--threads", threads, "Worker threads (default $PRODRETRIEVE_THREADS or all cores)");

  std::function<int()> action;
  auto on = [&](CLI::App* sub, std::function<int()> fn) { sub->callback([&action, fn] { action = fn; }); };

  // normalize
  std::string in_path, out_path;
  auto* normalize = app.add_subcommand("normalize", "L2-normalize every row of an EMB1 file");
  normalize->add_option("--in", in_path, "Input EMB1")->required();
  normalize->add_option("--out", out_path, "Output EMB1")->required();
  on(normalize, [&] {
    detail::ensure_parent(out_path);
    save_embeddings(l2_normalize(load_embeddings(in_path)), out_path);
    out << detail::status({out_path}).dump() << "\n";
    return kOk;
  });

  // fuse
  std::vector<std::string> in_paths, scale_labels, sidecars;
  auto* fuse = app.add_subcommand("fuse", "Fuse per-scale embeddings: normalize(mean(normalize(x)))");
  fuse->add_option("--in", in_paths, "Per-scale EMB1 files (repeatable)");
  fuse->add_option("--scale", scale_labels, "Scale label per --in (repeatable)");
  fuse->add_option("--sidecar", sidecars, "Sidecar manifests naming per-scale files (repeatable)");
  fuse->add_option("--out", out_path, "Output EMB1")->required();
  on(fuse, [&] {
    std::vector<ScaleGroup::Member> members;
    for (std::size_t i = 0; i < in_paths.size(); ++i) {
      members.emplace_back(i < scale_labels.size() ? scale_labels[i] : std::to_string(i), load_embeddings(in_paths[i]));
    }
    for (const auto& s : sidecars) {
      Sidecar meta;
      EmbeddingSet set = load_from_sidecar(s, &meta);
      members.emplace_back(meta.scale, std::move(set));
    }
    detail::ensure_parent(out_path);
    save_embeddings(fuse_multiscale(ScaleGroup(std::move(members))), out_path);
    out << detail::status({out_path}).dump() << "\n";
    return kOk;
  });

  // search
  std::string queries_path, gallery_path, matrix_out;
  std::size_t k = 10;
  auto* search = app.add_subcommand("search", "Exact cosine k-NN of queries against a gallery");
  search->add_option("--queries", queries_path, "Query EMB1 (L2-normalized)")->required();
  search->add_option("--gallery", gallery_path, "Gallery EMB1 (L2-normalized)")->required();
  search->add_option("--k", k, "Ranking depth")->check(CLI::PositiveNumber);
  search->add_option("--out", out_path, "Output RankingList JSONL")->required();
  search->add_option("--matrix-out", matrix_out, "Also write the full DMX1 distance matrix");
  on(search, [&] {
    const EmbeddingSet q = load_embeddings(queries_path), g = load_embeddings(gallery_path);
    std::vector<std::string> outs{out_path};
    std::vector<RankingList> lists;
    if (!matrix_out.empty()) {
      const DistanceMatrix m = pairwise_cosine_distance(q, g, threads);
      lists = topk(m, k);
      detail::ensure_parent(matrix_out);
      save_matrix(m, matrix_out);
      outs.push_back(matrix_out);
    } else {
      lists = search_topk(q, g, k, threads);
    }
    detail::ensure_parent(out_path);
    save_rankings(lists, out_path);
    out << detail::status(outs).dump() << "\n";
    return kOk;
  });

  // crop-agg
  std::string matrix_path, map_path, lists_out;
  auto* crop = app.add_subcommand("crop-agg", "Collapse a query x crop matrix to parents (min over crops)");
  crop->add_option("--matrix", matrix_path, "DMX1 matrix over crop ids")->required();
  crop->add_option("--map", map_path, "CropGroupMap JSON")->required();
  crop->add_option("--out", out_path, "Output DMX1 matrix over parent ids")->required();
  crop->add_option("--lists-out", lists_out, "Also write top-k RankingList JSONL");
  crop->add_option("--k", k, "Ranking depth for --lists-out")->check(CLI::PositiveNumber);
  on(crop, [&] {
    const DistanceMatrix agg = aggregate_crops(load_matrix(matrix_path), load_crop_map(map_path));
    detail::ensure_parent(out_path);
    save_matrix(agg, out_path);
    std::vector<std::string> outs{out_path};
    if (!lists_out.empty()) {
      detail::ensure_parent(lists_out);
      save_rankings(topk(agg, k), lists_out);
      outs.push_back(lists_out);
    }
    out << detail::status(outs).dump() << "\n";
    return kOk;
  });

  // rerank
  RerankParams rp;
  auto add_rerank_params = [&](CLI::App* sub) {
    sub->add_option("--k1", rp.k1, "Reciprocal neighborhood size");
    sub->add_option("--k2", rp.k2, "Local query expansion size");
    sub->add_option("--lambda", rp.lambda, "Weight of the original distance");
  };
  auto* rerank = app.add_subcommand("rerank", "k-reciprocal re-ranking, in process");
  rerank->add_option("--queries", queries_path, "Query EMB1")->required();
  rerank->add_option("--gallery", gallery_path, "Gallery EMB1")->required();
  add_rerank_params(rerank);
  rerank->add_option("--k", k, "Ranking depth")->check(CLI::PositiveNumber);
  rerank->add_option("--out", out_path, "Output RankingList JSONL")->required();
  rerank->add_option("--matrix-out", matrix_out, "Also write the re-ranked DMX1 matrix");
  on(rerank, [&] {
    const EmbeddingSet q = load_embeddings(queries_path), g = load_embeddings(gallery_path);
    const DistanceMatrix m = kreciprocal_rerank(q, g, rp, threads);
    detail::ensure_parent(out_path);
    save_rankings(topk(m, k), out_path);
    std::vector<std::string> outs{out_path};
    if (!matrix_out.empty()) {
      detail::ensure_parent(matrix_out);
      save_matrix(m, matrix_out);
      outs.push_back(matrix_out);
    }
    out << detail::status(outs).dump() << "\n";
    return kOk;
  });

  // shard
  std::size_t n_shards = 1;
  std::string job_dir, job_id, created_at;
  auto* shard = app.add_subcommand("shard", "Write a sharded re-ranking job manifest");
  shard->add_option("--queries", queries_path, "Query EMB1")->required();
  shard->add_option("--gallery", gallery_path, "Gallery EMB1")->required();
  shard->add_option("--n-shards", n_shards, "Number of shards")->check(CLI::PositiveNumber);
  shard->add_option("--job-dir", job_dir, "Job directory (created)")->required();
  shard->add_option("--job-id", job_id, "Job id (default: job directory name)");
  shard->add_option("--created-at", created_at, "Timestamp to record (default: now, UTC)");
  add_rerank_params(shard);
  shard->add_option("--k", k, "Ranking depth per query")->check(CLI::PositiveNumber);
  on(shard, [&] {
    rp.validate();
    fs::create_directories(job_dir);
    const fs::path dir = fs::absolute(job_dir);
    const EmbeddingSet q = load_embeddings(queries_path);
    load_embeddings(gallery_path);
    JobManifest m;
    m.job_id = job_id.empty() ? dir.filename().string() : job_id;
    m.queries_path = fs::relative(fs::absolute(queries_path), dir).generic_string();
    m.gallery_path = fs::relative(fs::absolute(gallery_path), dir).generic_string();
    m.params = rp;
    m.k = k;
    m.shards = build_shard_manifest(q.size(), n_shards, dir);
    m.created_at = created_at.empty() ? detail::utc_now() : created_at;
    const fs::path manifest_path = dir / "manifest.json";
    save_job_manifest(m, manifest_path);
    out << detail::status({manifest_path.string()}).dump() << "\n";
    return kOk;
  });

  // merge
  std::string manifest_path, missing_out;
  auto* merge = app.add_subcommand("merge", "Merge shard result files; absent or corrupt shards are reported");
  merge->add_option("--manifest", manifest_path, "Job manifest.json")->required();
  merge->add_option("--out", out_path, "Merged RankingList JSONL (default <job>/merged.jsonl)");
  merge->add_option("--missing-out", missing_out, "MissingReport JSON (default <job>/missing.json)");
  auto write_merge = [&](const MergeResult& r, const fs::path& dir) {
    const fs::path lists = out_path.empty() ? dir / "merged.jsonl" : fs::path(out_path);
    const fs::path missing = missing_out.empty() ? dir / "missing.json" : fs::path(missing_out);
    detail::ensure_parent(lists);
    detail::ensure_parent(missing);
    save_rankings(r.results, lists);
    write_file_atomic(missing, to_json(r.missing).dump(2) + "\n");
    out << detail::status({lists.string(), missing.string()},
                          {{"n_results", r.results.size()}, {"n_missing", r.missing.missing_queries.size()}})
               .dump()
        << "\n";
  };
  on(merge, [&] {
    const JobManifest m = load_job_manifest(manifest_path);
    const fs::path dir = fs::path(manifest_path).parent_path();
    const EmbeddingSet q = load_embeddings(resolve_input(dir, m.queries_path));
    write_merge(merge_shard_results(m.shards, dir, q.ids()), dir);
    return kOk;
  });

  // worker
  std::size_t shard_index = 0;
  bool inject_fail = false, inject_kill = false;
  auto* worker = app.add_subcommand("worker", "Compute one shard of a re-ranking job");
  worker->add_option("--manifest", manifest_path, "Job manifest.json")->required();
  worker->add_option("--shard", shard_index, "Shard index")->required();
  worker->add_flag("--inject-fail", inject_fail, "Write half the result to the temp file, then exit nonzero");
  worker->add_flag("--inject-kill", inject_kill, "Write half the result to the temp file, then SIGKILL self");
  on(worker, [&] {
    const WorkerFault fault = inject_kill ? WorkerFault::Kill : inject_fail ? WorkerFault::Fail : WorkerFault::None;
    worker_run(manifest_path, shard_index, threads, fault);
    const JobManifest m = load_job_manifest(manifest_path);
    out << detail::status({(fs::path(manifest_path).parent_path() / m.shards.result_files[shard_index]).string()}).dump()
        << "\n";
    return kOk;
  });

  // coordinate
  std::size_t parallelism = 1;
  std::string fail_policy = "tolerate";
  std::vector<std::size_t> fail_shards;
  unsigned worker_threads = 1;
  auto* coord = app.add_subcommand("coordinate", "Run every shard as a worker process, then merge");
  coord->add_option("--manifest", manifest_path, "Job manifest.json")->required();
  coord->add_option("--parallelism", parallelism, "Concurrent workers")->check(CLI::PositiveNumber);
  coord->add_option("--fail-policy", fail_policy, "tolerate|strict")->check(CLI::IsMember({"tolerate", "strict"}));
  coord->add_option("--out", out_path, "Merged RankingList JSONL (default <job>/merged.jsonl)");
  coord->add_option("--missing-out", missing_out, "MissingReport JSON (default <job>/missing.json)");
  coord->add_option("--worker-threads", worker_threads, "--threads passed to each worker");
  coord->add_option("--inject-fail-shard", fail_shards, "Start this shard's worker with --inject-fail (repeatable)");
  on(coord, [&] {
    WorkerLauncher launcher{ctx.self_exe, worker_threads, {fail_shards.begin(), fail_shards.end()}};
    const MergeResult r = coordinator_run(
        manifest_path, parallelism, fail_policy == "strict" ? FailPolicy::Strict : FailPolicy::Tolerate, launcher, &err);
    write_merge(r, fs::path(manifest_path).parent_path());
    return kOk;
  });

  // max-ensemble / vote-ensemble
  std::string spec_path;
  auto ensemble_cmd = [&](EnsembleMethod method) {
    EnsembleSpec spec;
    if (!spec_path.empty()) {
      spec = load_ensemble_spec(spec_path);
      if (spec.method != method) throw Error(ErrorCode::ConfigInvalid, "ensemble spec method does not match the subcommand");
    } else {
      spec.method = method;
      spec.k = k;
      for (std::size_t i = 0; i < in_paths.size(); ++i) spec.members.push_back({"m" + std::to_string(i), in_paths[i]});
    }
    const EnsembleOutput r = run_ensemble(spec);
    detail::ensure_parent(out_path);
    save_rankings(r.lists, out_path);
    std::vector<std::string> outs{out_path};
    if (!matrix_out.empty()) {
      if (!r.matrix) throw Error(ErrorCode::ConfigInvalid, "--matrix-out needs DMX1 matrix members");
      detail::ensure_parent(matrix_out);
      save_matrix(*r.matrix, matrix_out);
      outs.push_back(matrix_out);
    }
    out << detail::status(outs).dump() << "\n";
    return kOk;
  };
  auto* maxe = app.add_subcommand("max-ensemble", "Maximum ensemble of min-max normalized per-model scores");
  maxe->add_option("--in", in_paths, "Member DMX1 matrices or RankingList JSONL (repeatable)");
  maxe->add_option("--spec", spec_path, "EnsembleSpec JSON instead of --in");
  maxe->add_option("--k", k, "Output depth")->check(CLI::PositiveNumber);
  maxe->add_option("--out", out_path, "Output RankingList JSONL")->required();
  maxe->add_option("--matrix-out", matrix_out, "Also write the fused DMX1 matrix");
  on(maxe, [&] { return ensemble_cmd(EnsembleMethod::Maximum); });
  auto* vote = app.add_subcommand("vote-ensemble", "Borda voting over per-model top-k lists");
  vote->add_option("--in", in_paths, "Member RankingList JSONL or DMX1 files (repeatable)");
  vote->add_option("--spec", spec_path, "EnsembleSpec JSON instead of --in");
  vote->add_option("--k", k, "Output depth")->check(CLI::PositiveNumber);
  vote->add_option("--out", out_path, "Output RankingList JSONL")->required();
  on(vote, [&] { return ensemble_cmd(EnsembleMethod::Voting); });

  // cluster / filter-clusters / assign-labels
  double threshold = 0.0;
  auto* cluster = app.add_subcommand("cluster", "Threshold-graph connected components over cosine similarity");
  cluster->add_option("--in", in_path, "EMB1 (L2-normalized)")->required();
  cluster->add_option("--threshold", threshold, "Cosine similarity threshold in (0, 1)")->required();
  cluster->add_option("--out", out_path, "Cluster dump JSON")->required();
  on(cluster, [&] {
    const ClusterResult r = cluster_features(load_embeddings(in_path), threshold, threads);
    detail::ensure_parent(out_path);
    write_file_atomic(out_path, to_json(r).dump() + "\n");
    out << detail::status({out_path}, {{"n_clusters", r.clusters.size()}, {"pool", r.pool.size()}}).dump() << "\n";
    return kOk;
  });
  std::size_t max_size = kConfidentClusterLimit;
  auto* filter = app.add_subcommand("filter-clusters", "Keep clusters smaller than --max-size");
  filter->add_option("--in", in_path, "Cluster dump JSON")->required();
  filter->add_option("--max-size", max_size, "Clusters of this size or larger are rejected");
  filter->add_option("--out", out_path, "Cluster dump JSON")->required();
  on(filter, [&] {
    const ClusterResult r = filter_confident(load_cluster_result(in_path), max_size);
    detail::ensure_parent(out_path);
    write_file_atomic(out_path, to_json(r).dump() + "\n");
    out << detail::status({out_path}, {{"n_clusters", r.clusters.size()}, {"pool", r.pool.size()}}).dump() << "\n";
    return kOk;
  });
  std::size_t target = 100000;
  std::uint64_t seed = 0;
  auto* assign = app.add_subcommand("assign-labels", "Clusters plus seeded one-image classes up to --target");
  assign->add_option("--in", in_path, "Cluster dump JSON")->required();
  assign->add_option("--target", target, "Total number of classes");
  assign->add_option("--seed", seed, "Sampling seed")->required();
  assign->add_option("--out", out_path, "Label JSONL")->required();
  on(assign, [&] {
    const PseudoLabelAssignment a = assign_pseudo_labels(load_cluster_result(in_path), target, seed);
    detail::ensure_parent(out_path);
    write_file_atomic(out_path, encode_labels(a));
    out << detail::status({out_path}, summary_json(a)).dump() << "\n";
    return kOk;
  });

  // gen-synth / perturb
  SyntheticParams sp;
  std::string out_dir;
  auto* gen = app.add_subcommand("gen-synth", "Seeded clustered synthetic benchmark");
  gen->add_option("--classes", sp.n_classes, "Number of classes");
  gen->add_option("--gallery-per-class", sp.gallery_per_class, "Gallery items per class");
  gen->add_option("--queries-per-class", sp.queries_per_class, "Queries per class");
  gen->add_option("--dim", sp.dim, "Dimensionality");
  gen->add_option("--sigma", sp.noise_sigma, "Per-coordinate Gaussian noise");
  gen->add_option("--seed", sp.seed, "Seed")->required();
  gen->add_option("--out-dir", out_dir, "Writes gallery.emb, queries.emb, gt.jsonl")->required();
  on(gen, [&] {
    const SyntheticData d = gen_synthetic(sp);
    fs::create_directories(out_dir);
    const fs::path dir(out_dir);
    save_embeddings(d.gallery, dir / "gallery.emb");
    save_embeddings(d.queries, dir / "queries.emb");
    write_file_atomic(dir / "gt.jsonl", encode_ground_truth(d.gt));
    out << detail::status({(dir / "gallery.emb").string(), (dir / "queries.emb").string(), (dir / "gt.jsonl").string()})
               .dump()
        << "\n";
    return kOk;
  });
  double sigma = 0.0;
  auto* perturb = app.add_subcommand("perturb", "normalize(x + sigma * gaussian) per row, seeded");
  perturb->add_option("--in", in_path, "Input EMB1")->required();
  perturb->add_option("--sigma", sigma, "Per-coordinate Gaussian noise")->required();
  perturb->add_option("--seed", seed, "Seed")->required();
  perturb->add_option("--out", out_path, "Output EMB1")->required();
  on(perturb, [&] {
    detail::ensure_parent(out_path);
    save_embeddings(perturb_embeddings(load_embeddings(in_path), sigma, seed), out_path);
    out << detail::status({out_path}).dump() << "\n";
    return kOk;
  });

  // eval
  std::string gt_path;
  bool per_query = false;
  auto* eval = app.add_subcommand("eval", "MAR@k of ranking lists against ground truth");
  eval->add_option("--lists", lists_out, "RankingList JSONL")->required();
  eval->add_option("--gt", gt_path, "GroundTruth JSONL")->required();
  eval->add_option("--k", k, "Depth")->check(CLI::PositiveNumber);
  eval->add_option("--gallery", gallery_path, "Gallery EMB1; listed ids outside it are an error");
  eval->add_flag("--per-query", per_query, "Include per-query recall");
  eval->add_option("--report", out_path, "Also write the report JSON here");
  on(eval, [&] {
    std::optional<EmbeddingSet> g;
    if (!gallery_path.empty()) g = load_embeddings(gallery_path);
    const EvalReport r = mar_at_k(load_rankings(lists_out), load_ground_truth(gt_path), k, g ? &g->ids() : nullptr);
    std::vector<std::string> outs;
    if (!out_path.empty()) {
      detail::ensure_parent(out_path);
      write_file_atomic(out_path, to_json(r, per_query).dump(2) + "\n");
      outs.push_back(out_path);
    }
    out << detail::status(outs, to_json(r, per_query)).dump() << "\n";
    return kOk;
  });

  // pipeline
  std::string config_path, work_dir;
  bool resume = false;
  auto* pipe = app.add_subcommand("pipeline", "Run a JSON pipeline of subcommands");
  pipe->add_option("--config", config_path, "PipelineConfig JSON")->required();
  pipe->add_option("--work-dir", work_dir, "Override the config's work_dir");
  pipe->add_flag("--resume", resume, "Skip steps whose outputs match recorded checksums");
  on(pipe, [&] {
    return detail::run_pipeline(config_path, work_dir.empty() ? std::nullopt : std::optional<fs::path>(work_dir), resume,
                                threads, ctx);
  });

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    err << app.help();
    return kUsage;
  }

  try {
    return action ? action() : kUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    err << "error: IoFailure: " << e.what() << "\n";
    return kDataError;
  } catch (const nlohmann::json::exception& e) {
    err << "error: MalformedInput: " << e.what() << "\n";
    return kDataError;
  }
}

}  // namespace prodretrieve::cli
