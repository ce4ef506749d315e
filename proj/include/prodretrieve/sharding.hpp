#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "prodretrieve/error.hpp"
#include "prodretrieve/fileio.hpp"
#include "prodretrieve/ranking_io.hpp"
#include "prodretrieve/search_core.hpp"

namespace prodretrieve {

/// Query i goes to shard i mod n_shards.
struct ShardManifest {
  std::size_t n_queries = 0;
  std::size_t n_shards = 1;
  std::vector<std::string> result_files;

  std::vector<std::size_t> queries_of(std::size_t shard) const {
    std::vector<std::size_t> out;
    for (std::size_t i = shard; i < n_queries; i += n_shards) out.push_back(i);
    return out;
  }

  friend bool operator==(const ShardManifest&, const ShardManifest&) = default;
};

inline std::string shard_file_name(std::size_t shard) { return "shard_" + std::to_string(shard) + ".jsonl"; }

/// `job_dir` is recorded only through the result file names, which are
/// relative to it.
inline ShardManifest build_shard_manifest(std::size_t n_queries, std::size_t n_shards,
                                          [[maybe_unused]] const fs::path& job_dir = {}) {
  if (n_shards == 0) throw Error(ErrorCode::InvalidParams, "n_shards must be >= 1");
  ShardManifest m{n_queries, n_shards, {}};
  for (std::size_t s = 0; s < n_shards; ++s) m.result_files.push_back(shard_file_name(s));
  return m;
}

inline ojson to_json(const ShardManifest& m) {
  ojson shards = ojson::array();
  for (std::size_t s = 0; s < m.n_shards; ++s) {
    const std::size_t count = s < m.n_queries ? (m.n_queries - s + m.n_shards - 1) / m.n_shards : 0;
    shards.push_back({{"index", s}, {"first", s}, {"stride", m.n_shards}, {"count", count}});
  }
  return {{"n_queries", m.n_queries}, {"n_shards", m.n_shards}, {"assignment", "modulo"},
          {"result_files", m.result_files}, {"shards", std::move(shards)}};
}

inline ShardManifest shard_manifest_from_json(const nlohmann::json& j) {
  try {
    if (j.value("assignment", std::string("modulo")) != "modulo") {
      throw Error(ErrorCode::ManifestInvalid, "only modulo assignment is supported");
    }
    ShardManifest m{j.at("n_queries").get<std::size_t>(), j.at("n_shards").get<std::size_t>(),
                    j.at("result_files").get<std::vector<std::string>>()};
    if (m.n_shards == 0 || m.result_files.size() != m.n_shards) {
      throw Error(ErrorCode::ManifestInvalid, "result_files must list one file per shard");
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ManifestInvalid, e.what());
  }
}

// ---------------------------------------------------------------------------
// Shard result files: RankingList JSON Lines followed by {"checksum": hex},
// where hex is FNV-1a 64 over every byte before the checksum line.
// ---------------------------------------------------------------------------

inline std::string encode_shard_file(const std::vector<RankingList>& lists) {
  std::string payload = encode_rankings(lists);
  ojson trailer{{"checksum", hex64(fnv1a64(payload))}};
  payload += trailer.dump();
  payload += '\n';
  return payload;
}

/// Parses and verifies a shard file; nullopt if the trailer is missing or the
/// checksum does not match.
inline std::optional<std::vector<RankingList>> decode_shard_file(std::string_view bytes) {
  std::string_view body = bytes;
  if (!body.empty() && body.back() == '\n') body.remove_suffix(1);
  const std::size_t cut = body.rfind('\n');
  const std::size_t trailer_at = cut == std::string_view::npos ? 0 : cut + 1;
  const std::string_view payload = bytes.substr(0, trailer_at);
  try {
    const auto trailer = nlohmann::json::parse(body.substr(trailer_at));
    if (!trailer.is_object() || !trailer.contains("checksum")) return std::nullopt;
    if (trailer.at("checksum").get<std::string>() != hex64(fnv1a64(payload))) return std::nullopt;
    return decode_rankings(payload);
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  } catch (const Error&) {
    return std::nullopt;
  }
}

enum class MissingReason { Absent, Checksum };

inline std::string_view missing_reason_name(MissingReason r) { return r == MissingReason::Absent ? "absent" : "checksum"; }

struct MissingReport {
  std::vector<std::string> missing_queries;
  std::map<std::size_t, MissingReason> reasons;

  bool empty() const noexcept { return reasons.empty(); }
  friend bool operator==(const MissingReport&, const MissingReport&) = default;
};

inline ojson to_json(const MissingReport& r) {
  ojson reasons = ojson::object();
  for (const auto& [shard, why] : r.reasons) reasons[std::to_string(shard)] = missing_reason_name(why);
  return {{"missing_queries", r.missing_queries}, {"reasons", std::move(reasons)}};
}

struct MergeResult {
  std::vector<RankingList> results;  // present queries, in query index order
  MissingReport missing;
};

/// Collects every shard file under job_dir. Absent shards and shards whose
/// file fails verification are reported, never fatal. `query_ids` is the full
/// query id list in index order.
inline MergeResult merge_shard_results(const ShardManifest& manifest, const fs::path& job_dir,
                                       const std::vector<std::string>& query_ids) {
  if (query_ids.size() != manifest.n_queries) {
    throw Error(ErrorCode::ManifestInvalid, "manifest declares " + std::to_string(manifest.n_queries) +
                                                " queries, query set has " + std::to_string(query_ids.size()));
  }
  std::vector<std::optional<RankingList>> slots(manifest.n_queries);
  std::vector<std::optional<MissingReason>> shard_failure(manifest.n_shards);
  for (std::size_t s = 0; s < manifest.n_shards; ++s) {
    const fs::path path = job_dir / manifest.result_files[s];
    const auto expected = manifest.queries_of(s);
    std::error_code ec;
    if (!fs::is_regular_file(path, ec)) {
      if (!expected.empty()) shard_failure[s] = MissingReason::Absent;
      continue;
    }
    std::string bytes;
    try {
      bytes = read_file(path);
    } catch (const Error&) {
      shard_failure[s] = MissingReason::Absent;
      continue;
    }
    auto lists = decode_shard_file(bytes);
    // A verified file must also hold exactly this shard's queries, in order.
    bool ok = lists && lists->size() == expected.size();
    for (std::size_t r = 0; ok && r < expected.size(); ++r) ok = (*lists)[r].query_id == query_ids[expected[r]];
    if (!ok) {
      shard_failure[s] = MissingReason::Checksum;
      continue;
    }
    for (std::size_t r = 0; r < expected.size(); ++r) slots[expected[r]] = std::move((*lists)[r]);
  }
  MergeResult out;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i]) {
      out.results.push_back(std::move(*slots[i]));
    } else {
      out.missing.missing_queries.push_back(query_ids[i]);
    }
  }
  for (std::size_t s = 0; s < manifest.n_shards; ++s) {
    if (shard_failure[s]) out.missing.reasons[s] = *shard_failure[s];
  }
  return out;
}

}  // namespace prodretrieve
