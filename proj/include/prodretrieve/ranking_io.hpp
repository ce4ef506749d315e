#pragma once

#include <bit>
#include <cstdint>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "prodretrieve/embed_store.hpp"
#include "prodretrieve/fileio.hpp"
#include "prodretrieve/search_core.hpp"

namespace prodretrieve {

using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// RankingList JSON Lines:
//   {"query": id, "ranks": [[gallery_id, score], ...], "orientation": "distance"}
// ---------------------------------------------------------------------------

inline std::string ranking_to_line(const RankingList& list) {
  ojson ranks = ojson::array();
  for (const auto& e : list.entries) ranks.push_back(ojson::array({e.gallery_id, static_cast<double>(e.score)}));
  ojson j;
  j["query"] = list.query_id;
  j["ranks"] = std::move(ranks);
  j["orientation"] = orientation_name(list.orientation);
  return j.dump();
}

inline RankingList ranking_from_json(const nlohmann::json& j) {
  RankingList list;
  try {
    list.query_id = j.at("query").get<std::string>();
    const std::string o = j.value("orientation", std::string("distance"));
    if (o == "distance") {
      list.orientation = Orientation::Distance;
    } else if (o == "similarity") {
      list.orientation = Orientation::Similarity;
    } else {
      throw Error(ErrorCode::MalformedInput, "unknown orientation '" + o + "'");
    }
    for (const auto& r : j.at("ranks")) {
      list.entries.push_back({r.at(0).get<std::string>(), static_cast<float>(r.at(1).get<double>())});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedInput, std::string("bad ranking record: ") + e.what());
  }
  list.k = std::max<std::size_t>(list.entries.size(), 1);
  return list;
}

inline std::string encode_rankings(const std::vector<RankingList>& lists) {
  std::string out;
  for (const auto& l : lists) {
    out += ranking_to_line(l);
    out += '\n';
  }
  return out;
}

inline std::vector<RankingList> decode_rankings(std::string_view text) {
  std::vector<RankingList> lists;
  std::size_t start = 0, line_no = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(start, end - start);
    ++line_no;
    start = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::MalformedInput, "line " + std::to_string(line_no) + ": " + e.what());
    }
    lists.push_back(ranking_from_json(j));
  }
  return lists;
}

inline void save_rankings(const std::vector<RankingList>& lists, const fs::path& path) {
  write_file_atomic(path, encode_rankings(lists));
}

inline std::vector<RankingList> load_rankings(const fs::path& path) { return decode_rankings(read_file(path)); }

// ---------------------------------------------------------------------------
// DMX1 distance-matrix file, little-endian:
//   "DMX1" | u32 rows | u32 cols | u32 reserved (0)
//   rows x (u16 len, id bytes) | cols x (u16 len, id bytes)
//   rows x cols float32
// ---------------------------------------------------------------------------

inline constexpr std::string_view kMatrixMagic = "DMX1";

inline std::string encode_matrix(const DistanceMatrix& m) {
  std::string out;
  out.append(kMatrixMagic);
  detail::put_u32(out, static_cast<std::uint32_t>(m.rows()));
  detail::put_u32(out, static_cast<std::uint32_t>(m.cols()));
  detail::put_u32(out, 0);
  for (const auto* ids : {&m.query_ids(), &m.gallery_ids()}) {
    for (const auto& id : *ids) {
      if (id.size() > UINT16_MAX) throw Error(ErrorCode::InvalidId, "id longer than 65535 bytes");
      detail::put_u16(out, static_cast<std::uint16_t>(id.size()));
      out.append(id);
    }
  }
  for (float v : m.values()) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

inline DistanceMatrix decode_matrix(std::string_view bytes) {
  if (bytes.size() < 16 || bytes.substr(0, 4) != kMatrixMagic || detail::get_u32(bytes, 12) != 0) {
    throw Error(ErrorCode::MagicMismatch, "missing DMX1 header");
  }
  const std::uint32_t rows = detail::get_u32(bytes, 4), cols = detail::get_u32(bytes, 8);
  std::size_t at = 16;
  auto read_ids = [&](std::uint32_t n) {
    std::vector<std::string> ids;
    ids.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
      if (at + 2 > bytes.size()) throw Error(ErrorCode::TruncatedFile, "id block ends early");
      const std::uint16_t len = detail::get_u16(bytes, at);
      at += 2;
      if (at + len > bytes.size()) throw Error(ErrorCode::TruncatedFile, "id block ends early");
      ids.emplace_back(bytes.substr(at, len));
      at += len;
    }
    return ids;
  };
  auto qids = read_ids(rows);
  auto gids = read_ids(cols);
  if (bytes.size() - at != std::uint64_t(rows) * cols * 4) throw Error(ErrorCode::TruncatedFile, "matrix payload size mismatch");
  std::vector<float> values(std::size_t(rows) * cols);
  for (std::size_t i = 0; i < values.size(); ++i, at += 4) values[i] = std::bit_cast<float>(detail::get_u32(bytes, at));
  return DistanceMatrix(std::move(qids), std::move(gids), std::move(values));
}

inline void save_matrix(const DistanceMatrix& m, const fs::path& path) { write_file_atomic(path, encode_matrix(m)); }
inline DistanceMatrix load_matrix(const fs::path& path) { return decode_matrix(read_file(path)); }

// ---------------------------------------------------------------------------
// CropGroupMap JSON: {"scheme": "index5crop", "groups": {parent: [crops...]}}
// ---------------------------------------------------------------------------

inline CropGroupMap crop_map_from_json(const ojson& j) {
  try {
    const CropScheme scheme = parse_crop_scheme(j.at("scheme").get<std::string>());
    std::vector<CropGroupMap::Group> groups;
    for (const auto& [parent, crops] : j.at("groups").items()) {
      groups.emplace_back(parent, crops.get<std::vector<std::string>>());
    }
    return CropGroupMap(scheme, std::move(groups));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidCropMap, e.what());
  }
}

inline ojson to_json(const CropGroupMap& map) {
  ojson groups = ojson::object();
  for (const auto& [parent, crops] : map.groups()) groups[parent] = crops;
  return {{"scheme", crop_scheme_name(map.scheme())}, {"groups", std::move(groups)}};
}

inline CropGroupMap load_crop_map(const fs::path& path) {
  ojson j;
  try {
    j = ojson::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidCropMap, path.string() + ": " + e.what());
  }
  return crop_map_from_json(j);
}

}  // namespace prodretrieve
