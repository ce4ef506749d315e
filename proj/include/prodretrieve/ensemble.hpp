#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <fstream>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "prodretrieve/error.hpp"
#include "prodretrieve/fileio.hpp"
#include "prodretrieve/ranking_io.hpp"
#include "prodretrieve/search_core.hpp"

namespace prodretrieve {

inline constexpr std::size_t kEnsembleDepth = 10;

// ---------------------------------------------------------------------------
// Maximum ensemble
// ---------------------------------------------------------------------------

/// Per query row, every model's distances are min-max normalized to a
/// similarity s = (max - v) / (max - min) (constant rows give s = 0); the
/// output is 1 - max over models of s.
inline DistanceMatrix max_ensemble(std::span<const DistanceMatrix> models) {
  if (models.empty()) throw Error(ErrorCode::ShapeMismatch, "max ensemble needs at least one model");
  const DistanceMatrix& ref = models.front();
  for (const auto& m : models) {
    if (m.rows() != ref.rows() || m.cols() != ref.cols()) {
      throw Error(ErrorCode::ShapeMismatch, "model matrices differ in shape");
    }
    if (m.query_ids() != ref.query_ids() || m.gallery_ids() != ref.gallery_ids()) {
      throw Error(ErrorCode::IdMismatch, "model matrices differ in query or gallery ids");
    }
  }
  const std::size_t cols = ref.cols();
  std::vector<double> best(cols);
  std::vector<float> out(ref.rows() * cols);
  for (std::size_t i = 0; i < ref.rows(); ++i) {
    std::fill(best.begin(), best.end(), 0.0);
    for (const auto& m : models) {
      const auto row = m.row(i);
      if (row.empty()) continue;
      const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
      const double mn = *lo, mx = *hi;
      if (!(mx > mn)) continue;
      for (std::size_t j = 0; j < cols; ++j) best[j] = std::max(best[j], (mx - double(row[j])) / (mx - mn));
    }
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = static_cast<float>(1.0 - best[j]);
  }
  return DistanceMatrix(ref.query_ids(), ref.gallery_ids(), std::move(out));
}

namespace detail {

inline std::map<std::string, const RankingList*> index_ballots(const std::vector<RankingList>& lists,
                                                               std::size_t model) {
  std::map<std::string, const RankingList*> by_query;
  for (const auto& l : lists) {
    if (!by_query.emplace(l.query_id, &l).second) {
      throw Error(ErrorCode::DuplicateBallot,
                  "model " + std::to_string(model) + " has two lists for query '" + l.query_id + "'");
    }
  }
  return by_query;
}

}  // namespace detail

/// Maximum ensemble over ranking lists instead of full matrices. Each list's
/// scores are min-max normalized to [0, 1] similarity; a gallery item a model
/// did not list counts as similarity 0 for that model. Every model must cover
/// the same queries. Output is ordered by query id.
inline std::vector<RankingList> max_ensemble_lists(const std::vector<std::vector<RankingList>>& models,
                                                   std::size_t k = kEnsembleDepth) {
  if (models.empty()) throw Error(ErrorCode::ShapeMismatch, "max ensemble needs at least one model");
  if (k == 0) throw Error(ErrorCode::InvalidParams, "k must be >= 1");
  std::vector<std::map<std::string, const RankingList*>> ballots;
  for (std::size_t m = 0; m < models.size(); ++m) ballots.push_back(detail::index_ballots(models[m], m));
  for (const auto& b : ballots) {
    if (b.size() != ballots.front().size() ||
        !std::equal(b.begin(), b.end(), ballots.front().begin(),
                    [](const auto& x, const auto& y) { return x.first == y.first; })) {
      throw Error(ErrorCode::IdMismatch, "ensemble members cover different query sets");
    }
  }
  std::vector<RankingList> out;
  for (const auto& [query, unused] : ballots.front()) {
    std::unordered_map<std::string, double> best;
    for (const auto& b : ballots) {
      const RankingList& list = *b.at(query);
      if (list.entries.empty()) continue;
      double mn = list.entries.front().score, mx = mn;
      for (const auto& e : list.entries) {
        mn = std::min<double>(mn, e.score);
        mx = std::max<double>(mx, e.score);
      }
      for (const auto& e : list.entries) {
        double s = 0.0;
        if (mx > mn) s = list.orientation == Orientation::Distance ? (mx - e.score) / (mx - mn) : (e.score - mn) / (mx - mn);
        auto [it, inserted] = best.emplace(e.gallery_id, s);
        if (!inserted) it->second = std::max(it->second, s);
      }
    }
    std::vector<RankEntry> entries;
    entries.reserve(best.size());
    for (const auto& [id, s] : best) entries.push_back({id, static_cast<float>(s)});
    std::sort(entries.begin(), entries.end(), [](const RankEntry& a, const RankEntry& b) {
      return detail::ranks_before(a.score, a.gallery_id, b.score, b.gallery_id, Orientation::Similarity);
    });
    if (entries.size() > k) entries.resize(k);
    out.push_back(RankingList{query, std::move(entries), k, Orientation::Similarity});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Voting ensemble
// ---------------------------------------------------------------------------

/// Borda-style vote. In each model's list the item at 1-based rank r <= k earns
/// k + 1 - r points. Items are ordered by total points, then by how many models
/// listed them, then by ascending gallery id; the output score is the point
/// total. A query absent from a model simply gets no ballot from it. Output is
/// ordered by query id.
inline std::vector<RankingList> vote_ensemble(const std::vector<std::vector<RankingList>>& models,
                                              std::size_t k = kEnsembleDepth) {
  if (models.empty()) throw Error(ErrorCode::MalformedInput, "vote ensemble needs at least one model");
  if (k == 0) throw Error(ErrorCode::InvalidParams, "k must be >= 1");
  std::vector<std::map<std::string, const RankingList*>> ballots;
  std::set<std::string> queries;
  for (std::size_t m = 0; m < models.size(); ++m) {
    ballots.push_back(detail::index_ballots(models[m], m));
    for (const auto& [q, unused] : ballots.back()) queries.insert(q);
  }
  struct Tally {
    std::size_t points = 0;
    std::size_t voters = 0;
  };
  std::vector<RankingList> out;
  out.reserve(queries.size());
  for (const auto& query : queries) {
    std::unordered_map<std::string, Tally> tally;
    for (const auto& b : ballots) {
      auto it = b.find(query);
      if (it == b.end()) continue;
      std::unordered_set<std::string_view> seen;
      const auto& entries = it->second->entries;
      for (std::size_t r = 0; r < std::min(k, entries.size()); ++r) {
        if (!seen.insert(entries[r].gallery_id).second) continue;
        auto& t = tally[entries[r].gallery_id];
        t.points += k - r;  // (k + 1) - (r + 1)
        t.voters += 1;
      }
    }
    std::vector<std::pair<std::string, Tally>> items(tally.begin(), tally.end());
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
      if (a.second.points != b.second.points) return a.second.points > b.second.points;
      if (a.second.voters != b.second.voters) return a.second.voters > b.second.voters;
      return a.first < b.first;
    });
    if (items.size() > k) items.resize(k);
    RankingList list{query, {}, k, Orientation::Similarity};
    for (auto& [id, t] : items) list.entries.push_back({id, static_cast<float>(t.points)});
    out.push_back(std::move(list));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ensemble spec files:
// {"method": "voting", "k": 10, "members": [{"label": ..., "path": ...}, ...]}
// ---------------------------------------------------------------------------

enum class EnsembleMethod { Maximum, Voting };

struct EnsembleMember {
  std::string label;
  std::string path;
};

struct EnsembleSpec {
  EnsembleMethod method = EnsembleMethod::Voting;
  std::size_t k = kEnsembleDepth;
  std::vector<EnsembleMember> members;

  void validate() const {
    if (members.empty()) throw Error(ErrorCode::ConfigInvalid, "ensemble has no members");
    std::set<std::string> labels;
    for (const auto& m : members) {
      if (!labels.insert(m.label).second) throw Error(ErrorCode::ConfigInvalid, "duplicate member label '" + m.label + "'");
    }
    if (k == 0) throw Error(ErrorCode::ConfigInvalid, "k must be >= 1");
  }
};

inline EnsembleSpec load_ensemble_spec(const fs::path& path) {
  EnsembleSpec spec;
  try {
    const auto j = nlohmann::json::parse(read_file(path));
    const std::string method = j.at("method").get<std::string>();
    if (method == "voting") {
      spec.method = EnsembleMethod::Voting;
    } else if (method == "maximum") {
      spec.method = EnsembleMethod::Maximum;
    } else {
      throw Error(ErrorCode::ConfigInvalid, "unknown ensemble method '" + method + "'");
    }
    spec.k = j.value("k", kEnsembleDepth);
    for (const auto& m : j.at("members")) {
      fs::path p(m.at("path").get<std::string>());
      if (p.is_relative()) p = path.parent_path() / p;
      spec.members.push_back({m.at("label").get<std::string>(), p.string()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigInvalid, path.string() + ": " + e.what());
  }
  spec.validate();
  return spec;
}

inline bool is_matrix_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  char magic[4] = {};
  in.read(magic, 4);
  return in.gcount() == 4 && std::string_view(magic, 4) == kMatrixMagic;
}

/// Result of an ensemble: a matrix when every maximum-ensemble member is a
/// DMX1 matrix, otherwise ranking lists.
struct EnsembleOutput {
  std::optional<DistanceMatrix> matrix;
  std::vector<RankingList> lists;
};

inline EnsembleOutput run_ensemble(const EnsembleSpec& spec) {
  spec.validate();
  EnsembleOutput out;
  const bool matrices = std::all_of(spec.members.begin(), spec.members.end(),
                                    [](const EnsembleMember& m) { return is_matrix_file(m.path); });
  if (spec.method == EnsembleMethod::Maximum && matrices) {
    std::vector<DistanceMatrix> ms;
    for (const auto& m : spec.members) ms.push_back(load_matrix(m.path));
    out.matrix = max_ensemble(ms);
    out.lists = topk(*out.matrix, spec.k);
    return out;
  }
  std::vector<std::vector<RankingList>> models;
  for (const auto& m : spec.members) {
    models.push_back(is_matrix_file(m.path) ? topk(load_matrix(m.path), spec.k) : load_rankings(m.path));
  }
  out.lists = spec.method == EnsembleMethod::Voting ? vote_ensemble(models, spec.k) : max_ensemble_lists(models, spec.k);
  return out;
}

}  // namespace prodretrieve
