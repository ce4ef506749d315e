#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "prodretrieve/embed_store.hpp"
#include "prodretrieve/error.hpp"
#include "prodretrieve/fileio.hpp"
#include "prodretrieve/ranking_io.hpp"
#include "prodretrieve/search_core.hpp"

namespace prodretrieve {

/// Relevant gallery ids per query, in query order.
class GroundTruth {
 public:
  using Entry = std::pair<std::string, std::vector<std::string>>;

  GroundTruth() = default;
  explicit GroundTruth(std::vector<Entry> entries) : entries_(std::move(entries)) {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
      auto& [query, relevant] = entries_[i];
      if (relevant.empty()) throw Error(ErrorCode::MalformedInput, "query '" + query + "' has no relevant items");
      if (!index_.emplace(query, i).second) throw Error(ErrorCode::MalformedInput, "duplicate query '" + query + "'");
      std::sort(relevant.begin(), relevant.end());
      relevant.erase(std::unique(relevant.begin(), relevant.end()), relevant.end());
    }
  }

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  const std::vector<std::string>* relevant(const std::string& query) const {
    auto it = index_.find(query);
    return it == index_.end() ? nullptr : &entries_[it->second].second;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline std::string encode_ground_truth(const GroundTruth& gt) {
  std::string out;
  for (const auto& [q, rel] : gt.entries()) {
    out += ojson{{"query", q}, {"relevant", rel}}.dump();
    out += '\n';
  }
  return out;
}

inline GroundTruth load_ground_truth(const fs::path& path) {
  const std::string text = read_file(path);
  std::vector<GroundTruth::Entry> entries;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(start, end - start);
    start = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      entries.emplace_back(j.at("query").get<std::string>(), j.at("relevant").get<std::vector<std::string>>());
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::MalformedInput, path.string() + ": " + e.what());
    }
  }
  return GroundTruth(std::move(entries));
}

struct EvalReport {
  double mar_at_k = 0.0;
  std::size_t k = 10;
  std::size_t n_queries = 0;
  std::size_t n_missing = 0;
  std::vector<std::pair<std::string, double>> per_query;  // ground-truth order
};

inline ojson to_json(const EvalReport& r, bool per_query = false) {
  ojson j{{"mar_at_k", r.mar_at_k}, {"k", r.k}, {"n_queries", r.n_queries}, {"n_missing", r.n_missing}};
  if (per_query) {
    ojson pq = ojson::object();
    for (const auto& [q, v] : r.per_query) pq[q] = v;
    j["per_query"] = std::move(pq);
  }
  return j;
}

/// Mean over ground-truth queries of |top-k & relevant| / min(|relevant|, k).
/// Queries without a list score 0 and are counted in n_missing. When
/// `gallery_ids` is given, any listed id outside it is UnknownGalleryId.
inline EvalReport mar_at_k(const std::vector<RankingList>& lists, const GroundTruth& gt, std::size_t k = 10,
                           const std::vector<std::string>* gallery_ids = nullptr) {
  if (k == 0) throw Error(ErrorCode::InvalidParams, "k must be >= 1");
  std::unordered_set<std::string_view> universe;
  if (gallery_ids) universe.insert(gallery_ids->begin(), gallery_ids->end());
  std::unordered_map<std::string_view, const RankingList*> by_query;
  for (const auto& l : lists) {
    if (gallery_ids) {
      for (const auto& e : l.entries) {
        if (!universe.count(e.gallery_id)) {
          throw Error(ErrorCode::UnknownGalleryId, "'" + e.gallery_id + "' in list for '" + l.query_id + "'");
        }
      }
    }
    if (!by_query.emplace(l.query_id, &l).second) {
      throw Error(ErrorCode::MalformedInput, "two ranking lists for query '" + l.query_id + "'");
    }
  }
  EvalReport r;
  r.k = k;
  r.n_queries = gt.size();
  double sum = 0.0;
  for (const auto& [query, relevant] : gt.entries()) {
    auto it = by_query.find(query);
    double recall = 0.0;
    if (it == by_query.end()) {
      ++r.n_missing;
    } else {
      const auto& entries = it->second->entries;
      std::unordered_set<std::string_view> counted;
      std::size_t hits = 0;
      for (std::size_t i = 0; i < std::min(k, entries.size()); ++i) {
        const auto& id = entries[i].gallery_id;
        if (counted.insert(id).second && std::binary_search(relevant.begin(), relevant.end(), id)) ++hits;
      }
      recall = double(hits) / double(std::min(relevant.size(), k));
    }
    r.per_query.emplace_back(query, recall);
    sum += recall;
  }
  r.mar_at_k = gt.size() ? sum / double(gt.size()) : 0.0;
  return r;
}

// ---------------------------------------------------------------------------
// Synthetic benchmark
// ---------------------------------------------------------------------------

/// Seeded standard normals via Box-Muller over mt19937_64, so streams are
/// identical across standard library implementations.
class GaussianStream {
 public:
  explicit GaussianStream(std::uint64_t seed) : rng_(seed) {}

  double next() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

 private:
  double uniform() { return double(rng_() >> 11) * 0x1.0p-53; }

  std::mt19937_64 rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

struct SyntheticParams {
  std::size_t n_classes = 200;
  std::size_t gallery_per_class = 10;
  std::size_t queries_per_class = 2;
  std::size_t dim = 64;
  double noise_sigma = 0.35;
  std::uint64_t seed = 7;
};

struct SyntheticData {
  EmbeddingSet gallery;
  EmbeddingSet queries;
  GroundTruth gt;
};

namespace detail {

inline std::string synth_id(char kind, std::size_t cls, std::size_t j) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "c%06zu_%c%04zu", cls, kind, j);
  return buf;
}

inline void normalized_into(const std::vector<double>& v, std::vector<float>& out) {
  double s = 0.0;
  for (double x : v) s += x * x;
  const double n = std::sqrt(s);
  if (!(n > kZeroNormEps)) throw Error(ErrorCode::ZeroVector, "synthetic vector has zero norm");
  for (double x : v) out.push_back(static_cast<float>(x / n));
}

}  // namespace detail

/// Per class a random unit centroid; members are normalize(centroid + noise).
/// Draw order: all centroids, then gallery rows class by class, then queries.
inline SyntheticData gen_synthetic(const SyntheticParams& p) {
  if (p.n_classes < 1 || p.gallery_per_class < 1 || p.queries_per_class < 1 || p.dim < 2 ||
      !(p.noise_sigma >= 0.0) || !std::isfinite(p.noise_sigma)) {
    throw Error(ErrorCode::InvalidParams, "synthetic benchmark parameters out of range");
  }
  GaussianStream g(p.seed);
  std::vector<std::vector<double>> centroids(p.n_classes, std::vector<double>(p.dim));
  for (auto& c : centroids) {
    double s;
    do {
      s = 0.0;
      for (auto& x : c) {
        x = g.next();
        s += x * x;
      }
    } while (!(std::sqrt(s) > kZeroNormEps));
    for (auto& x : c) x /= std::sqrt(s);
  }
  auto members = [&](char kind, std::size_t per_class, std::vector<std::string>& ids, std::vector<float>& values) {
    std::vector<double> v(p.dim);
    for (std::size_t c = 0; c < p.n_classes; ++c) {
      for (std::size_t j = 0; j < per_class; ++j) {
        for (std::size_t d = 0; d < p.dim; ++d) v[d] = centroids[c][d] + p.noise_sigma * g.next();
        ids.push_back(detail::synth_id(kind, c, j));
        detail::normalized_into(v, values);
      }
    }
  };
  std::vector<std::string> gids, qids;
  std::vector<float> gvals, qvals;
  members('g', p.gallery_per_class, gids, gvals);
  members('q', p.queries_per_class, qids, qvals);

  std::vector<GroundTruth::Entry> gt;
  for (std::size_t c = 0; c < p.n_classes; ++c) {
    std::vector<std::string> rel;
    for (std::size_t j = 0; j < p.gallery_per_class; ++j) rel.push_back(detail::synth_id('g', c, j));
    for (std::size_t j = 0; j < p.queries_per_class; ++j) gt.emplace_back(detail::synth_id('q', c, j), rel);
  }
  return {EmbeddingSet(std::move(gids), p.dim, std::move(gvals)),
          EmbeddingSet(std::move(qids), p.dim, std::move(qvals)), GroundTruth(std::move(gt))};
}

/// normalize(row + sigma * gaussian) per row; simulates another model or test
/// resolution looking at the same items.
inline EmbeddingSet perturb_embeddings(const EmbeddingSet& set, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw Error(ErrorCode::InvalidParams, "sigma must be >= 0");
  GaussianStream g(seed);
  std::vector<float> values;
  values.reserve(set.values().size());
  std::vector<double> v(set.dim());
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto row = set.row(i);
    for (std::size_t d = 0; d < set.dim(); ++d) v[d] = double(row[d]) + sigma * g.next();
    detail::normalized_into(v, values);
  }
  return EmbeddingSet(set.ids(), set.dim(), std::move(values));
}

}  // namespace prodretrieve
