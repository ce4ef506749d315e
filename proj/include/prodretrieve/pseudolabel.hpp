#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "prodretrieve/embed_store.hpp"
#include "prodretrieve/error.hpp"
#include "prodretrieve/fileio.hpp"
#include "prodretrieve/kernels.hpp"
#include "prodretrieve/parallel.hpp"
#include "prodretrieve/ranking_io.hpp"
#include "prodretrieve/search_core.hpp"

namespace prodretrieve {

inline constexpr std::size_t kConfidentClusterLimit = 10;

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n), rank_(n, 0) { std::iota(parent_.begin(), parent_.end(), 0); }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  void merge(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (rank_[a] < rank_[b]) std::swap(a, b);
    parent_[b] = a;
    if (rank_[a] == rank_[b]) ++rank_[a];
  }

 private:
  std::vector<std::size_t> parent_;
  std::vector<std::uint8_t> rank_;
};

/// Disjoint clusters (each of size >= 2) plus the ids left unclustered.
/// Members are sorted ascending; clusters are ordered by smallest member.
struct ClusterResult {
  std::vector<std::vector<std::string>> clusters;
  std::vector<std::string> pool;
  double threshold = 0.0;

  std::size_t clustered_images() const {
    std::size_t n = 0;
    for (const auto& c : clusters) n += c.size();
    return n;
  }
  friend bool operator==(const ClusterResult&, const ClusterResult&) = default;
};

/// Connected components of the graph with an edge wherever cosine similarity
/// reaches `threshold`.
inline ClusterResult cluster_features(const EmbeddingSet& set, double threshold, unsigned threads = 1) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw Error(ErrorCode::InvalidParams, "threshold must lie in (0, 1), got " + std::to_string(threshold));
  }
  detail::require_normalized(set, "cluster input");
  const std::size_t n = set.size(), dim = set.dim();
  std::vector<std::vector<std::size_t>> edges(n);
  parallel_for(n, threads, [&](std::size_t i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (double(kernels::dot(set.row(i).data(), set.row(j).data(), dim)) >= threshold) edges[i].push_back(j);
    }
  });
  UnionFind uf(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j : edges[i]) uf.merge(i, j);
  }
  std::unordered_map<std::size_t, std::vector<std::string>> comps;
  for (std::size_t i = 0; i < n; ++i) comps[uf.find(i)].push_back(set.id(i));
  ClusterResult out;
  out.threshold = threshold;
  for (auto& [root, members] : comps) {
    std::sort(members.begin(), members.end());
    if (members.size() >= 2) {
      out.clusters.push_back(std::move(members));
    } else {
      out.pool.push_back(std::move(members.front()));
    }
  }
  std::sort(out.clusters.begin(), out.clusters.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });
  std::sort(out.pool.begin(), out.pool.end());
  return out;
}

/// Keeps clusters with fewer than `max_size` members; the rest go to the pool.
inline ClusterResult filter_confident(const ClusterResult& in, std::size_t max_size = kConfidentClusterLimit) {
  ClusterResult out;
  out.threshold = in.threshold;
  out.pool = in.pool;
  for (const auto& c : in.clusters) {
    if (c.size() < max_size) {
      out.clusters.push_back(c);
    } else {
      out.pool.insert(out.pool.end(), c.begin(), c.end());
    }
  }
  std::sort(out.pool.begin(), out.pool.end());
  return out;
}

struct PseudoLabelAssignment {
  /// (id, class) in class order; cluster classes first, then singletons.
  std::vector<std::pair<std::string, std::size_t>> class_of;
  std::size_t n_classes = 0;
  std::size_t n_cluster_classes = 0;
  std::size_t n_singleton_classes = 0;
  std::size_t n_images = 0;
  friend bool operator==(const PseudoLabelAssignment&, const PseudoLabelAssignment&) = default;
};

namespace detail {

/// Uniform integer in [0, bound) from a 64-bit engine, by rejection, so the
/// draw sequence does not depend on the standard library's distributions.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % bound;
}

}  // namespace detail

/// One class per kept cluster, then (target_classes - clusters) one-image
/// classes drawn from the pool without replacement using `seed`.
inline PseudoLabelAssignment assign_pseudo_labels(const ClusterResult& kept, std::size_t target_classes,
                                                  std::uint64_t seed) {
  const std::size_t n_clusters = kept.clusters.size();
  if (target_classes < n_clusters) {
    throw Error(ErrorCode::TargetBelowClusterCount, "target " + std::to_string(target_classes) + " < " +
                                                        std::to_string(n_clusters) + " clusters");
  }
  const std::size_t need = target_classes - n_clusters;
  if (kept.pool.size() < need) {
    throw Error(ErrorCode::PoolTooSmall, "need " + std::to_string(need) + " singletons, pool has " +
                                             std::to_string(kept.pool.size()));
  }
  PseudoLabelAssignment out;
  for (std::size_t c = 0; c < n_clusters; ++c) {
    for (const auto& id : kept.clusters[c]) out.class_of.emplace_back(id, c);
  }
  std::vector<std::string> pool = kept.pool;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < need; ++i) {
    const std::size_t j = i + detail::uniform_below(rng, pool.size() - i);
    std::swap(pool[i], pool[j]);
    out.class_of.emplace_back(pool[i], n_clusters + i);
  }
  out.n_cluster_classes = n_clusters;
  out.n_singleton_classes = need;
  out.n_classes = target_classes;
  out.n_images = kept.clustered_images() + need;
  return out;
}

// ---------------------------------------------------------------------------
// Files: cluster dump {"threshold", "clusters", "pool"}; labels as JSON Lines
// {"id": ..., "class": int}.
// ---------------------------------------------------------------------------

inline ojson to_json(const ClusterResult& r) {
  return {{"threshold", r.threshold}, {"clusters", r.clusters}, {"pool", r.pool}};
}

inline ClusterResult cluster_result_from_json(const nlohmann::json& j) {
  try {
    ClusterResult r;
    r.threshold = j.value("threshold", 0.0);
    r.clusters = j.at("clusters").get<std::vector<std::vector<std::string>>>();
    r.pool = j.at("pool").get<std::vector<std::string>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedInput, std::string("bad cluster dump: ") + e.what());
  }
}

inline ClusterResult load_cluster_result(const fs::path& path) {
  try {
    return cluster_result_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::MalformedInput, path.string() + ": " + e.what());
  }
}

inline std::string encode_labels(const PseudoLabelAssignment& a) {
  std::string out;
  for (const auto& [id, cls] : a.class_of) {
    ojson j{{"id", id}, {"class", cls}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline ojson summary_json(const PseudoLabelAssignment& a) {
  return {{"n_classes", a.n_classes},
          {"n_cluster_classes", a.n_cluster_classes},
          {"n_singleton_classes", a.n_singleton_classes},
          {"n_images", a.n_images}};
}

}  // namespace prodretrieve
