#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "prodretrieve/embed_store.hpp"
#include "prodretrieve/error.hpp"
#include "prodretrieve/kernels.hpp"
#include "prodretrieve/parallel.hpp"

namespace prodretrieve {

enum class Orientation { Distance, Similarity };

inline std::string_view orientation_name(Orientation o) {
  return o == Orientation::Distance ? "distance" : "similarity";
}

/// Dense query x gallery distances, row-major, lower is better.
class DistanceMatrix {
 public:
  DistanceMatrix() = default;

  DistanceMatrix(std::vector<std::string> query_ids, std::vector<std::string> gallery_ids,
                 std::vector<float> values)
      : query_ids_(std::move(query_ids)), gallery_ids_(std::move(gallery_ids)), values_(std::move(values)) {
    if (values_.size() != query_ids_.size() * gallery_ids_.size()) {
      throw Error(ErrorCode::ShapeMismatch, "matrix values do not match " + std::to_string(query_ids_.size()) +
                                                " x " + std::to_string(gallery_ids_.size()));
    }
    for (float v : values_) {
      if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "distance matrix has a non-finite entry");
      if (v < 0.0f) throw Error(ErrorCode::MalformedInput, "distance matrix has a negative entry");
    }
  }

  std::size_t rows() const noexcept { return query_ids_.size(); }
  std::size_t cols() const noexcept { return gallery_ids_.size(); }
  const std::vector<std::string>& query_ids() const noexcept { return query_ids_; }
  const std::vector<std::string>& gallery_ids() const noexcept { return gallery_ids_; }
  std::span<const float> values() const noexcept { return values_; }
  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(values_).subspan(i * cols(), cols());
  }
  float at(std::size_t i, std::size_t j) const { return values_[i * cols() + j]; }

  friend bool operator==(const DistanceMatrix&, const DistanceMatrix&) = default;

 private:
  std::vector<std::string> query_ids_;
  std::vector<std::string> gallery_ids_;
  std::vector<float> values_;
};

struct RankEntry {
  std::string gallery_id;
  float score = 0.0f;
  friend bool operator==(const RankEntry&, const RankEntry&) = default;
};

/// Best-first gallery ids for one query. Ties on score go to the
/// lexicographically smaller gallery id.
struct RankingList {
  std::string query_id;
  std::vector<RankEntry> entries;
  std::size_t k = 10;
  Orientation orientation = Orientation::Distance;
  friend bool operator==(const RankingList&, const RankingList&) = default;
};

namespace detail {

/// Strict "a ranks before b" under the given orientation.
inline bool ranks_before(float a_score, std::string_view a_id, float b_score, std::string_view b_id,
                         Orientation o) {
  if (a_score != b_score) return o == Orientation::Distance ? a_score < b_score : a_score > b_score;
  return a_id < b_id;
}

/// Bounded selection of the best k (score, column) pairs seen so far.
class TopKSelector {
  using Item = std::pair<float, std::size_t>;

  // Heap order on "ranks before": front() is the current worst kept entry.
  struct Later {
    const TopKSelector* self;
    bool operator()(const Item& a, const Item& b) const { return self->before(a.first, a.second, b.first, b.second); }
  };

 public:
  TopKSelector(std::size_t k, const std::vector<std::string>& ids, Orientation o) : k_(k), ids_(&ids), o_(o) {
    heap_.reserve(k + 1);
  }

  void push(float score, std::size_t col) {
    if (heap_.size() < k_) {
      heap_.emplace_back(score, col);
      std::push_heap(heap_.begin(), heap_.end(), Later{this});
      return;
    }
    const auto& worst = heap_.front();
    if (!before(score, col, worst.first, worst.second)) return;
    std::pop_heap(heap_.begin(), heap_.end(), Later{this});
    heap_.back() = {score, col};
    std::push_heap(heap_.begin(), heap_.end(), Later{this});
  }

  std::vector<RankEntry> take_sorted() {
    std::sort(heap_.begin(), heap_.end(),
              [this](const auto& a, const auto& b) { return before(a.first, a.second, b.first, b.second); });
    std::vector<RankEntry> out;
    out.reserve(heap_.size());
    for (const auto& [score, col] : heap_) out.push_back({(*ids_)[col], score});
    heap_.clear();
    return out;
  }

 private:
  bool before(float as, std::size_t ac, float bs, std::size_t bc) const {
    return ranks_before(as, (*ids_)[ac], bs, (*ids_)[bc], o_);
  }

  std::size_t k_;
  const std::vector<std::string>* ids_;
  Orientation o_;
  std::vector<Item> heap_;
};

inline void require_normalized(const EmbeddingSet& set, std::string_view what) {
  for (std::size_t i = 0; i < set.size(); ++i) {
    const double n = row_norm(set.row(i));
    if (std::abs(n - 1.0) > 1e-4) {
      throw Error(ErrorCode::NotNormalized,
                  std::string(what) + " row '" + set.id(i) + "' has norm " + std::to_string(n));
    }
  }
}

inline float cosine_distance_from_dot(float dot) { return std::clamp(1.0f - dot, 0.0f, 2.0f); }

/// Calls sink(query_index, gallery_index, distance) for every pair of the
/// query range [q_begin, q_end), in cache-sized gallery blocks.
template <typename Sink>
void for_each_distance(const EmbeddingSet& queries, const EmbeddingSet& gallery, std::size_t q_begin,
                       std::size_t q_end, Sink&& sink) {
  constexpr std::size_t kQueryGroup = 4;
  constexpr std::size_t kGalleryBlock = 2048;
  const std::size_t dim = queries.dim();
  const float* qdata = queries.values().data();
  const float* gdata = gallery.values().data();
  for (std::size_t g0 = 0; g0 < gallery.size(); g0 += kGalleryBlock) {
    const std::size_t g1 = std::min(gallery.size(), g0 + kGalleryBlock);
    std::size_t q = q_begin;
    for (; q + kQueryGroup <= q_end; q += kQueryGroup) {
      const float* group[kQueryGroup];
      for (std::size_t j = 0; j < kQueryGroup; ++j) group[j] = qdata + (q + j) * dim;
      float dots[kQueryGroup];
      for (std::size_t g = g0; g < g1; ++g) {
        kernels::dot_block<kQueryGroup>(group, gdata + g * dim, dim, dots);
        for (std::size_t j = 0; j < kQueryGroup; ++j) sink(q + j, g, cosine_distance_from_dot(dots[j]));
      }
    }
    for (; q < q_end; ++q) {
      for (std::size_t g = g0; g < g1; ++g) {
        sink(q, g, cosine_distance_from_dot(kernels::dot(qdata + q * dim, gdata + g * dim, dim)));
      }
    }
  }
}

inline void check_search_inputs(const EmbeddingSet& queries, const EmbeddingSet& gallery) {
  if (queries.dim() != gallery.dim()) {
    throw Error(ErrorCode::DimMismatch,
                "query dim " + std::to_string(queries.dim()) + " != gallery dim " + std::to_string(gallery.dim()));
  }
  require_normalized(queries, "query");
  require_normalized(gallery, "gallery");
}

inline constexpr std::size_t kQueriesPerTask = 16;

}  // namespace detail

/// values[i][j] = 1 - dot(query_i, gallery_j), clamped to [0, 2].
inline DistanceMatrix pairwise_cosine_distance(const EmbeddingSet& queries, const EmbeddingSet& gallery,
                                               unsigned threads = 1) {
  detail::check_search_inputs(queries, gallery);
  const std::size_t cols = gallery.size();
  std::vector<float> values(queries.size() * cols);
  parallel_for_chunks(queries.size(), threads, detail::kQueriesPerTask, [&](std::size_t b, std::size_t e) {
    detail::for_each_distance(queries, gallery, b, e,
                              [&](std::size_t q, std::size_t g, float d) { values[q * cols + g] = d; });
  });
  return DistanceMatrix(queries.ids(), gallery.ids(), std::move(values));
}

/// The k best gallery entries of every row, best first.
inline std::vector<RankingList> topk(const DistanceMatrix& matrix, std::size_t k,
                                     Orientation orientation = Orientation::Distance) {
  if (k == 0) throw Error(ErrorCode::InvalidParams, "k must be >= 1");
  std::vector<RankingList> out(matrix.rows());
  for (std::size_t i = 0; i < matrix.rows(); ++i) {
    detail::TopKSelector sel(k, matrix.gallery_ids(), orientation);
    const auto row = matrix.row(i);
    for (std::size_t j = 0; j < row.size(); ++j) sel.push(row[j], j);
    out[i] = RankingList{matrix.query_ids()[i], sel.take_sorted(), k, orientation};
  }
  return out;
}

/// Same result as topk(pairwise_cosine_distance(q, g), k) without holding the
/// full matrix in memory.
inline std::vector<RankingList> search_topk(const EmbeddingSet& queries, const EmbeddingSet& gallery,
                                            std::size_t k, unsigned threads = 1) {
  if (k == 0) throw Error(ErrorCode::InvalidParams, "k must be >= 1");
  detail::check_search_inputs(queries, gallery);
  std::vector<RankingList> out(queries.size());
  parallel_for_chunks(queries.size(), threads, detail::kQueriesPerTask, [&](std::size_t b, std::size_t e) {
    std::vector<detail::TopKSelector> sel;
    sel.reserve(e - b);
    for (std::size_t q = b; q < e; ++q) sel.emplace_back(k, gallery.ids(), Orientation::Distance);
    detail::for_each_distance(queries, gallery, b, e,
                              [&](std::size_t q, std::size_t g, float d) { sel[q - b].push(d, g); });
    for (std::size_t q = b; q < e; ++q) {
      out[q] = RankingList{queries.id(q), sel[q - b].take_sorted(), k, Orientation::Distance};
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Global-local matching over gallery crops
// ---------------------------------------------------------------------------

enum class CropScheme { Index5Crop, Index6Crop, Custom };

inline std::string_view crop_scheme_name(CropScheme s) {
  switch (s) {
    case CropScheme::Index5Crop: return "index5crop";
    case CropScheme::Index6Crop: return "index6crop";
    case CropScheme::Custom: return "custom";
  }
  return "custom";
}

inline CropScheme parse_crop_scheme(std::string_view s) {
  if (s == "index5crop") return CropScheme::Index5Crop;
  if (s == "index6crop") return CropScheme::Index6Crop;
  if (s == "custom") return CropScheme::Custom;
  throw Error(ErrorCode::InvalidCropMap, "unknown crop scheme '" + std::string(s) + "'");
}

/// Which gallery crop embeddings belong to which parent gallery image.
class CropGroupMap {
 public:
  using Group = std::pair<std::string, std::vector<std::string>>;

  CropGroupMap(CropScheme scheme, std::vector<Group> groups) : scheme_(scheme), groups_(std::move(groups)) {
    const std::size_t required = scheme_ == CropScheme::Index5Crop ? 5 : scheme_ == CropScheme::Index6Crop ? 6 : 0;
    std::unordered_map<std::string_view, bool> parents;
    for (const auto& [parent, crops] : groups_) {
      if (!parents.emplace(parent, true).second) throw Error(ErrorCode::InvalidCropMap, "duplicate parent '" + parent + "'");
      if (crops.empty()) throw Error(ErrorCode::InvalidCropMap, "parent '" + parent + "' has no crops");
      if (required != 0 && crops.size() != required) {
        throw Error(ErrorCode::InvalidCropMap, "parent '" + parent + "' has " + std::to_string(crops.size()) +
                                                   " crops, scheme " + std::string(crop_scheme_name(scheme_)) +
                                                   " needs " + std::to_string(required));
      }
      for (const auto& c : crops) {
        if (!crop_to_parent_.emplace(c, parent).second) {
          throw Error(ErrorCode::InvalidCropMap, "crop '" + c + "' maps to more than one parent");
        }
      }
    }
  }

  CropScheme scheme() const noexcept { return scheme_; }
  const std::vector<Group>& groups() const noexcept { return groups_; }
  const std::string* parent_of(const std::string& crop) const {
    auto it = crop_to_parent_.find(crop);
    return it == crop_to_parent_.end() ? nullptr : &it->second;
  }

 private:
  CropScheme scheme_;
  std::vector<Group> groups_;
  std::unordered_map<std::string, std::string> crop_to_parent_;
};

/// Parent distance = min over its crops. Parents appear in order of the first
/// occurrence of any of their crops in matrix.gallery_ids().
inline DistanceMatrix aggregate_crops(const DistanceMatrix& matrix, const CropGroupMap& map) {
  std::vector<std::string> parents;
  std::unordered_map<std::string, std::size_t> parent_col;
  std::vector<std::size_t> col_of(matrix.cols());
  for (std::size_t j = 0; j < matrix.cols(); ++j) {
    const std::string* parent = map.parent_of(matrix.gallery_ids()[j]);
    if (!parent) throw Error(ErrorCode::UnmappedCropId, "crop '" + matrix.gallery_ids()[j] + "' is not in the crop map");
    auto [it, inserted] = parent_col.emplace(*parent, parents.size());
    if (inserted) parents.push_back(*parent);
    col_of[j] = it->second;
  }
  const std::size_t pc = parents.size();
  std::vector<float> values(matrix.rows() * pc, std::numeric_limits<float>::infinity());
  for (std::size_t i = 0; i < matrix.rows(); ++i) {
    const auto row = matrix.row(i);
    float* out = values.data() + i * pc;
    for (std::size_t j = 0; j < row.size(); ++j) out[col_of[j]] = std::min(out[col_of[j]], row[j]);
  }
  return DistanceMatrix(matrix.query_ids(), std::move(parents), std::move(values));
}

}  // namespace prodretrieve
