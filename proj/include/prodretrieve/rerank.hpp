#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "prodretrieve/embed_store.hpp"
#include "prodretrieve/error.hpp"
#include "prodretrieve/kernels.hpp"
#include "prodretrieve/parallel.hpp"
#include "prodretrieve/search_core.hpp"

namespace prodretrieve {

/// k-reciprocal re-ranking parameters. k1 is the reciprocal neighborhood
/// size, k2 the local query-expansion size (counting the probe itself) and
/// lambda the weight kept on the original distance.
struct RerankParams {
  int k1 = 20;
  int k2 = 6;
  double lambda = 0.3;

  void validate() const {
    if (k1 < 1 || k2 < 1 || k2 > k1) {
      throw Error(ErrorCode::InvalidParams, "need 1 <= k2 <= k1, got k1=" + std::to_string(k1) +
                                                " k2=" + std::to_string(k2));
    }
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
      throw Error(ErrorCode::InvalidParams, "lambda must lie in [0, 1], got " + std::to_string(lambda));
    }
  }

  int half_k1() const { return (k1 + 1) / 2; }
};

/// Shared read-only state for re-ranking one query set against one gallery.
///
/// The probe set P is queries followed by gallery items; probe index p < nq is
/// query p, otherwise gallery item p - nq. Original distances are cosine
/// distances. Neighbor lists exclude the probe itself and break distance ties
/// by ascending probe index.
class KReciprocalIndex {
 public:
  using Index = std::uint32_t;
  /// Sparse weight vector over probe indices, sorted by index.
  using SparseVec = std::vector<std::pair<Index, double>>;

  KReciprocalIndex(const EmbeddingSet& queries, const EmbeddingSet& gallery, RerankParams params,
                   unsigned threads = 1)
      : queries_(&queries), gallery_(&gallery), params_(params) {
    params_.validate();
    detail::check_search_inputs(queries, gallery);
    nq_ = queries.size();
    n_ = nq_ + gallery.size();
    if (n_ <= static_cast<std::size_t>(params_.k1)) {
      throw Error(ErrorCode::TooFewItems, "re-ranking needs more than k1=" + std::to_string(params_.k1) +
                                              " items, got " + std::to_string(n_));
    }
    build_neighbors(threads);
    const auto k1 = static_cast<std::size_t>(params_.k1);
    const auto h = static_cast<std::size_t>(params_.half_k1());
    reciprocal_k1_.resize(n_);
    reciprocal_half_.resize(n_);
    parallel_for(n_, threads, [&](std::size_t p) {
      reciprocal_k1_[p] = reciprocal(p, k1);
      reciprocal_half_[p] = reciprocal(p, h);
    });
    expanded_.resize(n_);
    weights_.resize(n_);
    parallel_for(n_, threads, [&](std::size_t p) {
      expanded_[p] = expand(p);
      weights_[p].reserve(expanded_[p].size());
      for (Index g : expanded_[p]) weights_[p].emplace_back(g, std::exp(-double(distance(p, g))));
    });
    build_gallery_index(threads);
  }

  std::size_t probe_count() const noexcept { return n_; }
  std::size_t query_count() const noexcept { return nq_; }
  std::size_t gallery_count() const noexcept { return n_ - nq_; }
  const RerankParams& params() const noexcept { return params_; }

  /// Cosine distance between probes a and b (symmetric bit-for-bit).
  float distance(std::size_t a, std::size_t b) const {
    return detail::cosine_distance_from_dot(kernels::dot(vec(a), vec(b), queries_->dim()));
  }

  /// N(p, k) for k <= k1: the k nearest probes, nearest first.
  std::span<const Index> neighbors(std::size_t p, std::size_t k) const {
    return std::span<const Index>(nn_).subspan(p * depth_, std::min(k, depth_));
  }

  /// R(p, k) = {g in N(p, k) : p in N(g, k)}, in N(p, k) order.
  std::vector<Index> reciprocal(std::size_t p, std::size_t k) const {
    std::vector<Index> out;
    for (Index g : neighbors(p, k)) {
      const auto back = neighbors(g, k);
      if (std::find(back.begin(), back.end(), static_cast<Index>(p)) != back.end()) out.push_back(g);
    }
    return out;
  }

  /// R*(p, k1), sorted ascending by probe index.
  const std::vector<Index>& expanded(std::size_t p) const { return expanded_[p]; }

  /// V_p before local query expansion.
  const SparseVec& weights(std::size_t p) const { return weights_[p]; }

  /// Mean of V_q over q in {p} + N(p, k2 - 1).
  SparseVec expanded_weights(std::size_t p, std::vector<double>& scratch, std::vector<Index>& touched) const {
    if (params_.k2 == 1) return weights_[p];
    scratch.assign(n_, 0.0);
    touched.clear();
    auto add = [&](std::size_t q) {
      for (const auto& [j, w] : weights_[q]) {
        if (scratch[j] == 0.0) touched.push_back(j);
        scratch[j] += w;
      }
    };
    add(p);
    const auto nbrs = neighbors(p, static_cast<std::size_t>(params_.k2 - 1));
    for (Index q : nbrs) add(q);
    const double count = double(1 + nbrs.size());
    std::sort(touched.begin(), touched.end());
    SparseVec out;
    out.reserve(touched.size());
    for (Index j : touched) out.emplace_back(j, scratch[j] / count);
    return out;
  }

  /// Writes dJ(query, g) for every gallery item g into `out`.
  void jaccard_row(std::size_t query, std::span<double> out) const {
    std::vector<double> scratch;
    std::vector<Index> touched;
    const SparseVec vq = expanded_weights(query, scratch, touched);
    double sum_q = 0.0;
    for (const auto& [j, w] : vq) sum_q += w;
    std::vector<double> min_sum(gallery_count(), 0.0);
    for (const auto& [j, wq] : vq) {
      for (const auto& [g, wg] : inverted_[j]) min_sum[g] += std::min(wq, wg);
    }
    for (std::size_t g = 0; g < gallery_count(); ++g) {
      const double max_sum = sum_q + gallery_sums_[g] - min_sum[g];
      out[g] = max_sum > 0.0 ? 1.0 - min_sum[g] / max_sum : 1.0;
    }
  }

  /// Re-ranked distance rows for the given query indices, in that order.
  DistanceMatrix rerank_rows(std::span<const std::size_t> query_indices, unsigned threads = 1) const {
    return rows(query_indices, threads, params_.lambda);
  }

  /// Pure Jaccard distance rows (the lambda = 0 end point).
  DistanceMatrix jaccard_rows(std::span<const std::size_t> query_indices, unsigned threads = 1) const {
    return rows(query_indices, threads, 0.0);
  }

 private:
  const float* vec(std::size_t p) const {
    return p < nq_ ? queries_->row(p).data() : gallery_->row(p - nq_).data();
  }

  void build_neighbors(unsigned threads) {
    depth_ = static_cast<std::size_t>(params_.k1);
    nn_.assign(n_ * depth_, 0);
    parallel_for(n_, threads, [&](std::size_t p) {
      std::vector<std::pair<float, Index>> heap;
      heap.reserve(depth_ + 1);
      for (std::size_t q = 0; q < n_; ++q) {
        if (q == p) continue;
        const std::pair<float, Index> cand{distance(p, q), static_cast<Index>(q)};
        if (heap.size() < depth_) {
          heap.push_back(cand);
          std::push_heap(heap.begin(), heap.end());
        } else if (cand < heap.front()) {
          std::pop_heap(heap.begin(), heap.end());
          heap.back() = cand;
          std::push_heap(heap.begin(), heap.end());
        }
      }
      std::sort(heap.begin(), heap.end());
      for (std::size_t r = 0; r < depth_; ++r) nn_[p * depth_ + r] = heap[r].second;
    });
  }

  std::vector<Index> expand(std::size_t p) const {
    const auto& base = reciprocal_k1_[p];
    std::vector<Index> out(base.begin(), base.end());
    std::vector<Index> sorted_base(base.begin(), base.end());
    std::sort(sorted_base.begin(), sorted_base.end());
    for (Index c : base) {
      const auto& cand = reciprocal_half_[c];
      std::size_t overlap = 0;
      for (Index x : cand) overlap += std::binary_search(sorted_base.begin(), sorted_base.end(), x);
      // |R(c, k1/2) & R(p, k1)| >= 2/3 |R(c, k1/2)|, in integers.
      if (3 * overlap >= 2 * cand.size()) out.insert(out.end(), cand.begin(), cand.end());
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  void build_gallery_index(unsigned threads) {
    const std::size_t ng = gallery_count();
    std::vector<SparseVec> gallery_vecs(ng);
    gallery_sums_.assign(ng, 0.0);
    parallel_for(ng, threads, [&](std::size_t g) {
      std::vector<double> scratch;
      std::vector<Index> touched;
      gallery_vecs[g] = expanded_weights(nq_ + g, scratch, touched);
      double s = 0.0;
      for (const auto& [j, w] : gallery_vecs[g]) s += w;
      gallery_sums_[g] = s;
    });
    inverted_.assign(n_, {});
    for (std::size_t g = 0; g < ng; ++g) {
      for (const auto& [j, w] : gallery_vecs[g]) inverted_[j].emplace_back(static_cast<Index>(g), w);
    }
  }

  DistanceMatrix rows(std::span<const std::size_t> query_indices, unsigned threads, double lambda) const {
    const std::size_t ng = gallery_count();
    std::vector<std::string> ids;
    ids.reserve(query_indices.size());
    for (std::size_t q : query_indices) {
      if (q >= nq_) throw Error(ErrorCode::InvalidParams, "query index out of range");
      ids.push_back(queries_->id(q));
    }
    std::vector<float> values(query_indices.size() * ng);
    parallel_for(query_indices.size(), threads, [&](std::size_t r) {
      const std::size_t q = query_indices[r];
      std::vector<double> dj(ng);
      jaccard_row(q, dj);
      for (std::size_t g = 0; g < ng; ++g) {
        const double d = distance(q, nq_ + g);
        values[r * ng + g] = static_cast<float>((1.0 - lambda) * dj[g] + lambda * d);
      }
    });
    return DistanceMatrix(std::move(ids), gallery_->ids(), std::move(values));
  }

  const EmbeddingSet* queries_;
  const EmbeddingSet* gallery_;
  RerankParams params_;
  std::size_t nq_ = 0, n_ = 0, depth_ = 0;
  std::vector<Index> nn_;
  std::vector<std::vector<Index>> reciprocal_k1_, reciprocal_half_, expanded_;
  std::vector<SparseVec> weights_;
  std::vector<std::vector<std::pair<Index, double>>> inverted_;
  std::vector<double> gallery_sums_;
};

/// Re-ranked query x gallery distances:
/// (1 - lambda) * Jaccard(expanded k-reciprocal sets) + lambda * cosine distance.
inline DistanceMatrix kreciprocal_rerank(const EmbeddingSet& queries, const EmbeddingSet& gallery,
                                         const RerankParams& params, unsigned threads = 1) {
  const KReciprocalIndex index(queries, gallery, params, threads);
  std::vector<std::size_t> all(queries.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return index.rerank_rows(all, threads);
}

}  // namespace prodretrieve
