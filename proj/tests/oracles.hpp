#pragma once

// Reference implementations written straight from the definitions: dense
// loops, full sorts, no shared kernels. Slow on purpose.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "prodretrieve/prodretrieve.hpp"

namespace oracle {

namespace pr = prodretrieve;
using Dense = std::vector<std::vector<double>>;

inline double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += double(a[i]) * double(b[i]);
  return s;
}

inline Dense cosine_distance(const pr::EmbeddingSet& q, const pr::EmbeddingSet& g) {
  Dense d(q.size(), std::vector<double>(g.size()));
  for (std::size_t i = 0; i < q.size(); ++i) {
    for (std::size_t j = 0; j < g.size(); ++j) d[i][j] = std::clamp(1.0 - dot(q.row(i), g.row(j)), 0.0, 2.0);
  }
  return d;
}

/// Sorts every gallery column of a row and truncates.
inline std::vector<pr::RankingList> topk_full_sort(const pr::DistanceMatrix& m, std::size_t k) {
  std::vector<pr::RankingList> out;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    std::vector<std::pair<float, std::string>> all;
    for (std::size_t j = 0; j < m.cols(); ++j) all.emplace_back(m.at(i, j), m.gallery_ids()[j]);
    std::sort(all.begin(), all.end());
    pr::RankingList l{m.query_ids()[i], {}, k, pr::Orientation::Distance};
    for (std::size_t r = 0; r < std::min(k, all.size()); ++r) l.entries.push_back({all[r].second, all[r].first});
    out.push_back(std::move(l));
  }
  return out;
}

/// k-reciprocal re-ranking over the joint set P = queries + gallery.
/// Neighbors of p exclude p, ties by lower joint index; R*(p) adds R(c, ceil(k1/2))
/// for c in R(p, k1) when at least 2/3 of it lies in R(p, k1); V_p(g) =
/// exp(-d(p,g)) on R*(p); local expansion averages V over p and its k2-1
/// nearest neighbors; dJ = 1 - sum(min)/sum(max).
inline Dense rerank(const pr::EmbeddingSet& q, const pr::EmbeddingSet& g, int k1, int k2, double lambda) {
  const std::size_t nq = q.size(), n = q.size() + g.size();
  auto vec = [&](std::size_t p) { return p < nq ? q.row(p) : g.row(p - nq); };
  Dense d(n, std::vector<double>(n));
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) d[a][b] = std::clamp(1.0 - dot(vec(a), vec(b)), 0.0, 2.0);
  }
  auto knn = [&](std::size_t p, int k) {
    std::vector<std::size_t> order;
    for (std::size_t x = 0; x < n; ++x) {
      if (x != p) order.push_back(x);
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return d[p][a] < d[p][b]; });
    order.resize(static_cast<std::size_t>(k));
    return order;
  };
  auto reciprocal = [&](std::size_t p, int k) {
    std::set<std::size_t> r;
    for (std::size_t x : knn(p, k)) {
      const auto back = knn(x, k);
      if (std::find(back.begin(), back.end(), p) != back.end()) r.insert(x);
    }
    return r;
  };
  const int half = (k1 + 1) / 2;
  Dense v(n, std::vector<double>(n, 0.0));
  for (std::size_t p = 0; p < n; ++p) {
    const std::set<std::size_t> base = reciprocal(p, k1);
    std::set<std::size_t> star = base;
    for (std::size_t c : base) {
      const std::set<std::size_t> rc = reciprocal(c, half);
      std::size_t inside = 0;
      for (std::size_t x : rc) inside += base.count(x);
      if (double(inside) >= 2.0 / 3.0 * double(rc.size()) - 1e-12) star.insert(rc.begin(), rc.end());
    }
    for (std::size_t x : star) v[p][x] = std::exp(-d[p][x]);
  }
  Dense vqe(n, std::vector<double>(n, 0.0));
  for (std::size_t p = 0; p < n; ++p) {
    std::vector<std::size_t> group{p};
    if (k2 > 1) {
      const auto nn = knn(p, k2 - 1);
      group.insert(group.end(), nn.begin(), nn.end());
    }
    for (std::size_t m : group) {
      for (std::size_t x = 0; x < n; ++x) vqe[p][x] += v[m][x] / double(group.size());
    }
  }
  Dense out(nq, std::vector<double>(g.size()));
  for (std::size_t i = 0; i < nq; ++i) {
    for (std::size_t j = 0; j < g.size(); ++j) {
      double mn = 0.0, mx = 0.0;
      for (std::size_t x = 0; x < n; ++x) {
        mn += std::min(vqe[i][x], vqe[nq + j][x]);
        mx += std::max(vqe[i][x], vqe[nq + j][x]);
      }
      const double dj = mx > 0.0 ? 1.0 - mn / mx : 1.0;
      out[i][j] = (1.0 - lambda) * dj + lambda * d[i][nq + j];
    }
  }
  return out;
}

/// Connected components via all pairs and repeated relabeling (no union-find).
inline std::set<std::set<std::string>> components(const pr::EmbeddingSet& s, double threshold) {
  const std::size_t n = s.size();
  std::vector<std::size_t> label(n);
  std::iota(label.begin(), label.end(), 0);
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j || dot(s.row(i), s.row(j)) < threshold) continue;
        const std::size_t m = std::min(label[i], label[j]);
        if (label[i] != m || label[j] != m) {
          label[i] = label[j] = m;
          changed = true;
        }
      }
    }
  }
  std::map<std::size_t, std::set<std::string>> groups;
  for (std::size_t i = 0; i < n; ++i) groups[label[i]].insert(s.id(i));
  std::set<std::set<std::string>> out;
  for (auto& [l, members] : groups) {
    if (members.size() >= 2) out.insert(members);
  }
  return out;
}

}  // namespace oracle
