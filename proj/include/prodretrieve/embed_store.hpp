#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "prodretrieve/error.hpp"
#include "prodretrieve/fileio.hpp"

namespace prodretrieve {

inline constexpr std::size_t kDefaultDim = 2048;
inline constexpr double kZeroNormEps = 1e-12;

/// Item ids paired with fixed-dimension float32 rows. Validated on
/// construction and immutable afterwards, so one instance can be shared
/// read-only across worker threads.
class EmbeddingSet {
 public:
  EmbeddingSet() = default;

  /// Throws DuplicateId / InvalidId / NonFiniteValue / MalformedInput.
  EmbeddingSet(std::vector<std::string> ids, std::size_t dim, std::vector<float> values)
      : ids_(std::move(ids)), dim_(dim), values_(std::move(values)) {
    if (dim_ == 0) throw Error(ErrorCode::MalformedInput, "dim must be positive");
    if (values_.size() != ids_.size() * dim_) {
      throw Error(ErrorCode::MalformedInput, "value count " + std::to_string(values_.size()) +
                                                 " != " + std::to_string(ids_.size()) + " x " +
                                                 std::to_string(dim_));
    }
    std::unordered_set<std::string_view> seen;
    seen.reserve(ids_.size());
    for (const auto& id : ids_) {
      if (id.empty()) throw Error(ErrorCode::InvalidId, "empty id");
      if (!seen.insert(id).second) throw Error(ErrorCode::DuplicateId, "duplicate id '" + id + "'");
    }
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (!std::isfinite(values_[i])) {
        throw Error(ErrorCode::NonFiniteValue,
                    "row '" + ids_[i / dim_] + "' has a non-finite entry");
      }
    }
  }

  /// Empty set of the given dimensionality.
  static EmbeddingSet empty(std::size_t dim = kDefaultDim) { return EmbeddingSet({}, dim, {}); }

  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const std::string& id(std::size_t i) const { return ids_.at(i); }
  std::span<const float> values() const noexcept { return values_; }
  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(values_).subspan(i * dim_, dim_);
  }

  friend bool operator==(const EmbeddingSet& a, const EmbeddingSet& b) {
    if (a.dim_ != b.dim_ || a.ids_ != b.ids_ || a.values_.size() != b.values_.size()) return false;
    // Bitwise, so -0.0f and 0.0f differ, which is what round-trip tests need.
    return std::memcmp(a.values_.data(), b.values_.data(), a.values_.size() * sizeof(float)) == 0;
  }

 private:
  std::vector<std::string> ids_;
  std::size_t dim_ = kDefaultDim;
  std::vector<float> values_;
};

// ---------------------------------------------------------------------------
// EMB1 format. Little-endian throughout:
//   "EMB1" | u32 count | u32 dim | u32 reserved (0)
//   count x (u16 len, len bytes UTF-8 id)
//   count x dim float32, row-major
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<char>((v >> s) & 0xff));
}

inline std::uint32_t get_u32(std::string_view in, std::size_t at) {
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) v |= std::uint32_t(static_cast<unsigned char>(in[at + b])) << (8 * b);
  return v;
}

inline std::uint16_t get_u16(std::string_view in, std::size_t at) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(in[at]) |
                                    (static_cast<unsigned char>(in[at + 1]) << 8));
}

}  // namespace detail

inline constexpr std::string_view kEmbMagic = "EMB1";
inline constexpr std::size_t kEmbHeaderBytes = 16;

inline std::string encode_embeddings(const EmbeddingSet& set) {
  if (set.size() > UINT32_MAX || set.dim() > UINT32_MAX) {
    throw Error(ErrorCode::MalformedInput, "set too large for EMB1");
  }
  std::string out;
  out.reserve(kEmbHeaderBytes + set.size() * (2 + 16) + set.values().size() * 4);
  out.append(kEmbMagic);
  detail::put_u32(out, static_cast<std::uint32_t>(set.size()));
  detail::put_u32(out, static_cast<std::uint32_t>(set.dim()));
  detail::put_u32(out, 0);
  for (const auto& id : set.ids()) {
    if (id.size() > UINT16_MAX) throw Error(ErrorCode::InvalidId, "id longer than 65535 bytes");
    detail::put_u16(out, static_cast<std::uint16_t>(id.size()));
    out.append(id);
  }
  for (float f : set.values()) detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

inline EmbeddingSet decode_embeddings(std::string_view bytes) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != kEmbMagic) throw Error(ErrorCode::MagicMismatch, "missing EMB1 header");
  if (bytes.size() < kEmbHeaderBytes) throw Error(ErrorCode::TruncatedFile, "header ends early");
  const std::uint32_t count = detail::get_u32(bytes, 4);
  const std::uint32_t dim = detail::get_u32(bytes, 8);
  if (detail::get_u32(bytes, 12) != 0) throw Error(ErrorCode::MagicMismatch, "reserved header field is non-zero");
  if (dim == 0) throw Error(ErrorCode::MalformedInput, "dim is zero");

  std::size_t at = kEmbHeaderBytes;
  std::vector<std::string> ids;
  ids.reserve(std::min<std::size_t>(count, bytes.size() / 2));
  for (std::uint32_t i = 0; i < count; ++i) {
    if (at + 2 > bytes.size()) throw Error(ErrorCode::TruncatedFile, "id block ends early");
    const std::uint16_t len = detail::get_u16(bytes, at);
    at += 2;
    if (at + len > bytes.size()) throw Error(ErrorCode::TruncatedFile, "id block ends early");
    ids.emplace_back(bytes.substr(at, len));
    at += len;
  }
  const std::uint64_t payload = std::uint64_t(count) * dim * 4;
  if (bytes.size() - at != payload) {
    throw Error(ErrorCode::TruncatedFile, "payload has " + std::to_string(bytes.size() - at) +
                                              " bytes, header declares " + std::to_string(payload));
  }
  std::vector<float> values(std::size_t(count) * dim);
  for (std::size_t i = 0; i < values.size(); ++i, at += 4) {
    values[i] = std::bit_cast<float>(detail::get_u32(bytes, at));
  }
  return EmbeddingSet(std::move(ids), dim, std::move(values));
}

inline EmbeddingSet load_embeddings(const fs::path& path) { return decode_embeddings(read_file(path)); }

inline void save_embeddings(const EmbeddingSet& set, const fs::path& path) {
  write_file_atomic(path, encode_embeddings(set));
}

// ---------------------------------------------------------------------------
// Normalization and multi-scale fusion
// ---------------------------------------------------------------------------

inline double row_norm(std::span<const float> row) {
  double s = 0.0;
  for (float v : row) s += double(v) * double(v);
  return std::sqrt(s);
}

inline EmbeddingSet l2_normalize(const EmbeddingSet& set) {
  std::vector<float> out(set.values().begin(), set.values().end());
  const std::size_t dim = set.dim();
  for (std::size_t i = 0; i < set.size(); ++i) {
    const double n = row_norm(set.row(i));
    if (!(n > kZeroNormEps)) throw Error(ErrorCode::ZeroVector, "row '" + set.id(i) + "' has zero norm");
    for (std::size_t d = 0; d < dim; ++d) out[i * dim + d] = static_cast<float>(double(set.row(i)[d]) / n);
  }
  return EmbeddingSet(set.ids(), dim, std::move(out));
}

/// One embedding set per test resolution ("400", "512", "600", ...), all with
/// identical ids in identical order.
class ScaleGroup {
 public:
  using Member = std::pair<std::string, EmbeddingSet>;

  explicit ScaleGroup(std::vector<Member> members) : members_(std::move(members)) {
    if (members_.empty()) throw Error(ErrorCode::MisalignedScales, "scale group is empty");
    const auto& first = members_.front().second;
    for (const auto& [label, set] : members_) {
      if (set.dim() != first.dim()) {
        throw Error(ErrorCode::MisalignedScales, "scale '" + label + "' has dim " + std::to_string(set.dim()));
      }
      if (set.ids() != first.ids()) {
        throw Error(ErrorCode::MisalignedScales, "scale '" + label + "' id order differs");
      }
    }
  }

  const std::vector<Member>& members() const noexcept { return members_; }

 private:
  std::vector<Member> members_;
};

/// normalize(mean_s(normalize(row_s))) per item.
inline EmbeddingSet fuse_multiscale(const ScaleGroup& group) {
  const auto& members = group.members();
  const EmbeddingSet& first = members.front().second;
  const std::size_t n = first.size(), dim = first.dim();
  std::vector<float> out(n * dim);
  std::vector<double> acc(dim);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (const auto& [label, set] : members) {
      const auto row = set.row(i);
      const double norm = row_norm(row);
      if (!(norm > kZeroNormEps)) {
        throw Error(ErrorCode::ZeroVector, "scale '" + label + "' row '" + set.id(i) + "' has zero norm");
      }
      for (std::size_t d = 0; d < dim; ++d) acc[d] += double(row[d]) / norm;
    }
    double s = 0.0;
    for (double v : acc) s += v * v;
    const double norm = std::sqrt(s);
    if (!(norm > kZeroNormEps)) throw Error(ErrorCode::ZeroVector, "fused row '" + first.id(i) + "' cancels to zero");
    for (std::size_t d = 0; d < dim; ++d) out[i * dim + d] = static_cast<float>(acc[d] / norm);
  }
  return EmbeddingSet(first.ids(), dim, std::move(out));
}

}  // namespace prodretrieve
