#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "prodretrieve/embed_store.hpp"
#include "prodretrieve/fileio.hpp"

namespace prodretrieve {

/// JSON sidecar describing one embedding file:
/// {"path": ..., "scale": "512", "model": ..., "sha256": ...}.
/// Relative paths resolve against the sidecar's directory.
struct Sidecar {
  std::string path;
  std::string scale;
  std::string model;
  std::string sha256;
};

inline nlohmann::ordered_json to_json(const Sidecar& s) {
  return {{"path", s.path}, {"scale", s.scale}, {"model", s.model}, {"sha256", s.sha256}};
}

inline Sidecar read_sidecar(const fs::path& json_path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(json_path));
    Sidecar s{j.at("path").get<std::string>(), j.value("scale", std::string{}),
              j.value("model", std::string{}), j.value("sha256", std::string{})};
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ManifestInvalid, json_path.string() + ": " + e.what());
  }
}

inline fs::path sidecar_target(const Sidecar& s, const fs::path& json_path) {
  fs::path p(s.path);
  return p.is_absolute() ? p : json_path.parent_path() / p;
}

/// Writes `set` to `emb_path` and a sidecar next to it.
inline Sidecar write_with_sidecar(const EmbeddingSet& set, const fs::path& emb_path, const fs::path& json_path,
                                  std::string scale, std::string model) {
  const std::string bytes = encode_embeddings(set);
  write_file_atomic(emb_path, bytes);
  Sidecar s{fs::relative(fs::absolute(emb_path), fs::absolute(json_path).parent_path()).generic_string(),
            std::move(scale), std::move(model), sha256_hex(bytes)};
  write_file_atomic(json_path, to_json(s).dump(2) + "\n");
  return s;
}

/// Loads the embedding file named by a sidecar; a non-empty sha256 is checked.
inline EmbeddingSet load_from_sidecar(const fs::path& json_path, Sidecar* out = nullptr) {
  const Sidecar s = read_sidecar(json_path);
  const std::string bytes = read_file(sidecar_target(s, json_path));
  if (!s.sha256.empty() && sha256_hex(bytes) != s.sha256) {
    throw Error(ErrorCode::ManifestInvalid, json_path.string() + ": sha256 does not match " + s.path);
  }
  if (out) *out = s;
  return decode_embeddings(bytes);
}

}  // namespace prodretrieve
