#pragma once
// On-disk formats for datasets.
//
// A manifest is a JSON document (format "mmcbm-manifest") holding records,
// concept catalogue and split assignments. Token vectors live in a sidecar
// binary columnar file:
//
//   magic "MMCBMEMB" | u32 format_version | u32 embedding_dim | u64 count
//   count x (u32 len, bytes)   patient ids
//   count x u8                 modality
//   count x u8                 period (0xFF = none)
//   count x dim x f32          vectors, row-major
//
// All integers and floats are little-endian.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "mmcbm/core.hpp"

namespace mmcbm::io {

inline constexpr std::uint32_t kEmbeddingFormatVersion = 1;
inline constexpr std::uint32_t kManifestFormatVersion = 1;
inline constexpr char kEmbeddingMagic[8] = {'M', 'M', 'C', 'B', 'M', 'E', 'M', 'B'};

struct EmbeddingHeader {
  std::uint32_t format_version = kEmbeddingFormatVersion;
  std::uint32_t embedding_dim = 0;
  std::uint64_t count = 0;
};

struct EmbeddingRow {
  std::string patient_id;
  EmbeddingToken token;
};

std::string encode_embeddings(std::size_t embedding_dim, std::span<const EmbeddingRow> rows);
std::vector<EmbeddingRow> decode_embeddings(std::string_view bytes,
                                            EmbeddingHeader* header = nullptr);

void write_embeddings(const std::filesystem::path& path, std::size_t embedding_dim,
                      std::span<const EmbeddingRow> rows);
std::vector<EmbeddingRow> read_embeddings(const std::filesystem::path& path,
                                          EmbeddingHeader* header = nullptr);

// Rows of every token in record order.
std::vector<EmbeddingRow> flatten_tokens(const DatasetManifest& manifest);

nlohmann::json concept_to_json(const Concept& c);
Concept concept_from_json(const nlohmann::json& j);

nlohmann::json record_to_json(const PatientRecord& r);  // without tokens
PatientRecord record_from_json(const nlohmann::json& j);
nlohmann::json tokens_to_json(const std::vector<EmbeddingToken>& tokens);
std::vector<EmbeddingToken> tokens_from_json(const nlohmann::json& j);

// Manifest JSON; `embeddings_ref` is the sidecar path relative to the JSON.
nlohmann::json manifest_to_json(const DatasetManifest& manifest, const std::string& embeddings_ref);
// Builds a manifest from JSON and decoded embedding rows. Throws FormatError
// on a row for an unknown patient or a dimension disagreement.
DatasetManifest manifest_from_json(const nlohmann::json& j, std::span<const EmbeddingRow> rows,
                                   const EmbeddingHeader& header);

// Writes <path> and <path stem>.emb beside it.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

// Hash over the canonical serialisation (JSON + embedding bytes).
std::uint64_t manifest_hash(const DatasetManifest& manifest);

}  // namespace mmcbm::io
