#pragma once
// ModelBundle: the on-disk form of a trained concept bank, interpretable
// predictor and optional baseline head.
//
// Layout (little-endian):
//   "MMCBMBDL" | u32 version | u32 header length | JSON header |
//   f64 bank directions (N x d, row-major) | f64 predictor weights (N x 3,
//   row-major, if present) | f64 baseline parameters (if present) |
//   u32 CRC-32 of every preceding byte
//
// The JSON header carries the concept list with SVM statistics, the
// dimensions and free-form metadata.

#include <map>
#include <optional>
#include <string>

#include "json.hpp"
#include "mmcbm/baseline.hpp"
#include "mmcbm/cav.hpp"
#include "mmcbm/predictor.hpp"

namespace mmcbm {

inline constexpr std::uint32_t kBundleVersion = 1;

struct ModelBundle {
  ConceptBank bank;
  std::optional<InterpretablePredictor> predictor;
  std::optional<BaselineModel> baseline;
  std::map<std::string, std::string> metadata;

  bool operator==(const ModelBundle&) const = default;
};

std::string encode_bundle(const ModelBundle& bundle);
// Throws FormatError (bad magic, truncation, malformed header), VersionError,
// ChecksumError or DimensionError.
ModelBundle decode_bundle(std::string_view bytes);

void save_bundle(const ModelBundle& bundle, const std::string& path);
ModelBundle load_bundle(const std::string& path);
// Also throws DimensionError unless the bundle's embedding width is
// `expected_dim`.
ModelBundle load_bundle(const std::string& path, std::size_t expected_dim);

// Throws InvalidArgument when the bundle has no predictor.
MmcbmModel to_model(const ModelBundle& bundle);

// Concept listing: key, text, modality, provenance, status and SVM stats per
// bank row.
nlohmann::json bank_to_json(const ConceptBank& bank);

std::uint32_t crc32(std::string_view bytes);

}  // namespace mmcbm
