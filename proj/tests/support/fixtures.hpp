#pragma once
// Shared test fixtures: the seeded synthetic cohort, a model trained on it,
// and small random generators.

#include <filesystem>
#include <memory>
#include <random>

#include "mmcbm/cav.hpp"
#include "mmcbm/core.hpp"
#include "mmcbm/predictor.hpp"

namespace testsupport {

std::filesystem::path source_dir();
std::filesystem::path temp_dir();

// Default synthetic cohort split with seed 1. Built once per process.
const mmcbm::DatasetManifest& synthetic_manifest();
// Bank trained on the non-test pool plus a predictor validated on fold 1.
std::shared_ptr<const mmcbm::MmcbmModel> trained_model();

mmcbm::Vector random_vector(std::size_t n, std::mt19937_64& rng, double scale = 1.0);
mmcbm::Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                            double scale = 1.0);
// Bank with `per_modality` concepts in each modality and random unit rows.
mmcbm::ConceptBank random_bank(std::size_t per_modality, std::size_t dim, std::mt19937_64& rng);
// One token per modality set in `present`.
std::vector<mmcbm::EmbeddingToken> random_tokens(std::size_t dim, const mmcbm::ModalitySet& present,
                                                 std::mt19937_64& rng);

}  // namespace testsupport
