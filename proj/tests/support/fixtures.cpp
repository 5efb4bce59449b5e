#include "fixtures.hpp"

#include <algorithm>
#include <cstdlib>

#include <unistd.h>

#include "mmcbm/ingest.hpp"

namespace testsupport {

using namespace mmcbm;

std::filesystem::path source_dir() { return MMCBM_SOURCE_DIR; }

std::filesystem::path temp_dir() {
  auto dir = std::filesystem::temp_directory_path() /
             ("mmcbm-test-" + std::to_string(static_cast<long>(::getpid())));
  std::filesystem::create_directories(dir);
  return dir;
}

const DatasetManifest& synthetic_manifest() {
  static const DatasetManifest m =
      generate_splits(generate_synthetic_cohort(default_synthetic_spec()).manifest, SplitConfig{0.2, 5, 1});
  return m;
}

std::shared_ptr<const MmcbmModel> trained_model() {
  static const auto model = [] {
    const auto& m = synthetic_manifest();
    auto bank = train_concept_bank(m, BankTrainingConfig{}).bank;
    auto predictor = train_predictor(m, bank, 1, default_predictor_config());
    return std::make_shared<const MmcbmModel>(MmcbmModel{std::move(bank), std::move(predictor)});
  }();
  return model;
}

Vector random_vector(std::size_t n, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> g(0.0, scale);
  Vector v(static_cast<Eigen::Index>(n));
  for (auto& x : v) x = g(rng);
  return v;
}

Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = g(rng);
  }
  return m;
}

ConceptBank random_bank(std::size_t per_modality, std::size_t dim, std::mt19937_64& rng) {
  std::vector<Concept> concepts;
  for (auto mod : kModalities) {
    for (std::size_t j = 0; j < per_modality; ++j) {
      concepts.push_back({synthetic_concept_id(mod, j), mod, "concept " + std::to_string(j)});
    }
  }
  std::sort(concepts.begin(), concepts.end(), canonical_less);
  Matrix dirs = random_matrix(concepts.size(), dim, rng);
  for (Eigen::Index i = 0; i < dirs.rows(); ++i) dirs.row(i).normalize();
  return ConceptBank(std::move(concepts), std::move(dirs), {});
}

std::vector<EmbeddingToken> random_tokens(std::size_t dim, const ModalitySet& present,
                                          std::mt19937_64& rng) {
  std::vector<EmbeddingToken> out;
  for (auto mod : kModalities) {
    if (!present[index_of(mod)]) continue;
    EmbeddingToken t;
    t.modality = mod;
    if (mod != Modality::US) t.period = Period::early;
    t.vector = random_vector(dim, rng).cast<float>();
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace testsupport
