#pragma once
// Data-parallel kernels. Every kernel has a serial reference in
// kernels::serial and an OpenMP version in kernels::omp with bitwise-identical
// results: parallelism is only across independent items (records, concepts),
// never inside a reduction.

#include <span>
#include <vector>

#include "mmcbm/cav.hpp"
#include "mmcbm/predictor.hpp"

namespace mmcbm::kernels {

struct CavJob {
  ConceptKey key;
  const ConceptDataset* train = nullptr;
  const ConceptDataset* held_out = nullptr;  // may be null
  SvmConfig config;
};

// Number of threads the OpenMP kernels will use (1 without OpenMP).
int max_threads();

namespace serial {

std::vector<ConceptScoreVector> concept_scores(std::span<const PatientRecord* const> records,
                                               const ConceptBank& bank);
std::vector<CAV> train_cavs(std::span<const CavJob> jobs);

}  // namespace serial

namespace omp {

std::vector<ConceptScoreVector> concept_scores(std::span<const PatientRecord* const> records,
                                               const ConceptBank& bank);
std::vector<CAV> train_cavs(std::span<const CavJob> jobs);

}  // namespace omp

}  // namespace mmcbm::kernels
