#include "mmcbm/kernels.hpp"

#include <exception>

#ifdef MMCBM_HAVE_OPENMP
#include <omp.h>
#endif

namespace mmcbm::kernels {

int max_threads() {
#ifdef MMCBM_HAVE_OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace serial {

std::vector<ConceptScoreVector> concept_scores(std::span<const PatientRecord* const> records,
                                               const ConceptBank& bank) {
  std::vector<ConceptScoreVector> out;
  out.reserve(records.size());
  for (const auto* r : records) out.push_back(mmcbm::concept_scores(*r, bank));
  return out;
}

std::vector<CAV> train_cavs(std::span<const CavJob> jobs) {
  std::vector<CAV> out;
  out.reserve(jobs.size());
  for (const auto& job : jobs) out.push_back(train_cav(job.key, *job.train, job.config, job.held_out));
  return out;
}

}  // namespace serial

namespace omp {

namespace {

// Runs body(i) for i in [0, n) across threads; the first exception thrown by
// any iteration is rethrown on the calling thread.
template <typename Body>
void parallel_for(std::size_t n, Body body) {
  std::exception_ptr error;
  const auto count = static_cast<long>(n);
#ifdef MMCBM_HAVE_OPENMP
#pragma omp parallel for schedule(dynamic, 1)
#endif
  for (long i = 0; i < count; ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
#ifdef MMCBM_HAVE_OPENMP
#pragma omp critical(mmcbm_kernel_error)
#endif
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace

std::vector<ConceptScoreVector> concept_scores(std::span<const PatientRecord* const> records,
                                               const ConceptBank& bank) {
  std::vector<ConceptScoreVector> out(records.size());
  parallel_for(records.size(),
               [&](std::size_t i) { out[i] = mmcbm::concept_scores(*records[i], bank); });
  return out;
}

std::vector<CAV> train_cavs(std::span<const CavJob> jobs) {
  std::vector<CAV> out(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t i) {
    const auto& job = jobs[i];
    out[i] = train_cav(job.key, *job.train, job.config, job.held_out);
  });
  return out;
}

}  // namespace omp

}  // namespace mmcbm::kernels
