// Serial vs OpenMP kernels on a synthetic cohort.

#include <benchmark/benchmark.h>

#include "mmcbm/cav.hpp"
#include "mmcbm/ingest.hpp"
#include "mmcbm/kernels.hpp"

using namespace mmcbm;

namespace {

struct Fixture {
  DatasetManifest manifest;
  ConceptBank bank;
  std::vector<const PatientRecord*> records;
  std::vector<ConceptDataset> datasets;
  std::vector<kernels::CavJob> jobs;

  Fixture() {
    auto spec = default_synthetic_spec();
    spec.patients_per_class = {100, 100, 100};
    spec.embedding_dim = 256;
    spec.tokens_per_period = 2;
    manifest = generate_splits(generate_synthetic_cohort(spec).manifest, SplitConfig{0.2, 5, 1});
    for (const auto& r : manifest.records) records.push_back(&r);
    BankTrainingConfig cfg;
    bank = train_concept_bank(manifest, cfg).bank;
    const auto train = manifest.training_records(0);
    datasets.reserve(manifest.concepts.size());
    for (const auto& c : manifest.concepts) datasets.push_back(build_concept_dataset(c, train));
    for (std::size_t i = 0; i < manifest.concepts.size(); ++i) {
      jobs.push_back({manifest.concepts[i].key(), &datasets[i], nullptr, SvmConfig{}});
    }
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

void BM_ConceptScoresSerial(benchmark::State& state) {
  auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(kernels::serial::concept_scores(f.records, f.bank));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(f.records.size()));
}

void BM_ConceptScoresOmp(benchmark::State& state) {
  auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(kernels::omp::concept_scores(f.records, f.bank));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(f.records.size()));
  state.counters["threads"] = kernels::max_threads();
}

void BM_TrainCavsSerial(benchmark::State& state) {
  auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(kernels::serial::train_cavs(f.jobs));
}

void BM_TrainCavsOmp(benchmark::State& state) {
  auto& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(kernels::omp::train_cavs(f.jobs));
  state.counters["threads"] = kernels::max_threads();
}

}  // namespace

BENCHMARK(BM_ConceptScoresSerial)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ConceptScoresOmp)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_TrainCavsSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TrainCavsOmp)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
