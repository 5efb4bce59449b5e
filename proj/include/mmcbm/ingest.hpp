#pragma once
// Patient-level split generation and the synthetic cohort generator.

#include <array>
#include <cstdint>
#include <map>
#include <set>

#include "json.hpp"

#include "mmcbm/core.hpp"

namespace mmcbm {

struct SplitConfig {
  double test_fraction = 0.2;
  int n_folds = 5;
  std::uint64_t seed = 0;
};

// Assigns every record of `manifest` to the test pool or one of n_folds
// folds. Only patients with all three modalities are eligible for test;
// floor(test_fraction * |MM of class|) per class go there. The rest are dealt
// round-robin into folds, stratified by (class, set of present modalities).
// Throws InvalidArgument on bad fractions/fold counts or when a class has no
// multimodal patients.
DatasetManifest generate_splits(DatasetManifest manifest, const SplitConfig& config);

struct SyntheticSpec {
  std::array<std::size_t, kNumClasses> patients_per_class{50, 50, 50};
  std::array<std::size_t, kNumModalities> concepts_per_modality{10, 10, 10};
  std::size_t embedding_dim = 128;
  double concept_signal_strength = 1.0;
  double noise_sigma = 0.1;
  // Per-modality override of noise_sigma.
  std::map<Modality, double> modality_noise_sigma;
  // Class -> concepts expressed by that class. Empty means the default
  // assignment: concept j of each modality belongs to class j mod 3.
  std::map<DiseaseLabel, std::set<ConceptKey>> class_concept_map;
  double missing_modality_rate = 0.0;
  // Probability that one of the class's concepts is expressed by a given
  // patient (per modality). 1 gives every patient of a class identical findings.
  double concept_presence = 1.0;
  std::size_t tokens_per_period = 1;  // FA / ICGA, for each of early/middle/late
  std::size_t us_tokens = 1;
  std::uint64_t rng_seed = 7;
};

// Cohort shape used throughout the tests and the acceptance suite:
// 150 patients, 30 concepts, noisier ultrasound.
SyntheticSpec default_synthetic_spec();

std::string synthetic_concept_id(Modality m, std::size_t j);
double noise_for(const SyntheticSpec& spec, Modality m);

nlohmann::json to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

struct SyntheticCohort {
  DatasetManifest manifest;  // unsplit
  // Unit direction assigned to each concept.
  std::map<ConceptKey, Vector> directions;
};

// Throws InvalidArgument when signal <= 0, a rate is out of range, or the
// class map is incomplete.
SyntheticCohort generate_synthetic_cohort(const SyntheticSpec& spec);

}  // namespace mmcbm
