#pragma once
// Concept activation vectors: one binary linear SVM per concept separating
// tokens of annotated patients from all other same-modality tokens. The
// normalised hyperplane directions, stacked in canonical order, form the
// concept bank.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mmcbm/core.hpp"

namespace mmcbm {

struct SvmConfig {
  double C = 1.0;
  int max_epochs = 1000;
  double tol = 1e-4;
  std::uint64_t seed = 0;
};

struct SvmModel {
  Vector weight;
  double bias = 0.0;
  int epochs = 0;
  bool converged = false;
  // (1/2)|w|^2 + C * sum of hinge losses at the returned iterate.
  double objective = 0.0;
};

// Primal objective of a soft-margin linear SVM. Rows of X are samples,
// y holds +1 / -1.
double svm_objective(const Vector& w, double b, const Matrix& X, const Vector& y, double C);

// Epoch-wise stochastic subgradient descent on the primal hinge objective.
// Each epoch visits the samples in a seeded permutation with a fixed step
// eta_e = 1 / (R^2 sqrt(e + 1)), R^2 = 1 + max |x|^2. The iterate with the
// lowest full objective is returned; training stops once that best value
// improves by less than tol (relative) across 10 consecutive epochs.
SvmModel train_linear_svm(const Matrix& X, const Vector& y, const SvmConfig& config);

double svm_accuracy(const Vector& w, double b, const Matrix& X, const Vector& y);

struct ConceptDataset {
  Matrix positives;  // one token per row
  Matrix negatives;
};

// Positives: tokens of the concept's modality from records annotated with the
// concept. Negatives: same-modality tokens of every other annotated record.
// Records without annotations are skipped. Throws InvalidArgument when either
// side is empty.
ConceptDataset build_concept_dataset(const Concept& cpt,
                                     std::span<const PatientRecord* const> records);

struct CAV {
  ConceptKey key;
  Vector weight;
  double bias = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> test_accuracy;
  int epochs = 0;
  bool converged = false;
  // All training points on the correct side of the hyperplane.
  bool separated = false;
};

CAV train_cav(const ConceptKey& key, const ConceptDataset& train, const SvmConfig& config,
              const ConceptDataset* held_out = nullptr);

struct ConceptStats {
  double train_accuracy = 0.0;
  std::optional<double> test_accuracy;
  bool converged = false;
  bool operator==(const ConceptStats&) const = default;
};

// Immutable after assembly. Row i of directions() is the unit CAV of
// concepts()[i]; the row order is the canonical concept order used by score
// vectors, predictor weights and explanations.
class ConceptBank {
 public:
  ConceptBank() = default;
  ConceptBank(std::vector<Concept> concepts, Matrix directions, std::vector<ConceptStats> stats);

  std::size_t size() const { return concepts_.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(directions_.cols()); }
  const std::vector<Concept>& concepts() const { return concepts_; }
  const Concept& concept_at(std::size_t i) const { return concepts_.at(i); }
  const Matrix& directions() const { return directions_; }
  const std::vector<ConceptStats>& stats() const { return stats_; }
  Modality modality_of(std::size_t i) const { return concepts_.at(i).modality; }

  std::optional<std::size_t> index_of(const ConceptKey& key) const;
  // Looks up by bare id; throws InvalidArgument if the id exists under more
  // than one modality, NotFound if under none.
  std::size_t index_of_id(std::string_view id) const;

  // Keeps only the concepts at `indices`, preserving canonical order.
  ConceptBank subset(std::vector<std::size_t> indices) const;

  // Exact (bitwise on the directions) equality.
  bool operator==(const ConceptBank& other) const;

 private:
  std::vector<Concept> concepts_;
  Matrix directions_;
  std::vector<ConceptStats> stats_;
};

// Rows are the CAV weights normalised to unit length, ordered FA, ICGA, US
// and alphabetically by id within a modality. Only active concepts are kept;
// each needs a CAV. Throws DimensionError on mixed widths, InvalidArgument on
// a missing or all-zero CAV.
ConceptBank assemble_bank(std::vector<Concept> concepts, std::span<const CAV> cavs);

struct BankTrainingConfig {
  SvmConfig svm;
  // Skip concepts with no positives/negatives instead of throwing.
  bool skip_untrainable = false;
  bool parallel = true;
};

struct BankTrainingResult {
  ConceptBank bank;
  std::vector<CAV> cavs;  // canonical order, trained concepts only
  std::vector<ConceptKey> skipped;
};

// Trains CAVs for every active concept of `concepts` on `train` records and
// scores test accuracy on `held_out`.
BankTrainingResult train_concept_bank(const std::vector<Concept>& concepts,
                                      std::span<const PatientRecord* const> train,
                                      std::span<const PatientRecord* const> held_out,
                                      const BankTrainingConfig& config);

// Convenience: train on non-test patients, evaluate on the test pool.
BankTrainingResult train_concept_bank(const DatasetManifest& manifest,
                                      const BankTrainingConfig& config);

}  // namespace mmcbm
