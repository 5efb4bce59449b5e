#pragma once
// The bottleneck itself: cosine concept scores between per-modality image
// features and the concept bank, and the interpretable linear predictor
//
//   W_atten[i, c] = score[i] * sigmoid(W[i, c]),   logit[c] = sum_i W_atten[i, c]
//
// whose column sums are the class logits and whose entries are per-concept
// contributions.

#include <array>
#include <span>
#include <vector>

#include "mmcbm/cav.hpp"
#include "mmcbm/core.hpp"
#include "mmcbm/optim.hpp"

namespace mmcbm {

inline constexpr std::size_t kDefaultTopK = 10;

struct ConceptScoreVector {
  Vector scores;           // length N, entries in [-1, 1]
  std::vector<bool> mask;  // concept's modality present in the input

  std::size_t size() const { return mask.size(); }
  std::size_t masked_in() const;
  bool operator==(const ConceptScoreVector& o) const {
    return mask == o.mask && scores.size() == o.scores.size() && scores == o.scores;
  }
};

// Per present modality m: f_m = mean of the m-tokens, L2-normalised;
// scores[i] = f_m . Z_C[i] for every concept of modality m. Concepts of absent
// modalities score exactly 0 with mask false. Throws DimensionError on width
// mismatch, InvalidArgument on a zero-norm modality feature.
ConceptScoreVector concept_scores(std::span<const EmbeddingToken> tokens, const ConceptBank& bank);
inline ConceptScoreVector concept_scores(const PatientRecord& record, const ConceptBank& bank) {
  return concept_scores(record.tokens, bank);
}

// Copy of `record` holding only tokens of the modalities set in `keep`.
PatientRecord restrict_modalities(const PatientRecord& record, const ModalitySet& keep);

double sigmoid(double x);

struct InterpretablePredictor {
  Matrix weights;  // N x 3, columns in DiseaseLabel order

  static InterpretablePredictor zeros(std::size_t n_concepts) {
    return {Matrix::Zero(static_cast<Eigen::Index>(n_concepts), kNumClasses)};
  }
  std::size_t n_concepts() const { return static_cast<std::size_t>(weights.rows()); }
  bool operator==(const InterpretablePredictor& o) const {
    return weights.rows() == o.weights.rows() && weights.cols() == o.weights.cols() &&
           weights == o.weights;
  }
};

struct RankedConcept {
  std::size_t index = 0;  // row in the bank
  double attention = 0.0;  // W_atten[index, predicted]
  double score = 0.0;      // input concept score
  std::size_t rank = 1;    // 1-based
  bool operator==(const RankedConcept&) const = default;
};

struct Explanation {
  DiseaseLabel label = DiseaseLabel::hemangioma;
  std::array<double, kNumClasses> logits{};
  std::array<double, kNumClasses> probabilities{};
  Matrix attention;  // W_atten, N x 3
  ConceptScoreVector scores;
  std::vector<RankedConcept> top_k;

  bool operator==(const Explanation& o) const {
    return label == o.label && logits == o.logits && probabilities == o.probabilities &&
           attention.rows() == o.attention.rows() && attention == o.attention &&
           scores == o.scores && top_k == o.top_k;
  }
};

std::array<double, kNumClasses> softmax(const std::array<double, kNumClasses>& logits);
// Lowest index wins ties.
std::size_t argmax(const std::array<double, kNumClasses>& values);

// Logits use compensated summation, so they are within a couple of ulps of the
// exact sum of contributions. Embedded top-k uses min(k, masked-in count)
// entries.
Explanation predict(const ConceptScoreVector& scores, const InterpretablePredictor& predictor,
                    std::size_t k = kDefaultTopK);

// k highest-attention masked-in concepts for the predicted class, ties broken
// by bank order. Throws InvalidArgument unless 1 <= k <= N; returns fewer than
// k entries when fewer concepts are masked in.
std::vector<RankedConcept> top_k(const Explanation& explanation, std::size_t k);

// Training data for the predictor: one score vector per row.
struct ScoreDataset {
  Matrix scores;  // n x N
  std::vector<DiseaseLabel> labels;
  std::size_t size() const { return labels.size(); }
};

ScoreDataset score_dataset(std::span<const PatientRecord* const> records, const ConceptBank& bank,
                           bool parallel = true);

// Weighted mean cross-entropy of softmax(logits) over `data`.
double predictor_loss(const Matrix& weights, const ScoreDataset& data,
                      const std::array<double, kNumClasses>& class_weights = {1.0, 1.0, 1.0});
// Analytic gradient of predictor_loss with respect to W.
Matrix predictor_loss_gradient(const Matrix& weights, const ScoreDataset& data,
                               const std::array<double, kNumClasses>& class_weights = {1.0, 1.0,
                                                                                       1.0});

// Mini-batch Adam on the cross-entropy, starting from W = 0. With non-empty
// validation data, early stopping monitors validation loss and the lowest-loss
// checkpoint is returned.
InterpretablePredictor train_predictor(const ScoreDataset& train, const ScoreDataset& validation,
                                       const TrainConfig& config,
                                       TrainingHistory* history = nullptr,
                                       const InterpretablePredictor* init = nullptr);

// Scores training folds (all except `validation_fold`) and the validation
// fold of `manifest` against `bank`, then trains.
InterpretablePredictor train_predictor(const DatasetManifest& manifest, const ConceptBank& bank,
                                       int validation_fold, const TrainConfig& config,
                                       TrainingHistory* history = nullptr);

TrainConfig default_predictor_config();

// A trained bank and predictor, shared read-only between predictions and
// intervention sessions.
struct MmcbmModel {
  ConceptBank bank;
  InterpretablePredictor predictor;

  Explanation explain(const PatientRecord& record, std::size_t k = kDefaultTopK) const {
    return predict(concept_scores(record, bank), predictor, k);
  }
  bool operator==(const MmcbmModel&) const = default;
};

}  // namespace mmcbm
