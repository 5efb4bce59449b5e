#include "mmcbm/intervention.hpp"

#include <cmath>

#include "mmcbm/error.hpp"

namespace mmcbm {

Clock system_clock() {
  return [] { return std::chrono::system_clock::now(); };
}

InterventionSession::InterventionSession(std::shared_ptr<const MmcbmModel> model,
                                         ConceptScoreVector base, std::size_t k, Clock clock)
    : model_(std::move(model)), base_(std::move(base)), k_(k), clock_(std::move(clock)) {
  if (!model_) throw InvalidArgument("intervention session needs a model");
  if (base_.size() != model_->bank.size()) {
    throw DimensionError("score vector length differs from bank size");
  }
  base_explanation_ = predict(base_, model_->predictor, k_);
  current_ = base_explanation_;
}

const Explanation& InterventionSession::intervene(const ConceptKey& key, double value) {
  const auto index = model_->bank.index_of(key);
  if (!index) throw NotFound("unknown concept " + to_string(key));
  if (!std::isfinite(value) || value < -1.0 || value > 1.0) {
    throw InvalidArgument("concept score must lie in [-1, 1]");
  }
  if (!base_.mask[*index]) {
    throw Conflict("concept " + to_string(key) + " belongs to a modality absent from this patient");
  }
  const double old_value = current_.scores.scores[static_cast<Eigen::Index>(*index)];
  edits_[*index] = value;
  log_.push_back({clock_(), key, old_value, value});

  ConceptScoreVector scores = base_;
  for (const auto& [i, v] : edits_) scores.scores[static_cast<Eigen::Index>(i)] = v;
  current_ = predict(scores, model_->predictor, k_);
  return current_;
}

const Explanation& InterventionSession::intervene(std::string_view concept_ref, double value) {
  const auto index = resolve_concept(model_->bank, concept_ref);
  return intervene(model_->bank.concept_at(index).key(), value);
}

const Explanation& InterventionSession::reset() {
  edits_.clear();
  current_ = base_explanation_;
  return current_;
}

std::size_t resolve_concept(const ConceptBank& bank, std::string_view concept_ref) {
  if (concept_ref.find(':') != std::string_view::npos) {
    const auto key = parse_concept_key(concept_ref);
    const auto index = bank.index_of(key);
    if (!index) throw NotFound("unknown concept " + to_string(key));
    return *index;
  }
  return bank.index_of_id(concept_ref);
}

double contribution(const Explanation& explanation, std::size_t index, DiseaseLabel label) {
  if (index >= explanation.scores.size()) {
    throw NotFound("concept index " + std::to_string(index) + " outside the bank");
  }
  if (!explanation.scores.mask[index]) return 0.0;
  return explanation.attention(static_cast<Eigen::Index>(index),
                               static_cast<Eigen::Index>(index_of(label)));
}

std::array<double, kNumClasses> logit_deltas(const Explanation& before, const Explanation& after) {
  std::array<double, kNumClasses> d{};
  for (std::size_t c = 0; c < kNumClasses; ++c) d[c] = after.logits[c] - before.logits[c];
  return d;
}

ConceptScoreVector annotation_scores(const PatientRecord& record, const ConceptBank& bank,
                                     const ConceptScoreVector& scores) {
  if (!record.concept_annotations) {
    throw InvalidArgument("patient " + record.patient_id + " has no concept annotations");
  }
  ConceptScoreVector out = scores;
  for (std::size_t i = 0; i < bank.size(); ++i) {
    if (!out.mask[i]) continue;
    out.scores[static_cast<Eigen::Index>(i)] =
        record.concept_annotations->count(bank.concept_at(i).key()) ? 1.0 : 0.0;
  }
  return out;
}

}  // namespace mmcbm
