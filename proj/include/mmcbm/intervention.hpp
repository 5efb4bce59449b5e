#pragma once
// Test-time intervention: replace individual concept scores, re-predict, and
// read off per-concept contributions.

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <string_view>
#include <vector>

#include "mmcbm/predictor.hpp"

namespace mmcbm {

using Clock = std::function<std::chrono::system_clock::time_point()>;
Clock system_clock();

struct AuditEntry {
  std::chrono::system_clock::time_point timestamp;
  ConceptKey key;
  double old_value = 0.0;
  double new_value = 0.0;
};

// Single-writer; callers serialise access to one session.
class InterventionSession {
 public:
  InterventionSession(std::shared_ptr<const MmcbmModel> model, ConceptScoreVector base,
                      std::size_t k = kDefaultTopK, Clock clock = system_clock());

  // Sets the score of concept `key` to `value` and re-predicts. Throws
  // InvalidArgument for a value outside [-1, 1], NotFound for an unknown
  // concept and Conflict for a concept whose modality is absent.
  const Explanation& intervene(const ConceptKey& key, double value);
  // Accepts "MOD:id" or a bare id that is unique across modalities.
  const Explanation& intervene(std::string_view concept_ref, double value);
  // Drops all edits; the audit log is kept.
  const Explanation& reset();

  const Explanation& current() const { return current_; }
  const Explanation& base_explanation() const { return base_explanation_; }
  const ConceptScoreVector& base_scores() const { return base_; }
  const ConceptScoreVector& current_scores() const { return current_.scores; }
  const std::map<std::size_t, double>& edits() const { return edits_; }
  const std::vector<AuditEntry>& audit_log() const { return log_; }
  const MmcbmModel& model() const { return *model_; }
  std::size_t k() const { return k_; }

 private:
  std::shared_ptr<const MmcbmModel> model_;
  ConceptScoreVector base_;
  std::size_t k_;
  Clock clock_;
  std::map<std::size_t, double> edits_;
  std::vector<AuditEntry> log_;
  Explanation base_explanation_;
  Explanation current_;
};

// Resolves "MOD:id" or a unique bare id to a bank row.
std::size_t resolve_concept(const ConceptBank& bank, std::string_view concept_ref);

// W_atten[index, label]; 0 for masked-out concepts. Throws NotFound for an
// index outside the bank.
double contribution(const Explanation& explanation, std::size_t index, DiseaseLabel label);

// after.logits - before.logits, per class.
std::array<double, kNumClasses> logit_deltas(const Explanation& before, const Explanation& after);

// 1 for annotated concepts, 0 otherwise, on the masked-in entries of
// `scores`. Throws InvalidArgument for an unannotated record.
ConceptScoreVector annotation_scores(const PatientRecord& record, const ConceptBank& bank,
                                     const ConceptScoreVector& scores);

}  // namespace mmcbm
