#include "mmcbm/core.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "mmcbm/error.hpp"

namespace mmcbm {

namespace {

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view s, const std::array<std::string_view, N>& names,
                std::string_view what) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == s) return static_cast<Enum>(i);
  }
  throw InvalidArgument("unknown " + std::string(what) + " '" + std::string(s) + "'");
}

constexpr std::array<std::string_view, 3> kModalityNames{"FA", "ICGA", "US"};
constexpr std::array<std::string_view, 3> kLabelNames{"hemangioma", "metastatic_carcinoma",
                                                      "melanoma"};
constexpr std::array<std::string_view, 3> kPeriodNames{"early", "middle", "late"};
constexpr std::array<std::string_view, 2> kProvenanceNames{"report_extracted", "expert_added"};
constexpr std::array<std::string_view, 2> kStatusNames{"active", "expert_removed"};

}  // namespace

std::string_view to_string(Modality m) { return kModalityNames[index_of(m)]; }
std::string_view to_string(DiseaseLabel l) { return kLabelNames[index_of(l)]; }
std::string_view to_string(Period p) { return kPeriodNames[static_cast<std::size_t>(p)]; }
std::string_view to_string(Provenance p) {
  return kProvenanceNames[static_cast<std::size_t>(p)];
}
std::string_view to_string(ConceptStatus s) { return kStatusNames[static_cast<std::size_t>(s)]; }

Modality parse_modality(std::string_view s) {
  return parse_enum<Modality>(s, kModalityNames, "modality");
}
DiseaseLabel parse_label(std::string_view s) {
  return parse_enum<DiseaseLabel>(s, kLabelNames, "disease label");
}
Period parse_period(std::string_view s) { return parse_enum<Period>(s, kPeriodNames, "period"); }
Provenance parse_provenance(std::string_view s) {
  return parse_enum<Provenance>(s, kProvenanceNames, "provenance");
}
ConceptStatus parse_status(std::string_view s) {
  return parse_enum<ConceptStatus>(s, kStatusNames, "concept status");
}

Period period_of(Modality modality, double minutes) {
  if (!std::isfinite(minutes) || minutes < 0.0) {
    throw InvalidArgument("acquisition time must be a non-negative number of minutes");
  }
  double late_from = 0.0;
  switch (modality) {
    case Modality::FA:
      late_from = 10.0;
      break;
    case Modality::ICGA:
      late_from = 20.0;
      break;
    case Modality::US:
      throw InvalidArgument("ultrasound has no acquisition periods");
  }
  if (minutes < 5.0) return Period::early;
  if (minutes < late_from) return Period::middle;
  return Period::late;
}

std::string to_string(const ConceptKey& key) {
  std::string out(to_string(key.modality));
  out += ':';
  out += key.id;
  return out;
}

ConceptKey parse_concept_key(std::string_view s) {
  const auto colon = s.find(':');
  if (colon == std::string_view::npos || colon + 1 >= s.size()) {
    throw InvalidArgument("concept key must look like MODALITY:id, got '" + std::string(s) + "'");
  }
  return ConceptKey{parse_modality(s.substr(0, colon)), std::string(s.substr(colon + 1))};
}

bool canonical_less(const Concept& a, const Concept& b) {
  if (a.modality != b.modality) return a.modality < b.modality;
  return a.id < b.id;
}

bool PatientRecord::has_modality(Modality m) const {
  return std::any_of(tokens.begin(), tokens.end(),
                     [m](const EmbeddingToken& t) { return t.modality == m; });
}

ModalitySet PatientRecord::modalities() const {
  ModalitySet set{};
  for (const auto& t : tokens) set[index_of(t.modality)] = true;
  return set;
}

bool PatientRecord::is_multimodal() const {
  const auto set = modalities();
  return std::all_of(set.begin(), set.end(), [](bool b) { return b; });
}

std::string to_string(Split s) {
  if (s.is_test()) return "test";
  return "fold_" + std::to_string(s.fold);
}

Split parse_split(std::string_view s) {
  if (s == "test") return Split::test();
  constexpr std::string_view prefix = "fold_";
  if (s.substr(0, prefix.size()) == prefix) {
    int fold = 0;
    const auto rest = s.substr(prefix.size());
    const auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), fold);
    if (ec == std::errc{} && ptr == rest.data() + rest.size() && fold >= 1) {
      return Split::cv_fold(fold);
    }
  }
  throw InvalidArgument("unknown split '" + std::string(s) + "'");
}

const PatientRecord* DatasetManifest::find(std::string_view patient_id) const {
  for (const auto& r : records) {
    if (r.patient_id == patient_id) return &r;
  }
  return nullptr;
}

const Concept* DatasetManifest::find_concept(const ConceptKey& key) const {
  for (const auto& c : concepts) {
    if (c.modality == key.modality && c.id == key.id) return &c;
  }
  return nullptr;
}

int DatasetManifest::n_folds() const {
  int n = 0;
  for (const auto& [id, s] : splits) n = std::max(n, s.fold);
  return n;
}

std::vector<const PatientRecord*> DatasetManifest::select(Split s) const {
  std::vector<const PatientRecord*> out;
  for (const auto& r : records) {
    const auto it = splits.find(r.patient_id);
    if (it != splits.end() && it->second == s) out.push_back(&r);
  }
  return out;
}

std::vector<const PatientRecord*> DatasetManifest::training_records(int held_out_fold) const {
  std::vector<const PatientRecord*> out;
  for (const auto& r : records) {
    const auto it = splits.find(r.patient_id);
    if (it == splits.end() || it->second.is_test() || it->second.fold == held_out_fold) continue;
    out.push_back(&r);
  }
  return out;
}

std::string_view to_string(ViolationKind k) {
  switch (k) {
    case ViolationKind::bad_dimension: return "bad_dimension";
    case ViolationKind::non_finite: return "non_finite";
    case ViolationKind::no_tokens: return "no_tokens";
    case ViolationKind::us_period: return "us_period";
    case ViolationKind::orphan_annotation: return "orphan_annotation";
    case ViolationKind::annotation_modality_absent: return "annotation_modality_absent";
    case ViolationKind::duplicate_patient: return "duplicate_patient";
    case ViolationKind::duplicate_concept: return "duplicate_concept";
    case ViolationKind::empty_concept_text: return "empty_concept_text";
    case ViolationKind::missing_split: return "missing_split";
    case ViolationKind::unknown_split_patient: return "unknown_split_patient";
    case ViolationKind::bad_fold: return "bad_fold";
    case ViolationKind::test_not_multimodal: return "test_not_multimodal";
  }
  return "unknown";
}

bool ValidationReport::has(ViolationKind k) const {
  return std::any_of(violations.begin(), violations.end(),
                     [k](const Violation& v) { return v.kind == k; });
}

ValidationReport validate_manifest(const DatasetManifest& manifest) {
  ValidationReport report;
  auto add = [&](ViolationKind kind, std::string subject, std::string message) {
    report.violations.push_back({kind, std::move(subject), std::move(message)});
  };

  std::set<ConceptKey> known;
  for (const auto& c : manifest.concepts) {
    if (!known.insert(c.key()).second) {
      add(ViolationKind::duplicate_concept, to_string(c.key()), "concept listed twice");
    }
    if (c.text.empty()) {
      add(ViolationKind::empty_concept_text, to_string(c.key()), "concept text is empty");
    }
  }

  const auto d = static_cast<Eigen::Index>(manifest.embedding_dim);
  std::unordered_set<std::string> seen;
  for (const auto& r : manifest.records) {
    if (!seen.insert(r.patient_id).second) {
      add(ViolationKind::duplicate_patient, r.patient_id, "patient id appears twice");
    }
    if (r.tokens.empty()) add(ViolationKind::no_tokens, r.patient_id, "record has no tokens");
    for (std::size_t t = 0; t < r.tokens.size(); ++t) {
      const auto& tok = r.tokens[t];
      if (tok.vector.size() != d) {
        std::ostringstream msg;
        msg << "token " << t << " has dimension " << tok.vector.size() << ", expected " << d;
        add(ViolationKind::bad_dimension, r.patient_id, msg.str());
      }
      if (!tok.vector.allFinite()) {
        add(ViolationKind::non_finite, r.patient_id,
            "token " + std::to_string(t) + " has non-finite components");
      }
      if (tok.modality == Modality::US && tok.period) {
        add(ViolationKind::us_period, r.patient_id, "ultrasound token carries a period");
      }
    }
    if (r.concept_annotations) {
      for (const auto& key : *r.concept_annotations) {
        if (!known.count(key)) {
          add(ViolationKind::orphan_annotation, r.patient_id,
              "orphan annotation " + to_string(key) + " not in concept catalogue");
        } else if (!r.has_modality(key.modality)) {
          add(ViolationKind::annotation_modality_absent, r.patient_id,
              "annotation " + to_string(key) + " refers to a modality the record lacks");
        }
      }
    }
  }

  if (!manifest.splits.empty()) {
    for (const auto& r : manifest.records) {
      const auto it = manifest.splits.find(r.patient_id);
      if (it == manifest.splits.end()) {
        add(ViolationKind::missing_split, r.patient_id, "patient has no split assignment");
        continue;
      }
      if (it->second.fold < 0) {
        add(ViolationKind::bad_fold, r.patient_id, "negative fold index");
      }
      if (it->second.is_test() && !r.is_multimodal()) {
        add(ViolationKind::test_not_multimodal, r.patient_id,
            "test patient lacks all 3 modalities");
      }
    }
    for (const auto& [id, s] : manifest.splits) {
      if (!seen.count(id)) {
        add(ViolationKind::unknown_split_patient, id, "split assigned to unknown patient");
      }
    }
    // Folds must be numbered 1..n without gaps.
    std::set<int> folds;
    for (const auto& [id, s] : manifest.splits) {
      if (!s.is_test()) folds.insert(s.fold);
    }
    int expect = 1;
    for (int f : folds) {
      if (f != expect) {
        add(ViolationKind::bad_fold, "fold_" + std::to_string(f), "fold numbering has a gap");
        break;
      }
      ++expect;
    }
  }
  return report;
}

}  // namespace mmcbm
