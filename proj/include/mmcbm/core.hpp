#pragma once
// Shared domain types: modalities, disease labels, concepts, patient records
// and the dataset manifest, plus the validation rules every module relies on.

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace mmcbm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using VectorF = Eigen::VectorXf;

inline constexpr std::size_t kDefaultEmbeddingDim = 1280;

enum class Modality : std::uint8_t { FA = 0, ICGA = 1, US = 2 };
inline constexpr std::size_t kNumModalities = 3;
inline constexpr std::array<Modality, kNumModalities> kModalities{
    Modality::FA, Modality::ICGA, Modality::US};

// Column order of every class-indexed vector and matrix.
enum class DiseaseLabel : std::uint8_t {
  hemangioma = 0,
  metastatic_carcinoma = 1,
  melanoma = 2,
};
inline constexpr std::size_t kNumClasses = 3;
inline constexpr std::array<DiseaseLabel, kNumClasses> kLabels{
    DiseaseLabel::hemangioma, DiseaseLabel::metastatic_carcinoma,
    DiseaseLabel::melanoma};

enum class Period : std::uint8_t { early = 0, middle = 1, late = 2 };

enum class Provenance : std::uint8_t { report_extracted = 0, expert_added = 1 };
enum class ConceptStatus : std::uint8_t { active = 0, expert_removed = 1 };

std::string_view to_string(Modality m);
std::string_view to_string(DiseaseLabel l);
std::string_view to_string(Period p);
std::string_view to_string(Provenance p);
std::string_view to_string(ConceptStatus s);

// Parsers throw InvalidArgument on unknown names.
Modality parse_modality(std::string_view s);
DiseaseLabel parse_label(std::string_view s);
Period parse_period(std::string_view s);
Provenance parse_provenance(std::string_view s);
ConceptStatus parse_status(std::string_view s);

inline std::size_t index_of(Modality m) { return static_cast<std::size_t>(m); }
inline std::size_t index_of(DiseaseLabel l) { return static_cast<std::size_t>(l); }

// Acquisition-time bin for FA / ICGA images. Throws InvalidArgument for US or
// negative / non-finite minutes.
Period period_of(Modality modality, double minutes);

// Concepts are identified by (modality, id); the same id may exist under two
// modalities. Text form is "FA:late-stage-staining".
struct ConceptKey {
  Modality modality = Modality::FA;
  std::string id;

  auto operator<=>(const ConceptKey&) const = default;
  bool operator==(const ConceptKey&) const = default;
};

std::string to_string(const ConceptKey& key);
ConceptKey parse_concept_key(std::string_view s);

struct Concept {
  std::string id;
  Modality modality = Modality::FA;
  std::string text;
  Provenance provenance = Provenance::report_extracted;
  ConceptStatus status = ConceptStatus::active;

  ConceptKey key() const { return {modality, id}; }
  bool active() const { return status == ConceptStatus::active; }
  bool operator==(const Concept&) const = default;
};

// Canonical concept order: FA, then ICGA, then US; alphabetical by id within
// each modality.
bool canonical_less(const Concept& a, const Concept& b);

struct EmbeddingToken {
  Modality modality = Modality::FA;
  std::optional<Period> period;  // FA / ICGA only
  VectorF vector;

  bool operator==(const EmbeddingToken& o) const {
    return modality == o.modality && period == o.period &&
           vector.size() == o.vector.size() && vector == o.vector;
  }
};

using ModalitySet = std::array<bool, kNumModalities>;

struct PatientRecord {
  std::string patient_id;
  DiseaseLabel label = DiseaseLabel::hemangioma;
  std::vector<EmbeddingToken> tokens;
  // Ground-truth findings. Absent when the patient has no report.
  std::optional<std::set<ConceptKey>> concept_annotations;
  std::map<Modality, std::string> report_text;

  bool has_modality(Modality m) const;
  ModalitySet modalities() const;
  bool is_multimodal() const;
  bool annotated() const { return concept_annotations.has_value(); }
  bool operator==(const PatientRecord&) const = default;
};

// 0 is the held-out test pool, 1..n are cross-validation folds.
struct Split {
  int fold = 0;

  static constexpr Split test() { return Split{0}; }
  static constexpr Split cv_fold(int i) { return Split{i}; }
  bool is_test() const { return fold == 0; }
  auto operator<=>(const Split&) const = default;
};

std::string to_string(Split s);
Split parse_split(std::string_view s);

struct DatasetManifest {
  std::size_t embedding_dim = kDefaultEmbeddingDim;
  // Concept catalogue the annotations refer to.
  std::vector<Concept> concepts;
  std::vector<PatientRecord> records;
  // Empty until generate_splits is applied.
  std::map<std::string, Split> splits;

  const PatientRecord* find(std::string_view patient_id) const;
  const Concept* find_concept(const ConceptKey& key) const;
  int n_folds() const;
  std::vector<const PatientRecord*> select(Split s) const;
  std::vector<const PatientRecord*> test_records() const { return select(Split::test()); }
  // Records in any fold other than `held_out`, excluding the test pool.
  std::vector<const PatientRecord*> training_records(int held_out_fold) const;
  bool operator==(const DatasetManifest&) const = default;
};

enum class ViolationKind : std::uint8_t {
  bad_dimension,
  non_finite,
  no_tokens,
  us_period,
  orphan_annotation,
  annotation_modality_absent,
  duplicate_patient,
  duplicate_concept,
  empty_concept_text,
  missing_split,
  unknown_split_patient,
  bad_fold,
  test_not_multimodal,
};

std::string_view to_string(ViolationKind k);

struct Violation {
  ViolationKind kind;
  std::string subject;  // patient or concept id
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  bool has(ViolationKind k) const;
};

ValidationReport validate_manifest(const DatasetManifest& manifest);

}  // namespace mmcbm
