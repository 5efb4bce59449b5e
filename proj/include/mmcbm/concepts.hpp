#pragma once
// Report-driven concept pipeline: prompt templates, concept extraction and
// aggregation through an LLMProvider, the expert edit log, and report
// generation from an explanation.

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "mmcbm/core.hpp"
#include "mmcbm/llm.hpp"
#include "mmcbm/predictor.hpp"

namespace mmcbm {

enum class PromptKind : std::uint8_t { extraction, aggregation, report };

// Shipped template text with its "# template:" header line removed.
std::string_view prompt_template(PromptKind kind);
inline constexpr int kPromptVersion = 1;

// Substitutes every {{name}}. Throws InvalidArgument when a placeholder has
// no value.
std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& values);

struct ExtractionOptions {
  // Identifiers removed from the report before prompting and from any
  // returned phrase.
  std::vector<std::string> patient_ids;
  double temperature = 0.0;
  std::optional<std::uint64_t> seed;
};

struct ExtractedConcept {
  std::string phrase;
  Modality modality = Modality::FA;
  bool operator==(const ExtractedConcept&) const = default;
};

// Replaces each identifier occurrence with "[patient]".
std::string redact(std::string_view text, const std::vector<std::string>& identifiers);

// Accepts a JSON array of strings, {"concepts": [...]}, or one phrase per
// line with optional bullet or numbering. Verbatim repeats are dropped.
// Throws ProviderError (with the raw text) when nothing usable is found.
std::vector<std::string> parse_phrase_list(const std::string& response);

// Throws InvalidArgument on an empty report; provider failures propagate as
// ProviderError.
std::vector<ExtractedConcept> extract_concepts(std::string_view report_text, Modality modality,
                                               LLMProvider& provider,
                                               const ExtractionOptions& options = {});

struct ConceptGroup {
  std::string id;  // slug of the canonical phrase
  std::string canonical;
  std::vector<std::string> members;
  bool operator==(const ConceptGroup&) const = default;
};

// Checks that `groups` partitions `phrases` and that canonical names and ids
// are non-empty and unique. Returns an error message, or nothing when valid.
std::optional<std::string> partition_problem(const std::vector<std::string>& phrases,
                                             const std::vector<ConceptGroup>& groups);

// Verbatim duplicates are merged locally; one remaining phrase is returned
// as its own group without a provider call. Otherwise the provider proposes
// groups; an invalid proposal is retried once with the problem described in
// the prompt, then rejected with ProviderError.
std::vector<ConceptGroup> aggregate_concepts(const std::vector<std::string>& phrases,
                                             Modality modality, LLMProvider& provider,
                                             double temperature = 0.0,
                                             std::optional<std::uint64_t> seed = std::nullopt);

// Catalogue entries (report_extracted, active) for aggregated groups.
std::vector<Concept> concepts_from_groups(const std::vector<ConceptGroup>& groups, Modality m);

enum class EditKind : std::uint8_t { add, remove, remap };
std::string_view to_string(EditKind k);
EditKind parse_edit_kind(std::string_view s);

struct ConceptEdit {
  EditKind kind = EditKind::add;
  std::string concept_id;
  Modality modality = Modality::FA;
  std::string text;  // add only
  // Patient id -> whether the patient shows the concept (add / remap).
  std::map<std::string, bool> patients;
  std::string editor;
  std::string timestamp;  // ISO-8601, informational

  ConceptKey key() const { return {modality, concept_id}; }
  bool operator==(const ConceptEdit&) const = default;
};

nlohmann::json to_json(const ConceptEdit& e);
ConceptEdit edit_from_json(const nlohmann::json& j);
// A JSON array of edits, or one JSON object per line.
std::vector<ConceptEdit> parse_edit_log(const std::string& text);
std::string edit_log_to_json(const std::vector<ConceptEdit>& log);

// Removes mark the concept expert_removed; adds append an expert_added
// concept. Throws InvalidArgument on a malformed edit or empty editor,
// Conflict when adding an id that already exists or removing one already
// removed, NotFound when removing or remapping an unknown id.
std::vector<Concept> apply_edits(std::vector<Concept> catalogue, const std::vector<ConceptEdit>& log);

// Also rewrites the annotations of the patients named in add / remap edits.
// Throws NotFound for an unknown patient.
DatasetManifest apply_edits(DatasetManifest manifest, const std::vector<ConceptEdit>& log);

// FNV-1a of the canonical JSON of a catalogue.
std::uint64_t catalogue_hash(const std::vector<Concept>& catalogue);

struct ReportContext {
  std::string patient_id;
  std::map<std::string, std::string> fields;  // e.g. age, sex, eye
};

struct GeneratedReport {
  bool available = false;
  std::string text;    // verbatim provider output when available
  std::string prompt;  // rendered prompt
  nlohmann::json inputs;  // structured inputs logged with the output
  std::string error;
};

// Lists every top-k concept of `explanation`. Provider failures yield
// available = false; nothing is thrown for them.
GeneratedReport generate_report(const Explanation& explanation, const ConceptBank& bank,
                                const ReportContext& context, LLMProvider& provider);

}  // namespace mmcbm
