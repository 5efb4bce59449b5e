#include "mmcbm/concepts.hpp"

#include <algorithm>
#include <cctype>
#include <iomanip>
#include <set>
#include <sstream>

#include "mmcbm/error.hpp"
#include "mmcbm/io.hpp"
#include "mmcbm/util.hpp"

namespace mmcbm::assets {
extern const std::string_view k_extraction_prompt;
extern const std::string_view k_aggregation_prompt;
extern const std::string_view k_report_prompt;
}  // namespace mmcbm::assets

namespace mmcbm {

using nlohmann::json;

namespace {

std::string_view strip_header(std::string_view text) {
  if (text.rfind("# template:", 0) == 0) {
    const auto nl = text.find('\n');
    return nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
  }
  return text;
}

std::string strip_code_fence(const std::string& text) {
  auto t = trim(text);
  if (t.rfind("```", 0) != 0) return t;
  const auto first_nl = t.find('\n');
  const auto last = t.rfind("```");
  if (first_nl == std::string::npos || last <= first_nl) return t;
  return trim(std::string_view(t).substr(first_nl + 1, last - first_nl - 1));
}

std::string strip_bullet(std::string line) {
  line = trim(line);
  for (std::string_view b : {"- ", "* ", "• "}) {
    if (line.rfind(b, 0) == 0) return trim(std::string_view(line).substr(b.size()));
  }
  std::size_t i = 0;
  while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
  if (i > 0 && i + 1 < line.size() && (line[i] == '.' || line[i] == ')') && line[i + 1] == ' ') {
    return trim(std::string_view(line).substr(i + 2));
  }
  return line;
}

std::string unquote(std::string s) {
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
  return s;
}

void push_unique(std::vector<std::string>& out, std::set<std::string>& seen, std::string phrase) {
  if (phrase.empty()) return;
  if (seen.insert(phrase).second) out.push_back(std::move(phrase));
}

std::vector<std::string> unique_phrases(const std::vector<std::string>& phrases) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& p : phrases) {
    auto t = trim(p);
    if (t.empty()) throw InvalidArgument("concept phrases must be non-empty");
    push_unique(out, seen, std::move(t));
  }
  return out;
}

std::optional<std::vector<ConceptGroup>> parse_groups(const std::string& response) {
  json j;
  try {
    j = json::parse(strip_code_fence(response));
  } catch (const json::exception&) {
    return std::nullopt;
  }
  if (j.is_object() && j.contains("groups")) j = j["groups"];
  if (!j.is_array()) return std::nullopt;
  std::vector<ConceptGroup> groups;
  for (const auto& g : j) {
    if (!g.is_object() || !g.contains("canonical") || !g["canonical"].is_string() ||
        !g.contains("members") || !g["members"].is_array()) {
      return std::nullopt;
    }
    ConceptGroup cg;
    cg.canonical = trim(g["canonical"].get<std::string>());
    cg.id = slugify(cg.canonical);
    for (const auto& m : g["members"]) {
      if (!m.is_string()) return std::nullopt;
      cg.members.push_back(trim(m.get<std::string>()));
    }
    groups.push_back(std::move(cg));
  }
  return groups;
}

bool valid_id(std::string_view id) { return !id.empty() && slugify(id) == id; }

void apply_catalogue_edit(std::vector<Concept>& catalogue, const ConceptEdit& e) {
  if (e.editor.empty()) throw InvalidArgument("edit of " + e.concept_id + " has no editor id");
  if (!valid_id(e.concept_id)) {
    throw InvalidArgument("concept id '" + e.concept_id + "' is not a lower-case slug");
  }
  const auto key = e.key();
  const auto it = std::find_if(catalogue.begin(), catalogue.end(),
                               [&](const Concept& c) { return c.key() == key; });
  switch (e.kind) {
    case EditKind::add:
      if (trim(e.text).empty()) throw InvalidArgument("added concept " + to_string(key) + " has no text");
      if (it != catalogue.end()) throw Conflict("concept " + to_string(key) + " already exists");
      catalogue.push_back({e.concept_id, e.modality, trim(e.text), Provenance::expert_added,
                           ConceptStatus::active});
      break;
    case EditKind::remove:
      if (it == catalogue.end()) throw NotFound("cannot remove unknown concept " + to_string(key));
      if (!it->active()) throw Conflict("concept " + to_string(key) + " is already removed");
      it->status = ConceptStatus::expert_removed;
      break;
    case EditKind::remap:
      if (it == catalogue.end()) throw NotFound("cannot remap unknown concept " + to_string(key));
      break;
  }
}

}  // namespace

std::string_view prompt_template(PromptKind kind) {
  switch (kind) {
    case PromptKind::extraction: return strip_header(assets::k_extraction_prompt);
    case PromptKind::aggregation: return strip_header(assets::k_aggregation_prompt);
    case PromptKind::report: return strip_header(assets::k_report_prompt);
  }
  return {};
}

std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& values) {
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const auto open = tmpl.find("{{", pos);
    if (open == std::string_view::npos) break;
    const auto close = tmpl.find("}}", open + 2);
    if (close == std::string_view::npos) break;
    out.append(tmpl.substr(pos, open - pos));
    const auto name = trim(tmpl.substr(open + 2, close - open - 2));
    const auto it = values.find(name);
    if (it == values.end()) throw InvalidArgument("no value for template placeholder '" + name + "'");
    out += it->second;
    pos = close + 2;
  }
  out.append(tmpl.substr(pos));
  return out;
}

std::string redact(std::string_view text, const std::vector<std::string>& identifiers) {
  std::string out(text);
  for (const auto& id : identifiers) {
    if (id.empty()) continue;
    std::size_t pos = 0;
    while ((pos = out.find(id, pos)) != std::string::npos) {
      out.replace(pos, id.size(), "[patient]");
      pos += 9;
    }
  }
  return out;
}

std::vector<std::string> parse_phrase_list(const std::string& response) {
  const auto text = strip_code_fence(response);
  std::vector<std::string> out;
  std::set<std::string> seen;
  json j;
  bool is_json = false;
  try {
    j = json::parse(text);
    is_json = true;
  } catch (const json::exception&) {
  }
  if (is_json) {
    if (j.is_object() && j.contains("concepts")) j = j["concepts"];
    if (!j.is_array()) throw ProviderError("expected a JSON array of concept phrases", response);
    for (const auto& v : j) {
      if (!v.is_string()) throw ProviderError("concept list holds a non-string entry", response);
      push_unique(out, seen, trim(v.get<std::string>()));
    }
  } else {
    for (const auto& line : split_lines(text)) push_unique(out, seen, trim(unquote(strip_bullet(line))));
  }
  if (out.empty()) throw ProviderError("provider returned no concept phrases", response);
  return out;
}

std::vector<ExtractedConcept> extract_concepts(std::string_view report_text, Modality modality,
                                               LLMProvider& provider,
                                               const ExtractionOptions& options) {
  if (trim(report_text).empty()) throw InvalidArgument("report text is empty");
  const auto prompt =
      render_template(prompt_template(PromptKind::extraction),
                      {{"modality", std::string(to_string(modality))},
                       {"report", redact(trim(report_text), options.patient_ids)}});
  const auto response = provider.complete(prompt, options.temperature, options.seed);
  std::vector<ExtractedConcept> out;
  for (auto& phrase : parse_phrase_list(response)) {
    const bool leaks = std::any_of(options.patient_ids.begin(), options.patient_ids.end(),
                                   [&](const std::string& id) {
                                     return !id.empty() && phrase.find(id) != std::string::npos;
                                   });
    if (!leaks) out.push_back({std::move(phrase), modality});
  }
  return out;
}

std::optional<std::string> partition_problem(const std::vector<std::string>& phrases,
                                             const std::vector<ConceptGroup>& groups) {
  const std::set<std::string> universe(phrases.begin(), phrases.end());
  std::set<std::string> covered, ids, canonicals;
  for (const auto& g : groups) {
    if (g.canonical.empty() || g.id.empty()) return "a group has an empty canonical name";
    if (!ids.insert(g.id).second || !canonicals.insert(g.canonical).second) {
      return "canonical name '" + g.canonical + "' is used by two groups";
    }
    if (g.members.empty()) return "group '" + g.canonical + "' has no members";
    for (const auto& m : g.members) {
      if (!universe.count(m)) return "'" + m + "' is not one of the input phrases";
      if (!covered.insert(m).second) return "'" + m + "' appears in more than one group";
    }
  }
  for (const auto& p : universe) {
    if (!covered.count(p)) return "'" + p + "' is missing from the groups";
  }
  return std::nullopt;
}

std::vector<ConceptGroup> aggregate_concepts(const std::vector<std::string>& phrases,
                                             Modality modality, LLMProvider& provider,
                                             double temperature, std::optional<std::uint64_t> seed) {
  if (phrases.empty()) throw InvalidArgument("aggregation needs at least one phrase");
  const auto unique = unique_phrases(phrases);
  if (unique.size() == 1) return {{slugify(unique[0]), unique[0], {unique[0]}}};

  std::string listing;
  for (const auto& p : unique) listing += "- " + p + "\n";
  std::string feedback;
  std::string last_problem, last_raw;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const auto prompt = render_template(prompt_template(PromptKind::aggregation),
                                        {{"modality", std::string(to_string(modality))},
                                         {"phrases", listing},
                                         {"feedback", feedback}});
    last_raw = provider.complete(prompt, temperature, seed);
    const auto groups = parse_groups(last_raw);
    const auto problem = groups ? partition_problem(unique, *groups)
                                : std::optional<std::string>("the answer is not a JSON list of groups");
    if (!problem) return *groups;
    last_problem = *problem;
    feedback = "\nYour previous answer was rejected: " + last_problem + ". Send a corrected answer.\n";
  }
  throw ProviderError("aggregation proposal rejected: " + last_problem, last_raw);
}

std::vector<Concept> concepts_from_groups(const std::vector<ConceptGroup>& groups, Modality m) {
  std::vector<Concept> out;
  for (const auto& g : groups) {
    out.push_back({g.id, m, g.canonical, Provenance::report_extracted, ConceptStatus::active});
  }
  return out;
}

std::string_view to_string(EditKind k) {
  switch (k) {
    case EditKind::add: return "add";
    case EditKind::remove: return "remove";
    case EditKind::remap: return "remap";
  }
  return "?";
}

EditKind parse_edit_kind(std::string_view s) {
  if (s == "add") return EditKind::add;
  if (s == "remove") return EditKind::remove;
  if (s == "remap") return EditKind::remap;
  throw InvalidArgument("unknown edit kind '" + std::string(s) + "'");
}

json to_json(const ConceptEdit& e) {
  return {{"kind", std::string(to_string(e.kind))},
          {"concept_id", e.concept_id},
          {"modality", std::string(to_string(e.modality))},
          {"text", e.text},
          {"patients", e.patients},
          {"editor", e.editor},
          {"timestamp", e.timestamp}};
}

ConceptEdit edit_from_json(const json& j) {
  try {
    ConceptEdit e;
    e.kind = parse_edit_kind(j.at("kind").get<std::string>());
    e.concept_id = j.at("concept_id").get<std::string>();
    e.modality = parse_modality(j.at("modality").get<std::string>());
    e.text = j.value("text", "");
    if (j.contains("patients")) e.patients = j.at("patients").get<std::map<std::string, bool>>();
    e.editor = j.value("editor", "");
    e.timestamp = j.value("timestamp", "");
    return e;
  } catch (const json::exception& ex) {
    throw FormatError(std::string("malformed concept edit: ") + ex.what());
  }
}

std::vector<ConceptEdit> parse_edit_log(const std::string& text) {
  std::vector<ConceptEdit> log;
  const auto t = trim(text);
  if (t.empty()) return log;
  try {
    if (t.front() == '[') {
      for (const auto& e : json::parse(t)) log.push_back(edit_from_json(e));
      return log;
    }
    for (const auto& line : split_lines(t)) {
      if (trim(line).empty()) continue;
      log.push_back(edit_from_json(json::parse(line)));
    }
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("edit log is not valid JSON: ") + e.what());
  }
  return log;
}

std::string edit_log_to_json(const std::vector<ConceptEdit>& log) {
  json j = json::array();
  for (const auto& e : log) j.push_back(to_json(e));
  return j.dump(2);
}

std::vector<Concept> apply_edits(std::vector<Concept> catalogue, const std::vector<ConceptEdit>& log) {
  for (const auto& e : log) apply_catalogue_edit(catalogue, e);
  return catalogue;
}

DatasetManifest apply_edits(DatasetManifest manifest, const std::vector<ConceptEdit>& log) {
  for (const auto& e : log) {
    apply_catalogue_edit(manifest.concepts, e);
    if (e.kind == EditKind::remove) continue;
    for (const auto& [pid, present] : e.patients) {
      auto it = std::find_if(manifest.records.begin(), manifest.records.end(),
                             [&](const PatientRecord& r) { return r.patient_id == pid; });
      if (it == manifest.records.end()) throw NotFound("edit names unknown patient " + pid);
      if (present && !it->has_modality(e.modality)) {
        throw InvalidArgument("patient " + pid + " has no " + std::string(to_string(e.modality)) +
                              " images");
      }
      if (!it->concept_annotations) it->concept_annotations.emplace();
      if (present) {
        it->concept_annotations->insert(e.key());
      } else {
        it->concept_annotations->erase(e.key());
      }
    }
  }
  return manifest;
}

std::uint64_t catalogue_hash(const std::vector<Concept>& catalogue) {
  json j = json::array();
  for (const auto& c : catalogue) j.push_back(io::concept_to_json(c));
  return fnv1a64(j.dump());
}

GeneratedReport generate_report(const Explanation& explanation, const ConceptBank& bank,
                                const ReportContext& context, LLMProvider& provider) {
  GeneratedReport out;
  std::ostringstream concepts, ctx;
  json top = json::array();
  for (const auto& r : explanation.top_k) {
    const auto& c = bank.concept_at(r.index);
    concepts << r.rank << ". [" << to_string(c.modality) << "] " << c.text << " (attention "
             << std::fixed << std::setprecision(4) << r.attention << ")\n";
    top.push_back({{"key", to_string(c.key())},
                   {"text", c.text},
                   {"attention", r.attention},
                   {"score", r.score},
                   {"rank", r.rank}});
  }
  if (!context.patient_id.empty()) ctx << "- Patient ID: " << context.patient_id << "\n";
  for (const auto& [k, v] : context.fields) ctx << "- " << k << ": " << v << "\n";
  if (ctx.str().empty()) ctx << "- not provided\n";

  const std::string label(to_string(explanation.label));
  out.inputs = {{"patient_id", context.patient_id},
                {"fields", context.fields},
                {"label", label},
                {"probabilities", explanation.probabilities},
                {"top_k", top}};
  out.prompt = render_template(prompt_template(PromptKind::report),
                               {{"context", ctx.str()},
                                {"label", label},
                                {"k", std::to_string(explanation.top_k.size())},
                                {"concepts", concepts.str()}});
  try {
    out.text = provider.complete(out.prompt, 0.0, std::nullopt);
    out.available = true;
  } catch (const std::exception& e) {
    out.available = false;
    out.error = e.what();
  }
  return out;
}

}  // namespace mmcbm
