#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "mmcbm/concepts.hpp"
#include "mmcbm/error.hpp"
#include "mmcbm/util.hpp"

using namespace mmcbm;

namespace {

std::unique_ptr<MockProvider> fixture_provider() {
  return MockProvider::from_file((testsupport::source_dir() / "data/mock_provider.json").string());
}

nlohmann::json load_data(const std::string& name) {
  return nlohmann::json::parse(read_file(testsupport::source_dir() / "data" / name));
}

std::vector<Concept> cti_catalogue() {
  const auto phrases = load_data("cti_phrases.json")["phrases"];
  auto provider = fixture_provider();
  std::vector<Concept> catalogue;
  for (auto m : kModalities) {
    const auto list = phrases.at(std::string(to_string(m))).get<std::vector<std::string>>();
    const auto cs = concepts_from_groups(aggregate_concepts(list, m, *provider), m);
    catalogue.insert(catalogue.end(), cs.begin(), cs.end());
  }
  return catalogue;
}

std::map<Modality, std::size_t> active_counts(const std::vector<Concept>& cs) {
  std::map<Modality, std::size_t> out;
  for (const auto& c : cs) out[c.modality] += c.status != ConceptStatus::expert_removed;
  return out;
}

std::string groups_json(const std::vector<std::pair<std::string, std::vector<std::string>>>& gs) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& [canon, members] : gs) j.push_back({{"canonical", canon}, {"members", members}});
  return j.dump();
}

ConceptEdit add_edit(const std::string& id, Modality m, std::map<std::string, bool> patients = {}) {
  ConceptEdit e;
  e.kind = EditKind::add;
  e.concept_id = id;
  e.modality = m;
  e.text = "added " + id;
  e.patients = std::move(patients);
  e.editor = "reader-1";
  return e;
}

}  // namespace

TEST_CASE("templates render every placeholder") {
  for (auto k : {PromptKind::extraction, PromptKind::aggregation, PromptKind::report}) {
    const auto t = prompt_template(k);
    CHECK_FALSE(t.empty());
    CHECK(t.find("# template:") == std::string_view::npos);
  }
  CHECK(render_template("a {{x}} b {{y}} {{x}}", {{"x", "1"}, {"y", "2"}}) == "a 1 b 2 1");
  CHECK_THROWS_AS(render_template("{{missing}}", {}), InvalidArgument);
  const auto p = render_template(prompt_template(PromptKind::extraction), {{"modality", "FA"}, {"report", "R"}});
  CHECK(p.find("{{") == std::string::npos);
}

TEST_CASE("the FA fixture report yields its three findings") {
  const auto report = read_file(testsupport::source_dir() / "data/fa_report.txt");
  auto provider = fixture_provider();
  const auto got = extract_concepts(report, Modality::FA, *provider);
  const std::vector<ExtractedConcept> expected = {
      {"Clustered Hypofluorescence During Venous Phase", Modality::FA},
      {"Globally Increasing Fluorescence Intensity", Modality::FA},
      {"Late-Stage Staining", Modality::FA}};
  CHECK(got == expected);
  // deterministic at temperature 0
  CHECK(extract_concepts(report, Modality::FA, *provider) == got);
  CHECK(provider->prompts().front().find(report.substr(0, 40)) != std::string::npos);
  CHECK_THROWS_AS(extract_concepts("   \n", Modality::FA, *provider), InvalidArgument);
  UnavailableProvider down;
  CHECK_THROWS_AS(extract_concepts(report, Modality::FA, down), ProviderError);
}

TEST_CASE("patient identifiers are redacted from prompts and phrases") {
  CHECK(redact("P-17 shows P-17 again", {"P-17"}) == "[patient] shows [patient] again");
  CHECK(redact("nothing", {""}) == "nothing");
  MockProvider p;
  p.set_default(R"(["lesion in P-9", "staining"])");
  ExtractionOptions opt;
  opt.patient_ids = {"P-9"};
  const auto got = extract_concepts("Report for P-9: staining.", Modality::ICGA, p, opt);
  CHECK(p.prompts().back().find("P-9") == std::string::npos);
  for (const auto& c : got) CHECK(c.phrase.find("P-9") == std::string::npos);
}

TEST_CASE("phrase list formats") {
  const std::vector<std::string> ab = {"a", "b"};
  CHECK(parse_phrase_list(R"(["a", "b", "a"])") == ab);
  CHECK(parse_phrase_list(R"({"concepts": ["a", "b"]})") == ab);
  CHECK(parse_phrase_list("- a\n* b\n") == ab);
  CHECK(parse_phrase_list("1. a\n2) b\n") == ab);
  CHECK(parse_phrase_list("```json\n[\"a\", \"b\"]\n```") == ab);
  try {
    parse_phrase_list("   ");
    FAIL("expected a ProviderError");
  } catch (const ProviderError& e) {
    CHECK(e.raw() == "   ");
  }
}

TEST_CASE("aggregation") {
  SUBCASE("duplicates collapse to a singleton without a provider call") {
    MockProvider p;
    const auto g = aggregate_concepts({"Late Staining", "Late Staining"}, Modality::FA, p);
    REQUIRE(g.size() == 1);
    CHECK(g[0].id == "late-staining");
    CHECK(p.calls() == 0);
  }
  SUBCASE("valid proposal accepted") {
    MockProvider p;
    p.set_default(groups_json({{"Staining", {"late staining", "staining late"}}, {"Leak", {"leak"}}}));
    const auto g = aggregate_concepts({"late staining", "staining late", "leak"}, Modality::FA, p);
    CHECK(g.size() == 2);
    CHECK(p.calls() == 1);
    const auto cs = concepts_from_groups(g, Modality::FA);
    CHECK(cs[0].provenance == Provenance::report_extracted);
    CHECK(cs[0].status == ConceptStatus::active);
  }
  SUBCASE("a non-partition is retried once then rejected") {
    MockProvider p;
    p.set_default(groups_json({{"Staining", {"late staining"}}}));  // leaves "leak" out
    CHECK_THROWS_AS(aggregate_concepts({"late staining", "leak"}, Modality::FA, p), ProviderError);
    CHECK(p.calls() == 2);
    CHECK(p.prompts()[1].find("rejected") != std::string::npos);
  }
  SUBCASE("retry can recover") {
    MockProvider p;
    p.add_rule("rejected", groups_json({{"Staining", {"late staining"}}, {"Leak", {"leak"}}}));
    p.set_default("not json");
    CHECK(aggregate_concepts({"late staining", "leak"}, Modality::FA, p).size() == 2);
  }
  MockProvider none;
  CHECK_THROWS_AS(aggregate_concepts({}, Modality::FA, none), InvalidArgument);
}

TEST_CASE("partition checks") {
  const std::vector<std::string> ph = {"a", "b", "c"};
  CHECK_FALSE(partition_problem(ph, {{"x", "X", {"a", "b"}}, {"y", "Y", {"c"}}}).has_value());
  CHECK(partition_problem(ph, {{"x", "X", {"a", "b"}}, {"y", "Y", {"b", "c"}}}).has_value());
  CHECK(partition_problem(ph, {{"x", "X", {"a", "b", "c", "d"}}}).has_value());
  CHECK(partition_problem(ph, {{"x", "X", {"a"}}, {"x", "X", {"b", "c"}}}).has_value());
  CHECK(partition_problem(ph, {{"", "", {"a", "b", "c"}}}).has_value());
}

TEST_CASE("phrase fixture aggregates to the reference catalogue size") {
  const auto catalogue = cti_catalogue();
  const auto counts = active_counts(catalogue);
  CHECK(counts.at(Modality::FA) == 47);
  CHECK(counts.at(Modality::ICGA) == 30);
  CHECK(counts.at(Modality::US) == 26);
  CHECK(catalogue.size() == 103);
}

TEST_CASE("expert edit log") {
  const auto catalogue = cti_catalogue();
  const auto log = parse_edit_log(read_file(testsupport::source_dir() / "data/cti_edit_log.json"));
  REQUIRE(log.size() == 17);

  CHECK(apply_edits(catalogue, {}) == catalogue);
  CHECK(catalogue_hash(apply_edits(catalogue, {})) == catalogue_hash(catalogue));

  const auto edited = apply_edits(catalogue, log);
  const auto before = active_counts(catalogue), after = active_counts(edited);
  CHECK(after.at(Modality::FA) == before.at(Modality::FA) + 3);
  CHECK(after.at(Modality::ICGA) == before.at(Modality::ICGA) + 4);
  CHECK(after.at(Modality::US) == before.at(Modality::US));
  std::size_t added = 0;
  for (const auto& c : edited) added += c.provenance == Provenance::expert_added;
  CHECK(added == 12);

  CHECK(catalogue_hash(edited) == catalogue_hash(apply_edits(catalogue, log)));
  CHECK(catalogue_hash(edited) != catalogue_hash(catalogue));

  // replaying on the edited catalogue conflicts
  CHECK_THROWS_AS(apply_edits(edited, log), Conflict);

  ConceptEdit rm;
  rm.kind = EditKind::remove;
  rm.concept_id = "no-such-concept";
  rm.editor = "reader-1";
  CHECK_THROWS_AS(apply_edits(catalogue, {rm}), NotFound);
  rm.concept_id = catalogue.front().id;
  rm.modality = catalogue.front().modality;
  rm.editor.clear();
  CHECK_THROWS_AS(apply_edits(catalogue, {rm}), InvalidArgument);
}

TEST_CASE("edit JSON forms") {
  const auto e = add_edit("new-one", Modality::US, {{"p1", true}});
  CHECK(edit_from_json(to_json(e)) == e);
  const auto log = std::vector<ConceptEdit>{e, add_edit("other", Modality::FA)};
  CHECK(parse_edit_log(edit_log_to_json(log)) == log);
  const auto lines = to_json(log[0]).dump() + "\n" + to_json(log[1]).dump() + "\n";
  CHECK(parse_edit_log(lines) == log);
  CHECK_THROWS_AS(parse_edit_kind("rename"), InvalidArgument);
  CHECK_THROWS_AS(edit_from_json(nlohmann::json{{"kind", "add"}}), Error);
}

TEST_CASE("manifest edits rewrite annotations") {
  const auto& m = testsupport::synthetic_manifest();
  const std::string pid = m.records.front().patient_id;
  const auto e = add_edit("expert-spot", Modality::FA, {{pid, true}});
  const auto edited = apply_edits(m, {e});
  CHECK(edited.concepts.size() == m.concepts.size() + 1);
  const auto& rec = edited.records.front();
  REQUIRE(rec.concept_annotations.has_value());
  CHECK(rec.concept_annotations->count(e.key()) == 1);
  CHECK_THROWS_AS(apply_edits(m, {add_edit("x-y", Modality::FA, {{"nobody", true}})}), NotFound);
}

TEST_CASE("generated reports") {
  const auto model = testsupport::trained_model();
  const auto* rec = testsupport::synthetic_manifest().test_records().front();
  const ReportContext ctx{rec->patient_id, {{"age", "61"}, {"eye", "OD"}}};
  EchoProvider echo;
  for (std::size_t k : {3, 10}) {
    const auto e = model->explain(*rec, k);
    const auto r = generate_report(e, model->bank, ctx, echo);
    CHECK(r.available);
    CHECK(r.text == r.prompt);
    CHECK(r.inputs["top_k"].size() == k);
    for (const auto& t : e.top_k) CHECK(r.text.find(model->bank.concept_at(t.index).text) != std::string::npos);
    CHECK(r.text.find(std::to_string(k) + ". [") != std::string::npos);
    CHECK(r.text.find(std::to_string(k + 1) + ". [") == std::string::npos);
    CHECK(r.text.find("age: 61") != std::string::npos);
    CHECK(r.inputs["label"] == std::string(to_string(e.label)));
  }
  UnavailableProvider down;
  const auto r = generate_report(model->explain(*rec), model->bank, ctx, down);
  CHECK_FALSE(r.available);
  CHECK(r.text.empty());
  CHECK_FALSE(r.error.empty());

  auto provider = fixture_provider();
  const auto canned = generate_report(model->explain(*rec), model->bank, ctx, *provider);
  CHECK(canned.available);
  CHECK_FALSE(canned.text.empty());
}
