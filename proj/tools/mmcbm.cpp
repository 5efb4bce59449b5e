// mmcbm command-line front end.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mmcbm/bundle.hpp"
#include "mmcbm/concepts.hpp"
#include "mmcbm/error.hpp"
#include "mmcbm/experiment.hpp"
#include "mmcbm/ingest.hpp"
#include "mmcbm/intervention.hpp"
#include "mmcbm/io.hpp"
#include "mmcbm/kernels.hpp"
#include "mmcbm/service.hpp"
#include "mmcbm/util.hpp"

using namespace mmcbm;
using nlohmann::json;

namespace {

struct ProviderOptions {
  std::string kind = "mock";
  std::string fixture;
};

void add_provider_options(CLI::App* cmd, ProviderOptions& o) {
  cmd->add_option("--provider", o.kind, "mock, remote or echo")
      ->check(CLI::IsMember({"mock", "remote", "echo"}));
  cmd->add_option("--fixture", o.fixture, "mock provider fixture (JSON)");
}

std::shared_ptr<LLMProvider> make_provider(const ProviderOptions& o) {
  if (o.kind == "remote") return std::make_shared<RemoteProvider>(remote_config_from_env());
  if (o.kind == "echo") return std::make_shared<EchoProvider>();
  if (o.fixture.empty()) return std::make_shared<MockProvider>();
  return MockProvider::from_file(o.fixture);
}

void write_or_print(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    write_file(path, text);
  }
}

std::vector<std::size_t> parse_grid(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(static_cast<std::size_t>(std::stoul(item)));
    } catch (const std::exception&) {
      throw InvalidArgument("grid entry \"" + item + "\" is not a count");
    }
  }
  if (out.empty()) throw InvalidArgument("empty grid");
  return out;
}

std::pair<std::string, double> parse_assignment(const std::string& s) {
  const auto eq = s.rfind('=');
  if (eq == std::string::npos || eq == 0) throw InvalidArgument("expected concept=value, got " + s);
  try {
    std::size_t used = 0;
    const double v = std::stod(s.substr(eq + 1), &used);
    if (used != s.size() - eq - 1) throw std::invalid_argument("trailing");
    return {s.substr(0, eq), v};
  } catch (const std::exception&) {
    throw InvalidArgument("value in " + s + " is not a number");
  }
}

std::map<std::string, std::string> parse_fields(const std::vector<std::string>& items) {
  std::map<std::string, std::string> out;
  for (const auto& it : items) {
    const auto eq = it.find('=');
    if (eq == std::string::npos) throw InvalidArgument("expected key=value, got " + it);
    out[it.substr(0, eq)] = it.substr(eq + 1);
  }
  return out;
}

std::string summary_line(const std::string& name, const MetricSummary& m) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-5s acc %.4f  P %.4f  R %.4f  F1 %.4f", name.c_str(), m.accuracy,
                m.macro_precision, m.macro_recall, m.macro_f1);
  return buf;
}

void print_report(const EvalReport& r) {
  std::cout << "folds " << r.n_folds << ", test patients " << r.n_test << ", best fold "
            << r.best_fold << "\n";
  for (const auto& [subset, ev] : r.subsets) {
    std::cout << summary_line(std::string(to_string(subset)), ev.aggregate);
    if (ev.ci.macro_f1.hi > 0.0) {
      std::printf("  F1 CI [%.4f, %.4f]", ev.ci.macro_f1.lo, ev.ci.macro_f1.hi);
    }
    std::cout << "\n";
  }
  if (r.retrieval) {
    const auto& m = *r.retrieval;
    std::printf("retrieval@%zu over %zu patients: P %.4f  R %.4f  F1 %.4f  MRR %.4f\n", m.k,
                m.n_patients, m.precision, m.recall, m.f1, m.mrr);
  }
}

TrainConfig with_seed(TrainConfig c, std::uint64_t seed, bool class_weighting) {
  c.seed = seed;
  c.class_weighting = class_weighting;
  return c;
}

const PatientRecord& require_patient(const DatasetManifest& m, const std::string& id) {
  const auto* rec = m.find(id);
  if (!rec) throw NotFound("unknown patient " + id);
  return *rec;
}

// ---------------------------------------------------------------- ingest

int ingest_validate(const std::string& path) {
  const auto manifest = io::load_manifest(path);
  const auto report = validate_manifest(manifest);
  for (const auto& v : report.violations) {
    std::cout << to_string(v.kind) << "\t" << v.subject << "\t" << v.message << "\n";
  }
  std::cout << manifest.records.size() << " patients, " << manifest.concepts.size() << " concepts, "
            << report.violations.size() << " violations\n";
  return report.ok() ? 0 : 1;
}

int ingest_split(const std::string& path, const std::string& out, double frac, int folds,
                 std::uint64_t seed) {
  auto manifest = generate_splits(io::load_manifest(path), SplitConfig{frac, folds, seed});
  io::save_manifest(manifest, out.empty() ? path : out);
  std::cout << "test " << manifest.test_records().size();
  for (int f = 1; f <= folds; ++f) std::cout << ", fold_" << f << " " << manifest.select(Split::cv_fold(f)).size();
  std::cout << "\nmanifest hash " << hex64(io::manifest_hash(manifest)) << "\n";
  return 0;
}

int ingest_synth(const std::string& spec_path, const std::string& out, std::optional<std::uint64_t> seed,
                 std::optional<std::uint64_t> split_seed) {
  auto spec = spec_path.empty() ? default_synthetic_spec()
                                : synthetic_spec_from_json(json::parse(read_file(spec_path)));
  if (seed) spec.rng_seed = *seed;
  auto cohort = generate_synthetic_cohort(spec);
  auto manifest = std::move(cohort.manifest);
  if (split_seed) manifest = generate_splits(std::move(manifest), SplitConfig{0.2, 5, *split_seed});
  io::save_manifest(manifest, out);
  std::cout << "wrote " << manifest.records.size() << " patients, " << manifest.concepts.size()
            << " concepts to " << out << "\n";
  return 0;
}

// ---------------------------------------------------------------- cav

int cav_train(const std::string& manifest_path, const std::string& bank_out, const std::string& report,
              double C, std::uint64_t seed) {
  const auto manifest = io::load_manifest(manifest_path);
  BankTrainingConfig cfg;
  cfg.svm.C = C;
  cfg.svm.seed = seed;
  const auto result = train_concept_bank(manifest, cfg);
  std::ostringstream csv;
  csv << "concept_id,modality,train_acc,test_acc\n";
  for (const auto& cav : result.cavs) {
    csv << cav.key.id << "," << to_string(cav.key.modality) << "," << cav.train_accuracy << ",";
    if (cav.test_accuracy) csv << *cav.test_accuracy;
    csv << "\n";
  }
  if (!report.empty()) write_file(report, csv.str());
  ModelBundle bundle{result.bank, std::nullopt, std::nullopt,
                     {{"kind", "concept_bank"}, {"manifest_hash", hex64(io::manifest_hash(manifest))}}};
  save_bundle(bundle, bank_out);
  double worst = 1.0;
  for (const auto& cav : result.cavs) worst = std::min(worst, cav.test_accuracy.value_or(1.0));
  std::cout << result.bank.size() << " concepts, min test accuracy " << worst << ", "
            << kernels::max_threads() << " threads\n";
  return 0;
}

// ---------------------------------------------------------------- baseline

int baseline_train(const std::string& manifest_path, const std::string& out, int fold,
                   std::uint64_t seed, bool class_weighting) {
  const auto manifest = io::load_manifest(manifest_path);
  TrainingHistory history;
  auto model = train_baseline(manifest, fold,
                              with_seed(default_baseline_config(), seed, class_weighting), &history);
  ModelBundle bundle;
  bundle.bank = ConceptBank({}, Matrix(0, static_cast<Eigen::Index>(manifest.embedding_dim)), {});
  bundle.baseline = std::move(model);
  bundle.metadata = {{"kind", "baseline"}, {"validation_fold", std::to_string(fold)}};
  save_bundle(bundle, out);
  std::cout << "epochs " << history.epochs_run << ", best epoch " << history.best_epoch
            << ", best validation loss " << history.best_val_loss << "\n";
  return 0;
}

int baseline_eval(const std::string& manifest_path, const std::string& json_out,
                  const std::string& csv_out, std::uint64_t seed, std::size_t resamples) {
  const auto manifest = io::load_manifest(manifest_path);
  CvConfig cv;
  cv.seed = seed;
  cv.bootstrap_resamples = resamples;
  const auto report = run_cv(manifest, baseline_trainer(with_seed(default_baseline_config(), seed, false)), cv);
  print_report(report);
  if (!json_out.empty()) write_file(json_out, to_json(report).dump(2) + "\n");
  if (!csv_out.empty()) write_file(csv_out, eval_csv(report));
  return 0;
}

// ---------------------------------------------------------------- mmcbm

int mmcbm_train(const std::string& manifest_path, const std::string& bank_path, const std::string& out,
                int fold, std::uint64_t seed, bool class_weighting) {
  const auto manifest = io::load_manifest(manifest_path);
  ConceptBank bank;
  if (!bank_path.empty()) {
    bank = load_bundle(bank_path, manifest.embedding_dim).bank;
  } else {
    BankTrainingConfig cfg;
    cfg.svm.seed = seed;
    bank = train_concept_bank(manifest, cfg).bank;
  }
  TrainingHistory history;
  auto predictor = train_predictor(manifest, bank, fold,
                                   with_seed(default_predictor_config(), seed, class_weighting),
                                   &history);
  ModelBundle bundle{bank, std::move(predictor), std::nullopt,
                     {{"kind", "mmcbm"},
                      {"validation_fold", std::to_string(fold)},
                      {"manifest_hash", hex64(io::manifest_hash(manifest))}}};
  save_bundle(bundle, out);
  std::cout << bank.size() << " concepts, epochs " << history.epochs_run << ", best epoch "
            << history.best_epoch << ", best validation loss " << history.best_val_loss << "\n";
  return 0;
}

std::vector<EmbeddingToken> tokens_for(const std::string& manifest_path, const std::string& patient,
                                       const std::string& tokens_path) {
  if (!tokens_path.empty()) return io::tokens_from_json(json::parse(read_file(tokens_path)));
  if (manifest_path.empty() || patient.empty()) {
    throw InvalidArgument("give --manifest with --patient, or --tokens");
  }
  const auto manifest = io::load_manifest(manifest_path);
  return require_patient(manifest, patient).tokens;
}

void print_explanation(const Explanation& e, const ConceptBank& bank) {
  std::cout << "label " << to_string(e.label) << "\n";
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    std::printf("  %-22s logit %+.6f  p %.4f\n", std::string(to_string(kLabels[c])).c_str(),
                e.logits[c], e.probabilities[c]);
  }
  for (const auto& r : e.top_k) {
    std::printf("  %2zu. %-28s attention %+.4f  score %+.4f  %s\n", r.rank,
                to_string(bank.concept_at(r.index).key()).c_str(), r.attention, r.score,
                bank.concept_at(r.index).text.c_str());
  }
}

int mmcbm_predict(const std::string& model_path, const std::string& manifest_path,
                  const std::string& patient, const std::string& tokens_path, std::size_t k,
                  bool as_json) {
  const auto model = to_model(load_bundle(model_path));
  const auto tokens = tokens_for(manifest_path, patient, tokens_path);
  if (k < 1 || k > model.bank.size()) throw InvalidArgument("--k must lie in [1, " + std::to_string(model.bank.size()) + "]");
  const auto e = predict(concept_scores(tokens, model.bank), model.predictor, k);
  if (as_json) {
    auto j = explanation_to_json(e, model.bank);
    j["patient_ref"] = patient.empty() ? "payload" : patient;
    std::cout << j.dump(2) << "\n";
  } else {
    print_explanation(e, model.bank);
  }
  return 0;
}

int mmcbm_intervene(const std::string& model_path, const std::string& manifest_path,
                    const std::string& patient, const std::string& tokens_path,
                    const std::vector<std::string>& sets, std::size_t k, bool as_json) {
  auto model = std::make_shared<const MmcbmModel>(to_model(load_bundle(model_path)));
  const auto tokens = tokens_for(manifest_path, patient, tokens_path);
  InterventionSession session(model, concept_scores(tokens, model->bank), k);
  const auto before = session.current();
  for (const auto& s : sets) {
    const auto [ref, value] = parse_assignment(s);
    session.intervene(ref, value);
  }
  const auto& after = session.current();
  if (as_json) {
    auto j = explanation_to_json(after, model->bank);
    json deltas = json::object();
    const auto d = logit_deltas(before, after);
    for (std::size_t c = 0; c < kNumClasses; ++c) deltas[std::string(to_string(kLabels[c]))] = d[c];
    j["logit_deltas"] = deltas;
    j["before"] = explanation_to_json(before, model->bank);
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << "before: " << to_string(before.label) << "\nafter:\n";
    print_explanation(after, model->bank);
  }
  return 0;
}

// ---------------------------------------------------------------- eval

PipelineConfig pipeline_config(std::uint64_t seed, std::size_t k, std::size_t resamples, bool class_weighting) {
  PipelineConfig cfg;
  cfg.bank.svm.seed = seed;
  cfg.predictor = with_seed(default_predictor_config(), seed, class_weighting);
  cfg.cv.seed = seed;
  cfg.cv.k = k;
  cfg.cv.bootstrap_resamples = resamples;
  return cfg;
}

int eval_cv(const std::string& manifest_path, const std::string& json_out, const std::string& csv_out,
            std::uint64_t seed, std::size_t resamples, bool class_weighting) {
  const auto manifest = io::load_manifest(manifest_path);
  const auto result = run_mmcbm_pipeline(manifest, pipeline_config(seed, kDefaultTopK, resamples, class_weighting));
  print_report(result.report);
  if (!json_out.empty()) write_file(json_out, to_json(result.report).dump(2) + "\n");
  if (!csv_out.empty()) write_file(csv_out, eval_csv(result.report));
  return 0;
}

int eval_retrieval(const std::string& manifest_path, std::size_t k, std::uint64_t seed,
                   const std::string& json_out) {
  const auto manifest = io::load_manifest(manifest_path);
  const auto result = run_mmcbm_pipeline(manifest, pipeline_config(seed, k, 0, false));
  if (!result.report.retrieval) throw InvalidArgument("no annotated test patients");
  const auto j = to_json(*result.report.retrieval);
  std::cout << j.dump(2) << "\n";
  if (!json_out.empty()) write_file(json_out, j.dump(2) + "\n");
  return 0;
}

int eval_ablate(const std::string& manifest_path, const std::string& axis, const std::string& grid,
                std::uint64_t seed, const std::string& csv_out) {
  const auto manifest = io::load_manifest(manifest_path);
  const auto curve = ablate(manifest, parse_ablation_axis(axis), parse_grid(grid),
                            pipeline_config(seed, kDefaultTopK, 0, false));
  for (const auto& p : curve.points) {
    std::cout << to_string(curve.axis) << " " << p.value << " (bank " << p.bank_size << ")\n";
    for (const auto& [subset, m] : p.metrics) {
      std::cout << "  " << summary_line(std::string(to_string(subset)), m) << "\n";
    }
  }
  for (const auto& [subset, s] : curve.slope) {
    std::printf("slope %-5s %+.4f\n", std::string(to_string(subset)).c_str(), s);
  }
  if (!csv_out.empty()) write_file(csv_out, ablation_csv(curve));
  return 0;
}

// ---------------------------------------------------------------- concepts

int concepts_extract(const std::string& manifest_path, const ProviderOptions& po, const std::string& out,
                     double temperature) {
  const auto manifest = io::load_manifest(manifest_path);
  auto provider = make_provider(po);
  std::map<Modality, std::vector<std::string>> phrases;
  json per_patient = json::object();
  std::size_t failures = 0;
  for (const auto& rec : manifest.records) {
    for (const auto& [m, text] : rec.report_text) {
      if (trim(text).empty()) continue;
      ExtractionOptions opts;
      opts.patient_ids = {rec.patient_id};
      opts.temperature = temperature;
      try {
        for (const auto& c : extract_concepts(text, m, *provider, opts)) {
          auto& list = phrases[m];
          if (std::find(list.begin(), list.end(), c.phrase) == list.end()) list.push_back(c.phrase);
          per_patient[rec.patient_id][std::string(to_string(m))].push_back(c.phrase);
        }
      } catch (const ProviderError& e) {
        ++failures;
        std::cerr << "extraction failed for " << rec.patient_id << " " << to_string(m) << ": "
                  << e.what() << "\n";
      }
    }
  }
  json j{{"phrases", json::object()}, {"patients", per_patient}};
  for (const auto& [m, list] : phrases) j["phrases"][std::string(to_string(m))] = list;
  write_or_print(out, j.dump(2) + "\n");
  std::cerr << failures << " failed reports\n";
  return failures ? 2 : 0;
}

int concepts_aggregate(const std::string& phrases_path, const ProviderOptions& po, const std::string& out) {
  const auto in = json::parse(read_file(phrases_path));
  const auto& phrases = in.contains("phrases") ? in.at("phrases") : in;
  auto provider = make_provider(po);
  json groups = json::object();
  json catalogue = json::array();
  for (const auto& [mod, list] : phrases.items()) {
    const auto m = parse_modality(mod);
    const auto g = aggregate_concepts(list.get<std::vector<std::string>>(), m, *provider);
    for (const auto& grp : g) {
      groups[mod].push_back({{"id", grp.id}, {"canonical", grp.canonical}, {"members", grp.members}});
    }
    for (const auto& c : concepts_from_groups(g, m)) catalogue.push_back(io::concept_to_json(c));
    std::cerr << mod << ": " << list.size() << " phrases -> " << g.size() << " concepts\n";
  }
  write_or_print(out, json{{"concepts", catalogue}, {"groups", groups}}.dump(2) + "\n");
  return 0;
}

int concepts_edit(const std::string& manifest_path, const std::string& log_path, const std::string& out) {
  auto manifest = io::load_manifest(manifest_path);
  const auto log = parse_edit_log(read_file(log_path));
  manifest = apply_edits(std::move(manifest), log);
  std::map<Modality, std::size_t> active;
  for (const auto& c : manifest.concepts) {
    if (c.active()) ++active[c.modality];
  }
  std::cout << log.size() << " edits applied;";
  for (const auto& [m, n] : active) std::cout << " " << to_string(m) << " " << n;
  std::cout << "\ncatalogue hash " << hex64(catalogue_hash(manifest.concepts)) << "\n";
  if (!out.empty()) io::save_manifest(manifest, out);
  return 0;
}

int report_generate(const std::string& model_path, const std::string& manifest_path,
                    const std::string& patient, std::size_t k, const std::vector<std::string>& fields,
                    const ProviderOptions& po, bool as_json) {
  const auto model = to_model(load_bundle(model_path));
  const auto manifest = io::load_manifest(manifest_path);
  const auto e = model.explain(require_patient(manifest, patient), k);
  auto provider = make_provider(po);
  const auto gen = generate_report(e, model.bank, ReportContext{patient, parse_fields(fields)}, *provider);
  if (as_json) {
    json j{{"available", gen.available}, {"report", gen.available ? gen.text : "unavailable"},
           {"inputs", gen.inputs}, {"prompt", gen.prompt}};
    if (!gen.available) j["error"] = gen.error;
    std::cout << j.dump(2) << "\n";
  } else if (gen.available) {
    std::cout << gen.text << "\n";
  } else {
    std::cerr << "report unavailable: " << gen.error << "\n";
  }
  return gen.available ? 0 : 3;
}

// ---------------------------------------------------------------- serve

int serve_cmd(const std::string& model_path, const std::string& manifest_path, const std::string& host,
              int port, const ProviderOptions& po, const std::string& token, int ttl_minutes) {
  ServiceConfig cfg;
  cfg.session_ttl = std::chrono::minutes(ttl_minutes);
  cfg.edit_token = token;
  if (cfg.edit_token.empty()) {
    if (const char* t = std::getenv("MMCBM_EDIT_TOKEN")) cfg.edit_token = t;
  }
  Service service(cfg, make_provider(po));
  if (!model_path.empty()) service.load_bundle(load_bundle(model_path));
  if (!manifest_path.empty()) {
    service.set_patients(std::make_shared<const DatasetManifest>(io::load_manifest(manifest_path)));
  }
  std::mutex log_mu;
  const auto logger = [&](const json& entry) {
    auto e = entry;
    e["ts"] = std::chrono::duration_cast<std::chrono::milliseconds>(
                  std::chrono::system_clock::now().time_since_epoch())
                  .count();
    std::lock_guard lock(log_mu);
    std::cerr << e.dump() << std::endl;
  };
  std::cerr << json{{"event", "listening"}, {"host", host}, {"port", port}}.dump() << std::endl;
  if (!serve(service, host, port, logger)) {
    std::cerr << "cannot bind " << host << ":" << port << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal concept bottleneck toolkit"};
  app.require_subcommand(1);
  int rc = 0;

  std::string manifest, out, model, patient, tokens, bank, json_out, csv_out;
  std::uint64_t seed = 0;
  std::size_t k = kDefaultTopK;
  std::size_t resamples = kDefaultBootstrapResamples;
  int fold = 1;
  bool as_json = false;
  bool class_weighting = false;
  ProviderOptions provider;

  // ingest
  auto* ingest = app.add_subcommand("ingest", "manifest validation, splitting and synthesis");
  ingest->require_subcommand(1);
  auto* validate = ingest->add_subcommand("validate", "check a manifest against the data model");
  validate->add_option("manifest", manifest)->required();
  validate->callback([&] { rc = ingest_validate(manifest); });

  double test_frac = 0.2;
  int folds = 5;
  auto* split = ingest->add_subcommand("split", "assign test pool and cross-validation folds");
  split->add_option("manifest", manifest)->required();
  split->add_option("--test-frac", test_frac);
  split->add_option("--folds", folds);
  split->add_option("--seed", seed);
  split->add_option("--out", out, "defaults to rewriting the input");
  split->callback([&] { rc = ingest_split(manifest, out, test_frac, folds, seed); });

  std::string spec_path;
  std::optional<std::uint64_t> synth_seed, split_seed;
  auto* synth = ingest->add_subcommand("synth", "generate a synthetic cohort");
  synth->add_option("--spec", spec_path, "synthetic spec JSON; defaults to the built-in cohort");
  synth->add_option("--out", out)->required();
  synth->add_option("--seed", synth_seed, "overrides rng_seed");
  synth->add_option("--split-seed", split_seed, "also split 0.2 / 5 folds with this seed");
  synth->callback([&] { rc = ingest_synth(spec_path, out, synth_seed, split_seed); });

  // cav
  auto* cav = app.add_subcommand("cav", "concept activation vectors");
  cav->require_subcommand(1);
  std::string report;
  double C = 1.0;
  auto* cav_train_cmd = cav->add_subcommand("train", "train the concept bank");
  cav_train_cmd->add_option("--manifest", manifest)->required();
  cav_train_cmd->add_option("--bank-out", out)->required();
  cav_train_cmd->add_option("--report", report, "accuracy CSV");
  cav_train_cmd->add_option("--C", C);
  cav_train_cmd->add_option("--seed", seed);
  cav_train_cmd->callback([&] { rc = cav_train(manifest, out, report, C, seed); });

  // baseline
  auto* baseline = app.add_subcommand("baseline", "attention-pooling comparator");
  baseline->require_subcommand(1);
  auto* btrain = baseline->add_subcommand("train", "train on all folds but --fold");
  btrain->add_option("--manifest", manifest)->required();
  btrain->add_option("--out", out)->required();
  btrain->add_option("--fold", fold, "validation fold");
  btrain->add_option("--seed", seed);
  btrain->add_flag("--class-weighting", class_weighting);
  btrain->callback([&] { rc = baseline_train(manifest, out, fold, seed, class_weighting); });
  auto* beval = baseline->add_subcommand("eval", "cross-validated evaluation");
  beval->add_option("--manifest", manifest)->required();
  beval->add_option("--json", json_out);
  beval->add_option("--csv", csv_out);
  beval->add_option("--seed", seed);
  beval->add_option("--bootstrap", resamples, "resamples, 0 skips intervals");
  beval->callback([&] { rc = baseline_eval(manifest, json_out, csv_out, seed, resamples); });

  // mmcbm model
  auto* train = app.add_subcommand("train", "train bank and interpretable predictor");
  train->add_option("--manifest", manifest)->required();
  train->add_option("--bank", bank, "reuse a bank bundle from cav train");
  train->add_option("--out", out)->required();
  train->add_option("--fold", fold, "validation fold");
  train->add_option("--seed", seed);
  train->add_flag("--class-weighting", class_weighting);
  train->callback([&] { rc = mmcbm_train(manifest, bank, out, fold, seed, class_weighting); });

  auto* pred = app.add_subcommand("predict", "predict one patient");
  pred->add_option("--model", model)->required();
  pred->add_option("--manifest", manifest);
  pred->add_option("--patient", patient);
  pred->add_option("--tokens", tokens, "token JSON instead of a manifest patient");
  pred->add_option("--k", k);
  pred->add_flag("--json", as_json);
  pred->callback([&] { rc = mmcbm_predict(model, manifest, patient, tokens, k, as_json); });

  std::vector<std::string> sets;
  auto* inter = app.add_subcommand("intervene", "edit concept scores and re-predict");
  inter->add_option("--model", model)->required();
  inter->add_option("--manifest", manifest);
  inter->add_option("--patient", patient);
  inter->add_option("--tokens", tokens);
  inter->add_option("--set", sets, "concept=value, repeatable")->required();
  inter->add_option("--k", k);
  inter->add_flag("--json", as_json);
  inter->callback([&] { rc = mmcbm_intervene(model, manifest, patient, tokens, sets, k, as_json); });

  // eval
  auto* eval = app.add_subcommand("eval", "evaluation harnesses");
  eval->require_subcommand(1);
  auto* cv = eval->add_subcommand("cv", "5-fold cross-validation of the full pipeline");
  cv->add_option("--manifest", manifest)->required();
  cv->add_option("--json", json_out);
  cv->add_option("--csv", csv_out);
  cv->add_option("--seed", seed);
  cv->add_option("--bootstrap", resamples);
  cv->add_flag("--class-weighting", class_weighting);
  cv->callback([&] { rc = eval_cv(manifest, json_out, csv_out, seed, resamples, class_weighting); });
  auto* retr = eval->add_subcommand("retrieval", "concept retrieval against annotations");
  retr->add_option("--manifest", manifest)->required();
  retr->add_option("--k", k);
  retr->add_option("--seed", seed);
  retr->add_option("--json", json_out);
  retr->callback([&] { rc = eval_retrieval(manifest, k, seed, json_out); });
  std::string axis = "n_concepts", grid;
  auto* abl = eval->add_subcommand("ablate", "ablation curve");
  abl->add_option("--manifest", manifest)->required();
  abl->add_option("--axis", axis)->check(CLI::IsMember({"n_concepts", "n_reports"}));
  abl->add_option("--grid", grid, "comma-separated counts")->required();
  abl->add_option("--seed", seed);
  abl->add_option("--csv", csv_out);
  abl->callback([&] { rc = eval_ablate(manifest, axis, grid, seed, csv_out); });

  // concepts
  auto* cps = app.add_subcommand("concepts", "report-driven concept catalogue");
  cps->require_subcommand(1);
  double temperature = 0.0;
  auto* extract = cps->add_subcommand("extract", "extract phrases from manifest reports");
  extract->add_option("--manifest", manifest)->required();
  extract->add_option("--out", out);
  extract->add_option("--temperature", temperature);
  add_provider_options(extract, provider);
  extract->callback([&] { rc = concepts_extract(manifest, provider, out, temperature); });
  std::string phrases;
  auto* agg = cps->add_subcommand("aggregate", "merge phrases into concepts");
  agg->add_option("--phrases", phrases)->required();
  agg->add_option("--out", out);
  add_provider_options(agg, provider);
  agg->callback([&] { rc = concepts_aggregate(phrases, provider, out); });
  std::string log;
  auto* edit = cps->add_subcommand("edit", "apply an expert edit log");
  edit->add_option("--manifest", manifest)->required();
  edit->add_option("--log", log)->required();
  edit->add_option("--out", out);
  edit->callback([&] { rc = concepts_edit(manifest, log, out); });

  // report
  auto* rep = app.add_subcommand("report", "diagnostic report drafts");
  rep->require_subcommand(1);
  std::vector<std::string> fields;
  auto* gen = rep->add_subcommand("generate", "draft a report for one patient");
  gen->add_option("--model", model)->required();
  gen->add_option("--manifest", manifest)->required();
  gen->add_option("--patient", patient)->required();
  gen->add_option("--k", k);
  gen->add_option("--field", fields, "context key=value, repeatable");
  gen->add_flag("--json", as_json);
  add_provider_options(gen, provider);
  gen->callback([&] { rc = report_generate(model, manifest, patient, k, fields, provider, as_json); });

  // serve
  std::string host = "127.0.0.1", edit_token;
  int port = 8080;
  int ttl = 30;
  auto* srv = app.add_subcommand("serve", "HTTP JSON API");
  srv->add_option("--model", model);
  srv->add_option("--manifest", manifest, "patient store for patient_id requests");
  srv->add_option("--host", host);
  srv->add_option("--port", port);
  srv->add_option("--ttl-minutes", ttl);
  srv->add_option("--edit-token", edit_token, "bearer token for POST /concepts/edits");
  add_provider_options(srv, provider);
  srv->callback([&] { rc = serve_cmd(model, manifest, host, port, provider, edit_token, ttl); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const mmcbm::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const json::exception& e) {
    std::cerr << "error: malformed JSON: " << e.what() << "\n";
    return 1;
  }
  return rc;
}
