#include "mmcbm/experiment.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

#include "mmcbm/error.hpp"
#include "mmcbm/io.hpp"
#include "mmcbm/util.hpp"

namespace mmcbm {

using nlohmann::json;

std::string_view to_string(ModalitySubset s) {
  switch (s) {
    case ModalitySubset::MM: return "MM";
    case ModalitySubset::FA: return "FA";
    case ModalitySubset::ICGA: return "ICGA";
    case ModalitySubset::US: return "US";
  }
  return "?";
}

ModalitySubset parse_modality_subset(std::string_view s) {
  for (auto m : kModalitySubsets) {
    if (to_string(m) == s) return m;
  }
  throw InvalidArgument("unknown modality subset '" + std::string(s) + "'");
}

ModalitySet modalities_of(ModalitySubset s) {
  switch (s) {
    case ModalitySubset::MM: return {true, true, true};
    case ModalitySubset::FA: return {true, false, false};
    case ModalitySubset::ICGA: return {false, true, false};
    case ModalitySubset::US: return {false, false, true};
  }
  return {};
}

std::string_view to_string(AblationAxis a) {
  return a == AblationAxis::n_concepts ? "n_concepts" : "n_reports";
}

AblationAxis parse_ablation_axis(std::string_view s) {
  if (s == "n_concepts") return AblationAxis::n_concepts;
  if (s == "n_reports") return AblationAxis::n_reports;
  throw InvalidArgument("unknown ablation axis '" + std::string(s) + "'");
}

MetricSummary summarize(const ClassificationMetrics& m) {
  return {m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1};
}

namespace {

class MmcbmFoldModel final : public FoldModel {
 public:
  MmcbmFoldModel(std::shared_ptr<const ConceptBank> bank, InterpretablePredictor predictor)
      : bank_(std::move(bank)), predictor_(std::move(predictor)) {}

  std::array<double, kNumClasses> probabilities(const PatientRecord& record) const override {
    return predict(concept_scores(record, *bank_), predictor_, 1).probabilities;
  }

  std::optional<std::vector<std::string>> ranked_concepts(const PatientRecord& record,
                                                          std::size_t k) const override {
    const auto e = predict(concept_scores(record, *bank_), predictor_, k);
    std::vector<std::string> out;
    for (const auto& r : e.top_k) out.push_back(to_string(bank_->concept_at(r.index).key()));
    return out;
  }

 private:
  std::shared_ptr<const ConceptBank> bank_;
  InterpretablePredictor predictor_;
};

class BaselineFoldModel final : public FoldModel {
 public:
  explicit BaselineFoldModel(BaselineModel model) : model_(std::move(model)) {}
  std::array<double, kNumClasses> probabilities(const PatientRecord& record) const override {
    return baseline_predict(record, model_);
  }

 private:
  BaselineModel model_;
};

DiseaseLabel predicted(const FoldModel& model, const PatientRecord& record) {
  return kLabels[argmax(model.probabilities(record))];
}

double mean_of(const std::vector<MetricSummary>& rows, double MetricSummary::*field) {
  double s = 0.0;
  for (const auto& r : rows) s += r.*field;
  return s / static_cast<double>(rows.size());
}

std::set<std::string> truth_of(const PatientRecord& r) {
  std::set<std::string> out;
  for (const auto& k : *r.concept_annotations) out.insert(to_string(k));
  return out;
}

}  // namespace

Trainer mmcbm_trainer(std::shared_ptr<const ConceptBank> bank, TrainConfig config) {
  return [bank = std::move(bank), config](const DatasetManifest& manifest, int fold,
                                          TrainingHistory* history) -> std::unique_ptr<FoldModel> {
    auto predictor = train_predictor(manifest, *bank, fold, config, history);
    return std::make_unique<MmcbmFoldModel>(bank, std::move(predictor));
  };
}

Trainer baseline_trainer(TrainConfig config) {
  return [config](const DatasetManifest& manifest, int fold,
                  TrainingHistory* history) -> std::unique_ptr<FoldModel> {
    return std::make_unique<BaselineFoldModel>(train_baseline(manifest, fold, config, history));
  };
}

EvalReport run_cv(const DatasetManifest& manifest, const Trainer& trainer, const CvConfig& config) {
  const int n_folds = manifest.n_folds();
  if (n_folds < 2) throw InvalidArgument("cross-validation needs at least two folds");
  for (int f = 1; f <= n_folds; ++f) {
    if (manifest.select(Split::cv_fold(f)).empty()) {
      throw InvalidArgument("fold " + std::to_string(f) + " has no patients");
    }
  }
  const auto test = manifest.test_records();
  if (test.empty()) throw InvalidArgument("manifest has no test patients");

  std::vector<DiseaseLabel> test_labels;
  for (const auto* r : test) test_labels.push_back(r->label);
  std::array<std::vector<PatientRecord>, kModalitySubsets.size()> restricted;
  for (const auto s : kModalitySubsets) {
    for (const auto* r : test) {
      restricted[static_cast<std::size_t>(s)].push_back(restrict_modalities(*r, modalities_of(s)));
    }
  }

  EvalReport report;
  report.n_folds = n_folds;
  report.n_test = test.size();
  // preds[subset][fold][patient]
  std::array<std::vector<std::vector<DiseaseLabel>>, kModalitySubsets.size()> preds;
  std::vector<std::unique_ptr<FoldModel>> models;
  for (int f = 1; f <= n_folds; ++f) {
    TrainingHistory history;
    auto model = trainer(manifest, f, &history);
    FoldRecord fr;
    fr.fold = f;
    fr.epochs_run = history.epochs_run;
    fr.best_epoch = history.best_epoch;
    std::vector<DiseaseLabel> vp, vl;
    for (const auto* r : manifest.select(Split::cv_fold(f))) {
      vp.push_back(predicted(*model, *r));
      vl.push_back(r->label);
    }
    fr.validation = summarize(classification_metrics(vp, vl));
    report.folds.push_back(fr);
    for (const auto s : kModalitySubsets) {
      std::vector<DiseaseLabel> p;
      for (const auto& r : restricted[static_cast<std::size_t>(s)]) p.push_back(predicted(*model, r));
      preds[static_cast<std::size_t>(s)].push_back(std::move(p));
    }
    models.push_back(std::move(model));
  }

  std::size_t best = 0;
  for (std::size_t f = 1; f < report.folds.size(); ++f) {
    if (report.folds[f].validation.macro_f1 > report.folds[best].validation.macro_f1) best = f;
  }
  report.best_fold = static_cast<int>(best) + 1;

  for (const auto s : kModalitySubsets) {
    const auto& sp = preds[static_cast<std::size_t>(s)];
    SubsetEval ev;
    for (const auto& p : sp) ev.per_fold.push_back(summarize(classification_metrics(p, test_labels)));
    ev.aggregate = {mean_of(ev.per_fold, &MetricSummary::accuracy),
                    mean_of(ev.per_fold, &MetricSummary::macro_precision),
                    mean_of(ev.per_fold, &MetricSummary::macro_recall),
                    mean_of(ev.per_fold, &MetricSummary::macro_f1)};
    ev.confusion = classification_metrics(sp[best], test_labels).confusion;

    if (config.bootstrap_resamples > 0 && test.size() >= 2) {
      const auto ci_for = [&](double MetricSummary::*field) {
        return bootstrap_ci(
            test.size(),
            [&](std::span<const std::size_t> idx) {
              std::vector<DiseaseLabel> labels, p;
              labels.reserve(idx.size());
              p.reserve(idx.size());
              double sum = 0.0;
              for (const auto& fold_preds : sp) {
                labels.clear();
                p.clear();
                for (auto i : idx) {
                  labels.push_back(test_labels[i]);
                  p.push_back(fold_preds[i]);
                }
                sum += summarize(classification_metrics(p, labels)).*field;
              }
              return sum / static_cast<double>(sp.size());
            },
            config.ci_level, config.bootstrap_resamples, config.seed);
      };
      ev.ci = {ci_for(&MetricSummary::accuracy), ci_for(&MetricSummary::macro_precision),
               ci_for(&MetricSummary::macro_recall), ci_for(&MetricSummary::macro_f1)};
    }
    report.subsets[s] = std::move(ev);
  }

  std::vector<std::vector<std::string>> ranked;
  std::vector<std::set<std::string>> truth;
  for (const auto* r : test) {
    if (!r->concept_annotations || r->concept_annotations->empty()) continue;
    auto list = models[best]->ranked_concepts(*r, config.k);
    if (!list) break;
    ranked.push_back(std::move(*list));
    truth.push_back(truth_of(*r));
  }
  if (!ranked.empty()) report.retrieval = retrieval_at_k(ranked, truth, config.k);
  return report;
}

PipelineResult run_mmcbm_pipeline(const DatasetManifest& manifest, const PipelineConfig& config) {
  PipelineResult out;
  out.bank = train_concept_bank(manifest, config.bank);
  auto bank = std::make_shared<const ConceptBank>(out.bank.bank);
  out.report = run_cv(manifest, mmcbm_trainer(bank, config.predictor), config.cv);
  return out;
}

std::vector<std::size_t> top_concepts_by_accuracy(const ConceptBank& bank, std::size_t n) {
  if (n < 1 || n > bank.size()) {
    throw InvalidArgument("concept count " + std::to_string(n) + " outside [1, " +
                          std::to_string(bank.size()) + "]");
  }
  std::vector<std::size_t> order(bank.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto acc = [&](std::size_t i) { return bank.stats()[i].test_accuracy.value_or(-1.0); };
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return acc(a) > acc(b); });
  order.resize(n);
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<const PatientRecord*> sample_annotated(std::span<const PatientRecord* const> records,
                                                   std::size_t n, std::uint64_t seed) {
  std::array<std::vector<std::size_t>, kNumClasses> by_class;
  std::size_t available = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i]->annotated()) continue;
    by_class[index_of(records[i]->label)].push_back(i);
    ++available;
  }
  if (n < 1 || n > available) {
    throw InvalidArgument("report count " + std::to_string(n) + " outside [1, " +
                          std::to_string(available) + "]");
  }
  std::mt19937_64 rng(seed);
  for (auto& c : by_class) std::shuffle(c.begin(), c.end(), rng);
  std::vector<std::size_t> chosen;
  std::array<std::size_t, kNumClasses> next{};
  while (chosen.size() < n) {
    for (std::size_t c = 0; c < kNumClasses && chosen.size() < n; ++c) {
      if (next[c] < by_class[c].size()) chosen.push_back(by_class[c][next[c]++]);
    }
  }
  std::sort(chosen.begin(), chosen.end());
  std::vector<const PatientRecord*> out;
  for (auto i : chosen) out.push_back(records[i]);
  return out;
}

double normalized_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw InvalidArgument("slope inputs differ in length");
  if (x.size() < 2) return 0.0;
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  const double span = *hi - *lo;
  if (span == 0.0) return 0.0;
  std::vector<double> u;
  for (double v : x) u.push_back((v - *lo) / span);
  const double mu = std::accumulate(u.begin(), u.end(), 0.0) / static_cast<double>(u.size());
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    sxy += (u[i] - mu) * (y[i] - my);
    sxx += (u[i] - mu) * (u[i] - mu);
  }
  return sxy / sxx;
}

AblationCurve ablate(const DatasetManifest& manifest, AblationAxis axis,
                     const std::vector<std::size_t>& grid, const PipelineConfig& config) {
  if (grid.empty()) throw InvalidArgument("ablation grid is empty");
  AblationCurve curve;
  curve.axis = axis;
  CvConfig cv = config.cv;
  cv.bootstrap_resamples = 0;

  const auto run_point = [&](std::size_t value, std::shared_ptr<const ConceptBank> bank) {
    AblationPoint pt;
    pt.value = value;
    pt.bank_size = bank->size();
    const auto report = run_cv(manifest, mmcbm_trainer(bank, config.predictor), cv);
    for (const auto& [s, ev] : report.subsets) pt.metrics[s] = ev.aggregate;
    curve.points.push_back(std::move(pt));
  };

  if (axis == AblationAxis::n_concepts) {
    const auto full = train_concept_bank(manifest, config.bank).bank;
    for (auto n : grid) {
      if (n < 1 || n > full.size()) {
        throw InvalidArgument("grid value " + std::to_string(n) + " exceeds the " +
                              std::to_string(full.size()) + " available concepts");
      }
    }
    for (auto n : grid) {
      run_point(n, std::make_shared<const ConceptBank>(full.subset(top_concepts_by_accuracy(full, n))));
    }
  } else {
    const auto pool = manifest.training_records(0);
    const auto test = manifest.test_records();
    const auto available = static_cast<std::size_t>(
        std::count_if(pool.begin(), pool.end(), [](const PatientRecord* r) { return r->annotated(); }));
    for (auto n : grid) {
      if (n < 1 || n > available) {
        throw InvalidArgument("grid value " + std::to_string(n) + " exceeds the " +
                              std::to_string(available) + " available reports");
      }
    }
    auto bank_cfg = config.bank;
    bank_cfg.skip_untrainable = true;
    for (auto n : grid) {
      const auto sample = sample_annotated(pool, n, config.cv.seed);
      auto trained = train_concept_bank(manifest.concepts, sample, test, bank_cfg);
      run_point(n, std::make_shared<const ConceptBank>(std::move(trained.bank)));
    }
  }

  std::vector<double> x;
  for (const auto& p : curve.points) x.push_back(static_cast<double>(p.value));
  for (const auto s : kModalitySubsets) {
    std::vector<double> y;
    for (const auto& p : curve.points) y.push_back(p.metrics.at(s).macro_f1);
    curve.slope[s] = normalized_slope(x, y);
  }
  return curve;
}

namespace {

json summary_json(const MetricSummary& m) {
  return {{"accuracy", m.accuracy},
          {"macro_precision", m.macro_precision},
          {"macro_recall", m.macro_recall},
          {"macro_f1", m.macro_f1}};
}

json interval_json(const Interval& i) { return json::array({i.lo, i.hi}); }

}  // namespace

json to_json(const RetrievalMetrics& m) {
  const auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  return {{"k", m.k},
          {"n_patients", m.n_patients},
          {"precision", m.precision},
          {"recall", m.recall},
          {"f1", m.f1},
          {"mean_rank", opt(m.mean_rank)},
          {"median_rank", opt(m.median_rank)},
          {"mrr", m.mrr},
          {"ranks_excluded", m.ranks_excluded},
          {"patients_without_hits", m.patients_without_hits}};
}

json to_json(const EvalReport& report) {
  json j;
  j["n_folds"] = report.n_folds;
  j["n_test"] = report.n_test;
  j["best_fold"] = report.best_fold;
  j["folds"] = json::array();
  for (const auto& f : report.folds) {
    j["folds"].push_back({{"fold", f.fold},
                          {"validation", summary_json(f.validation)},
                          {"epochs_run", f.epochs_run},
                          {"best_epoch", f.best_epoch}});
  }
  j["subsets"] = json::object();
  for (const auto& [s, ev] : report.subsets) {
    json e;
    e["aggregate"] = summary_json(ev.aggregate);
    e["ci"] = {{"accuracy", interval_json(ev.ci.accuracy)},
               {"macro_precision", interval_json(ev.ci.macro_precision)},
               {"macro_recall", interval_json(ev.ci.macro_recall)},
               {"macro_f1", interval_json(ev.ci.macro_f1)}};
    e["per_fold"] = json::array();
    for (const auto& m : ev.per_fold) e["per_fold"].push_back(summary_json(m));
    e["confusion"] = ev.confusion;
    j["subsets"][std::string(to_string(s))] = std::move(e);
  }
  j["retrieval"] = report.retrieval ? to_json(*report.retrieval) : json(nullptr);
  return j;
}

json to_json(const AblationCurve& curve) {
  json j;
  j["axis"] = std::string(to_string(curve.axis));
  j["points"] = json::array();
  for (const auto& p : curve.points) {
    json m = json::object();
    for (const auto& [s, v] : p.metrics) m[std::string(to_string(s))] = summary_json(v);
    j["points"].push_back({{"value", p.value}, {"bank_size", p.bank_size}, {"metrics", m}});
  }
  j["slope"] = json::object();
  for (const auto& [s, v] : curve.slope) j["slope"][std::string(to_string(s))] = v;
  return j;
}

namespace {

void csv_row(std::ostringstream& os, std::string_view subset, std::string_view fold,
             const MetricSummary& m) {
  os << subset << ',' << fold << ',' << m.accuracy << ',' << m.macro_precision << ','
     << m.macro_recall << ',' << m.macro_f1 << '\n';
}

}  // namespace

std::string eval_csv(const EvalReport& report) {
  std::ostringstream os;
  os.precision(6);
  os << "subset,fold,accuracy,macro_precision,macro_recall,macro_f1\n";
  for (const auto& [s, ev] : report.subsets) {
    for (std::size_t f = 0; f < ev.per_fold.size(); ++f) {
      csv_row(os, to_string(s), std::to_string(f + 1), ev.per_fold[f]);
    }
    csv_row(os, to_string(s), "mean", ev.aggregate);
    csv_row(os, to_string(s), "ci_lo",
            {ev.ci.accuracy.lo, ev.ci.macro_precision.lo, ev.ci.macro_recall.lo, ev.ci.macro_f1.lo});
    csv_row(os, to_string(s), "ci_hi",
            {ev.ci.accuracy.hi, ev.ci.macro_precision.hi, ev.ci.macro_recall.hi, ev.ci.macro_f1.hi});
  }
  return os.str();
}

std::string ablation_csv(const AblationCurve& curve) {
  std::ostringstream os;
  os.precision(6);
  os << "axis,value,bank_size,subset,accuracy,macro_precision,macro_recall,macro_f1\n";
  for (const auto& p : curve.points) {
    for (const auto& [s, m] : p.metrics) {
      os << to_string(curve.axis) << ',' << p.value << ',' << p.bank_size << ',' << to_string(s)
         << ',' << m.accuracy << ',' << m.macro_precision << ',' << m.macro_recall << ','
         << m.macro_f1 << '\n';
    }
  }
  return os.str();
}

}  // namespace mmcbm
