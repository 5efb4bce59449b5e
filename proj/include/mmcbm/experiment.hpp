#pragma once
// Cross-validation driver, ablation harnesses and the per-model trainers they
// run. Every fold model is evaluated on the fixed multimodal test pool, once
// with all modalities and once per single modality.

#include <array>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmcbm/baseline.hpp"
#include "mmcbm/cav.hpp"
#include "mmcbm/metrics.hpp"
#include "mmcbm/predictor.hpp"

namespace mmcbm {

// Modality subsets used for evaluation, in report order.
enum class ModalitySubset : std::uint8_t { MM = 0, FA = 1, ICGA = 2, US = 3 };
inline constexpr std::array<ModalitySubset, 4> kModalitySubsets{
    ModalitySubset::MM, ModalitySubset::FA, ModalitySubset::ICGA, ModalitySubset::US};
std::string_view to_string(ModalitySubset s);
ModalitySubset parse_modality_subset(std::string_view s);
ModalitySet modalities_of(ModalitySubset s);

// A model trained for one fold.
class FoldModel {
 public:
  virtual ~FoldModel() = default;
  virtual std::array<double, kNumClasses> probabilities(const PatientRecord& record) const = 0;
  // Top-k concept keys ("MOD:id") for concept models, empty otherwise.
  virtual std::optional<std::vector<std::string>> ranked_concepts(const PatientRecord&,
                                                                  std::size_t) const {
    return std::nullopt;
  }
};

// Trains a model with `validation_fold` held out for early stopping.
using Trainer = std::function<std::unique_ptr<FoldModel>(const DatasetManifest&, int validation_fold,
                                                         TrainingHistory* history)>;

Trainer mmcbm_trainer(std::shared_ptr<const ConceptBank> bank, TrainConfig config);
Trainer baseline_trainer(TrainConfig config);

struct MetricSummary {
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  bool operator==(const MetricSummary&) const = default;
};
MetricSummary summarize(const ClassificationMetrics& m);

struct MetricIntervals {
  Interval accuracy;
  Interval macro_precision;
  Interval macro_recall;
  Interval macro_f1;
  bool operator==(const MetricIntervals&) const = default;
};

struct SubsetEval {
  std::vector<MetricSummary> per_fold;
  MetricSummary aggregate;  // mean over folds
  MetricIntervals ci;       // patient-level bootstrap of the fold mean
  ConfusionMatrix confusion{};  // best fold
  bool operator==(const SubsetEval&) const = default;
};

struct FoldRecord {
  int fold = 0;
  MetricSummary validation;
  int epochs_run = 0;
  int best_epoch = -1;
  bool operator==(const FoldRecord&) const = default;
};

struct EvalReport {
  int n_folds = 0;
  std::size_t n_test = 0;
  std::vector<FoldRecord> folds;
  int best_fold = 0;  // highest validation macro-F1, lowest fold on ties
  std::map<ModalitySubset, SubsetEval> subsets;
  std::optional<RetrievalMetrics> retrieval;  // best fold, MM input

  bool operator==(const EvalReport&) const = default;
};

struct CvConfig {
  std::size_t k = kDefaultTopK;
  double ci_level = 0.95;
  // 0 skips the intervals.
  std::size_t bootstrap_resamples = kDefaultBootstrapResamples;
  std::uint64_t seed = 0;
};

// Requires fold assignments; throws InvalidArgument on missing folds or an
// empty test pool.
EvalReport run_cv(const DatasetManifest& manifest, const Trainer& trainer,
                  const CvConfig& config = {});

struct PipelineConfig {
  BankTrainingConfig bank;
  TrainConfig predictor = default_predictor_config();
  CvConfig cv;
};

// Bank trained once on the non-test patients, then run_cv with the MMCBM
// trainer.
struct PipelineResult {
  BankTrainingResult bank;
  EvalReport report;
};
PipelineResult run_mmcbm_pipeline(const DatasetManifest& manifest, const PipelineConfig& config);

enum class AblationAxis : std::uint8_t { n_concepts, n_reports };
std::string_view to_string(AblationAxis a);
AblationAxis parse_ablation_axis(std::string_view s);

struct AblationPoint {
  std::size_t value = 0;
  std::size_t bank_size = 0;
  std::map<ModalitySubset, MetricSummary> metrics;
  bool operator==(const AblationPoint&) const = default;
};

struct AblationCurve {
  AblationAxis axis = AblationAxis::n_concepts;
  std::vector<AblationPoint> points;
  // Least-squares slope of macro-F1 against the grid rescaled to [0, 1].
  std::map<ModalitySubset, double> slope;
};

// n_concepts keeps the n concepts with the highest CAV test accuracy (ties in
// bank order). n_reports trains the bank on a class-stratified seeded sample
// of n annotated training patients. Throws InvalidArgument for a grid value
// outside [1, available].
AblationCurve ablate(const DatasetManifest& manifest, AblationAxis axis,
                     const std::vector<std::size_t>& grid, const PipelineConfig& config);

// Indices of the n concepts with the highest test accuracy, in bank order.
std::vector<std::size_t> top_concepts_by_accuracy(const ConceptBank& bank, std::size_t n);
// Class-stratified seeded sample of n annotated records.
std::vector<const PatientRecord*> sample_annotated(std::span<const PatientRecord* const> records,
                                                   std::size_t n, std::uint64_t seed);
// Slope of y on x after rescaling x to [0, 1]; 0 for a single point.
double normalized_slope(const std::vector<double>& x, const std::vector<double>& y);

nlohmann::json to_json(const EvalReport& report);
nlohmann::json to_json(const RetrievalMetrics& m);
nlohmann::json to_json(const AblationCurve& curve);
// One row per fold and subset plus "mean" rows.
std::string eval_csv(const EvalReport& report);
std::string ablation_csv(const AblationCurve& curve);

}  // namespace mmcbm
