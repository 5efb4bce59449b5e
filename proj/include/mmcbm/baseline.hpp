#pragma once
// Black-box comparator: a single-query attention pool over all tokens of a
// record followed by a dense softmax layer.
//
//   s_i = q . (P x_i) / sqrt(d),   a = softmax(s),   h = sum_i a_i x_i
//   probabilities = softmax(W h + b)

#include <array>
#include <span>
#include <vector>

#include "mmcbm/core.hpp"
#include "mmcbm/optim.hpp"

namespace mmcbm {

// All parameters live in one flat vector laid out as
// [query (d) | projection (d x d, column-major) | dense weights (3 x d,
// column-major) | dense bias (3)].
struct BaselineModel {
  std::size_t dim = 0;
  Vector params;

  static std::size_t param_count(std::size_t d) { return d + d * d + kNumClasses * d + kNumClasses; }
  // All-zero parameters: projection 0, uniform predictions.
  static BaselineModel zeros(std::size_t d);
  // q ~ N(0, 1/d), P = I, dense weights ~ N(0, 0.01^2), bias 0.
  static BaselineModel initial(std::size_t d, std::uint64_t seed);

  Eigen::Map<const Vector> query() const;
  Eigen::Map<const Matrix> projection() const;
  Eigen::Map<const Matrix> dense_weights() const;
  Eigen::Map<const Vector> dense_bias() const;

  bool operator==(const BaselineModel& o) const {
    return dim == o.dim && params.size() == o.params.size() && params == o.params;
  }
};

// Rows of `tokens` are the pooled vectors. The sum runs over rows in
// lexicographic order so the result does not depend on token order. Throws
// InvalidArgument on zero rows, DimensionError on width mismatch.
Vector attention_pool(const Matrix& tokens, const Vector& query, const Matrix& projection);

// Token matrix (n x d) of every token in the record, in record order.
Matrix token_matrix(const PatientRecord& record, std::size_t dim);

std::array<double, kNumClasses> baseline_predict(const Matrix& tokens, const BaselineModel& model);
std::array<double, kNumClasses> baseline_predict(const PatientRecord& record,
                                                 const BaselineModel& model);

struct BaselineDataset {
  std::vector<Matrix> tokens;
  std::vector<DiseaseLabel> labels;
  std::size_t size() const { return labels.size(); }
};

BaselineDataset baseline_dataset(std::span<const PatientRecord* const> records, std::size_t dim);

double baseline_loss(const BaselineModel& model, const BaselineDataset& data,
                     const std::array<double, kNumClasses>& class_weights = {1.0, 1.0, 1.0});
// Analytic gradient with respect to the flat parameter vector.
Vector baseline_loss_gradient(const BaselineModel& model, const BaselineDataset& data,
                              const std::array<double, kNumClasses>& class_weights = {1.0, 1.0,
                                                                                      1.0});

// Mini-batch Adam, starting from BaselineModel::initial(d, config.seed)
// unless `init` is given. Early stopping on validation loss returns the
// lowest-loss checkpoint.
BaselineModel train_baseline(const BaselineDataset& train, const BaselineDataset& validation,
                             std::size_t dim, const TrainConfig& config,
                             TrainingHistory* history = nullptr,
                             const BaselineModel* init = nullptr);

BaselineModel train_baseline(const DatasetManifest& manifest, int validation_fold,
                             const TrainConfig& config, TrainingHistory* history = nullptr);

TrainConfig default_baseline_config();

}  // namespace mmcbm
