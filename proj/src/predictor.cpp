#include "mmcbm/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mmcbm/error.hpp"
#include "mmcbm/kernels.hpp"
#include "mmcbm/metrics.hpp"

namespace mmcbm {

std::size_t ConceptScoreVector::masked_in() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

ConceptScoreVector concept_scores(std::span<const EmbeddingToken> tokens, const ConceptBank& bank) {
  const auto n = bank.size();
  const auto d = static_cast<Eigen::Index>(bank.dim());
  ConceptScoreVector out;
  out.scores = Vector::Zero(static_cast<Eigen::Index>(n));
  out.mask.assign(n, false);

  std::array<Vector, kNumModalities> features;
  std::array<std::size_t, kNumModalities> counts{};
  for (const auto& t : tokens) {
    if (t.vector.size() != d) {
      throw DimensionError("token dimension " + std::to_string(t.vector.size()) +
                           " differs from bank dimension " + std::to_string(d));
    }
    auto& f = features[index_of(t.modality)];
    if (f.size() == 0) f = Vector::Zero(d);
    f += t.vector.cast<double>();
    ++counts[index_of(t.modality)];
  }
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    if (!counts[m]) continue;
    features[m] /= static_cast<double>(counts[m]);
    const double norm = features[m].norm();
    if (!(norm > 0.0)) {
      throw InvalidArgument(std::string("zero-norm ") +
                            std::string(to_string(kModalities[m])) + " feature");
    }
    features[m] /= norm;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto m = index_of(bank.modality_of(i));
    if (!counts[m]) continue;
    const double s = bank.directions().row(static_cast<Eigen::Index>(i)).dot(features[m]);
    out.scores[static_cast<Eigen::Index>(i)] = std::clamp(s, -1.0, 1.0);
    out.mask[i] = true;
  }
  return out;
}

PatientRecord restrict_modalities(const PatientRecord& record, const ModalitySet& keep) {
  PatientRecord out = record;
  std::erase_if(out.tokens,
                [&](const EmbeddingToken& t) { return !keep[index_of(t.modality)]; });
  return out;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::array<double, kNumClasses> softmax(const std::array<double, kNumClasses>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::array<double, kNumClasses> p{};
  double z = 0.0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    p[c] = std::exp(logits[c] - mx);
    z += p[c];
  }
  for (auto& v : p) v /= z;
  return p;
}

std::size_t argmax(const std::array<double, kNumClasses>& values) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < kNumClasses; ++c) {
    if (values[c] > values[best]) best = c;
  }
  return best;
}

namespace {

std::vector<RankedConcept> rank_concepts(const Explanation& e, std::size_t k) {
  const auto col = static_cast<Eigen::Index>(index_of(e.label));
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < e.scores.size(); ++i) {
    if (e.scores.mask[i]) idx.push_back(i);
  }
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return e.attention(static_cast<Eigen::Index>(a), col) >
           e.attention(static_cast<Eigen::Index>(b), col);
  });
  idx.resize(std::min(k, idx.size()));
  std::vector<RankedConcept> out;
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto i = static_cast<Eigen::Index>(idx[r]);
    out.push_back({idx[r], e.attention(i, col), e.scores.scores[i], r + 1});
  }
  return out;
}

}  // namespace

Explanation predict(const ConceptScoreVector& scores, const InterpretablePredictor& predictor,
                    std::size_t k) {
  const auto n = static_cast<Eigen::Index>(scores.size());
  if (scores.scores.size() != n) throw DimensionError("score and mask lengths differ");
  if (predictor.weights.rows() != n || predictor.weights.cols() != kNumClasses) {
    throw DimensionError("predictor has " + std::to_string(predictor.weights.rows()) +
                         " rows, score vector has " + std::to_string(n));
  }
  Explanation e;
  e.scores = scores;
  e.attention = Matrix::Zero(n, kNumClasses);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!scores.mask[static_cast<std::size_t>(i)]) continue;
    for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(kNumClasses); ++c) {
      e.attention(i, c) = scores.scores[i] * sigmoid(predictor.weights(i, c));
    }
  }
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    // Neumaier summation
    double sum = 0.0, comp = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double x = e.attention(i, static_cast<Eigen::Index>(c));
      const double t = sum + x;
      comp += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
      sum = t;
    }
    e.logits[c] = sum + comp;
  }
  e.probabilities = softmax(e.logits);
  e.label = kLabels[argmax(e.logits)];
  e.top_k = rank_concepts(e, k);
  return e;
}

std::vector<RankedConcept> top_k(const Explanation& explanation, std::size_t k) {
  if (k < 1 || k > explanation.scores.size()) {
    throw InvalidArgument("k must lie in [1, " + std::to_string(explanation.scores.size()) + "]");
  }
  return rank_concepts(explanation, k);
}

ScoreDataset score_dataset(std::span<const PatientRecord* const> records, const ConceptBank& bank,
                           bool parallel) {
  const auto vectors = parallel ? kernels::omp::concept_scores(records, bank)
                                : kernels::serial::concept_scores(records, bank);
  ScoreDataset data;
  data.scores.resize(static_cast<Eigen::Index>(records.size()),
                     static_cast<Eigen::Index>(bank.size()));
  for (std::size_t r = 0; r < records.size(); ++r) {
    data.scores.row(static_cast<Eigen::Index>(r)) = vectors[r].scores.transpose();
    data.labels.push_back(records[r]->label);
  }
  return data;
}

namespace {

// Loss and (optionally) gradient over the rows listed in `rows`.
double loss_and_grad(const Matrix& weights, const ScoreDataset& data,
                     std::span<const std::size_t> rows,
                     const std::array<double, kNumClasses>& class_weights, Matrix* grad) {
  const Matrix sig = weights.unaryExpr([](double w) { return sigmoid(w); });
  if (grad) *grad = Matrix::Zero(weights.rows(), weights.cols());
  double total = 0.0, wsum = 0.0;
  for (const auto r : rows) {
    const auto s = data.scores.row(static_cast<Eigen::Index>(r));
    const auto y = index_of(data.labels[r]);
    const double w = class_weights[y];
    if (w == 0.0) continue;
    std::array<double, kNumClasses> logits{};
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      logits[c] = s.dot(sig.col(static_cast<Eigen::Index>(c)));
    }
    const auto p = softmax(logits);
    total += -w * std::log(std::max(p[y], 1e-300));
    wsum += w;
    if (grad) {
      for (std::size_t c = 0; c < kNumClasses; ++c) {
        const double delta = w * (p[c] - (c == y ? 1.0 : 0.0));
        const auto cc = static_cast<Eigen::Index>(c);
        grad->col(cc).array() +=
            delta * s.transpose().array() * sig.col(cc).array() * (1.0 - sig.col(cc).array());
      }
    }
  }
  if (wsum == 0.0) return 0.0;
  if (grad) *grad /= wsum;
  return total / wsum;
}

std::vector<std::size_t> all_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

double validation_macro_f1(const Matrix& weights, const ScoreDataset& data) {
  const Matrix sig = weights.unaryExpr([](double w) { return sigmoid(w); });
  std::vector<DiseaseLabel> pred;
  for (Eigen::Index r = 0; r < data.scores.rows(); ++r) {
    std::array<double, kNumClasses> logits{};
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      logits[c] = data.scores.row(r).dot(sig.col(static_cast<Eigen::Index>(c)));
    }
    pred.push_back(kLabels[argmax(logits)]);
  }
  return classification_metrics(pred, data.labels).macro_f1;
}

}  // namespace

double predictor_loss(const Matrix& weights, const ScoreDataset& data,
                      const std::array<double, kNumClasses>& class_weights) {
  const auto rows = all_rows(data.size());
  return loss_and_grad(weights, data, rows, class_weights, nullptr);
}

Matrix predictor_loss_gradient(const Matrix& weights, const ScoreDataset& data,
                               const std::array<double, kNumClasses>& class_weights) {
  const auto rows = all_rows(data.size());
  Matrix g;
  loss_and_grad(weights, data, rows, class_weights, &g);
  return g;
}

TrainConfig default_predictor_config() {
  TrainConfig c;
  c.learning_rate = 1e-3;
  c.weight_decay = 1e-2;
  c.batch_size = 8;
  c.max_epochs = 200;
  c.patience = 20;
  c.min_delta = 1e-4;
  return c;
}

InterpretablePredictor train_predictor(const ScoreDataset& train, const ScoreDataset& validation,
                                       const TrainConfig& config, TrainingHistory* history,
                                       const InterpretablePredictor* init) {
  if (train.size() == 0) throw InvalidArgument("predictor training set is empty");
  if (config.batch_size == 0) throw InvalidArgument("batch size must be positive");
  const auto n_concepts = train.scores.cols();
  if (validation.size() && validation.scores.cols() != n_concepts) {
    throw DimensionError("validation scores differ in width from training scores");
  }

  InterpretablePredictor model = init ? *init : InterpretablePredictor::zeros(n_concepts);
  if (model.weights.rows() != n_concepts) throw DimensionError("initial predictor width mismatch");

  std::array<double, kNumClasses> class_weights{1.0, 1.0, 1.0};
  if (config.class_weighting) class_weights = inverse_frequency_weights(train.labels);

  AdamConfig adam_cfg;
  adam_cfg.learning_rate = config.learning_rate;
  adam_cfg.weight_decay = config.weight_decay;
  Adam adam(adam_cfg, model.weights.size());
  EarlyStopping stopper(config.patience, config.min_delta);
  TrainingHistory local;
  auto& hist = history ? *history : local;
  hist = TrainingHistory{};

  std::mt19937_64 rng(config.seed);
  auto order = all_rows(train.size());
  InterpretablePredictor best = model;
  Matrix grad;
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const auto end = std::min(order.size(), start + config.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      loss_and_grad(model.weights, train, batch, class_weights, &grad);
      Eigen::Map<Vector> flat(model.weights.data(), model.weights.size());
      adam.step(flat, Eigen::Map<const Vector>(grad.data(), grad.size()));
    }
    hist.train_loss.push_back(predictor_loss(model.weights, train, class_weights));
    hist.epochs_run = epoch + 1;
    if (validation.size() == 0) continue;
    const double vloss = predictor_loss(model.weights, validation);
    hist.val_loss.push_back(vloss);
    hist.val_macro_f1.push_back(validation_macro_f1(model.weights, validation));
    if (stopper.observe(vloss)) {
      best = model;
      hist.best_epoch = epoch;
      hist.best_val_loss = vloss;
    }
    if (stopper.should_stop()) {
      hist.early_stopped = true;
      break;
    }
  }
  return validation.size() ? best : model;
}

InterpretablePredictor train_predictor(const DatasetManifest& manifest, const ConceptBank& bank,
                                       int validation_fold, const TrainConfig& config,
                                       TrainingHistory* history) {
  if (manifest.embedding_dim != bank.dim()) {
    throw DimensionError("manifest dimension " + std::to_string(manifest.embedding_dim) +
                         " differs from bank dimension " + std::to_string(bank.dim()));
  }
  const auto train_records = manifest.training_records(validation_fold);
  const auto val_records = manifest.select(Split::cv_fold(validation_fold));
  if (train_records.empty()) throw InvalidArgument("no training records outside the validation fold");
  const auto train = score_dataset(train_records, bank);
  const auto val = score_dataset(val_records, bank);
  return train_predictor(train, val, config, history);
}

std::array<double, kNumClasses> inverse_frequency_weights(const std::vector<DiseaseLabel>& labels) {
  std::array<std::size_t, kNumClasses> counts{};
  for (auto l : labels) ++counts[index_of(l)];
  std::array<double, kNumClasses> w{};
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    w[c] = counts[c] ? static_cast<double>(labels.size()) /
                           (static_cast<double>(kNumClasses) * static_cast<double>(counts[c]))
                     : 0.0;
  }
  return w;
}

}  // namespace mmcbm
