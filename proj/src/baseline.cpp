#include "mmcbm/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mmcbm/error.hpp"
#include "mmcbm/metrics.hpp"
#include "mmcbm/predictor.hpp"
#include "mmcbm/util.hpp"

namespace mmcbm {

namespace {

Eigen::Index idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

struct Offsets {
  Eigen::Index query, projection, dense, bias;
  explicit Offsets(std::size_t d)
      : query(0),
        projection(idx(d)),
        dense(idx(d + d * d)),
        bias(idx(d + d * d + kNumClasses * d)) {}
};

std::vector<Eigen::Index> lexicographic_order(const Matrix& tokens) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(tokens.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index j = 0; j < tokens.cols(); ++j) {
      if (tokens(a, j) != tokens(b, j)) return tokens(a, j) < tokens(b, j);
    }
    return false;
  });
  return order;
}

struct PoolState {
  std::vector<Eigen::Index> order;
  Vector weights;  // softmax weights, indexed like `order`
  Vector pooled;
};

PoolState pool_forward(const Matrix& tokens, const Vector& query, const Matrix& projection) {
  const auto d = tokens.cols();
  if (tokens.rows() == 0) throw InvalidArgument("attention pool needs at least one token");
  if (query.size() != d || projection.rows() != d || projection.cols() != d) {
    throw DimensionError("token width " + std::to_string(d) + " does not match pool parameters");
  }
  PoolState st;
  st.order = lexicographic_order(tokens);
  const Vector r = projection.transpose() * query / std::sqrt(static_cast<double>(d));
  const auto n = static_cast<Eigen::Index>(st.order.size());
  Vector s(n);
  for (Eigen::Index k = 0; k < n; ++k) s[k] = tokens.row(st.order[static_cast<std::size_t>(k)]).dot(r);
  const double mx = s.maxCoeff();
  st.weights = (s.array() - mx).exp();
  st.weights /= st.weights.sum();
  st.pooled = Vector::Zero(d);
  for (Eigen::Index k = 0; k < n; ++k) {
    st.pooled += st.weights[k] * tokens.row(st.order[static_cast<std::size_t>(k)]).transpose();
  }
  return st;
}

std::array<double, kNumClasses> head_probabilities(const Vector& pooled, const BaselineModel& m) {
  const Vector logits = m.dense_weights() * pooled + m.dense_bias();
  std::array<double, kNumClasses> l{};
  for (std::size_t c = 0; c < kNumClasses; ++c) l[c] = logits[idx(c)];
  return softmax(l);
}

double loss_and_grad(const BaselineModel& m, const BaselineDataset& data,
                     std::span<const std::size_t> rows,
                     const std::array<double, kNumClasses>& class_weights, Vector* grad) {
  const auto d = idx(m.dim);
  const Offsets off(m.dim);
  if (grad) *grad = Vector::Zero(m.params.size());
  const Vector q = m.query();
  const Matrix P = m.projection();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  double total = 0.0, wsum = 0.0;
  for (const auto r : rows) {
    const auto y = index_of(data.labels[r]);
    const double w = class_weights[y];
    if (w == 0.0) continue;
    const Matrix& X = data.tokens[r];
    const auto st = pool_forward(X, q, P);
    const auto p = head_probabilities(st.pooled, m);
    total += -w * std::log(std::max(p[y], 1e-300));
    wsum += w;
    if (!grad) continue;

    Vector delta(idx(kNumClasses));
    for (std::size_t c = 0; c < kNumClasses; ++c) delta[idx(c)] = w * (p[c] - (c == y ? 1.0 : 0.0));
    Eigen::Map<Matrix> dW(grad->data() + off.dense, idx(kNumClasses), d);
    dW.noalias() += delta * st.pooled.transpose();
    grad->segment(off.bias, idx(kNumClasses)) += delta;

    const Vector dh = m.dense_weights().transpose() * delta;
    const auto n = st.weights.size();
    Vector da(n);
    for (Eigen::Index k = 0; k < n; ++k) da[k] = X.row(st.order[static_cast<std::size_t>(k)]).dot(dh);
    const double mean_da = st.weights.dot(da);
    Vector g = Vector::Zero(d);
    for (Eigen::Index k = 0; k < n; ++k) {
      const double ds = st.weights[k] * (da[k] - mean_da);
      g += ds * X.row(st.order[static_cast<std::size_t>(k)]).transpose();
    }
    g *= scale;
    grad->segment(off.query, d) += P * g;
    Eigen::Map<Matrix> dP(grad->data() + off.projection, d, d);
    dP.noalias() += q * g.transpose();
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

double macro_f1(const BaselineModel& m, const BaselineDataset& data) {
  std::vector<DiseaseLabel> pred;
  for (const auto& X : data.tokens) pred.push_back(kLabels[argmax(baseline_predict(X, m))]);
  return classification_metrics(pred, data.labels).macro_f1;
}

}  // namespace

BaselineModel BaselineModel::zeros(std::size_t d) {
  return {d, Vector::Zero(idx(param_count(d)))};
}

BaselineModel BaselineModel::initial(std::size_t d, std::uint64_t seed) {
  auto m = zeros(d);
  const Offsets off(d);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> qdist(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
  std::normal_distribution<double> wdist(0.0, 0.01);
  for (Eigen::Index i = 0; i < idx(d); ++i) m.params[off.query + i] = qdist(rng);
  for (Eigen::Index i = 0; i < idx(d); ++i) m.params[off.projection + i * idx(d) + i] = 1.0;
  for (Eigen::Index i = 0; i < idx(kNumClasses * d); ++i) m.params[off.dense + i] = wdist(rng);
  return m;
}

Eigen::Map<const Vector> BaselineModel::query() const {
  return {params.data() + Offsets(dim).query, idx(dim)};
}
Eigen::Map<const Matrix> BaselineModel::projection() const {
  return {params.data() + Offsets(dim).projection, idx(dim), idx(dim)};
}
Eigen::Map<const Matrix> BaselineModel::dense_weights() const {
  return {params.data() + Offsets(dim).dense, idx(kNumClasses), idx(dim)};
}
Eigen::Map<const Vector> BaselineModel::dense_bias() const {
  return {params.data() + Offsets(dim).bias, idx(kNumClasses)};
}

Vector attention_pool(const Matrix& tokens, const Vector& query, const Matrix& projection) {
  return pool_forward(tokens, query, projection).pooled;
}

Matrix token_matrix(const PatientRecord& record, std::size_t dim) {
  Matrix X(idx(record.tokens.size()), idx(dim));
  for (std::size_t i = 0; i < record.tokens.size(); ++i) {
    const auto& v = record.tokens[i].vector;
    if (v.size() != idx(dim)) {
      throw DimensionError("patient " + record.patient_id + " has a token of width " +
                           std::to_string(v.size()) + ", expected " + std::to_string(dim));
    }
    X.row(idx(i)) = v.cast<double>().transpose();
  }
  return X;
}

std::array<double, kNumClasses> baseline_predict(const Matrix& tokens, const BaselineModel& model) {
  if (model.params.size() != idx(BaselineModel::param_count(model.dim))) {
    throw DimensionError("baseline parameter vector has the wrong length");
  }
  const auto st = pool_forward(tokens, model.query(), model.projection());
  return head_probabilities(st.pooled, model);
}

std::array<double, kNumClasses> baseline_predict(const PatientRecord& record,
                                                 const BaselineModel& model) {
  return baseline_predict(token_matrix(record, model.dim), model);
}

BaselineDataset baseline_dataset(std::span<const PatientRecord* const> records, std::size_t dim) {
  BaselineDataset data;
  for (const auto* r : records) {
    data.tokens.push_back(token_matrix(*r, dim));
    data.labels.push_back(r->label);
  }
  return data;
}

double baseline_loss(const BaselineModel& model, const BaselineDataset& data,
                     const std::array<double, kNumClasses>& class_weights) {
  const auto rows = all_rows(data.size());
  return loss_and_grad(model, data, rows, class_weights, nullptr);
}

Vector baseline_loss_gradient(const BaselineModel& model, const BaselineDataset& data,
                              const std::array<double, kNumClasses>& class_weights) {
  const auto rows = all_rows(data.size());
  Vector g;
  loss_and_grad(model, data, rows, class_weights, &g);
  return g;
}

TrainConfig default_baseline_config() {
  TrainConfig c;
  c.learning_rate = 1e-4;
  c.weight_decay = 1e-2;
  c.batch_size = 8;
  c.max_epochs = 200;
  c.patience = 20;
  c.min_delta = 1e-4;
  return c;
}

BaselineModel train_baseline(const BaselineDataset& train, const BaselineDataset& validation,
                             std::size_t dim, const TrainConfig& config, TrainingHistory* history,
                             const BaselineModel* init) {
  if (train.size() == 0) throw InvalidArgument("baseline training set is empty");
  if (config.batch_size == 0) throw InvalidArgument("batch size must be positive");
  BaselineModel model = init ? *init : BaselineModel::initial(dim, config.seed);
  if (model.dim != dim) throw DimensionError("initial baseline width mismatch");

  std::array<double, kNumClasses> class_weights{1.0, 1.0, 1.0};
  if (config.class_weighting) class_weights = inverse_frequency_weights(train.labels);

  AdamConfig adam_cfg;
  adam_cfg.learning_rate = config.learning_rate;
  adam_cfg.weight_decay = config.weight_decay;
  Adam adam(adam_cfg, model.params.size());
  EarlyStopping stopper(config.patience, config.min_delta);
  TrainingHistory local;
  auto& hist = history ? *history : local;
  hist = TrainingHistory{};

  std::mt19937_64 rng(derive_seed(config.seed, 1));
  auto order = all_rows(train.size());
  BaselineModel best = model;
  Vector grad;
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const auto end = std::min(order.size(), start + config.batch_size);
      loss_and_grad(model, train, std::span<const std::size_t>(order.data() + start, end - start),
                    class_weights, &grad);
      adam.step(model.params, grad);
    }
    hist.train_loss.push_back(baseline_loss(model, train, class_weights));
    hist.epochs_run = epoch + 1;
    if (validation.size() == 0) continue;
    const double vloss = baseline_loss(model, validation);
    hist.val_loss.push_back(vloss);
    hist.val_macro_f1.push_back(macro_f1(model, validation));
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

BaselineModel train_baseline(const DatasetManifest& manifest, int validation_fold,
                             const TrainConfig& config, TrainingHistory* history) {
  const auto train_records = manifest.training_records(validation_fold);
  if (train_records.empty()) throw InvalidArgument("no training records outside the validation fold");
  const auto val_records = manifest.select(Split::cv_fold(validation_fold));
  const auto train = baseline_dataset(train_records, manifest.embedding_dim);
  const auto val = baseline_dataset(val_records, manifest.embedding_dim);
  return train_baseline(train, val, manifest.embedding_dim, config, history);
}

}  // namespace mmcbm
