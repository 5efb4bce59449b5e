#include <algorithm>
#include <numeric>
#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "mmcbm/baseline.hpp"
#include "mmcbm/error.hpp"
#include "mmcbm/metrics.hpp"

using namespace mmcbm;

namespace {

BaselineDataset random_dataset(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  BaselineDataset data;
  for (std::size_t i = 0; i < n; ++i) {
    data.tokens.push_back(testsupport::random_matrix(1 + rng() % 6, d, rng));
    data.labels.push_back(kLabels[rng() % kNumClasses]);
  }
  return data;
}

// Direct evaluation of the pooling equations.
Vector reference_pool(const Matrix& X, const Vector& q, const Matrix& P) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(X.cols()));
  std::vector<double> s(static_cast<std::size_t>(X.rows()));
  for (Eigen::Index i = 0; i < X.rows(); ++i) s[static_cast<std::size_t>(i)] = q.dot(P * X.row(i).transpose()) * scale;
  const double mx = *std::max_element(s.begin(), s.end());
  double z = 0.0;
  for (double& v : s) z += (v = std::exp(v - mx));
  Vector h = Vector::Zero(X.cols());
  for (Eigen::Index i = 0; i < X.rows(); ++i) h += (s[static_cast<std::size_t>(i)] / z) * X.row(i).transpose();
  return h;
}

}  // namespace

TEST_CASE("parameter layout") {
  CHECK(BaselineModel::param_count(4) == 4 + 16 + 12 + 3);
  const auto m = BaselineModel::initial(6, 3);
  CHECK(m.params.size() == static_cast<Eigen::Index>(BaselineModel::param_count(6)));
  CHECK(m.projection() == Matrix::Identity(6, 6));
  CHECK(m.dense_bias() == Vector::Zero(3));
  CHECK(m.dense_weights().rows() == 3);
  CHECK(m.dense_weights().cols() == 6);
  CHECK(m.query().size() == 6);
  CHECK(BaselineModel::initial(6, 3) == m);
  CHECK_FALSE(BaselineModel::initial(6, 4) == m);
}

TEST_CASE("attention pool matches the direct formula") {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 50; ++t) {
    const Matrix X = testsupport::random_matrix(1 + rng() % 8, 5, rng);
    const Vector q = testsupport::random_vector(5, rng);
    const Matrix P = testsupport::random_matrix(5, 5, rng);
    const Vector h = attention_pool(X, q, P);
    CHECK((h - reference_pool(X, q, P)).norm() < 1e-12 * (1.0 + h.norm()));
  }
  CHECK_THROWS_AS(attention_pool(Matrix(0, 5), Vector::Zero(5), Matrix::Identity(5, 5)), InvalidArgument);
  CHECK_THROWS_AS(attention_pool(Matrix::Ones(2, 4), Vector::Zero(5), Matrix::Identity(5, 5)), DimensionError);
}

TEST_CASE("pooling is exactly invariant to token order") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + rng() % 9;
    const Matrix X = testsupport::random_matrix(n, 7, rng);
    const Vector q = testsupport::random_vector(7, rng);
    const Matrix P = testsupport::random_matrix(7, 7, rng);
    std::vector<Eigen::Index> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix Y(X.rows(), X.cols());
    for (std::size_t i = 0; i < n; ++i) Y.row(static_cast<Eigen::Index>(i)) = X.row(perm[i]);
    CHECK(attention_pool(X, q, P) == attention_pool(Y, q, P));
    auto model = BaselineModel::initial(7, static_cast<std::uint64_t>(t));
    CHECK(baseline_predict(X, model) == baseline_predict(Y, model));
  }
}

TEST_CASE("predictions are distributions") {
  std::mt19937_64 rng(3);
  const auto model = BaselineModel::initial(4, 1);
  for (int t = 0; t < 30; ++t) {
    const auto p = baseline_predict(testsupport::random_matrix(3, 4, rng), model);
    CHECK(p[0] + p[1] + p[2] == doctest::Approx(1.0).epsilon(1e-12));
  }
  const auto zero = baseline_predict(testsupport::random_matrix(3, 4, rng), BaselineModel::zeros(4));
  for (double v : zero) CHECK(v == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("baseline loss gradient matches central differences") {
  std::mt19937_64 rng(7);
  const std::size_t d = 5;
  for (int point = 0; point < 10; ++point) {
    const auto data = random_dataset(6, d, rng);
    BaselineModel model{d, testsupport::random_vector(BaselineModel::param_count(d), rng, 0.5)};
    const std::array<double, 3> cw{0.8, 1.3, 1.0};
    const auto f = [&](const Vector& p) { return baseline_loss(BaselineModel{d, p}, data, cw); };
    const Vector g = baseline_loss_gradient(model, data, cw);
    const Vector num = testsupport::numeric_gradient(f, model.params);
    CAPTURE(point);
    CHECK(testsupport::relative_error(g, num) < 1e-4);
  }
}

TEST_CASE("token matrix follows record order") {
  const auto* rec = testsupport::synthetic_manifest().test_records().front();
  const auto X = token_matrix(*rec, testsupport::synthetic_manifest().embedding_dim);
  REQUIRE(static_cast<std::size_t>(X.rows()) == rec->tokens.size());
  for (std::size_t i = 0; i < rec->tokens.size(); ++i) {
    CHECK(X.row(static_cast<Eigen::Index>(i)).transpose() == rec->tokens[i].vector.cast<double>());
  }
  CHECK_THROWS_AS(token_matrix(*rec, 3), DimensionError);
}

TEST_CASE("training keeps the minimum-validation-loss checkpoint") {
  const auto& m = testsupport::synthetic_manifest();
  const auto train = baseline_dataset(m.training_records(1), m.embedding_dim);
  const auto val = baseline_dataset(m.select(Split::cv_fold(1)), m.embedding_dim);
  auto cfg = default_baseline_config();
  cfg.max_epochs = 40;
  cfg.patience = 6;
  TrainingHistory h;
  const auto model = train_baseline(train, val, m.embedding_dim, cfg, &h);
  REQUIRE(!h.val_loss.empty());
  const double lowest = *std::min_element(h.val_loss.begin(), h.val_loss.end());
  CHECK(h.best_val_loss == lowest);
  CHECK(baseline_loss(model, val) == doctest::Approx(lowest).epsilon(1e-12));
  CHECK(h.train_loss.size() == static_cast<std::size_t>(h.epochs_run));
  CHECK(train_baseline(train, val, m.embedding_dim, cfg) == model);
}

TEST_CASE("zero learning rate keeps the initial parameters") {
  std::mt19937_64 rng(5);
  const auto data = random_dataset(10, 4, rng);
  auto cfg = default_baseline_config();
  cfg.learning_rate = 0.0;
  cfg.max_epochs = 2;
  const auto init = BaselineModel::initial(4, 11);
  CHECK(train_baseline(data, BaselineDataset{}, 4, cfg, nullptr, &init) == init);
  CHECK_THROWS_AS(train_baseline(BaselineDataset{}, BaselineDataset{}, 4, cfg), InvalidArgument);
}

TEST_CASE("baseline learns the synthetic cohort") {
  const auto& m = testsupport::synthetic_manifest();
  const auto model = train_baseline(m, 1, default_baseline_config());
  std::vector<DiseaseLabel> pred, truth;
  for (const auto* r : m.test_records()) {
    const auto p = baseline_predict(*r, model);
    pred.push_back(kLabels[static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin())]);
    truth.push_back(r->label);
  }
  CHECK(classification_metrics(pred, truth).macro_f1 > 0.8);
}
