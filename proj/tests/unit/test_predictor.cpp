#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "mmcbm/error.hpp"
#include "mmcbm/experiment.hpp"
#include "mmcbm/ingest.hpp"
#include "mmcbm/predictor.hpp"

using namespace mmcbm;

namespace {

ConceptScoreVector make_scores(std::initializer_list<double> v) {
  ConceptScoreVector s;
  s.scores = Vector(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) s.scores[i++] = x;
  s.mask.assign(v.size(), true);
  return s;
}

ConceptScoreVector random_scores(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ConceptScoreVector s;
  s.scores.resize(static_cast<Eigen::Index>(n));
  s.mask.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    s.mask[i] = rng() % 5 != 0;
    s.scores[static_cast<Eigen::Index>(i)] = s.mask[i] ? u(rng) : 0.0;
  }
  return s;
}

ScoreDataset random_dataset(std::size_t rows, std::size_t n, std::mt19937_64& rng) {
  ScoreDataset d;
  d.scores = Matrix(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(n));
  for (std::size_t r = 0; r < rows; ++r) {
    d.scores.row(static_cast<Eigen::Index>(r)) = random_scores(n, rng).scores.transpose();
    d.labels.push_back(kLabels[rng() % kNumClasses]);
  }
  return d;
}

EmbeddingToken tok(Modality m, const Vector& v) {
  EmbeddingToken t;
  t.modality = m;
  if (m != Modality::US) t.period = Period::middle;
  t.vector = v.cast<float>();
  return t;
}

}  // namespace

TEST_CASE("hand-computed two-concept example") {
  CHECK(sigmoid(2.0) == doctest::Approx(0.880797).epsilon(1e-6));
  CHECK(sigmoid(-2.0) == doctest::Approx(0.119203).epsilon(1e-6));
  InterpretablePredictor p = InterpretablePredictor::zeros(2);
  p.weights(0, 0) = 2.0;
  p.weights(1, 0) = -2.0;
  p.weights.col(1).setConstant(-5.0);
  p.weights.col(2).setConstant(-5.0);
  const auto e = predict(make_scores({1.0, 0.5}), p, 2);
  CHECK(std::abs(e.logits[0] - 0.9404) < 1e-4);
  CHECK(std::abs(e.logits[0] - (0.880797 + 0.5 * 0.119203)) < 1e-6);
  CHECK(std::abs(e.attention(0, 0) - 0.8808) < 1e-4);
  CHECK(std::abs(e.attention(1, 0) - 0.0596) < 1e-4);
  CHECK(e.label == DiseaseLabel::hemangioma);
  REQUIRE(e.top_k.size() == 2);
  CHECK(e.top_k[0].index == 0);
  CHECK(e.top_k[0].rank == 1);
  CHECK(e.top_k[1].rank == 2);
}

TEST_CASE("zero scores and zero weights fall back to the first class") {
  const auto zero = predict(make_scores({0.0, 0.0, 0.0}), InterpretablePredictor::zeros(3), 3);
  for (double l : zero.logits) CHECK(l == 0.0);
  CHECK(zero.label == DiseaseLabel::hemangioma);

  const auto flat = predict(make_scores({0.2, 0.4, -0.1}), InterpretablePredictor::zeros(3), 3);
  for (double l : flat.logits) CHECK(l == doctest::Approx(0.5 * 0.5));
  CHECK(flat.label == DiseaseLabel::hemangioma);
  CHECK(argmax({1.0, 3.0, 3.0}) == 1);
}

TEST_CASE("softmax sums to one and is shift invariant") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0.0, 30.0);
  for (int i = 0; i < 200; ++i) {
    std::array<double, 3> l{g(rng), g(rng), g(rng)};
    const auto p = softmax(l);
    CHECK(p[0] + p[1] + p[2] == doctest::Approx(1.0).epsilon(1e-12));
    const auto q = softmax({l[0] + 7.0, l[1] + 7.0, l[2] + 7.0});
    for (int c = 0; c < 3; ++c) CHECK(p[c] == doctest::Approx(q[c]).epsilon(1e-12));
  }
}

TEST_CASE("additivity: logits equal summed contributions to machine precision") {
  std::mt19937_64 rng(42);
  const double eps = std::numeric_limits<double>::epsilon();
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 60;
    const auto s = random_scores(n, rng);
    InterpretablePredictor p{testsupport::random_matrix(n, 3, rng, 3.0)};
    const auto e = predict(s, p, std::min<std::size_t>(n, 10));
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      long double exact = 0.0L;
      double magnitude = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double term = s.scores[static_cast<Eigen::Index>(j)] * sigmoid(p.weights(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c)));
        CHECK(e.attention(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c)) == term);
        exact += static_cast<long double>(term);
        magnitude += std::abs(term);
      }
      CHECK(std::abs(static_cast<long double>(e.logits[c]) - exact) <= 2.0L * eps * magnitude);
    }
  }
}

TEST_CASE("dropping a concept moves each logit by its contribution") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng() % 20;
    auto s = random_scores(n, rng);
    InterpretablePredictor p{testsupport::random_matrix(n, 3, rng, 2.0)};
    const auto before = predict(s, p, 1);
    const auto j = static_cast<Eigen::Index>(rng() % n);
    s.scores[j] = 0.0;
    const auto after = predict(s, p, 1);
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      const auto ci = static_cast<Eigen::Index>(c);
      double mag = 0.0;
      for (Eigen::Index r = 0; r < before.attention.rows(); ++r) mag += std::abs(before.attention(r, ci));
      CHECK(std::abs((before.logits[c] - after.logits[c]) - before.attention(j, ci)) <= 8 * 2.2e-16 * mag);
    }
  }
}

TEST_CASE("raising a score raises every logit") {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 15;
    auto s = make_scores({});
    s.scores = Vector::Zero(static_cast<Eigen::Index>(n));
    s.mask.assign(n, true);
    InterpretablePredictor p{testsupport::random_matrix(n, 3, rng, 2.0)};
    const auto base = predict(s, p, 1);
    s.scores[static_cast<Eigen::Index>(rng() % n)] = 0.5;
    const auto up = predict(s, p, 1);
    for (std::size_t c = 0; c < kNumClasses; ++c) CHECK(up.logits[c] > base.logits[c]);
  }
}

TEST_CASE("zeroed absent concepts predict exactly like a bank without them") {
  std::mt19937_64 rng(12);
  const auto bank = testsupport::random_bank(4, 16, rng);
  InterpretablePredictor p{testsupport::random_matrix(bank.size(), 3, rng, 2.0)};
  const auto tokens = testsupport::random_tokens(16, {true, false, true}, rng);
  const auto full = predict(concept_scores(tokens, bank), p, 8);

  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < bank.size(); ++i) {
    if (bank.modality_of(i) != Modality::ICGA) keep.push_back(i);
  }
  const auto small_bank = bank.subset(keep);
  InterpretablePredictor small{Matrix(static_cast<Eigen::Index>(keep.size()), 3)};
  for (std::size_t r = 0; r < keep.size(); ++r) small.weights.row(static_cast<Eigen::Index>(r)) = p.weights.row(static_cast<Eigen::Index>(keep[r]));
  const auto reduced = predict(concept_scores(tokens, small_bank), small, 8);
  CHECK(full.logits == reduced.logits);
  CHECK(full.label == reduced.label);
  REQUIRE(full.top_k.size() == reduced.top_k.size());
  for (std::size_t i = 0; i < full.top_k.size(); ++i) CHECK(full.top_k[i].index == keep[reduced.top_k[i].index]);
}

TEST_CASE("concept scores are cosines against the bank, masked by modality") {
  std::mt19937_64 rng(4);
  const auto bank = testsupport::random_bank(3, 8, rng);

  SUBCASE("feature equal to a CAV row scores 1") {
    const Vector row = bank.directions().row(1).transpose();
    const auto s = concept_scores(std::vector<EmbeddingToken>{tok(Modality::FA, 3.0 * row)}, bank);
    CHECK(s.scores[1] == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("ultrasound-only input masks FA and ICGA") {
    const auto s = concept_scores(testsupport::random_tokens(8, {false, false, true}, rng), bank);
    for (std::size_t i = 0; i < bank.size(); ++i) {
      const bool us = bank.modality_of(i) == Modality::US;
      CHECK(s.mask[i] == us);
      if (!us) CHECK(s.scores[static_cast<Eigen::Index>(i)] == 0.0);
    }
    CHECK(s.masked_in() == 3);
  }
  SUBCASE("orthogonal feature scores 0") {
    Matrix dirs = Matrix::Zero(1, 4);
    dirs(0, 0) = 1.0;
    ConceptBank b({{"x", Modality::FA, "x"}}, dirs, {});
    Vector v = Vector::Zero(4);
    v[2] = 1.0;
    CHECK(concept_scores(std::vector<EmbeddingToken>{tok(Modality::FA, v)}, b).scores[0] == 0.0);
  }
  SUBCASE("modality feature is the normalised token mean") {
    const Vector a = testsupport::random_vector(8, rng), b = testsupport::random_vector(8, rng);
    const auto s = concept_scores(std::vector<EmbeddingToken>{tok(Modality::ICGA, a), tok(Modality::ICGA, b)}, bank);
    const Vector f = (a.cast<float>().cast<double>() + b.cast<float>().cast<double>()).normalized();
    for (std::size_t i = 0; i < bank.size(); ++i) {
      if (bank.modality_of(i) != Modality::ICGA) continue;
      CHECK(s.scores[static_cast<Eigen::Index>(i)] == doctest::Approx(f.dot(bank.directions().row(static_cast<Eigen::Index>(i)))).epsilon(1e-6));
    }
  }
  SUBCASE("scores stay in the cosine range") {
    for (int t = 0; t < 100; ++t) {
      const auto s = concept_scores(testsupport::random_tokens(8, {true, true, true}, rng), bank);
      for (Eigen::Index i = 0; i < s.scores.size(); ++i) {
        CHECK(s.scores[i] >= -1.0);
        CHECK(s.scores[i] <= 1.0);
      }
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(concept_scores(std::vector<EmbeddingToken>{tok(Modality::FA, Vector::Zero(8))}, bank), InvalidArgument);
    CHECK_THROWS_AS(concept_scores(std::vector<EmbeddingToken>{tok(Modality::FA, Vector::Ones(5))}, bank), DimensionError);
    CHECK_THROWS_AS(predict(make_scores({1.0}), InterpretablePredictor::zeros(2)), DimensionError);
  }
}

TEST_CASE("top-k ranking") {
  std::mt19937_64 rng(6);
  const std::size_t n = 12;
  auto s = random_scores(n, rng);
  InterpretablePredictor p{testsupport::random_matrix(n, 3, rng)};
  const auto e = predict(s, p, 1);
  const auto c = static_cast<Eigen::Index>(index_of(e.label));

  const auto all = top_k(e, n);
  CHECK(all.size() == s.masked_in());
  for (std::size_t i = 1; i < all.size(); ++i) CHECK(all[i - 1].attention >= all[i].attention);
  for (std::size_t i = 0; i < all.size(); ++i) {
    CHECK(all[i].rank == i + 1);
    CHECK(s.mask[all[i].index]);
    CHECK(all[i].attention == e.attention(static_cast<Eigen::Index>(all[i].index), c));
    CHECK(all[i].score == s.scores[static_cast<Eigen::Index>(all[i].index)]);
  }
  const auto one = top_k(e, 1);
  REQUIRE(one.size() == 1);
  CHECK(one[0].index == all[0].index);
  CHECK(predict(random_scores(30, rng), InterpretablePredictor::zeros(30)).top_k.size() == 10);
  CHECK_THROWS_AS(top_k(e, 0), InvalidArgument);
  CHECK_THROWS_AS(top_k(e, n + 1), InvalidArgument);

  // equal attention keeps bank order
  const auto tied = predict(make_scores({0.5, 0.5, 0.5}), InterpretablePredictor::zeros(3), 3);
  CHECK(tied.top_k[0].index == 0);
  CHECK(tied.top_k[1].index == 1);
  CHECK(tied.top_k[2].index == 2);
}

TEST_CASE("predictor loss gradient matches central differences") {
  std::mt19937_64 rng(21);
  for (int point = 0; point < 10; ++point) {
    const auto data = random_dataset(12, 7, rng);
    const Matrix w0 = testsupport::random_matrix(7, 3, rng);
    const std::array<double, 3> cw{1.0, 0.7, 1.9};
    const auto f = [&](const Vector& flat) {
      return predictor_loss(Eigen::Map<const Matrix>(flat.data(), 7, 3), data, cw);
    };
    const Matrix g = predictor_loss_gradient(w0, data, cw);
    const Vector flat = Eigen::Map<const Vector>(w0.data(), w0.size());
    const Vector num = testsupport::numeric_gradient(f, flat);
    CHECK(testsupport::relative_error(Eigen::Map<const Vector>(g.data(), g.size()), num) < 1e-4);
  }
}

TEST_CASE("training with zero learning rate leaves W untouched") {
  std::mt19937_64 rng(3);
  const auto train = random_dataset(20, 6, rng);
  auto cfg = default_predictor_config();
  cfg.learning_rate = 0.0;
  cfg.weight_decay = 0.0;
  cfg.max_epochs = 3;
  const auto p = train_predictor(train, ScoreDataset{}, cfg);
  CHECK(p == InterpretablePredictor::zeros(6));
  CHECK_THROWS_AS(train_predictor(ScoreDataset{}, ScoreDataset{}, cfg), InvalidArgument);
}

TEST_CASE("early stopping returns the minimum-validation-loss checkpoint") {
  const auto& m = testsupport::synthetic_manifest();
  const auto model = testsupport::trained_model();
  const auto train = score_dataset(m.training_records(2), model->bank);
  const auto val = score_dataset(m.select(Split::cv_fold(2)), model->bank);
  auto cfg = default_predictor_config();
  cfg.patience = 5;
  TrainingHistory h;
  const auto p = train_predictor(train, val, cfg, &h);
  REQUIRE(!h.val_loss.empty());
  const double lowest = *std::min_element(h.val_loss.begin(), h.val_loss.end());
  CHECK(h.best_val_loss == lowest);
  CHECK(h.val_loss[static_cast<std::size_t>(h.best_epoch)] == lowest);
  CHECK(predictor_loss(p.weights, val) == doctest::Approx(lowest).epsilon(1e-12));
  CHECK(train_predictor(train, val, cfg) == p);  // deterministic
}

TEST_CASE("noise-free cohort is classified perfectly") {
  auto spec = default_synthetic_spec();
  spec.noise_sigma = 0.0;
  spec.modality_noise_sigma.clear();
  spec.concept_presence = 1.0;
  const auto m = generate_splits(generate_synthetic_cohort(spec).manifest, SplitConfig{0.2, 5, 1});
  const auto bank = train_concept_bank(m, BankTrainingConfig{}).bank;
  const auto p = train_predictor(m, bank, 1, default_predictor_config());
  std::vector<DiseaseLabel> pred, truth;
  for (const auto* r : m.test_records()) {
    pred.push_back(predict(concept_scores(*r, bank), p).label);
    truth.push_back(r->label);
  }
  CHECK(classification_metrics(pred, truth).macro_f1 == 1.0);
}

TEST_CASE("inverse-frequency class weights") {
  using L = DiseaseLabel;
  const auto w = inverse_frequency_weights({L::hemangioma, L::hemangioma, L::hemangioma, L::melanoma});
  CHECK(w[0] == doctest::Approx(4.0 / 9.0));
  CHECK(w[1] == 0.0);
  CHECK(w[2] == doctest::Approx(4.0 / 3.0));
}

TEST_CASE("restrict_modalities keeps only the chosen tokens") {
  const auto* rec = testsupport::synthetic_manifest().test_records().front();
  const auto us = restrict_modalities(*rec, {false, false, true});
  CHECK(us.has_modality(Modality::US));
  CHECK_FALSE(us.has_modality(Modality::FA));
  CHECK(us.patient_id == rec->patient_id);
}
