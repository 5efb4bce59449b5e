#include <algorithm>
#include <numeric>
#include <random>

#include "doctest.h"
#include "mmcbm/error.hpp"
#include "mmcbm/metrics.hpp"

using namespace mmcbm;

namespace {

// Straightforward per-patient loop, no shared code with the library.
RetrievalMetrics brute_force(const std::vector<std::vector<std::string>>& ranked,
                             const std::vector<std::set<std::string>>& truth, std::size_t k) {
  RetrievalMetrics m;
  m.k = k;
  m.n_patients = ranked.size();
  double mean_sum = 0.0, median_sum = 0.0;
  std::size_t with_hits = 0;
  for (std::size_t p = 0; p < ranked.size(); ++p) {
    std::vector<std::size_t> ranks;
    for (std::size_t r = 1; r <= std::min(k, ranked[p].size()); ++r) {
      if (truth[p].find(ranked[p][r - 1]) != truth[p].end()) ranks.push_back(r);
    }
    const double prec = static_cast<double>(ranks.size()) / static_cast<double>(k);
    const double rec = static_cast<double>(ranks.size()) / static_cast<double>(truth[p].size());
    m.precision += prec;
    m.recall += rec;
    m.f1 += prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    m.mrr += ranks.empty() ? 0.0 : 1.0 / static_cast<double>(ranks.front());
    m.ranks_excluded += truth[p].size() - ranks.size();
    if (ranks.empty()) {
      ++m.patients_without_hits;
      continue;
    }
    ++with_hits;
    double s = 0.0;
    for (auto r : ranks) s += static_cast<double>(r);
    mean_sum += s / static_cast<double>(ranks.size());
    const auto n = ranks.size();
    median_sum += n % 2 ? static_cast<double>(ranks[n / 2])
                        : 0.5 * static_cast<double>(ranks[n / 2 - 1] + ranks[n / 2]);
  }
  const auto n = static_cast<double>(ranked.size());
  m.precision /= n;
  m.recall /= n;
  m.f1 /= n;
  m.mrr /= n;
  if (with_hits) {
    m.mean_rank = mean_sum / static_cast<double>(with_hits);
    m.median_rank = median_sum / static_cast<double>(with_hits);
  }
  return m;
}

double classification_oracle_f1(const std::vector<int>& pred, const std::vector<int>& truth) {
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    int tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      tp += pred[i] == c && truth[i] == c;
      fp += pred[i] == c && truth[i] != c;
      fn += pred[i] != c && truth[i] == c;
    }
    if (tp + fn == 0) continue;
    total += tp == 0 ? 0.0 : 2.0 * tp / (2.0 * tp + fp + fn);
  }
  return total / 3.0;
}

std::vector<DiseaseLabel> to_labels(const std::vector<int>& xs) {
  std::vector<DiseaseLabel> out;
  for (int x : xs) out.push_back(kLabels[static_cast<std::size_t>(x)]);
  return out;
}

}  // namespace

TEST_CASE("retrieval metrics agree with a brute-force oracle") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t universe = 1 + rng() % 20;
    std::vector<std::string> names(universe);
    for (std::size_t i = 0; i < universe; ++i) names[i] = "c" + std::to_string(i);
    const std::size_t patients = 1 + rng() % 6;
    const std::size_t k = 1 + rng() % 10;
    std::vector<std::vector<std::string>> ranked;
    std::vector<std::set<std::string>> truth;
    for (std::size_t p = 0; p < patients; ++p) {
      auto order = names;
      std::shuffle(order.begin(), order.end(), rng);
      ranked.push_back(order);
      std::set<std::string> t;
      const std::size_t n_true = 1 + rng() % universe;
      for (std::size_t i = 0; i < n_true; ++i) t.insert(names[rng() % universe]);
      truth.push_back(t);
    }
    CAPTURE(trial);
    CHECK(retrieval_at_k(ranked, truth, k) == brute_force(ranked, truth, k));
  }
}

TEST_CASE("retrieval worked examples") {
  const std::vector<std::vector<std::string>> ranked = {{"a", "b", "c", "d"}};
  SUBCASE("half the top-2 is true") {
    const std::vector<std::set<std::string>> truth = {{"a", "z"}};
    const auto m = retrieval_at_k(ranked, truth, 2);
    CHECK(m.precision == 0.5);
    CHECK(m.recall == 0.5);
    CHECK(m.mrr == 1.0);
    CHECK(m.f1 == 0.5);
    CHECK(m.mean_rank == 1.0);
    CHECK(m.ranks_excluded == 1);
  }
  SUBCASE("truth contained in the top-k") {
    const std::vector<std::set<std::string>> truth = {{"b", "c"}};
    const auto m = retrieval_at_k(ranked, truth, 3);
    CHECK(m.recall == 1.0);
    CHECK(m.precision == doctest::Approx(2.0 / 3.0));
    CHECK(m.mrr == 0.5);
    CHECK(m.median_rank == 2.5);
    CHECK(m.ranks_excluded == 0);
  }
  SUBCASE("no hits") {
    const std::vector<std::set<std::string>> truth = {{"d"}};
    const auto m = retrieval_at_k(ranked, truth, 2);
    CHECK(m.precision == 0.0);
    CHECK(m.mrr == 0.0);
    CHECK_FALSE(m.mean_rank.has_value());
    CHECK(m.patients_without_hits == 1);
  }
}

TEST_CASE("per-patient hits are precision times k and recall times truth size") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::string> names;
    for (int i = 0; i < 15; ++i) names.push_back(std::to_string(i));
    std::shuffle(names.begin(), names.end(), rng);
    std::set<std::string> truth;
    for (int i = 0; i < 1 + static_cast<int>(rng() % 8); ++i) truth.insert(std::to_string(rng() % 15));
    const std::size_t k = 1 + rng() % 10;
    const auto s = retrieval_sample(names, truth, k);
    CHECK(std::round(s.precision * static_cast<double>(k)) == static_cast<double>(s.hits));
    CHECK(std::round(s.recall * static_cast<double>(truth.size())) == static_cast<double>(s.hits));
    CHECK(s.hits + s.excluded == truth.size());
  }
}

TEST_CASE("retrieval errors") {
  const std::vector<std::vector<std::string>> ranked = {{"a"}};
  const std::vector<std::set<std::string>> truth = {{"a"}};
  const std::vector<std::set<std::string>> empty_truth = {{}};
  CHECK_THROWS_AS(retrieval_at_k(ranked, truth, 0), InvalidArgument);
  CHECK_THROWS_AS(retrieval_at_k(ranked, empty_truth, 1), InvalidArgument);
  CHECK_THROWS_AS(retrieval_at_k(ranked, std::vector<std::set<std::string>>{}, 1), InvalidArgument);
}

TEST_CASE("classification metrics") {
  SUBCASE("perfect predictions") {
    const auto y = to_labels({0, 1, 2, 2, 1, 0});
    const auto m = classification_metrics(y, y);
    CHECK(m.accuracy == 1.0);
    CHECK(m.macro_f1 == 1.0);
    CHECK(m.absent_classes.empty());
  }
  SUBCASE("constant predictor") {
    const auto truth = to_labels({0, 0, 1, 1, 2, 2});
    const auto pred = to_labels({1, 1, 1, 1, 1, 1});
    const auto m = classification_metrics(pred, truth);
    CHECK(m.accuracy == doctest::Approx(1.0 / 3.0));
    CHECK(m.macro_f1 == doctest::Approx((2.0 * (1.0 / 3.0) / (1.0 / 3.0 + 1.0)) / 3.0));
  }
  SUBCASE("six-item golden case") {
    const std::vector<int> truth = {0, 0, 1, 1, 2, 2};
    const std::vector<int> pred = {0, 1, 1, 1, 2, 0};
    const auto m = classification_metrics(to_labels(pred), to_labels(truth));
    CHECK(m.macro_f1 == doctest::Approx(classification_oracle_f1(pred, truth)).epsilon(1e-12));
    CHECK(m.macro_f1 == doctest::Approx((0.5 + 0.8 + 2.0 / 3.0) / 3.0).epsilon(1e-12));
    CHECK(m.accuracy == doctest::Approx(4.0 / 6.0));
    CHECK(m.confusion[0][1] == 1);
    CHECK(m.confusion[2][0] == 1);
  }
  SUBCASE("absent class") {
    const auto m = classification_metrics(to_labels({0, 1, 1}), to_labels({0, 1, 1}));
    REQUIRE(m.absent_classes.size() == 1);
    CHECK(m.absent_classes[0] == DiseaseLabel::melanoma);
    CHECK(m.f1[2] == 0.0);
  }
  CHECK_THROWS_AS(classification_metrics(to_labels({0}), to_labels({0, 1})), InvalidArgument);
  CHECK_THROWS_AS(classification_metrics(to_labels({}), to_labels({})), InvalidArgument);
}

TEST_CASE("macro F1 matches the oracle and is invariant to relabelling") {
  std::mt19937_64 rng(9);
  const std::vector<std::array<int, 3>> perms = {{1, 2, 0}, {2, 0, 1}, {0, 2, 1}};
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 3 + rng() % 40;
    std::vector<int> truth(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = static_cast<int>(i % 3);  // every class present
      pred[i] = static_cast<int>(rng() % 3);
    }
    const double f1 = classification_metrics(to_labels(pred), to_labels(truth)).macro_f1;
    CHECK(f1 == doctest::Approx(classification_oracle_f1(pred, truth)).epsilon(1e-12));
    for (const auto& p : perms) {
      std::vector<int> t2(n), p2(n);
      for (std::size_t i = 0; i < n; ++i) {
        t2[i] = p[static_cast<std::size_t>(truth[i])];
        p2[i] = p[static_cast<std::size_t>(pred[i])];
      }
      CHECK(classification_metrics(to_labels(p2), to_labels(t2)).macro_f1 == doctest::Approx(f1).epsilon(1e-12));
    }
  }
}

TEST_CASE("bootstrap intervals") {
  SUBCASE("constant input gives a degenerate interval") {
    const std::vector<double> xs(25, 0.7);
    const auto ci = bootstrap_ci(xs);
    CHECK(ci.lo == 0.7);
    CHECK(ci.hi == 0.7);
  }
  SUBCASE("deterministic given the seed") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> xs(50);
    for (auto& x : xs) x = g(rng);
    CHECK(bootstrap_ci(xs, 0.95, 500, 3) == bootstrap_ci(xs, 0.95, 500, 3));
    CHECK_FALSE(bootstrap_ci(xs, 0.95, 500, 3) == bootstrap_ci(xs, 0.95, 500, 4));
  }
  SUBCASE("brackets the sample mean and shrinks like 1/sqrt(n)") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> widths;
    for (std::size_t n : {100, 400, 1600}) {
      std::vector<double> xs(n);
      for (auto& x : xs) x = u(rng) < 0.9 ? 1.0 : 0.0;
      const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(n);
      const auto ci = bootstrap_ci(xs, 0.95, 1000, 11);
      CHECK(ci.lo <= mean);
      CHECK(ci.hi >= mean);
      widths.push_back(ci.hi - ci.lo);
      // normal approximation of a proportion
      const double expect = 2 * 1.96 * std::sqrt(mean * (1 - mean) / static_cast<double>(n));
      CHECK(widths.back() == doctest::Approx(expect).epsilon(0.25));
    }
    CHECK(widths[0] / widths[1] == doctest::Approx(2.0).epsilon(0.3));
    CHECK(widths[1] / widths[2] == doctest::Approx(2.0).epsilon(0.3));
  }
  SUBCASE("custom statistics") {
    const std::vector<double> xs = {1, 2, 3, 4, 5, 6, 7, 8};
    const auto ci = bootstrap_ci(
        xs.size(),
        [&](std::span<const std::size_t> idx) {
          double mx = 0;
          for (auto i : idx) mx = std::max(mx, xs[i]);
          return mx;
        },
        0.9, 400, 1);
    CHECK(ci.hi == 8.0);
    CHECK(ci.lo >= 5.0);
  }
  const std::vector<double> one = {1.0};
  const std::vector<double> two = {1.0, 2.0};
  CHECK_THROWS_AS(bootstrap_ci(one), InvalidArgument);
  CHECK_THROWS_AS(bootstrap_ci(two, 1.0), InvalidArgument);
  CHECK_THROWS_AS(bootstrap_ci(two, 0.0), InvalidArgument);
}

TEST_CASE("stable mean and quantiles") {
  const std::vector<double> c(7, 0.1);
  CHECK(stable_mean(c) == 0.1);
  const std::vector<double> xs = {1, 2, 3, 4};
  CHECK(stable_mean(xs) == 2.5);
  CHECK(quantile_sorted(xs, 0.0) == 1.0);
  CHECK(quantile_sorted(xs, 1.0) == 4.0);
  CHECK(quantile_sorted(xs, 0.5) == 2.5);
  CHECK_THROWS_AS(quantile_sorted(std::vector<double>{}, 0.5), InvalidArgument);
}
