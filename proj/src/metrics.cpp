#include "mmcbm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mmcbm/error.hpp"

namespace mmcbm {

ClassificationMetrics classification_metrics(std::span<const DiseaseLabel> predictions,
                                             std::span<const DiseaseLabel> labels) {
  if (predictions.size() != labels.size()) {
    throw InvalidArgument("predictions and labels differ in length");
  }
  if (labels.empty()) throw InvalidArgument("classification metrics need at least one sample");

  ClassificationMetrics m;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++m.confusion[index_of(labels[i])][index_of(predictions[i])];
  }
  std::size_t correct = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    correct += m.confusion[c][c];
    std::size_t row = 0, col = 0;
    for (std::size_t k = 0; k < kNumClasses; ++k) {
      row += m.confusion[c][k];
      col += m.confusion[k][c];
    }
    m.support[c] = row;
    const double tp = static_cast<double>(m.confusion[c][c]);
    m.precision[c] = col ? tp / static_cast<double>(col) : 0.0;
    m.recall[c] = row ? tp / static_cast<double>(row) : 0.0;
    const double denom = m.precision[c] + m.recall[c];
    m.f1[c] = denom > 0.0 ? 2.0 * m.precision[c] * m.recall[c] / denom : 0.0;
    if (row == 0) {
      m.absent_classes.push_back(kLabels[c]);
      m.precision[c] = m.recall[c] = m.f1[c] = 0.0;
    }
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    m.macro_precision += m.precision[c];
    m.macro_recall += m.recall[c];
    m.macro_f1 += m.f1[c];
  }
  m.macro_precision /= kNumClasses;
  m.macro_recall /= kNumClasses;
  m.macro_f1 /= kNumClasses;
  return m;
}

RetrievalSample retrieval_sample(std::span<const std::string> ranked,
                                 const std::set<std::string>& truth, std::size_t k) {
  if (k == 0) throw InvalidArgument("k must be at least 1");
  if (truth.empty()) throw InvalidArgument("annotation set is empty");
  RetrievalSample s;
  const auto depth = std::min(k, ranked.size());
  std::set<std::string> seen;
  for (std::size_t i = 0; i < depth; ++i) {
    if (!seen.insert(ranked[i]).second) continue;
    if (truth.count(ranked[i])) {
      s.hit_ranks.push_back(i + 1);
      if (s.reciprocal_rank == 0.0) s.reciprocal_rank = 1.0 / static_cast<double>(i + 1);
    }
  }
  s.hits = s.hit_ranks.size();
  s.excluded = truth.size() - s.hits;
  s.precision = static_cast<double>(s.hits) / static_cast<double>(k);
  s.recall = static_cast<double>(s.hits) / static_cast<double>(truth.size());
  const double denom = s.precision + s.recall;
  s.f1 = denom > 0.0 ? 2.0 * s.precision * s.recall / denom : 0.0;
  return s;
}

RetrievalMetrics retrieval_at_k(std::span<const std::vector<std::string>> ranked,
                                std::span<const std::set<std::string>> truth, std::size_t k) {
  if (k == 0) throw InvalidArgument("k must be at least 1");
  if (ranked.size() != truth.size()) throw InvalidArgument("ranked lists and truth sets differ");
  if (ranked.empty()) throw InvalidArgument("retrieval metrics need at least one patient");

  RetrievalMetrics m;
  m.k = k;
  m.n_patients = ranked.size();
  double mean_rank_sum = 0.0, median_rank_sum = 0.0;
  std::size_t with_hits = 0;
  for (std::size_t p = 0; p < ranked.size(); ++p) {
    const auto s = retrieval_sample(ranked[p], truth[p], k);
    m.precision += s.precision;
    m.recall += s.recall;
    m.f1 += s.f1;
    m.mrr += s.reciprocal_rank;
    m.ranks_excluded += s.excluded;
    if (s.hit_ranks.empty()) {
      ++m.patients_without_hits;
      continue;
    }
    ++with_hits;
    double sum = 0.0;
    for (auto r : s.hit_ranks) sum += static_cast<double>(r);
    mean_rank_sum += sum / static_cast<double>(s.hit_ranks.size());
    // hit_ranks is ascending by construction
    const auto n = s.hit_ranks.size();
    const double median = n % 2 ? static_cast<double>(s.hit_ranks[n / 2])
                                : 0.5 * static_cast<double>(s.hit_ranks[n / 2 - 1] + s.hit_ranks[n / 2]);
    median_rank_sum += median;
  }
  const auto n = static_cast<double>(m.n_patients);
  m.precision /= n;
  m.recall /= n;
  m.f1 /= n;
  m.mrr /= n;
  if (with_hits) {
    m.mean_rank = mean_rank_sum / static_cast<double>(with_hits);
    m.median_rank = median_rank_sum / static_cast<double>(with_hits);
  }
  return m;
}

double stable_mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  const double x0 = xs[0];
  double acc = 0.0;
  for (double x : xs) acc += x - x0;
  return x0 + acc / static_cast<double>(xs.size());
}

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw InvalidArgument("quantile of empty data");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  if (frac == 0.0 || sorted[lo] == sorted[hi]) return sorted[lo];
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

Interval bootstrap_ci(std::size_t n_samples,
                      const std::function<double(std::span<const std::size_t>)>& statistic,
                      double level, std::size_t n_resamples, std::uint64_t seed) {
  if (n_samples < 2) throw InvalidArgument("bootstrap needs at least two samples");
  if (!(level > 0.0 && level < 1.0)) throw InvalidArgument("confidence level must lie in (0, 1)");
  if (n_resamples == 0) throw InvalidArgument("bootstrap needs at least one resample");

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n_samples - 1);
  std::vector<std::size_t> idx(n_samples);
  std::vector<double> stats;
  stats.reserve(n_resamples);
  for (std::size_t b = 0; b < n_resamples; ++b) {
    for (auto& i : idx) i = pick(rng);
    stats.push_back(statistic(idx));
  }
  std::sort(stats.begin(), stats.end());
  const double alpha = 1.0 - level;
  return {quantile_sorted(stats, alpha / 2.0), quantile_sorted(stats, 1.0 - alpha / 2.0)};
}

Interval bootstrap_ci(std::span<const double> samples, double level, std::size_t n_resamples,
                      std::uint64_t seed) {
  std::vector<double> buf(samples.size());
  return bootstrap_ci(
      samples.size(),
      [&](std::span<const std::size_t> idx) {
        for (std::size_t i = 0; i < idx.size(); ++i) buf[i] = samples[idx[i]];
        return stable_mean(buf);
      },
      level, n_resamples, seed);
}

}  // namespace mmcbm
