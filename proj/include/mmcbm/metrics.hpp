#pragma once
// Macro-averaged classification metrics, ranked-retrieval metrics over
// concept lists, and percentile bootstrap intervals.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmcbm/core.hpp"

namespace mmcbm {

using ConfusionMatrix = std::array<std::array<std::size_t, kNumClasses>, kNumClasses>;

struct ClassificationMetrics {
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  std::array<double, kNumClasses> precision{};
  std::array<double, kNumClasses> recall{};
  std::array<double, kNumClasses> f1{};
  std::array<std::size_t, kNumClasses> support{};
  ConfusionMatrix confusion{};  // [true][predicted]
  // Classes with no true samples; their per-class terms are 0.
  std::vector<DiseaseLabel> absent_classes;
};

// Throws InvalidArgument on length mismatch or empty input.
ClassificationMetrics classification_metrics(std::span<const DiseaseLabel> predictions,
                                             std::span<const DiseaseLabel> labels);

struct RetrievalMetrics {
  std::size_t k = 0;
  std::size_t n_patients = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // Averaged over patients with at least one true concept inside the top-k;
  // empty when no patient has one.
  std::optional<double> mean_rank;
  std::optional<double> median_rank;
  double mrr = 0.0;
  // True concepts falling outside the top-k, summed over patients.
  std::size_t ranks_excluded = 0;
  std::size_t patients_without_hits = 0;
  bool operator==(const RetrievalMetrics&) const = default;
};

struct RetrievalSample {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double reciprocal_rank = 0.0;
  std::vector<std::size_t> hit_ranks;  // 1-based ranks of true concepts in the top-k
  std::size_t hits = 0;
  std::size_t excluded = 0;
};

// Metrics of one ranked list against its annotation set.
RetrievalSample retrieval_sample(std::span<const std::string> ranked,
                                 const std::set<std::string>& truth, std::size_t k);

// precision@k = |top-k n truth| / k, recall@k = |top-k n truth| / |truth|,
// f1@k their per-patient harmonic mean, MRR@k the mean of 1/rank of the first
// hit (0 without one); everything averaged over patients. Throws
// InvalidArgument for k = 0, mismatched spans or an empty truth set.
RetrievalMetrics retrieval_at_k(std::span<const std::vector<std::string>> ranked,
                                std::span<const std::set<std::string>> truth, std::size_t k);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool operator==(const Interval&) const = default;
};

inline constexpr std::size_t kDefaultBootstrapResamples = 1000;

// Percentile bootstrap of the mean over resampled patients. Throws
// InvalidArgument for fewer than 2 samples or a level outside (0, 1).
Interval bootstrap_ci(std::span<const double> samples, double level = 0.95,
                      std::size_t n_resamples = kDefaultBootstrapResamples,
                      std::uint64_t seed = 0);

// Same, for an arbitrary statistic of a resample given as patient indices.
Interval bootstrap_ci(std::size_t n_samples,
                      const std::function<double(std::span<const std::size_t>)>& statistic,
                      double level = 0.95, std::size_t n_resamples = kDefaultBootstrapResamples,
                      std::uint64_t seed = 0);

// Mean computed as x0 + mean(x - x0), exact for constant input.
double stable_mean(std::span<const double> xs);
// Linear-interpolated quantile of sorted data.
double quantile_sorted(std::span<const double> sorted, double q);

}  // namespace mmcbm
