#include "mmcbm/cav.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "mmcbm/error.hpp"
#include "mmcbm/kernels.hpp"
#include "mmcbm/util.hpp"

namespace mmcbm {

double svm_objective(const Vector& w, double b, const Matrix& X, const Vector& y, double C) {
  const Vector margins = (X * w).array() + b;
  double hinge = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) hinge += std::max(0.0, 1.0 - y[i] * margins[i]);
  return 0.5 * w.squaredNorm() + C * hinge;
}

double svm_accuracy(const Vector& w, double b, const Matrix& X, const Vector& y) {
  if (X.rows() == 0) return 0.0;
  const Vector margins = (X * w).array() + b;
  Eigen::Index correct = 0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double pred = margins[i] > 0.0 ? 1.0 : -1.0;
    if (pred == y[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(X.rows());
}

SvmModel train_linear_svm(const Matrix& X, const Vector& y, const SvmConfig& config) {
  const auto n = X.rows();
  if (n == 0) throw InvalidArgument("SVM training set is empty");
  if (y.size() != n) throw DimensionError("label count differs from sample count");
  if (!(config.C > 0.0)) throw InvalidArgument("SVM C must be positive");
  if (config.max_epochs < 1) throw InvalidArgument("max_epochs must be at least 1");

  // Optimise J = lambda/2 |w|^2 + mean hinge, lambda = 1 / (C n); it has the
  // same minimiser as the C-scaled objective and keeps step sizes O(1).
  const double lambda = 1.0 / (config.C * static_cast<double>(n));
  const double r2 = 1.0 + X.rowwise().squaredNorm().maxCoeff();
  constexpr int kWindow = 10;

  Vector w = Vector::Zero(X.cols());
  double b = 0.0;
  SvmModel best;
  best.weight = w;
  best.bias = b;
  best.objective = svm_objective(w, b, X, y, config.C);
  double window_start = best.objective;

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::mt19937_64 rng(config.seed);

  int epoch = 0;
  bool converged = false;
  while (epoch < config.max_epochs) {
    std::shuffle(order.begin(), order.end(), rng);
    const double eta = 1.0 / (r2 * std::sqrt(static_cast<double>(epoch) + 1.0));
    const double shrink = 1.0 - eta * lambda;
    for (const auto i : order) {
      const double margin = y[i] * (X.row(i).dot(w) + b);
      w *= shrink;
      if (margin < 1.0) {
        w.noalias() += (eta * y[i]) * X.row(i).transpose();
        b += eta * y[i];
      }
    }
    ++epoch;
    const double obj = svm_objective(w, b, X, y, config.C);
    if (obj < best.objective) {
      best.objective = obj;
      best.weight = w;
      best.bias = b;
    }
    if (epoch % kWindow == 0) {
      const double gain = window_start - best.objective;
      if (gain <= config.tol * std::max(1e-12, std::abs(window_start))) {
        converged = true;
        break;
      }
      window_start = best.objective;
    }
  }
  best.epochs = epoch;
  best.converged = converged;
  return best;
}

namespace {

Matrix stack_rows(const std::vector<const VectorF*>& rows, Eigen::Index d) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    m.row(static_cast<Eigen::Index>(i)) = rows[i]->cast<double>().transpose();
  }
  return m;
}

void to_problem(const ConceptDataset& data, Matrix& X, Vector& y) {
  const auto np = data.positives.rows();
  const auto nn = data.negatives.rows();
  const auto d = std::max(data.positives.cols(), data.negatives.cols());
  X.resize(np + nn, d);
  y.resize(np + nn);
  if (np) X.topRows(np) = data.positives;
  if (nn) X.bottomRows(nn) = data.negatives;
  y.head(np).setOnes();
  y.tail(nn).setConstant(-1.0);
}

ConceptDataset collect_dataset(const Concept& cpt,
                               std::span<const PatientRecord* const> records, Eigen::Index d) {
  std::vector<const VectorF*> pos, neg;
  const auto key = cpt.key();
  for (const auto* r : records) {
    if (!r->concept_annotations) continue;
    const bool positive = r->concept_annotations->count(key) > 0;
    for (const auto& t : r->tokens) {
      if (t.modality != cpt.modality) continue;
      if (d < 0) d = t.vector.size();
      if (t.vector.size() != d) throw DimensionError("tokens of differing dimension");
      (positive ? pos : neg).push_back(&t.vector);
    }
  }
  return {stack_rows(pos, std::max<Eigen::Index>(d, 0)),
          stack_rows(neg, std::max<Eigen::Index>(d, 0))};
}

}  // namespace

ConceptDataset build_concept_dataset(const Concept& cpt,
                                     std::span<const PatientRecord* const> records) {
  auto data = collect_dataset(cpt, records, -1);
  if (data.positives.rows() == 0) {
    throw InvalidArgument("concept " + to_string(cpt.key()) + " has no positive samples");
  }
  if (data.negatives.rows() == 0) {
    throw InvalidArgument("concept " + to_string(cpt.key()) + " has no negative samples");
  }
  return data;
}

CAV train_cav(const ConceptKey& key, const ConceptDataset& train, const SvmConfig& config,
              const ConceptDataset* held_out) {
  if (train.positives.rows() == 0 || train.negatives.rows() == 0) {
    throw InvalidArgument("CAV training needs positive and negative samples");
  }
  if (train.positives.cols() != train.negatives.cols()) {
    throw DimensionError("positive and negative samples differ in dimension");
  }
  Matrix X;
  Vector y;
  to_problem(train, X, y);
  const auto model = train_linear_svm(X, y, config);

  CAV cav;
  cav.key = key;
  cav.weight = model.weight;
  cav.bias = model.bias;
  cav.epochs = model.epochs;
  cav.converged = model.converged;
  cav.train_accuracy = svm_accuracy(model.weight, model.bias, X, y);
  cav.separated = cav.train_accuracy == 1.0;
  if (held_out && held_out->positives.rows() + held_out->negatives.rows() > 0) {
    if (held_out->positives.cols() != X.cols() && held_out->positives.rows() > 0) {
      throw DimensionError("held-out samples differ in dimension");
    }
    Matrix Xt;
    Vector yt;
    to_problem(*held_out, Xt, yt);
    cav.test_accuracy = svm_accuracy(model.weight, model.bias, Xt, yt);
  }
  return cav;
}

ConceptBank::ConceptBank(std::vector<Concept> concepts, Matrix directions,
                         std::vector<ConceptStats> stats)
    : concepts_(std::move(concepts)), directions_(std::move(directions)), stats_(std::move(stats)) {
  if (static_cast<Eigen::Index>(concepts_.size()) != directions_.rows()) {
    throw DimensionError("concept count differs from bank row count");
  }
  if (stats_.empty()) stats_.resize(concepts_.size());
  if (stats_.size() != concepts_.size()) throw DimensionError("stats count differs from concepts");
}

std::optional<std::size_t> ConceptBank::index_of(const ConceptKey& key) const {
  for (std::size_t i = 0; i < concepts_.size(); ++i) {
    if (concepts_[i].modality == key.modality && concepts_[i].id == key.id) return i;
  }
  return std::nullopt;
}

std::size_t ConceptBank::index_of_id(std::string_view id) const {
  std::optional<std::size_t> found;
  for (std::size_t i = 0; i < concepts_.size(); ++i) {
    if (concepts_[i].id != id) continue;
    if (found) throw InvalidArgument("concept id '" + std::string(id) + "' is ambiguous");
    found = i;
  }
  if (!found) throw NotFound("unknown concept '" + std::string(id) + "'");
  return *found;
}

ConceptBank ConceptBank::subset(std::vector<std::size_t> indices) const {
  std::sort(indices.begin(), indices.end());
  indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
  std::vector<Concept> concepts;
  std::vector<ConceptStats> stats;
  Matrix dirs(static_cast<Eigen::Index>(indices.size()), directions_.cols());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto i = indices[k];
    if (i >= concepts_.size()) throw InvalidArgument("bank subset index out of range");
    concepts.push_back(concepts_[i]);
    stats.push_back(stats_[i]);
    dirs.row(static_cast<Eigen::Index>(k)) = directions_.row(static_cast<Eigen::Index>(i));
  }
  return ConceptBank(std::move(concepts), std::move(dirs), std::move(stats));
}

bool ConceptBank::operator==(const ConceptBank& other) const {
  if (concepts_ != other.concepts_ || stats_ != other.stats_) return false;
  if (directions_.rows() != other.directions_.rows() ||
      directions_.cols() != other.directions_.cols()) {
    return false;
  }
  return directions_.size() == 0 ||
         std::equal(directions_.data(), directions_.data() + directions_.size(),
                    other.directions_.data());
}

ConceptBank assemble_bank(std::vector<Concept> concepts, std::span<const CAV> cavs) {
  std::erase_if(concepts, [](const Concept& c) { return !c.active(); });
  std::sort(concepts.begin(), concepts.end(), canonical_less);
  if (concepts.empty()) throw InvalidArgument("concept bank needs at least one active concept");

  Eigen::Index d = -1;
  for (const auto& cav : cavs) {
    if (d < 0) d = cav.weight.size();
    if (cav.weight.size() != d) throw DimensionError("CAVs of differing dimension");
  }
  Matrix dirs(static_cast<Eigen::Index>(concepts.size()), std::max<Eigen::Index>(d, 0));
  std::vector<ConceptStats> stats;
  for (std::size_t i = 0; i < concepts.size(); ++i) {
    const auto key = concepts[i].key();
    const auto it = std::find_if(cavs.begin(), cavs.end(),
                                 [&](const CAV& c) { return c.key == key; });
    if (it == cavs.end()) throw InvalidArgument("no CAV for concept " + to_string(key));
    const double norm = it->weight.norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw InvalidArgument("CAV of concept " + to_string(key) + " is zero");
    }
    dirs.row(static_cast<Eigen::Index>(i)) = (it->weight / norm).transpose();
    stats.push_back({it->train_accuracy, it->test_accuracy, it->converged});
  }
  return ConceptBank(std::move(concepts), std::move(dirs), std::move(stats));
}

BankTrainingResult train_concept_bank(const std::vector<Concept>& concepts,
                                      std::span<const PatientRecord* const> train,
                                      std::span<const PatientRecord* const> held_out,
                                      const BankTrainingConfig& config) {
  std::vector<Concept> ordered;
  for (const auto& c : concepts) {
    if (c.active()) ordered.push_back(c);
  }
  std::sort(ordered.begin(), ordered.end(), canonical_less);

  BankTrainingResult result;
  std::vector<ConceptDataset> train_sets;
  std::vector<ConceptDataset> test_sets;
  std::vector<Concept> trainable;
  for (const auto& c : ordered) {
    try {
      train_sets.push_back(build_concept_dataset(c, train));
    } catch (const InvalidArgument&) {
      if (!config.skip_untrainable) throw;
      result.skipped.push_back(c.key());
      continue;
    }
    // The held-out side may lack positives; accuracy is scored on whatever exists.
    auto test = collect_dataset(c, held_out, train_sets.back().positives.cols());
    test_sets.push_back(std::move(test));
    trainable.push_back(c);
  }

  std::vector<kernels::CavJob> jobs;
  for (std::size_t i = 0; i < trainable.size(); ++i) {
    SvmConfig svm = config.svm;
    svm.seed = derive_seed(config.svm.seed, fnv1a64(to_string(trainable[i].key())));
    jobs.push_back({trainable[i].key(), &train_sets[i], &test_sets[i], svm});
  }
  result.cavs = config.parallel ? kernels::omp::train_cavs(jobs) : kernels::serial::train_cavs(jobs);
  result.bank = assemble_bank(trainable, result.cavs);
  return result;
}

BankTrainingResult train_concept_bank(const DatasetManifest& manifest,
                                      const BankTrainingConfig& config) {
  std::vector<const PatientRecord*> train, test;
  for (const auto& r : manifest.records) {
    const auto it = manifest.splits.find(r.patient_id);
    const bool is_test = it != manifest.splits.end() && it->second.is_test();
    (is_test ? test : train).push_back(&r);
  }
  return train_concept_bank(manifest.concepts, train, test, config);
}

}  // namespace mmcbm
