#pragma once
// Adam with coupled L2 weight decay (the decay term is added to the gradient
// before the moment updates), plus the early-stopping bookkeeping shared by
// the baseline head and the interpretable predictor.

#include <cmath>
#include <cstddef>
#include <limits>

#include "mmcbm/core.hpp"

namespace mmcbm {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
};

class Adam {
 public:
  Adam(AdamConfig config, Eigen::Index n_params)
      : config_(config), m_(Vector::Zero(n_params)), v_(Vector::Zero(n_params)) {}

  void step(Eigen::Ref<Vector> params, const Vector& grad) {
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (Eigen::Index i = 0; i < params.size(); ++i) {
      const double g = grad[i] + config_.weight_decay * params[i];
      m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
      v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g * g;
      const double m_hat = m_[i] / bc1;
      const double v_hat = v_[i] / bc2;
      params[i] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }

  long steps() const { return t_; }

 private:
  AdamConfig config_;
  Vector m_;
  Vector v_;
  long t_ = 0;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 1e-2;
  std::size_t batch_size = 8;
  int max_epochs = 200;
  int patience = 20;
  double min_delta = 1e-4;
  // Inverse-frequency class weights in the loss.
  bool class_weighting = false;
  std::uint64_t seed = 0;
};

struct TrainingHistory {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::vector<double> val_macro_f1;
  int epochs_run = 0;
  int best_epoch = -1;  // 0-based; -1 when no validation data
  double best_val_loss = std::numeric_limits<double>::infinity();
  bool early_stopped = false;
};

// Patience counter resets only on an improvement larger than min_delta, but
// the retained checkpoint is always the one with the lowest validation loss.
class EarlyStopping {
 public:
  EarlyStopping(int patience, double min_delta) : patience_(patience), min_delta_(min_delta) {}

  // Returns true when `loss` is a new minimum (caller keeps the checkpoint).
  bool observe(double loss) {
    const bool best = loss < best_;
    if (loss < reference_ - min_delta_) {
      reference_ = loss;
      stale_ = 0;
    } else {
      ++stale_;
    }
    if (best) best_ = loss;
    return best;
  }
  bool should_stop() const { return stale_ >= patience_; }
  double best() const { return best_; }

 private:
  int patience_;
  double min_delta_;
  double best_ = std::numeric_limits<double>::infinity();
  double reference_ = std::numeric_limits<double>::infinity();
  int stale_ = 0;
};

// Inverse-frequency weights n / (K * n_c); classes without samples get 0.
std::array<double, kNumClasses> inverse_frequency_weights(const std::vector<DiseaseLabel>& labels);

}  // namespace mmcbm
