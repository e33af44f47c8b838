#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "densereg/kernels.hpp"
#include "densereg/model.hpp"
#include "densereg/tensor.hpp"

namespace densereg {

struct Dataset;

/// Reversed min-max scaling per column: u_hat = (max - u) / (max - min).
/// The column maximum maps to 0 and the minimum to 1. Columns with max == min
/// map to 0.5 and invert back to the constant.
class MinMaxScaler {
 public:
  MinMaxScaler() = default;
  MinMaxScaler(Vector min, Vector max);

  static MinMaxScaler fit(const Matrix& data);

  bool fitted() const noexcept { return fitted_; }
  const Vector& min() const noexcept { return min_; }
  const Vector& max() const noexcept { return max_; }
  bool degenerate(std::size_t column) const { return max_.at(column) == min_.at(column); }

  Matrix transform(const Matrix& data) const;
  Matrix inverse(const Matrix& scaled) const;

  bool operator==(const MinMaxScaler&) const = default;

 private:
  void check(const Matrix& data, const char* op) const;

  Vector min_;
  Vector max_;
  bool fitted_ = false;
};

/// Feature and target scalers fitted on the training partition.
struct Scalers {
  MinMaxScaler features;
  MinMaxScaler target;
  bool scale_target = true;

  static Scalers fit(const Dataset& train, bool scale_target);
  Dataset transform(const Dataset& ds) const;
  /// Predictions (n x 1, scaled space) back to target units.
  Vector inverse_target(const Matrix& scaled_predictions) const;

  bool operator==(const Scalers&) const = default;
};

/// Mean squared error. Throws DomainError on empty or unequal inputs.
double mse(std::span<const double> y, std::span<const double> y_hat);

struct TrainConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t batch_size = 1000;
  std::size_t max_epochs = 200;
  std::size_t patience = 50;  // 0 disables the stopping rule
  std::uint64_t seed = 42;
  bool scale_target = true;
  bool shuffle = true;

  /// Throws ConfigError naming the violated rule.
  void validate() const;

  bool operator==(const TrainConfig&) const = default;
};

/// Bias-corrected Adam with per-tensor moments. Non-trainable tensors are
/// skipped.
class Adam {
 public:
  struct State {
    Vector m;
    Vector v;
  };

  Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);
  explicit Adam(const TrainConfig& cfg) : Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_epsilon) {}

  /// One update of every trainable tensor from its gradient. The tensor list
  /// must keep the same shapes between calls.
  void step(std::span<const TensorRef> tensors);

  std::uint64_t steps() const noexcept { return t_; }
  const std::vector<State>& states() const noexcept { return states_; }

 private:
  double learning_rate_;
  double beta1_;
  double beta2_;
  double epsilon_;
  std::uint64_t t_ = 0;
  std::vector<State> states_;
};

/// Strict-improvement early stopping with a snapshot of the best weights.
class EarlyStopping {
 public:
  enum class Decision { keep_going, stop };

  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Feeds one epoch's validation loss. `take_snapshot` runs only when the
  /// loss strictly improves on the best so far.
  Decision update(std::size_t epoch, double val_loss, const std::function<WeightSnapshot()>& take_snapshot);

  std::optional<double> best_loss() const noexcept { return best_loss_; }
  std::size_t best_epoch() const noexcept { return best_epoch_; }
  std::size_t epochs_since_best() const noexcept { return since_best_; }
  const std::optional<WeightSnapshot>& best_weights() const noexcept { return best_weights_; }

 private:
  std::size_t patience_;
  std::optional<double> best_loss_;
  std::size_t best_epoch_ = 0;
  std::size_t since_best_ = 0;
  std::optional<WeightSnapshot> best_weights_;
};

struct Metrics {
  double mse = 0.0;
  double pearson = 0.0;
  double r2 = 0.0;
  double mean_relative_error = 0.0;
  std::size_t relative_error_skipped = 0;
};

/// Sample Pearson correlation. Throws UndefinedMetricError on zero variance.
double pearson(std::span<const double> y, std::span<const double> y_hat);
/// 1 - SS_res / SS_tot. Throws UndefinedMetricError when y is constant.
double r_squared(std::span<const double> y, std::span<const double> y_hat);
/// Mean of |y_hat - y| / |y| over entries with |y| > 1e-12; the others are
/// counted in `skipped`.
double mean_relative_error(std::span<const double> y, std::span<const double> y_hat, std::size_t* skipped = nullptr);
/// All of the above, in whatever units y and y_hat are given.
Metrics compute_metrics(std::span<const double> y, std::span<const double> y_hat);

struct TrainReport {
  std::vector<double> train_loss;  // per epoch, mean over the epoch's batches
  std::vector<double> val_loss;    // per epoch, full validation set, infer mode
  std::size_t stopping_epoch = 0;  // epochs actually run
  std::size_t best_epoch = 0;      // 1-based, 0 when no validation curve
  bool stopped_early = false;
  double wall_time_seconds = 0.0;
  std::optional<double> test_loss;
  std::optional<Metrics> test_metrics;
};

/// Called after every epoch with its training loss and, when a validation
/// set exists, its validation loss.
using EpochCallback = std::function<void(std::size_t epoch, double train_loss, std::optional<double> val_loss)>;

/// Trains `model` on already-scaled data with minibatch Adam and early
/// stopping. On return the model holds the best-validation weights.
TrainReport fit(Model& model, const Dataset& train, const Dataset& val, const TrainConfig& cfg,
                const EpochCallback& on_epoch = {});

}  // namespace densereg
