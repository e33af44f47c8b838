#include "densereg/train.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <string>

#include "densereg/data.hpp"
#include "densereg/errors.hpp"

namespace densereg {

MinMaxScaler::MinMaxScaler(Vector min, Vector max) : min_(std::move(min)), max_(std::move(max)), fitted_(true) {
  if (min_.size() != max_.size()) throw ShapeError("scaler: min and max lengths differ");
  for (std::size_t j = 0; j < min_.size(); ++j) {
    if (!(max_[j] >= min_[j])) throw DomainError("scaler: max < min in column " + std::to_string(j));
  }
}

MinMaxScaler MinMaxScaler::fit(const Matrix& data) {
  if (data.rows() == 0) throw DomainError("scaler: cannot fit on zero rows");
  Vector lo(data.cols()), hi(data.cols());
  for (std::size_t j = 0; j < data.cols(); ++j) lo[j] = hi[j] = data(0, j);
  for (std::size_t i = 1; i < data.rows(); ++i) {
    for (std::size_t j = 0; j < data.cols(); ++j) {
      lo[j] = std::min(lo[j], data(i, j));
      hi[j] = std::max(hi[j], data(i, j));
    }
  }
  return MinMaxScaler(std::move(lo), std::move(hi));
}

void MinMaxScaler::check(const Matrix& data, const char* op) const {
  if (!fitted_) throw StateError(std::string("scaler: ") + op + " before fit");
  if (data.cols() != min_.size()) {
    throw ShapeError(std::string("scaler: ") + op + " of " + shape_string(data) + ", fitted on " +
                     std::to_string(min_.size()) + " columns");
  }
}

Matrix MinMaxScaler::transform(const Matrix& data) const {
  check(data, "transform");
  Matrix out(data.rows(), data.cols());
  for (std::size_t i = 0; i < data.rows(); ++i) {
    for (std::size_t j = 0; j < data.cols(); ++j) {
      const double range = max_[j] - min_[j];
      out(i, j) = range == 0.0 ? 0.5 : (max_[j] - data(i, j)) / range;
    }
  }
  return out;
}

Matrix MinMaxScaler::inverse(const Matrix& scaled) const {
  check(scaled, "inverse");
  Matrix out(scaled.rows(), scaled.cols());
  for (std::size_t i = 0; i < scaled.rows(); ++i) {
    for (std::size_t j = 0; j < scaled.cols(); ++j) {
      const double range = max_[j] - min_[j];
      out(i, j) = range == 0.0 ? min_[j] : max_[j] - scaled(i, j) * range;
    }
  }
  return out;
}

Scalers Scalers::fit(const Dataset& train, bool scale_target) {
  Scalers s;
  s.features = MinMaxScaler::fit(train.features);
  s.scale_target = scale_target;
  if (scale_target) s.target = MinMaxScaler::fit(Matrix::column(train.targets));
  return s;
}

Dataset Scalers::transform(const Dataset& ds) const {
  Dataset out = ds;
  out.features = features.transform(ds.features);
  if (scale_target) out.targets = target.transform(Matrix::column(ds.targets)).column_values(0);
  return out;
}

Vector Scalers::inverse_target(const Matrix& scaled_predictions) const {
  if (!scale_target) return scaled_predictions.column_values(0);
  return target.inverse(scaled_predictions).column_values(0);
}

double mse(std::span<const double> y, std::span<const double> y_hat) {
  if (y.size() != y_hat.size()) {
    throw DomainError("mse: lengths differ (" + std::to_string(y.size()) + " vs " + std::to_string(y_hat.size()) +
                      ")");
  }
  if (y.empty()) throw DomainError("mse: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = y[i] - y_hat[i];
    s += d * d;
  }
  return s / static_cast<double>(y.size());
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train: Adam betas must lie in [0, 1)");
  }
  if (!(adam_epsilon > 0.0)) throw ConfigError("train: adam_epsilon must be positive");
  if (batch_size < 2) throw ConfigError("train: batch_size must be at least 2 (batch norm needs batch statistics)");
  if (patience > max_epochs) {
    throw ConfigError("train: patience " + std::to_string(patience) + " exceeds max_epochs " +
                      std::to_string(max_epochs));
  }
}

Adam::Adam(double learning_rate, double beta1, double beta2, double epsilon)
    : learning_rate_(learning_rate), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

void Adam::step(std::span<const TensorRef> tensors) {
  if (states_.empty()) {
    states_.reserve(tensors.size());
    for (const auto& t : tensors) {
      const std::size_t n = t.trainable() ? t.values.size() : 0;
      states_.push_back({Vector(n, 0.0), Vector(n, 0.0)});
    }
  }
  if (states_.size() != tensors.size()) {
    throw ShapeError("adam: got " + std::to_string(tensors.size()) + " tensors, state holds " +
                     std::to_string(states_.size()));
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& t = tensors[i];
    const std::size_t expect = t.trainable() ? t.values.size() : 0;
    if (states_[i].m.size() != expect || (t.trainable() && t.grads.size() != t.values.size())) {
      throw ShapeError("adam: shape of tensor '" + t.name + "' changed between steps");
    }
  }

  ++t_;
  const double step = static_cast<double>(t_);
  const kernels::AdamCoefficients coeff{learning_rate_,
                                        beta1_,
                                        beta2_,
                                        epsilon_,
                                        1.0 - std::pow(beta1_, step),
                                        1.0 - std::pow(beta2_, step)};
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& t = tensors[i];
    if (!t.trainable()) continue;
    kernels::omp::adam_update(t.values, t.grads, states_[i].m, states_[i].v, coeff);
  }
}

EarlyStopping::Decision EarlyStopping::update(std::size_t epoch, double val_loss,
                                              const std::function<WeightSnapshot()>& take_snapshot) {
  if (!best_loss_ || val_loss < *best_loss_) {
    best_loss_ = val_loss;
    best_epoch_ = epoch;
    since_best_ = 0;
    if (take_snapshot) best_weights_ = take_snapshot();
    return Decision::keep_going;
  }
  ++since_best_;
  return patience_ > 0 && since_best_ >= patience_ ? Decision::stop : Decision::keep_going;
}

namespace {

void check_lengths(std::span<const double> y, std::span<const double> y_hat, const char* what) {
  if (y.size() != y_hat.size()) throw DomainError(std::string(what) + ": lengths differ");
  if (y.empty()) throw DomainError(std::string(what) + ": empty input");
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

double pearson(std::span<const double> y, std::span<const double> y_hat) {
  check_lengths(y, y_hat, "pearson");
  const double my = mean_of(y);
  const double mh = mean_of(y_hat);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double a = y[i] - my;
    const double b = y_hat[i] - mh;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  if (sxx == 0.0 || syy == 0.0) throw UndefinedMetricError("pearson: an input has zero variance");
  return sxy / std::sqrt(sxx * syy);
}

double r_squared(std::span<const double> y, std::span<const double> y_hat) {
  check_lengths(y, y_hat, "r_squared");
  const double my = mean_of(y);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ss_res += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
    ss_tot += (y[i] - my) * (y[i] - my);
  }
  if (ss_tot == 0.0) throw UndefinedMetricError("r_squared: observed values have zero variance");
  return 1.0 - ss_res / ss_tot;
}

double mean_relative_error(std::span<const double> y, std::span<const double> y_hat, std::size_t* skipped) {
  check_lengths(y, y_hat, "mean_relative_error");
  double s = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (std::abs(y[i]) <= 1e-12) continue;
    s += std::abs(y_hat[i] - y[i]) / std::abs(y[i]);
    ++used;
  }
  if (skipped) *skipped = y.size() - used;
  if (used == 0) throw UndefinedMetricError("mean_relative_error: every observed value is zero");
  return s / static_cast<double>(used);
}

Metrics compute_metrics(std::span<const double> y, std::span<const double> y_hat) {
  Metrics m;
  m.mse = mse(y, y_hat);
  m.pearson = pearson(y, y_hat);
  m.r2 = r_squared(y, y_hat);
  m.mean_relative_error = mean_relative_error(y, y_hat, &m.relative_error_skipped);
  return m;
}

TrainReport fit(Model& model, const Dataset& train, const Dataset& val, const TrainConfig& cfg,
                const EpochCallback& on_epoch) {
  cfg.validate();
  if (train.features.cols() != model.spec().input_dim) {
    throw ShapeError("fit: training data has " + std::to_string(train.dim()) + " features, model expects " +
                     std::to_string(model.spec().input_dim));
  }
  if (cfg.patience > 0 && val.size() == 0) {
    throw ConfigError("fit: early stopping needs a non-empty validation set");
  }
  if (cfg.max_epochs > 0 && train.size() < 2) throw DomainError("fit: need at least 2 training rows");

  const auto started = std::chrono::steady_clock::now();
  TrainReport report;
  Rng shuffle_rng(cfg.seed);
  Adam adam(cfg);
  EarlyStopping stopper(cfg.patience);
  const auto tensors = model.tensors();
  const std::size_t n = train.size();

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    if (cfg.shuffle) order = permutation(shuffle_rng, n);

    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, n - start);
      if (count < 2) break;  // batch norm cannot train on a single row
      const std::span<const std::size_t> index(order.data() + start, count);
      const Matrix xb = gather_rows(train.features, index);
      const Vector yb = gather(train.targets, index);

      const Matrix pred = model.forward(xb, Mode::train);
      const double loss = mse(yb, pred.values());
      if (!std::isfinite(loss)) {
        throw NumericError("fit: non-finite training loss in epoch " + std::to_string(epoch));
      }
      Matrix grad(count, 1);
      const double scale = 2.0 / static_cast<double>(count);
      for (std::size_t i = 0; i < count; ++i) grad(i, 0) = scale * (pred(i, 0) - yb[i]);
      model.backward(grad);
      adam.step(tensors);

      loss_sum += loss * static_cast<double>(count);
      seen += count;
    }
    report.train_loss.push_back(seen > 0 ? loss_sum / static_cast<double>(seen) : 0.0);
    report.stopping_epoch = epoch;

    if (val.size() == 0) {
      if (on_epoch) on_epoch(epoch, report.train_loss.back(), std::nullopt);
      continue;
    }
    const double val_loss = mse(val.targets, model.predict(val.features).values());
    if (!std::isfinite(val_loss)) {
      throw NumericError("fit: non-finite validation loss in epoch " + std::to_string(epoch));
    }
    report.val_loss.push_back(val_loss);
    if (on_epoch) on_epoch(epoch, report.train_loss.back(), val_loss);
    if (stopper.update(epoch, val_loss, [&] { return model.snapshot(); }) == EarlyStopping::Decision::stop) {
      report.stopped_early = true;
      break;
    }
  }

  if (stopper.best_weights()) {
    model.restore(*stopper.best_weights());
    report.best_epoch = stopper.best_epoch();
  }
  report.wall_time_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

}  // namespace densereg
