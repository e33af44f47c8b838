#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "densereg/tensor.hpp"

namespace densereg {

enum class Mode { train, infer };

/// Named view onto one parameter tensor of a layer. `grads` is empty for
/// non-trainable state (batch-norm moving statistics).
struct TensorRef {
  std::string name;
  std::vector<std::size_t> shape;
  std::span<double> values;
  std::span<double> grads;

  bool trainable() const noexcept { return !grads.empty(); }
};

/// Fully connected layer y = x W + b, with W of shape fan_in x fan_out.
class DenseLayer {
 public:
  DenseLayer() = default;
  DenseLayer(std::size_t fan_in, std::size_t fan_out);

  /// W ~ U(-sqrt(6/(fan_in+fan_out)), +sqrt(...)), drawn row-major; b = 0.
  void init(Rng& rng);

  Matrix forward(const Matrix& x);
  /// Writes grad_weight / grad_bias and returns dL/dx. Needs a cached forward.
  Matrix backward(const Matrix& grad_out);

  std::size_t fan_in() const noexcept { return weight.rows(); }
  std::size_t fan_out() const noexcept { return weight.cols(); }
  void clear_cache() noexcept { input_.reset(); }
  void append_tensors(const std::string& prefix, std::vector<TensorRef>& out);

  Matrix weight;
  Vector bias;
  Matrix grad_weight;
  Vector grad_bias;

 private:
  std::optional<Matrix> input_;
};

/// Per-feature batch normalisation with learned scale/shift and moving
/// statistics for inference. Train mode uses the biased batch variance.
class BatchNorm {
 public:
  static constexpr double kDefaultEpsilon = 1e-3;
  static constexpr double kDefaultMomentum = 0.99;

  BatchNorm() = default;
  explicit BatchNorm(std::size_t width, double epsilon = kDefaultEpsilon, double momentum = kDefaultMomentum);

  /// Train mode needs at least two rows and updates the moving statistics as
  /// m <- momentum * m + (1 - momentum) * batch_stat. Infer mode mutates nothing.
  Matrix forward(const Matrix& x, Mode mode);
  /// Exact gradient through the batch mean and variance. Only valid after a
  /// train-mode forward.
  Matrix backward(const Matrix& grad_out);

  std::size_t width() const noexcept { return gamma.size(); }
  double epsilon() const noexcept { return epsilon_; }
  double momentum() const noexcept { return momentum_; }
  void clear_cache() noexcept { cache_.reset(); }
  void append_tensors(const std::string& prefix, std::vector<TensorRef>& out);

  Vector gamma;
  Vector beta;
  Vector moving_mean;
  Vector moving_var;
  Vector grad_gamma;
  Vector grad_beta;

 private:
  struct Cache {
    Matrix normalized;
    Vector inv_std;
  };

  double epsilon_ = kDefaultEpsilon;
  double momentum_ = kDefaultMomentum;
  std::optional<Cache> cache_;
};

class Relu {
 public:
  Matrix forward(const Matrix& x);
  /// Passes the gradient where the input was strictly positive.
  Matrix backward(const Matrix& grad_out);
  void clear_cache() noexcept { output_.reset(); }

 private:
  std::optional<Matrix> output_;
};

Matrix relu(const Matrix& x);

/// Column-wise concatenation of parts sharing a row count.
Matrix concat_forward(std::span<const Matrix> parts);
/// Slices `grad` back into pieces of the given widths, values copied verbatim.
std::vector<Matrix> concat_backward(const Matrix& grad, std::span<const std::size_t> widths);

enum class Activation { relu, linear };

/// One network layer: batch norm on the input, dense transform, then the
/// activation. Batch norm therefore acts on the layer's input width.
class Layer {
 public:
  Layer() = default;
  Layer(std::size_t fan_in, std::size_t fan_out, Activation activation);

  void init(Rng& rng) { dense.init(rng); }
  Matrix forward(const Matrix& x, Mode mode);
  Matrix backward(const Matrix& grad_out);
  void clear_cache() noexcept;
  void append_tensors(const std::string& prefix, std::vector<TensorRef>& out);

  std::size_t fan_in() const noexcept { return dense.fan_in(); }
  std::size_t fan_out() const noexcept { return dense.fan_out(); }
  Activation activation() const noexcept { return activation_; }

  BatchNorm norm;
  DenseLayer dense;

 private:
  Activation activation_ = Activation::relu;
  Relu relu_;
};

}  // namespace densereg
