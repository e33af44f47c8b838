#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

#include "densereg/nn.hpp"
#include "densereg/tensor.hpp"

namespace densereg {

enum class ModelKind { densenet, plain_ann, residual };

std::string_view to_string(ModelKind kind) noexcept;
/// Accepts "densenet", "plain_ann", "residual". Throws ConfigError otherwise.
ModelKind parse_model_kind(std::string_view name);

/// Architecture of a regression network.
///
/// `depth` counts layers in the usual way: three per building
/// block plus the output layer (the input layer is not counted), so
/// depth = 3 * num_blocks + 1.
struct ModelSpec {
  ModelKind kind = ModelKind::densenet;
  std::size_t input_dim = 0;
  std::size_t depth = 0;
  std::size_t width = 0;  // residual only

  std::size_t num_blocks() const noexcept { return depth >= 1 ? (depth - 1) / 3 : 0; }
  /// Throws ConfigError naming the violated rule.
  void validate() const;

  bool operator==(const ModelSpec&) const = default;
};

struct ParamCount {
  std::uint64_t total = 0;
  std::uint64_t trainable = 0;

  bool operator==(const ParamCount&) const = default;
};

/// Parameter count of a model built from `spec`, batch-norm counted as four
/// values per feature (gamma, beta, moving mean, moving variance).
///
/// For densenet this is the closed form
///   total(d, B) = 4^B d^2 + 10 (2^(B+1) - 1) d + 1,
/// with trainable = total - 2 d (4 * 2^B - 2). Other kinds are summed from
/// layer_shapes().
ParamCount count_params(const ModelSpec& spec);

struct LayerShape {
  std::size_t fan_in;
  std::size_t fan_out;
  Activation activation;
};

/// Every layer of the network in execution order: input layer, the three
/// layers of each block, output layer.
std::vector<LayerShape> layer_shapes(const ModelSpec& spec);

/// Sum over layer_shapes(); independent of the closed form above.
ParamCount count_params_by_layout(const ModelSpec& spec);

/// Weights snapshot: one vector per entry of Model::tensors(), same order.
using WeightSnapshot = std::vector<Vector>;

/// Input layer, building blocks, linear output layer.
///
///   densenet   block output concatenated after its input: [out, in]
///   plain_ann  same layer widths, block output passed on as is
///   residual   width-w blocks, output added to the block input
class Model {
 public:
  struct Block {
    std::array<Layer, 3> layers;
  };

  /// Throws ConfigError if the spec is invalid.
  static Model build(const ModelSpec& spec, Rng& rng);

  const ModelSpec& spec() const noexcept { return spec_; }

  /// Predictions, batch x 1. Train mode caches what backward() needs and
  /// updates batch-norm moving statistics.
  Matrix forward(const Matrix& x, Mode mode);
  /// Fills every parameter gradient from dL/dprediction.
  void backward(const Matrix& grad_out);
  /// Infer-mode forward in row chunks; rows are independent so chunking does
  /// not change the result.
  Matrix predict(const Matrix& x, std::size_t chunk_rows = 8192);

  /// Every tensor, trainable or not, in canonical order.
  std::vector<TensorRef> tensors();
  ParamCount parameter_count() const;

  WeightSnapshot snapshot();
  void restore(const WeightSnapshot& weights);

  Layer& input_layer() noexcept { return input_; }
  std::vector<Block>& blocks() noexcept { return blocks_; }
  Layer& output_layer() noexcept { return output_; }

 private:
  Model() = default;
  void clear_caches() noexcept;

  ModelSpec spec_;
  Layer input_;
  std::vector<Block> blocks_;
  Layer output_;
  bool has_train_cache_ = false;
};

}  // namespace densereg
