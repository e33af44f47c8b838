#include "densereg/model.hpp"

#include <algorithm>
#include <string>

#include "densereg/errors.hpp"

namespace densereg {

std::string_view to_string(ModelKind kind) noexcept {
  switch (kind) {
    case ModelKind::densenet:
      return "densenet";
    case ModelKind::plain_ann:
      return "plain_ann";
    case ModelKind::residual:
      return "residual";
  }
  return "unknown";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "densenet") return ModelKind::densenet;
  if (name == "plain_ann") return ModelKind::plain_ann;
  if (name == "residual") return ModelKind::residual;
  throw ConfigError("unknown model kind '" + std::string(name) + "' (expected densenet, plain_ann or residual)");
}

void ModelSpec::validate() const {
  if (input_dim == 0) throw ConfigError("model: input_dim must be at least 1");
  if (depth < 4 || depth % 3 != 1) {
    throw ConfigError("model: depth " + std::to_string(depth) +
                      " is invalid; depth must be 3 * blocks + 1 with at least one block (4, 7, 10, ...)");
  }
  if (num_blocks() > 30) throw ConfigError("model: depth " + std::to_string(depth) + " is too large");
  if (kind == ModelKind::residual && width == 0) throw ConfigError("model: residual width must be at least 1");
}

std::vector<LayerShape> layer_shapes(const ModelSpec& spec) {
  spec.validate();
  const std::size_t d = spec.input_dim;
  const std::size_t blocks = spec.num_blocks();
  std::vector<LayerShape> shapes;
  shapes.reserve(3 * blocks + 2);

  switch (spec.kind) {
    case ModelKind::densenet: {
      shapes.push_back({d, d, Activation::relu});
      std::size_t w = d;
      for (std::size_t k = 0; k < blocks; ++k, w *= 2)
        for (int l = 0; l < 3; ++l) shapes.push_back({w, w, Activation::relu});
      shapes.push_back({w, 1, Activation::linear});
      break;
    }
    case ModelKind::plain_ann: {
      shapes.push_back({d, d, Activation::relu});
      std::size_t in = d;
      std::size_t w = d;
      for (std::size_t k = 0; k < blocks; ++k, w *= 2) {
        shapes.push_back({in, w, Activation::relu});
        shapes.push_back({w, w, Activation::relu});
        shapes.push_back({w, w, Activation::relu});
        in = w;
      }
      shapes.push_back({in, 1, Activation::linear});
      break;
    }
    case ModelKind::residual: {
      const std::size_t w = spec.width;
      shapes.push_back({d, w, Activation::relu});
      for (std::size_t k = 0; k < 3 * blocks; ++k) shapes.push_back({w, w, Activation::relu});
      shapes.push_back({w, 1, Activation::linear});
      break;
    }
  }
  return shapes;
}

ParamCount count_params_by_layout(const ModelSpec& spec) {
  ParamCount count;
  for (const auto& s : layer_shapes(spec)) {
    const std::uint64_t bn = 4 * s.fan_in;
    const std::uint64_t dense = s.fan_in * s.fan_out + s.fan_out;
    count.total += bn + dense;
    count.trainable += bn / 2 + dense;
  }
  return count;
}

ParamCount count_params(const ModelSpec& spec) {
  spec.validate();
  if (spec.kind != ModelKind::densenet) return count_params_by_layout(spec);
  const std::uint64_t d = spec.input_dim;
  const std::uint64_t blocks = spec.num_blocks();
  const std::uint64_t pow2 = std::uint64_t{1} << blocks;
  const std::uint64_t pow4 = pow2 * pow2;
  ParamCount count;
  count.total = pow4 * d * d + 10 * (2 * pow2 - 1) * d + 1;
  count.trainable = count.total - 2 * d * (4 * pow2 - 2);
  return count;
}

Model Model::build(const ModelSpec& spec, Rng& rng) {
  const auto shapes = layer_shapes(spec);
  Model m;
  m.spec_ = spec;
  auto make = [&](const LayerShape& s) {
    Layer layer(s.fan_in, s.fan_out, s.activation);
    layer.init(rng);
    return layer;
  };
  m.input_ = make(shapes.front());
  m.blocks_.resize(spec.num_blocks());
  std::size_t next = 1;
  for (auto& block : m.blocks_)
    for (auto& layer : block.layers) layer = make(shapes[next++]);
  m.output_ = make(shapes.back());
  return m;
}

Matrix Model::forward(const Matrix& x, Mode mode) {
  if (x.cols() != spec_.input_dim) {
    throw ShapeError("model: input has " + std::to_string(x.cols()) + " columns, model expects " +
                     std::to_string(spec_.input_dim));
  }
  has_train_cache_ = false;
  Matrix h = input_.forward(x, mode);
  for (auto& block : blocks_) {
    Matrix t = h;
    for (auto& layer : block.layers) t = layer.forward(t, mode);
    switch (spec_.kind) {
      case ModelKind::densenet: {
        const std::array<Matrix, 2> parts{std::move(t), std::move(h)};
        h = concat_forward(parts);
        break;
      }
      case ModelKind::residual: {
        auto hv = h.values();
        const auto tv = t.values();
        for (std::size_t i = 0; i < hv.size(); ++i) hv[i] = tv[i] + hv[i];
        break;
      }
      case ModelKind::plain_ann:
        h = std::move(t);
        break;
    }
  }
  Matrix y = output_.forward(h, mode);
  has_train_cache_ = mode == Mode::train;
  return y;
}

void Model::backward(const Matrix& grad_out) {
  if (!has_train_cache_) throw StateError("model: backward requires a preceding train-mode forward");
  Matrix g = output_.backward(grad_out);
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
    auto& layers = it->layers;
    auto through_layers = [&](Matrix grad) {
      for (auto l = layers.rbegin(); l != layers.rend(); ++l) grad = l->backward(grad);
      return grad;
    };
    switch (spec_.kind) {
      case ModelKind::densenet: {
        // The block input feeds both the block's layers and the concatenation,
        // so its gradient is the sum of both paths.
        const std::array<std::size_t, 2> widths{layers.back().fan_out(), layers.front().fan_in()};
        auto parts = concat_backward(g, widths);
        g = through_layers(std::move(parts[0]));
        auto gv = g.values();
        const auto sv = parts[1].values();
        for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += sv[i];
        break;
      }
      case ModelKind::residual: {
        Matrix inner = through_layers(g);
        auto gv = g.values();
        const auto iv = inner.values();
        for (std::size_t i = 0; i < gv.size(); ++i) gv[i] = iv[i] + gv[i];
        break;
      }
      case ModelKind::plain_ann:
        g = through_layers(std::move(g));
        break;
    }
  }
  input_.backward(g);
}

Matrix Model::predict(const Matrix& x, std::size_t chunk_rows) {
  if (chunk_rows == 0) chunk_rows = x.rows();
  if (x.rows() <= chunk_rows) return forward(x, Mode::infer);
  Matrix out(x.rows(), 1);
  std::vector<std::size_t> index;
  for (std::size_t start = 0; start < x.rows(); start += chunk_rows) {
    const std::size_t stop = std::min(x.rows(), start + chunk_rows);
    index.resize(stop - start);
    for (std::size_t i = start; i < stop; ++i) index[i - start] = i;
    const Matrix part = forward(gather_rows(x, index), Mode::infer);
    for (std::size_t i = start; i < stop; ++i) out(i, 0) = part(i - start, 0);
  }
  return out;
}

std::vector<TensorRef> Model::tensors() {
  std::vector<TensorRef> out;
  input_.append_tensors("input.", out);
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    for (std::size_t l = 0; l < 3; ++l) {
      blocks_[k].layers[l].append_tensors("block" + std::to_string(k + 1) + ".layer" + std::to_string(l + 1) + ".",
                                          out);
    }
  }
  output_.append_tensors("output.", out);
  return out;
}

ParamCount Model::parameter_count() const {
  ParamCount count;
  auto add = [&](const Layer& layer) {
    const std::uint64_t bn_trainable = layer.norm.gamma.size() + layer.norm.beta.size();
    const std::uint64_t bn_moving = layer.norm.moving_mean.size() + layer.norm.moving_var.size();
    const std::uint64_t dense = layer.dense.weight.size() + layer.dense.bias.size();
    count.total += bn_trainable + bn_moving + dense;
    count.trainable += bn_trainable + dense;
  };
  add(input_);
  for (const auto& block : blocks_)
    for (const auto& layer : block.layers) add(layer);
  add(output_);
  return count;
}

WeightSnapshot Model::snapshot() {
  WeightSnapshot snap;
  for (const auto& t : tensors()) snap.emplace_back(t.values.begin(), t.values.end());
  return snap;
}

void Model::restore(const WeightSnapshot& weights) {
  auto refs = tensors();
  if (weights.size() != refs.size()) {
    throw ShapeError("model: snapshot has " + std::to_string(weights.size()) + " tensors, model has " +
                     std::to_string(refs.size()));
  }
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (weights[i].size() != refs[i].values.size()) throw ShapeError("model: snapshot tensor " + refs[i].name);
    std::copy(weights[i].begin(), weights[i].end(), refs[i].values.begin());
  }
  clear_caches();
}

void Model::clear_caches() noexcept {
  input_.clear_cache();
  for (auto& block : blocks_)
    for (auto& layer : block.layers) layer.clear_cache();
  output_.clear_cache();
  has_train_cache_ = false;
}

}  // namespace densereg
