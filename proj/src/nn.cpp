#include "densereg/nn.hpp"

#include <algorithm>
#include <cmath>

#include "densereg/errors.hpp"
#include "densereg/kernels.hpp"

namespace densereg {

DenseLayer::DenseLayer(std::size_t fan_in, std::size_t fan_out)
    : weight(fan_in, fan_out), bias(fan_out, 0.0), grad_weight(fan_in, fan_out), grad_bias(fan_out, 0.0) {}

void DenseLayer::init(Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in() + fan_out()));
  for (auto& w : weight.values()) w = rng.uniform(-limit, limit);
  std::fill(bias.begin(), bias.end(), 0.0);
}

Matrix DenseLayer::forward(const Matrix& x) {
  if (x.cols() != fan_in()) {
    throw ShapeError("dense: input " + shape_string(x) + " does not match fan_in " + std::to_string(fan_in()));
  }
  Matrix y = matmul(x, weight);
  add_row_vector(y, bias);
  input_ = x;
  return y;
}

Matrix DenseLayer::backward(const Matrix& grad_out) {
  if (!input_) throw StateError("dense: backward called without a cached forward");
  if (grad_out.rows() != input_->rows() || grad_out.cols() != fan_out()) {
    throw ShapeError("dense: gradient " + shape_string(grad_out) + " does not match output " +
                     std::to_string(input_->rows()) + "x" + std::to_string(fan_out()));
  }
  // Written in place so TensorRef views onto the gradients stay valid.
  kernels::omp::gemm_tn(input_->values(), grad_out.values(), grad_weight.values(), grad_out.rows(), fan_in(),
                        fan_out());
  kernels::omp::column_sums(grad_out.values(), grad_bias, grad_out.rows(), fan_out());
  return matmul_nt(grad_out, weight);
}

void DenseLayer::append_tensors(const std::string& prefix, std::vector<TensorRef>& out) {
  out.push_back({prefix + "weight", {fan_in(), fan_out()}, weight.values(), grad_weight.values()});
  out.push_back({prefix + "bias", {fan_out()}, bias, grad_bias});
}

BatchNorm::BatchNorm(std::size_t width, double epsilon, double momentum)
    : gamma(width, 1.0),
      beta(width, 0.0),
      moving_mean(width, 0.0),
      moving_var(width, 1.0),
      grad_gamma(width, 0.0),
      grad_beta(width, 0.0),
      epsilon_(epsilon),
      momentum_(momentum) {
  if (!(epsilon > 0.0)) throw DomainError("batch norm: epsilon must be positive");
  if (!(momentum > 0.0 && momentum < 1.0)) throw DomainError("batch norm: momentum must lie in (0, 1)");
}

Matrix BatchNorm::forward(const Matrix& x, Mode mode) {
  const std::size_t n = x.rows();
  const std::size_t w = width();
  if (x.cols() != w) {
    throw ShapeError("batch norm: input " + shape_string(x) + " does not match width " + std::to_string(w));
  }
  Matrix y(n, w);
  if (mode == Mode::infer) {
    cache_.reset();
    Vector scale(w);
    for (std::size_t j = 0; j < w; ++j) scale[j] = gamma[j] / std::sqrt(moving_var[j] + epsilon_);
    for (std::size_t i = 0; i < n; ++i) {
      const auto xr = x.row(i);
      auto yr = y.row(i);
      for (std::size_t j = 0; j < w; ++j) yr[j] = (xr[j] - moving_mean[j]) * scale[j] + beta[j];
    }
    return y;
  }

  if (n < 2) throw DomainError("batch norm: train mode needs a batch of at least 2 rows, got " + std::to_string(n));
  Vector mean(w), var(w);
  kernels::omp::column_mean_var(x.values(), mean, var, n, w);

  Cache cache{Matrix(n, w), Vector(w)};
  for (std::size_t j = 0; j < w; ++j) cache.inv_std[j] = 1.0 / std::sqrt(var[j] + epsilon_);
  for (std::size_t i = 0; i < n; ++i) {
    const auto xr = x.row(i);
    auto hr = cache.normalized.row(i);
    auto yr = y.row(i);
    for (std::size_t j = 0; j < w; ++j) {
      hr[j] = (xr[j] - mean[j]) * cache.inv_std[j];
      yr[j] = gamma[j] * hr[j] + beta[j];
    }
  }
  for (std::size_t j = 0; j < w; ++j) {
    moving_mean[j] = momentum_ * moving_mean[j] + (1.0 - momentum_) * mean[j];
    moving_var[j] = momentum_ * moving_var[j] + (1.0 - momentum_) * var[j];
  }
  cache_ = std::move(cache);
  return y;
}

Matrix BatchNorm::backward(const Matrix& grad_out) {
  if (!cache_) throw StateError("batch norm: backward needs a preceding train-mode forward");
  const Matrix& xhat = cache_->normalized;
  const std::size_t n = xhat.rows();
  const std::size_t w = width();
  if (grad_out.rows() != n || grad_out.cols() != w) {
    throw ShapeError("batch norm: gradient " + shape_string(grad_out) + " does not match " + shape_string(xhat));
  }

  // dL/dx = inv_std / n * (n * g - sum(g) - xhat * sum(g * xhat)), g = gamma * dL/dy
  Vector sum_dy(w, 0.0), sum_dy_xhat(w, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto gr = grad_out.row(i);
    const auto hr = xhat.row(i);
    for (std::size_t j = 0; j < w; ++j) {
      sum_dy[j] += gr[j];
      sum_dy_xhat[j] += gr[j] * hr[j];
    }
  }
  std::copy(sum_dy.begin(), sum_dy.end(), grad_beta.begin());
  std::copy(sum_dy_xhat.begin(), sum_dy_xhat.end(), grad_gamma.begin());

  const double inv_n = 1.0 / static_cast<double>(n);
  Matrix dx(n, w);
  for (std::size_t i = 0; i < n; ++i) {
    const auto gr = grad_out.row(i);
    const auto hr = xhat.row(i);
    auto dr = dx.row(i);
    for (std::size_t j = 0; j < w; ++j) {
      const double k = gamma[j] * cache_->inv_std[j] * inv_n;
      dr[j] = k * (static_cast<double>(n) * gr[j] - sum_dy[j] - hr[j] * sum_dy_xhat[j]);
    }
  }
  return dx;
}

void BatchNorm::append_tensors(const std::string& prefix, std::vector<TensorRef>& out) {
  out.push_back({prefix + "gamma", {width()}, gamma, grad_gamma});
  out.push_back({prefix + "beta", {width()}, beta, grad_beta});
  out.push_back({prefix + "moving_mean", {width()}, moving_mean, {}});
  out.push_back({prefix + "moving_var", {width()}, moving_var, {}});
}

Matrix relu(const Matrix& x) {
  Matrix y = x;
  for (auto& v : y.values()) v = v > 0.0 ? v : 0.0;
  return y;
}

Matrix Relu::forward(const Matrix& x) {
  output_ = relu(x);
  return *output_;
}

Matrix Relu::backward(const Matrix& grad_out) {
  if (!output_) throw StateError("relu: backward called without a cached forward");
  if (grad_out.rows() != output_->rows() || grad_out.cols() != output_->cols()) {
    throw ShapeError("relu: gradient " + shape_string(grad_out) + " does not match " + shape_string(*output_));
  }
  Matrix g = grad_out;
  const auto out = output_->values();
  auto gv = g.values();
  for (std::size_t i = 0; i < gv.size(); ++i)
    if (!(out[i] > 0.0)) gv[i] = 0.0;
  return g;
}

Matrix concat_forward(std::span<const Matrix> parts) {
  if (parts.empty()) throw ShapeError("concat: no parts");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) {
      throw ShapeError("concat: row mismatch, " + shape_string(p) + " against " + std::to_string(rows) + " rows");
    }
    cols += p.cols();
  }
  Matrix out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    auto dst = out.row(r).begin();
    for (const auto& p : parts) dst = std::copy(p.row(r).begin(), p.row(r).end(), dst);
  }
  return out;
}

std::vector<Matrix> concat_backward(const Matrix& grad, std::span<const std::size_t> widths) {
  std::size_t total = 0;
  for (auto w : widths) total += w;
  if (total != grad.cols()) {
    throw ShapeError("concat backward: widths sum to " + std::to_string(total) + " but gradient is " +
                     shape_string(grad));
  }
  std::vector<Matrix> parts;
  parts.reserve(widths.size());
  std::size_t offset = 0;
  for (auto w : widths) {
    Matrix p(grad.rows(), w);
    for (std::size_t r = 0; r < grad.rows(); ++r) {
      const auto src = grad.row(r).subspan(offset, w);
      std::copy(src.begin(), src.end(), p.row(r).begin());
    }
    parts.push_back(std::move(p));
    offset += w;
  }
  return parts;
}

Layer::Layer(std::size_t fan_in, std::size_t fan_out, Activation activation)
    : norm(fan_in), dense(fan_in, fan_out), activation_(activation) {}

Matrix Layer::forward(const Matrix& x, Mode mode) {
  Matrix h = dense.forward(norm.forward(x, mode));
  return activation_ == Activation::relu ? relu_.forward(h) : h;
}

Matrix Layer::backward(const Matrix& grad_out) {
  Matrix g = activation_ == Activation::relu ? relu_.backward(grad_out) : grad_out;
  return norm.backward(dense.backward(g));
}

void Layer::clear_cache() noexcept {
  norm.clear_cache();
  dense.clear_cache();
  relu_.clear_cache();
}

void Layer::append_tensors(const std::string& prefix, std::vector<TensorRef>& out) {
  norm.append_tensors(prefix + "bn.", out);
  dense.append_tensors(prefix + "dense.", out);
}

}  // namespace densereg
