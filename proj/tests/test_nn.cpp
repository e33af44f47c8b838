#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "densereg/errors.hpp"
#include "densereg/nn.hpp"
#include "gradcheck.hpp"

using namespace densereg;
using testing::max_relative_error;
using testing::weighted_sum;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  return Matrix(r, c, uniform(rng, r * c, lo, hi));
}

}  // namespace

TEST_CASE("dense forward is x W + b") {
  DenseLayer layer(3, 2);
  layer.weight = Matrix{{1.0, -1.0}, {0.5, 2.0}, {0.0, 3.0}};
  layer.bias = {0.25, -0.5};
  const Matrix y = layer.forward(Matrix{{1.0, 2.0, 3.0}, {-1.0, 0.0, 1.0}});
  CHECK(y == Matrix{{2.25, 11.5}, {-0.75, 3.5}});
  CHECK_THROWS_AS(layer.forward(Matrix(1, 2)), ShapeError);
}

TEST_CASE("glorot uniform init draws row-major within the limit") {
  DenseLayer layer(5, 3);
  Rng rng(9), replay(9);
  layer.init(rng);
  const double limit = std::sqrt(6.0 / 8.0);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(std::abs(layer.weight(i, j)) < limit);
      CHECK(layer.weight(i, j) == replay.uniform(-limit, limit));
    }
  for (double b : layer.bias) CHECK(b == 0.0);
}

TEST_CASE("dense gradients match finite differences") {
  Rng rng(1);
  DenseLayer layer(4, 3);
  layer.init(rng);
  layer.bias = uniform(rng, 3, -1, 1);
  Matrix x = random_matrix(rng, 5, 4);
  const Matrix r = random_matrix(rng, 5, 3);

  layer.forward(x);
  const Matrix dx = layer.backward(r);
  auto loss = [&] { return weighted_sum(layer.forward(x), r); };
  CHECK(max_relative_error(layer.weight.values(), Matrix(layer.grad_weight).values(), loss) < 1e-6);
  CHECK(max_relative_error(layer.bias, Vector(layer.grad_bias), loss) < 1e-6);
  CHECK(max_relative_error(x.values(), dx.values(), loss) < 1e-6);

  DenseLayer fresh(4, 3);
  CHECK_THROWS_AS(fresh.backward(r), StateError);
}

TEST_CASE("batch norm train forward matches the direct formula") {
  Rng rng(2);
  BatchNorm bn(3);
  bn.gamma = {1.5, -0.5, 2.0};
  bn.beta = {0.1, 0.2, -0.3};
  const Matrix x = random_matrix(rng, 6, 3, -2.0, 5.0);
  const Matrix y = bn.forward(x, Mode::train);
  for (std::size_t j = 0; j < 3; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < 6; ++i) mean += x(i, j) / 6.0;
    double var = 0.0;
    for (std::size_t i = 0; i < 6; ++i) var += (x(i, j) - mean) * (x(i, j) - mean) / 6.0;
    for (std::size_t i = 0; i < 6; ++i) {
      const double expected = bn.gamma[j] * (x(i, j) - mean) / std::sqrt(var + 1e-3) + bn.beta[j];
      CHECK(y(i, j) == doctest::Approx(expected).epsilon(1e-12));
    }
    CHECK(bn.moving_mean[j] == doctest::Approx(0.01 * mean).epsilon(1e-12));
    CHECK(bn.moving_var[j] == doctest::Approx(0.99 + 0.01 * var).epsilon(1e-12));
  }
}

TEST_CASE("batch norm inference uses the moving statistics and mutates nothing") {
  BatchNorm bn(2);
  bn.moving_mean = {1.0, -2.0};
  bn.moving_var = {4.0, 0.25};
  bn.gamma = {2.0, 1.0};
  bn.beta = {0.0, 1.0};
  const Matrix y = bn.forward(Matrix{{3.0, -1.0}}, Mode::infer);
  CHECK(y(0, 0) == doctest::Approx(2.0 * 2.0 / std::sqrt(4.001)));
  CHECK(y(0, 1) == doctest::Approx(1.0 / std::sqrt(0.251) + 1.0));
  CHECK(bn.moving_mean == Vector{1.0, -2.0});
  CHECK_THROWS_AS(bn.backward(Matrix(1, 2)), StateError);
}

TEST_CASE("batch norm rejects single-row training batches") {
  BatchNorm bn(2);
  CHECK_THROWS_AS(bn.forward(Matrix(1, 2), Mode::train), DomainError);
  CHECK_NOTHROW(bn.forward(Matrix(1, 2), Mode::infer));
  CHECK_THROWS_AS(BatchNorm(2, 0.0), DomainError);
  CHECK_THROWS_AS(BatchNorm(2, 1e-3, 1.0), DomainError);
}

TEST_CASE("batch norm gradients match finite differences") {
  Rng rng(3);
  BatchNorm bn(4);
  bn.gamma = uniform(rng, 4, 0.5, 2.0);
  bn.beta = uniform(rng, 4, -1.0, 1.0);
  Matrix x = random_matrix(rng, 5, 4, -3.0, 3.0);
  const Matrix r = random_matrix(rng, 5, 4);

  bn.forward(x, Mode::train);
  const Matrix dx = bn.backward(r);
  const Vector dgamma = bn.grad_gamma, dbeta = bn.grad_beta;
  auto loss = [&] { return weighted_sum(bn.forward(x, Mode::train), r); };
  CHECK(max_relative_error(bn.gamma, dgamma, loss) < 1e-6);
  CHECK(max_relative_error(bn.beta, dbeta, loss) < 1e-6);
  CHECK(max_relative_error(x.values(), dx.values(), loss) < 1e-5);
}

TEST_CASE("relu forward and backward") {
  Relu relu_layer;
  const Matrix x{{-1.0, 0.0, 2.0}};
  CHECK(relu_layer.forward(x) == Matrix{{0.0, 0.0, 2.0}});
  CHECK(relu(x) == Matrix{{0.0, 0.0, 2.0}});
  CHECK(relu_layer.backward(Matrix{{5.0, 6.0, 7.0}}) == Matrix{{0.0, 0.0, 7.0}});
  Relu fresh;
  CHECK_THROWS_AS(fresh.backward(x), StateError);
}

TEST_CASE("concatenation round trip") {
  const Matrix a{{1.0, 2.0}, {3.0, 4.0}};
  const Matrix b{{5.0}, {6.0}};
  const std::vector<Matrix> parts{a, b};
  const Matrix joined = concat_forward(parts);
  CHECK(joined == Matrix{{1.0, 2.0, 5.0}, {3.0, 4.0, 6.0}});
  const std::vector<std::size_t> widths{2, 1};
  const auto pieces = concat_backward(joined, widths);
  CHECK(pieces[0] == a);
  CHECK(pieces[1] == b);
  const std::vector<Matrix> mismatched{a, Matrix(3, 1)};
  CHECK_THROWS_AS(concat_forward(mismatched), ShapeError);
}

TEST_CASE("layer gradients match finite differences") {
  for (auto activation : {Activation::relu, Activation::linear}) {
    CAPTURE(static_cast<int>(activation));
    Rng rng(4);
    Layer layer(3, 4, activation);
    layer.init(rng);
    layer.norm.gamma = uniform(rng, 3, 0.5, 1.5);
    layer.norm.beta = uniform(rng, 3, -0.5, 0.5);
    Matrix x = random_matrix(rng, 5, 3, -2.0, 2.0);
    const Matrix r = random_matrix(rng, 5, 4);

    layer.forward(x, Mode::train);
    const Matrix dx = layer.backward(r);
    std::vector<TensorRef> tensors;
    layer.append_tensors("layer.", tensors);
    std::vector<Vector> grads;
    for (const auto& t : tensors) grads.emplace_back(t.grads.begin(), t.grads.end());

    auto loss = [&] { return weighted_sum(layer.forward(x, Mode::train), r); };
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      if (!tensors[i].trainable()) continue;
      CAPTURE(tensors[i].name);
      CHECK(max_relative_error(tensors[i].values, grads[i], loss) < 1e-5);
    }
    CHECK(max_relative_error(x.values(), dx.values(), loss) < 1e-5);
  }
}

TEST_CASE("tensor views name and expose every parameter") {
  Layer layer(3, 2, Activation::relu);
  std::vector<TensorRef> tensors;
  layer.append_tensors("l.", tensors);
  REQUIRE(tensors.size() == 6);
  CHECK(tensors[0].name == "l.bn.gamma");
  CHECK(tensors[2].name == "l.bn.moving_mean");
  CHECK_FALSE(tensors[2].trainable());
  CHECK(tensors[4].name == "l.dense.weight");
  CHECK(tensors[4].shape == std::vector<std::size_t>{3, 2});
  CHECK(tensors[5].values.size() == 2);
}
