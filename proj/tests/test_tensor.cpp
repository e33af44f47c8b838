#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "densereg/errors.hpp"
#include "densereg/kernels.hpp"
#include "densereg/tensor.hpp"

using namespace densereg;

namespace {

Matrix random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  return Matrix(r, c, uniform(rng, r * c, -1.0, 1.0));
}

// Textbook triple loop, accumulating over k in increasing order.
Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  return c;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

struct ThreadScope {
  int saved = omp_get_max_threads();
  explicit ThreadScope(int n) { omp_set_num_threads(n); }
  ~ThreadScope() { omp_set_num_threads(saved); }
};

}  // namespace

TEST_CASE("matrix construction and shape checks") {
  const Matrix m{{1.0, 2.0, 3.0}, {4.0, 5.0, 6.0}};
  CHECK(m.rows() == 2);
  CHECK(m.cols() == 3);
  CHECK(m(1, 2) == 6.0);
  CHECK(shape_string(m) == "2x3");
  CHECK_THROWS_AS(Matrix(2, 2, Vector(3, 0.0)), ShapeError);
  CHECK_THROWS_AS(matmul(m, m), ShapeError);
  CHECK(Matrix::identity(3)(1, 1) == 1.0);
  CHECK(Matrix::column(Vector{1.0, 2.0}).cols() == 1);
}

TEST_CASE("matmul equals the triple-loop oracle") {
  Rng rng(1);
  for (auto [m, k, n] : {std::array<std::size_t, 3>{1, 1, 1}, {3, 5, 2}, {17, 9, 33}, {64, 70, 50}}) {
    const Matrix a = random_matrix(rng, m, k);
    const Matrix b = random_matrix(rng, k, n);
    CHECK(max_abs_diff(matmul(a, b), naive_matmul(a, b)) <= 1e-13);
    CHECK(max_abs_diff(matmul_tn(transpose(a), b), naive_matmul(a, b)) <= 1e-13);
    CHECK(max_abs_diff(matmul_nt(a, transpose(b)), naive_matmul(a, b)) <= 1e-13);
  }
}

TEST_CASE("algebraic properties") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 1 + rng.below(12), k = 1 + rng.below(12), n = 1 + rng.below(12), p = 1 + rng.below(12);
    const Matrix a = random_matrix(rng, m, k);
    const Matrix b = random_matrix(rng, k, n);
    const Matrix c = random_matrix(rng, n, p);
    CHECK(transpose(transpose(a)) == a);
    // Same products summed in the same order, so this holds exactly.
    CHECK(transpose(matmul(a, b)) == matmul(transpose(b), transpose(a)));
    CHECK(max_abs_diff(matmul(matmul(a, b), c), matmul(a, matmul(b, c))) <= 1e-12);
    CHECK(matmul(a, Matrix::identity(k)) == a);
  }
}

TEST_CASE("serial and parallel kernels agree bit for bit") {
  ThreadScope threads(4);
  Rng rng(3);
  // Large enough to cross the parallel threshold; odd sizes exercise edge blocks.
  const std::size_t rows = 517, inner = 61, cols = 47;
  const Matrix a = random_matrix(rng, rows, inner);
  const Matrix b = random_matrix(rng, inner, cols);

  Vector c1(rows * cols), c2(rows * cols);
  kernels::serial::gemm_nn(a.values(), b.values(), c1, rows, inner, cols);
  kernels::omp::gemm_nn(a.values(), b.values(), c2, rows, inner, cols);
  CHECK(c1 == c2);

  const Matrix g = random_matrix(rng, rows, cols);
  Vector t1(inner * cols), t2(inner * cols);
  kernels::serial::gemm_tn(a.values(), g.values(), t1, rows, inner, cols);
  kernels::omp::gemm_tn(a.values(), g.values(), t2, rows, inner, cols);
  CHECK(t1 == t2);

  Vector s1(inner), s2(inner);
  kernels::serial::column_sums(a.values(), s1, rows, inner);
  kernels::omp::column_sums(a.values(), s2, rows, inner);
  CHECK(s1 == s2);

  Vector m1(inner), v1(inner), m2(inner), v2(inner);
  kernels::serial::column_mean_var(a.values(), m1, v1, rows, inner);
  kernels::omp::column_mean_var(a.values(), m2, v2, rows, inner);
  CHECK(m1 == m2);
  CHECK(v1 == v2);

  Vector x1(a.values().begin(), a.values().end()), x2 = x1;
  kernels::serial::add_row_vector(x1, s1, rows, inner);
  kernels::omp::add_row_vector(x2, s1, rows, inner);
  CHECK(x1 == x2);

  const std::size_t np = 40000;
  Vector theta1 = uniform(rng, np, -1, 1), grad = uniform(rng, np, -1, 1);
  Vector mo1(np, 0.1), ve1(np, 0.2);
  Vector theta2 = theta1, mo2 = mo1, ve2 = ve1;
  const kernels::AdamCoefficients coeff{1e-3, 0.9, 0.999, 1e-8, 1 - 0.9, 1 - 0.999};
  kernels::serial::adam_update(theta1, grad, mo1, ve1, coeff);
  kernels::omp::adam_update(theta2, grad, mo2, ve2, coeff);
  CHECK(theta1 == theta2);
  CHECK(mo1 == mo2);
  CHECK(ve1 == ve2);
}

TEST_CASE("column statistics match direct formulas") {
  const Matrix a{{1.0, 10.0}, {2.0, 20.0}, {6.0, 30.0}};
  CHECK(column_sums(a) == Vector{9.0, 60.0});
  Vector mean(2), var(2);
  kernels::serial::column_mean_var(a.values(), mean, var, 3, 2);
  CHECK(mean[0] == doctest::Approx(3.0));
  CHECK(var[0] == doctest::Approx(14.0 / 3.0));  // biased
  CHECK(var[1] == doctest::Approx(200.0 / 3.0));
}

TEST_CASE("gather and finiteness") {
  const Matrix a{{1.0, 2.0}, {3.0, 4.0}, {5.0, 6.0}};
  const std::vector<std::size_t> idx{2, 0};
  CHECK(gather_rows(a, idx) == Matrix{{5.0, 6.0}, {1.0, 2.0}});
  CHECK(gather(Vector{7.0, 8.0, 9.0}, idx) == Vector{9.0, 7.0});
  Matrix bad = a;
  bad(1, 1) = std::nan("");
  CHECK_FALSE(all_finite(bad.values()));
  CHECK_THROWS_AS(require_finite(bad, "x"), DataError);
}

TEST_CASE("rng is the standard 64-bit Mersenne Twister") {
  // The C++ standard fixes the 10000th output for the default seed 5489.
  Rng rng(5489);
  for (int i = 0; i < 9999; ++i) rng.next_u64();
  CHECK(rng.next_u64() == 9981545732273789042ULL);

  Rng a(7), b(7);
  CHECK(a.unit() == static_cast<double>(b.next_u64() >> 11) * 0x1.0p-53);
}

TEST_CASE("derive_seed is SplitMix64") {
  // Reference output of SplitMix64 from state 0.
  CHECK(derive_seed(0, 0) == 0xe220a8397b1dcdafULL);
  std::set<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 100; ++s) seen.insert(derive_seed(42, s));
  CHECK(seen.size() == 100);
}

TEST_CASE("rng distributions") {
  Rng rng(11);
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.unit();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.02);

  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) ++counts[rng.below(7)];
  for (int c : counts) CHECK(std::abs(c - 10000) < 500);
  CHECK_THROWS_AS(rng.below(0), DomainError);

  for (int i = 0; i < 1000; ++i) {
    const double x = rng.uniform(0.0, 4.0);
    REQUIRE(x >= 0.0);
    REQUIRE(x < 4.0);
  }
  CHECK_THROWS_AS(uniform(rng, 3, 1.0, 1.0), DomainError);
}

TEST_CASE("permutation is a seeded bijection") {
  Rng r1(5), r2(5);
  const auto p = permutation(r1, 1000);
  CHECK(p == permutation(r2, 1000));
  auto sorted = p;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> iota(1000);
  std::iota(iota.begin(), iota.end(), std::size_t{0});
  CHECK(sorted == iota);
  CHECK(p != iota);
  CHECK(permutation(r1, 0).empty());
}
