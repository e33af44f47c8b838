#include "densereg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <utility>

#include "densereg/errors.hpp"
#include "densereg/kernels.hpp"

namespace densereg {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("matrix " + std::to_string(rows) + "x" + std::to_string(cols) + " needs " +
                     std::to_string(rows * cols) + " values, got " + std::to_string(data_.size()));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("ragged initializer list");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::column(std::span<const double> values) {
  return Matrix(values.size(), 1, std::vector<double>(values.begin(), values.end()));
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Vector Matrix::column_values(std::size_t c) const {
  Vector out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

std::string shape_string(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) t(c, r) = a(r, c);
  return t;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: cannot multiply " + shape_string(a) + " by " + shape_string(b));
  }
  Matrix c(a.rows(), b.cols());
  kernels::omp::gemm_nn(a.values(), b.values(), c.values(), a.rows(), a.cols(), b.cols());
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: cannot multiply transpose of " + shape_string(a) + " by " + shape_string(b));
  }
  Matrix c(a.cols(), b.cols());
  kernels::omp::gemm_tn(a.values(), b.values(), c.values(), a.rows(), a.cols(), b.cols());
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: cannot multiply " + shape_string(a) + " by transpose of " + shape_string(b));
  }
  return matmul(a, transpose(b));
}

Vector column_sums(const Matrix& a) {
  Vector out(a.cols());
  kernels::omp::column_sums(a.values(), out, a.rows(), a.cols());
  return out;
}

void add_row_vector(Matrix& a, std::span<const double> v) {
  if (v.size() != a.cols()) {
    throw ShapeError("add_row_vector: vector of length " + std::to_string(v.size()) + " against " +
                     shape_string(a));
  }
  kernels::omp::add_row_vector(a.values(), v, a.rows(), a.cols());
}

Matrix gather_rows(const Matrix& a, std::span<const std::size_t> index) {
  Matrix out(index.size(), a.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto src = a.row(index[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Vector gather(std::span<const double> v, std::span<const std::size_t> index) {
  Vector out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) out[i] = v[index[i]];
  return out;
}

bool all_finite(std::span<const double> values) noexcept {
  for (double x : values)
    if (!std::isfinite(x)) return false;
  return true;
}

void require_finite(const Matrix& m, std::string_view what) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (!std::isfinite(m(r, c))) {
        throw DataError(std::string(what) + ": non-finite value at row " + std::to_string(r) + ", column " +
                        std::to_string(c));
      }
    }
  }
}

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

double Rng::unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) {
  const double x = lo + (hi - lo) * unit();
  // Rounding can land exactly on hi for some (lo, hi); keep the interval half-open.
  return x < hi ? x : std::nextafter(hi, lo);
}

std::size_t Rng::below(std::size_t n) {
  if (n == 0) throw DomainError("Rng::below: empty range");
  if (n == 1) return 0;
  const std::uint64_t bound = n - 1;
  int bits = 64;
  while (bits > 1 && ((bound >> (bits - 1)) & 1u) == 0) --bits;
  for (;;) {
    const std::uint64_t candidate = engine_() >> (64 - bits);
    if (candidate < n) return static_cast<std::size_t>(candidate);
  }
}

double Rng::normal() {
  double u1 = unit();
  while (u1 <= 0.0) u1 = unit();
  const double u2 = unit();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Vector uniform(Rng& rng, std::size_t n, double lo, double hi) {
  if (!(lo < hi)) {
    throw DomainError("uniform: need lo < hi, got [" + std::to_string(lo) + ", " + std::to_string(hi) + ")");
  }
  Vector out(n);
  for (auto& x : out) x = rng.uniform(lo, hi);
  return out;
}

std::vector<std::size_t> permutation(Rng& rng, std::size_t n) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace densereg
