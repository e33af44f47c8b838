#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace densereg {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles. Value type; copies are deep.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  /// n x 1 matrix holding `values`.
  static Matrix column(std::span<const double> values);
  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  /// Column `c` copied out.
  Vector column_values(std::size_t c) const;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// "3x4" style rendering for error messages.
std::string shape_string(const Matrix& m);

Matrix transpose(const Matrix& a);

/// a * b. Each entry sums over the shared index left to right.
Matrix matmul(const Matrix& a, const Matrix& b);
/// a^T * b without materialising the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// a * b^T.
Matrix matmul_nt(const Matrix& a, const Matrix& b);

Vector column_sums(const Matrix& a);
void add_row_vector(Matrix& a, std::span<const double> v);

/// Rows of `a` listed in `index`, in that order.
Matrix gather_rows(const Matrix& a, std::span<const std::size_t> index);
Vector gather(std::span<const double> v, std::span<const std::size_t> index);

bool all_finite(std::span<const double> values) noexcept;
/// Throws DataError naming `what` and the first offending row if any entry is NaN or infinite.
void require_finite(const Matrix& m, std::string_view what);

/// Seeded pseudo-random stream.
///
/// Backed by std::mt19937_64, whose output sequence the C++ standard fixes
/// for every implementation. Distributions are derived here rather than via
/// <random> distribution classes (those are implementation-defined):
///   unit()    top 53 bits of one draw scaled by 2^-53, in [0, 1)
///   below(n)  rejection sampling on the top bits, unbiased
///   normal()  Box-Muller on two unit() draws
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t next_u64() { return engine_(); }
  double unit();
  /// One draw in [lo, hi). Requires lo < hi.
  double uniform(double lo, double hi);
  std::size_t below(std::size_t n);
  double normal();

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

/// n draws in [lo, hi). Throws DomainError unless lo < hi.
Vector uniform(Rng& rng, std::size_t n, double lo, double hi);

/// Fisher-Yates permutation of 0..n-1.
std::vector<std::size_t> permutation(Rng& rng, std::size_t n);

/// SplitMix64 mix of (base, stream): independent seeds for sub-tasks.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept;

}  // namespace densereg
